use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::curriculum::Curriculum;
use super::learner::Learner;
use super::replay::PrioritizedBuffer;
use super::runner::run_episode;
use super::segment::{Segment, Task};
use crate::error::{Error, Result};
use crate::model::{DccModel, ModelConfig};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::ParamStore;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const LATEST: &str = "latest.ckpt";

/// Where and how a run writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    pub resume: bool,
}

/// Rolling success of one unlocked task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskProgress {
    pub task: Task,
    pub success_rate: f64,
    /// Episodes in the rolling window.
    pub episodes: usize,
}

/// One learner step as logged.
#[derive(Clone, Debug)]
pub struct LogLine {
    pub step: u64,
    pub loss: f64,
    pub buffer: usize,
    pub episodes: u64,
    pub transitions: u64,
    pub epsilon: f64,
    pub elapsed: f64,
    pub success: Vec<TaskProgress>,
}

impl LogLine {
    /// `key=value` pairs separated by spaces.
    pub fn render(&self) -> String {
        let mut s = format!(
            "step={} loss={:.6} buffer={} episodes={} transitions={} epsilon={:.4} elapsed={:.1}",
            self.step,
            self.loss,
            self.buffer,
            self.episodes,
            self.transitions,
            self.epsilon,
            self.elapsed
        );
        for p in &self.success {
            s.push_str(&format!(" success_{}={:.3}", p.task, p.success_rate));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub episodes: u64,
    pub transitions: u64,
    pub success: Vec<TaskProgress>,
    pub checkpoint: PathBuf,
    pub elapsed: f64,
}

struct Shared {
    buffer: Mutex<PrioritizedBuffer>,
    snapshot: RwLock<Arc<ParamStore>>,
    curriculum: Mutex<Curriculum>,
    learner_step: AtomicU64,
    transitions: AtomicU64,
    episodes: AtomicU64,
    stop: AtomicBool,
    failure: Mutex<Option<Error>>,
}

impl Shared {
    fn fail(&self, e: Error) {
        let mut slot = self.failure.lock().expect("failure lock");
        if slot.is_none() {
            *slot = Some(e);
        }
        self.stop.store(true, Ordering::SeqCst);
    }
}

/// Checkpoint carrying the learner, run counters and the resolved config.
fn make_checkpoint(
    learner: &Learner,
    cfg: &TrainConfig,
    curriculum: &Curriculum,
    episodes: u64,
    transitions: u64,
) -> Checkpoint {
    let mut meta = vec![
        ("engine.version".to_string(), ENGINE_VERSION.to_string()),
        ("config".to_string(), cfg.to_toml()),
        ("curriculum".to_string(), curriculum.to_text()),
        ("train.episodes".to_string(), episodes.to_string()),
        ("train.transitions".to_string(), transitions.to_string()),
    ];
    meta.extend(learner.model().config().to_meta());
    Checkpoint {
        step: learner.step,
        meta,
        params: learner.online.clone(),
        target: Some(learner.target.clone()),
        optimizer: Some(learner.optimizer.clone()),
    }
}

/// Loads a checkpoint's network; the model layout comes from its metadata.
pub fn load_model(path: &Path) -> Result<(DccModel, ParamStore, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let config = ModelConfig::from_meta(&ckpt.meta)?;
    let model = DccModel::bind(config, &ckpt.params)?;
    Ok((model, ckpt.params.clone(), ckpt))
}

/// The config a checkpoint was trained with.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<TrainConfig> {
    let text = ckpt
        .meta("config")
        .ok_or_else(|| Error::Checkpoint("no embedded config".into()))?;
    TrainConfig::from_toml(text)
}

fn save(ckpt: &Checkpoint, out_dir: &Path, keep_numbered: bool) -> Result<PathBuf> {
    if keep_numbered {
        let dir = out_dir.join("checkpoints");
        fs::create_dir_all(&dir)?;
        ckpt.save(&dir.join(format!("step-{:08}.ckpt", ckpt.step)))?;
    }
    let latest = out_dir.join(LATEST);
    ckpt.save(&latest)?;
    Ok(latest)
}

fn runner_loop(id: usize, cfg: TrainConfig, model: DccModel, shared: Arc<Shared>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    rng.set_stream(1 + id as u64);
    let sampled_per_update = (cfg.replay.batch_size * cfg.replay.segment_len) as f64;
    let slack = (cfg.replay.min_fill.max(cfg.replay.batch_size) * cfg.replay.segment_len) as f64;
    while !shared.stop.load(Ordering::SeqCst) {
        let step = shared.learner_step.load(Ordering::SeqCst);
        if cfg.learner.replay_ratio > 0.0 {
            let collected = shared.transitions.load(Ordering::SeqCst) as f64;
            if collected * cfg.learner.replay_ratio
                > step as f64 * sampled_per_update + slack * cfg.learner.replay_ratio
            {
                thread::sleep(Duration::from_millis(2));
                continue;
            }
        }
        let snapshot = Arc::clone(&shared.snapshot.read().expect("snapshot lock"));
        let task = shared
            .curriculum
            .lock()
            .expect("curriculum lock")
            .sample(&mut rng);
        let epsilon = cfg.epsilon(step);
        let outcome = match run_episode(&model, &snapshot, task, &cfg, epsilon, &mut rng) {
            Ok(o) => o,
            Err(e) => {
                shared.fail(e);
                return;
            }
        };
        {
            let mut buf = shared.buffer.lock().expect("buffer lock");
            for (seg, p) in outcome.segments {
                buf.push(seg, p);
            }
        }
        let fresh = shared
            .curriculum
            .lock()
            .expect("curriculum lock")
            .record(task, outcome.success);
        for t in fresh {
            log::info!("unlocked task {t}");
        }
        shared
            .transitions
            .fetch_add(outcome.steps as u64, Ordering::SeqCst);
        shared.episodes.fetch_add(1, Ordering::SeqCst);
    }
}

/// Runs (or resumes) training until the step budget or time limit, calling
/// `progress` after every learner step; `progress` can end the run early by
/// returning `ControlFlow::Break`.
pub fn train(
    cfg: &TrainConfig,
    opts: &TrainOptions,
    mut progress: impl FnMut(&LogLine) -> ControlFlow<()>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(&opts.out_dir)?;
    let start = Instant::now();
    let latest = opts.out_dir.join(LATEST);
    let (mut learner, curriculum, episodes0, transitions0) = if opts.resume {
        let (model, params, ckpt) = load_model(&latest)?;
        let mut learner = Learner::new(model, params, cfg);
        learner.step = ckpt.step;
        if let Some(t) = ckpt.target {
            learner.target = t;
        }
        if let Some(o) = ckpt.optimizer {
            learner.optimizer = o;
        }
        let curriculum = match ckpt.meta.iter().find(|(k, _)| k == "curriculum") {
            Some((_, text)) => Curriculum::from_text(&cfg.curriculum, text)?,
            None => Curriculum::new(&cfg.curriculum),
        };
        let count = |key: &str| {
            ckpt.meta
                .iter()
                .find(|(k, _)| k == key)
                .and_then(|(_, v)| v.parse().ok())
                .unwrap_or(0)
        };
        (
            learner,
            curriculum,
            count("train.episodes"),
            count("train.transitions"),
        )
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
        let (model, params) = DccModel::new(cfg.model.clone(), &mut rng)?;
        (
            Learner::new(model, params, cfg),
            Curriculum::new(&cfg.curriculum),
            0,
            0,
        )
    };
    learner.dump_dir = Some(opts.out_dir.join("diagnostics"));

    if learner.step >= cfg.run.steps {
        let ckpt = make_checkpoint(&learner, cfg, &curriculum, episodes0, transitions0);
        let path = save(&ckpt, &opts.out_dir, false)?;
        return Ok(TrainSummary {
            steps: learner.step,
            episodes: episodes0,
            transitions: transitions0,
            success: rates(&curriculum),
            checkpoint: path,
            elapsed: start.elapsed().as_secs_f64(),
        });
    }

    let shared = Arc::new(Shared {
        buffer: Mutex::new(PrioritizedBuffer::new(
            cfg.replay.capacity,
            cfg.replay.alpha,
        )),
        snapshot: RwLock::new(Arc::new(learner.online.clone())),
        curriculum: Mutex::new(curriculum),
        learner_step: AtomicU64::new(learner.step),
        transitions: AtomicU64::new(transitions0),
        episodes: AtomicU64::new(episodes0),
        stop: AtomicBool::new(false),
        failure: Mutex::new(None),
    });
    let runners: Vec<_> = (0..cfg.run.runners.max(1))
        .map(|id| {
            let (cfg, model, shared) = (cfg.clone(), learner.model().clone(), Arc::clone(&shared));
            thread::Builder::new()
                .name(format!("runner-{id}"))
                .spawn(move || runner_loop(id, cfg, model, shared))
                .expect("spawn runner thread")
        })
        .collect();

    let result = learn_loop(cfg, opts, &mut learner, &shared, start, &mut progress);
    shared.stop.store(true, Ordering::SeqCst);
    for r in runners {
        let _ = r.join();
    }
    result?;
    if let Some(e) = shared.failure.lock().expect("failure lock").take() {
        return Err(e);
    }
    let curriculum = shared.curriculum.lock().expect("curriculum lock").clone();
    let (episodes, transitions) = (
        shared.episodes.load(Ordering::SeqCst),
        shared.transitions.load(Ordering::SeqCst),
    );
    let ckpt = make_checkpoint(&learner, cfg, &curriculum, episodes, transitions);
    let path = save(&ckpt, &opts.out_dir, cfg.run.checkpoint_every > 0)?;
    Ok(TrainSummary {
        steps: learner.step,
        episodes,
        transitions,
        success: rates(&curriculum),
        checkpoint: path,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

fn rates(c: &Curriculum) -> Vec<TaskProgress> {
    c.unlocked()
        .into_iter()
        .filter_map(|task| {
            c.success_rate(task).map(|success_rate| TaskProgress {
                task,
                success_rate,
                episodes: c.episodes(task),
            })
        })
        .collect()
}

fn learn_loop(
    cfg: &TrainConfig,
    opts: &TrainOptions,
    learner: &mut Learner,
    shared: &Shared,
    start: Instant,
    progress: &mut impl FnMut(&LogLine) -> ControlFlow<()>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed ^ learner.step);
    let mut log = BufWriter::new(
        File::options()
            .create(true)
            .append(true)
            .open(opts.out_dir.join("train.log"))?,
    );
    let need = cfg.replay.batch_size.max(cfg.replay.min_fill);
    let sampled_per_update = (cfg.replay.batch_size * cfg.replay.segment_len) as f64;
    let deadline =
        (cfg.run.time_limit_secs > 0).then(|| Duration::from_secs(cfg.run.time_limit_secs));
    while learner.step < cfg.run.steps {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        if deadline.is_some_and(|d| start.elapsed() >= d) {
            log::info!("time limit reached at learner step {}", learner.step);
            break;
        }
        let transitions = shared.transitions.load(Ordering::SeqCst);
        let throttled = cfg.learner.replay_ratio > 0.0
            && (learner.step + 1) as f64 * sampled_per_update
                > cfg.learner.replay_ratio * transitions as f64;
        let batch = {
            let buf = shared.buffer.lock().expect("buffer lock");
            if buf.len() < need || throttled {
                None
            } else {
                Some(buf.sample(cfg.replay.batch_size, cfg.beta(learner.step), &mut rng)?)
            }
        };
        let Some(batch) = batch else {
            thread::sleep(Duration::from_millis(2));
            continue;
        };
        let segs: Vec<&Segment> = batch.segments.iter().map(|s| s.as_ref()).collect();
        let stats = learner.update(&segs, &batch.weights)?;
        let buffer_len = {
            let mut buf = shared.buffer.lock().expect("buffer lock");
            buf.update_priorities(&batch.refs, &stats.priorities);
            buf.len()
        };
        shared.learner_step.store(learner.step, Ordering::SeqCst);
        if learner.step.is_multiple_of(cfg.learner.snapshot_every) {
            *shared.snapshot.write().expect("snapshot lock") = Arc::new(learner.online.clone());
        }
        let curriculum = shared.curriculum.lock().expect("curriculum lock").clone();
        let line = LogLine {
            step: learner.step,
            loss: stats.loss,
            buffer: buffer_len,
            episodes: shared.episodes.load(Ordering::SeqCst),
            transitions: shared.transitions.load(Ordering::SeqCst),
            epsilon: cfg.epsilon(learner.step),
            elapsed: start.elapsed().as_secs_f64(),
            success: rates(&curriculum),
        };
        writeln!(log, "{}", line.render())?;
        let flow = progress(&line);
        if cfg.run.checkpoint_every > 0 && learner.step.is_multiple_of(cfg.run.checkpoint_every) {
            log.flush()?;
            let ckpt = make_checkpoint(learner, cfg, &curriculum, line.episodes, line.transitions);
            save(&ckpt, &opts.out_dir, true)?;
        }
        if flow.is_break() {
            log::info!("stopped by caller at learner step {}", learner.step);
            break;
        }
    }
    log.flush()?;
    Ok(())
}
