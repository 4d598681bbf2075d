use std::fmt::Write as _;
use std::path::PathBuf;

use super::config::TrainConfig;
use super::segment::{n_step_returns, Segment};
use crate::error::{Error, Result};
use crate::model::{argmax, observation_batch, position_batch, CommScope, DccModel};
use crate::nn::{Adam, Graph, ParamGrads, ParamStore, Tensor, Var};

/// Per-frame network outputs for a group of segments unrolled together.
struct Unrolled {
    /// Q rows per frame index.
    q: Vec<Var>,
    /// (segment, agent) for each Q row, per frame index.
    rows: Vec<Vec<(usize, usize)>>,
}

/// Replays `segments` through the recurrent network from their stored
/// initial hidden states, frame by frame, using the recorded scopes.
fn unroll(model: &DccModel, g: &mut Graph, segments: &[&Segment]) -> Result<Unrolled> {
    let width = model.hidden();
    let mut base = Vec::with_capacity(segments.len());
    let mut init = Vec::new();
    for s in segments {
        base.push(init.len() / width);
        init.extend_from_slice(&s.initial_hidden);
    }
    let total_rows = init.len() / width;
    let mut h = g.input(Tensor::new(vec![total_rows, width], init)?);
    let frames = segments.iter().map(|s| s.frames.len()).max().unwrap_or(0);
    let mut out = Unrolled {
        q: Vec::with_capacity(frames),
        rows: Vec::with_capacity(frames),
    };
    for t in 0..frames {
        let mut obs = Vec::new();
        let mut rows = Vec::new();
        let mut h_rows = Vec::new();
        let mut scopes = Vec::new();
        for (k, s) in segments.iter().enumerate() {
            let Some(frame) = s.frames.get(t) else {
                continue;
            };
            for (i, packed) in frame.obs.iter().enumerate() {
                obs.push(packed.unpack()?);
                rows.push((k, i));
                h_rows.push(base[k] + i);
            }
            scopes.push(CommScope::from_requests(frame.requests.clone()));
        }
        let refs: Vec<_> = obs.iter().collect();
        let x = g.input(observation_batch(&refs)?);
        let p = g.input(position_batch(&refs)?);
        let scope = CommScope::concat(&scopes);
        let all = h_rows.len() == total_rows;
        let h_t = if all { h } else { g.gather_rows(h, &h_rows)? };
        let step = model.step(g, x, p, h_t, &scope)?;
        h = if all {
            step.e2
        } else {
            g.scatter_rows(h, &h_rows, step.e2)?
        };
        out.q.push(step.q);
        out.rows.push(rows);
    }
    Ok(out)
}

/// Q values as `[segment][frame][agent][action]`.
fn q_table(g: &Graph, u: &Unrolled, segments: &[&Segment]) -> Vec<Vec<Vec<Vec<f32>>>> {
    let mut table: Vec<Vec<Vec<Vec<f32>>>> = segments
        .iter()
        .map(|s| vec![vec![Vec::new(); s.agents]; s.frames.len()])
        .collect();
    for (t, (&q, rows)) in u.q.iter().zip(&u.rows).enumerate() {
        let qt = g.value(q);
        for (r, &(k, i)) in rows.iter().enumerate() {
            table[k][t][i] = qt.row(r).to_vec();
        }
    }
    table
}

/// Result of one learner update.
#[derive(Clone, Debug)]
pub struct UpdateStats {
    pub loss: f64,
    /// New priority per sampled segment.
    pub priorities: Vec<f64>,
}

/// Online and target parameters plus optimiser state.
#[derive(Clone, Debug)]
pub struct Learner {
    model: DccModel,
    pub online: ParamStore,
    pub target: ParamStore,
    pub optimizer: Adam,
    pub step: u64,
    cfg: TrainConfig,
    /// Where a batch producing a non-finite loss is described.
    pub dump_dir: Option<PathBuf>,
}

impl Learner {
    pub fn new(model: DccModel, online: ParamStore, cfg: &TrainConfig) -> Self {
        let target = online.clone();
        let optimizer = Adam::new(&online, cfg.learner.lr);
        Self {
            model,
            online,
            target,
            optimizer,
            step: 0,
            cfg: cfg.clone(),
            dump_dir: None,
        }
    }

    pub fn model(&self) -> &DccModel {
        &self.model
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// Splits the batch into groups of at most `chunk_rows` rows (a single
    /// oversized segment still forms its own group).
    fn chunks(&self, segments: &[&Segment]) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut rows = 0;
        for (k, s) in segments.iter().enumerate() {
            if k > start && rows + s.rows() > self.cfg.learner.chunk_rows {
                out.push(start..k);
                start = k;
                rows = 0;
            }
            rows += s.rows();
        }
        if start < segments.len() {
            out.push(start..segments.len());
        }
        out
    }

    /// Loss, gradients and fresh priorities for one chunk.
    fn chunk_loss(
        &self,
        segments: &[&Segment],
        weights: &[f32],
        norm: f64,
    ) -> Result<(f64, ParamGrads, Vec<f64>)> {
        let lcfg = &self.cfg.learner;
        let target_q = {
            let mut g = Graph::inference(&self.target);
            let u = unroll(&self.model, &mut g, segments)?;
            q_table(&g, &u, segments)
        };
        let mut g = Graph::new(&self.online);
        let u = unroll(&self.model, &mut g, segments)?;
        let online_q = q_table(&g, &u, segments);

        let mut returns = Vec::with_capacity(segments.len());
        for (k, s) in segments.iter().enumerate() {
            let boot: Vec<Vec<f32>> = (0..s.frames.len())
                .map(|f| {
                    (0..s.agents)
                        .map(|i| {
                            let tq = &target_q[k][f][i];
                            let a = if lcfg.double_q {
                                argmax(&online_q[k][f][i])
                            } else if s.frames[f].has_transition() {
                                s.frames[f].actions[i] as usize
                            } else {
                                argmax(tq)
                            };
                            tq[a]
                        })
                        .collect()
                })
                .collect();
            returns.push(n_step_returns(s, &boot, lcfg.gamma, lcfg.n_step));
        }

        let mut priorities = vec![0.0f64; segments.len()];
        let mut loss_var: Option<Var> = None;
        for (t, (&q, rows)) in u.q.iter().zip(&u.rows).enumerate() {
            let mut pick_rows = Vec::new();
            let mut actions = Vec::new();
            let mut targets = Vec::new();
            let mut w = Vec::new();
            for (r, &(k, i)) in rows.iter().enumerate() {
                let s = segments[k];
                if t >= s.trained {
                    continue;
                }
                let a = s.frames[t].actions[i] as usize;
                let ret = returns[k][t][i];
                priorities[k] = priorities[k].max((ret - online_q[k][t][i][a] as f64).abs());
                pick_rows.push(r);
                actions.push(a);
                targets.push(ret as f32);
                w.push((weights[k] as f64 / norm) as f32);
            }
            if pick_rows.is_empty() {
                continue;
            }
            let chosen = g.gather_rows(q, &pick_rows)?;
            let picked = g.pick_cols(chosen, &actions)?;
            let term = g.weighted_squared_error(picked, &targets, &w)?;
            loss_var = Some(match loss_var {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let Some(loss) = loss_var else {
            return Ok((0.0, ParamGrads::zeros_like(&self.online), priorities));
        };
        let value = g.value(loss).data()[0] as f64;
        let grads = g.backward(loss)?.params();
        Ok((value, grads, priorities))
    }

    /// One optimiser step on an importance-weighted batch.
    pub fn update(&mut self, segments: &[&Segment], weights: &[f32]) -> Result<UpdateStats> {
        let norm: f64 = segments
            .iter()
            .map(|s| (s.trained * s.agents) as f64)
            .sum::<f64>()
            .max(1.0);
        let mut grads = ParamGrads::zeros_like(&self.online);
        let mut loss = 0.0;
        let mut priorities = Vec::with_capacity(segments.len());
        for range in self.chunks(segments) {
            let (l, g, p) = self.chunk_loss(&segments[range.clone()], &weights[range], norm)?;
            loss += l;
            grads.accumulate(&g);
            priorities.extend(p);
        }
        if !loss.is_finite() || !grads.all_finite() {
            let dump = self.dump(segments, weights, loss)?;
            return Err(Error::NonFiniteLoss {
                step: self.step,
                dump,
            });
        }
        self.optimizer.step(&mut self.online, &mut grads)?;
        self.step += 1;
        if self.step.is_multiple_of(self.cfg.learner.target_sync) {
            self.sync_target();
        }
        let floor = self.cfg.replay.priority_floor;
        Ok(UpdateStats {
            loss,
            priorities: priorities.into_iter().map(|p| p + floor).collect(),
        })
    }

    fn dump(&self, segments: &[&Segment], weights: &[f32], loss: f64) -> Result<PathBuf> {
        let dir = self.dump_dir.clone().unwrap_or_else(std::env::temp_dir);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("nonfinite-step-{}.txt", self.step));
        let mut text = format!("step={} loss={loss}\n", self.step);
        for (k, (s, w)) in segments.iter().zip(weights).enumerate() {
            let rewards: Vec<String> = s
                .frames
                .iter()
                .map(|f| format!("{:?}", f.rewards))
                .collect();
            let _ = writeln!(
                text,
                "segment={k} task={} trained={} frames={} weight={w} success={} hidden_finite={} rewards={}",
                s.task,
                s.trained,
                s.frames.len(),
                s.ends_in_success,
                s.initial_hidden.iter().all(|v| v.is_finite()),
                rewards.join(" ")
            );
        }
        let bad: Vec<&str> = self
            .online
            .iter()
            .filter(|(_, _, t)| !t.all_finite())
            .map(|(_, n, _)| n)
            .collect();
        let _ = writeln!(text, "non_finite_params={}", bad.join(","));
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::ModelConfig;
    use crate::training::runner::run_episode;
    use crate::training::segment::Task;

    fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.model = ModelConfig {
            fov: 5,
            conv_channels: vec![4],
            kernel: 3,
            hidden: 8,
            pos_embed: 4,
            heads: 2,
            key_dim: 4,
        };
        cfg.env.step_limit = 30;
        cfg.learner.chunk_rows = 40;
        cfg
    }

    fn batch(cfg: &TrainConfig, seed: u64) -> (DccModel, ParamStore, Vec<Segment>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, store) = DccModel::new(cfg.model.clone(), &mut rng).unwrap();
        let mut segs = Vec::new();
        for agents in [1, 2, 3] {
            let out =
                run_episode(&m, &store, Task { size: 7, agents }, cfg, 0.5, &mut rng).unwrap();
            segs.extend(out.segments.into_iter().map(|(s, _)| s));
        }
        (m, store, segs)
    }

    #[test]
    fn zero_network_and_zero_rewards_give_zero_loss() {
        let cfg = tiny_cfg();
        let (m, mut store, mut segs) = batch(&cfg, 1);
        for id in store.ids().collect::<Vec<_>>() {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        for s in &mut segs {
            for f in &mut s.frames {
                f.rewards.iter_mut().for_each(|r| *r = 0.0);
            }
        }
        let before = store.clone();
        let mut learner = Learner::new(m, store, &cfg);
        let refs: Vec<&Segment> = segs.iter().collect();
        let stats = learner.update(&refs, &vec![1.0; refs.len()]).unwrap();
        assert_eq!(stats.loss, 0.0);
        assert_eq!(learner.online, before);
        assert!(stats
            .priorities
            .iter()
            .all(|&p| p >= cfg.replay.priority_floor));
    }

    #[test]
    fn chunking_does_not_change_the_update() {
        let mut cfg = tiny_cfg();
        let (m, store, segs) = batch(&cfg, 2);
        let refs: Vec<&Segment> = segs.iter().collect();
        let w: Vec<f32> = (0..refs.len()).map(|k| 0.5 + 0.1 * k as f32).collect();
        let mut a = Learner::new(m.clone(), store.clone(), &cfg);
        let sa = a.update(&refs, &w).unwrap();
        cfg.learner.chunk_rows = 100_000;
        let mut b = Learner::new(m, store, &cfg);
        let sb = b.update(&refs, &w).unwrap();
        assert!((sa.loss - sb.loss).abs() < 1e-5 * sa.loss.abs().max(1.0));
        assert_eq!(sa.priorities.len(), sb.priorities.len());
        for (x, y) in sa.priorities.iter().zip(&sb.priorities) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn overfits_a_frozen_batch() {
        let mut cfg = tiny_cfg();
        cfg.learner.lr = 3e-3;
        let (m, store, segs) = batch(&cfg, 3);
        let refs: Vec<&Segment> = segs.iter().collect();
        let w = vec![1.0; refs.len()];
        let mut learner = Learner::new(m, store, &cfg);
        learner.sync_target();
        let first = learner.update(&refs, &w).unwrap().loss;
        let mut last = first;
        for _ in 0..99 {
            last = learner.update(&refs, &w).unwrap().loss;
        }
        assert!(last < 0.5 * first, "loss {first} -> {last}");
    }

    #[test]
    fn target_changes_only_at_sync() {
        let mut cfg = tiny_cfg();
        cfg.learner.target_sync = 3;
        cfg.learner.lr = 1e-2;
        let (m, store, segs) = batch(&cfg, 4);
        let refs: Vec<&Segment> = segs.iter().collect();
        let w = vec![1.0; refs.len()];
        let mut learner = Learner::new(m, store.clone(), &cfg);
        learner.update(&refs, &w).unwrap();
        learner.update(&refs, &w).unwrap();
        assert_eq!(learner.target, store);
        learner.update(&refs, &w).unwrap();
        assert_eq!(learner.target, learner.online);
        let synced = learner.online.clone();
        learner.update(&refs, &w).unwrap();
        assert_eq!(learner.target, synced);
        assert_ne!(learner.online, synced);
    }

    #[test]
    fn non_finite_loss_dumps_the_batch() {
        let cfg = tiny_cfg();
        let (m, store, mut segs) = batch(&cfg, 5);
        segs[0].frames[0].rewards[0] = f32::NAN;
        let dir = tempfile::tempdir().unwrap();
        let mut learner = Learner::new(m, store, &cfg);
        learner.dump_dir = Some(dir.path().to_path_buf());
        let refs: Vec<&Segment> = segs.iter().collect();
        match learner.update(&refs, &vec![1.0; refs.len()]) {
            Err(Error::NonFiniteLoss { dump, .. }) => assert!(dump.exists()),
            other => panic!("{other:?}"),
        }
    }
}
