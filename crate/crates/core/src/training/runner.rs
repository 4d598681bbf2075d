use rand::Rng;

use super::config::TrainConfig;
use super::segment::{split_episode, EpisodeRecord, Frame, PackedObs, Segment, Task};
use crate::env::{generate_map, make_instance, Instance, MapfEnv};
use crate::error::{Error, Result};
use crate::model::{act, DccModel, ScopeMode};
use crate::nn::ParamStore;

/// Map draws tried before a task is declared infeasible.
const MAX_MAP_DRAWS: usize = 100;

/// A played training episode cut into prioritised segments.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub task: Task,
    pub segments: Vec<(Segment, f64)>,
    pub success: bool,
    pub steps: usize,
    pub comm_pairs: usize,
}

/// Random instance for `task`, redrawing the map when it cannot host the
/// agents.
pub fn sample_instance<R: Rng + ?Sized>(task: Task, rng: &mut R) -> Result<Instance> {
    let mut last = None;
    for _ in 0..MAX_MAP_DRAWS {
        let map = generate_map(task.size, rng)?;
        match make_instance(&map, task.agents, rng) {
            Ok(inst) => return Ok(inst),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::InstanceGeneration(format!("task {task}"))))
}

/// Plays `env` to the end with ε-greedy actions, recording every frame.
pub fn record_episode<R: Rng + ?Sized>(
    model: &DccModel,
    store: &ParamStore,
    env: &mut MapfEnv,
    epsilon: f64,
    mode: ScopeMode,
    rng: &mut R,
) -> Result<(EpisodeRecord, usize)> {
    let n = env.num_agents();
    let mut hidden = vec![vec![0.0f32; model.hidden()]; n];
    let mut record = EpisodeRecord::default();
    let mut comm_pairs = 0;
    loop {
        let obs = env.observe_all();
        let nbs = env.all_neighbors();
        let packed = obs.iter().map(PackedObs::pack).collect();
        record.hiddens.push(hidden.concat());
        if env.is_success() {
            // true terminal: no action, no bootstrap, so no network pass needed
            record.frames.push(Frame {
                obs: packed,
                requests: vec![Vec::new(); n],
                actions: vec![],
                rewards: vec![],
            });
            record.q.push(vec![[0.0; 5]; n]);
            record.success = true;
            break;
        }
        let d = act(model, store, &obs, &nbs, &hidden, epsilon, mode, rng)?;
        record.q.push(d.q.clone());
        if env.is_done() {
            // cut off by the step limit: keep the scope so the learner can bootstrap here
            record.frames.push(Frame {
                obs: packed,
                requests: d.scope.requests().to_vec(),
                actions: vec![],
                rewards: vec![],
            });
            break;
        }
        comm_pairs += d.comm_count();
        let outcome = env.step(&d.actions)?;
        record.frames.push(Frame {
            obs: packed,
            requests: d.scope.requests().to_vec(),
            actions: d.actions.iter().map(|a| a.index() as u8).collect(),
            rewards: outcome.rewards,
        });
        hidden = d.hidden;
    }
    Ok((record, comm_pairs))
}

/// Generates an instance for `task`, plays it and splits it into segments.
pub fn run_episode<R: Rng + ?Sized>(
    model: &DccModel,
    store: &ParamStore,
    task: Task,
    cfg: &TrainConfig,
    epsilon: f64,
    rng: &mut R,
) -> Result<EpisodeOutcome> {
    let instance = sample_instance(task, rng)?;
    let mut env = MapfEnv::new(instance, cfg.env.step_limit, model.config().fov)?;
    let (record, comm_pairs) = record_episode(model, store, &mut env, epsilon, cfg.run.mode, rng)?;
    let segments = split_episode(
        &record,
        task,
        cfg.replay.segment_len,
        cfg.learner.n_step,
        cfg.learner.gamma,
        cfg.replay.priority_floor,
    );
    Ok(EpisodeOutcome {
        task,
        segments,
        success: record.success,
        steps: env.state().step_count,
        comm_pairs,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::{
        GridMap, Pos, REWARD_COLLISION, REWARD_FINISH, REWARD_MOVE, REWARD_STAY_OFF_GOAL,
    };
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            fov: 5,
            conv_channels: vec![4],
            kernel: 3,
            hidden: 8,
            pos_embed: 4,
            heads: 2,
            key_dim: 4,
        }
    }

    #[test]
    fn episode_segments_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, store) = DccModel::new(tiny(), &mut rng).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.env.step_limit = 45;
        let out =
            run_episode(&m, &store, Task { size: 8, agents: 3 }, &cfg, 0.5, &mut rng).unwrap();
        let trained: usize = out.segments.iter().map(|(s, _)| s.trained).sum();
        assert_eq!(trained, out.steps);
        for (seg, p) in &out.segments {
            assert!(*p > 0.0);
            assert!(seg.trained <= 20);
            assert_eq!(seg.initial_hidden.len(), 3 * 8);
            for f in &seg.frames {
                assert_eq!(f.obs.len(), 3);
                for r in &f.rewards {
                    assert!([
                        REWARD_MOVE,
                        REWARD_STAY_OFF_GOAL,
                        REWARD_COLLISION,
                        REWARD_FINISH,
                        0.0
                    ]
                    .contains(r));
                }
            }
        }
        if !out.success {
            assert_eq!(out.steps, 45);
            assert_eq!(out.segments.len(), 3);
        }
    }

    #[test]
    fn adjacent_goal_finishes_in_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, store) = DccModel::new(tiny(), &mut rng).unwrap();
        let inst = Instance::new(
            GridMap::empty(5),
            vec![Pos::new(2, 2)],
            vec![Pos::new(2, 3)],
        )
        .unwrap();
        // whatever the network prefers, ε = 1 eventually walks right; a forced
        // success path is exercised by checking the recorded terminal frame
        for _ in 0..50 {
            let mut env = MapfEnv::new(inst.clone(), 3, 5).unwrap();
            let (rec, _) =
                record_episode(&m, &store, &mut env, 1.0, ScopeMode::Dcc, &mut rng).unwrap();
            if rec.success {
                assert!(!rec.frames.last().unwrap().has_transition());
                assert_eq!(rec.frames.len(), rec.hiddens.len());
                return;
            }
        }
        panic!("random walk never reached an adjacent goal");
    }
}
