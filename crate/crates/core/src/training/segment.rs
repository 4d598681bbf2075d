use crate::env::{Action, Observation, CHANNELS};
use crate::error::Result;

/// Observation bits packed eight to a byte.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedObs {
    fov: u16,
    bytes: Vec<u8>,
}

impl PackedObs {
    pub fn pack(obs: &Observation) -> Self {
        let mut bytes = vec![0u8; obs.bits().len().div_ceil(8)];
        for (i, &b) in obs.bits().iter().enumerate() {
            bytes[i / 8] |= b << (i % 8);
        }
        Self {
            fov: obs.fov() as u16,
            bytes,
        }
    }

    pub fn unpack(&self) -> Result<Observation> {
        let fov = self.fov as usize;
        let len = CHANNELS * fov * fov;
        let bits = (0..len)
            .map(|i| (self.bytes[i / 8] >> (i % 8)) & 1)
            .collect();
        Observation::from_bits(fov, bits)
    }
}

/// One recorded joint state. `actions`/`rewards` are empty for the state
/// an episode ended in.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub obs: Vec<PackedObs>,
    pub requests: Vec<Vec<usize>>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f32>,
}

impl Frame {
    pub fn has_transition(&self) -> bool {
        !self.actions.is_empty()
    }
}

/// Map size and agent count of a training task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Task {
    pub size: usize,
    pub agents: usize,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.size, self.agents)
    }
}

/// A window of an episode used as one replay item: the first `trained`
/// frames are learned from, the rest only supply n-step lookahead.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub task: Task,
    pub agents: usize,
    /// Recurrent state of every agent entering the first frame, row-major.
    pub initial_hidden: Vec<f32>,
    pub frames: Vec<Frame>,
    pub trained: usize,
    /// The last frame is the all-agents-arrived state (no bootstrap there).
    pub ends_in_success: bool,
}

impl Segment {
    /// Rows one forward pass over this segment touches.
    pub fn rows(&self) -> usize {
        self.agents * self.frames.len()
    }

    /// True terminal flag per frame.
    pub fn terminal_flags(&self) -> Vec<bool> {
        let mut t = vec![false; self.frames.len()];
        if self.ends_in_success && !self.frames.last().is_some_and(Frame::has_transition) {
            *t.last_mut().expect("non-empty segment") = true;
        }
        t
    }
}

/// n-step returns for every trained frame and agent: rewards summed until
/// `n` transitions or the last recorded frame, then the discounted
/// bootstrap value of the frame reached unless it is a true terminal.
///
/// `bootstrap[f][i]` is the value of agent `i` in frame `f`.
pub fn n_step_returns(
    segment: &Segment,
    bootstrap: &[Vec<f32>],
    gamma: f64,
    n: usize,
) -> Vec<Vec<f64>> {
    let terminal = segment.terminal_flags();
    (0..segment.trained)
        .map(|t| {
            (0..segment.agents)
                .map(|i| {
                    let mut total = 0.0;
                    let mut k = 0;
                    while k < n
                        && t + k < segment.frames.len()
                        && segment.frames[t + k].has_transition()
                    {
                        total += gamma.powi(k as i32) * segment.frames[t + k].rewards[i] as f64;
                        k += 1;
                    }
                    let f = t + k;
                    if f < segment.frames.len() && !terminal[f] {
                        total += gamma.powi(k as i32) * bootstrap[f][i] as f64;
                    }
                    total
                })
                .collect()
        })
        .collect()
}

/// One played episode before it is cut into segments.
#[derive(Clone, Debug, Default)]
pub struct EpisodeRecord {
    pub frames: Vec<Frame>,
    /// Recurrent state entering each frame, row-major over agents.
    pub hiddens: Vec<Vec<f32>>,
    /// Behaviour-network Q values per frame and agent.
    pub q: Vec<Vec<[f32; Action::COUNT]>>,
    pub success: bool,
}

/// Cuts an episode into windows of at most `len` transitions with `n`
/// frames of lookahead, each with its initial priority: the largest
/// absolute n-step TD error under the behaviour network (double-Q with a
/// single network reduces to the max), plus `floor`.
pub fn split_episode(
    record: &EpisodeRecord,
    task: Task,
    len: usize,
    n: usize,
    gamma: f64,
    floor: f64,
) -> Vec<(Segment, f64)> {
    let transitions = record.frames.iter().filter(|f| f.has_transition()).count();
    let agents = task.agents;
    let mut out = Vec::new();
    let mut start = 0;
    while start < transitions {
        let trained = len.min(transitions - start);
        let end = (start + trained + n).min(record.frames.len());
        let frames = record.frames[start..end].to_vec();
        let ends_in_success = record.success && end == record.frames.len();
        let segment = Segment {
            task,
            agents,
            initial_hidden: record.hiddens[start].clone(),
            frames,
            trained,
            ends_in_success,
        };
        let boot: Vec<Vec<f32>> = record.q[start..end]
            .iter()
            .map(|qs| {
                qs.iter()
                    .map(|q| q.iter().copied().fold(f32::NEG_INFINITY, f32::max))
                    .collect()
            })
            .collect();
        let returns = n_step_returns(&segment, &boot, gamma, n);
        let mut worst = 0.0f64;
        for (t, row) in returns.iter().enumerate() {
            for (i, &ret) in row.iter().enumerate() {
                let a = segment.frames[t].actions[i] as usize;
                worst = worst.max((ret - record.q[start + t][i][a] as f64).abs());
            }
        }
        out.push((segment, worst + floor));
        start += trained;
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::oracles::n_step_return_reference;

    fn frame(reward: Option<f32>) -> Frame {
        Frame {
            obs: vec![],
            requests: vec![vec![]],
            actions: reward.map(|_| vec![4]).unwrap_or_default(),
            rewards: reward.map(|r| vec![r]).unwrap_or_default(),
        }
    }

    fn record(rewards: &[f32], success: bool) -> EpisodeRecord {
        let mut frames: Vec<Frame> = rewards.iter().map(|&r| frame(Some(r))).collect();
        frames.push(frame(None));
        let count = frames.len();
        EpisodeRecord {
            frames,
            hiddens: vec![vec![0.0]; count],
            q: vec![vec![[0.0; 5]]; count],
            success,
        }
    }

    const TASK: Task = Task {
        size: 10,
        agents: 1,
    };

    #[test]
    fn pack_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bits: Vec<u8> = (0..6 * 81).map(|_| rng.gen_range(0..2)).collect();
        let obs = Observation::from_bits(9, bits).unwrap();
        assert_eq!(PackedObs::pack(&obs).unpack().unwrap(), obs);
    }

    #[test]
    fn short_episode_is_one_segment() {
        let segs = split_episode(&record(&[-0.075; 5], true), TASK, 20, 2, 0.99, 1e-4);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].0.trained, 5);
        assert!(segs[0].0.ends_in_success);
        assert!(segs[0].1 > 0.0);
    }

    #[test]
    fn full_length_episode_segment_count() {
        let segs = split_episode(&record(&[-0.075; 256], false), TASK, 20, 2, 0.99, 1e-4);
        assert_eq!(segs.len(), 13);
        assert_eq!(segs.iter().map(|(s, _)| s.trained).sum::<usize>(), 256);
        assert!(segs.iter().all(|(s, p)| *p > 0.0 && !s.ends_in_success));
        assert_eq!(segs[0].0.frames.len(), 22);
    }

    #[test]
    fn terminal_after_one_step() {
        let seg = &split_episode(&record(&[-0.075, 3.0], true), TASK, 20, 2, 0.99, 1e-4)[0].0;
        let r = n_step_returns(seg, &vec![vec![100.0]; 3], 0.99, 2);
        assert!((r[0][0] - 2.895).abs() < 1e-6);
        assert!((r[1][0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn bootstrap_only() {
        let seg = &split_episode(&record(&[0.0, 0.0, 0.0], false), TASK, 20, 2, 0.99, 1e-4)[0].0;
        let r = n_step_returns(seg, &vec![vec![1.0]; 4], 0.99, 2);
        assert!((r[0][0] - 0.9801).abs() < 1e-9);
    }

    #[test]
    fn time_limit_keeps_bootstrap() {
        let seg = &split_episode(&record(&[-0.075], false), TASK, 20, 2, 0.99, 1e-4)[0].0;
        let r = n_step_returns(seg, &[vec![0.0], vec![2.0]], 0.99, 2);
        assert!((r[0][0] - (-0.075 + 0.99 * 2.0)).abs() < 1e-6);
    }

    #[test]
    fn returns_match_reference_on_random_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let choices = [-0.075f32, -0.5, 0.0, 3.0];
        for _ in 0..200 {
            let len = rng.gen_range(1..30);
            let rewards: Vec<f32> = (0..len).map(|_| choices[rng.gen_range(0..4)]).collect();
            let rec = record(&rewards, rng.gen_bool(0.5));
            let boot_all: Vec<f32> = (0..=len).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut start = 0;
            for (seg, _) in split_episode(&rec, TASK, 20, 2, 0.99, 1e-4) {
                let boot: Vec<Vec<f32>> = boot_all[start..start + seg.frames.len()]
                    .iter()
                    .map(|&b| vec![b])
                    .collect();
                let got = n_step_returns(&seg, &boot, 0.99, 2);
                let rs: Vec<Option<f32>> = rec
                    .frames
                    .iter()
                    .map(|f| f.rewards.first().copied())
                    .collect();
                let mut term = vec![false; rec.frames.len()];
                term[len] = rec.success;
                for t in 0..seg.trained {
                    let want = n_step_return_reference(&rs, &boot_all, &term, start + t, 2, 0.99);
                    assert!((got[t][0] - want).abs() < 1e-6);
                }
                start += seg.trained;
            }
        }
    }
}
