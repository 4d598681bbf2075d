use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ScopeMode};

/// Everything a training run needs. Serialises to TOML with one table per
/// concern; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub run: RunSection,
    pub model: ModelConfig,
    pub env: EnvSection,
    pub replay: ReplaySection,
    pub learner: LearnerSection,
    pub exploration: ExplorationSection,
    pub curriculum: CurriculumSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Learner updates to perform.
    pub steps: u64,
    /// Episode-generating worker threads.
    pub runners: usize,
    /// Checkpoint every this many learner steps (0 = only at the end).
    pub checkpoint_every: u64,
    /// Stop after this many seconds of wall time (0 = no limit).
    pub time_limit_secs: u64,
    pub mode: ScopeMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub step_limit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    /// Segments held before the oldest is evicted.
    pub capacity: usize,
    pub batch_size: usize,
    /// Transitions per stored segment.
    pub segment_len: usize,
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub priority_floor: f64,
    /// Segments required before the first update.
    pub min_fill: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub lr: f32,
    pub gamma: f64,
    pub n_step: usize,
    pub target_sync: u64,
    pub snapshot_every: u64,
    /// Bootstrap with the online argmax evaluated by the target network;
    /// when false, use the action the runner actually took.
    pub double_q: bool,
    /// Rows (agents × frames) processed per forward/backward chunk.
    pub chunk_rows: usize,
    /// Target number of times each collected transition is replayed.
    /// The learner waits for fresh data above it and runners pause
    /// well below it (0 = no coupling).
    pub replay_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationSection {
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the learner-step budget over which ε is annealed.
    pub anneal_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSection {
    pub start_size: usize,
    pub start_agents: usize,
    pub max_size: usize,
    pub max_agents: usize,
    pub size_step: usize,
    /// Episodes in the rolling success window.
    pub window: usize,
    pub threshold: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 100_000,
            runners: 16,
            checkpoint_every: 1000,
            time_limit_secs: 0,
            mode: ScopeMode::Dcc,
        }
    }
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            step_limit: crate::env::DEFAULT_STEP_LIMIT,
        }
    }
}

impl Default for ReplaySection {
    fn default() -> Self {
        Self {
            capacity: 1 << 15,
            batch_size: 128,
            segment_len: 20,
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            priority_floor: 1e-4,
            min_fill: 128,
        }
    }
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            gamma: 0.99,
            n_step: 2,
            target_sync: 2000,
            snapshot_every: 100,
            double_q: true,
            chunk_rows: 512,
            replay_ratio: 0.0,
        }
    }
}

impl Default for ExplorationSection {
    fn default() -> Self {
        Self {
            epsilon_start: 1.0,
            epsilon_end: 0.02,
            anneal_fraction: 0.5,
        }
    }
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self {
            start_size: 10,
            start_agents: 1,
            max_size: 40,
            max_agents: 16,
            size_step: 5,
            window: 100,
            threshold: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Rejects the first out-of-range value, naming its key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        self.model.validate()?;
        if self.env.step_limit == 0 {
            return bad("env.step_limit", "must be positive");
        }
        let r = &self.replay;
        if r.capacity == 0 || r.batch_size == 0 || r.batch_size > r.capacity {
            return bad(
                "replay.batch_size",
                "must be positive and no larger than replay.capacity",
            );
        }
        if r.segment_len == 0 {
            return bad("replay.segment_len", "must be positive");
        }
        if !(0.0..=1.0).contains(&r.alpha) {
            return bad("replay.alpha", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&r.beta_start) || !(0.0..=1.0).contains(&r.beta_end) {
            return bad(
                "replay.beta_start",
                "importance exponents must lie in [0, 1]",
            );
        }
        if r.priority_floor <= 0.0 {
            return bad("replay.priority_floor", "must be positive");
        }
        let l = &self.learner;
        if l.lr.is_nan() || l.lr <= 0.0 {
            return bad("learner.lr", "must be positive");
        }
        if !(0.0..=1.0).contains(&l.gamma) {
            return bad("learner.gamma", "must lie in [0, 1]");
        }
        if l.n_step == 0 {
            return bad("learner.n_step", "must be positive");
        }
        if l.target_sync == 0 || l.snapshot_every == 0 {
            return bad("learner.target_sync", "sync intervals must be positive");
        }
        if l.chunk_rows == 0 {
            return bad("learner.chunk_rows", "must be positive");
        }
        if l.replay_ratio.is_nan() || l.replay_ratio < 0.0 {
            return bad("learner.replay_ratio", "must be non-negative");
        }
        let x = &self.exploration;
        if !(0.0..=1.0).contains(&x.epsilon_start) || !(0.0..=1.0).contains(&x.epsilon_end) {
            return bad("exploration.epsilon_start", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&x.anneal_fraction) {
            return bad("exploration.anneal_fraction", "must lie in [0, 1]");
        }
        let c = &self.curriculum;
        if c.start_size < 4 || c.start_agents == 0 {
            return bad(
                "curriculum.start_size",
                "tasks need a map of at least 4 and one agent",
            );
        }
        if c.max_size < c.start_size || c.max_agents < c.start_agents {
            return bad(
                "curriculum.max_size",
                "caps must not be below the starting task",
            );
        }
        if c.window == 0 {
            return bad("curriculum.window", "must be positive");
        }
        Ok(())
    }

    /// ε after `step` learner updates.
    pub fn epsilon(&self, step: u64) -> f64 {
        let x = &self.exploration;
        let horizon = x.anneal_fraction * self.run.steps as f64;
        let frac = if horizon <= 0.0 {
            1.0
        } else {
            (step as f64 / horizon).min(1.0)
        };
        x.epsilon_start + (x.epsilon_end - x.epsilon_start) * frac
    }

    /// β after `step` learner updates, annealed over the whole budget.
    pub fn beta(&self, step: u64) -> f64 {
        let r = &self.replay;
        let frac = if self.run.steps == 0 {
            1.0
        } else {
            (step as f64 / self.run.steps as f64).min(1.0)
        };
        r.beta_start + (r.beta_end - r.beta_start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = TrainConfig::from_toml("[replay]\nalhpa = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("alhpa"), "{err}");
    }

    #[test]
    fn out_of_range_names_the_key() {
        let err = TrainConfig::from_toml("[learner]\ngamma = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("learner.gamma"), "{err}");
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig {
            run: RunSection {
                steps: 1000,
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(cfg.epsilon(0), 1.0);
        assert!((cfg.epsilon(250) - 0.51).abs() < 1e-12);
        assert!((cfg.epsilon(500) - 0.02).abs() < 1e-12);
        assert!((cfg.epsilon(900) - 0.02).abs() < 1e-12);
    }
}
