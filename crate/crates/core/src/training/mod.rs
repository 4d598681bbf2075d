//! Distributed-style Q-learning: runners fill a prioritised replay of
//! recurrent segments, one learner trains on it.

mod config;
mod curriculum;
mod learner;
mod replay;
mod runner;
mod segment;
mod trainer;

pub use config::{
    CurriculumSection, EnvSection, ExplorationSection, LearnerSection, ReplaySection, RunSection,
    TrainConfig,
};
pub use curriculum::Curriculum;
pub use learner::{Learner, UpdateStats};
pub use replay::{PrioritizedBuffer, SampledBatch, SlotRef};
pub use runner::{record_episode, run_episode, sample_instance, EpisodeOutcome};
pub use segment::{n_step_returns, split_episode, EpisodeRecord, Frame, PackedObs, Segment, Task};
pub use trainer::{
    checkpoint_config, load_model, train, LogLine, TaskProgress, TrainOptions, TrainSummary,
    ENGINE_VERSION, LATEST,
};
