//! Grid world: maps, instances, simultaneous stepping and observations.

mod distance;
mod instance;
mod map;
mod observation;
mod step;

pub use distance::{distance_field, DistanceField};
pub use instance::{make_instance, Instance};
pub use map::{
    generate_map, generate_map_with_density, sample_density, Action, GridMap, Pos, DIRECTIONS,
};
pub use observation::{
    build_observation, neighbors, Neighbor, Observation, AGENT_CHANNEL, CHANNELS,
    HEURISTIC_CHANNEL, OBSTACLE_CHANNEL,
};
pub use step::{
    is_success, step, EnvState, MapfEnv, StepOutcome, DEFAULT_FOV, DEFAULT_STEP_LIMIT,
    REWARD_COLLISION, REWARD_FINISH, REWARD_MOVE, REWARD_STAY_OFF_GOAL, REWARD_STAY_ON_GOAL,
};
