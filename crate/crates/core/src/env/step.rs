use super::distance::{distance_field, DistanceField};
use super::instance::Instance;
use super::map::{Action, Pos};
use super::observation::{build_observation, neighbors, Neighbor, Observation};
use crate::error::{Error, Result};

pub const REWARD_MOVE: f32 = -0.075;
pub const REWARD_STAY_ON_GOAL: f32 = 0.0;
pub const REWARD_STAY_OFF_GOAL: f32 = -0.075;
pub const REWARD_COLLISION: f32 = -0.5;
pub const REWARD_FINISH: f32 = 3.0;

/// Default field-of-view width.
pub const DEFAULT_FOV: usize = 9;
/// Default episode length for training.
pub const DEFAULT_STEP_LIMIT: usize = 256;

/// Positions and progress of every agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvState {
    pub positions: Vec<Pos>,
    pub step_count: usize,
    pub arrived: Vec<bool>,
}

impl EnvState {
    pub fn initial(instance: &Instance) -> Self {
        let positions = instance.starts().to_vec();
        let arrived = positions
            .iter()
            .zip(instance.goals())
            .map(|(p, g)| p == g)
            .collect();
        Self {
            positions,
            step_count: 0,
            arrived,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f32>,
    pub collided: Vec<bool>,
    pub done: bool,
}

/// Every agent on its goal (vacuously true with no agents).
pub fn is_success(state: &EnvState) -> bool {
    state.arrived.iter().all(|&a| a)
}

/// Advances all agents at once.
///
/// Moves into walls or off the map bounce back. Then agents that share a
/// target cell or swap along an edge are sent back to where they were,
/// repeatedly, since each bounce can create a fresh conflict. Only movers
/// are ever sent back, so the loop ends after at most `n` rounds.
pub fn step(
    instance: &Instance,
    state: &EnvState,
    actions: &[Action],
    step_limit: usize,
) -> Result<(EnvState, StepOutcome)> {
    let n = instance.num_agents();
    if actions.len() != n {
        return Err(Error::ActionCount {
            expected: n,
            found: actions.len(),
        });
    }
    if is_success(state) || state.step_count >= step_limit {
        return Err(Error::EpisodeOver);
    }
    let map = instance.map();
    let prev = &state.positions;
    let mut collided = vec![false; n];
    let mut next: Vec<Pos> = prev
        .iter()
        .zip(actions)
        .enumerate()
        .map(|(i, (&p, a))| {
            let (r, c) = (p.row as i64 + a.delta().0, p.col as i64 + a.delta().1);
            if map.is_free_at(r, c) {
                Pos::new(r as usize, c as usize)
            } else {
                collided[i] = true;
                p
            }
        })
        .collect();

    let size = map.size();
    let mut occupants = vec![0u16; size * size];
    let mut prev_owner = vec![usize::MAX; size * size];
    for (i, p) in prev.iter().enumerate() {
        prev_owner[map.idx(*p)] = i;
    }
    loop {
        occupants.iter_mut().for_each(|o| *o = 0);
        for p in &next {
            occupants[map.idx(*p)] += 1;
        }
        let mut sent_back = Vec::new();
        for i in 0..n {
            if next[i] == prev[i] {
                continue;
            }
            let vertex = occupants[map.idx(next[i])] > 1;
            let j = prev_owner[map.idx(next[i])];
            let swap = j != usize::MAX && next[j] == prev[i];
            if vertex || swap {
                sent_back.push(i);
            }
        }
        if sent_back.is_empty() {
            break;
        }
        for i in sent_back {
            next[i] = prev[i];
            collided[i] = true;
        }
    }

    let goals = instance.goals();
    let arrived: Vec<bool> = next.iter().zip(goals).map(|(p, g)| p == g).collect();
    let all_arrived = arrived.iter().all(|&a| a);
    let rewards = (0..n)
        .map(|i| {
            if all_arrived {
                REWARD_FINISH
            } else if collided[i] {
                REWARD_COLLISION
            } else if next[i] != prev[i] {
                REWARD_MOVE
            } else if arrived[i] {
                REWARD_STAY_ON_GOAL
            } else {
                REWARD_STAY_OFF_GOAL
            }
        })
        .collect();
    let new_state = EnvState {
        positions: next,
        step_count: state.step_count + 1,
        arrived,
    };
    let done = all_arrived || new_state.step_count >= step_limit;
    Ok((
        new_state,
        StepOutcome {
            rewards,
            collided,
            done,
        },
    ))
}

/// An instance being played: state plus cached goal distance fields.
#[derive(Clone, Debug)]
pub struct MapfEnv {
    instance: Instance,
    fields: Vec<DistanceField>,
    state: EnvState,
    step_limit: usize,
    fov: usize,
}

impl MapfEnv {
    pub fn new(instance: Instance, step_limit: usize, fov: usize) -> Result<Self> {
        if fov.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "field of view must be odd, got {fov}"
            )));
        }
        let fields = instance
            .goals()
            .iter()
            .map(|&g| distance_field(instance.map(), g))
            .collect::<Result<_>>()?;
        let state = EnvState::initial(&instance);
        Ok(Self {
            instance,
            fields,
            state,
            step_limit,
            fov,
        })
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn fields(&self) -> &[DistanceField] {
        &self.fields
    }

    pub fn fov(&self) -> usize {
        self.fov
    }

    pub fn step_limit(&self) -> usize {
        self.step_limit
    }

    pub fn num_agents(&self) -> usize {
        self.instance.num_agents()
    }

    pub fn reset(&mut self) {
        self.state = EnvState::initial(&self.instance);
    }

    pub fn is_success(&self) -> bool {
        is_success(&self.state)
    }

    pub fn is_done(&self) -> bool {
        self.is_success() || self.state.step_count >= self.step_limit
    }

    pub fn observe(&self, agent: usize) -> Observation {
        build_observation(
            self.instance.map(),
            &self.state.positions,
            agent,
            &self.fields[agent],
            self.fov,
        )
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        (0..self.num_agents()).map(|i| self.observe(i)).collect()
    }

    pub fn neighbors(&self, agent: usize) -> Vec<Neighbor> {
        neighbors(&self.state.positions, agent, self.fov)
    }

    pub fn all_neighbors(&self) -> Vec<Vec<Neighbor>> {
        (0..self.num_agents()).map(|i| self.neighbors(i)).collect()
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        let (state, outcome) = step(&self.instance, &self.state, actions, self.step_limit)?;
        self.state = state;
        Ok(outcome)
    }
}
