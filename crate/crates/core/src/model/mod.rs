//! The communicating Q-network and its action-selection pipeline.

mod config;
mod network;
mod policy;
mod scope;

pub use config::{ModelConfig, ScopeMode};
pub use network::{observation_batch, position_batch, position_features, DccModel, StepVars};
pub use policy::{act, comm_scope, comm_scopes_with, temp_action, Decision};
pub use scope::{argmax, mask_neighbor, rr_n2_scope, CommScope};

#[cfg(test)]
mod tests;
