//! Dense tensors, a reverse-mode tape and the layer set the policy needs.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{Affine, Conv2d, GruCell, MultiHeadAttention};
pub use optim::Adam;
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
