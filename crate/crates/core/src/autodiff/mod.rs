//! Reverse-mode automatic differentiation over `f64` matrices, with the
//! layers and optimizer the agent needs.

mod checkpoint;
mod graph;
mod layers;
mod matrix;
mod optim;

pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var};
pub use layers::{Bound, Dense, Lstm, LstmState, NamedArray, ParamId, ParamSet};
pub use matrix::Matrix;
pub use optim::{clip_grad_norm, soft_update, Adam};
