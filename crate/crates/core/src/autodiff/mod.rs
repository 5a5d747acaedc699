//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.

mod adam;
mod graph;
mod params;
mod spatial;
mod tensor;

pub use adam::AdamState;
pub use graph::{Axis, Grads, Graph, Var};
pub use params::ParamStore;
pub use spatial::{spatial_gradient, spatial_gradients, FieldEvaluator, FnField, H_SPATIAL};
pub use tensor::Tensor;
