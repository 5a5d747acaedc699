//! Encoder, operator-network decoders and the flow prior.

pub mod flow;
pub mod layers;
pub mod model;
pub mod multionet;

pub use flow::{CouplingStep, Flow};
pub use layers::{activate, silu_id, silu_id_scalar, silu_sin, silu_sin_scalar, Activation, Dense, Mlp};
pub use model::{micro_batch, pixel_centers, Model, ModelConfig, CHECKPOINT_VERSION};
pub use multionet::{MultiOnet, OperatorField};
