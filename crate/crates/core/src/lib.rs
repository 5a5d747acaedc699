pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod design;
pub mod error;
pub mod microgen;
pub mod networks;
pub mod oracle;
pub mod plots;
pub mod residuals;
pub mod seed;
pub mod symmetry;
pub mod task;
pub mod training;

pub use error::{Error, Result};
pub use task::Task;
