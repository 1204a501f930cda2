pub mod analysis;
pub mod bench;
pub mod conditioning;
pub mod datagen;
pub mod error;
pub mod models;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use models::{build, parameter_count, Family, Model, ModelSpec};
pub use tensor::{Graph, Real, Tensor, Var};
