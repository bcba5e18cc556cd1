//! Differentiable building blocks with explicit forward/backward passes.

pub mod activation;
pub mod adam;
pub mod gradcheck;
pub mod linear;
pub mod lstm;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use linear::Linear;
pub use lstm::{BiLstmLayer, LstmCell};
pub use params::Params;
pub use tensor::Tensor;

pub(crate) use tensor::{axpy, dot};
