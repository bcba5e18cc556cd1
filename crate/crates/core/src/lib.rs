pub mod checkpoint;
pub mod contact;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod lm;
pub mod nn;
pub mod similarity;
pub mod tm;
pub mod training;

pub use error::{Error, Result};
