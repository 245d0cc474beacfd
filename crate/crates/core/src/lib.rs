pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcam;
pub mod metrics;
pub mod models;
pub mod ops;
pub mod oracle;
pub mod par;
pub mod persistence;
pub mod selftest;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
