pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod head;
pub mod losses;
pub mod metrics;
pub mod posthoc;
pub mod tensor;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::Tensor;
