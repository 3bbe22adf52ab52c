pub mod cli;
pub mod ensemble;
pub mod error;
pub mod hosvd;
pub mod report;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod theory;

pub use error::{Error, ParseError, Result};
pub use tensor::{DenseTensor, Matrix};
