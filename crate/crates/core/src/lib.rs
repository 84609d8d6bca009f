pub mod array;
pub mod augment;
pub mod cli;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod seed;
pub mod synthetic;
pub mod training;

pub use array::Array;
pub use error::{Error, Result};
