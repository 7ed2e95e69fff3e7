pub mod data;
pub mod error;
mod linalg;
pub mod model;
pub mod optimizers;
pub mod privacy;

pub use error::{Error, Result};
