pub mod advantage;
pub mod env;
pub mod harness;
pub mod error;
pub mod optim;
pub mod policy;
pub mod trainer;
pub mod verifier;
mod util;

pub use error::{Error, Result};
