pub mod agents;
pub mod diagnostics;
pub mod diffcore;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod expansion;
pub mod harness;

pub use error::{Error, Result};
