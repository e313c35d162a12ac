pub mod attitude;
pub mod checkpoint;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod lqr;
pub mod nn;
pub mod ppo;
pub mod reward;
pub mod scenario;

pub use error::{Error, Result};
