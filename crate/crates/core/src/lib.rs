pub mod address;
pub mod config;
pub mod encoding;
pub mod error;
mod hash;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod prefetcher;
pub mod simulator;
pub mod trace;
pub mod vocab;

pub use error::{Error, Result};
