pub mod detector;
pub mod embedding;
pub mod error;
pub mod filters;
pub mod imaging;
pub mod landmarks;
pub mod manifest;
pub mod matchers;
pub mod metrics;
pub mod recon;
pub mod runner;
pub mod synth;

pub use error::{Error, Result};
