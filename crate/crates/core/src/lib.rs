pub mod data;
pub mod error;
pub mod imageio;
pub mod inference;
pub mod learn;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
