pub mod classifier;
pub mod embeddings;
pub mod epi;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod sampler;
pub mod schema;
pub mod seq2seq;
pub mod text;

pub use error::{Error, Result};
