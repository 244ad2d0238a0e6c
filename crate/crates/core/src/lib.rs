//! Contextual player embeddings from masked tensor factorization.

pub mod behavior_analysis;
pub mod bounded;
pub mod data_model;
pub mod decoder;
pub mod error;
pub mod factorization;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod tensor_builder;

pub use error::{Error, Result};
