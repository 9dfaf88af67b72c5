//! Resolve raw card-transaction descriptors to catalog merchants.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod models;
pub mod numerics;
pub mod pipeline;
pub mod retrieval;
pub mod text;
pub mod tokenizers;
pub mod training;

pub use error::{Error, Result};
