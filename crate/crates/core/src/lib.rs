pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
