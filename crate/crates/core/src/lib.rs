//! Targeted attacks on deep hashing retrieval, at desk scale.

pub mod autodiff;
pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gan;
pub mod gradcheck;
pub mod hashing;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod prototype;
pub mod retrieval;
pub mod tensor;

pub use error::{CheckpointError, Error, Result};
