//! Memory-augmented multi-instance contrastive predictive coding for
//! sequential recommendation, built on a small reverse-mode tape.

pub mod checkpoint;
pub mod cli;
pub mod contrastive;
pub mod data;
pub mod dropout;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod objective;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
