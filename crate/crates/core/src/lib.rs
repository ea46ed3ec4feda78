//! Neural decoders for the toric code, trained on syndrome/error pairs and
//! then reoptimized against a differentiable relaxation of syndrome
//! measurement so that corrections differing from the true error by a
//! stabilizer are no longer penalized.

pub mod cli;
pub mod config;
pub mod decoder;
pub mod error;
pub mod evaluator;
pub mod formats;
pub mod lattice;
pub mod nn;
pub mod noise;
pub mod plot;
pub mod reoptimizer;
pub mod runlog;
pub mod syndrome_field;

pub use error::{Error, Result};
