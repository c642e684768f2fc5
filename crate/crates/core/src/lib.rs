//! Optimal control of state equations with memory.

#![allow(clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod hilbert;
pub mod kernel;
pub mod library;
pub mod reduced;
pub mod sampling;
pub mod value;

pub use error::{Error, Result};
