//! Numerical solver for reflected backward SDEs whose driver depends on the
//! reflecting process, built on the path-wise Skorohod representation of that
//! process and a Picard iteration to its fixed point.

pub mod barrier;
pub mod config;
pub mod driver;
pub mod error;
pub mod grid;
pub mod local_time;
pub mod matrix;
pub mod output;
pub mod picard;
pub mod problems;
pub mod projection;
pub mod skorohod;
pub mod verify;

pub use error::{Error, Result};
