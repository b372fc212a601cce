//! Eddy-current conductivity reconstruction with total-variation regularization.

pub mod eddy;
pub mod error;
pub mod fem;
pub mod harness;
pub mod inversion;
pub mod mesh;
pub mod sparse;
pub mod tv;

pub use error::{Error, Result};
