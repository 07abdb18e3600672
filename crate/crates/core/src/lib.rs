//! Local controlled invariance of flat distributions for affine control
//! systems, with feedback synthesis and numerical verification.

pub mod cli;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod grid;
pub mod invariance;
pub mod linalg;
pub mod ode;
pub mod synthesis;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
