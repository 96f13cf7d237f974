//! Reverse knitting: recover machine-knitting instruction grids from images
//! of knitted fabric.

pub mod error;
pub mod eval;
pub mod labels;
pub mod losses;
pub mod models;
pub mod nn;
pub mod synthgen;
pub mod syntax;
pub mod train;

pub use error::{Error, Result};
