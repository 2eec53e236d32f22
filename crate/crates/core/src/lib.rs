//! Bone-surface estimation for phased-array ultrasound sweeps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod geometry;
pub mod grid;

pub use error::{Error, Result};
pub use grid::Grid;
pub mod features;
pub mod io;
pub mod labelgen;
pub mod phantom;
pub mod net;
pub mod eval;
pub mod volume;
