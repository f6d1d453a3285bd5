//! Camera calibration with distance-dependent scale factors.
//!
//! A fixed-focus camera does not keep a constant focal length across
//! camera–template distances: below the hyperfocal distance the effective
//! scale factors change with focus. This crate measures the scale factors
//! per distance from fronto-parallel views, then calibrates with those
//! scale factors held fixed, alongside a conventional single-intrinsics
//! baseline and a synthetic ground-truth generator to compare the two.

pub mod calibration;
pub mod error;
pub mod homography;
pub mod io;
pub mod lens;
pub mod scale;
pub mod synthetic;
pub mod types;

pub use error::{Error, Result};
