//! Hardware-free myoelectric pattern-recognition training loop.
//!
//! Raw EMG is cut into sliding windows ([`signal`]), reduced to feature
//! vectors, projected into an LDA subspace ([`subspace`]) and classified by
//! the nearest rest-to-centroid segment ([`classifier`]). [`session`] runs
//! the calibration/exploration/assessment protocol, [`flt`] implements the
//! Fitts' law target task and its metrics, and [`synth`] provides seeded
//! synthetic EMG and a simulated user for closed-loop runs.

// `!(x >= 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod movement;
pub mod signal;

pub use error::{Error, Result};
pub use movement::{Location, Movement};
pub mod classifier;
pub mod flt;
pub mod session;
pub mod subspace;
pub mod synth;
