//! Smoothed majority-vote MLP classifiers.
//!
//! * [`nn`] — dense ReLU networks, backprop and momentum SGD.
//! * [`spectral`] — spectral norms, the Gershgorin bound and the
//!   correlation (`ℓ1,1` of row cosines) regularizer with its gradient.
//! * [`smoothing`] — Monte-Carlo voting over joint weight/input noise,
//!   Clopper-Pearson certification and certified-accuracy curves.
//! * [`bounds`] — the PAC-Bayes margin bound and the model-dependent radius.
//! * [`sigma`] — sharpness-based choice of the smoothing variance.
//! * [`train`] — smooth training with the once-per-epoch regularizer step.
//! * [`data`] — IDX / synthetic datasets, checkpoints, CSV and SVG output.
//! * [`oracle`] — brute-force references used by the test suites.
//!
//! All arithmetic is `f64`, and every random draw comes from a
//! [`rng::Stream`] seeded by hashing `(seed, index, phase)`, so results do
//! not depend on thread count or evaluation order.

// `!(x > 0.0)` is how argument checks reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod data;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod sigma;
pub mod smoothing;
pub mod special;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
