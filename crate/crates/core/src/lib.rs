//! Histogram-conditioned adaptive tone curves for robust image classification.
//!
//! A soft per-channel histogram drives a small hypernetwork that predicts the
//! coefficients of an endpoint-pinned rational tone curve. The curve is applied
//! to every pixel before a classifier, and the whole pipeline is trained end to
//! end with a reverse-mode autodiff tape.

pub mod autodiff;
pub mod classical;
pub mod corruptions;
pub mod data;
pub mod enhancer;
pub mod error;
pub mod eval;
pub mod flops;
pub mod gradcheck;
pub mod hypernet;
pub mod image;
pub mod model;
pub mod par;
pub mod ppm;
pub mod rng;
pub mod softhist;
pub mod tonecurve;
pub mod trainer;

pub use error::{Error, Result};
pub use image::Image;
pub use par::Exec;
