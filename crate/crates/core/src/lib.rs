//! Lightweight dynamic convolution (LDyConv) front-end for keyword spotting,
//! with MFCC features, a small temporal-convolution classifier, training and
//! evaluation harnesses, and cost accounting.

pub mod backbone;
pub mod complexity;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod ldy;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
