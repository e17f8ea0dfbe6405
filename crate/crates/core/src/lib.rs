//! Color channel perturbation toolkit.
//!
//! A test-time attack that remixes the RGB channels of images with
//! stochastic weights, the small CNN it fools, two baseline attacks for
//! comparison (sign-gradient and one-pixel search), a training-time
//! augmentation defense, and a multi-trial experiment harness that
//! aggregates accuracy into CSV reports.
//!
//! Determinism is a design contract: every random decision flows through
//! hierarchically derived SplitMix64 streams, so the same seed reproduces
//! every byte of output regardless of worker count.

pub mod analysis;
pub mod attacks;
pub mod ccp;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod image;
pub mod model;
pub mod prng;
pub mod synthetic;

pub use error::{Error, Result};
