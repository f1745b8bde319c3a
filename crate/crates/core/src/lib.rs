//! Reprogramming a frozen time-series classifier.
//!
//! A small source classifier is trained once and frozen. New univariate
//! classification tasks are then solved by learning only an additive input
//! perturbation (placed around zero-padded, replicated target series) and a
//! many-to-one mapping from source labels to target labels. The
//! [`alignment`] module measures how well reprogrammed target logits align
//! with source logits and checks the resulting risk bound.

pub mod alignment;
pub mod dataio;
pub mod error;
pub mod nnet;
pub mod reprogram;
pub mod seed;
pub mod source_model;
pub mod toy;

pub use error::{Error, Result};
