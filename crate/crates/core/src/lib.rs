//! Room geometry inference from multichannel room impulse responses.
//!
//! The pipeline: sample polyhedral rooms ([`geometry`]), simulate 32-channel
//! responses with the image-source method ([`ism`]), store them as binary
//! datasets ([`dataset`]), train a two-headed convolutional estimator with a
//! permutation-invariant loss ([`model`], [`training`]) and score it
//! ([`metrics`]).

pub mod dataset;
pub mod geometry;
pub mod ism;
pub mod metrics;
pub mod model;
pub mod training;
