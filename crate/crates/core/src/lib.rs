//! Photon-bunching laboratory for spectrally filtered thermal light.
//!
//! The crate follows the measurement chain of an intensity-interferometry
//! bench: a source spectrum is shaped by a filter chain ([`spectral`]), the
//! theoretical coherence and g²(τ) follow from it ([`coherence`]), photon
//! time tags are synthesized and passed through detector models
//! ([`photostream`]), the two channels are cross-correlated
//! ([`correlator`]) and the bunching peak is fitted ([`inference`]).
//! [`pipeline`] strings the stages together from a [`config::ScenarioConfig`]
//! and [`acceptance`] holds the end-to-end verification criteria.

// Validation reads `!(x > 0.0)` on purpose: it rejects NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod coherence;
pub mod config;
pub mod correlator;
pub mod error;
pub mod inference;
pub mod photostream;
pub mod physics;
pub mod pipeline;
pub mod spectral;

mod numeric;

pub use error::{Error, Result};
