//! Design and validation of state-feedback controllers for a continuous-time
//! LTI plant sampled over a network, where every sampling interval equals a
//! random i.i.d. round-trip delay.
//!
//! The pipeline is: sample delays ([`delays`]), discretize and extend the
//! plant ([`plant`]), estimate and factor the second moment of the random
//! coefficients ([`moments`]), then assemble and bisect the decay-rate LMIs
//! ([`lmi`], [`control`]). [`sim`] replays the resulting loop for
//! empirical checks.

pub mod control;
pub mod delays;
pub mod error;
pub mod export;
pub mod linalg;
pub mod lmi;
pub mod moments;
pub mod plant;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
