//! Identity testing for multidimensional histogram distributions.
//!
//! Given an explicit k-histogram `p` on `[0,1]^d` and sample access to an
//! unknown k-histogram `q`, [`identity::IdentityTester`] decides `p = q`
//! versus `|p - q|_1 >= eps` from far fewer samples than learning `q` takes.
//! The other modules hold the pieces it is built from, the lower-bound
//! ensembles used to exercise it, and an experiment harness.

pub mod adversarial;
pub mod covering;
pub mod discrete;
pub mod error;
pub mod harness;
pub mod histogram;
pub mod identity;
pub mod par;
pub mod random;
pub mod rng;
pub mod splitting;

pub use error::{Error, Result};
