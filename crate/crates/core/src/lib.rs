//! Truth discovery over conflicting categorical claims.
//!
//! Sources are clustered into latent dependency groups under a
//! stick-breaking prior; each group carries a general reliability and a
//! per-object reliability, and the true value of every object is inferred
//! jointly with them by mean-field coordinate ascent.

// Index loops mirror the update formulas; `!(x > 0.0)` deliberately
// rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod claims;
pub mod cli;
pub mod error;
pub mod inference;
pub mod priors;
pub mod reporting;
pub mod sampler;
pub mod selection;
pub mod special;

pub use claims::{parse_claims, Claim, ClaimFormat, ClaimSet, ClaimSetBuilder, ObjectDomain};
pub use error::{Error, Result};
pub use inference::{fit, FitOptions, FitResult, VariationalState};
pub use priors::{pair_coassignment_probability, Hyperparams, UnreliableMode};
