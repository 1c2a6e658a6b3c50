//! Byzantine-tolerant split-and-conquer learning of finite mixture models.
//!
//! The pipeline: fit a penalized-MLE mixture on each of `m` data chunks
//! ([`em`]), compute closed-form L2 distances between the transmitted
//! estimates ([`divergence`]), pick the centre of attention and filter out
//! estimates far from it, then reduce the pooled atoms back to a `K`
//! component mixture ([`aggregate`]). The [`harness`] module drives full
//! simulation studies with injected Byzantine failures ([`byzantine`]) and
//! scores them ([`metrics`]).

pub mod aggregate;
pub mod byzantine;
pub mod divergence;
pub mod em;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mixture;
pub mod numeric;
pub mod seed;

pub use error::{Error, Result};
