//! Linear mode connectivity under data shift: a small deterministic network
//! engine, shifted dataset partitions, fixed-noise paired SGD training,
//! interpolation sweeps with barrier/similarity observables, and ensemble
//! diversity metrics.
//!
//! Data-parallel work (evaluation chunks, interpolation grid points, paired
//! runs, ensemble members) goes through [`Exec`]. With the default `parallel`
//! feature it runs on rayon; without it everything is sequential. Results are
//! identical either way.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod nn;
pub mod par;
pub mod training;

pub use error::{LmcError, Result};
pub use par::Exec;
