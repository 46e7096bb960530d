//! Linear interpolation sweeps and the scalar observables derived from them.

mod barrier;
mod curve;
mod interp;
mod similarity;

pub use barrier::{
    accuracy_delta, all_barriers, barrier, barrier_entezari, barrier_frankle, barrier_local_min,
    barrier_normalized, read_barriers_csv, write_barriers_csv, BarrierResult, BarrierVariant,
    LOCAL_MIN_RULE,
};
pub use curve::{
    sweep, uniform_grid, validate_grid, BnPolicy, CurveRow, InterpolationCurve, SetCurve,
};
pub use interp::{interpolate, interpolate_checkpoint};
pub use similarity::{
    cosine_angle, manhattan, noise_scale, polar_trace, similarity, PolarTrace, SimilarityReport,
};
