//! Zigzag process sampler.
//!
//! * [`model`]: velocities, states, the [`Potential`] and [`ExcessRate`]
//!   interfaces and the switching-rate algebra.
//! * [`targets`]: Gaussian, ridge, max and power-law potentials.
//! * [`simulate`]: skeleton generation by exact inversion or Poisson thinning.
//! * [`control`]: control sequences, admissibility and constructive
//!   reachability for Gaussian targets.
//! * [`diagnostics`]: generator, Lyapunov drift and growth probes.
//! * [`estimate`]: ergodic averages and batch means.
//! * [`format`]: skeleton CSV and control JSON wire formats.

// `!(a < b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod control;
pub mod diagnostics;
pub mod estimate;
pub mod format;
pub mod model;
pub mod simulate;
pub mod targets;

pub use control::{
    apply_control, build_reach_control, build_reversal_control, check_admissible, escalate_to_flippable, flippable_set,
    reverse_control, AdmissibilityReport, ControlError, ControlSequence, FlipHistory, ReachPlan,
};
pub use diagnostics::{
    drift_ratio, drift_scan, generator_apply, growth_probe, lyapunov_value, stationarity_residual, DiagnosticsError,
    DriftReport, GrowthReport, LyapunovParams, QuadSpec, TestFunction,
};
pub use estimate::{batch_means, ergodic_average, BatchMeansResult, EstimateError};
pub use format::{read_skeleton_csv, write_skeleton_csv, FormatError};
pub use model::{
    canonical_rate, flip, flip_seq, log_density, rate_vector, unnormalized_density, ConstantExcess, ExcessRate,
    ModelError, Potential, Skeleton, SkeletonEvent, State, Velocity,
};
pub use simulate::{simulate_skeleton, EventDraw, Method, SimConfig, SimError};
pub use targets::{
    GaussianTarget, MaxRegion, MaxTarget, PowerLawTarget, RidgeTarget, Target, TargetConfig, TargetError,
};
