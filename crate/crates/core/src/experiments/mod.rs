//! Operator-norm estimation and parameter sweeps.

pub mod opnorm;
pub mod sweep;

pub use opnorm::{
    apply_weighted_multiplier, estimate_operator_norm, rayleigh_quotient, weighted_energy, NormEstimate,
    PowerIterationOptions,
};
pub use sweep::{emit_csv, fit_slope, run_sweep, write_csv, ExperimentConfig, SweepOutcome, SweepRecord, COLUMNS};
