//! Parameter sweeps over a weight family, one record per `(t, seed)`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::opnorm::{estimate_operator_norm, rayleigh_quotient, weighted_energy, PowerIterationOptions};
use crate::error::{Error, Result};
use crate::par::*;
use crate::sparse::{build_sparse_family, StoppingConfig, ROUNDOFF};
use crate::square::s3w_norm_squared;
use crate::weights::{a2_characteristic, ainfty_characteristic, generate_weight, WeightFamilySpec, WeightKind};

fn default_directions() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: WeightKind,
    pub grid: Vec<f64>,
    pub depth: u32,
    pub dim: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub power_iteration: PowerIterationOptions,
    #[serde(default = "default_directions")]
    pub n_directions: usize,
    /// Stopping constants for the witness family; dimension defaults if absent.
    #[serde(default)]
    pub stopping: Option<StoppingConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidParameter("parameter grid is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("seed list is empty".into()));
        }
        let tol = self.power_iteration.rel_tol;
        if !(tol > 0.0 && tol <= 1e-3) {
            return Err(Error::InvalidParameter(format!("rel_tol {tol} outside (0, 1e-3]")));
        }
        if self.n_directions < 2 * self.dim {
            return Err(Error::InvalidParameter(format!("n_directions must be at least {}", 2 * self.dim)));
        }
        if let Some(s) = &self.stopping {
            s.validate()?;
        }
        Ok(())
    }

    pub fn stopping_config(&self) -> StoppingConfig {
        self.stopping.clone().unwrap_or_else(|| StoppingConfig::defaults_for_dim(self.dim))
    }

    /// Replaces the seed list, e.g. from an environment override.
    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// One row of a sweep. Numeric fields are empty when the record failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub t: f64,
    pub seed: u64,
    pub a2: Option<f64>,
    /// Sampled `[W⁻¹]_{A∞}`, a lower bound.
    pub ainfty_inv: Option<f64>,
    pub ainfty_directions: Option<usize>,
    pub sw_norm_sq_est: Option<f64>,
    pub sw_norm_sq_lower: Option<f64>,
    /// `C₁²C₂ · S₃,W(witness)² / P(witness)`.
    pub domination_rhs: Option<f64>,
    pub domination_ok: Option<bool>,
    /// `‖S_W‖ / ([W]_{A₂}^{1/2} [W⁻¹]_{A∞}^{1/2})`.
    pub ratio_mixed: Option<f64>,
    /// `‖S_W‖ / [W]_{A₂}`.
    pub ratio_a2: Option<f64>,
    pub ainfty_over_a2: Option<f64>,
    pub iters: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

pub const COLUMNS: [&str; 15] = [
    "t",
    "seed",
    "a2",
    "ainfty_inv",
    "ainfty_directions",
    "sw_norm_sq_est",
    "sw_norm_sq_lower",
    "domination_rhs",
    "domination_ok",
    "ratio_mixed",
    "ratio_a2",
    "ainfty_over_a2",
    "iters",
    "converged",
    "error",
];

impl SweepRecord {
    fn failed(t: f64, seed: u64, err: Error) -> Self {
        SweepRecord {
            t,
            seed,
            a2: None,
            ainfty_inv: None,
            ainfty_directions: None,
            sw_norm_sq_est: None,
            sw_norm_sq_lower: None,
            domination_rhs: None,
            domination_ok: None,
            ratio_mixed: None,
            ratio_a2: None,
            ainfty_over_a2: None,
            iters: None,
            converged: None,
            error: Some(err.to_string()),
        }
    }

    /// Verified: no error, witness chain holds, iteration converged.
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.domination_ok == Some(true) && self.converged == Some(true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    /// Least-squares slope of `log ‖S_W‖` against `log [W]_{A₂}`.
    pub slope: Option<f64>,
    /// `max / min` of `ratio_mixed` over the records.
    pub mixed_ratio_spread: Option<f64>,
    /// Records with `[W⁻¹]_{A∞} / [W]_{A₂} > 10 d`.
    pub flagged: Vec<(f64, u64)>,
    pub all_ok: bool,
}

fn run_record(cfg: &ExperimentConfig, t: f64, seed: u64) -> Result<SweepRecord> {
    let spec = WeightFamilySpec { kind: cfg.kind, dim: cfg.dim, depth: cfg.depth, parameter: t, seed };
    let w = generate_weight(&spec)?;
    let a2 = a2_characteristic(&w);
    let ainfty = ainfty_characteristic(&w.inverse(), cfg.n_directions, seed)?;
    let opts = PowerIterationOptions { seed, ..cfg.power_iteration };
    let est = estimate_operator_norm(&w, &opts)?;
    let lower = rayleigh_quotient(&w, &est.witness)?;
    let stop = cfg.stopping_config();
    let family = build_sparse_family(&w, &est.witness, &stop)?;
    let p = weighted_energy(&w, &est.witness);
    let rhs = stop.domination_constant() * s3w_norm_squared(&w, &est.witness, &family.intervals())? / p;
    let norm = est.value.sqrt();
    Ok(SweepRecord {
        t,
        seed,
        a2: Some(a2),
        ainfty_inv: Some(ainfty.value),
        ainfty_directions: Some(ainfty.directions_used),
        sw_norm_sq_est: Some(est.value),
        sw_norm_sq_lower: Some(lower),
        domination_rhs: Some(rhs),
        domination_ok: Some(lower <= rhs * (1.0 + ROUNDOFF) && lower <= est.value * (1.0 + opts.rel_tol)),
        ratio_mixed: Some(norm / (a2.sqrt() * ainfty.value.sqrt())),
        ratio_a2: Some(norm / a2),
        ainfty_over_a2: Some(ainfty.value / a2),
        iters: Some(est.iters),
        converged: Some(est.converged),
        error: None,
    })
}

/// Least-squares slope of `y` on `x`; `None` when `x` has no spread.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 1e-20).then(|| sxy / sxx)
}

/// Runs every `(t, seed)` pair; failures land in the `error` column.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let mut jobs: Vec<(f64, u64)> = cfg.grid.iter().flat_map(|&t| cfg.seeds.iter().map(move |&s| (t, s))).collect();
    jobs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let records: Vec<SweepRecord> = jobs
        .into_par_iter()
        .map(|(t, seed)| run_record(cfg, t, seed).unwrap_or_else(|e| SweepRecord::failed(t, seed, e)))
        .collect();
    let good: Vec<&SweepRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let points: Vec<(f64, f64)> = good
        .iter()
        .filter_map(|r| match (r.a2, r.sw_norm_sq_est) {
            (Some(a), Some(e)) if a > 0.0 && e > 0.0 => Some((a.ln(), 0.5 * e.ln())),
            _ => None,
        })
        .collect();
    let ratios: Vec<f64> = good.iter().filter_map(|r| r.ratio_mixed).filter(|r| r.is_finite() && *r > 0.0).collect();
    let mixed_ratio_spread = (!ratios.is_empty()).then(|| {
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    });
    let flag_level = 10.0 * cfg.dim as f64;
    let flagged = good
        .iter()
        .filter(|r| r.ainfty_over_a2.is_some_and(|q| q > flag_level))
        .map(|r| (r.t, r.seed))
        .collect();
    let all_ok = records.iter().all(SweepRecord::ok);
    Ok(SweepOutcome { slope: fit_slope(&points), mixed_ratio_spread, flagged, all_ok, records })
}

fn opt_display(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

/// Header, one row per record, then `#`-prefixed metadata lines.
pub fn write_csv<W: Write>(outcome: &SweepOutcome, cfg: &ExperimentConfig, out: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(COLUMNS)?;
    for r in &outcome.records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    let mut out = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    writeln!(out, "# slope_log_norm_vs_log_a2={}", opt_display(outcome.slope))?;
    writeln!(out, "# mixed_ratio_max_over_min={}", opt_display(outcome.mixed_ratio_spread))?;
    writeln!(
        out,
        "# ainfty_inv=sampled lower bound over coordinate, average-eigenvector and quasi-uniform directions (n_directions={})",
        cfg.n_directions
    )?;
    writeln!(out, "# ratio_mixed=uses sampled ainfty_inv; ratio_a2=uses the fallback [W^-1]_Ainf <= c [W]_A2")?;
    writeln!(out, "# flagged_ainfty_over_a2_gt_10d={}", outcome.flagged.len())?;
    writeln!(out, "# config_sha256={}", cfg.hash())?;
    writeln!(out, "# version={}", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

pub fn emit_csv(outcome: &SweepOutcome, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(file);
    write_csv(outcome, cfg, &mut buf)?;
    buf.flush()?;
    Ok(())
}
