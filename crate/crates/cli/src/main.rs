use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use matw::dyadic::haar_count;
use matw::experiments::{emit_csv, estimate_operator_norm, rayleigh_quotient, run_sweep, write_csv};
use matw::experiments::{ExperimentConfig, PowerIterationOptions};
use matw::io::{read_json, write_json, InstanceFile, WeightFile, WeightMetadata};
use matw::matrix::EPS_PD;
use matw::sparse::{certify, StoppingConfig};
use matw::square::{sw_norm_squared, sw_sign_enumeration, ENUMERATION_CAP};
use matw::weights::{a2_with_argmax, ainfty_characteristic, generate_weight, WeightFamilySpec, WeightKind};
use matw::{GridVector, MatrixWeight};

const SEED_VAR: &str = "MATW_SEED";

/// Relative tolerance for the sign-enumeration cross-check.
const ENUMERATION_TOL: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "matw", version, about = "Matrix-weighted dyadic square functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a weight from one of the built-in families.
    Genweight {
        #[arg(long)]
        kind: WeightKind,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        depth: u32,
        #[arg(long, default_value_t = 0.0)]
        param: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dyadic matrix A2 characteristic.
    A2 {
        #[arg(long)]
        weight: PathBuf,
    },
    /// Sampled A-infinity characteristic (a lower bound).
    Ainfty {
        #[arg(long)]
        weight: PathBuf,
        #[arg(long, default_value_t = 64)]
        directions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Weighted square function norm of one function.
    Swnorm {
        #[arg(long)]
        weight: PathBuf,
        #[arg(long = "f")]
        function: PathBuf,
    },
    /// Operator norm of S_W from L2(W) to L2 (restarted Lanczos).
    Opnorm {
        #[arg(long)]
        weight: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-10)]
        rel_tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the maximizing function here.
        #[arg(long)]
        witness: Option<PathBuf>,
    },
    /// Build and verify the sparse family.
    Sparse {
        /// Instance file holding weight, function and optional config.
        #[arg(long, conflicts_with_all = ["weight", "function"])]
        instance: Option<PathBuf>,
        #[arg(long, requires = "function")]
        weight: Option<PathBuf>,
        #[arg(long = "f", requires = "weight")]
        function: Option<PathBuf>,
        #[arg(long)]
        c1: Option<f64>,
        #[arg(long)]
        c2: Option<f64>,
        /// Certificate output; printed to stdout when absent.
        #[arg(long)]
        certify: Option<PathBuf>,
    },
    /// Parameter sweep writing a CSV table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output path in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("{SEED_VAR}={s:?} is not a u64"))?)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{SEED_VAR}: {e}"),
    }
}

fn load_weight(path: &Path) -> Result<MatrixWeight> {
    let wf: WeightFile = read_json(path).with_context(|| format!("reading weight {}", path.display()))?;
    Ok(wf.to_weight()?)
}

fn load_function(path: &Path) -> Result<GridVector> {
    read_json(path).with_context(|| format!("reading function {}", path.display()))
}

fn print(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Runs one subcommand; `Ok(false)` means a verification failed.
fn run(cli: Cli) -> Result<bool> {
    let seed_env = seed_override()?;
    match cli.command {
        Command::Genweight { kind, dim, depth, param, seed, out } => {
            let seed = seed_env.unwrap_or(seed);
            let spec = WeightFamilySpec { kind, dim, depth, parameter: param, seed };
            let w = generate_weight(&spec)?;
            let file = WeightFile {
                field: w.field().clone(),
                metadata: Some(WeightMetadata { kind, parameter: param, seed, eps_pd: EPS_PD }),
            };
            write_json(&out, &file)?;
            print(&json!({ "out": out, "kind": kind, "dim": dim, "depth": depth, "parameter": param, "seed": seed }))?;
            Ok(true)
        }
        Command::A2 { weight } => {
            let w = load_weight(&weight)?;
            let (a2, at) = a2_with_argmax(&w);
            print(&json!({ "a2": a2, "argmax": at }))?;
            Ok(true)
        }
        Command::Ainfty { weight, directions, seed } => {
            let w = load_weight(&weight)?;
            let est = ainfty_characteristic(&w, directions, seed_env.unwrap_or(seed))?;
            print(&serde_json::to_value(&est)?)?;
            Ok(true)
        }
        Command::Swnorm { weight, function } => {
            let w = load_weight(&weight)?;
            let f = load_function(&function)?;
            let norm = sw_norm_squared(&w, &f)?;
            let mut ok = true;
            let enumeration = if haar_count(f.depth()) <= ENUMERATION_CAP {
                let e = sw_sign_enumeration(&w, &f)?;
                let agree = (e - norm.total).abs() <= ENUMERATION_TOL * norm.total.abs().max(f64::MIN_POSITIVE);
                ok &= agree;
                Some(json!({ "value": e, "agrees": agree }))
            } else {
                None
            };
            print(&json!({
                "sw_norm_sq": norm.total,
                "sw_norm": norm.total.sqrt(),
                "intervals": norm.terms.len(),
                "sign_enumeration": enumeration,
                "ok": ok,
            }))?;
            Ok(ok)
        }
        Command::Opnorm { weight, max_iters, rel_tol, seed, witness } => {
            let w = load_weight(&weight)?;
            let opts = PowerIterationOptions { max_iters, rel_tol, seed: seed_env.unwrap_or(seed), ..Default::default() };
            let est = estimate_operator_norm(&w, &opts)?;
            let lower = if est.value > 0.0 { rayleigh_quotient(&w, &est.witness)? } else { 0.0 };
            if let Some(path) = witness {
                write_json(&path, &est.witness)?;
            }
            print(&json!({
                "norm_sq": est.value,
                "norm": est.value.sqrt(),
                "rayleigh_lower": lower,
                "iters": est.iters,
                "converged": est.converged,
                "seed": opts.seed,
            }))?;
            Ok(est.converged)
        }
        Command::Sparse { instance, weight, function, c1, c2, certify: out } => {
            let (w, f, base) = match (instance, weight, function) {
                (Some(path), _, _) => {
                    let inst: InstanceFile = read_json(&path).with_context(|| format!("reading {}", path.display()))?;
                    (inst.weight.to_weight()?, inst.function, inst.config)
                }
                (None, Some(wp), Some(fp)) => (load_weight(&wp)?, load_function(&fp)?, None),
                _ => bail!("give --instance or both --weight and --f"),
            };
            let mut cfg = base.unwrap_or_else(|| StoppingConfig::defaults_for_dim(w.dim()));
            if let Some(c1) = c1 {
                cfg.c1 = c1;
            }
            if let Some(c2) = c2 {
                cfg.c2 = c2;
            }
            cfg.validate()?;
            let cert = certify(&w, &f, &cfg)?;
            match out {
                Some(path) => {
                    write_json(&path, &cert)?;
                    print(&json!({
                        "certificate": path,
                        "family_size": cert.family.len(),
                        "generations": cert.family.generations,
                        "domination": { "lhs": cert.domination.lhs, "rhs": cert.domination.rhs, "ok": cert.domination.ok },
                        "min_e_ratio": cert.sparseness.min_ratio,
                        "sparseness_ok": cert.sparseness.ok,
                        "type1_trace_ok": cert.type1_trace.ok,
                        "type2_weak_ok": cert.type2_weak.ok,
                        "maximality_ok": cert.maximality.ok,
                        "all_ok": cert.all_ok,
                    }))?;
                }
                None => print(&serde_json::to_value(&cert)?)?,
            }
            Ok(cert.all_ok)
        }
        Command::Sweep { config, out } => {
            let mut cfg: ExperimentConfig =
                read_json(&config).with_context(|| format!("reading config {}", config.display()))?;
            if let Some(seed) = seed_env {
                cfg = cfg.with_seeds(vec![seed]);
            }
            let outcome = run_sweep(&cfg)?;
            match out.or_else(|| cfg.output.clone()) {
                Some(path) => {
                    emit_csv(&outcome, &cfg, &path)?;
                    print(&json!({
                        "csv": path,
                        "records": outcome.records.len(),
                        "slope": outcome.slope,
                        "mixed_ratio_spread": outcome.mixed_ratio_spread,
                        "flagged": outcome.flagged.len(),
                        "all_ok": outcome.all_ok,
                    }))?;
                }
                None => write_csv(&outcome, &cfg, std::io::stdout().lock())?,
            }
            Ok(outcome.all_ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("matw: verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("matw: {e:#}");
            ExitCode::from(2)
        }
    }
}
