//! Matrix weights on the dyadic grid and their Muckenhoupt characteristics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dyadic::{
    haar_count, leaf_count, node_count, AverageTree, DyadicInterval, GridMatrixField, GridScalar,
};
use crate::error::{Error, Result};
use crate::matrix::{operator_norm, psd_power_from, sym_eigen, Matrix, SymMatrix, EPS_PD};
use crate::par::*;

/// A positive definite matrix weight with eagerly cached averages of `W`,
/// `W⁻¹` and their square roots at every node of the tree.
#[derive(Clone, Debug)]
pub struct MatrixWeight {
    field: GridMatrixField,
    inverse_field: GridMatrixField,
    avg: AverageTree,
    avg_inv: AverageTree,
    avg_sqrt: Vec<SymMatrix>,
    avg_inv_sqrt: Vec<SymMatrix>,
}

impl MatrixWeight {
    /// Checks every leaf is PD with `λ_min ≥ EPS_PD · max_grid λ_max`, then
    /// builds the caches.
    pub fn new(field: GridMatrixField) -> Result<Self> {
        let depth = field.depth();
        let dim = field.dim();
        let eigs: Vec<_> = (0..leaf_count(depth))
            .into_par_iter()
            .map(|k| sym_eigen(&field.leaf(k)))
            .collect();
        let top = eigs.iter().map(|e| e.max()).fold(0.0f64, f64::max);
        let threshold = EPS_PD * top;
        for e in &eigs {
            if e.min() < -crate::matrix::PSD_TOL * top {
                return Err(Error::NotPsd { min_eigenvalue: e.min() });
            }
            if e.min() < threshold || e.min() <= 0.0 {
                return Err(Error::SingularWeight { min_eigenvalue: e.min(), threshold });
            }
        }
        let inverse: Vec<f64> = eigs
            .par_iter()
            .map(|e| e.map(|l| 1.0 / l).into_matrix().into_vec())
            .collect::<Vec<_>>()
            .concat();
        let inverse_field = GridMatrixField::new(depth, dim, inverse)?;
        Self::from_parts(field, inverse_field)
    }

    fn from_parts(field: GridMatrixField, inverse_field: GridMatrixField) -> Result<Self> {
        let avg = field.average_tree();
        let avg_inv = inverse_field.average_tree();
        let avg_sqrt = sqrt_cache(&avg, field.dim())?;
        let avg_inv_sqrt = sqrt_cache(&avg_inv, field.dim())?;
        Ok(MatrixWeight { field, inverse_field, avg, avg_inv, avg_sqrt, avg_inv_sqrt })
    }

    pub fn identity(depth: u32, dim: usize) -> Self {
        let f = GridMatrixField::constant(depth, &SymMatrix::identity(dim));
        Self::from_parts(f.clone(), f).expect("identity weight is valid")
    }

    /// The weight `W⁻¹`.
    pub fn inverse(&self) -> MatrixWeight {
        MatrixWeight {
            field: self.inverse_field.clone(),
            inverse_field: self.field.clone(),
            avg: self.avg_inv.clone(),
            avg_inv: self.avg.clone(),
            avg_sqrt: self.avg_inv_sqrt.clone(),
            avg_inv_sqrt: self.avg_sqrt.clone(),
        }
    }

    pub fn depth(&self) -> u32 {
        self.field.depth()
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn field(&self) -> &GridMatrixField {
        &self.field
    }

    pub fn inverse_field(&self) -> &GridMatrixField {
        &self.inverse_field
    }

    /// Row-major `⟨W⟩_I`.
    pub fn average_slice(&self, i: DyadicInterval) -> &[f64] {
        self.avg.get(i)
    }

    pub fn average(&self, i: DyadicInterval) -> SymMatrix {
        SymMatrix::from_trusted(Matrix::from_vec(self.dim(), self.avg.get(i).to_vec()))
    }

    pub fn inverse_average(&self, i: DyadicInterval) -> SymMatrix {
        SymMatrix::from_trusted(Matrix::from_vec(self.dim(), self.avg_inv.get(i).to_vec()))
    }

    /// `⟨W⟩_I^{1/2}`.
    pub fn average_sqrt(&self, i: DyadicInterval) -> &SymMatrix {
        &self.avg_sqrt[i.node_id()]
    }

    /// `⟨W⁻¹⟩_I^{1/2}`.
    pub fn inverse_average_sqrt(&self, i: DyadicInterval) -> &SymMatrix {
        &self.avg_inv_sqrt[i.node_id()]
    }

    /// `⟨W⟩_I^{-1/2}`.
    pub fn average_inv_sqrt(&self, i: DyadicInterval) -> Result<SymMatrix> {
        psd_power_from(&sym_eigen(&self.average(i)), -0.5)
    }

    /// `c·W` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<MatrixWeight> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale {c} must be positive")));
        }
        let f = GridMatrixField::new(self.depth(), self.dim(), self.field.values().iter().map(|v| v * c).collect())?;
        MatrixWeight::new(f)
    }
}

fn sqrt_cache(tree: &AverageTree, dim: usize) -> Result<Vec<SymMatrix>> {
    (0..node_count(tree.depth()))
        .into_par_iter()
        .map(|id| {
            let m = SymMatrix::from_trusted(Matrix::from_vec(dim, tree.node(id).to_vec()));
            psd_power_from(&sym_eigen(&m), 0.5)
        })
        .collect()
}

/// `[W]_{A₂}` together with an interval attaining it.
pub fn a2_with_argmax(w: &MatrixWeight) -> (f64, DyadicInterval) {
    let vals: Vec<f64> = (0..node_count(w.depth()))
        .into_par_iter()
        .map(|id| {
            let i = DyadicInterval::from_node_id(id);
            let n = operator_norm(&w.average_sqrt(i).matmul(w.inverse_average_sqrt(i)));
            n * n
        })
        .collect();
    let (id, v) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    (v, DyadicInterval::from_node_id(id))
}

/// `[W]_{A₂} = max_I ‖⟨W⟩_I^{1/2}⟨W⁻¹⟩_I^{1/2}‖²` over every dyadic interval
/// of the grid, leaves included.
pub fn a2_characteristic(w: &MatrixWeight) -> f64 {
    a2_with_argmax(w).0
}

/// The scalar weight `W_e(x) = ⟨W(x)e, e⟩` for a unit vector `e`.
pub fn scalar_direction_weight(w: &MatrixWeight, e: &[f64]) -> Result<GridScalar> {
    if e.len() != w.dim() {
        return Err(Error::DimensionMismatch { expected: w.dim(), got: e.len() });
    }
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidParameter("direction is the zero vector".into()));
    }
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("direction has norm {norm}, expected 1")));
    }
    let dim = w.dim();
    let vals = w
        .field()
        .values()
        .chunks(dim * dim)
        .map(|m| crate::matrix::quad_form_slice(m, dim, e))
        .collect();
    GridScalar::new(w.depth(), vals)
}

/// Fujii–Wilson constant `sup_I ⟨M_I w⟩_I / ⟨w⟩_I` with the localized dyadic
/// maximal function `M_I w(x) = max_{x ∈ I' ⊆ I} ⟨w⟩_{I'}`.
///
/// One pass per leaf: walking up from the leaf, the running maximum of the
/// averages is exactly `M_I w(x)` for the current ancestor `I`.
pub fn fujii_wilson_constant(w: &GridScalar) -> Result<f64> {
    if let Some(bad) = w.values().iter().find(|v| **v <= 0.0) {
        return Err(Error::InvalidParameter(format!("weight value {bad} is not positive")));
    }
    let depth = w.depth();
    let avg = w.average_tree();
    let mut max_sum = vec![0.0; node_count(depth)];
    let leaf_base = haar_count(depth);
    for k in 0..leaf_count(depth) {
        let mut id = leaf_base + k;
        let mut running = avg.node(id)[0];
        max_sum[id] += running;
        while id > 0 {
            id = (id - 1) / 2;
            running = running.max(avg.node(id)[0]);
            max_sum[id] += running;
        }
    }
    let mut best = 1.0f64;
    for (id, s) in max_sum.iter().enumerate() {
        let i = DyadicInterval::from_node_id(id);
        let cells = (1u64 << (depth - i.level)) as f64;
        best = best.max(s / cells / avg.node(id)[0]);
    }
    Ok(best)
}

/// A sampled `[W]_{A∞}`: a lower bound of the supremum over all directions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AinftyEstimate {
    pub value: f64,
    pub directions_used: usize,
    pub best_direction: Vec<f64>,
    pub lower_bound: bool,
}

/// Levels whose average eigenvectors join the direction set.
const EIGEN_DIRECTION_LEVELS: u32 = 4;

/// `sup_e [W_e]_{A∞}` over a finite direction set: the coordinate axes, the
/// eigenvectors of `⟨W⟩_I` at the top levels, and quasi-uniform fill-in up to
/// `n_directions`.
pub fn ainfty_characteristic(w: &MatrixWeight, n_directions: usize, seed: u64) -> Result<AinftyEstimate> {
    let dim = w.dim();
    if n_directions < 2 * dim {
        return Err(Error::InvalidParameter(format!(
            "need at least {} directions for dimension {dim}, got {n_directions}",
            2 * dim
        )));
    }
    let dirs = direction_set(w, n_directions, seed);
    let values: Vec<f64> = dirs
        .par_iter()
        .map(|e| fujii_wilson_constant(&scalar_direction_weight(w, e)?))
        .collect::<Result<_>>()?;
    let (best, value) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    Ok(AinftyEstimate { value, directions_used: dirs.len(), best_direction: dirs[best].clone(), lower_bound: true })
}

fn direction_set(w: &MatrixWeight, n_directions: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = w.dim();
    let mut dirs: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            e
        })
        .collect();
    if dim > 1 {
        for level in 0..=w.depth().min(EIGEN_DIRECTION_LEVELS) {
            for i in crate::dyadic::level_intervals(level) {
                let eig = sym_eigen(&w.average(i));
                for k in 0..dim {
                    dirs.push(normalized(eig.vector(k)));
                }
            }
        }
    }
    let extra = n_directions.saturating_sub(dirs.len());
    dirs.extend(quasi_uniform_directions(dim, extra, seed));
    dirs
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Halton points with a seeded Cranley–Patterson shift, pushed through the
/// inverse normal CDF and normalized onto the sphere.
pub fn quasi_uniform_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let normal = Normal::standard();
    let mut out = Vec::with_capacity(count);
    let mut i = 1u64;
    while out.len() < count {
        let v: Vec<f64> = (0..dim)
            .map(|j| {
                let u = (radical_inverse(i, PRIMES[j % PRIMES.len()]) + shift[j]).fract();
                normal.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
            })
            .collect();
        i += 1;
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

/// Test-weight families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Identity,
    ScalarPower,
    BlockScalar,
    Rotating,
    RandomLogPd,
}

impl WeightKind {
    pub const ALL: [WeightKind; 5] = [
        WeightKind::Identity,
        WeightKind::ScalarPower,
        WeightKind::BlockScalar,
        WeightKind::Rotating,
        WeightKind::RandomLogPd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WeightKind::Identity => "identity",
            WeightKind::ScalarPower => "scalar_power",
            WeightKind::BlockScalar => "block_scalar",
            WeightKind::Rotating => "rotating",
            WeightKind::RandomLogPd => "random_log_pd",
        }
    }
}

impl std::str::FromStr for WeightKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        WeightKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown weight kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFamilySpec {
    pub kind: WeightKind,
    pub dim: usize,
    pub depth: u32,
    pub parameter: f64,
    #[serde(default)]
    pub seed: u64,
}

impl WeightFamilySpec {
    pub fn validate(&self) -> Result<()> {
        let t = self.parameter;
        if !(1..=8).contains(&self.dim) {
            return Err(Error::InvalidParameter(format!("dim {} outside 1..=8", self.dim)));
        }
        if self.depth > 24 {
            return Err(Error::InvalidParameter(format!("depth {} above 24", self.depth)));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("parameter {t} must be finite and ≥ 0")));
        }
        match self.kind {
            WeightKind::ScalarPower | WeightKind::BlockScalar if t >= 1.0 => {
                Err(Error::InvalidParameter(format!("{} needs parameter in [0, 1), got {t}", self.kind.name())))
            }
            WeightKind::Rotating if self.dim != 2 => {
                Err(Error::InvalidParameter(format!("rotating needs dim 2, got {}", self.dim)))
            }
            _ => Ok(()),
        }
    }
}

/// Lacunary block of leaf `k`: the `m` with the leaf inside `[2^{-m-1}, 2^{-m}]`,
/// and `m = depth` for the leaf touching 0.
fn lacunary_block(k: usize, depth: u32) -> u32 {
    if k == 0 {
        depth
    } else {
        depth - 1 - (usize::BITS - 1 - k.leading_zeros())
    }
}

/// Dyadic analogue of `|x|^a`: `2^{-m·a}` on the `m`-th lacunary block.
fn dyadic_power(k: usize, depth: u32, a: f64) -> f64 {
    (-(lacunary_block(k, depth) as f64) * a).exp2()
}

/// Builds the weight described by `spec`; deterministic in the spec.
pub fn generate_weight(spec: &WeightFamilySpec) -> Result<MatrixWeight> {
    spec.validate()?;
    let (depth, dim, t) = (spec.depth, spec.dim, spec.parameter);
    let n = leaf_count(depth);
    if spec.kind == WeightKind::Identity {
        return Ok(MatrixWeight::identity(depth, dim));
    }
    let leaves: Vec<SymMatrix> = match spec.kind {
        WeightKind::Identity => unreachable!(),
        WeightKind::ScalarPower => (0..n)
            .map(|k| {
                let mut d = vec![1.0; dim];
                d[0] = dyadic_power(k, depth, t);
                SymMatrix::from_diag(&d)
            })
            .collect(),
        WeightKind::BlockScalar => (0..n)
            .map(|k| {
                let d: Vec<f64> = (0..dim).map(|i| dyadic_power(k, depth, t * (dim - i) as f64 / dim as f64)).collect();
                SymMatrix::from_diag(&d)
            })
            .collect(),
        WeightKind::Rotating => (0..n)
            .map(|k| {
                let x = (k as f64 + 0.5) / n as f64;
                let theta = 2.0 * std::f64::consts::PI * t * x;
                let lambda = (t * (2.0 * std::f64::consts::PI * x).sin()).exp();
                let (s, c) = theta.sin_cos();
                let r = Matrix::from_rows(&[&[c, -s], &[s, c]]);
                r.matmul(&Matrix::from_diag(&[lambda, 1.0 / lambda])).matmul(&r.transpose()).symmetrized()
            })
            .collect(),
        WeightKind::RandomLogPd => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..n)
                .map(|_| {
                    let mut s = Matrix::zeros(dim);
                    for i in 0..dim {
                        for j in i..dim {
                            let v = if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 };
                            s.set(i, j, v);
                            s.set(j, i, v);
                        }
                    }
                    sym_eigen(&SymMatrix::from_trusted(s)).map(f64::exp)
                })
                .collect()
        }
    };
    MatrixWeight::new(GridMatrixField::from_leaves(depth, &leaves)?)
}
