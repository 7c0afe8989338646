//! `‖S_W‖²_{L²(W) → L²}` as the top generalized eigenvalue of the pair
//! `(Q, P)`, `Q(f) = ‖S_W f‖²`, `P(f) = ∫⟨W f, f⟩`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{haar_count, leaf_count, DyadicInterval, GridVector};
use crate::error::{Error, Result};
use crate::matrix::{mul_vec_slice, quad_form_slice, sym_eigen, Matrix, SymMatrix};
use crate::square::{analyze, HaarCoefficients};
use crate::weights::MatrixWeight;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationOptions {
    /// Budget of operator applications.
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Seed of the start vector.
    #[serde(default)]
    pub seed: u64,
    /// Krylov block length between restarts.
    #[serde(default = "default_krylov")]
    pub krylov_dim: usize,
}

fn default_krylov() -> usize {
    32
}

impl Default for PowerIterationOptions {
    fn default() -> Self {
        PowerIterationOptions { max_iters: 20_000, rel_tol: 1e-10, seed: 0, krylov_dim: default_krylov() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    /// `Q(witness) / P(witness)`, a certified lower bound.
    pub value: f64,
    /// P-normalized maximizer candidate.
    pub witness: GridVector,
    pub iters: usize,
    pub converged: bool,
}

/// `P(f) = ∫ ⟨W(x) f(x), f(x)⟩ dx`.
pub fn weighted_energy(w: &MatrixWeight, f: &GridVector) -> f64 {
    let dim = w.dim();
    let s: f64 = f
        .leaves()
        .enumerate()
        .map(|(k, v)| quad_form_slice(w.field().leaf_slice(k), dim, v))
        .sum();
    s / leaf_count(f.depth()) as f64
}

/// `Q(f) / P(f)`.
pub fn rayleigh_quotient(w: &MatrixWeight, f: &GridVector) -> Result<f64> {
    let q = crate::square::sw_norm_squared(w, f)?.total;
    let p = weighted_energy(w, f);
    if p == 0.0 {
        return Err(Error::InvalidParameter("zero function has no Rayleigh quotient".into()));
    }
    Ok(q / p)
}

/// Riesz representer of `Q(f, ·)`: `Σ_I ⟨W⟩_I (f, h_I) h_I`.
pub fn apply_weighted_multiplier(w: &MatrixWeight, hc: &HaarCoefficients) -> GridVector {
    let dim = hc.dim();
    let mut scaled = vec![0.0; haar_count(hc.depth()) * dim];
    for (id, out) in scaled.chunks_mut(dim).enumerate() {
        mul_vec_slice(w.average_slice(DyadicInterval::from_node_id(id)), dim, hc.node(id), out);
    }
    HaarCoefficients::new(hc.depth(), dim, vec![0.0; dim], scaled)
        .expect("shapes agree")
        .synthesize()
}

fn start_vector(depth: u32, dim: usize, seed: u64) -> GridVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..leaf_count(depth) * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    GridVector::new(depth, dim, vals).expect("shape").without_mean()
}

/// `M f = W⁻¹ A f`, self-adjoint in the `P` inner product.
fn apply_m(w: &MatrixWeight, f: &GridVector) -> GridVector {
    let dim = w.dim();
    let mut g = apply_weighted_multiplier(w, &analyze(f));
    let mut buf = vec![0.0; dim];
    for (k, v) in g.values_mut().chunks_mut(dim).enumerate() {
        mul_vec_slice(w.inverse_field().leaf_slice(k), dim, v, &mut buf);
        v.copy_from_slice(&buf);
    }
    g
}

/// `P f` as a flat vector, so that `⟨f, g⟩_P` becomes a plain dot product.
fn p_image(w: &MatrixWeight, f: &GridVector) -> Vec<f64> {
    let dim = w.dim();
    let cell = 1.0 / leaf_count(f.depth()) as f64;
    let mut out = vec![0.0; f.values().len()];
    for (k, (v, o)) in f.leaves().zip(out.chunks_mut(dim)).enumerate() {
        mul_vec_slice(w.field().leaf_slice(k), dim, v, o);
        o.iter_mut().for_each(|x| *x *= cell);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(u, v)| *u += a * v);
}

/// Top eigenpair of the symmetric tridiagonal matrix with the given diagonal
/// and off-diagonal.
fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let m = alpha.len();
    let mut t = Matrix::zeros(m);
    for (i, &a) in alpha.iter().enumerate() {
        t.set(i, i, a);
    }
    for (i, &b) in beta.iter().enumerate().take(m - 1) {
        t.set(i, i + 1, b);
        t.set(i + 1, i, b);
    }
    let eig = sym_eigen(&SymMatrix::new(t).expect("tridiagonal is symmetric"));
    (eig.max(), eig.vector(0))
}

/// Top generalized eigenvalue of `(Q, P)` by restarted Lanczos on `M` in the
/// `P` inner product, with full reorthogonalization.
///
/// Each cycle grows a Krylov basis of length `krylov_dim` from the current
/// vector and restarts from the top Ritz vector. It stops once the Ritz
/// residual `‖M v − θ v‖_P` falls below `rel_tol · θ`. The returned value is
/// recomputed as `Q(witness) / P(witness)`.
pub fn estimate_operator_norm(w: &MatrixWeight, opts: &PowerIterationOptions) -> Result<NormEstimate> {
    if !(opts.rel_tol > 0.0 && opts.rel_tol <= 1e-3) {
        return Err(Error::InvalidParameter(format!("rel_tol {} outside (0, 1e-3]", opts.rel_tol)));
    }
    if opts.krylov_dim < 2 {
        return Err(Error::InvalidParameter("krylov_dim must be at least 2".into()));
    }
    let (depth, dim) = (w.depth(), w.dim());
    let mut v = start_vector(depth, dim, opts.seed);
    if depth == 0 || v.values().iter().all(|x| *x == 0.0) {
        // No Haar intervals: Q vanishes identically.
        let witness = GridVector::constant(depth, &vec![1.0; dim]);
        let p = weighted_energy(w, &witness);
        return Ok(NormEstimate { value: 0.0, witness: witness.scaled(1.0 / p.sqrt()), iters: 0, converged: true });
    }
    let n = v.values().len();
    let m_max = opts.krylov_dim.min(n);
    v = v.scaled(1.0 / weighted_energy(w, &v).sqrt());
    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iters {
        let mut basis: Vec<Vec<f64>> = vec![v.values().to_vec()];
        let mut images: Vec<Vec<f64>> = vec![p_image(w, &v)];
        let (mut alpha, mut beta) = (Vec::new(), Vec::new());
        loop {
            let j = basis.len() - 1;
            let cur = GridVector::new(depth, dim, basis[j].clone())?;
            let mut u = apply_m(w, &cur).into_values();
            iters += 1;
            let a = dot(&u, &images[j]);
            alpha.push(a);
            // two passes of Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for (b, pb) in basis.iter().zip(&images) {
                    let c = dot(&u, pb);
                    axpy(&mut u, -c, b);
                }
            }
            let ug = GridVector::new(depth, dim, u)?;
            let pu = p_image(w, &ug);
            let b = dot(ug.values(), &pu).max(0.0).sqrt();
            beta.push(b);
            let breakdown = b <= 1e-14 * a.abs().max(f64::MIN_POSITIVE);
            if breakdown || basis.len() == m_max || iters >= opts.max_iters {
                break;
            }
            basis.push(ug.values().iter().map(|x| x / b).collect());
            images.push(pu.iter().map(|x| x / b).collect());
        }
        let (theta, s) = tridiagonal_top(&alpha, &beta);
        let mut ritz = vec![0.0; n];
        for (c, b) in s.iter().zip(&basis) {
            axpy(&mut ritz, *c, b);
        }
        let ritz = GridVector::new(depth, dim, ritz)?;
        v = ritz.scaled(1.0 / weighted_energy(w, &ritz).sqrt());
        let residual = beta.last().copied().unwrap_or(0.0) * s.last().copied().unwrap_or(0.0).abs();
        if residual <= opts.rel_tol * theta {
            converged = true;
            break;
        }
    }
    let value = rayleigh_quotient(w, &v)?;
    Ok(NormEstimate { value, witness: v, iters, converged })
}
