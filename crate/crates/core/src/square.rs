//! Haar analysis of vector functions, martingale transforms and the
//! (weighted) dyadic square functions.
//!
//! Haar functions are L²-normalized, `h_I = |I|^{-1/2}(χ_{I₊} − χ_{I₋})` with
//! `I₊` the left half.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{haar_count, leaf_count, DyadicInterval, GridScalar, GridVector};
use crate::error::{Error, Result};
use crate::matrix::{mul_vec_slice, psd_power_from, quad_form_slice, sym_eigen};
use crate::par::*;
use crate::weights::MatrixWeight;

/// `(f, h_I)` for every Haar interval, in node-id order, plus `⟨f⟩_J`.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarCoefficients {
    depth: u32,
    dim: usize,
    mean: Vec<f64>,
    coeffs: Vec<f64>,
}

impl HaarCoefficients {
    pub fn new(depth: u32, dim: usize, mean: Vec<f64>, coeffs: Vec<f64>) -> Result<Self> {
        if mean.len() != dim || coeffs.len() != haar_count(depth) * dim {
            return Err(Error::Shape("haar coefficient arrays do not match depth/dim".into()));
        }
        Ok(HaarCoefficients { depth, dim, mean, coeffs })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `(f, h_I)`; `I` must be above leaf level.
    pub fn coeff(&self, i: DyadicInterval) -> &[f64] {
        self.node(i.node_id())
    }

    pub fn node(&self, id: usize) -> &[f64] {
        &self.coeffs[id * self.dim..(id + 1) * self.dim]
    }

    pub fn all(&self) -> &[f64] {
        &self.coeffs
    }

    /// `Σ_I ‖(f, h_I)‖²`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// `mean + Σ_I c_I h_I`, evaluated top-down.
    pub fn synthesize(&self) -> GridVector {
        synthesize_with(self.depth, self.dim, &self.mean, |id| self.node(id).to_vec())
    }
}

/// Synthesis from per-node coefficient vectors produced by `coeff(id)`.
fn synthesize_with(depth: u32, dim: usize, mean: &[f64], coeff: impl Fn(usize) -> Vec<f64>) -> GridVector {
    let mut cur = mean.to_vec();
    for level in 0..depth {
        let width = 1usize << level;
        let amp = (level as f64 / 2.0).exp2();
        let mut next = vec![0.0; 2 * width * dim];
        for j in 0..width {
            let c = coeff(width - 1 + j);
            let parent = &cur[j * dim..(j + 1) * dim];
            let (l, r) = next[2 * j * dim..(2 * j + 2) * dim].split_at_mut(dim);
            for k in 0..dim {
                let h = c[k] * amp;
                l[k] = parent[k] + h;
                r[k] = parent[k] - h;
            }
        }
        cur = next;
    }
    GridVector::new(depth, dim, cur).expect("synthesis preserves shape")
}

/// Haar coefficients `(f, h_I) = (⟨f⟩_{I₊} − ⟨f⟩_{I₋})·|I|^{1/2}/2`.
pub fn analyze(f: &GridVector) -> HaarCoefficients {
    let (depth, dim) = (f.depth(), f.dim());
    let avg = f.average_tree();
    let mut coeffs = vec![0.0; haar_count(depth) * dim];
    for (id, c) in coeffs.chunks_mut(dim).enumerate() {
        let i = DyadicInterval::from_node_id(id);
        let half_root = 0.5 * (-(i.level as f64) / 2.0).exp2();
        let plus = avg.get(i.plus_half());
        let minus = avg.get(i.minus_half());
        for k in 0..dim {
            c[k] = (plus[k] - minus[k]) * half_root;
        }
    }
    HaarCoefficients { depth, dim, mean: avg.get(DyadicInterval::ROOT).to_vec(), coeffs }
}

/// Signs `σ_I = ±1` for every Haar interval, breadth-first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignPattern {
    depth: u32,
    signs: Vec<i8>,
}

impl SignPattern {
    pub fn new(depth: u32, signs: Vec<i8>) -> Result<Self> {
        if signs.len() != haar_count(depth) {
            return Err(Error::IncompleteSignPattern { expected: haar_count(depth), got: signs.len() });
        }
        if signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::InvalidParameter("signs must be ±1".into()));
        }
        Ok(SignPattern { depth, signs })
    }

    pub fn constant(depth: u32, sign: i8) -> Self {
        SignPattern { depth, signs: vec![sign.signum(); haar_count(depth)] }
    }

    /// Pattern number `bits`: interval `k` (breadth-first) gets `-1` when bit
    /// `k` is set.
    pub fn from_bits(depth: u32, bits: u64) -> Self {
        let signs = (0..haar_count(depth)).map(|k| if bits >> k & 1 == 1 { -1 } else { 1 }).collect();
        SignPattern { depth, signs }
    }

    /// Sample `sample` of the stream keyed by `seed`: one bit per interval
    /// from ChaCha8 with `seed` as key and `sample` as stream id, so every
    /// sample is reproducible on its own.
    pub fn random(depth: u32, seed: u64, sample: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(sample);
        let n = haar_count(depth);
        let mut signs = Vec::with_capacity(n);
        while signs.len() < n {
            let word = rng.next_u64();
            for b in 0..64.min(n - signs.len()) {
                signs.push(if word >> b & 1 == 1 { -1 } else { 1 });
            }
        }
        SignPattern { depth, signs }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn sign(&self, i: DyadicInterval) -> i8 {
        self.signs[i.node_id()]
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }
}

/// `T_σ f = Σ_I σ_I (f, h_I) h_I` (no mean term).
pub fn martingale_transform(f: &GridVector, sigma: &SignPattern) -> Result<GridVector> {
    if sigma.depth != f.depth() || sigma.signs.len() != haar_count(f.depth()) {
        return Err(Error::IncompleteSignPattern { expected: haar_count(f.depth()), got: sigma.signs.len() });
    }
    let hc = analyze(f);
    Ok(transform_coeffs(&hc, sigma))
}

fn transform_coeffs(hc: &HaarCoefficients, sigma: &SignPattern) -> GridVector {
    let zero = vec![0.0; hc.dim];
    synthesize_with(hc.depth, hc.dim, &zero, |id| {
        let s = sigma.signs[id] as f64;
        hc.node(id).iter().map(|c| s * c).collect()
    })
}

/// Pointwise `S²g(x) = Σ_{I ∋ x} ‖(g, h_I)‖² / |I|`.
pub fn unweighted_square_function(g: &GridVector) -> GridScalar {
    let hc = analyze(g);
    let depth = g.depth();
    let mut cur = vec![0.0];
    for level in 0..depth {
        let width = 1usize << level;
        let inv_measure = (level as f64).exp2();
        let mut next = vec![0.0; 2 * width];
        for j in 0..width {
            let c = hc.node(width - 1 + j);
            let v = cur[j] + c.iter().map(|x| x * x).sum::<f64>() * inv_measure;
            next[2 * j] = v;
            next[2 * j + 1] = v;
        }
        cur = next;
    }
    GridScalar::new(depth, cur).expect("square function shape")
}

/// Pointwise `Sg(x)`, the root of [`unweighted_square_function`].
pub fn square_function(g: &GridVector) -> GridScalar {
    let s2 = unweighted_square_function(g);
    GridScalar::new(g.depth(), s2.values().iter().map(|v| v.sqrt()).collect()).expect("shape")
}

/// `‖S_W f‖²` with the contribution of every Haar interval.
#[derive(Clone, Debug)]
pub struct SwNorm {
    pub total: f64,
    /// `⟨⟨W⟩_I (f,h_I), (f,h_I)⟩` in node-id order.
    pub terms: Vec<f64>,
}

fn check_shapes(w: &MatrixWeight, f: &GridVector) -> Result<()> {
    if w.dim() != f.dim() {
        return Err(Error::DimensionMismatch { expected: w.dim(), got: f.dim() });
    }
    if w.depth() != f.depth() {
        return Err(Error::DepthMismatch { expected: w.depth(), got: f.depth() });
    }
    Ok(())
}

/// `‖S_W f‖² = Σ_I ⟨⟨W⟩_I (f,h_I), (f,h_I)⟩`.
pub fn sw_norm_squared(w: &MatrixWeight, f: &GridVector) -> Result<SwNorm> {
    check_shapes(w, f)?;
    Ok(sw_norm_from_coeffs(w, &analyze(f)))
}

pub(crate) fn sw_norm_from_coeffs(w: &MatrixWeight, hc: &HaarCoefficients) -> SwNorm {
    let dim = hc.dim;
    let terms: Vec<f64> = (0..haar_count(hc.depth))
        .map(|id| quad_form_slice(w.average_slice(DyadicInterval::from_node_id(id)), dim, hc.node(id)))
        .collect();
    SwNorm { total: terms.iter().sum(), terms }
}

/// Largest number of Haar intervals [`sw_sign_enumeration`] will enumerate.
pub const ENUMERATION_CAP: usize = 22;

/// `∫ ‖W^{1/2} T_σ f‖²` for one pattern.
fn weighted_energy(sqrt_leaves: &[Vec<f64>], dim: usize, g: &GridVector) -> f64 {
    let mut buf = vec![0.0; dim];
    let mut total = 0.0;
    for (m, v) in sqrt_leaves.iter().zip(g.leaves()) {
        mul_vec_slice(m, dim, v, &mut buf);
        total += buf.iter().map(|x| x * x).sum::<f64>();
    }
    total / leaf_count(g.depth()) as f64
}

fn leaf_sqrts(w: &MatrixWeight) -> Result<Vec<Vec<f64>>> {
    (0..leaf_count(w.depth()))
        .into_par_iter()
        .map(|k| Ok(psd_power_from(&sym_eigen(&w.field().leaf(k)), 0.5)?.into_matrix().into_vec()))
        .collect()
}

/// Exact expectation over all `2^{#intervals}` sign patterns of
/// `∫ ‖W(x)^{1/2} T_σ f(x)‖² dx`.
pub fn sw_sign_enumeration(w: &MatrixWeight, f: &GridVector) -> Result<f64> {
    check_shapes(w, f)?;
    let intervals = haar_count(f.depth());
    if intervals > ENUMERATION_CAP {
        return Err(Error::EnumerationCapExceeded { intervals, cap: ENUMERATION_CAP });
    }
    let sqrt_leaves = leaf_sqrts(w)?;
    let hc = analyze(f);
    let patterns = 1u64 << intervals;
    let chunk = 1024u64.min(patterns);
    let parts: Vec<f64> = (0..patterns / chunk)
        .into_par_iter()
        .map(|c| {
            (c * chunk..(c + 1) * chunk)
                .map(|bits| {
                    let g = transform_coeffs(&hc, &SignPattern::from_bits(f.depth(), bits));
                    weighted_energy(&sqrt_leaves, f.dim(), &g)
                })
                .sum::<f64>()
        })
        .collect();
    Ok(crate::par::ordered_sum(&parts) / patterns as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

/// Monte Carlo over random sign patterns; independent of the thread count.
pub fn sw_monte_carlo(w: &MatrixWeight, f: &GridVector, n_samples: usize, seed: u64) -> Result<MonteCarloEstimate> {
    check_shapes(w, f)?;
    if n_samples < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 samples, got {n_samples}")));
    }
    let sqrt_leaves = leaf_sqrts(w)?;
    let hc = analyze(f);
    let samples: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let g = transform_coeffs(&hc, &SignPattern::random(f.depth(), seed, s));
            weighted_energy(&sqrt_leaves, f.dim(), &g)
        })
        .collect();
    let n = n_samples as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(MonteCarloEstimate { mean, stderr: (var / n).sqrt(), n_samples })
}

/// One term `⟨‖⟨W⟩_L^{1/2} g‖⟩_L² |L|` of the sparse square function.
pub fn s3w_term(w: &MatrixWeight, g: &GridVector, l: DyadicInterval) -> f64 {
    let dim = g.dim();
    let root = w.average_sqrt(l).as_slice();
    let range = l.leaf_range(g.depth());
    let cells = range.len() as f64;
    let mut buf = vec![0.0; dim];
    let mut sum = 0.0;
    for k in range {
        mul_vec_slice(root, dim, g.leaf(k), &mut buf);
        sum += buf.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let avg = sum / cells;
    avg * avg * l.measure()
}

/// `Σ_{L ∈ family} ⟨‖⟨W⟩_L^{1/2} g‖⟩_L² |L|`.
pub fn s3w_norm_squared(w: &MatrixWeight, g: &GridVector, family: &[DyadicInterval]) -> Result<f64> {
    check_shapes(w, g)?;
    if let Some(bad) = family.iter().find(|l| l.level > g.depth()) {
        return Err(Error::IntervalOutOfRange { level: bad.level, index: bad.index, depth: g.depth() });
    }
    let terms: Vec<f64> = family.par_iter().map(|l| s3w_term(w, g, *l)).collect();
    Ok(crate::par::ordered_sum(&terms))
}
