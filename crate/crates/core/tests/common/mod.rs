//! Random instances and brute-force oracles built on nalgebra, independent of
//! the library's own linear algebra and tree traversal.
#![allow(dead_code)]

use matw::sparse::StoppingConfig;
use matw::weights::{generate_weight, WeightFamilySpec, WeightKind};
use matw::{DyadicInterval, GridVector, MatrixWeight};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_spec(rng: &mut ChaCha8Rng, max_depth: u32, max_dim: usize) -> WeightFamilySpec {
    let kind = WeightKind::ALL[rng.random_range(0..WeightKind::ALL.len())];
    let dim = if kind == WeightKind::Rotating { 2 } else { rng.random_range(1..=max_dim) };
    let parameter = match kind {
        WeightKind::Identity => 0.0,
        WeightKind::ScalarPower | WeightKind::BlockScalar => rng.random_range(0.0..0.95),
        WeightKind::Rotating | WeightKind::RandomLogPd => rng.random_range(0.0..4.0),
    };
    WeightFamilySpec { kind, dim, depth: rng.random_range(1..=max_depth), parameter, seed: rng.random() }
}

/// Uniform noise, sometimes with a few large spikes, sometimes a lone spike.
pub fn random_function(rng: &mut ChaCha8Rng, depth: u32, dim: usize) -> GridVector {
    let n = 1usize << depth;
    let mut vals: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    match rng.random_range(0..6) {
        0 => {
            vals.iter_mut().for_each(|v| *v = 0.0);
            let k = rng.random_range(0..n);
            for c in 0..dim {
                vals[k * dim + c] = rng.random_range(-1.0..1.0);
            }
        }
        1 | 2 => {
            for _ in 0..rng.random_range(1..4) {
                let k = rng.random_range(0..n);
                let scale = 10f64.powf(rng.random_range(1.0..3.0));
                for c in 0..dim {
                    vals[k * dim + c] *= scale;
                }
            }
        }
        _ => {}
    }
    GridVector::new(depth, dim, vals).unwrap()
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_depth: u32, max_dim: usize) -> (WeightFamilySpec, MatrixWeight, GridVector) {
    let spec = random_spec(rng, max_depth, max_dim);
    let w = generate_weight(&spec).unwrap();
    let f = random_function(rng, spec.depth, spec.dim);
    (spec, w, f)
}

pub fn leaf_matrix(w: &MatrixWeight, k: usize) -> DMatrix<f64> {
    let d = w.dim();
    DMatrix::from_row_slice(d, d, w.field().leaf_slice(k))
}

pub fn leaf_vector(f: &GridVector, k: usize) -> DVector<f64> {
    DVector::from_column_slice(f.leaf(k))
}

fn cells(i: DyadicInterval, depth: u32) -> std::ops::Range<usize> {
    let width = 1usize << (depth - i.level);
    let start = i.index as usize * width;
    start..start + width
}

pub fn avg_matrix(w: &MatrixWeight, i: DyadicInterval) -> DMatrix<f64> {
    let r = cells(i, w.depth());
    let n = r.len() as f64;
    r.map(|k| leaf_matrix(w, k)).fold(DMatrix::zeros(w.dim(), w.dim()), |a, b| a + b) / n
}

pub fn sym_power(m: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let lam = DMatrix::from_diagonal(&e.eigenvalues.map(|x| x.max(0.0).powf(p)));
    &e.eigenvectors * lam * e.eigenvectors.transpose()
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// `(f, h_I)` by summing over the cells of `I`.
pub fn haar_coefficient(f: &GridVector, i: DyadicInterval) -> DVector<f64> {
    let depth = f.depth();
    let r = cells(i, depth);
    let half = r.start + r.len() / 2;
    let cell = 1.0 / (1u64 << depth) as f64;
    let amp = i.measure().powf(-0.5);
    let mut c = DVector::zeros(f.dim());
    for k in r {
        let s = if k < half { 1.0 } else { -1.0 };
        c += leaf_vector(f, k) * (s * amp * cell);
    }
    c
}

fn all_haar(depth: u32) -> impl Iterator<Item = DyadicInterval> {
    (0..depth).flat_map(|l| (0..1u64 << l).map(move |j| DyadicInterval::new(l, j)))
}

/// `Σ_I ⟨⟨W⟩_I c_I, c_I⟩` with every average taken over the cells directly.
pub fn brute_sw_norm_squared(w: &MatrixWeight, f: &GridVector) -> f64 {
    all_haar(f.depth())
        .map(|i| {
            let c = haar_coefficient(f, i);
            (c.transpose() * avg_matrix(w, i) * &c)[(0, 0)]
        })
        .sum()
}

/// Scalar `∫ S²f · w` with `S²f(x) = Σ_{I ∋ x} |(f,h_I)|²/|I|`.
pub fn scalar_weighted_square_integral(w: &[f64], f: &GridVector) -> f64 {
    let depth = f.depth();
    let n = 1usize << depth;
    let mut s2 = vec![0.0; n];
    for i in all_haar(depth) {
        let c = haar_coefficient(f, i)[0];
        for k in cells(i, depth) {
            s2[k] += c * c / i.measure();
        }
    }
    s2.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / n as f64
}

/// Top eigenvalue of `Q x = λ P x` by Cholesky reduction, with the `Q` and `P`
/// Gram matrices assembled entry by entry.
pub fn dense_operator_norm_squared(w: &MatrixWeight) -> f64 {
    let (depth, d) = (w.depth(), w.dim());
    let n = 1usize << depth;
    let size = n * d;
    let cell = 1.0 / n as f64;
    let mut p = DMatrix::zeros(size, size);
    for k in 0..n {
        p.view_mut((k * d, k * d), (d, d)).copy_from(&(leaf_matrix(w, k) * cell));
    }
    let mut q = DMatrix::zeros(size, size);
    for i in all_haar(depth) {
        // c_I = H_I x with H_I the d × nd block row of Haar samples
        let mut h = DMatrix::zeros(d, size);
        let r = cells(i, depth);
        let half = r.start + r.len() / 2;
        let amp = i.measure().powf(-0.5) * cell;
        for k in r {
            let s = if k < half { amp } else { -amp };
            for c in 0..d {
                h[(c, k * d + c)] = s;
            }
        }
        q += h.transpose() * avg_matrix(w, i) * &h;
    }
    let l = p.cholesky().expect("P is positive definite").l();
    let linv = l.clone().try_inverse().unwrap();
    let m = &linv * q * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    m.symmetric_eigen().eigenvalues.max()
}

/// Maximal dyadic `L ⊊ root` violating either stopping condition, found by
/// testing every subinterval.
pub fn brute_stopping_children(w: &MatrixWeight, f: &GridVector, root: DyadicInterval, cfg: &StoppingConfig) -> Vec<DyadicInterval> {
    let depth = f.depth();
    let a = avg_matrix(w, root);
    let sq = sym_power(&a, 0.5);
    let inv_sq = sym_power(&a, -0.5);
    let r = cells(root, depth);
    let avg = r.clone().map(|k| (&sq * leaf_vector(f, k)).norm()).sum::<f64>() / r.len() as f64;
    let threshold = cfg.c2 * avg * avg;
    let term = |i: DyadicInterval| -> f64 {
        if i.level >= depth {
            0.0
        } else {
            (&sq * haar_coefficient(f, i)).norm_squared() / i.measure()
        }
    };
    let fires = |l: DyadicInterval| -> bool {
        let norm = spectral_norm(&(sym_power(&avg_matrix(w, l), 0.5) * &inv_sq));
        let mut chain = term(l);
        let mut cur = l;
        while cur != root {
            cur = cur.parent().unwrap();
            chain += term(cur);
        }
        norm > cfg.c1 || chain > threshold
    };
    let mut out = Vec::new();
    for level in root.level + 1..=depth {
        let shift = level - root.level;
        for j in 0..1u64 << shift {
            let l = DyadicInterval::new(level, (root.index << shift) + j);
            let covered = out.iter().any(|s: &DyadicInterval| s.contains(&l));
            if !covered && fires(l) {
                out.push(l);
            }
        }
    }
    out.sort_by_key(|i| i.start().to_bits());
    out
}
