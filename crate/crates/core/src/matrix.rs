//! Small dense matrix algebra for `d ≤ 8`: symmetric eigendecomposition by
//! cyclic Jacobi rotations, fractional powers of PSD matrices, operator and
//! Hilbert–Schmidt norms.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Smallest admissible eigenvalue, relative to the largest one, before a
/// negative power is refused.
pub const EPS_PD: f64 = 1e-10;

/// Eigenvalues below `-PSD_TOL * ‖M‖` mean the input is not PSD.
pub const PSD_TOL: f64 = 1e-10;

/// A dense square matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    /// Panics if `data.len() != n * n`.
    pub fn from_vec(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "matrix data has wrong length");
        Matrix { n, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let data = rows.iter().flat_map(|r| {
            assert_eq!(r.len(), n);
            r.iter().copied()
        });
        Matrix { n, data: data.collect() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.n;
        let mut t = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.data[j * n + i] = self.data[i * n + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(v, &mut out);
        out
    }

    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        mul_vec_slice(&self.data, self.n, v, out);
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        quad_form_slice(&self.data, self.n, v)
    }

    /// `MᵀM`, exactly symmetric.
    pub fn gram(&self) -> SymMatrix {
        let n = self.n;
        let mut g = Matrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..n).map(|k| self.data[k * n + i] * self.data[k * n + j]).sum();
                g.data[i * n + j] = s;
                g.data[j * n + i] = s;
            }
        }
        SymMatrix(g)
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix { n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        Matrix { n: self.n, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        Matrix { n: self.n, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrized(&self) -> SymMatrix {
        let n = self.n;
        let mut s = self.clone();
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                s.data[i * n + j] = v;
                s.data[j * n + i] = v;
            }
        }
        SymMatrix(s)
    }
}

#[inline]
pub(crate) fn mul_vec_slice(m: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = m[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

#[inline]
pub(crate) fn quad_form_slice(m: &[f64], n: usize, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let row: f64 = m[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum();
        s += v[i] * row;
    }
    s
}

/// A real symmetric matrix (validated on construction).
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Accepts `m` if it is finite and symmetric to `1e-12` relative; the
    /// stored matrix is exactly symmetrized.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::NonFinite { what: "matrix" });
        }
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        let n = m.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((m.get(i, j) - m.get(j, i)).abs());
            }
        }
        if worst > crate::dyadic::SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { asymmetry: worst });
        }
        Ok(m.symmetrized())
    }

    pub(crate) fn from_trusted(m: Matrix) -> Self {
        SymMatrix(m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        SymMatrix(Matrix::from_diag(diag))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order and the
/// matching eigenvectors stored as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    /// The `k`-th eigenvector.
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.vectors.n).map(|i| self.vectors.get(i, k)).collect()
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    pub fn min(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// `V diag(f(λ)) Vᵀ`, exactly symmetric.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.vectors.n;
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..n).map(|k| self.vectors.get(i, k) * fl[k] * self.vectors.get(j, k)).sum();
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        SymMatrix(out)
    }
}

/// Cyclic Jacobi eigendecomposition.
pub fn sym_eigen(m: &SymMatrix) -> SymEigen {
    let n = m.n;
    let mut a = m.0.data.clone();
    let mut v = Matrix::identity(n).data;
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale > 0.0 {
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i * n + j] * a[i * n + j])
                .sum::<f64>()
                .sqrt();
            if off <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, col, v[r * n + src]);
        }
    }
    SymEigen { values, vectors }
}

/// Validates symmetry, then decomposes.
pub fn sym_eigen_checked(m: &Matrix) -> Result<SymEigen> {
    Ok(sym_eigen(&SymMatrix::new(m.clone())?))
}

/// `M^p` for PSD `M`. Negative `p` needs `λ_min ≥ EPS_PD · λ_max`.
pub fn psd_power(m: &SymMatrix, p: f64) -> Result<SymMatrix> {
    psd_power_from(&sym_eigen(m), p)
}

/// Same as [`psd_power`] but reusing an existing decomposition.
pub fn psd_power_from(eig: &SymEigen, p: f64) -> Result<SymMatrix> {
    let top = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let low = eig.min();
    if low < -PSD_TOL * top {
        return Err(Error::NotPsd { min_eigenvalue: low });
    }
    if p < 0.0 {
        let threshold = EPS_PD * top;
        if low < threshold || low <= 0.0 {
            return Err(Error::SingularWeight { min_eigenvalue: low, threshold });
        }
    }
    if p == 1.0 {
        return Ok(eig.map(|l| l.max(0.0)));
    }
    Ok(eig.map(|l| if l <= 0.0 { 0.0 } else { l.powf(p) }))
}

/// Largest singular value.
pub fn operator_norm(m: &Matrix) -> f64 {
    if m.n == 1 {
        return m.data[0].abs();
    }
    sym_eigen(&m.gram()).max().max(0.0).sqrt()
}

/// Frobenius norm.
pub fn hs_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn trace_of(m: &SymMatrix) -> f64 {
    m.trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, n: usize) -> Matrix {
        Matrix::from_vec(n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn random_pd(rng: &mut impl Rng, n: usize) -> SymMatrix {
        let b = random_matrix(rng, n);
        let g = b.gram();
        SymMatrix::from_trusted(g.add(&Matrix::identity(n).scaled(0.1)))
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).max_abs()
    }

    #[test]
    fn eigen_examples() {
        let e = sym_eigen(&SymMatrix::identity(3));
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let e = sym_eigen(&SymMatrix::from_diag(&[4.0, 9.0]));
        assert_eq!(e.values, vec![9.0, 4.0]);
        let m = SymMatrix::new(Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let e = sym_eigen(&m);
        assert_relative_eq!(e.values[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(e.values[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn non_symmetric_is_rejected() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(sym_eigen_checked(&m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn eigen_reconstructs_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=8 {
            for _ in 0..20 {
                let m = random_matrix(&mut rng, n).symmetrized();
                let e = sym_eigen(&m);
                let vvt = e.vectors.matmul(&e.vectors.transpose());
                assert!(max_abs_diff(&vvt, &Matrix::identity(n)) <= 1e-10);
                let rec = e.map(|l| l);
                assert!(max_abs_diff(&rec, &m) <= 1e-9 * m.max_abs().max(1e-300));
                assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn power_examples() {
        let r = psd_power(&SymMatrix::from_diag(&[4.0, 9.0]), 0.5).unwrap();
        assert!(max_abs_diff(&r, &Matrix::from_diag(&[2.0, 3.0])) < 1e-15);
        for p in [0.5, -0.5, -1.0] {
            let r = psd_power(&SymMatrix::identity(3), p).unwrap();
            assert!(max_abs_diff(&r, &Matrix::identity(3)) < 1e-15);
        }
        let m = SymMatrix::new(Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let r = psd_power(&m, 0.5).unwrap();
        // (√3 ± 1)/2 on and off the diagonal
        assert_relative_eq!(r.get(0, 0), (3f64.sqrt() + 1.0) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.get(0, 1), (3f64.sqrt() - 1.0) / 2.0, epsilon = 1e-12);
        assert!(max_abs_diff(&r.matmul(&r), &m) < 1e-12);
    }

    #[test]
    fn power_errors() {
        let neg = SymMatrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(psd_power(&neg, 0.5), Err(Error::NotPsd { .. })));
        let sing = SymMatrix::from_diag(&[1.0, 1e-12]);
        assert!(matches!(psd_power(&sing, -0.5), Err(Error::SingularWeight { .. })));
        assert!(psd_power(&sing, 0.5).is_ok());
        let zero = SymMatrix::from_diag(&[0.0, 0.0]);
        assert!(matches!(psd_power(&zero, -1.0), Err(Error::SingularWeight { .. })));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(operator_norm(&Matrix::from_diag(&[2.0, 5.0])), 5.0);
        assert_relative_eq!(operator_norm(&Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]])), 1.0, epsilon = 1e-15);
        let i3 = SymMatrix::identity(3);
        assert_relative_eq!(hs_norm(&i3), 3f64.sqrt());
        assert_eq!(trace_of(&i3), 3.0);
        assert_relative_eq!(hs_norm(&Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])), 30f64.sqrt());
    }

    /// Power iteration on `MᵀM` as an independent route to the top singular value.
    fn power_iteration_norm(m: &Matrix) -> f64 {
        let g = m.gram();
        let n = m.dim();
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut lam = 0.0;
        for _ in 0..20000 {
            let y = g.mul_vec(&x);
            let nrm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let next = g.quad_form(&y) / (nrm * nrm);
            x = y.iter().map(|v| v / nrm).collect();
            if (next - lam).abs() <= 1e-15 * next {
                lam = next;
                break;
            }
            lam = next;
        }
        lam.sqrt()
    }

    #[test]
    fn operator_norm_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = random_matrix(&mut rng, 3);
            assert_relative_eq!(operator_norm(&m), power_iteration_norm(&m), max_relative = 1e-8);
        }
    }

    #[test]
    fn operator_norm_below_hs_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..100 {
            let n = 1 + k % 6;
            let m = random_matrix(&mut rng, n);
            let op = operator_norm(&m);
            let hs = hs_norm(&m);
            assert!(op <= hs * (1.0 + 1e-12));
            assert!(hs <= (n as f64).sqrt() * op * (1.0 + 1e-12));
            assert_relative_eq!(hs * hs, m.gram().trace(), max_relative = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn roots_and_inverse_roots(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_pd(&mut rng, n);
            let half = psd_power(&m, 0.5).unwrap();
            let neg_half = psd_power(&m, -0.5).unwrap();
            let scale = m.max_abs();
            prop_assert!(max_abs_diff(&half.matmul(&half), &m) <= 1e-9 * scale);
            let id = neg_half.matmul(&half);
            prop_assert!(max_abs_diff(&id, &Matrix::identity(n)) <= 1e-9);
            let inv = psd_power(&m, -1.0).unwrap();
            prop_assert!(max_abs_diff(&inv.matmul(&m), &Matrix::identity(n)) <= 1e-8);
        }

        #[test]
        fn operator_norm_is_submultiplicative(seed in any::<u64>(), n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, n);
            let b = random_matrix(&mut rng, n);
            prop_assert!(operator_norm(&a.matmul(&b)) <= operator_norm(&a) * operator_norm(&b) * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn trace_is_similarity_invariant(seed in any::<u64>(), n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, n).symmetrized();
            // P = Q D with Q orthogonal and D positive diagonal, so P⁻¹ = D⁻¹Qᵀ is exact to build.
            let q = sym_eigen(&random_matrix(&mut rng, n).symmetrized()).vectors;
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let p = q.matmul(&Matrix::from_diag(&d));
            let pinv = Matrix::from_diag(&d.iter().map(|x| 1.0 / x).collect::<Vec<_>>()).matmul(&q.transpose());
            let similar = pinv.matmul(&m).matmul(&p);
            let scale = m.max_abs().max(1.0);
            prop_assert!((similar.trace() - m.trace()).abs() <= 1e-8 * scale);
        }
    }
}
