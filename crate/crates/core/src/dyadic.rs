//! The dyadic tree on `[0, 1]` at finite depth and piecewise-constant data
//! living on its leaves.
//!
//! Nodes are addressed either as `(level, index)` pairs or by their
//! breadth-first node id `2^level - 1 + index`. Every per-node cache in the
//! crate is laid out in node-id order, so the Haar intervals (levels
//! `0..depth`) occupy exactly the first `2^depth - 1` slots.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, SymMatrix};
use crate::par::*;

/// Relative tolerance for the symmetry check on matrix-valued fields.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A dyadic interval `[index * 2^-level, (index + 1) * 2^-level]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub level: u32,
    pub index: u64,
}

impl DyadicInterval {
    pub const ROOT: DyadicInterval = DyadicInterval { level: 0, index: 0 };

    /// Panics if `index >= 2^level`.
    pub fn new(level: u32, index: u64) -> Self {
        assert!(level < 63 && index < (1u64 << level), "invalid dyadic interval ({level}, {index})");
        DyadicInterval { level, index }
    }

    pub fn try_new(level: u32, index: u64, depth: u32) -> Result<Self> {
        if level > depth || level >= 63 || index >= (1u64 << level) {
            return Err(Error::IntervalOutOfRange { level, index, depth });
        }
        Ok(DyadicInterval { level, index })
    }

    /// Lebesgue measure `2^-level`, exact in floating point.
    pub fn measure(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn start(&self) -> f64 {
        self.index as f64 * self.measure()
    }

    pub fn end(&self) -> f64 {
        (self.index + 1) as f64 * self.measure()
    }

    pub fn left(&self) -> Self {
        DyadicInterval { level: self.level + 1, index: 2 * self.index }
    }

    pub fn right(&self) -> Self {
        DyadicInterval { level: self.level + 1, index: 2 * self.index + 1 }
    }

    /// The half where the Haar function is positive (the left half).
    pub fn plus_half(&self) -> Self {
        self.left()
    }

    /// The half where the Haar function is negative (the right half).
    pub fn minus_half(&self) -> Self {
        self.right()
    }

    /// `(left, right)` halves, refusing to split a leaf of a depth-`depth` tree.
    pub fn children(&self, depth: u32) -> Result<(Self, Self)> {
        if self.level >= depth {
            return Err(Error::LeafHasNoChildren { level: self.level, depth });
        }
        Ok((self.left(), self.right()))
    }

    pub fn parent(&self) -> Option<Self> {
        (self.level > 0).then(|| DyadicInterval { level: self.level - 1, index: self.index / 2 })
    }

    /// The ancestor at `level` (or `self` when the levels agree).
    pub fn ancestor_at(&self, level: u32) -> Self {
        assert!(level <= self.level);
        DyadicInterval { level, index: self.index >> (self.level - level) }
    }

    /// `other ⊆ self`.
    pub fn contains(&self, other: &DyadicInterval) -> bool {
        other.level >= self.level && other.ancestor_at(self.level) == *self
    }

    pub fn node_id(&self) -> usize {
        ((1usize << self.level) - 1) + self.index as usize
    }

    pub fn from_node_id(id: usize) -> Self {
        let level = usize::BITS - 1 - (id + 1).leading_zeros();
        DyadicInterval { level, index: (id + 1 - (1usize << level)) as u64 }
    }

    /// Leaf cells covered by this interval in a depth-`depth` grid.
    pub fn leaf_range(&self, depth: u32) -> Range<usize> {
        debug_assert!(self.level <= depth);
        let width = 1usize << (depth - self.level);
        let start = self.index as usize * width;
        start..start + width
    }

    /// Strict ancestors from the parent up to the root.
    pub fn ancestors(&self) -> impl Iterator<Item = DyadicInterval> {
        let me = *self;
        (0..me.level).rev().map(move |l| me.ancestor_at(l))
    }
}

/// `2^(depth+1) - 1`.
pub fn node_count(depth: u32) -> usize {
    (1usize << (depth + 1)) - 1
}

/// Number of Haar intervals (levels `0..depth`), `2^depth - 1`.
pub fn haar_count(depth: u32) -> usize {
    (1usize << depth) - 1
}

pub fn leaf_count(depth: u32) -> usize {
    1usize << depth
}

/// All intervals at one level, left to right.
pub fn level_intervals(level: u32) -> impl Iterator<Item = DyadicInterval> {
    (0..1u64 << level).map(move |i| DyadicInterval { level, index: i })
}

/// Averages of a leaf-valued field over every node of the tree, with `stride`
/// numbers per node, laid out in node-id order.
#[derive(Clone, Debug)]
pub struct AverageTree {
    depth: u32,
    stride: usize,
    data: Vec<f64>,
}

impl AverageTree {
    /// Builds the cache bottom-up: each parent is the mean of its two children.
    pub fn build(depth: u32, stride: usize, leaves: &[f64]) -> Self {
        assert_eq!(leaves.len(), leaf_count(depth) * stride);
        let mut data = vec![0.0; node_count(depth) * stride];
        let leaf_off = haar_count(depth) * stride;
        data[leaf_off..].copy_from_slice(leaves);
        for level in (0..depth).rev() {
            let lo = ((1usize << level) - 1) * stride;
            let mid = ((1usize << (level + 1)) - 1) * stride;
            let hi = ((1usize << (level + 2)) - 1) * stride;
            let (head, tail) = data.split_at_mut(mid);
            let parents = &mut head[lo..];
            let kids = &tail[..hi - mid];
            parents
                .par_chunks_mut(stride)
                .zip(kids.par_chunks(2 * stride))
                .for_each(|(p, c)| {
                    for (k, slot) in p.iter_mut().enumerate() {
                        *slot = 0.5 * (c[k] + c[stride + k]);
                    }
                });
        }
        AverageTree { depth, stride, data }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn get(&self, interval: DyadicInterval) -> &[f64] {
        self.node(interval.node_id())
    }

    pub fn node(&self, id: usize) -> &[f64] {
        &self.data[id * self.stride..(id + 1) * self.stride]
    }
}

/// Mean of `values[range]` blocks of width `stride`, reduced pairwise so the
/// result matches the bottom-up tree exactly.
fn pairwise_mean(values: &[f64], stride: usize) -> Vec<f64> {
    let cells = values.len() / stride;
    if cells == 1 {
        return values.to_vec();
    }
    let half = (cells / 2) * stride;
    let a = pairwise_mean(&values[..half], stride);
    let b = pairwise_mean(&values[half..], stride);
    a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}

fn check_len(depth: u32, expected_per_leaf: usize, got: usize) -> Result<()> {
    if depth > 30 {
        return Err(Error::InvalidParameter(format!("depth {depth} too large")));
    }
    let expected = leaf_count(depth) * expected_per_leaf;
    if expected != got {
        return Err(Error::Shape(format!(
            "depth {depth} needs {expected} numbers, got {got}"
        )));
    }
    Ok(())
}

/// A real function constant on each of the `2^depth` leaf cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScalarRepr", into = "ScalarRepr")]
pub struct GridScalar {
    depth: u32,
    values: Vec<f64>,
}

impl GridScalar {
    pub fn new(depth: u32, values: Vec<f64>) -> Result<Self> {
        check_len(depth, 1, values.len())?;
        check_finite(&values, "scalar grid")?;
        Ok(GridScalar { depth, values })
    }

    pub fn constant(depth: u32, c: f64) -> Self {
        GridScalar { depth, values: vec![c; leaf_count(depth)] }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn average(&self, interval: DyadicInterval) -> f64 {
        pairwise_mean(&self.values[interval.leaf_range(self.depth)], 1)[0]
    }

    pub fn average_tree(&self) -> AverageTree {
        AverageTree::build(self.depth, 1, &self.values)
    }

    /// `∫_J v`, i.e. the mean over all leaves.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// An `R^dim`-valued function constant on each leaf cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NestedRepr", into = "NestedRepr")]
pub struct GridVector {
    depth: u32,
    dim: usize,
    values: Vec<f64>,
}

impl GridVector {
    /// `values` is leaf-major: leaf `k` occupies `values[k*dim..(k+1)*dim]`.
    pub fn new(depth: u32, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        check_len(depth, dim, values.len())?;
        check_finite(&values, "vector grid")?;
        Ok(GridVector { depth, dim, values })
    }

    pub fn zeros(depth: u32, dim: usize) -> Self {
        GridVector { depth, dim, values: vec![0.0; leaf_count(depth) * dim] }
    }

    pub fn constant(depth: u32, c: &[f64]) -> Self {
        let values = c.iter().copied().cycle().take(leaf_count(depth) * c.len()).collect();
        GridVector { depth, dim: c.len(), values }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn leaf(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn leaves(&self) -> std::slice::Chunks<'_, f64> {
        self.values.chunks(self.dim)
    }

    pub fn average(&self, interval: DyadicInterval) -> Vec<f64> {
        let r = interval.leaf_range(self.depth);
        pairwise_mean(&self.values[r.start * self.dim..r.end * self.dim], self.dim)
    }

    pub fn average_tree(&self) -> AverageTree {
        AverageTree::build(self.depth, self.dim, &self.values)
    }

    /// `‖f‖²_{L²}` over `[0, 1]`.
    pub fn l2_norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / leaf_count(self.depth) as f64
    }

    /// `f - ⟨f⟩_J`.
    pub fn without_mean(&self) -> GridVector {
        let mean = self.average(DyadicInterval::ROOT);
        let values = self
            .values
            .chunks(self.dim)
            .flat_map(|v| v.iter().zip(&mean).map(|(a, m)| a - m).collect::<Vec<_>>())
            .collect();
        GridVector { depth: self.depth, dim: self.dim, values }
    }

    /// Adds a constant vector to every leaf.
    pub fn plus_constant(&self, c: &[f64]) -> Result<GridVector> {
        if c.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: c.len() });
        }
        let mut out = self.clone();
        for leaf in out.values.chunks_mut(self.dim) {
            for (a, b) in leaf.iter_mut().zip(c) {
                *a += b;
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> GridVector {
        GridVector {
            depth: self.depth,
            dim: self.dim,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

/// A field of symmetric `dim × dim` matrices, one per leaf, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NestedRepr", into = "NestedRepr")]
pub struct GridMatrixField {
    depth: u32,
    dim: usize,
    values: Vec<f64>,
}

impl GridMatrixField {
    pub fn new(depth: u32, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        check_len(depth, dim * dim, values.len())?;
        check_finite(&values, "matrix field")?;
        for m in values.chunks(dim * dim) {
            let asym = asymmetry(m, dim);
            if asym > 0.0 {
                return Err(Error::NotSymmetric { asymmetry: asym });
            }
        }
        Ok(GridMatrixField { depth, dim, values })
    }

    pub fn from_leaves(depth: u32, leaves: &[SymMatrix]) -> Result<Self> {
        let dim = leaves.first().map(|m| m.dim()).unwrap_or(1);
        let mut values = Vec::with_capacity(leaves.len() * dim * dim);
        for m in leaves {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: m.dim() });
            }
            values.extend_from_slice(m.as_slice());
        }
        Self::new(depth, dim, values)
    }

    pub fn constant(depth: u32, m: &SymMatrix) -> Self {
        let values = m.as_slice().iter().copied().cycle().take(leaf_count(depth) * m.dim() * m.dim()).collect();
        GridMatrixField { depth, dim: m.dim(), values }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn leaf_slice(&self, k: usize) -> &[f64] {
        let s = self.dim * self.dim;
        &self.values[k * s..(k + 1) * s]
    }

    pub fn leaf(&self, k: usize) -> SymMatrix {
        SymMatrix::from_trusted(Matrix::from_vec(self.dim, self.leaf_slice(k).to_vec()))
    }

    pub fn average(&self, interval: DyadicInterval) -> SymMatrix {
        let r = interval.leaf_range(self.depth);
        let s = self.dim * self.dim;
        let m = pairwise_mean(&self.values[r.start * s..r.end * s], s);
        SymMatrix::from_trusted(Matrix::from_vec(self.dim, m))
    }

    pub fn average_tree(&self) -> AverageTree {
        AverageTree::build(self.depth, self.dim * self.dim, &self.values)
    }
}

/// Max `|a_ij - a_ji|` beyond the relative tolerance, or 0 when symmetric.
fn asymmetry(m: &[f64], dim: usize) -> f64 {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..dim {
        for j in i + 1..dim {
            worst = worst.max((m[i * dim + j] - m[j * dim + i]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale {
        worst
    } else {
        0.0
    }
}

#[derive(Serialize, Deserialize)]
struct ScalarRepr {
    depth: u32,
    #[serde(default = "one")]
    dim: usize,
    values: Vec<f64>,
}

fn one() -> usize {
    1
}

impl TryFrom<ScalarRepr> for GridScalar {
    type Error = Error;
    fn try_from(r: ScalarRepr) -> Result<Self> {
        if r.dim != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: r.dim });
        }
        GridScalar::new(r.depth, r.values)
    }
}

impl From<GridScalar> for ScalarRepr {
    fn from(g: GridScalar) -> Self {
        ScalarRepr { depth: g.depth, dim: 1, values: g.values }
    }
}

/// Leaf values as one inner array per leaf (a vector, or a row-major matrix).
#[derive(Serialize, Deserialize)]
struct NestedRepr {
    depth: u32,
    dim: usize,
    values: Vec<Vec<f64>>,
}

fn flatten(r: &NestedRepr, per_leaf: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(r.values.len() * per_leaf);
    for (k, v) in r.values.iter().enumerate() {
        if v.len() != per_leaf {
            return Err(Error::Shape(format!("leaf {k} has {} entries, expected {per_leaf}", v.len())));
        }
        out.extend_from_slice(v);
    }
    Ok(out)
}

impl TryFrom<NestedRepr> for GridVector {
    type Error = Error;
    fn try_from(r: NestedRepr) -> Result<Self> {
        let flat = flatten(&r, r.dim)?;
        GridVector::new(r.depth, r.dim, flat)
    }
}

impl From<GridVector> for NestedRepr {
    fn from(g: GridVector) -> Self {
        NestedRepr { depth: g.depth, dim: g.dim, values: g.values.chunks(g.dim).map(<[f64]>::to_vec).collect() }
    }
}

impl TryFrom<NestedRepr> for GridMatrixField {
    type Error = Error;
    fn try_from(r: NestedRepr) -> Result<Self> {
        let flat = flatten(&r, r.dim * r.dim)?;
        GridMatrixField::new(r.depth, r.dim, flat)
    }
}

impl From<GridMatrixField> for NestedRepr {
    fn from(g: GridMatrixField) -> Self {
        let s = g.dim * g.dim;
        NestedRepr { depth: g.depth, dim: g.dim, values: g.values.chunks(s).map(<[f64]>::to_vec).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_of_root_and_inner_nodes() {
        let root = DyadicInterval::ROOT;
        assert_eq!(root.children(3).unwrap(), (DyadicInterval::new(1, 0), DyadicInterval::new(1, 1)));
        let i = DyadicInterval::new(1, 1);
        assert_eq!(i.children(3).unwrap(), (DyadicInterval::new(2, 2), DyadicInterval::new(2, 3)));
        assert_eq!(i.plus_half(), DyadicInterval::new(2, 2));
        assert_eq!(i.minus_half(), DyadicInterval::new(2, 3));
    }

    #[test]
    fn leaf_cannot_split() {
        let leaf = DyadicInterval::new(3, 0);
        assert!(matches!(leaf.children(3), Err(Error::LeafHasNoChildren { .. })));
    }

    #[test]
    fn node_ids_round_trip() {
        for id in 0..node_count(6) {
            let i = DyadicInterval::from_node_id(id);
            assert_eq!(i.node_id(), id);
            assert!(i.index < (1 << i.level));
        }
        assert_eq!(DyadicInterval::new(2, 3).node_id(), 6);
    }

    #[test]
    fn measures_and_containment() {
        let i = DyadicInterval::new(3, 5);
        assert_eq!(i.measure(), 0.125);
        assert_eq!((i.start(), i.end()), (0.625, 0.75));
        assert!(DyadicInterval::new(1, 1).contains(&i));
        assert!(!DyadicInterval::new(1, 0).contains(&i));
        assert!(i.contains(&i));
        let anc: Vec<_> = i.ancestors().collect();
        assert_eq!(anc, vec![DyadicInterval::new(2, 2), DyadicInterval::new(1, 1), DyadicInterval::ROOT]);
        assert_eq!(i.leaf_range(5), 20..24);
    }

    #[test]
    fn antichain_measures_sum_to_one() {
        let cover = [
            DyadicInterval::new(1, 0),
            DyadicInterval::new(2, 2),
            DyadicInterval::new(3, 6),
            DyadicInterval::new(3, 7),
        ];
        assert_eq!(cover.iter().map(|i| i.measure()).sum::<f64>(), 1.0);
    }

    #[test]
    fn scalar_average_examples() {
        let g = GridScalar::new(1, vec![1.0, 9.0]).unwrap();
        assert_eq!(g.average(DyadicInterval::ROOT), 5.0);
        let c = GridScalar::constant(4, 2.5);
        for id in 0..node_count(4) {
            assert_eq!(c.average(DyadicInterval::from_node_id(id)), 2.5);
        }
    }

    #[test]
    fn tree_matches_direct_averages() {
        let vals: Vec<f64> = (0..32).map(|k| ((k * 7919) % 13) as f64 - 6.0).collect();
        let g = GridVector::new(4, 2, vals).unwrap();
        let tree = g.average_tree();
        for id in 0..node_count(4) {
            let i = DyadicInterval::from_node_id(id);
            assert_eq!(tree.get(i), g.average(i).as_slice());
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(GridScalar::new(2, vec![1.0; 3]).is_err());
        assert!(GridVector::new(1, 2, vec![0.0, 1.0, f64::NAN, 2.0]).is_err());
        assert!(matches!(
            GridMatrixField::new(0, 2, vec![1.0, 2.0, 3.0, 1.0]),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn json_layout_is_nested_per_leaf() {
        let m = GridMatrixField::new(1, 2, vec![2.0, 1.0, 1.0, 2.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"depth":1,"dim":2,"values":[[2.0,1.0,1.0,2.0],[1.0,0.0,0.0,1.0]]}"#);
        let back: GridMatrixField = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"depth":1,"dim":2,"values":[[2.0,1.0,1.0],[1.0,0.0,0.0,1.0]]}"#;
        assert!(serde_json::from_str::<GridMatrixField>(bad).is_err());
        let sc: GridScalar = serde_json::from_str(r#"{"depth":1,"values":[1.0,9.0]}"#).unwrap();
        assert_eq!(sc.values(), &[1.0, 9.0]);
    }
}
