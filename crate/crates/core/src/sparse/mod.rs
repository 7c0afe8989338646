//! Stopping-time construction of a sparse family dominating `‖S_W f‖²`.
//!
//! Starting from `J = [0, 1]`, each node `J'` of the family spawns its
//! *stopping children*: the maximal dyadic `L ⊊ J'` where either
//!
//! * (type 1) `‖⟨W⟩_L^{1/2} ⟨W⟩_{J'}^{-1/2}‖ > C₁`, or
//! * (type 2) `Σ_{L ⊆ I ⊆ J'} ‖⟨W⟩_{J'}^{1/2}(f, h_I)‖² / |I| > C₂ ⟨‖⟨W⟩_{J'}^{1/2} f‖⟩_{J'}²`.
//!
//! The chain sum in condition 2 restarts at every node. Each stopping child
//! becomes a node of the next generation.

mod verify;

pub use verify::*;

use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicInterval, GridVector};
use crate::error::{Error, Result};
use crate::matrix::{mul_vec_slice, operator_norm};
use crate::par::*;
use crate::square::{analyze, HaarCoefficients};
use crate::weights::MatrixWeight;

/// Stopping constants and guards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    pub c1: f64,
    pub c2: f64,
    #[serde(default = "default_target")]
    pub sparseness_target: f64,
    #[serde(default = "default_generations")]
    pub max_generations: usize,
    /// Budget `κ̂` for the weak-(1,1) norm of the dyadic square function.
    #[serde(default = "default_kappa")]
    pub weak_type_budget: f64,
}

fn default_target() -> f64 {
    0.5
}

fn default_generations() -> usize {
    64
}

fn default_kappa() -> f64 {
    4.0
}

impl StoppingConfig {
    /// `C₁ = 2√d`, `C₂ = 256`, `κ̂ = 4`: type-1 mass `≤ d/C₁² = 1/4` and
    /// type-2 mass `≤ κ̂/√C₂ = 1/4` per node.
    pub fn defaults_for_dim(dim: usize) -> Self {
        StoppingConfig {
            c1: 2.0 * (dim as f64).sqrt(),
            c2: 256.0,
            sparseness_target: default_target(),
            max_generations: default_generations(),
            weak_type_budget: default_kappa(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 1.0 && self.c1.is_finite()) {
            return Err(Error::InvalidParameter(format!("C1 = {} must exceed 1", self.c1)));
        }
        if !(self.c2 > 1.0 && self.c2.is_finite()) {
            return Err(Error::InvalidParameter(format!("C2 = {} must exceed 1", self.c2)));
        }
        if !(self.sparseness_target > 0.0 && self.sparseness_target <= 1.0) {
            return Err(Error::InvalidParameter(format!("sparseness target {} outside (0, 1]", self.sparseness_target)));
        }
        if self.max_generations == 0 {
            return Err(Error::InvalidParameter("max_generations must be positive".into()));
        }
        Ok(())
    }

    /// `C₁² C₂`, the domination constant.
    pub fn domination_constant(&self) -> f64 {
        self.c1 * self.c1 * self.c2
    }
}

/// Why an interval entered the family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trigger {
    #[serde(rename = "root")]
    Root,
    #[serde(rename = "type1")]
    Norm,
    #[serde(rename = "type2")]
    Sum,
    #[serde(rename = "both")]
    Both,
}

impl Trigger {
    fn from_flags(norm: bool, sum: bool) -> Option<Trigger> {
        match (norm, sum) {
            (true, true) => Some(Trigger::Both),
            (true, false) => Some(Trigger::Norm),
            (false, true) => Some(Trigger::Sum),
            (false, false) => None,
        }
    }

    pub fn is_type1(&self) -> bool {
        matches!(self, Trigger::Norm | Trigger::Both)
    }

    pub fn is_type2(&self) -> bool {
        matches!(self, Trigger::Sum | Trigger::Both)
    }
}

/// A stopping interval with the quantities that triggered it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingChild {
    pub interval: DyadicInterval,
    pub trigger: Trigger,
    /// `‖⟨W⟩_L^{1/2} ⟨W⟩_{J'}^{-1/2}‖`.
    pub cond1_norm: f64,
    /// Chain sum of condition 2 at `L`.
    pub chain_sum: f64,
    /// `C₂ ⟨‖⟨W⟩_{J'}^{1/2} f‖⟩_{J'}²`.
    pub threshold: f64,
}

/// Per-root data shared by the descent and the verifiers.
pub(crate) struct RootFrame {
    pub root: DyadicInterval,
    /// Row-major `⟨W⟩_{J'}^{1/2}`.
    pub sqrt: Vec<f64>,
    /// `⟨W⟩_{J'}^{-1/2}`.
    pub inv_sqrt: crate::matrix::SymMatrix,
    /// `⟨‖⟨W⟩_{J'}^{1/2} f‖⟩_{J'}`.
    pub avg_norm: f64,
}

impl RootFrame {
    pub fn new(w: &MatrixWeight, f: &GridVector, root: DyadicInterval) -> Result<Self> {
        let sqrt = w.average_sqrt(root).as_slice().to_vec();
        let inv_sqrt = w.average_inv_sqrt(root)?;
        let dim = f.dim();
        let range = root.leaf_range(f.depth());
        let cells = range.len() as f64;
        let mut buf = vec![0.0; dim];
        let mut sum = 0.0;
        for k in range {
            mul_vec_slice(&sqrt, dim, f.leaf(k), &mut buf);
            sum += buf.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        Ok(RootFrame { root, sqrt, inv_sqrt, avg_norm: sum / cells })
    }

    pub fn threshold(&self, c2: f64) -> f64 {
        c2 * self.avg_norm * self.avg_norm
    }

    /// `‖⟨W⟩_{J'}^{1/2}(f, h_I)‖² / |I|`; zero at leaf level.
    pub fn term(&self, hc: &HaarCoefficients, i: DyadicInterval) -> f64 {
        if i.level >= hc.depth() {
            return 0.0;
        }
        let dim = hc.dim();
        let mut buf = vec![0.0; dim];
        mul_vec_slice(&self.sqrt, dim, hc.coeff(i), &mut buf);
        buf.iter().map(|x| x * x).sum::<f64>() / i.measure()
    }

    /// `‖⟨W⟩_L^{1/2} ⟨W⟩_{J'}^{-1/2}‖`.
    pub fn cond1(&self, w: &MatrixWeight, l: DyadicInterval) -> f64 {
        operator_norm(&w.average_sqrt(l).matmul(&self.inv_sqrt))
    }
}

fn descend(w: &MatrixWeight, hc: &HaarCoefficients, frame: &RootFrame, cfg: &StoppingConfig) -> Vec<StoppingChild> {
    let depth = hc.depth();
    let threshold = frame.threshold(cfg.c2);
    let mut out = Vec::new();
    if frame.root.level >= depth {
        return out;
    }
    let root_chain = frame.term(hc, frame.root);
    // Right child pushed first so the left subtree is explored first.
    let mut stack = vec![(frame.root.right(), root_chain), (frame.root.left(), root_chain)];
    while let Some((l, parent_chain)) = stack.pop() {
        let chain = parent_chain + frame.term(hc, l);
        let norm = frame.cond1(w, l);
        if let Some(trigger) = Trigger::from_flags(norm > cfg.c1, chain > threshold) {
            out.push(StoppingChild { interval: l, trigger, cond1_norm: norm, chain_sum: chain, threshold });
        } else if l.level < depth {
            stack.push((l.right(), chain));
            stack.push((l.left(), chain));
        }
    }
    out
}

/// The maximal dyadic `L ⊊ root` violating either stopping condition, left
/// to right.
pub fn stopping_children(
    root: DyadicInterval,
    w: &MatrixWeight,
    f: &GridVector,
    cfg: &StoppingConfig,
) -> Result<Vec<StoppingChild>> {
    cfg.validate()?;
    check_instance(w, f)?;
    if root.level > f.depth() {
        return Err(Error::IntervalOutOfRange { level: root.level, index: root.index, depth: f.depth() });
    }
    let hc = analyze(f);
    let frame = RootFrame::new(w, f, root)?;
    Ok(descend(w, &hc, &frame, cfg))
}

pub(crate) fn check_instance(w: &MatrixWeight, f: &GridVector) -> Result<()> {
    if w.dim() != f.dim() {
        return Err(Error::DimensionMismatch { expected: w.dim(), got: f.dim() });
    }
    if w.depth() != f.depth() {
        return Err(Error::DepthMismatch { expected: w.depth(), got: f.depth() });
    }
    Ok(())
}

/// One interval of the sparse family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseNode {
    pub interval: DyadicInterval,
    pub parent: Option<DyadicInterval>,
    pub generation: usize,
    pub trigger: Trigger,
    /// Trigger quantities from the parent's descent (unset for the root).
    pub cond1_norm: Option<f64>,
    pub chain_sum: Option<f64>,
    pub threshold: Option<f64>,
    /// Direct stopping children, left to right.
    pub children: Vec<DyadicInterval>,
    /// `|E(L)| = |L| − Σ |children|`.
    pub e_measure: f64,
    pub e_ratio: f64,
}

/// The stopping tree: nodes sorted by node id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub depth: u32,
    pub dim: usize,
    pub config: StoppingConfig,
    pub generations: usize,
    pub nodes: Vec<SparseNode>,
}

impl SparseFamily {
    pub fn intervals(&self) -> Vec<DyadicInterval> {
        self.nodes.iter().map(|n| n.interval).collect()
    }

    pub fn node(&self, i: DyadicInterval) -> Option<&SparseNode> {
        self.nodes
            .binary_search_by_key(&i.node_id(), |n| n.interval.node_id())
            .ok()
            .map(|k| &self.nodes[k])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Iterates the stopping construction generation by generation until no
/// node has stopping children.
pub fn build_sparse_family(w: &MatrixWeight, f: &GridVector, cfg: &StoppingConfig) -> Result<SparseFamily> {
    cfg.validate()?;
    check_instance(w, f)?;
    let hc = analyze(f);
    let mut nodes = vec![SparseNode {
        interval: DyadicInterval::ROOT,
        parent: None,
        generation: 0,
        trigger: Trigger::Root,
        cond1_norm: None,
        chain_sum: None,
        threshold: None,
        children: Vec::new(),
        e_measure: 1.0,
        e_ratio: 1.0,
    }];
    let mut frontier = vec![0usize];
    let mut generation = 0;
    while !frontier.is_empty() {
        if generation >= cfg.max_generations {
            return Err(Error::GenerationLimit(cfg.max_generations));
        }
        let kids: Vec<Vec<StoppingChild>> = frontier
            .par_iter()
            .map(|&k| {
                let frame = RootFrame::new(w, f, nodes[k].interval)?;
                Ok(descend(w, &hc, &frame, cfg))
            })
            .collect::<Result<_>>()?;
        generation += 1;
        let mut next = Vec::new();
        for (&k, children) in frontier.iter().zip(kids) {
            let parent = nodes[k].interval;
            let covered: f64 = children.iter().map(|c| c.interval.measure()).sum();
            nodes[k].children = children.iter().map(|c| c.interval).collect();
            nodes[k].e_measure = parent.measure() - covered;
            nodes[k].e_ratio = nodes[k].e_measure / parent.measure();
            for c in children {
                debug_assert!(parent.contains(&c.interval) && c.interval != parent);
                next.push(nodes.len());
                nodes.push(SparseNode {
                    interval: c.interval,
                    parent: Some(parent),
                    generation,
                    trigger: c.trigger,
                    cond1_norm: Some(c.cond1_norm),
                    chain_sum: Some(c.chain_sum),
                    threshold: Some(c.threshold),
                    children: Vec::new(),
                    e_measure: c.interval.measure(),
                    e_ratio: 1.0,
                });
            }
        }
        frontier = next;
    }
    nodes.sort_by_key(|n| n.interval.node_id());
    Ok(SparseFamily { depth: f.depth(), dim: f.dim(), config: cfg.clone(), generations: generation, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{leaf_count, GridMatrixField};

    fn haar_root(depth: u32) -> GridVector {
        let n = leaf_count(depth);
        GridVector::new(depth, 1, (0..n).map(|k| if k < n / 2 { 1.0 } else { -1.0 }).collect()).unwrap()
    }

    fn eps_weight(eps: f64) -> MatrixWeight {
        MatrixWeight::new(GridMatrixField::new(2, 1, vec![eps, eps, 1.0, 1.0]).unwrap()).unwrap()
    }

    #[test]
    fn identity_weight_with_haar_function_never_stops() {
        let w = MatrixWeight::identity(6, 1);
        let f = haar_root(6);
        let cfg = StoppingConfig::defaults_for_dim(1);
        assert!(stopping_children(DyadicInterval::ROOT, &w, &f, &cfg).unwrap().is_empty());
        let fam = build_sparse_family(&w, &f, &cfg).unwrap();
        assert_eq!(fam.intervals(), vec![DyadicInterval::ROOT]);
        assert_eq!(fam.nodes[0].e_ratio, 1.0);
    }

    #[test]
    fn zero_function_has_no_type2_children() {
        let w = eps_weight(0.01);
        let f = GridVector::zeros(2, 1);
        let cfg = StoppingConfig { c1: 1.2, ..StoppingConfig::defaults_for_dim(1) };
        let kids = stopping_children(DyadicInterval::ROOT, &w, &f, &cfg).unwrap();
        assert!(kids.iter().all(|c| c.trigger == Trigger::Norm));
        assert!(!kids.is_empty());
    }

    #[test]
    fn forced_type1_child() {
        let eps = 0.01;
        let w = eps_weight(eps);
        let f = GridVector::new(2, 1, vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        // 2/(1+ε) ≈ 1.98 > C₁² = 1.44
        let cfg = StoppingConfig { c1: 1.2, ..StoppingConfig::defaults_for_dim(1) };
        let kids = stopping_children(DyadicInterval::ROOT, &w, &f, &cfg).unwrap();
        assert_eq!(kids.len(), 1);
        assert_eq!(kids[0].interval, DyadicInterval::new(1, 1));
        assert_eq!(kids[0].trigger, Trigger::Norm);
        assert!((kids[0].cond1_norm.powi(2) - 2.0 / (1.0 + eps)).abs() < 1e-12);
        let fam = build_sparse_family(&w, &f, &cfg).unwrap();
        assert_eq!(fam.intervals(), vec![DyadicInterval::ROOT, DyadicInterval::new(1, 1)]);
        assert_eq!(fam.nodes[0].e_ratio, 0.5);
        assert_eq!(fam.node(DyadicInterval::new(1, 1)).unwrap().parent, Some(DyadicInterval::ROOT));

        // With the default C₁² = 4 the same weight no longer stops.
        let defaults = StoppingConfig::defaults_for_dim(1);
        assert!(stopping_children(DyadicInterval::ROOT, &w, &f, &defaults).unwrap().is_empty());
    }

    #[test]
    fn spike_triggers_type2() {
        let depth = 8;
        let mut vals = vec![0.0; leaf_count(depth)];
        vals[77] = 1.0;
        let f = GridVector::new(depth, 1, vals).unwrap();
        let w = MatrixWeight::identity(depth, 1);
        let fam = build_sparse_family(&w, &f, &StoppingConfig::defaults_for_dim(1)).unwrap();
        assert!(fam.nodes.iter().any(|n| n.trigger == Trigger::Sum));
        for n in &fam.nodes {
            if let Some(p) = n.parent {
                assert!(p.contains(&n.interval) && p != n.interval);
                assert!(n.interval.contains(&DyadicInterval::new(depth, 77)));
            }
        }
    }

    #[test]
    fn leaf_root_has_no_children() {
        let w = MatrixWeight::identity(3, 1);
        let f = GridVector::zeros(3, 1);
        let kids = stopping_children(DyadicInterval::new(3, 2), &w, &f, &StoppingConfig::defaults_for_dim(1)).unwrap();
        assert!(kids.is_empty());
    }

    #[test]
    fn ties_do_not_stop() {
        // cond1 norm² at [1/2,1] is exactly 2/(1+ε); set C₁ to that value.
        let eps = 0.25;
        let w = eps_weight(eps);
        let f = GridVector::zeros(2, 1);
        let norm = RootFrame::new(&w, &f, DyadicInterval::ROOT).unwrap().cond1(&w, DyadicInterval::new(1, 1));
        let cfg = StoppingConfig { c1: norm, ..StoppingConfig::defaults_for_dim(1) };
        let kids = stopping_children(DyadicInterval::ROOT, &w, &f, &cfg).unwrap();
        assert!(kids.iter().all(|c| c.interval != DyadicInterval::new(1, 1)));
    }

    #[test]
    fn config_validation() {
        let mut cfg = StoppingConfig::defaults_for_dim(2);
        assert!((cfg.c1 * cfg.c1 - 8.0).abs() < 1e-12);
        cfg.c1 = 1.0;
        assert!(cfg.validate().is_err());
        let cfg = StoppingConfig { sparseness_target: 0.0, ..StoppingConfig::defaults_for_dim(1) };
        assert!(cfg.validate().is_err());
    }
}
