//! Instance-by-instance checks of the sparse family: sparseness, domination,
//! the trace bound on type-1 children, the weak-type bound on type-2
//! children and maximality of every stopping interval.

use serde::{Deserialize, Serialize};

use super::{build_sparse_family, check_instance, RootFrame, SparseFamily, StoppingConfig};
use crate::dyadic::{DyadicInterval, GridVector};
use crate::error::Result;
use crate::matrix::{hs_norm, operator_norm, quad_form_slice, Matrix, SymMatrix};
use crate::par::*;
use crate::square::{analyze, s3w_norm_squared, sw_norm_squared, unweighted_square_function};
use crate::weights::MatrixWeight;

/// Relative roundoff allowance on exact inequalities.
pub const ROUNDOFF: f64 = 1e-9;

/// Absolute allowance on measure-fraction bounds.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsenessReport {
    pub ok: bool,
    pub target: f64,
    pub min_ratio: f64,
    pub offending: Vec<DyadicInterval>,
    /// `Σ_L |E(L)|`; the E-sets partition `[0, 1]`, so this is 1.
    pub total_e_measure: f64,
}

/// `ok` iff every node keeps `|E(L)| ≥ target·|L|`.
pub fn verify_sparseness(family: &SparseFamily, target: f64) -> SparsenessReport {
    let min_ratio = family.nodes.iter().map(|n| n.e_ratio).fold(f64::INFINITY, f64::min);
    let offending: Vec<_> = family.nodes.iter().filter(|n| n.e_ratio < target).map(|n| n.interval).collect();
    SparsenessReport {
        ok: offending.is_empty(),
        target,
        min_ratio,
        offending,
        total_e_measure: family.nodes.iter().map(|n| n.e_measure).sum(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    /// `‖S_W f‖²`.
    pub lhs: f64,
    /// `C₁² C₂ Σ_{L∈𝒮} ⟨‖⟨W⟩_L^{1/2} f‖⟩_L² |L|`.
    pub rhs: f64,
    pub ok: bool,
    /// `rhs − lhs`.
    pub slack: f64,
}

pub fn verify_domination(
    w: &MatrixWeight,
    f: &GridVector,
    family: &SparseFamily,
    cfg: &StoppingConfig,
) -> Result<DominationReport> {
    let lhs = sw_norm_squared(w, f)?.total;
    let rhs = cfg.domination_constant() * s3w_norm_squared(w, f, &family.intervals())?;
    Ok(DominationReport { lhs, rhs, ok: lhs <= rhs * (1.0 + ROUNDOFF), slack: rhs - lhs })
}

/// The trace argument at one node `J'`, one number per step of the chain
/// `C₁² Σ|L| < Σ|L|‖M_L‖² ≤ Σ|L|‖M_L‖²_{HS} = Σ|L| tr(...) ≤ ∫_{J'} tr(...) = d|J'|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceNodeReport {
    pub node: DyadicInterval,
    pub children: usize,
    /// `Σ|L|` over type-1 children.
    pub child_mass: f64,
    pub c1_squared_mass: f64,
    pub operator_sum: f64,
    pub hs_sum: f64,
    pub trace_sum: f64,
    pub integral: f64,
    pub d_measure: f64,
    /// `Σ|L| / |J'|`.
    pub mass_fraction: f64,
    /// `d / C₁²`.
    pub bound: f64,
    pub steps_ok: [bool; 5],
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub ok: bool,
    pub max_mass_fraction: f64,
    pub nodes: Vec<TraceNodeReport>,
}

fn le(a: f64, b: f64) -> bool {
    a <= b + ROUNDOFF * b.abs().max(a.abs())
}

/// Checks `Σ_{type-1 L} |L| ≤ d|J'|/C₁²` at every node, step by step.
pub fn verify_type1_trace_bound(family: &SparseFamily, w: &MatrixWeight) -> Result<TraceReport> {
    let dim = w.dim();
    let c1sq = family.config.c1 * family.config.c1;
    let nodes: Vec<TraceNodeReport> = family
        .nodes
        .par_iter()
        .filter(|n| n.children.iter().any(|c| family.node(*c).is_some_and(|k| k.trigger.is_type1())))
        .map(|n| {
            let root = n.interval;
            let inv_sqrt = w.average_inv_sqrt(root)?;
            let kids: Vec<DyadicInterval> = n
                .children
                .iter()
                .copied()
                .filter(|c| family.node(*c).is_some_and(|k| k.trigger.is_type1()))
                .collect();
            let mut mass = 0.0;
            let mut op_sum = 0.0;
            let mut hs_sum = 0.0;
            let mut tr_sum = 0.0;
            for l in &kids {
                let m = w.average_sqrt(*l).matmul(&inv_sqrt);
                let op = operator_norm(&m);
                let hs = hs_norm(&m);
                let congruent = inv_sqrt.matmul(&w.average(*l)).matmul(&inv_sqrt);
                mass += l.measure();
                op_sum += l.measure() * op * op;
                hs_sum += l.measure() * hs * hs;
                tr_sum += l.measure() * congruent.trace();
            }
            let integral = trace_integral(w, &inv_sqrt, root);
            let d_measure = dim as f64 * root.measure();
            let steps_ok = [
                c1sq * mass < op_sum * (1.0 + ROUNDOFF),
                le(op_sum, hs_sum),
                (hs_sum - tr_sum).abs() <= 1e-10 * hs_sum.max(tr_sum),
                le(tr_sum, integral),
                (integral - d_measure).abs() <= 1e-10 * d_measure,
            ];
            let mass_fraction = mass / root.measure();
            let bound = dim as f64 / c1sq;
            let ok = steps_ok.iter().all(|b| *b) && mass_fraction <= bound + MASS_TOL;
            Ok(TraceNodeReport {
                node: root,
                children: kids.len(),
                child_mass: mass,
                c1_squared_mass: c1sq * mass,
                operator_sum: op_sum,
                hs_sum,
                trace_sum: tr_sum,
                integral,
                d_measure,
                mass_fraction,
                bound,
                steps_ok,
                ok,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TraceReport {
        ok: nodes.iter().all(|n| n.ok),
        max_mass_fraction: nodes.iter().map(|n| n.mass_fraction).fold(0.0, f64::max),
        nodes,
    })
}

/// `∫_{J'} tr(⟨W⟩_{J'}^{-1/2} W(x) ⟨W⟩_{J'}^{-1/2}) dx` as a leaf sum.
fn trace_integral(w: &MatrixWeight, inv_sqrt: &SymMatrix, root: DyadicInterval) -> f64 {
    let dim = w.dim();
    let cell = (-(w.depth() as f64)).exp2();
    // tr(A W A) = Σ_k a_kᵀ W a_k over the columns a_k of the symmetric A
    let cols: Vec<Vec<f64>> = (0..dim).map(|k| (0..dim).map(|i| inv_sqrt.get(i, k)).collect()).collect();
    root.leaf_range(w.depth())
        .map(|x| {
            let leaf = w.field().leaf_slice(x);
            cols.iter().map(|a| quad_form_slice(leaf, dim, a)).sum::<f64>() * cell
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakTypeNodeReport {
    pub node: DyadicInterval,
    pub children: usize,
    /// `Σ|L| / |J'|` over type-2 children.
    pub mass_fraction: f64,
    /// `|{x ∈ J' : S²_{J'} g(x) > C₂⟨‖g‖⟩²}| / |J'|`.
    pub level_set_fraction: f64,
    /// Every type-2 child lies inside the level set.
    pub containment_ok: bool,
    /// `level_set_fraction · √C₂`, a lower estimate of the weak-(1,1) norm.
    pub weak_quotient: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakTypeReport {
    pub ok: bool,
    pub budget: f64,
    pub max_weak_quotient: f64,
    pub max_mass_fraction: f64,
    pub nodes: Vec<WeakTypeNodeReport>,
}

/// Checks each type-2 child of `J'` sits in the level set of the square
/// function of `g = ⟨W⟩_{J'}^{1/2} f` localized to `J'`, and that the
/// level set obeys the configured weak-type budget.
pub fn verify_type2_weak_bound(
    family: &SparseFamily,
    w: &MatrixWeight,
    f: &GridVector,
    cfg: &StoppingConfig,
) -> Result<WeakTypeReport> {
    check_instance(w, f)?;
    let depth = f.depth();
    let nodes: Vec<WeakTypeNodeReport> = family
        .nodes
        .par_iter()
        .filter(|n| n.children.iter().any(|c| family.node(*c).is_some_and(|k| k.trigger.is_type2())))
        .map(|n| {
            let root = n.interval;
            let kids: Vec<DyadicInterval> = n
                .children
                .iter()
                .copied()
                .filter(|c| family.node(*c).is_some_and(|k| k.trigger.is_type2()))
                .collect();
            let frame = RootFrame::new(w, f, root)?;
            let g = localized(f, w.average_sqrt(root), root)?;
            let s2 = unweighted_square_function(&g);
            let threshold = frame.threshold(cfg.c2);
            let above: Vec<bool> = s2.values().iter().map(|v| *v > threshold).collect();
            let containment_ok = kids.iter().all(|l| {
                let r = l.leaf_range(depth);
                let off = root.leaf_range(depth).start;
                above[r.start - off..r.end - off].iter().all(|b| *b)
            });
            let level_set_fraction = above.iter().filter(|b| **b).count() as f64 / above.len() as f64;
            let mass_fraction = kids.iter().map(|l| l.measure()).sum::<f64>() / root.measure();
            let weak_quotient = level_set_fraction * cfg.c2.sqrt();
            Ok(WeakTypeNodeReport {
                node: root,
                children: kids.len(),
                mass_fraction,
                level_set_fraction,
                containment_ok,
                weak_quotient,
                ok: containment_ok && weak_quotient <= cfg.weak_type_budget,
            })
        })
        .collect::<Result<_>>()?;
    Ok(WeakTypeReport {
        ok: nodes.iter().all(|n| n.ok),
        budget: cfg.weak_type_budget,
        max_weak_quotient: nodes.iter().map(|n| n.weak_quotient).fold(0.0, f64::max),
        max_mass_fraction: nodes.iter().map(|n| n.mass_fraction).fold(0.0, f64::max),
        nodes,
    })
}

/// `S f` restricted to the leaves of `root`, rescaled to a grid on `[0, 1]`.
///
/// Rescaling `J'` to `[0, 1]` maps `(g, h_I)/|I|^{1/2}` terms onto the same
/// values, so the square function of the rescaled grid equals the localized
/// square function `Σ_{x ∈ I ⊆ J'} ‖(g, h_I)‖²/|I|` pointwise.
fn localized(f: &GridVector, sqrt: &Matrix, root: DyadicInterval) -> Result<GridVector> {
    let dim = f.dim();
    let range = root.leaf_range(f.depth());
    let mut vals = Vec::with_capacity(range.len() * dim);
    for k in range {
        vals.extend(sqrt.mul_vec(f.leaf(k)));
    }
    GridVector::new(f.depth() - root.level, dim, vals)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalityViolation {
    pub child: DyadicInterval,
    pub ancestor: DyadicInterval,
    pub cond1_norm: f64,
    pub chain_sum: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalityReport {
    pub ok: bool,
    /// Ancestor checks performed.
    pub checked: usize,
    /// Children whose recorded trigger does not actually fire.
    pub untriggered: Vec<DyadicInterval>,
    pub violations: Vec<MaximalityViolation>,
}

/// Recomputes both conditions from scratch for every stopping child and
/// every dyadic `L'` with `L ⊊ L' ⊊ J'`.
pub fn verify_maximality(family: &SparseFamily, w: &MatrixWeight, f: &GridVector) -> Result<MaximalityReport> {
    check_instance(w, f)?;
    let cfg = &family.config;
    let hc = analyze(f);
    let per_node: Vec<(usize, Vec<DyadicInterval>, Vec<MaximalityViolation>)> = family
        .nodes
        .par_iter()
        .filter(|n| !n.children.is_empty())
        .map(|n| {
            let frame = RootFrame::new(w, f, n.interval)?;
            let threshold = frame.threshold(cfg.c2);
            let chain = |l: DyadicInterval| -> f64 {
                let mut s = frame.term(&hc, l);
                let mut cur = l;
                while cur != n.interval {
                    cur = cur.parent().expect("child lies below its root");
                    s += frame.term(&hc, cur);
                }
                s
            };
            let mut checked = 0;
            let mut untriggered = Vec::new();
            let mut violations = Vec::new();
            for &child in &n.children {
                if !(frame.cond1(w, child) > cfg.c1 || chain(child) > threshold) {
                    untriggered.push(child);
                }
                for anc in child.ancestors().take_while(|a| *a != n.interval) {
                    checked += 1;
                    let norm = frame.cond1(w, anc);
                    let sum = chain(anc);
                    if norm > cfg.c1 || sum > threshold {
                        violations.push(MaximalityViolation { child, ancestor: anc, cond1_norm: norm, chain_sum: sum, threshold });
                    }
                }
            }
            Ok((checked, untriggered, violations))
        })
        .collect::<Result<_>>()?;
    let checked = per_node.iter().map(|p| p.0).sum();
    let untriggered: Vec<_> = per_node.iter().flat_map(|p| p.1.clone()).collect();
    let violations: Vec<_> = per_node.into_iter().flat_map(|p| p.2).collect();
    Ok(MaximalityReport { ok: untriggered.is_empty() && violations.is_empty(), checked, untriggered, violations })
}

/// Self-contained record of one sparse-domination run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub depth: u32,
    pub dim: usize,
    pub config: StoppingConfig,
    pub family: SparseFamily,
    pub domination: DominationReport,
    pub sparseness: SparsenessReport,
    pub type1_trace: TraceReport,
    pub type2_weak: WeakTypeReport,
    pub maximality: MaximalityReport,
    pub all_ok: bool,
}

/// Builds the family and runs every check.
pub fn certify(w: &MatrixWeight, f: &GridVector, cfg: &StoppingConfig) -> Result<Certificate> {
    let family = build_sparse_family(w, f, cfg)?;
    let domination = verify_domination(w, f, &family, cfg)?;
    let sparseness = verify_sparseness(&family, cfg.sparseness_target);
    let type1_trace = verify_type1_trace_bound(&family, w)?;
    let type2_weak = verify_type2_weak_bound(&family, w, f, cfg)?;
    let maximality = verify_maximality(&family, w, f)?;
    let all_ok = domination.ok && sparseness.ok && type1_trace.ok && type2_weak.ok && maximality.ok;
    Ok(Certificate {
        depth: f.depth(),
        dim: f.dim(),
        config: cfg.clone(),
        family,
        domination,
        sparseness,
        type1_trace,
        type2_weak,
        maximality,
        all_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{leaf_count, GridMatrixField};
    use crate::sparse::{SparseNode, Trigger};
    use crate::weights::{generate_weight, WeightFamilySpec, WeightKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn haar_root(depth: u32) -> GridVector {
        let n = leaf_count(depth);
        GridVector::new(depth, 1, (0..n).map(|k| if k < n / 2 { 1.0 } else { -1.0 }).collect()).unwrap()
    }

    #[test]
    fn root_only_family() {
        let w = MatrixWeight::identity(5, 1);
        let f = haar_root(5);
        let cfg = StoppingConfig::defaults_for_dim(1);
        let cert = certify(&w, &f, &cfg).unwrap();
        assert_eq!(cert.sparseness.min_ratio, 1.0);
        assert!((cert.domination.lhs - 1.0).abs() < 1e-12);
        assert!((cert.domination.rhs - cfg.domination_constant()).abs() < 1e-9);
        assert!(cert.all_ok);
        assert!(cert.type1_trace.nodes.is_empty() && cert.type2_weak.nodes.is_empty());
    }

    #[test]
    fn zero_function_dominated_trivially() {
        let w = generate_weight(&WeightFamilySpec { kind: WeightKind::RandomLogPd, dim: 2, depth: 5, parameter: 1.0, seed: 1 }).unwrap();
        let f = GridVector::zeros(5, 2);
        let cfg = StoppingConfig::defaults_for_dim(2);
        let fam = build_sparse_family(&w, &f, &cfg).unwrap();
        let d = verify_domination(&w, &f, &fam, &cfg).unwrap();
        assert_eq!((d.lhs, d.rhs), (0.0, 0.0));
        assert!(d.ok);
    }

    #[test]
    fn sparseness_arithmetic() {
        let node = |i: DyadicInterval, children: Vec<DyadicInterval>, e: f64| SparseNode {
            interval: i,
            parent: None,
            generation: 0,
            trigger: Trigger::Root,
            cond1_norm: None,
            chain_sum: None,
            threshold: None,
            children,
            e_measure: e * i.measure(),
            e_ratio: e,
        };
        let fam = SparseFamily {
            depth: 3,
            dim: 1,
            config: StoppingConfig::defaults_for_dim(1),
            generations: 1,
            nodes: vec![node(DyadicInterval::ROOT, vec![], 1.0)],
        };
        let r = verify_sparseness(&fam, 0.5);
        assert!(r.ok && r.min_ratio == 1.0);
        let mut fam = fam;
        fam.nodes[0] = node(DyadicInterval::ROOT, vec![DyadicInterval::new(1, 0), DyadicInterval::new(2, 2)], 0.25);
        let r = verify_sparseness(&fam, 0.5);
        assert!(!r.ok);
        assert_eq!(r.min_ratio, 0.25);
        assert_eq!(r.offending, vec![DyadicInterval::ROOT]);
    }

    #[test]
    fn forced_type1_trace_chain() {
        let w = MatrixWeight::new(GridMatrixField::new(2, 1, vec![0.01, 0.01, 1.0, 1.0]).unwrap()).unwrap();
        let f = haar_root(2);
        let cfg = StoppingConfig { c1: 1.2, ..StoppingConfig::defaults_for_dim(1) };
        let fam = build_sparse_family(&w, &f, &cfg).unwrap();
        let t = verify_type1_trace_bound(&fam, &w).unwrap();
        assert_eq!(t.nodes.len(), 1);
        let n = &t.nodes[0];
        assert_eq!(n.child_mass, 0.5);
        assert!(n.steps_ok.iter().all(|b| *b));
        assert!(t.ok);
        assert!((n.bound - 1.0 / 1.44).abs() < 1e-12);
    }

    #[test]
    fn type2_children_lie_in_level_set() {
        let depth = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut vals = vec![0.0; leaf_count(depth) * 2];
        for _ in 0..3 {
            let k = rng.random_range(0..leaf_count(depth));
            vals[2 * k] = rng.random_range(5.0..50.0);
            vals[2 * k + 1] = rng.random_range(-50.0..-5.0);
        }
        let f = GridVector::new(depth, 2, vals).unwrap();
        let w = generate_weight(&WeightFamilySpec { kind: WeightKind::RandomLogPd, dim: 2, depth, parameter: 0.5, seed: 3 }).unwrap();
        let cfg = StoppingConfig::defaults_for_dim(2);
        let cert = certify(&w, &f, &cfg).unwrap();
        assert!(!cert.type2_weak.nodes.is_empty());
        assert!(cert.type2_weak.nodes.iter().all(|n| n.containment_ok));
        assert!(cert.all_ok, "{:?}", cert.type2_weak);
        assert!(cert.maximality.checked > 0);
        assert!((cert.sparseness.total_e_measure - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tampered_family_fails_maximality() {
        let depth = 8;
        let mut vals = vec![0.0; leaf_count(depth)];
        vals[10] = 1.0;
        let f = GridVector::new(depth, 1, vals).unwrap();
        let w = MatrixWeight::identity(depth, 1);
        let cfg = StoppingConfig::defaults_for_dim(1);
        let mut fam = build_sparse_family(&w, &f, &cfg).unwrap();
        assert!(verify_maximality(&fam, &w, &f).unwrap().ok);
        // Replace the root's first child with one of its own children.
        let k = fam.nodes.iter().position(|n| n.interval == DyadicInterval::ROOT).unwrap();
        let first = fam.nodes[k].children[0];
        fam.nodes[k].children[0] = first.left();
        let r = verify_maximality(&fam, &w, &f).unwrap();
        assert!(!r.ok);
    }

    #[test]
    fn reports_are_deterministic() {
        let w = generate_weight(&WeightFamilySpec { kind: WeightKind::Rotating, dim: 2, depth: 8, parameter: 2.0, seed: 0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = GridVector::new(8, 2, (0..512).map(|_| rng.random_range(-1.0..1.0f64).powi(9)).collect()).unwrap();
        let cfg = StoppingConfig::defaults_for_dim(2);
        let a = serde_json::to_string(&certify(&w, &f, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&certify(&w, &f, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
