//! Relaxation builders for the bounded-distance placement objective.
//!
//! Every edge `(i, j)` with interval `[l, u]` contributes `w (γ + c_g g)` to
//! the objective, with `γ` tied to the lifted matrix through
//! `γ = Y_ii + Y_jj − 2 Y_ij` and `γ ≥ g²`, `g ≥ 0` imposed by small PSD
//! blocks. The lifted matrix `Z = [[I₂, X], [Xᵀ, Y]]` is either constrained
//! as a whole (full relaxation) or through its 4×4 principal submatrices
//! on rows `{1, 2, i, j}` per edge (edge-based relaxation).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ir::{
    AnchorVariant, BlockRole, ConicProblem, Formulation, LiftedLayout, LinearForm, PsdBlock, VarId,
    VarLabel,
};
use crate::bounds::DistanceBounds;
use crate::error::{invalid, Error, Result};
use crate::geometry::{NodeId, Point2};

/// Linear coefficient convention for the distance surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientMode {
    /// `γ − 2(l+u) g`: scalar minimizer at `g = l + u`.
    PaperLiteral,
    /// `γ − (l+u) g`: scalar minimizer at the interval midpoint.
    #[default]
    MidpointConsistent,
}

impl CoefficientMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CoefficientMode::PaperLiteral => "paper-literal",
            CoefficientMode::MidpointConsistent => "midpoint-consistent",
        }
    }
}

impl fmt::Display for CoefficientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoefficientMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper-literal" => Ok(CoefficientMode::PaperLiteral),
            "midpoint" | "midpoint-consistent" => Ok(CoefficientMode::MidpointConsistent),
            other => invalid(format!("unknown coefficient mode '{other}'")),
        }
    }
}

/// Estimated position of an anchor together with its uncertainty radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrior {
    pub j: NodeId,
    pub estimate: Point2,
    pub radius: f64,
    #[serde(default)]
    pub enforce_ball: bool,
}

/// Objective coefficients `(c_γ, c_g)` for one edge.
pub fn edge_objective_term(bounds: &DistanceBounds, weight: f64, mode: CoefficientMode) -> (f64, f64) {
    let span = bounds.lower + bounds.upper;
    match mode {
        CoefficientMode::PaperLiteral => (weight, -2.0 * weight * span),
        CoefficientMode::MidpointConsistent => (weight, -weight * span),
    }
}

/// `[[1, g], [g, γ]] ⪰ 0`, i.e. `γ ≥ g²`.
pub fn epigraph_block(gamma: VarId, g: VarId, role: BlockRole) -> PsdBlock {
    let mut b = PsdBlock::new(2, role);
    b.set_constant(0, 0, 1.0);
    b.set_var(0, 1, g);
    b.set_var(1, 1, gamma);
    b
}

/// `[[g]] ⪰ 0`.
pub fn nonnegative_block(g: VarId, role: BlockRole) -> PsdBlock {
    let mut b = PsdBlock::new(1, role);
    b.set_var(0, 0, g);
    b
}

/// Full relaxation with pinned anchors.
pub fn build_fullsdp(
    bounds: &[DistanceBounds],
    anchors: &BTreeMap<NodeId, Point2>,
    n_sensors: usize,
    mode: CoefficientMode,
) -> Result<ConicProblem> {
    Lift::known(bounds, anchors, n_sensors, Formulation::Fullsdp)?.finish(bounds, mode)
}

/// Edge-based relaxation with pinned anchors.
pub fn build_esdp(
    bounds: &[DistanceBounds],
    anchors: &BTreeMap<NodeId, Point2>,
    n_sensors: usize,
    mode: CoefficientMode,
) -> Result<ConicProblem> {
    Lift::known(bounds, anchors, n_sensors, Formulation::Esdp)?.finish(bounds, mode)
}

/// Full relaxation where anchor positions are variables penalized towards their estimates.
pub fn build_fullsdp_anchor_uncertain(
    bounds: &[DistanceBounds],
    priors: &[AnchorPrior],
    n_sensors: usize,
    mode: CoefficientMode,
) -> Result<ConicProblem> {
    Lift::uncertain(bounds, priors, n_sensors, Formulation::Fullsdp)?.finish(bounds, mode)
}

/// Edge-based relaxation where anchor positions are variables.
pub fn build_esdp_anchor_uncertain(
    bounds: &[DistanceBounds],
    priors: &[AnchorPrior],
    n_sensors: usize,
    mode: CoefficientMode,
) -> Result<ConicProblem> {
    Lift::uncertain(bounds, priors, n_sensors, Formulation::Esdp)?.finish(bounds, mode)
}

/// Index of the upper-triangular entry `(r, c)` in row-major packing.
fn z_var(dim: usize, r: usize, c: usize) -> VarId {
    let (r, c) = if r <= c { (r, c) } else { (c, r) };
    // Row r starts at r*dim - r*(r-1)/2.
    VarId(r * dim - r * r.saturating_sub(1) / 2 + (c - r))
}

struct Lift<'a> {
    layout: LiftedLayout,
    anchors: BTreeMap<NodeId, Point2>,
    priors: Option<&'a [AnchorPrior]>,
    problem: ConicProblem,
}

impl<'a> Lift<'a> {
    fn known(
        bounds: &[DistanceBounds],
        anchors: &BTreeMap<NodeId, Point2>,
        n_sensors: usize,
        formulation: Formulation,
    ) -> Result<Self> {
        let layout = LiftedLayout {
            formulation,
            variant: AnchorVariant::KnownAnchors,
            n_sensors,
            n_anchors: anchors.len(),
        };
        check_anchor_ids(anchors.keys().copied(), n_sensors)?;
        for a in anchors.values() {
            a.validate()?;
        }
        let mut lift = Self::allocate(layout, anchors.clone(), None, bounds)?;
        lift.pin_corner();
        let dim = layout.dim();
        let pinned: Vec<(usize, Point2)> = anchors
            .iter()
            .map(|(&id, &p)| (LiftedLayout::z_index(id), p))
            .collect();
        for &(col, p) in &pinned {
            lift.pin(z_var(dim, 0, col), p.x);
            lift.pin(z_var(dim, 1, col), p.y);
        }
        for (a, &(ca, pa)) in pinned.iter().enumerate() {
            for &(cb, pb) in &pinned[a..] {
                lift.pin(z_var(dim, ca, cb), pa.dot(pb));
            }
        }
        Ok(lift)
    }

    fn uncertain(
        bounds: &[DistanceBounds],
        priors: &'a [AnchorPrior],
        n_sensors: usize,
        formulation: Formulation,
    ) -> Result<Self> {
        let mut anchors = BTreeMap::new();
        for p in priors {
            p.estimate.validate()?;
            if !(p.radius.is_finite() && p.radius >= 0.0) {
                return invalid(format!("anchor {} has invalid radius {}", p.j, p.radius));
            }
            if anchors.insert(p.j, p.estimate).is_some() {
                return invalid(format!("duplicate prior for anchor {}", p.j));
            }
        }
        check_anchor_ids(anchors.keys().copied(), n_sensors)?;
        let layout = LiftedLayout {
            formulation,
            variant: AnchorVariant::UncertainAnchors,
            n_sensors,
            n_anchors: anchors.len(),
        };
        let mut lift = Self::allocate(layout, anchors, Some(priors), bounds)?;
        lift.pin_corner();
        let dim = layout.dim();
        for p in priors {
            let col = LiftedLayout::z_index(p.j);
            let (x, y, yy) = (z_var(dim, 0, col), z_var(dim, 1, col), z_var(dim, col, col));
            let e = p.estimate;
            lift.problem.objective.push(yy, 1.0);
            lift.problem.objective.push(x, -2.0 * e.x);
            lift.problem.objective.push(y, -2.0 * e.y);
            if p.enforce_ball {
                if p.radius == 0.0 {
                    lift.pin(x, e.x);
                    lift.pin(y, e.y);
                    lift.pin(yy, e.norm_sq());
                } else {
                    // Y_jj − 2 x̄ᵀx_j + ‖x̄‖² ≤ u²; with Z ⪰ 0 this bounds ‖x_j − x̄‖ ≤ u.
                    let mut b = PsdBlock::new(1, BlockRole::AnchorBall { j: p.j });
                    let form = LinearForm::new()
                        .with(yy, -1.0)
                        .with(x, 2.0 * e.x)
                        .with(y, 2.0 * e.y);
                    b.set_affine(0, 0, p.radius * p.radius - e.norm_sq(), form);
                    lift.problem.psd_blocks.push(b);
                }
            }
        }
        Ok(lift)
    }

    fn allocate(
        layout: LiftedLayout,
        anchors: BTreeMap<NodeId, Point2>,
        priors: Option<&'a [AnchorPrior]>,
        bounds: &[DistanceBounds],
    ) -> Result<Self> {
        if bounds.is_empty() {
            return invalid("at least one edge is required");
        }
        let n_nodes = layout.n_sensors + layout.n_anchors;
        let mut seen = BTreeSet::new();
        for b in bounds {
            b.validate()?;
            for id in [b.i, b.j] {
                if id.0 == 0 || id.0 > n_nodes {
                    return invalid(format!("unknown node id {id} (expected 1..={n_nodes})"));
                }
            }
            if anchors.contains_key(&b.i) && anchors.contains_key(&b.j) {
                return invalid(format!("edge between two anchors ({}, {})", b.i, b.j));
            }
            let key = if b.i < b.j { (b.i, b.j) } else { (b.j, b.i) };
            if !seen.insert(key) {
                return invalid(format!("duplicate edge ({}, {})", key.0, key.1));
            }
        }

        let dim = layout.dim();
        let n_z = dim * (dim + 1) / 2;
        let mut labels = Vec::with_capacity(n_z + 2 * bounds.len());
        for r in 0..dim {
            for c in r..dim {
                debug_assert_eq!(z_var(dim, r, c).0, labels.len());
                labels.push(VarLabel::Z { row: r, col: c });
            }
        }
        for b in bounds {
            labels.push(VarLabel::Gamma { i: b.i, j: b.j });
            labels.push(VarLabel::Dist { i: b.i, j: b.j });
        }
        let mut problem = ConicProblem::with_vars(labels.len());
        problem.var_labels = labels;
        problem.layout = Some(layout);
        Ok(Self {
            layout,
            anchors,
            priors,
            problem,
        })
    }

    fn pin(&mut self, var: VarId, value: f64) {
        self.problem.add_equality(LinearForm::new().with(var, 1.0), value);
    }

    fn pin_corner(&mut self) {
        let dim = self.layout.dim();
        self.pin(z_var(dim, 0, 0), 1.0);
        self.pin(z_var(dim, 0, 1), 0.0);
        self.pin(z_var(dim, 1, 1), 1.0);
    }

    fn finish(mut self, bounds: &[DistanceBounds], mode: CoefficientMode) -> Result<ConicProblem> {
        let dim = self.layout.dim();
        let n_z = dim * (dim + 1) / 2;
        let known = self.priors.is_none();

        if self.layout.formulation == Formulation::Fullsdp {
            let mut z = PsdBlock::new(dim, BlockRole::LiftedFull);
            for r in 0..dim {
                for c in r..dim {
                    z.set_var(r, c, z_var(dim, r, c));
                }
            }
            self.problem.psd_blocks.push(z);
        }

        for (e, b) in bounds.iter().enumerate() {
            let gamma = VarId(n_z + 2 * e);
            let g = VarId(n_z + 2 * e + 1);
            let (ni, nj) = if b.i < b.j { (b.i, b.j) } else { (b.j, b.i) };
            let (zi, zj) = (LiftedLayout::z_index(ni), LiftedLayout::z_index(nj));

            // γ − Y_ii − Y_jj + 2 Y_ij = 0, with a pinned anchor diagonal moved to the rhs.
            let mut form = LinearForm::new().with(gamma, 1.0);
            let mut rhs = 0.0;
            form.push(z_var(dim, zi, zi), -1.0);
            match self.anchors.get(&nj).filter(|_| known) {
                Some(a) => rhs += a.norm_sq(),
                None => form.push(z_var(dim, zj, zj), -1.0),
            }
            form.push(z_var(dim, zi, zj), 2.0);
            self.problem.add_equality(form, rhs);

            if self.layout.formulation == Formulation::Esdp {
                let idx = [0, 1, zi, zj];
                let mut sub = PsdBlock::new(4, BlockRole::EdgeSubmatrix { i: ni, j: nj });
                for r in 0..4 {
                    for c in r..4 {
                        sub.set_var(r, c, z_var(dim, idx[r], idx[c]));
                    }
                }
                self.problem.psd_blocks.push(sub);
            }
            self.problem
                .psd_blocks
                .push(epigraph_block(gamma, g, BlockRole::Epigraph { i: b.i, j: b.j }));
            self.problem
                .psd_blocks
                .push(nonnegative_block(g, BlockRole::Nonnegative { i: b.i, j: b.j }));

            let (cg, cd) = edge_objective_term(b, b.weight, mode);
            self.problem.objective.push(gamma, cg);
            self.problem.objective.push(g, cd);
        }
        self.problem.validate()?;
        Ok(self.problem)
    }
}

fn check_anchor_ids(ids: impl Iterator<Item = NodeId>, n_sensors: usize) -> Result<()> {
    for (k, id) in ids.enumerate() {
        if id.0 != n_sensors + 1 + k {
            return invalid(format!(
                "anchor ids must be contiguous from {}, found {id}",
                n_sensors + 1
            ));
        }
    }
    Ok(())
}

/// Variable holding `Z[(r, c)]` in a problem built for lifted dimension `dim`.
pub fn lifted_var(dim: usize, r: usize, c: usize) -> VarId {
    z_var(dim, r, c)
}
