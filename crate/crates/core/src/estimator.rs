//! End-to-end localization: bounds, relaxation, solve, read-out, refinement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bounds::{derive_bounds, DistanceBounds, NoiseBoundPolicy, RangeMeasurement};
use crate::error::{invalid, Result};
use crate::geometry::{NodeId, Point2};
use crate::model::{
    build_esdp, build_esdp_anchor_uncertain, build_fullsdp, build_fullsdp_anchor_uncertain, AnchorPrior,
    AnchorVariant, CoefficientMode, ConicProblem, Formulation, LiftedLayout, VarLabel,
};
use crate::sim::squared_errors;
use crate::solver::{solve, Solution, SolutionSummary, SolverSettings, Status};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub formulation: Formulation,
    pub variant: AnchorVariant,
    pub mode: CoefficientMode,
    pub noise_policy: NoiseBoundPolicy,
    /// LOS noise standard deviation used to resolve a sigma-multiple policy.
    pub sigma: f64,
    pub solver: SolverSettings,
    pub refine: bool,
    pub refine_iterations: usize,
    /// Prior radius applied to every anchor in the uncertain-anchor variant.
    pub anchor_radius: f64,
    pub enforce_ball: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            formulation: Formulation::Esdp,
            variant: AnchorVariant::KnownAnchors,
            mode: CoefficientMode::default(),
            noise_policy: NoiseBoundPolicy::default(),
            sigma: 0.01,
            solver: SolverSettings::default(),
            refine: false,
            refine_iterations: 500,
            anchor_radius: 0.0,
            enforce_ball: false,
        }
    }
}

/// Anchor information handed to the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum AnchorInput {
    Known(BTreeMap<NodeId, Point2>),
    Uncertain(Vec<AnchorPrior>),
}

impl AnchorInput {
    /// Priors centered on `anchors` with a common radius.
    pub fn priors_from(anchors: &BTreeMap<NodeId, Point2>, radius: f64, enforce_ball: bool) -> Self {
        AnchorInput::Uncertain(
            anchors
                .iter()
                .map(|(&j, &estimate)| AnchorPrior {
                    j,
                    estimate,
                    radius,
                    enforce_ball,
                })
                .collect(),
        )
    }

    /// Known positions, or the prior estimates.
    pub fn positions(&self) -> BTreeMap<NodeId, Point2> {
        match self {
            AnchorInput::Known(m) => m.clone(),
            AnchorInput::Uncertain(p) => p.iter().map(|a| (a.j, a.estimate)).collect(),
        }
    }

    fn variant(&self) -> AnchorVariant {
        match self {
            AnchorInput::Known(_) => AnchorVariant::KnownAnchors,
            AnchorInput::Uncertain(_) => AnchorVariant::UncertainAnchors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub status: Status,
    pub positions: BTreeMap<NodeId, Point2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_estimates: Option<BTreeMap<NodeId, Point2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sensor_sq_error: Option<BTreeMap<NodeId, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    /// Per sensor `Y_ii − ‖x_i‖²`; zero when the relaxation is tight there.
    pub lift_gap: BTreeMap<NodeId, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolutionSummary>,
    pub inconsistent_edges: Vec<(NodeId, NodeId)>,
    pub refined: bool,
    /// Local-search objective before and after refinement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_objective: Option<(f64, f64)>,
    /// Frame the relaxation was solved in. Solver residuals refer to that
    /// frame; objective values are converted back to meters.
    pub normalization: Normalization,
    pub config: EstimatorConfig,
}

impl EstimationReport {
    fn empty(config: &EstimatorConfig) -> Self {
        Self {
            status: Status::Optimal,
            positions: BTreeMap::new(),
            anchor_estimates: None,
            per_sensor_sq_error: None,
            mse: None,
            lift_gap: BTreeMap::new(),
            solver: None,
            inconsistent_edges: Vec::new(),
            refined: false,
            refine_objective: None,
            normalization: Normalization::identity(),
            config: config.clone(),
        }
    }
}

/// Similarity map onto a frame centered on the anchors with unit spread.
/// The lifted matrix mixes a fixed identity corner with squared
/// coordinates, so solving in meters on a tens-of-meters field is badly
/// conditioned; in this frame all entries are of order one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Point2,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: Point2::new(0.0, 0.0),
            scale: 1.0,
        }
    }

    /// Anchor centroid and largest anchor distance from it; falls back to the
    /// largest upper bound when the anchors do not span a distance.
    pub fn fit(anchors: &BTreeMap<NodeId, Point2>, bounds: &[DistanceBounds]) -> Self {
        if anchors.is_empty() {
            return Self::identity();
        }
        let n = anchors.len() as f64;
        let sum = anchors.values().fold(Point2::new(0.0, 0.0), |acc, &p| acc + p);
        let center = (1.0 / n) * sum;
        let mut scale = anchors.values().map(|p| p.distance(center)).fold(0.0, f64::max);
        if !(scale > 1e-9) {
            scale = bounds.iter().map(|b| b.upper).fold(0.0, f64::max);
        }
        if !(scale > 1e-9 && scale.is_finite()) {
            scale = 1.0;
        }
        Self { center, scale }
    }

    pub fn to_frame(&self, p: Point2) -> Point2 {
        (1.0 / self.scale) * (p - self.center)
    }

    pub fn from_frame(&self, p: Point2) -> Point2 {
        self.center + self.scale * p
    }

    fn bounds(&self, bounds: &[DistanceBounds]) -> Vec<DistanceBounds> {
        bounds
            .iter()
            .map(|b| DistanceBounds {
                lower: b.lower / self.scale,
                upper: b.upper / self.scale,
                ..*b
            })
            .collect()
    }

    fn anchors(&self, input: &AnchorInput) -> AnchorInput {
        match input {
            AnchorInput::Known(m) => AnchorInput::Known(m.iter().map(|(&k, &p)| (k, self.to_frame(p))).collect()),
            AnchorInput::Uncertain(ps) => AnchorInput::Uncertain(
                ps.iter()
                    .map(|a| AnchorPrior {
                        estimate: self.to_frame(a.estimate),
                        radius: a.radius / self.scale,
                        ..*a
                    })
                    .collect(),
            ),
        }
    }

    /// Objective in meters from the frame objective. Edge terms scale with
    /// `scale²`; the anchor-prior terms `‖x_j − x̄_j‖² − ‖x̄_j‖²` also shift
    /// by a constant because `‖x̄_j‖²` is not translation invariant.
    fn objective(&self, value: f64, anchors: &AnchorInput) -> f64 {
        let l2 = self.scale * self.scale;
        let offset = match anchors {
            AnchorInput::Known(_) => 0.0,
            AnchorInput::Uncertain(ps) => ps
                .iter()
                .map(|a| l2 * self.to_frame(a.estimate).norm_sq() - a.estimate.norm_sq())
                .sum(),
        };
        l2 * value + offset
    }
}

/// Builds the relaxation selected by `formulation` and the anchor input.
pub fn build_problem(
    bounds: &[DistanceBounds],
    anchors: &AnchorInput,
    n_sensors: usize,
    formulation: Formulation,
    mode: CoefficientMode,
) -> Result<ConicProblem> {
    match (anchors, formulation) {
        (AnchorInput::Known(a), Formulation::Fullsdp) => build_fullsdp(bounds, a, n_sensors, mode),
        (AnchorInput::Known(a), Formulation::Esdp) => build_esdp(bounds, a, n_sensors, mode),
        (AnchorInput::Uncertain(p), Formulation::Fullsdp) => build_fullsdp_anchor_uncertain(bounds, p, n_sensors, mode),
        (AnchorInput::Uncertain(p), Formulation::Esdp) => build_esdp_anchor_uncertain(bounds, p, n_sensors, mode),
    }
}

/// Builds and solves the relaxation.
pub fn solve_relaxation(
    bounds: &[DistanceBounds],
    anchors: &AnchorInput,
    n_sensors: usize,
    config: &EstimatorConfig,
) -> Result<(ConicProblem, Solution)> {
    let problem = build_problem(bounds, anchors, n_sensors, config.formulation, config.mode)?;
    let solution = solve(&problem, &config.solver)?;
    Ok((problem, solution))
}

/// Positions of every node, read from rows 1:2 of the lifted matrix.
pub fn extract_positions(solution: &Solution, problem: &ConicProblem) -> Result<BTreeMap<NodeId, Point2>> {
    if solution.status == Status::InfeasibleDetected {
        return invalid("no positions: the relaxation was reported infeasible");
    }
    let Some(layout) = problem.layout else {
        return invalid("problem carries no lifted layout");
    };
    if solution.primal_values.len() != problem.num_vars {
        return invalid("solution does not match problem");
    }
    let labels = problem.label_index();
    let value = |row: usize, col: usize| {
        labels
            .get(&VarLabel::Z { row, col })
            .map(|v| solution.primal_values[v.0])
            .ok_or_else(|| crate::Error::InvalidInput(format!("missing label Z({row}, {col})")))
    };
    let mut out = BTreeMap::new();
    for k in 1..=layout.n_sensors + layout.n_anchors {
        let c = LiftedLayout::z_index(NodeId(k));
        out.insert(NodeId(k), Point2::new(value(0, c)?, value(1, c)?));
    }
    Ok(out)
}

fn lift_gaps(solution: &Solution, problem: &ConicProblem, positions: &BTreeMap<NodeId, Point2>) -> BTreeMap<NodeId, f64> {
    let labels = problem.label_index();
    positions
        .iter()
        .filter_map(|(&id, p)| {
            let c = LiftedLayout::z_index(id);
            labels
                .get(&VarLabel::Z { row: c, col: c })
                .map(|v| (id, solution.primal_values[v.0] - p.norm_sq()))
        })
        .collect()
}

/// Runs the full pipeline from raw ranges.
pub fn localize(
    measurements: &[RangeMeasurement],
    anchors: &AnchorInput,
    n_sensors: usize,
    truth: Option<&BTreeMap<NodeId, Point2>>,
    config: &EstimatorConfig,
) -> Result<EstimationReport> {
    if n_sensors == 0 {
        return Ok(EstimationReport::empty(config));
    }
    let bounds = derive_bounds(measurements, &anchors.positions(), config.noise_policy, config.sigma)?;
    localize_bounds(&bounds, anchors, n_sensors, truth, config)
}

/// Runs the pipeline from precomputed distance intervals.
pub fn localize_bounds(
    bounds: &[DistanceBounds],
    anchors: &AnchorInput,
    n_sensors: usize,
    truth: Option<&BTreeMap<NodeId, Point2>>,
    config: &EstimatorConfig,
) -> Result<EstimationReport> {
    if anchors.variant() != config.variant {
        return invalid("anchor input does not match the configured variant");
    }
    if n_sensors == 0 {
        return Ok(EstimationReport::empty(config));
    }
    let frame = Normalization::fit(&anchors.positions(), bounds);
    let (problem, solution) = solve_relaxation(&frame.bounds(bounds), &frame.anchors(anchors), n_sensors, config)?;
    let in_frame = extract_positions(&solution, &problem)?;
    let all: BTreeMap<NodeId, Point2> = in_frame.iter().map(|(&k, &p)| (k, frame.from_frame(p))).collect();
    let is_sensor = |id: &NodeId| id.0 <= n_sensors;
    let mut positions: BTreeMap<NodeId, Point2> = all.iter().filter(|(id, _)| is_sensor(id)).map(|(&k, &v)| (k, v)).collect();
    let anchor_estimates: Option<BTreeMap<NodeId, Point2>> = match anchors {
        AnchorInput::Known(_) => None,
        AnchorInput::Uncertain(_) => Some(all.iter().filter(|(id, _)| !is_sensor(id)).map(|(&k, &v)| (k, v)).collect()),
    };
    let l2 = frame.scale * frame.scale;
    let lift_gap = lift_gaps(&solution, &problem, &in_frame)
        .into_iter()
        .filter(|(id, _)| is_sensor(id))
        .map(|(k, g)| (k, l2 * g))
        .collect();
    let mut summary = solution.summary();
    summary.objective_value = frame.objective(summary.objective_value, anchors);
    summary.dual_objective = frame.objective(summary.dual_objective, anchors);

    let mut refine_objective = None;
    if config.refine {
        let fixed = match anchors {
            AnchorInput::Known(a) => a.clone(),
            AnchorInput::Uncertain(_) => anchor_estimates.clone().unwrap_or_default(),
        };
        let rp = RefineProblem::new(&positions, &fixed, bounds)?;
        let x0 = rp.pack(&positions);
        let before = rp.objective(&x0);
        let x = rp.descend(&x0, config.refine_iterations);
        let after = rp.objective(&x);
        positions = rp.unpack(&x);
        refine_objective = Some((before, after));
    }

    let (per_sensor_sq_error, mse) = match truth {
        Some(t) => {
            let errs = squared_errors(&positions, t)?;
            let mse = errs.values().sum::<f64>() / errs.len() as f64;
            (Some(errs), Some(mse))
        }
        None => (None, None),
    };
    Ok(EstimationReport {
        status: solution.status,
        positions,
        anchor_estimates,
        per_sensor_sq_error,
        mse,
        lift_gap,
        solver: Some(summary),
        inconsistent_edges: bounds.iter().filter(|b| !b.consistent).map(|b| (b.i, b.j)).collect(),
        refined: config.refine,
        refine_objective,
        normalization: frame,
        config: config.clone(),
    })
}

/// Nonconvex objective `Σ w [γ + c_g g]` at an actual placement, i.e. with
/// `γ = d²` and `g = d` for the edge lengths `d` of `positions`.
pub fn placement_objective(
    bounds: &[DistanceBounds],
    positions: &BTreeMap<NodeId, Point2>,
    mode: CoefficientMode,
) -> Result<f64> {
    let mut total = 0.0;
    for b in bounds {
        let (Some(&p), Some(&q)) = (positions.get(&b.i), positions.get(&b.j)) else {
            return invalid(format!("no position for an endpoint of ({}, {})", b.i, b.j));
        };
        let d = p.distance(q);
        let (cg, cd) = crate::model::edge_objective_term(b, b.weight, mode);
        total += cg * d * d + cd * d;
    }
    Ok(total)
}

/// Local-search objective `Σ w [(d − l)² + (d − u)²]` over free node positions.
#[derive(Debug, Clone)]
pub struct RefineProblem {
    free: Vec<NodeId>,
    /// Per edge: endpoint as free index or fixed point, interval, weight.
    edges: Vec<(End, End, f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
enum End {
    Free(usize),
    Fixed(Point2),
}

impl RefineProblem {
    pub fn new(
        initial: &BTreeMap<NodeId, Point2>,
        fixed: &BTreeMap<NodeId, Point2>,
        bounds: &[DistanceBounds],
    ) -> Result<Self> {
        let free: Vec<NodeId> = initial.keys().copied().collect();
        let index: BTreeMap<NodeId, usize> = free.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let end = |id: NodeId| -> Result<End> {
            if let Some(&k) = index.get(&id) {
                Ok(End::Free(k))
            } else if let Some(&p) = fixed.get(&id) {
                Ok(End::Fixed(p))
            } else {
                invalid(format!("node {id} is neither free nor fixed"))
            }
        };
        for p in initial.values() {
            p.validate()?;
        }
        let edges = bounds
            .iter()
            .map(|b| Ok((end(b.i)?, end(b.j)?, b.lower, b.upper, b.weight)))
            .collect::<Result<_>>()?;
        Ok(Self { free, edges })
    }

    pub fn dim(&self) -> usize {
        2 * self.free.len()
    }

    pub fn pack(&self, positions: &BTreeMap<NodeId, Point2>) -> Vec<f64> {
        self.free
            .iter()
            .flat_map(|id| {
                let p = positions[id];
                [p.x, p.y]
            })
            .collect()
    }

    pub fn unpack(&self, x: &[f64]) -> BTreeMap<NodeId, Point2> {
        self.free
            .iter()
            .enumerate()
            .map(|(k, &id)| (id, Point2::new(x[2 * k], x[2 * k + 1])))
            .collect()
    }

    fn point(x: &[f64], e: End) -> Point2 {
        match e {
            End::Free(k) => Point2::new(x[2 * k], x[2 * k + 1]),
            End::Fixed(p) => p,
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|&(a, b, l, u, w)| {
                let d = Self::point(x, a).distance(Self::point(x, b));
                w * ((d - l).powi(2) + (d - u).powi(2))
            })
            .sum()
    }

    /// Gradient; at zero edge length the direction `(1, 0)` is used.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for &(a, b, l, u, w) in &self.edges {
            let diff = Self::point(x, a) - Self::point(x, b);
            let d = diff.norm();
            let dir = if d > 0.0 { (1.0 / d) * diff } else { Point2::new(1.0, 0.0) };
            let s = 2.0 * w * ((d - l) + (d - u));
            if let End::Free(k) = a {
                g[2 * k] += s * dir.x;
                g[2 * k + 1] += s * dir.y;
            }
            if let End::Free(k) = b {
                g[2 * k] -= s * dir.x;
                g[2 * k + 1] -= s * dir.y;
            }
        }
        g
    }

    /// Gradient descent with Armijo backtracking; never increases the objective.
    pub fn descend(&self, x0: &[f64], iterations: usize) -> Vec<f64> {
        let mut x = x0.to_vec();
        let mut f = self.objective(&x);
        let mut step = 1.0;
        for _ in 0..iterations {
            let g = self.gradient(&x);
            let gg: f64 = g.iter().map(|v| v * v).sum();
            if gg.sqrt() <= 1e-9 * (1.0 + f) {
                break;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
                let ft = self.objective(&trial);
                if ft <= f - 1e-4 * step * gg {
                    x = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            step = (step * 2.0).min(1e3);
        }
        x
    }
}

/// Local refinement of `initial` with `fixed` nodes held in place.
pub fn refine(
    initial: &BTreeMap<NodeId, Point2>,
    fixed: &BTreeMap<NodeId, Point2>,
    bounds: &[DistanceBounds],
    iterations: usize,
) -> Result<BTreeMap<NodeId, Point2>> {
    let rp = RefineProblem::new(initial, fixed, bounds)?;
    let x = rp.descend(&rp.pack(initial), iterations);
    Ok(rp.unpack(&x))
}
