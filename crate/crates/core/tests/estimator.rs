use std::collections::BTreeMap;

use proptest::prelude::*;
use sdploc::estimator::{extract_positions, refine, solve_relaxation, RefineProblem};
use sdploc::sim::{measure, random_scenario, Connectivity, NoiseModel};
use sdploc::{
    derive_bounds, localize, localize_bounds, AnchorInput, DistanceBounds, EstimatorConfig, Formulation,
    NoiseBoundPolicy, NodeId, Point2, RangeMeasurement, SolverSettings, Status,
};

fn anchors() -> BTreeMap<NodeId, Point2> {
    BTreeMap::from([
        (NodeId(2), Point2::new(0.0, 0.0)),
        (NodeId(3), Point2::new(10.0, 0.0)),
        (NodeId(4), Point2::new(0.0, 10.0)),
    ])
}

fn exact_ranges() -> Vec<(usize, f64)> {
    vec![(2, 5.0), (3, 65f64.sqrt()), (4, 45f64.sqrt())]
}

fn zero_width() -> Vec<DistanceBounds> {
    exact_ranges().into_iter().map(|(j, d)| DistanceBounds::new(1, j, d, d)).collect()
}

/// Brute force over a 0.01 m grid of `Σ [d² − (l + u) d]`, the midpoint
/// objective at an actual placement of the single sensor.
fn grid_argmin(bounds: &[DistanceBounds], lo: f64, hi: f64) -> Point2 {
    let a = anchors();
    let steps = ((hi - lo) / 0.01).round() as usize;
    let mut best = (f64::INFINITY, Point2::new(0.0, 0.0));
    for ix in 0..=steps {
        for iy in 0..=steps {
            let p = Point2::new(lo + ix as f64 * 0.01, lo + iy as f64 * 0.01);
            let f: f64 = bounds
                .iter()
                .map(|b| {
                    let d = p.distance(a[&b.j]);
                    d * d - (b.lower + b.upper) * d
                })
                .sum();
            if f < best.0 {
                best = (f, p);
            }
        }
    }
    best.1
}

#[test]
fn zero_width_bounds_recover_the_sensor() {
    let target = Point2::new(3.0, 4.0);
    let oracle = grid_argmin(&zero_width(), -1.0, 11.0);
    assert!(oracle.distance(target) < 0.011, "oracle {oracle:?}");
    for formulation in [Formulation::Esdp, Formulation::Fullsdp] {
        let config = EstimatorConfig {
            formulation,
            ..Default::default()
        };
        let r = localize_bounds(&zero_width(), &AnchorInput::Known(anchors()), 1, None, &config).unwrap();
        assert_eq!(r.status, Status::Optimal);
        let p = r.positions[&NodeId(1)];
        assert!(p.distance(target) < 1e-3, "{formulation:?}: {p:?}");
    }
}

/// With 0.2 m slack the geometric lowers fall well short of the true
/// distances, so every interval midpoint is short and the minimizer moves
/// about 0.5 m toward the origin. The estimate must land on that minimizer.
#[test]
fn slack_uppers_land_on_the_grid_minimizer() {
    let ms: Vec<_> = exact_ranges().into_iter().map(|(j, d)| RangeMeasurement::new(1, j, d)).collect();
    let bounds = derive_bounds(&ms, &anchors(), NoiseBoundPolicy::Absolute(0.2), 0.0).unwrap();
    assert!(bounds.iter().all(|b| b.lower > 0.0 && b.consistent));
    let oracle = grid_argmin(&bounds, -1.0, 11.0);
    // Frozen from the grid search above.
    assert!(oracle.distance(Point2::new(2.65, 3.62)) < 1e-9, "oracle {oracle:?}");
    let config = EstimatorConfig {
        noise_policy: NoiseBoundPolicy::Absolute(0.2),
        ..Default::default()
    };
    let r = localize(&ms, &AnchorInput::Known(anchors()), 1, None, &config).unwrap();
    assert_eq!(r.status, Status::Optimal);
    let p = r.positions[&NodeId(1)];
    assert!(p.distance(oracle) < 0.015, "{p:?}");
    let miss = p.distance(Point2::new(3.0, 4.0));
    assert!(miss > 0.45 && miss < 0.55, "{miss}");
}

#[test]
fn zero_sensors_give_an_empty_report() {
    let r = localize(&[], &AnchorInput::Known(anchors()), 0, None, &EstimatorConfig::default()).unwrap();
    assert!(r.positions.is_empty());
    assert!(r.mse.is_none());
    assert!(r.solver.is_none());
}

#[test]
fn pinned_anchor_is_read_back_exactly() {
    let config = EstimatorConfig {
        formulation: Formulation::Fullsdp,
        ..Default::default()
    };
    let (problem, solution) = solve_relaxation(&zero_width(), &AnchorInput::Known(anchors()), 1, &config).unwrap();
    let all = extract_positions(&solution, &problem).unwrap();
    assert_eq!(all[&NodeId(2)], Point2::new(0.0, 0.0));
    assert_eq!(all[&NodeId(3)], Point2::new(10.0, 0.0));
}

#[test]
fn capped_iterations_still_extract_positions() {
    let s = random_scenario(3, 6, 4, 20.0, Connectivity::Full);
    let ms = measure(&s, &NoiseModel::default(), 4).unwrap();
    let config = EstimatorConfig {
        solver: SolverSettings {
            max_iters: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let r = localize(&ms, &AnchorInput::Known(s.anchor_map()), 6, Some(&s.truth()), &config).unwrap();
    assert_ne!(r.status, Status::Optimal);
    assert_eq!(r.positions.len(), 6);
    assert!(r.positions.values().all(|p| p.x.is_finite() && p.y.is_finite()));
}

#[test]
fn refining_the_exact_minimizer_is_a_no_op() {
    let start = BTreeMap::from([(NodeId(1), Point2::new(3.0, 4.0))]);
    let out = refine(&start, &anchors(), &zero_width(), 100).unwrap();
    assert_eq!(out, start);
}

#[test]
fn refinement_helps_in_most_noisy_trials() {
    let mut better = 0;
    for seed in 0..20u64 {
        let s = random_scenario(seed, 5, 4, 20.0, Connectivity::Full);
        let ms = measure(&s, &NoiseModel::default(), seed + 1000).unwrap();
        let input = AnchorInput::Known(s.anchor_map());
        let plain = localize(&ms, &input, 5, Some(&s.truth()), &EstimatorConfig::default()).unwrap();
        let config = EstimatorConfig {
            refine: true,
            ..Default::default()
        };
        let refined = localize(&ms, &input, 5, Some(&s.truth()), &config).unwrap();
        let (before, after) = refined.refine_objective.unwrap();
        assert!(after <= before);
        if refined.mse.unwrap() <= plain.mse.unwrap() {
            better += 1;
        }
    }
    assert!(better > 10, "refinement helped in {better} of 20 trials");
}

#[test]
fn estimates_translate_with_the_anchors() {
    let s = random_scenario(11, 6, 4, 20.0, Connectivity::Full);
    let ms = measure(&s, &NoiseModel::default(), 12).unwrap();
    let shift = Point2::new(250.0, -75.0);
    let moved: BTreeMap<_, _> = s.anchor_map().into_iter().map(|(k, p)| (k, p + shift)).collect();
    let config = EstimatorConfig::default();
    let a = localize(&ms, &AnchorInput::Known(s.anchor_map()), 6, None, &config).unwrap();
    let b = localize(&ms, &AnchorInput::Known(moved), 6, None, &config).unwrap();
    for (id, p) in &a.positions {
        let q = b.positions[id] - shift;
        assert!(p.distance(q) < 1e-4, "sensor {id}: {p:?} vs {q:?}");
    }
}

#[test]
fn stored_mse_matches_per_sensor_errors() {
    let s = random_scenario(5, 7, 4, 20.0, Connectivity::Full);
    let ms = measure(&s, &NoiseModel::default(), 6).unwrap();
    let r = localize(&ms, &AnchorInput::Known(s.anchor_map()), 7, Some(&s.truth()), &EstimatorConfig::default()).unwrap();
    let errs = r.per_sensor_sq_error.as_ref().unwrap();
    assert_eq!(errs.len(), 7);
    assert_eq!(r.mse.unwrap(), errs.values().sum::<f64>() / errs.len() as f64);
}

proptest! {
    #[test]
    fn descent_never_increases_the_objective(
        start in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..5),
        widths in prop::collection::vec((0.1f64..15.0, 0.0f64..3.0), 12),
    ) {
        let n = start.len();
        let initial: BTreeMap<_, _> = start.iter().enumerate().map(|(k, &(x, y))| (NodeId(k + 1), Point2::new(x, y))).collect();
        let fixed: BTreeMap<_, _> = anchors().into_values().enumerate().map(|(k, p)| (NodeId(n + 1 + k), p)).collect();
        let mut bounds = Vec::new();
        let mut w = widths.iter();
        for i in 1..=n {
            for j in (i + 1..=n).chain(n + 1..=n + 3) {
                if let Some(&(l, extra)) = w.next() {
                    bounds.push(DistanceBounds::new(i, j, l, l + extra));
                }
            }
        }
        let rp = RefineProblem::new(&initial, &fixed, &bounds).unwrap();
        let x0 = rp.pack(&initial);
        let x = rp.descend(&x0, 50);
        prop_assert!(rp.objective(&x) <= rp.objective(&x0));
    }
}
