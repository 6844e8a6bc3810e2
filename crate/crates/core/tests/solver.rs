use std::time::Instant;

use sdploc::estimator::extract_positions;
use sdploc::model::{
    build_esdp, build_fullsdp, edge_objective_term, BlockRole, CoefficientMode, ConicProblem, LinearForm, PsdBlock,
    VarId,
};
use sdploc::sim::{measure, paper_scenario, random_scenario, Connectivity, NoiseModel, Scenario};
use sdploc::solver::{check_kkt, check_point, solve, solve_with_log, SolverSettings, Status};
use sdploc::{derive_bounds, DistanceBounds, NoiseBoundPolicy, Point2};

/// min t  s.t. [[t, 1], [1, t]] ⪰ 0
fn t_problem() -> ConicProblem {
    let mut p = ConicProblem::with_vars(1);
    p.objective.push(VarId(0), 1.0);
    let mut b = PsdBlock::new(2, BlockRole::Generic);
    b.set_var(0, 0, VarId(0));
    b.set_constant(0, 1, 1.0);
    b.set_var(1, 1, VarId(0));
    p.psd_blocks.push(b);
    p
}

/// min trace(X) over 2×2 PSD X with X_01 = 1.
fn trace_problem() -> ConicProblem {
    let mut p = ConicProblem::with_vars(3);
    p.objective.push(VarId(0), 1.0);
    p.objective.push(VarId(2), 1.0);
    p.add_equality(LinearForm::new().with(VarId(1), 1.0), 1.0);
    let mut b = PsdBlock::new(2, BlockRole::Generic);
    b.set_var(0, 0, VarId(0));
    b.set_var(0, 1, VarId(1));
    b.set_var(1, 1, VarId(2));
    p.psd_blocks.push(b);
    p
}

#[test]
fn minimizes_t_to_one() {
    let p = t_problem();
    let s = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(s.status, Status::Optimal);
    assert!((s.objective_value - 1.0).abs() <= 1e-6, "{}", s.objective_value);
    let k = check_kkt(&p, &s);
    assert!(k.passes(&SolverSettings::default()), "{k:?}");
}

#[test]
fn trace_minimum_is_two() {
    let p = trace_problem();
    let s = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(s.status, Status::Optimal);
    assert!((s.objective_value - 2.0).abs() <= 1e-6);
    for v in &s.primal_values {
        assert!((v - 1.0).abs() < 1e-5);
    }
}

#[test]
fn settings_are_validated() {
    let p = t_problem();
    let bad = SolverSettings { gap_tol: 0.0, ..SolverSettings::default() };
    assert!(solve(&p, &bad).is_err());
    let bad = SolverSettings { max_iters: 0, ..SolverSettings::default() };
    assert!(solve(&p, &bad).is_err());
}

#[test]
fn kkt_of_hand_built_point() {
    let p = t_problem();
    let k = check_point(&p, &[1.0], &[]);
    assert_eq!(k.equality_residual_inf_norm, 0.0);
    assert!(k.min_block_eigenvalue.abs() < 1e-15);
    assert_eq!(k.min_dual_eigenvalue, None);
}

#[test]
fn kkt_reports_perturbation_exactly() {
    let p = trace_problem();
    let mut s = solve(&p, &SolverSettings::default()).unwrap();
    let before = check_kkt(&p, &s).equality_residual_inf_norm;
    s.primal_values[1] += 1e-3;
    let after = check_kkt(&p, &s);
    assert!((after.equality_residual_inf_norm - before - 1e-3).abs() < 1e-12);
    assert!(!after.passes(&SolverSettings::default()));
}

#[test]
fn linear_blocks() {
    // min x + y  s.t.  x ≥ 2, y ≥ −1, x − y ≥ 0 as 1×1 blocks.
    let mut p = ConicProblem::with_vars(2);
    p.objective.push(VarId(0), 1.0);
    p.objective.push(VarId(1), 1.0);
    for (c, terms) in [(-2.0, vec![(0, 1.0)]), (1.0, vec![(1, 1.0)]), (0.0, vec![(0, 1.0), (1, -1.0)])] {
        let mut b = PsdBlock::new(1, BlockRole::Generic);
        let mut f = LinearForm::new();
        for (v, a) in terms {
            f.push(VarId(v), a);
        }
        b.set_affine(0, 0, c, f);
        p.psd_blocks.push(b);
    }
    let s = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(s.status, Status::Optimal);
    assert!((s.objective_value - 1.0).abs() < 1e-6);
    assert!((s.primal_values[0] - 2.0).abs() < 1e-5);
    assert!((s.primal_values[1] + 1.0).abs() < 1e-5);
}

#[test]
fn contradictory_equalities_are_infeasible() {
    let mut p = trace_problem();
    p.add_equality(LinearForm::new().with(VarId(1), 2.0), 3.0);
    let s = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(s.status, Status::InfeasibleDetected);
}

#[test]
fn dependent_equalities_are_dropped() {
    let mut p = trace_problem();
    p.add_equality(LinearForm::new().with(VarId(1), 2.0), 2.0);
    let mut log = Vec::new();
    let s = solve_with_log(&p, &SolverSettings::default(), &mut log).unwrap();
    assert_eq!(s.status, Status::Optimal);
    assert_eq!(s.presolve.dropped_equalities, 1);
    assert!(String::from_utf8(log).unwrap().contains("dependent"));
}

#[test]
fn objective_scaling_leaves_argmin() {
    let sc = random_scenario(31, 3, 3, 40.0, Connectivity::Full);
    let ms = measure(&sc, &NoiseModel::default(), 32).unwrap();
    let bounds = derive_bounds(&ms, &sc.anchor_map(), NoiseBoundPolicy::default(), 0.01).unwrap();
    let p = build_fullsdp(&bounds, &sc.anchor_map(), 3, CoefficientMode::default()).unwrap();
    let mut scaled = p.clone();
    for t in scaled.objective.0.iter_mut() {
        t.1 *= 10.0;
    }
    let a = solve(&p, &SolverSettings::default()).unwrap();
    let b = solve(&scaled, &SolverSettings::default()).unwrap();
    assert_eq!(a.status, Status::Optimal);
    assert_eq!(b.status, Status::Optimal);
    assert!((b.objective_value - 10.0 * a.objective_value).abs() <= 1e-6 * b.objective_value.abs());
    let ea = extract_positions(&a, &p).unwrap();
    let eb = extract_positions(&b, &scaled).unwrap();
    for (id, pa) in &ea {
        assert!(pa.distance(eb[id]) < 1e-3, "{id}: {pa:?} vs {:?}", eb[id]);
    }
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let sc = random_scenario(41, 6, 4, 40.0, Connectivity::Full);
    let ms = measure(&sc, &NoiseModel::default(), 42).unwrap();
    let bounds = derive_bounds(&ms, &sc.anchor_map(), NoiseBoundPolicy::default(), 0.01).unwrap();
    let p = build_esdp(&bounds, &sc.anchor_map(), 6, CoefficientMode::default()).unwrap();
    let a = solve(&p, &SolverSettings::default()).unwrap();
    let b = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
    assert!(a.primal_values.iter().zip(&b.primal_values).all(|(x, y)| x.to_bits() == y.to_bits()));
}

/// Minimum of the placement objective over a 0.01 m grid of the field.
/// With sensor-anchor edges only, the objective separates per sensor.
fn grid_minimum(sc: &Scenario, bounds: &[DistanceBounds], mode: CoefficientMode) -> f64 {
    let anchors = sc.anchor_map();
    let steps = 4000;
    let h = 40.0 / steps as f64;
    (1..=sc.n_sensors())
        .map(|i| {
            let edges: Vec<(Point2, f64, f64)> = bounds
                .iter()
                .filter(|b| b.i.0 == i)
                .map(|b| {
                    let (cg, cd) = edge_objective_term(b, b.weight, mode);
                    (anchors[&b.j], cg, cd)
                })
                .collect();
            let mut best = f64::INFINITY;
            for a in 0..=steps {
                let x = -20.0 + a as f64 * h;
                for c in 0..=steps {
                    let p = Point2::new(x, -20.0 + c as f64 * h);
                    let v: f64 = edges
                        .iter()
                        .map(|&(q, cg, cd)| {
                            let d = p.distance(q);
                            cg * d * d + cd * d
                        })
                        .sum();
                    best = best.min(v);
                }
            }
            best
        })
        .sum()
}

#[test]
fn fullsdp_value_lower_bounds_grid_search() {
    let sc = random_scenario(51, 3, 3, 40.0, Connectivity::SensorAnchorOnly);
    let ms = measure(&sc, &NoiseModel::default(), 52).unwrap();
    let bounds = derive_bounds(&ms, &sc.anchor_map(), NoiseBoundPolicy::default(), 0.01).unwrap();
    for mode in [CoefficientMode::PaperLiteral, CoefficientMode::MidpointConsistent] {
        let p = build_fullsdp(&bounds, &sc.anchor_map(), 3, mode).unwrap();
        let s = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        let grid = grid_minimum(&sc, &bounds, mode);
        assert!(
            s.objective_value <= grid + 1e-6 * grid.abs().max(1.0),
            "{mode}: sdp {} grid {grid}",
            s.objective_value
        );
    }
}

#[test]
fn paper_scale_esdp_passes_kkt() {
    let sc = paper_scenario(9);
    let ms = measure(&sc, &NoiseModel::default(), 10).unwrap();
    let bounds = derive_bounds(&ms, &sc.anchor_map(), NoiseBoundPolicy::default(), 0.01).unwrap();
    let p = build_esdp(&bounds, &sc.anchor_map(), 80, CoefficientMode::default()).unwrap();
    let settings = SolverSettings::default();
    let s = solve(&p, &settings).unwrap();
    assert_eq!(s.status, Status::Optimal, "{:?}", s.message);
    let k = check_kkt(&p, &s);
    assert!(k.passes(&settings), "{k:?}");
}

/// Seconds per iteration, best of three.
fn per_iteration(p: &ConicProblem) -> f64 {
    (0..3)
        .map(|_| {
            let t = Instant::now();
            let s = solve(p, &SolverSettings::default()).unwrap();
            t.elapsed().as_secs_f64() / s.iterations.max(1) as f64
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn esdp_cost_grows_linearly_in_blocks() {
    let build = |n: usize| {
        let sc = random_scenario(61, n, 8, 40.0, Connectivity::SensorAnchorOnly);
        let ms = measure(&sc, &NoiseModel::default(), 62).unwrap();
        let bounds = derive_bounds(&ms, &sc.anchor_map(), NoiseBoundPolicy::default(), 0.01).unwrap();
        build_esdp(&bounds, &sc.anchor_map(), n, CoefficientMode::default()).unwrap()
    };
    let (small, large) = (build(100), build(200));
    let ratio = per_iteration(&large) / per_iteration(&small);
    assert!(ratio < 3.0, "doubling the blocks multiplied per-iteration time by {ratio:.2}");
}
