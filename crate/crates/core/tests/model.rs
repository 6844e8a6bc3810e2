use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use sdploc::estimator::placement_objective;
use sdploc::model::{
    build_esdp, build_esdp_anchor_uncertain, build_fullsdp, build_fullsdp_anchor_uncertain, edge_objective_term,
    lifted_var, AnchorPrior, BlockRole, CoefficientMode, ConicProblem, LiftedLayout, VarLabel,
};
use sdploc::sim::{paper_scenario, random_scenario, Connectivity};
use sdploc::{DistanceBounds, NodeId, Point2};

fn anchors(points: &[(f64, f64)], first_id: usize) -> BTreeMap<NodeId, Point2> {
    points
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| (NodeId(first_id + k), Point2::new(x, y)))
        .collect()
}

fn count_roles(p: &ConicProblem, pred: impl Fn(&BlockRole) -> bool) -> usize {
    p.psd_blocks.iter().filter(|b| pred(&b.role)).count()
}

/// Lifted assignment of an actual placement: `Z = [I X; Xᵀ XᵀX]`, `γ = d²`, `g = d`.
fn lift(p: &ConicProblem, positions: &BTreeMap<NodeId, Point2>) -> Vec<f64> {
    let layout = p.layout.unwrap();
    let dim = layout.dim();
    let mut cols = vec![(0.0, 0.0); dim];
    cols[0] = (1.0, 0.0);
    cols[1] = (0.0, 1.0);
    for (&id, q) in positions {
        cols[LiftedLayout::z_index(id)] = (q.x, q.y);
    }
    let dot = |a: (f64, f64), b: (f64, f64)| a.0 * b.0 + a.1 * b.1;
    p.var_labels
        .iter()
        .map(|l| match *l {
            VarLabel::Z { row, col } => dot(cols[row], cols[col]),
            VarLabel::Gamma { i, j } => positions[&i].distance(positions[&j]).powi(2),
            VarLabel::Dist { i, j } => positions[&i].distance(positions[&j]),
            VarLabel::Free => 0.0,
        })
        .collect()
}

fn min_eig(m: nalgebra::DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(m).eigenvalues.min()
}

#[test]
fn objective_terms_per_mode() {
    let b = DistanceBounds::new(1, 2, 2.0, 4.0);
    assert_eq!(edge_objective_term(&b, 1.0, CoefficientMode::PaperLiteral), (1.0, -12.0));
    assert_eq!(edge_objective_term(&b, 1.0, CoefficientMode::MidpointConsistent), (1.0, -6.0));
    let zero = DistanceBounds::new(1, 2, 0.0, 0.0);
    for mode in [CoefficientMode::PaperLiteral, CoefficientMode::MidpointConsistent] {
        assert_eq!(edge_objective_term(&zero, 1.0, mode), (1.0, 0.0));
    }
}

#[test]
fn one_sensor_two_anchors_counts() {
    let a = anchors(&[(0.0, 0.0), (10.0, 0.0)], 2);
    let bounds = vec![DistanceBounds::new(1, 2, 1.0, 2.0), DistanceBounds::new(1, 3, 8.0, 9.0)];
    let p = build_fullsdp(&bounds, &a, 1, CoefficientMode::default()).unwrap();
    assert_eq!(p.layout.unwrap().dim(), 5);
    let gamma_eqs = p
        .equalities
        .iter()
        .filter(|e| e.form.terms().iter().any(|(v, _)| matches!(p.var_labels[v.0], VarLabel::Gamma { .. })))
        .count();
    assert_eq!(gamma_eqs, 2);
    assert_eq!(count_roles(&p, |r| matches!(r, BlockRole::Epigraph { .. })), 2);
    assert_eq!(count_roles(&p, |r| matches!(r, BlockRole::Nonnegative { .. })), 2);
    assert_eq!(count_roles(&p, |r| matches!(r, BlockRole::LiftedFull)), 1);
}

#[test]
fn anchor_entries_are_pinned() {
    let a = anchors(&[(0.0, 0.0), (10.0, 0.0)], 2);
    let bounds = vec![DistanceBounds::new(1, 2, 1.0, 2.0), DistanceBounds::new(1, 3, 8.0, 9.0)];
    let p = build_fullsdp(&bounds, &a, 1, CoefficientMode::default()).unwrap();
    let pins: HashMap<usize, f64> = p
        .equalities
        .iter()
        .filter(|e| e.form.terms().len() == 1 && e.form.terms()[0].1 == 1.0)
        .map(|e| (e.form.terms()[0].0 .0, e.rhs))
        .collect();
    let dim = 5;
    let pinned = |r, c| pins.get(&lifted_var(dim, r, c).0).copied();
    // Identity corner.
    assert_eq!(pinned(0, 0), Some(1.0));
    assert_eq!(pinned(0, 1), Some(0.0));
    assert_eq!(pinned(1, 1), Some(1.0));
    // Anchor 2 at (0,0) in column 3, anchor 3 at (10,0) in column 4.
    assert_eq!(pinned(0, 3), Some(0.0));
    assert_eq!(pinned(1, 3), Some(0.0));
    assert_eq!(pinned(0, 4), Some(10.0));
    assert_eq!(pinned(1, 4), Some(0.0));
    assert_eq!(pinned(3, 3), Some(0.0));
    assert_eq!(pinned(3, 4), Some(0.0));
    assert_eq!(pinned(4, 4), Some(100.0));
    // Sensor column stays free.
    assert_eq!(pinned(0, 2), None);
    assert_eq!(pinned(2, 2), None);
}

#[test]
fn paper_scale_esdp_has_one_block_per_edge() {
    let sc = paper_scenario(3);
    let bounds: Vec<DistanceBounds> = sc
        .edges()
        .into_iter()
        .map(|(i, j)| DistanceBounds::new(i.0, j.0, 0.0, 1.0))
        .collect();
    assert_eq!(bounds.len(), 80 * 18 + 80 * 79 / 2);
    let p = build_esdp(&bounds, &sc.anchor_map(), 80, CoefficientMode::default()).unwrap();
    let edge_blocks: Vec<_> = p
        .psd_blocks
        .iter()
        .filter(|b| matches!(b.role, BlockRole::EdgeSubmatrix { .. }))
        .collect();
    assert_eq!(edge_blocks.len(), 4600);
    assert!(edge_blocks.iter().all(|b| b.dim == 4));
    assert_eq!(count_roles(&p, |r| matches!(r, BlockRole::LiftedFull)), 0);
}

#[test]
fn prior_term_completes_the_square() {
    let prior = AnchorPrior {
        j: NodeId(2),
        estimate: Point2::new(3.0, 4.0),
        radius: 1.0,
        enforce_ball: false,
    };
    let bounds = vec![DistanceBounds::new(1, 2, 1.0, 2.0)];
    let p = build_fullsdp_anchor_uncertain(&bounds, &[prior], 1, CoefficientMode::default()).unwrap();
    let dim = p.layout.unwrap().dim();
    let mut y = vec![0.0; p.num_vars];
    y[lifted_var(dim, 0, 3).0] = 3.0;
    y[lifted_var(dim, 1, 3).0] = 4.0;
    y[lifted_var(dim, 3, 3).0] = 25.0;
    // Only the prior term is nonzero: edge variables are all zero.
    assert_eq!(p.objective_value(&y), -25.0);
}

#[test]
fn uncertain_anchor_columns_are_released() {
    let a = anchors(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)], 2);
    let bounds: Vec<DistanceBounds> = (2..=4).map(|j| DistanceBounds::new(1, j, 1.0, 2.0)).collect();
    let known = build_fullsdp(&bounds, &a, 1, CoefficientMode::default()).unwrap();
    let priors: Vec<AnchorPrior> = a
        .iter()
        .map(|(&j, &estimate)| AnchorPrior {
            j,
            estimate,
            radius: 0.5,
            enforce_ball: false,
        })
        .collect();
    let uncertain = build_fullsdp_anchor_uncertain(&bounds, &priors, 1, CoefficientMode::default()).unwrap();
    assert_eq!(known.layout.unwrap().dim(), 6);
    let pinned_x = |p: &ConicProblem| {
        p.equalities
            .iter()
            .filter(|e| {
                e.form.terms().len() == 1
                    && matches!(p.var_labels[e.form.terms()[0].0 .0], VarLabel::Z { row, col } if row < 2 && col >= 3)
            })
            .count()
    };
    assert_eq!(pinned_x(&known) - pinned_x(&uncertain), 6);
    assert_eq!(pinned_x(&uncertain), 0);
}

#[test]
fn formulations_share_variables() {
    let sc = random_scenario(11, 4, 3, 40.0, Connectivity::Full);
    let bounds: Vec<DistanceBounds> = sc
        .edges()
        .into_iter()
        .map(|(i, j)| DistanceBounds::new(i.0, j.0, 0.5, 3.0))
        .collect();
    let full = build_fullsdp(&bounds, &sc.anchor_map(), 4, CoefficientMode::default()).unwrap();
    let esdp = build_esdp(&bounds, &sc.anchor_map(), 4, CoefficientMode::default()).unwrap();
    assert_eq!(full.var_labels, esdp.var_labels);
    assert_eq!(full.objective, esdp.objective);
    assert_eq!(full.equalities, esdp.equalities);
}

#[test]
fn json_round_trip_is_byte_identical() {
    let sc = random_scenario(5, 3, 3, 40.0, Connectivity::Full);
    let bounds: Vec<DistanceBounds> = sc
        .edges()
        .into_iter()
        .map(|(i, j)| DistanceBounds::new(i.0, j.0, 0.25, 7.5))
        .collect();
    let p = build_esdp(&bounds, &sc.anchor_map(), 3, CoefficientMode::PaperLiteral).unwrap();
    let text = p.to_json().unwrap();
    let back = ConicProblem::from_json(&text).unwrap();
    assert_eq!(back, p);
    assert_eq!(back.to_json().unwrap(), text);
}

#[test]
fn truth_lift_is_feasible_and_matches_placement_objective() {
    let sc = random_scenario(21, 5, 4, 40.0, Connectivity::Full);
    let mut all = sc.truth();
    all.extend(sc.anchor_map());
    let bounds: Vec<DistanceBounds> = sc
        .edges()
        .into_iter()
        .map(|(i, j)| {
            let d = all[&i].distance(all[&j]);
            DistanceBounds::new(i.0, j.0, 0.8 * d, d + 0.1)
        })
        .collect();
    for mode in [CoefficientMode::PaperLiteral, CoefficientMode::MidpointConsistent] {
        for p in [
            build_fullsdp(&bounds, &sc.anchor_map(), 5, mode).unwrap(),
            build_esdp(&bounds, &sc.anchor_map(), 5, mode).unwrap(),
        ] {
            let y = lift(&p, &all);
            let res = p.equality_residuals(&y).into_iter().fold(0.0f64, |m, r| m.max(r.abs()));
            assert!(res < 1e-9, "{res}");
            for b in &p.psd_blocks {
                assert!(min_eig(b.eval(&y)) > -1e-9);
            }
            let expected = placement_objective(&bounds, &all, mode).unwrap();
            assert!((p.objective_value(&y) - expected).abs() < 1e-9 * expected.abs().max(1.0));
        }
    }
}

#[test]
fn rejects_anchor_anchor_edges_and_unknown_nodes() {
    let a = anchors(&[(0.0, 0.0), (10.0, 0.0)], 2);
    let aa = vec![DistanceBounds::new(2, 3, 9.0, 10.0)];
    assert!(build_fullsdp(&aa, &a, 1, CoefficientMode::default()).is_err());
    let unknown = vec![DistanceBounds::new(1, 9, 1.0, 2.0)];
    assert!(build_esdp(&unknown, &a, 1, CoefficientMode::default()).is_err());
}

#[test]
fn ball_with_radius_zero_pins_the_anchor() {
    let prior = AnchorPrior {
        j: NodeId(2),
        estimate: Point2::new(3.0, 4.0),
        radius: 0.0,
        enforce_ball: true,
    };
    let bounds = vec![DistanceBounds::new(1, 2, 1.0, 2.0)];
    let p = build_esdp_anchor_uncertain(&bounds, &[prior], 1, CoefficientMode::default()).unwrap();
    let dim = p.layout.unwrap().dim();
    let rhs_of = |v: usize| {
        p.equalities
            .iter()
            .find(|e| e.form.terms() == [(sdploc::model::VarId(v), 1.0)])
            .map(|e| e.rhs)
    };
    assert_eq!(rhs_of(lifted_var(dim, 0, 3).0), Some(3.0));
    assert_eq!(rhs_of(lifted_var(dim, 1, 3).0), Some(4.0));
    assert_eq!(rhs_of(lifted_var(dim, 3, 3).0), Some(25.0));
    assert_eq!(count_roles(&p, |r| matches!(r, BlockRole::AnchorBall { .. })), 0);
}

proptest! {
    #[test]
    fn every_edge_variable_sits_in_one_epigraph_block(
        seed in 0u64..500,
        n in 1usize..5,
        m in 1usize..4,
        esdp in any::<bool>(),
    ) {
        let sc = random_scenario(seed, n, m, 40.0, Connectivity::Full);
        let bounds: Vec<DistanceBounds> = sc
            .edges()
            .into_iter()
            .map(|(i, j)| DistanceBounds::new(i.0, j.0, 0.0, 1.0))
            .collect();
        let p = if esdp {
            build_esdp(&bounds, &sc.anchor_map(), n, CoefficientMode::default()).unwrap()
        } else {
            build_fullsdp(&bounds, &sc.anchor_map(), n, CoefficientMode::default()).unwrap()
        };
        let mut seen = vec![0usize; p.num_vars];
        for b in p.psd_blocks.iter().filter(|b| matches!(b.role, BlockRole::Epigraph { .. })) {
            for v in b.vars().collect::<std::collections::BTreeSet<_>>() {
                seen[v.0] += 1;
            }
        }
        for (k, label) in p.var_labels.iter().enumerate() {
            if matches!(label, VarLabel::Gamma { .. } | VarLabel::Dist { .. }) {
                prop_assert_eq!(seen[k], 1);
            }
        }
        prop_assert!(p.validate().is_ok());
    }
}
