//! Primal-dual interior-point iteration on the presolved problem
//! `min cᵀz  s.t.  S_b = C_b + Σ z_k G_bk ⪰ 0`, with block duals `Λ_b`.
//!
//! Directions use Nesterov-Todd scaling `W S W = Λ`, computed per block
//! from Cholesky factors and one small SVD, and the Schur complement
//! `M_kl = Σ_b ⟨G_bk, W_b G_bl W_b⟩` is factorized by sparse LDLᵀ.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::ldl::{LdlFactor, LdlSymbolic, SymPattern};
use super::presolve::Presolved;
use super::{SolverSettings, Status};

/// Fraction of the distance to the cone boundary taken per step.
const STEP_FRACTION: f64 = 0.98;
/// Iterates beyond this magnitude are taken as evidence of infeasibility.
const DIVERGENCE: f64 = 1e13;
/// Iterations without improving the best iterate before giving up.
const STALL_LIMIT: usize = 6;
/// Extra iterations taken after the tolerances are met, keeping the best iterate.
const POLISH_ITERS: usize = 4;
/// Conjugate-gradient steps per Schur solve.
const CG_ITERS: usize = 8;
/// Schur pivots below this fraction of their diagonal are treated as zero.
const PIVOT_TOL: f64 = 1e-15;

pub(crate) struct Outcome {
    pub z: Vec<f64>,
    pub lambdas: Vec<DMatrix<f64>>,
    pub status: Status,
    pub iterations: usize,
    pub dual_objective: f64,
    pub rel_gap: f64,
    pub dual_feasible: bool,
    pub message: Option<String>,
}

/// One `G_bk` with its nonzeros listed over the full matrix.
struct Term {
    var: usize,
    full: Vec<(usize, usize, f64)>,
}

struct Block {
    dim: usize,
    constant: DMatrix<f64>,
    terms: Vec<Term>,
    /// Position in the Schur value array of pair `(t1, t2)`, `t1 ≤ t2`, stored
    /// at `t2 (t2 + 1) / 2 + t1`.
    pair_pos: Vec<usize>,
}

impl Block {
    fn apply(&self, z: &[f64]) -> DMatrix<f64> {
        let mut s = self.constant.clone();
        for t in &self.terms {
            let v = z[t.var];
            if v != 0.0 {
                for &(p, q, u) in &t.full {
                    s[(p, q)] += u * v;
                }
            }
        }
        s
    }

    /// `G*(X)_k` contributions.
    fn adjoint(&self, x: &DMatrix<f64>, out: &mut [f64]) {
        for t in &self.terms {
            out[t.var] += t.full.iter().map(|&(p, q, u)| u * x[(p, q)]).sum::<f64>();
        }
    }

    fn schur(&self, w: &DMatrix<f64>) -> Vec<f64> {
        let nt = self.terms.len();
        let mut out = Vec::with_capacity(nt * (nt + 1) / 2);
        for t2 in 0..nt {
            let b = &self.terms[t2].full;
            for t1 in 0..=t2 {
                let mut s = 0.0;
                for &(p, q, u) in &self.terms[t1].full {
                    for &(r, c, v) in b {
                        s += u * v * w[(q, r)] * w[(c, p)];
                    }
                }
                out.push(s);
            }
        }
        out
    }
}

/// Per-block scaling data for one iteration.
struct Scaling {
    g: DMatrix<f64>,
    w: DMatrix<f64>,
    d: Vec<f64>,
}

fn nt_scaling(s: &DMatrix<f64>, lam: &DMatrix<f64>) -> Option<Scaling> {
    let ls = s.clone().cholesky()?.l();
    let ll = lam.clone().cholesky()?.l();
    let svd = (ls.transpose() * &ll).svd(false, true);
    let vt = svd.v_t?;
    let d: Vec<f64> = svd.singular_values.iter().copied().collect();
    if d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return None;
    }
    let mut g = ll * vt.transpose();
    for (j, &dj) in d.iter().enumerate() {
        let f = 1.0 / dj.sqrt();
        g.column_mut(j).scale_mut(f);
    }
    let w = &g * g.transpose();
    Some(Scaling { g, w, d })
}

/// Largest `α` with `D + α Δ ⪰ 0` for diagonal positive `D`, capped at 1e30.
fn max_step(d: &[f64], delta: &DMatrix<f64>) -> f64 {
    let n = d.len();
    let m = DMatrix::from_fn(n, n, |i, j| delta[(i, j)] / (d[i] * d[j]).sqrt());
    let lmin = if n == 1 {
        m[(0, 0)]
    } else {
        SymmetricEigen::new(m).eigenvalues.min()
    };
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        1e30
    }
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

struct Direction {
    dz: Vec<f64>,
    ds: Vec<DMatrix<f64>>,
    dl: Vec<DMatrix<f64>>,
    /// Scaled `GᵀΔS G` and `G⁻¹ΔΛ G⁻ᵀ`.
    ds_t: Vec<DMatrix<f64>>,
    dl_t: Vec<DMatrix<f64>>,
    alpha_p: f64,
    alpha_d: f64,
}

struct Schur<'a> {
    sym: &'a LdlSymbolic,
    factor: LdlFactor,
}

impl Schur<'_> {
    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let mut z = r.to_vec();
        self.factor.solve_in_place(self.sym, &mut z);
        z
    }

    /// Solves `op(x) = rhs` for the blockwise Schur operator by conjugate
    /// gradients preconditioned with the factorized matrix. The first step
    /// is the plain factor solve; later steps correct assembly round-off and
    /// regularized pivots. The recursive residual drifts once it reaches the
    /// round-off floor, so iterates are ranked by the true residual and the
    /// loop stops when that stops decreasing.
    fn solve(&self, rhs: &[f64], op: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let target = 1e-15 * norm(rhs);
        let mut x = vec![0.0; rhs.len()];
        let mut r = rhs.to_vec();
        let mut z = self.precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut best = (norm(&r), x.clone());
        for _ in 0..CG_ITERS {
            let ap = op(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) || !(rz > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
                *xi += alpha * pi;
                *ri -= alpha * api;
            }
            let ax = op(&x);
            let true_rn = norm(&rhs.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>());
            if !(true_rn < best.0) {
                break;
            }
            best = (true_rn, x.clone());
            if true_rn <= target {
                break;
            }
            z = self.precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        best.1
    }
}

struct State<'a> {
    blocks: &'a [Block],
    cost: &'a [f64],
    z: Vec<f64>,
    s: Vec<DMatrix<f64>>,
    lam: Vec<DMatrix<f64>>,
}

impl State<'_> {
    /// `rp_b = C_b + G_b z − S_b`.
    fn primal_residuals(&self) -> Vec<DMatrix<f64>> {
        self.blocks
            .par_iter()
            .zip(self.s.par_iter())
            .map(|(b, s)| b.apply(&self.z) - s)
            .collect()
    }

    /// `rd = c − G*(Λ)`.
    fn dual_residual(&self) -> Vec<f64> {
        let mut rd = self.cost.to_vec();
        let mut g = vec![0.0; rd.len()];
        for (b, l) in self.blocks.iter().zip(&self.lam) {
            b.adjoint(l, &mut g);
        }
        for (r, v) in rd.iter_mut().zip(g) {
            *r -= v;
        }
        rd
    }

    /// `Σ_b G_b*(W_b G_b(x) W_b)` without forming the Schur matrix.
    fn schur_apply(&self, scal: &[Scaling], x: &[f64]) -> Vec<f64> {
        let parts: Vec<DMatrix<f64>> = self
            .blocks
            .par_iter()
            .zip(scal.par_iter())
            .map(|(b, sc)| &sc.w * (b.apply(x) - &b.constant) * &sc.w)
            .collect();
        let mut out = vec![0.0; x.len()];
        for (b, t) in self.blocks.iter().zip(&parts) {
            b.adjoint(t, &mut out);
        }
        out
    }

    /// Solves for the direction given the scaled complementarity target
    /// `sym(D (ΔS̃ + ΔΛ̃)) = R_b`.
    fn direction(
        &self,
        scal: &[Scaling],
        schur: &Schur,
        rp: &[DMatrix<f64>],
        rd: &[f64],
        targets: &[DMatrix<f64>],
    ) -> Direction {
        let n = self.z.len();
        let hk: Vec<(DMatrix<f64>, DMatrix<f64>)> = scal
            .par_iter()
            .zip(targets.par_iter())
            .map(|(sc, r)| {
                let d = &sc.d;
                let h = DMatrix::from_fn(d.len(), d.len(), |i, j| 2.0 * r[(i, j)] / (d[i] + d[j]));
                let k = &sc.g * &h * sc.g.transpose();
                (h, k)
            })
            .collect();
        let mut rhs = vec![0.0; n];
        for (b, ((sc, (_, k)), rpb)) in self.blocks.iter().zip(scal.iter().zip(&hk).zip(rp)) {
            let t = k - &sc.w * rpb * &sc.w;
            b.adjoint(&t, &mut rhs);
        }
        for (r, d) in rhs.iter_mut().zip(rd) {
            *r -= d;
        }
        let dz = schur.solve(&rhs, |x| self.schur_apply(scal, x));

        let per_block: Vec<_> = self
            .blocks
            .par_iter()
            .zip(scal.par_iter())
            .zip(hk.par_iter())
            .zip(rp.par_iter())
            .map(|(((b, sc), (h, k)), rpb)| {
                let mut ds = b.apply(&dz) - &b.constant + rpb;
                ds = sym(&ds);
                let dl = sym(&(k - &sc.w * &ds * &sc.w));
                let ds_t = sym(&(sc.g.transpose() * &ds * &sc.g));
                let dl_t = h - &ds_t;
                let ap = max_step(&sc.d, &ds_t);
                let ad = max_step(&sc.d, &dl_t);
                (ds, dl, ds_t, dl_t, ap, ad)
            })
            .collect();
        let mut dir = Direction {
            dz,
            ds: Vec::with_capacity(per_block.len()),
            dl: Vec::with_capacity(per_block.len()),
            ds_t: Vec::with_capacity(per_block.len()),
            dl_t: Vec::with_capacity(per_block.len()),
            alpha_p: f64::INFINITY,
            alpha_d: f64::INFINITY,
        };
        for (ds, dl, ds_t, dl_t, ap, ad) in per_block {
            dir.ds.push(ds);
            dir.dl.push(dl);
            dir.ds_t.push(ds_t);
            dir.dl_t.push(dl_t);
            dir.alpha_p = dir.alpha_p.min(ap);
            dir.alpha_d = dir.alpha_d.min(ad);
        }
        dir
    }
}

fn build_blocks(pre: &Presolved) -> (Vec<Block>, SymPattern) {
    let mut blocks: Vec<Block> = pre
        .blocks
        .iter()
        .map(|rb| Block {
            dim: rb.dim,
            constant: rb.constant.clone(),
            terms: rb
                .terms
                .iter()
                .map(|(k, entries)| Term {
                    var: *k,
                    full: entries
                        .iter()
                        .flat_map(|&(a, b, v)| {
                            if a == b {
                                vec![(a, a, v)]
                            } else {
                                vec![(a, b, v), (b, a, v)]
                            }
                        })
                        .collect(),
                })
                .collect(),
            pair_pos: Vec::new(),
        })
        .collect();
    let pairs = blocks.iter().flat_map(|b| {
        let vars: Vec<usize> = b.terms.iter().map(|t| t.var).collect();
        (0..vars.len()).flat_map(move |t2| {
            let v2 = vars[t2];
            let vars = vars.clone();
            (0..=t2).map(move |t1| (vars[t1], v2))
        })
    });
    let pattern = SymPattern::from_pairs(pre.n, pairs.collect::<Vec<_>>());
    for b in &mut blocks {
        let nt = b.terms.len();
        let mut pos = Vec::with_capacity(nt * (nt + 1) / 2);
        for t2 in 0..nt {
            for t1 in 0..=t2 {
                pos.push(
                    pattern
                        .position(b.terms[t1].var, b.terms[t2].var)
                        .expect("pair in pattern"),
                );
            }
        }
        b.pair_pos = pos;
    }
    (blocks, pattern)
}

/// Initial multipliers `S₀ = η I`, `Λ₀ = ξ I` per block.
fn initial_point(blocks: &[Block], cost: &[f64]) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut s = Vec::with_capacity(blocks.len());
    let mut l = Vec::with_capacity(blocks.len());
    for b in blocks {
        let dimf = b.dim as f64;
        let mut gmax: f64 = 0.0;
        let mut ratio: f64 = 0.0;
        for t in &b.terms {
            let gn = t.full.iter().map(|e| e.2 * e.2).sum::<f64>().sqrt();
            gmax = gmax.max(gn);
            ratio = ratio.max((1.0 + cost[t.var].abs()) / (1.0 + gn));
        }
        let eta = 10f64.max(dimf.sqrt()).max(b.constant.norm()).max(gmax);
        let xi = 10f64.max(dimf.sqrt()).max(dimf * ratio);
        s.push(DMatrix::identity(b.dim, b.dim) * eta);
        l.push(DMatrix::identity(b.dim, b.dim) * xi);
    }
    (s, l)
}

pub(crate) fn run(pre: &Presolved, settings: &SolverSettings, mut log: Option<&mut (dyn Write + '_)>) -> Outcome {
    let n = pre.n;
    if pre.blocks.is_empty() {
        return Outcome {
            z: vec![0.0; n],
            lambdas: Vec::new(),
            status: Status::Optimal,
            iterations: 0,
            dual_objective: pre.cost_constant,
            rel_gap: 0.0,
            dual_feasible: pre.cost.iter().all(|&c| c == 0.0),
            message: None,
        };
    }
    let (blocks, pattern) = build_blocks(pre);
    let symbolic = LdlSymbolic::analyze(&pattern);
    if let Some(w) = log.as_deref_mut() {
        let _ = writeln!(
            w,
            "schur order {} nnz {} factor-nnz {} dense-tail {}",
            n,
            pattern.nnz(),
            symbolic.l_nnz(),
            symbolic.dense_tail
        );
    }
    let (s0, l0) = initial_point(&blocks, &pre.cost);
    let mut st = State {
        blocks: &blocks,
        cost: &pre.cost,
        z: vec![0.0; n],
        s: s0,
        lam: l0,
    };
    let total_dim: usize = blocks.iter().map(|b| b.dim).sum();
    let cnorm = 1.0 + pre.cost.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bnorm = 1.0
        + blocks
            .iter()
            .map(|b| b.constant.amax())
            .fold(0.0f64, f64::max);

    let mut factor = LdlFactor::new(&symbolic);
    let mut status = Status::MaxIters;
    let mut message = None;
    let mut iterations = 0;
    let mut last_step = (0.0, 0.0);
    let mut best: Option<Snapshot> = None;
    let mut since_best = 0;
    let mut polish_left = 0;

    loop {
        let rp = st.primal_residuals();
        let rd = st.dual_residual();
        let mu = st.s.iter().zip(&st.lam).map(|(s, l)| frob(s, l)).sum::<f64>() / total_dim as f64;
        let pobj = pre.cost_constant + st.z.iter().zip(st.cost).map(|(z, c)| z * c).sum::<f64>();
        let dobj = pre.cost_constant - blocks.iter().zip(&st.lam).map(|(b, l)| frob(&b.constant, l)).sum::<f64>();
        // Both the objective gap and ⟨S, Λ⟩; they differ by zᵀ(dual residual).
        let rel_gap = (pobj - dobj).abs().max(mu * total_dim as f64) / 1f64.max(pobj.abs()).max(dobj.abs());
        let pres = rp.iter().map(|r| r.amax()).fold(0.0f64, f64::max);
        let dres_rel = rd.iter().fold(0.0f64, |m, v| m.max(v.abs())) / cnorm;

        if let Some(w) = log.as_deref_mut() {
            let _ = writeln!(
                w,
                "iter {iterations:3} pobj {pobj:+.12e} dobj {dobj:+.12e} gap {rel_gap:.3e} pres {:.3e} dres {dres_rel:.3e} mu {mu:.3e} step {:.3} {:.3}",
                pres / bnorm,
                last_step.0,
                last_step.1
            );
        }

        let merit = (rel_gap / settings.gap_tol)
            .max(pres / (0.1 * settings.feas_tol))
            .max(dres_rel / settings.feas_tol);
        if best.as_ref().is_none_or(|b| merit < b.merit) {
            best = Some(Snapshot {
                merit,
                z: st.z.clone(),
                lam: st.lam.clone(),
                dual_objective: dobj,
                rel_gap,
                dual_feasible: dres_rel <= settings.feas_tol,
            });
            since_best = 0;
        } else {
            since_best += 1;
        }
        if merit <= 1.0 && status != Status::Optimal {
            status = Status::Optimal;
            polish_left = POLISH_ITERS;
        }
        if status == Status::Optimal {
            if polish_left == 0 || since_best >= 2 {
                break;
            }
            polish_left -= 1;
        }
        if iterations >= settings.max_iters {
            break;
        }
        if status != Status::Optimal && since_best >= STALL_LIMIT {
            status = Status::NumericalFailure;
            message = Some(format!("no progress in {STALL_LIMIT} iterations"));
            break;
        }
        let zmax = st.z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lmax = st.lam.iter().map(|l| l.amax()).fold(0.0f64, f64::max);
        if status != Status::Optimal && (zmax > DIVERGENCE || lmax > DIVERGENCE) {
            status = Status::InfeasibleDetected;
            message = Some(format!("iterates diverged (|z| {zmax:.2e}, |Λ| {lmax:.2e})"));
            break;
        }

        let scal: Option<Vec<Scaling>> = st
            .s
            .par_iter()
            .zip(st.lam.par_iter())
            .map(|(s, l)| nt_scaling(s, l))
            .collect();
        let Some(scal) = scal else {
            if status == Status::Optimal {
                break;
            }
            status = Status::NumericalFailure;
            message = Some(format!("lost positive definiteness at iteration {iterations}"));
            break;
        };

        let contributions: Vec<Vec<f64>> = blocks
            .par_iter()
            .zip(scal.par_iter())
            .map(|(b, sc)| b.schur(&sc.w))
            .collect();
        let mut values = vec![0.0; pattern.nnz()];
        for (b, contrib) in blocks.iter().zip(&contributions) {
            for (&p, &v) in b.pair_pos.iter().zip(contrib) {
                values[p] += v;
            }
        }
        factor.factor(&symbolic, &values, PIVOT_TOL, 1e64);
        let schur = Schur {
            sym: &symbolic,
            factor: std::mem::replace(&mut factor, LdlFactor::new(&symbolic)),
        };

        // Predictor: target zero complementarity.
        let aff_targets: Vec<DMatrix<f64>> = scal
            .iter()
            .map(|sc| DMatrix::from_fn(sc.d.len(), sc.d.len(), |i, j| if i == j { -sc.d[i] * sc.d[i] } else { 0.0 }))
            .collect();
        let aff = st.direction(&scal, &schur, &rp, &rd, &aff_targets);
        let ap = 1f64.min(aff.alpha_p);
        let ad = 1f64.min(aff.alpha_d);
        let mu_aff = st
            .s
            .iter()
            .zip(&st.lam)
            .zip(aff.ds.iter().zip(&aff.dl))
            .map(|((s, l), (ds, dl))| frob(&(s + ds * ap), &(l + dl * ad)))
            .sum::<f64>()
            / total_dim as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector with second-order term.
        let targets: Vec<DMatrix<f64>> = scal
            .iter()
            .zip(aff.ds_t.iter().zip(&aff.dl_t))
            .map(|(sc, (dst, dlt))| {
                let k = sc.d.len();
                let mut r = -sym(&(dst * dlt));
                for i in 0..k {
                    r[(i, i)] += sigma * mu - sc.d[i] * sc.d[i];
                }
                r
            })
            .collect();
        let dir = st.direction(&scal, &schur, &rp, &rd, &targets);
        let alpha_p = 1f64.min(STEP_FRACTION * dir.alpha_p);
        let alpha_d = 1f64.min(STEP_FRACTION * dir.alpha_d);
        factor = schur.factor;

        for (z, dz) in st.z.iter_mut().zip(&dir.dz) {
            *z += alpha_p * dz;
        }
        for (s, ds) in st.s.iter_mut().zip(&dir.ds) {
            *s += ds * alpha_p;
        }
        for (l, dl) in st.lam.iter_mut().zip(&dir.dl) {
            *l += dl * alpha_d;
        }
        iterations += 1;
        last_step = (alpha_p, alpha_d);
    }

    let best = best.expect("at least one iterate evaluated");
    if status != Status::Optimal && status != Status::InfeasibleDetected && best.merit <= 1.0 {
        status = Status::Optimal;
        message = None;
    }
    if let Some(w) = log {
        if best.merit > 1.0 {
            let _ = writeln!(w, "returning best iterate (merit {:.3e})", best.merit);
        }
    }
    Outcome {
        z: best.z,
        lambdas: best.lam,
        status,
        iterations,
        dual_objective: best.dual_objective,
        rel_gap: best.rel_gap,
        dual_feasible: best.dual_feasible,
        message,
    }
}

/// Iterate with the smallest tolerance-normalized violation seen so far.
struct Snapshot {
    merit: f64,
    z: Vec<f64>,
    lam: Vec<DMatrix<f64>>,
    dual_objective: f64,
    rel_gap: f64,
    dual_feasible: bool,
}
