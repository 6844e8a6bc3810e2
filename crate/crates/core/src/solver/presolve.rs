//! Equality elimination and facial reduction.
//!
//! Equalities are removed by sparse Gauss-Jordan elimination, leaving every
//! variable as an affine function of a set of free variables. PSD blocks
//! are then re-expressed over the free variables; whenever a block has a
//! principal submatrix that is constant and singular, every PSD completion
//! must annihilate its null vectors, which yields further equalities and a
//! smaller block `Qᵀ S Q`. The loop runs until no block shrinks, so the
//! interior-point method only ever sees blocks with nonempty interior.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::model::ConicProblem;

/// Sparse affine expression `constant + Σ coef · var`, terms sorted by var.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Affine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Affine {
    fn var(v: usize) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(v, 1.0)],
        }
    }

    /// `self += alpha * other`.
    fn axpy(&mut self, alpha: f64, other: &Affine) {
        self.constant += alpha * other.constant;
        let mut merged = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut a, mut b) = (0, 0);
        while a < self.terms.len() || b < other.terms.len() {
            let take_a = b >= other.terms.len()
                || (a < self.terms.len() && self.terms[a].0 < other.terms[b].0);
            let take_b = a >= self.terms.len()
                || (b < other.terms.len() && other.terms[b].0 < self.terms[a].0);
            if take_a {
                merged.push(self.terms[a]);
                a += 1;
            } else if take_b {
                merged.push((other.terms[b].0, alpha * other.terms[b].1));
                b += 1;
            } else {
                merged.push((self.terms[a].0, self.terms[a].1 + alpha * other.terms[b].1));
                a += 1;
                b += 1;
            }
        }
        self.terms = merged;
        self.prune();
    }

    fn prune(&mut self) {
        let scale = self.terms.iter().fold(0.0f64, |m, t| m.max(t.1.abs()));
        let cut = 1e-13 * scale.max(1.0);
        self.terms.retain(|t| t.1.abs() > cut);
    }

    fn remove(&mut self, v: usize) -> f64 {
        match self.terms.binary_search_by_key(&v, |t| t.0) {
            Ok(k) => self.terms.remove(k).1,
            Err(_) => 0.0,
        }
    }
}

/// Gauss-Jordan elimination state over the original variable space.
#[derive(Debug, Clone)]
pub(crate) struct Eliminator {
    expr: Vec<Option<Affine>>,
    users: Vec<Vec<usize>>,
    occurrence: Vec<usize>,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Infeasible(pub String);

impl Eliminator {
    fn new(n: usize, occurrence: Vec<usize>) -> Self {
        Self {
            expr: vec![None; n],
            users: vec![Vec::new(); n],
            occurrence,
            dropped_rows: 0,
        }
    }

    pub fn is_free(&self, v: usize) -> bool {
        self.expr[v].is_none()
    }

    /// Expression of original variable `v` over free variables.
    pub fn resolve(&self, v: usize) -> Affine {
        match &self.expr[v] {
            Some(e) => e.clone(),
            None => Affine::var(v),
        }
    }

    fn reduce(&self, terms: &[(usize, f64)], constant: f64) -> (Affine, f64) {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut c = constant;
        let mut scale = constant.abs();
        for &(v, a) in terms {
            match &self.expr[v] {
                None => *acc.entry(v).or_insert(0.0) += a,
                Some(e) => {
                    c += a * e.constant;
                    scale += (a * e.constant).abs();
                    for &(f, b) in &e.terms {
                        *acc.entry(f).or_insert(0.0) += a * b;
                    }
                }
            }
        }
        let mut out = Affine {
            constant: c,
            terms: acc.into_iter().collect(),
        };
        out.prune();
        (out, scale)
    }

    /// Adds the constraint `Σ coef · var + constant = 0`.
    fn add_row(&mut self, terms: &[(usize, f64)], constant: f64) -> Result<(), Infeasible> {
        let (row, scale) = self.reduce(terms, constant);
        if row.terms.is_empty() {
            if row.constant.abs() <= 1e-9 * (1.0 + scale) {
                self.dropped_rows += 1;
                return Ok(());
            }
            return Err(Infeasible(format!(
                "contradictory equalities (residual {:.3e})",
                row.constant
            )));
        }
        let amax = row.terms.iter().fold(0.0f64, |m, t| m.max(t.1.abs()));
        let (p, ap) = row
            .terms
            .iter()
            .filter(|t| t.1.abs() >= 0.1 * amax)
            .min_by(|x, y| {
                self.occurrence[x.0]
                    .cmp(&self.occurrence[y.0])
                    .then(y.1.abs().total_cmp(&x.1.abs()))
                    .then(y.0.cmp(&x.0))
            })
            .copied()
            .expect("nonempty row");

        // var_p = -(constant + Σ_{f≠p} a_f var_f) / a_p
        let mut e = row;
        e.remove(p);
        let inv = -1.0 / ap;
        e.constant *= inv;
        for t in &mut e.terms {
            t.1 *= inv;
        }

        let users = std::mem::take(&mut self.users[p]);
        for u in users {
            let Some(mut ue) = self.expr[u].take() else { continue };
            let alpha = ue.remove(p);
            if alpha != 0.0 {
                ue.axpy(alpha, &e);
                for &(f, _) in &ue.terms {
                    self.users[f].push(u);
                }
            }
            self.expr[u] = Some(ue);
        }
        for &(f, _) in &e.terms {
            self.users[f].push(p);
        }
        self.expr[p] = Some(e);
        Ok(())
    }
}

/// Block in reduced coordinates: `constant + Σ z_k G_k`, each `G_k` as
/// upper-triangle entries `(a, b, value)` meaning value at `(a, b)` and `(b, a)`.
#[derive(Debug, Clone)]
pub(crate) struct ReducedBlock {
    pub orig: usize,
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Presolved {
    pub n: usize,
    pub cost: Vec<f64>,
    pub cost_constant: f64,
    pub blocks: Vec<ReducedBlock>,
    /// Per original block: sparse rows of `Q` (orig_dim × reduced dim), or `None` if dropped.
    pub q_rows: Vec<Option<Vec<Vec<(usize, f64)>>>>,
    elim: Eliminator,
    /// Original free variable index → active index.
    active: Vec<Option<usize>>,
    pub facial_reductions: usize,
}

impl Presolved {
    pub fn dropped_rows(&self) -> usize {
        self.elim.dropped_rows
    }

    /// Original variable values from active reduced values.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let value = |v: usize| self.active[v].map_or(0.0, |k| z[k]);
        (0..self.active.len())
            .map(|v| {
                if self.elim.is_free(v) {
                    value(v)
                } else {
                    let e = self.elim.resolve(v);
                    e.constant + e.terms.iter().map(|&(f, a)| a * value(f)).sum::<f64>()
                }
            })
            .collect()
    }

    /// Dual block in original coordinates: `Q Λ Qᵀ`.
    pub fn expand_dual(&self, orig: usize, orig_dim: usize, lambda: Option<&DMatrix<f64>>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(orig_dim, orig_dim);
        let (Some(q), Some(l)) = (&self.q_rows[orig], lambda) else {
            return out;
        };
        for r in 0..orig_dim {
            for c in r..orig_dim {
                let mut s = 0.0;
                for &(a, x) in &q[r] {
                    for &(b, y) in &q[c] {
                        s += x * l[(a, b)] * y;
                    }
                }
                out[(r, c)] = s;
                out[(c, r)] = s;
            }
        }
        out
    }
}

/// Working form of a block during facial reduction.
struct WorkBlock {
    dim: usize,
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, BTreeMap<(usize, usize), f64>>,
}

impl WorkBlock {
    fn build(problem: &ConicProblem, b: usize, q: &[Vec<(usize, f64)>], dim: usize, elim: &Eliminator) -> Self {
        let block = &problem.psd_blocks[b];
        let mut constant = DMatrix::zeros(dim, dim);
        let mut terms: BTreeMap<usize, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
        for e in &block.entries {
            let mut value = Affine {
                constant: e.constant,
                terms: Vec::new(),
            };
            for &(v, a) in e.terms.terms() {
                value.axpy(a, &elim.resolve(v.0));
            }
            let pairs: &[(usize, usize)] = if e.row == e.col {
                &[(e.row, e.row)][..]
            } else {
                &[(e.row, e.col), (e.col, e.row)][..]
            };
            for &(r1, c1) in pairs {
                for &(a, x) in &q[r1] {
                    for &(bb, y) in &q[c1] {
                        if a > bb {
                            continue;
                        }
                        let w = x * y;
                        if value.constant != 0.0 {
                            constant[(a, bb)] += w * value.constant;
                            if a != bb {
                                constant[(bb, a)] += w * value.constant;
                            }
                        }
                        for &(k, coef) in &value.terms {
                            *terms.entry(k).or_default().entry((a, bb)).or_insert(0.0) += w * coef;
                        }
                    }
                }
            }
        }
        for m in terms.values_mut() {
            let scale = m.values().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
            m.retain(|_, v| v.abs() > 1e-13 * scale);
        }
        terms.retain(|_, m| !m.is_empty());
        Self { dim, constant, terms }
    }

    fn varying(&self) -> Vec<Vec<bool>> {
        let mut v = vec![vec![false; self.dim]; self.dim];
        for m in self.terms.values() {
            for &(a, b) in m.keys() {
                v[a][b] = true;
                v[b][a] = true;
            }
        }
        v
    }

    /// Affine expression of entry `(r, c)`.
    fn entry(&self, r: usize, c: usize) -> Affine {
        let key = if r <= c { (r, c) } else { (c, r) };
        Affine {
            constant: self.constant[(r, c)],
            terms: self
                .terms
                .iter()
                .filter_map(|(&k, m)| m.get(&key).map(|&v| (k, v)))
                .collect(),
        }
    }
}

enum Reduction {
    None,
    Drop,
    Shrink {
        rows: Vec<Affine>,
        /// Local (cur_dim × new_dim) basis as sparse rows.
        local: Vec<Vec<(usize, f64)>>,
        new_dim: usize,
    },
}

fn facial_step(w: &WorkBlock) -> Result<Reduction, Infeasible> {
    let varying = w.varying();
    let mut fixed: Vec<usize> = Vec::new();
    for i in 0..w.dim {
        if !varying[i][i] && fixed.iter().all(|&f| !varying[f][i]) {
            fixed.push(i);
        }
    }
    if fixed.is_empty() {
        return Ok(Reduction::None);
    }
    let nf = fixed.len();
    let cff = DMatrix::from_fn(nf, nf, |a, b| w.constant[(fixed[a], fixed[b])]);
    let eig = SymmetricEigen::new(cff);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * lmax.max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(Infeasible("constant principal submatrix is not PSD".into()));
    }
    let null: Vec<usize> = (0..nf).filter(|&k| eig.eigenvalues[k] <= tol).collect();
    let range: Vec<usize> = (0..nf).filter(|&k| eig.eigenvalues[k] > tol).collect();
    if null.is_empty() {
        return Ok(Reduction::None);
    }
    let rest: Vec<usize> = (0..w.dim).filter(|i| !fixed.contains(i)).collect();
    let new_dim = range.len() + rest.len();
    if new_dim == 0 {
        return Ok(Reduction::Drop);
    }

    let mut rows = Vec::new();
    for &k in &null {
        let v = eig.eigenvectors.column(k);
        for &r in &rest {
            let mut row = Affine::default();
            for (a, &f) in fixed.iter().enumerate() {
                if v[a] != 0.0 {
                    row.axpy(v[a], &w.entry(r, f));
                }
            }
            rows.push(row);
        }
    }

    let mut local = vec![Vec::new(); w.dim];
    for (a, &f) in fixed.iter().enumerate() {
        for (col, &k) in range.iter().enumerate() {
            let x = eig.eigenvectors[(a, k)];
            if x.abs() > 1e-15 {
                local[f].push((col, x));
            }
        }
    }
    for (off, &r) in rest.iter().enumerate() {
        local[r].push((range.len() + off, 1.0));
    }
    Ok(Reduction::Shrink {
        rows,
        local,
        new_dim,
    })
}

pub(crate) fn presolve(problem: &ConicProblem) -> Result<Presolved, Infeasible> {
    let n = problem.num_vars;
    let mut occurrence = vec![0usize; n];
    for b in &problem.psd_blocks {
        for v in b.vars() {
            occurrence[v.0] += 1;
        }
    }
    let mut elim = Eliminator::new(n, occurrence);
    for eq in &problem.equalities {
        let terms: Vec<(usize, f64)> = eq.form.terms().iter().map(|&(v, a)| (v.0, a)).collect();
        elim.add_row(&terms, -eq.rhs)?;
    }

    let nb = problem.psd_blocks.len();
    let mut q_rows: Vec<Option<Vec<Vec<(usize, f64)>>>> = problem
        .psd_blocks
        .iter()
        .map(|b| Some((0..b.dim).map(|r| vec![(r, 1.0)]).collect()))
        .collect();
    let mut dims: Vec<usize> = problem.psd_blocks.iter().map(|b| b.dim).collect();
    let mut facial_reductions = 0;

    let mut work: Vec<Option<WorkBlock>>;
    loop {
        work = (0..nb)
            .map(|b| {
                q_rows[b]
                    .as_ref()
                    .map(|q| WorkBlock::build(problem, b, q, dims[b], &elim))
            })
            .collect();
        let mut changed = false;
        let mut new_rows = Vec::new();
        for b in 0..nb {
            let Some(w) = &work[b] else { continue };
            match facial_step(w)? {
                Reduction::None => {}
                Reduction::Drop => {
                    q_rows[b] = None;
                    changed = true;
                }
                Reduction::Shrink {
                    rows,
                    local,
                    new_dim,
                } => {
                    let q = q_rows[b].as_mut().expect("active block");
                    for row in q.iter_mut() {
                        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                        for &(a, x) in row.iter() {
                            for &(c, y) in &local[a] {
                                *acc.entry(c).or_insert(0.0) += x * y;
                            }
                        }
                        *row = acc.into_iter().filter(|t| t.1.abs() > 1e-15).collect();
                    }
                    dims[b] = new_dim;
                    new_rows.extend(rows);
                    facial_reductions += 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        for row in new_rows {
            elim.add_row(&row.terms, row.constant)?;
        }
    }

    // Active variables: free and referenced by at least one remaining block.
    let mut used = vec![false; n];
    for w in work.iter().flatten() {
        for &k in w.terms.keys() {
            used[k] = true;
        }
    }
    let mut cost_full = vec![0.0; n];
    let mut cost_constant = 0.0;
    for &(v, c) in problem.objective.terms() {
        let e = elim.resolve(v.0);
        cost_constant += c * e.constant;
        for &(f, a) in &e.terms {
            cost_full[f] += c * a;
        }
    }
    let cmax = cost_full.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut active = vec![None; n];
    let mut cost = Vec::new();
    for v in 0..n {
        if !elim.is_free(v) {
            continue;
        }
        if used[v] {
            active[v] = Some(cost.len());
            cost.push(cost_full[v]);
        } else if cost_full[v].abs() > 1e-12 * cmax.max(1.0) {
            return Err(Infeasible(format!(
                "objective unbounded along unconstrained variable {v}"
            )));
        }
    }

    let blocks = work
        .into_iter()
        .enumerate()
        .filter_map(|(b, w)| {
            let w = w?;
            Some(ReducedBlock {
                orig: b,
                dim: w.dim,
                constant: w.constant,
                terms: w
                    .terms
                    .into_iter()
                    .map(|(k, m)| {
                        let ak = active[k].expect("block variable is active");
                        (ak, m.into_iter().map(|((a, b), v)| (a, b, v)).collect())
                    })
                    .collect(),
            })
        })
        .collect();

    Ok(Presolved {
        n: cost.len(),
        cost,
        cost_constant,
        blocks,
        q_rows,
        elim,
        active,
        facial_reductions,
    })
}
