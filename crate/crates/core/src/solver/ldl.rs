//! Sparse LDLᵀ factorization for the symmetric positive (semi)definite Schur
//! complement of the interior-point iteration.
//!
//! The sparsity pattern is fixed across iterations, so ordering and symbolic
//! analysis run once. Ordering is an explicit-graph minimum degree that stops
//! once every remaining node is adjacent to at least half of the others; that
//! remainder is treated as one dense trailing block.

use std::collections::BTreeSet;

/// Lower-triangular pattern of a symmetric matrix in compressed columns.
/// Within each column the diagonal comes first, then strictly-lower rows in
/// ascending order.
#[derive(Debug, Clone)]
pub struct SymPattern {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
}

impl SymPattern {
    /// Builds the pattern from `(row, col)` pairs in either triangle; diagonals are always present.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cols: Vec<BTreeSet<usize>> = (0..n).map(|j| BTreeSet::from([j])).collect();
        for (r, c) in pairs {
            let (hi, lo) = if r >= c { (r, c) } else { (c, r) };
            cols[lo].insert(hi);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in cols {
            row_idx.extend(col);
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Position of `(row, col)` (either triangle) in the value array.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let (hi, lo) = if row >= col { (row, col) } else { (col, row) };
        let range = self.col_ptr[lo]..self.col_ptr[lo + 1];
        self.row_idx[range.clone()]
            .binary_search(&hi)
            .ok()
            .map(|k| range.start + k)
    }

    /// `y = A x` for symmetric `A` with values stored in this pattern.
    #[cfg(test)]
    pub fn mul_vec(&self, values: &[f64], x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                let v = values[p];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
    }
}

/// Ordering and fill pattern; reused for every numeric factorization.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// Strictly-lower pattern of L, permuted indices, ascending per column.
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    /// For each permuted column: `(row, source position in the input values)`, rows ≥ col.
    a_scatter_ptr: Vec<usize>,
    a_scatter: Vec<(usize, usize)>,
    /// For each permuted row `j`: positions `p` in L with `L[p] = L(j, k)`, k ascending.
    row_ptr: Vec<usize>,
    row_pos: Vec<usize>,
    col_owner: Vec<usize>,
    pub dense_tail: usize,
}

impl LdlSymbolic {
    pub fn analyze(pattern: &SymPattern) -> Self {
        let n = pattern.n;
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for c in 0..n {
            for p in pattern.col_ptr[c]..pattern.col_ptr[c + 1] {
                let r = pattern.row_idx[p];
                if r != c {
                    adj[r].insert(c);
                    adj[c].insert(r);
                }
            }
        }

        let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
        let mut eliminated = vec![false; n];
        let mut perm = Vec::with_capacity(n);
        // Column patterns in original indices, for the sparse prefix.
        let mut fill: Vec<Vec<usize>> = Vec::with_capacity(n);

        while let Some(&(deg, v)) = queue.iter().next() {
            let remaining = n - perm.len();
            if remaining > 32 && 2 * deg >= remaining {
                break;
            }
            queue.remove(&(deg, v));
            eliminated[v] = true;
            perm.push(v);
            let nbrs: Vec<usize> = adj[v].iter().copied().collect();
            for &a in &nbrs {
                queue.remove(&(adj[a].len(), a));
                adj[a].remove(&v);
                for &b in &nbrs {
                    if b != a {
                        adj[a].insert(b);
                    }
                }
                queue.insert((adj[a].len(), a));
            }
            adj[v].clear();
            fill.push(nbrs);
        }
        let sparse_len = perm.len();
        let tail: Vec<usize> = (0..n).filter(|&v| !eliminated[v]).collect();
        let dense_tail = tail.len();
        perm.extend(tail);

        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        let mut l_col_ptr = Vec::with_capacity(n + 1);
        let mut l_row_idx = Vec::new();
        l_col_ptr.push(0);
        for (new, nbrs) in fill.iter().enumerate() {
            let mut rows: Vec<usize> = nbrs.iter().map(|&o| iperm[o]).collect();
            rows.sort_unstable();
            debug_assert!(rows.iter().all(|&r| r > new));
            l_row_idx.extend(rows);
            l_col_ptr.push(l_row_idx.len());
        }
        for new in sparse_len..n {
            l_row_idx.extend(new + 1..n);
            l_col_ptr.push(l_row_idx.len());
        }

        let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for c in 0..n {
            for p in pattern.col_ptr[c]..pattern.col_ptr[c + 1] {
                let (r2, c2) = (iperm[pattern.row_idx[p]], iperm[c]);
                let (hi, lo) = if r2 >= c2 { (r2, c2) } else { (c2, r2) };
                buckets[lo].push((hi, p));
            }
        }
        let mut a_scatter_ptr = Vec::with_capacity(n + 1);
        let mut a_scatter = Vec::with_capacity(pattern.nnz());
        a_scatter_ptr.push(0);
        for b in buckets {
            a_scatter.extend(b);
            a_scatter_ptr.push(a_scatter.len());
        }

        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..n {
            for p in l_col_ptr[k]..l_col_ptr[k + 1] {
                rows[l_row_idx[p]].push(p);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut row_pos = Vec::new();
        row_ptr.push(0);
        for r in rows {
            row_pos.extend(r);
            row_ptr.push(row_pos.len());
        }

        let mut col_owner = vec![0; l_row_idx.len()];
        for k in 0..n {
            for p in l_col_ptr[k]..l_col_ptr[k + 1] {
                col_owner[p] = k;
            }
        }

        Self {
            n,
            perm,
            col_owner,
            l_col_ptr,
            l_row_idx,
            a_scatter_ptr,
            a_scatter,
            row_ptr,
            row_pos,
            dense_tail,
        }
    }

    pub fn l_nnz(&self) -> usize {
        self.l_row_idx.len()
    }
}

/// Numeric factor `P A Pᵀ = L D Lᵀ`.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    l: Vec<f64>,
    d: Vec<f64>,
    work: Vec<f64>,
    /// Pivots replaced by the regularization value in the last factorization.
    pub regularized: usize,
}

impl LdlFactor {
    pub fn new(sym: &LdlSymbolic) -> Self {
        Self {
            l: vec![0.0; sym.l_nnz()],
            d: vec![0.0; sym.n],
            work: vec![0.0; sym.n],
            regularized: 0,
        }
    }

    /// Factorizes `values` (laid out as in the analyzed pattern). A pivot at or
    /// below `rel_tiny` times its column's original diagonal is replaced by
    /// `replacement`.
    pub fn factor(&mut self, sym: &LdlSymbolic, values: &[f64], rel_tiny: f64, replacement: f64) {
        let n = sym.n;
        let w = &mut self.work;
        self.regularized = 0;
        // Column k's entries at or below row j: since rows are ascending and
        // row j is present, they start at the row-list position.
        let col_end = |k: usize| sym.l_col_ptr[k + 1];
        for j in 0..n {
            for &(r, src) in &sym.a_scatter[sym.a_scatter_ptr[j]..sym.a_scatter_ptr[j + 1]] {
                w[r] += values[src];
            }
            let tiny = rel_tiny * w[j].abs().max(f64::MIN_POSITIVE);
            for &pjk in &sym.row_pos[sym.row_ptr[j]..sym.row_ptr[j + 1]] {
                let k = sym.col_owner[pjk];
                let ljk = self.l[pjk];
                let f = ljk * self.d[k];
                w[j] -= ljk * f;
                for p in pjk + 1..col_end(k) {
                    w[sym.l_row_idx[p]] -= self.l[p] * f;
                }
            }
            let mut dj = w[j];
            w[j] = 0.0;
            if !(dj > tiny) {
                dj = replacement;
                self.regularized += 1;
            }
            self.d[j] = dj;
            for p in sym.l_col_ptr[j]..sym.l_col_ptr[j + 1] {
                let r = sym.l_row_idx[p];
                self.l[p] = w[r] / dj;
                w[r] = 0.0;
            }
        }
    }

    /// Solves `A x = b` in place using the last factorization.
    pub fn solve_in_place(&self, sym: &LdlSymbolic, b: &mut [f64]) {
        let n = sym.n;
        let mut x: Vec<f64> = sym.perm.iter().map(|&o| b[o]).collect();
        for k in 0..n {
            let xk = x[k];
            if xk != 0.0 {
                for p in sym.l_col_ptr[k]..sym.l_col_ptr[k + 1] {
                    x[sym.l_row_idx[p]] -= self.l[p] * xk;
                }
            }
        }
        for k in 0..n {
            x[k] /= self.d[k];
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for p in sym.l_col_ptr[k]..sym.l_col_ptr[k + 1] {
                s -= self.l[p] * x[sym.l_row_idx[p]];
            }
            x[k] = s;
        }
        for (new, &old) in sym.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }
}
