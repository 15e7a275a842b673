//! Sparse linear algebra for the physical discretization.
//!
//! Compressed sparse row matrices, reverse Cuthill-McKee ordering, a
//! profile (skyline) Cholesky factorization for SPD systems and a
//! preconditioned conjugate gradient iteration. Everything is sequential
//! and iteration orders are fixed, so results are reproducible bit for bit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("matrix is not positive definite: pivot {pivot} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("conjugate gradients did not reach tolerance {tol} in {iters} iterations (residual {residual})")]
    CgDidNotConverge { iters: usize, tol: f64, residual: f64 },
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from (row, col, value) triplets; duplicate
    /// positions are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        for &(r, c, _) in &entries {
            assert!(r < n_rows && c < n_cols, "triplet ({r},{c}) out of bounds");
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut k = 0;
        while k < entries.len() {
            let (r, c, mut v) = entries[k];
            let mut j = k + 1;
            while j < entries.len() && entries[j].0 == r && entries[j].1 == c {
                v += entries[j].2;
                j += 1;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            k = j;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row `r` as parallel column/value slices.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y = A x` writing into a caller-provided buffer.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    /// Entry lookup by binary search within the row.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Dense copy, row-major; intended for small matrices in tests.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                d[(r, c)] = v;
            }
        }
        d
    }

    /// Frobenius-style scaled addition `A + s B` on identical sparsity or not.
    pub fn add_scaled(&self, s: f64, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_rows, other.n_rows);
        assert_eq!(self.n_cols, other.n_cols);
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((r, c, v));
            }
            let (cols, vals) = other.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((r, c, s * v));
            }
        }
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, &triplets)
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern.
///
/// Returns `perm` with `perm[new] = old`. Starts from a pseudo-peripheral
/// vertex found by repeated breadth-first level structures; within a level,
/// neighbors are visited by increasing degree with index as tie-breaker.
pub fn rcm_order(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows();
    assert_eq!(n, a.n_cols());
    let degree: Vec<usize> = (0..n).map(|r| a.row(r).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, visited_global: &[bool]| -> (usize, Vec<usize>) {
        // Returns (eccentricity, last level) within the component of start.
        let mut seen = visited_global.to_vec();
        let mut frontier = vec![start];
        seen[start] = true;
        let mut last = frontier.clone();
        let mut ecc = 0;
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in a.row(u).0 {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            if !next.is_empty() {
                ecc += 1;
                last = next.clone();
            }
            frontier = next;
        }
        (ecc, last)
    };

    for comp_seed in 0..n {
        if visited[comp_seed] {
            continue;
        }
        // Pseudo-peripheral start for this component.
        let mut start = comp_seed;
        let (mut ecc, mut last) = bfs_levels(start, &visited);
        loop {
            let cand = *last
                .iter()
                .min_by_key(|&&v| (degree[v], v))
                .expect("level structure is nonempty");
            let (ecc2, last2) = bfs_levels(cand, &visited);
            if ecc2 > ecc {
                start = cand;
                ecc = ecc2;
                last = last2;
            } else {
                break;
            }
        }
        // Cuthill-McKee breadth-first sweep.
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(start);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = a.row(u).0.iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Profile (skyline) Cholesky factorization of an SPD matrix, with a
/// reverse Cuthill-McKee reordering applied first to keep the profile thin.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    /// `perm[new] = old` ordering used internally.
    perm: Vec<usize>,
    /// Start column of each stored row segment.
    first: Vec<usize>,
    /// Rows of L, row i holding columns `first[i]..=i`.
    rows: Vec<Vec<f64>>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self, SparseError> {
        let n = a.n_rows();
        assert_eq!(n, a.n_cols());
        let perm = rcm_order(a);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        // Profile: first[i] = min over nonzeros (i, j), j <= i in new order.
        let mut first: Vec<usize> = (0..n).collect();
        for old_r in 0..n {
            let i = iperm[old_r];
            for &old_c in a.row(old_r).0 {
                let j = iperm[old_c];
                if j < i && j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut rows: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; i - first[i] + 1]).collect();
        for old_r in 0..n {
            let (cols, vals) = a.row(old_r);
            let i = iperm[old_r];
            for (&old_c, &v) in cols.iter().zip(vals) {
                let j = iperm[old_c];
                if j <= i {
                    rows[i][j - first[i]] += v;
                }
            }
        }
        // Row-oriented profile factorization.
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut acc = 0.0;
                for k in lo..j {
                    acc += rows[i][k - fi] * rows[j][k - fj];
                }
                let ljj = rows[j][j - fj];
                rows[i][j - fi] = (rows[i][j - fi] - acc) / ljj;
            }
            let mut acc = rows[i][i - fi];
            for k in fi..i {
                let l = rows[i][k - fi];
                acc -= l * l;
            }
            if acc <= 0.0 || !acc.is_finite() {
                return Err(SparseError::NotPositiveDefinite { row: i, pivot: acc });
            }
            rows[i][i - fi] = acc.sqrt();
        }
        Ok(Self { perm, first, rows })
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = b[self.perm[i]];
        }
        // Forward: L y' = y.
        for i in 0..n {
            let fi = self.first[i];
            let mut acc = y[i];
            for k in fi..i {
                acc -= self.rows[i][k - fi] * y[k];
            }
            y[i] = acc / self.rows[i][i - fi];
        }
        // Backward: L^T x' = y'.
        for i in (0..n).rev() {
            let fi = self.first[i];
            y[i] /= self.rows[i][i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.rows[i][k - fi] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }
}

/// Preconditioned conjugate gradients for an SPD operator given as a closure.
///
/// Stops when the unpreconditioned residual norm drops below
/// `tol_abs + tol_rel * ||b||`; returns the iterate, the iteration count and
/// the final residual norm. The error value reports non-convergence.
pub fn cg_solve<A, P>(
    apply: A,
    precond: P,
    b: &[f64],
    x0: Option<&[f64]>,
    tol_rel: f64,
    tol_abs: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, f64), SparseError>
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = tol_abs + tol_rel * norm_b;
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    apply(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut res_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if res_norm <= target {
        return Ok((x, 0, res_norm));
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 || !pap.is_finite() {
            return Err(SparseError::CgDidNotConverge { iters: it, tol: target, residual: res_norm });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res_norm <= target {
            return Ok((x, it, res_norm));
        }
        z = precond(&r);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SparseError::CgDidNotConverge { iters: max_iter, tol: target, residual: res_norm })
}
