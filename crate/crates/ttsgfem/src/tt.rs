//! Tensor-train tensors and operators.
//!
//! A tensor train stores a high-dimensional array as a chain of order-3
//! cores; core `l` has shape `(r_l, q_l, r_{l+1})` with boundary ranks 1.
//! Operators (matrix product operators) use order-4 cores with an output
//! and an input mode; the first operator core is kept as a bank of sparse
//! matrices because the physical mode is large.

use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// One order-3 core, data row-major as `(r_left, n, r_right)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Core {
    pub r_left: usize,
    pub n: usize,
    pub r_right: usize,
    pub data: Vec<f64>,
}

impl Core {
    pub fn zeros(r_left: usize, n: usize, r_right: usize) -> Self {
        Self { r_left, n, r_right, data: vec![0.0; r_left * n * r_right] }
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[(a * self.n + i) * self.r_right + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, v: f64) {
        self.data[(a * self.n + i) * self.r_right + b] = v;
    }

    #[inline]
    pub fn add_to(&mut self, a: usize, i: usize, b: usize, v: f64) {
        self.data[(a * self.n + i) * self.r_right + b] += v;
    }

    /// Matrix of shape `(r_left * n) x r_right`.
    pub fn unfold_left(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left * self.n, self.r_right, |r, c| self.data[r * self.r_right + c])
    }

    /// Matrix of shape `r_left x (n * r_right)`.
    pub fn unfold_right(&self) -> DMatrix<f64> {
        let cols = self.n * self.r_right;
        DMatrix::from_fn(self.r_left, cols, |r, c| self.data[r * cols + c])
    }

    pub fn from_unfold_left(m: &DMatrix<f64>, r_left: usize, n: usize) -> Self {
        let r_right = m.ncols();
        assert_eq!(m.nrows(), r_left * n);
        let mut data = vec![0.0; r_left * n * r_right];
        for r in 0..m.nrows() {
            for c in 0..r_right {
                data[r * r_right + c] = m[(r, c)];
            }
        }
        Self { r_left, n, r_right, data }
    }

    pub fn from_unfold_right(m: &DMatrix<f64>, n: usize, r_right: usize) -> Self {
        let r_left = m.nrows();
        assert_eq!(m.ncols(), n * r_right);
        let mut data = vec![0.0; r_left * n * r_right];
        for r in 0..r_left {
            for c in 0..n * r_right {
                data[r * n * r_right + c] = m[(r, c)];
            }
        }
        Self { r_left, n, r_right, data }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Tensor in tensor-train format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TTTensor {
    cores: Vec<Core>,
}

impl TTTensor {
    pub fn new(cores: Vec<Core>) -> Self {
        assert!(!cores.is_empty());
        assert_eq!(cores[0].r_left, 1, "boundary rank must be 1");
        assert_eq!(cores.last().unwrap().r_right, 1, "boundary rank must be 1");
        for pair in cores.windows(2) {
            assert_eq!(pair[0].r_right, pair[1].r_left, "adjacent core ranks must match");
        }
        Self { cores }
    }

    /// Rank-1 tensor from one vector per mode.
    pub fn from_rank_one(vectors: &[Vec<f64>]) -> Self {
        let cores = vectors
            .iter()
            .map(|v| Core { r_left: 1, n: v.len(), r_right: 1, data: v.clone() })
            .collect();
        Self::new(cores)
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::new(dims.iter().map(|&n| Core::zeros(1, n, 1)).collect())
    }

    /// Random rank-1 tensor with prescribed norm, for rank enrichment.
    pub fn random_rank_one<R: Rng>(dims: &[usize], norm: f64, rng: &mut R) -> Self {
        loop {
            let vectors: Vec<Vec<f64>> = dims
                .iter()
                .map(|&n| (0..n).map(|_| StandardNormal.sample(rng)).collect())
                .collect();
            let prod: f64 = vectors
                .iter()
                .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                .product();
            if prod > 0.0 {
                let mut t = Self::from_rank_one(&vectors);
                let s = norm / prod;
                for v in &mut t.cores[0].data {
                    *v *= s;
                }
                return t;
            }
        }
    }

    pub fn n_modes(&self) -> usize {
        self.cores.len()
    }

    pub fn core(&self, k: usize) -> &Core {
        &self.cores[k]
    }

    pub fn core_mut(&mut self, k: usize) -> &mut Core {
        &mut self.cores[k]
    }

    pub fn into_cores(self) -> Vec<Core> {
        self.cores
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n).collect()
    }

    /// Full rank vector `(1, r_1, ..., r_L, 1)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = vec![1];
        r.extend(self.cores.iter().map(|c| c.r_right));
        r
    }

    /// Evaluates at a multi-index by contracting core slices left to right.
    pub fn eval(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.cores.len(), "index arity mismatch");
        let mut v = vec![1.0f64];
        for (core, &i) in self.cores.iter().zip(idx) {
            assert!(i < core.n, "index {i} out of range for mode of size {}", core.n);
            let mut next = vec![0.0; core.r_right];
            for (a, &va) in v.iter().enumerate() {
                if va == 0.0 {
                    continue;
                }
                for b in 0..core.r_right {
                    next[b] += va * core.get(a, i, b);
                }
            }
            v = next;
        }
        v[0]
    }

    /// Dense reconstruction, mode 0 slowest; intended for small tensors.
    pub fn dense(&self) -> Vec<f64> {
        // Progressive contraction carrying a (prefix-size x rank) matrix.
        let mut m = vec![1.0f64];
        let mut rows = 1usize;
        let mut rank = 1usize;
        for core in &self.cores {
            let new_rows = rows * core.n;
            let mut next = vec![0.0; new_rows * core.r_right];
            for r in 0..rows {
                for i in 0..core.n {
                    for b in 0..core.r_right {
                        let mut acc = 0.0;
                        for a in 0..rank {
                            acc += m[r * rank + a] * core.get(a, i, b);
                        }
                        next[(r * core.n + i) * core.r_right + b] = acc;
                    }
                }
            }
            m = next;
            rows = new_rows;
            rank = core.r_right;
        }
        m
    }

    pub fn scale(&self, s: f64) -> TTTensor {
        let mut out = self.clone();
        for v in &mut out.cores[0].data {
            *v *= s;
        }
        out
    }

    /// Sum of two tensor trains by block-diagonal rank concatenation.
    pub fn add(&self, other: &TTTensor) -> TTTensor {
        assert_eq!(self.dims(), other.dims(), "dimension mismatch in add");
        let last = self.cores.len() - 1;
        if last == 0 {
            let mut c = self.cores[0].clone();
            for (v, w) in c.data.iter_mut().zip(&other.cores[0].data) {
                *v += w;
            }
            return TTTensor::new(vec![c]);
        }
        let mut cores = Vec::with_capacity(self.cores.len());
        for (k, (ca, cb)) in self.cores.iter().zip(&other.cores).enumerate() {
            let (rl_a, rr_a) = (ca.r_left, ca.r_right);
            let (rl_b, rr_b) = (cb.r_left, cb.r_right);
            let (rl, rr) = if k == 0 {
                (1, rr_a + rr_b)
            } else if k == last {
                (rl_a + rl_b, 1)
            } else {
                (rl_a + rl_b, rr_a + rr_b)
            };
            let mut c = Core::zeros(rl, ca.n, rr);
            for a in 0..rl_a {
                for i in 0..ca.n {
                    for b in 0..rr_a {
                        c.set(a, i, b, ca.get(a, i, b));
                    }
                }
            }
            let (oa, ob) = (if k == 0 { 0 } else { rl_a }, if k == last { 0 } else { rr_a });
            for a in 0..rl_b {
                for i in 0..cb.n {
                    for b in 0..rr_b {
                        let prev = c.get(a + oa, i, b + ob);
                        c.set(a + oa, i, b + ob, prev + cb.get(a, i, b));
                    }
                }
            }
            cores.push(c);
        }
        TTTensor::new(cores)
    }

    /// Inner product with another tensor train of identical dims.
    pub fn dot(&self, other: &TTTensor) -> f64 {
        assert_eq!(self.dims(), other.dims(), "dimension mismatch in dot");
        // e has shape (rank_self x rank_other).
        let mut e = vec![1.0f64];
        let mut ra = 1usize;
        let mut rb = 1usize;
        for (ca, cb) in self.cores.iter().zip(&other.cores) {
            let (na, nb) = (ca.r_right, cb.r_right);
            let mut next = vec![0.0; na * nb];
            for i in 0..ca.n {
                // t(a', b) = sum_a ca(a, i, a') e(a, b)
                let mut t = vec![0.0; na * rb];
                for a in 0..ra {
                    for ap in 0..na {
                        let cav = ca.get(a, i, ap);
                        if cav == 0.0 {
                            continue;
                        }
                        for b in 0..rb {
                            t[ap * rb + b] += cav * e[a * rb + b];
                        }
                    }
                }
                // next(a', b') += sum_b t(a', b) cb(b, i, b')
                for ap in 0..na {
                    for b in 0..rb {
                        let tv = t[ap * rb + b];
                        if tv == 0.0 {
                            continue;
                        }
                        for bp in 0..nb {
                            next[ap * nb + bp] += tv * cb.get(b, i, bp);
                        }
                    }
                }
            }
            e = next;
            ra = na;
            rb = nb;
        }
        e[0]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).max(0.0).sqrt()
    }

    /// Norm computed by orthogonalization instead of an inner product.
    ///
    /// The plain `norm` loses half the significant digits on differences of
    /// nearly equal tensors (cancellation in the dot product puts its floor
    /// near `sqrt(eps) * scale`); this variant stays accurate to roundoff
    /// and is what convergence checks against tight tolerances should use.
    pub fn norm_orthogonal(&self) -> f64 {
        let mut t = self.clone();
        t.right_orthogonalize();
        t.cores[0].frobenius_norm()
    }

    /// Right-orthogonalizes in place: after the call every core except the
    /// first has orthonormal rows in its right unfolding, and the tensor
    /// norm equals the Frobenius norm of the first core.
    pub fn right_orthogonalize(&mut self) {
        for k in (1..self.cores.len()).rev() {
            let m = self.cores[k].unfold_right();
            // M = R^T Q^T from the QR decomposition of M^T.
            let qr = m.transpose().qr();
            let q = qr.q();
            let r = qr.r();
            let p = q.ncols();
            self.cores[k] = Core::from_unfold_right(&q.transpose(), self.cores[k].n, self.cores[k].r_right);
            let prev = self.cores[k - 1].unfold_left() * r.transpose();
            self.cores[k - 1] = Core::from_unfold_left(&prev, self.cores[k - 1].r_left, self.cores[k - 1].n);
            debug_assert_eq!(self.cores[k - 1].r_right, p);
        }
    }

    /// Rank truncation by hierarchical SVD.
    ///
    /// Right-orthogonalizes, then sweeps left to right truncating each left
    /// unfolding: kept rank is the larger of the energy criterion (discarded
    /// squared singular values at most `tol^2 ||t||^2 / L` per unfolding)
    /// and the threshold criterion (keep all singular values at least
    /// `tol * sigma_max`), capped by `max_rank`. The result satisfies
    /// `||t - round(t)|| <= tol ||t|| sqrt(L)`.
    pub fn round(&self, tol: f64, max_rank: Option<usize>) -> TTTensor {
        assert!(tol >= 0.0);
        let mut t = self.clone();
        let n_cores = t.cores.len();
        if n_cores == 1 {
            return t;
        }
        t.right_orthogonalize();
        let norm = t.cores[0].frobenius_norm();
        let budget = tol * tol * norm * norm / (n_cores - 1) as f64;
        for k in 0..n_cores - 1 {
            let m = t.cores[k].unfold_left();
            let svd = m.svd(true, true);
            let u = svd.u.as_ref().expect("svd requested u");
            let vt = svd.v_t.as_ref().expect("svd requested v_t");
            let sv = &svd.singular_values;
            let full = sv.len();
            // Energy criterion: drop the smallest trailing block within budget.
            let mut p_energy = full;
            let mut acc = 0.0;
            while p_energy > 1 {
                let s = sv[p_energy - 1];
                if acc + s * s > budget {
                    break;
                }
                acc += s * s;
                p_energy -= 1;
            }
            // Threshold criterion: keep singular values >= tol * sigma_max.
            let cut = tol * sv[0];
            let p_keep = sv.iter().take_while(|&&s| s >= cut).count().max(1);
            let mut p = p_energy.max(p_keep);
            if let Some(cap) = max_rank {
                p = p.min(cap.max(1));
            }
            let rl = t.cores[k].r_left;
            let n = t.cores[k].n;
            let u_trunc = u.columns(0, p).into_owned();
            t.cores[k] = Core::from_unfold_left(&u_trunc, rl, n);
            // carry = diag(sigma) * V^T into the next core.
            let mut carry = vt.rows(0, p).into_owned();
            for (i, mut row) in carry.row_iter_mut().enumerate() {
                row *= sv[i];
            }
            let next = carry * t.cores[k + 1].unfold_right();
            t.cores[k + 1] = Core::from_unfold_right(&next, t.cores[k + 1].n, t.cores[k + 1].r_right);
        }
        t
    }

    /// Hadamard product with a rank-1 0/1 mask given per mode; `None`
    /// passes a mode through unchanged.
    pub fn mask_hadamard(&self, masks: &[Option<Vec<bool>>]) -> TTTensor {
        assert_eq!(masks.len(), self.cores.len());
        let mut out = self.clone();
        for (core, mask) in out.cores.iter_mut().zip(masks) {
            if let Some(keep) = mask {
                assert_eq!(keep.len(), core.n, "mask length mismatch");
                for (i, &k) in keep.iter().enumerate() {
                    if !k {
                        for a in 0..core.r_left {
                            for b in 0..core.r_right {
                                core.set(a, i, b, 0.0);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Zero-pads mode `k` to a larger dimension (degree refinement).
    pub fn pad_mode(&self, k: usize, new_n: usize) -> TTTensor {
        let core = &self.cores[k];
        assert!(new_n >= core.n);
        let mut c = Core::zeros(core.r_left, new_n, core.r_right);
        for a in 0..core.r_left {
            for i in 0..core.n {
                for b in 0..core.r_right {
                    c.set(a, i, b, core.get(a, i, b));
                }
            }
        }
        let mut cores = self.cores.clone();
        cores[k] = c;
        TTTensor::new(cores)
    }

    /// Appends a trailing mode held at a fixed unit index (dimension
    /// activation): the new core is the indicator of `unit_index`.
    pub fn append_unit_mode(&self, n: usize, unit_index: usize) -> TTTensor {
        assert!(unit_index < n);
        let mut cores = self.cores.clone();
        let mut c = Core::zeros(1, n, 1);
        c.set(0, unit_index, 0, 1.0);
        cores.push(c);
        TTTensor::new(cores)
    }
}

/// Effective dimension of the tensor-train manifold:
/// `q_0 r_1 + sum_{l=1}^{L-1} (r_l q_l r_{l+1} - r_{l+1}^2) + r_L q_L`.
pub fn tt_dofs(t: &TTTensor) -> usize {
    let cores = &t.cores;
    let last = cores.len() - 1;
    if last == 0 {
        return cores[0].n;
    }
    let mut dofs = cores[0].n * cores[0].r_right;
    for core in &cores[1..last] {
        dofs += core.r_left * core.n * core.r_right - core.r_right * core.r_right;
    }
    dofs += cores[last].r_left * cores[last].n;
    dofs
}

/// One order-4 operator core, data row-major as
/// `(s_left, n_out, n_in, s_right)`.
#[derive(Clone, Debug)]
pub struct OpCore {
    pub s_left: usize,
    pub n_out: usize,
    pub n_in: usize,
    pub s_right: usize,
    pub data: Vec<f64>,
}

impl OpCore {
    pub fn zeros(s_left: usize, n_out: usize, n_in: usize, s_right: usize) -> Self {
        Self { s_left, n_out, n_in, s_right, data: vec![0.0; s_left * n_out * n_in * s_right] }
    }

    #[inline]
    pub fn get(&self, k: usize, mu: usize, nu: usize, k2: usize) -> f64 {
        self.data[((k * self.n_out + mu) * self.n_in + nu) * self.s_right + k2]
    }

    #[inline]
    pub fn set(&mut self, k: usize, mu: usize, nu: usize, k2: usize, v: f64) {
        self.data[((k * self.n_out + mu) * self.n_in + nu) * self.s_right + k2] = v;
    }
}

/// Operator in matrix-product form; the physical (first) core is a bank of
/// sparse matrices indexed by the first operator rank.
#[derive(Clone, Debug)]
pub struct TTOperator {
    pub first: Vec<CsrMatrix>,
    pub cores: Vec<OpCore>,
    /// Mode sizes of the coefficient train the operator was assembled from,
    /// used for operator dof accounting.
    pub coeff_dims: Vec<usize>,
}

impl TTOperator {
    pub fn new(first: Vec<CsrMatrix>, cores: Vec<OpCore>, coeff_dims: Vec<usize>) -> Self {
        assert!(!first.is_empty());
        let (nr, nc) = (first[0].n_rows(), first[0].n_cols());
        for m in &first {
            assert_eq!((m.n_rows(), m.n_cols()), (nr, nc));
        }
        if let Some(c0) = cores.first() {
            assert_eq!(c0.s_left, first.len(), "first rank mismatch");
            for pair in cores.windows(2) {
                assert_eq!(pair[0].s_right, pair[1].s_left);
            }
            assert_eq!(cores.last().unwrap().s_right, 1);
        } else {
            assert_eq!(first.len(), 1);
        }
        assert_eq!(coeff_dims.len(), cores.len());
        Self { first, cores, coeff_dims }
    }

    /// Identity operator for given mode sizes (rank 1 everywhere).
    pub fn identity(phys_dim: usize, stoch_dims: &[usize]) -> Self {
        let eye = CsrMatrix::from_triplets(
            phys_dim,
            phys_dim,
            &(0..phys_dim).map(|i| (i, i, 1.0)).collect::<Vec<_>>(),
        );
        let cores = stoch_dims
            .iter()
            .map(|&n| {
                let mut c = OpCore::zeros(1, n, n, 1);
                for i in 0..n {
                    c.set(0, i, i, 0, 1.0);
                }
                c
            })
            .collect();
        Self::new(vec![eye], cores, stoch_dims.to_vec())
    }

    pub fn n_stoch_modes(&self) -> usize {
        self.cores.len()
    }

    /// Output mode sizes `(N, d_1, ..., d_L)`.
    pub fn dims_out(&self) -> Vec<usize> {
        let mut d = vec![self.first[0].n_rows()];
        d.extend(self.cores.iter().map(|c| c.n_out));
        d
    }

    /// Input mode sizes.
    pub fn dims_in(&self) -> Vec<usize> {
        let mut d = vec![self.first[0].n_cols()];
        d.extend(self.cores.iter().map(|c| c.n_in));
        d
    }

    /// Applies the operator; output ranks are products `s_l * r_l` with the
    /// operator rank slowest in the packed index.
    pub fn apply(&self, t: &TTTensor) -> TTTensor {
        assert_eq!(self.dims_in(), t.dims(), "operator/tensor dimension mismatch");
        let s1 = self.first.len();
        let t0 = t.core(0);
        let n_out = self.first[0].n_rows();
        let mut first = Core::zeros(1, n_out, s1 * t0.r_right);
        let mut col = vec![0.0; t0.n];
        let mut out_col = vec![0.0; n_out];
        for b in 0..t0.r_right {
            for i in 0..t0.n {
                col[i] = t0.get(0, i, b);
            }
            for (k, mat) in self.first.iter().enumerate() {
                mat.matvec_into(&col, &mut out_col);
                for (i, &v) in out_col.iter().enumerate() {
                    first.set(0, i, k * t0.r_right + b, v);
                }
            }
        }
        let mut cores = vec![first];
        for (oc, tc) in self.cores.iter().zip(t.cores.iter().skip(1)) {
            let (ra, ra2) = (tc.r_left, tc.r_right);
            let mut c = Core::zeros(oc.s_left * ra, oc.n_out, oc.s_right * ra2);
            for k in 0..oc.s_left {
                for a in 0..ra {
                    for mu in 0..oc.n_out {
                        for k2 in 0..oc.s_right {
                            for a2 in 0..ra2 {
                                let mut acc = 0.0;
                                for nu in 0..oc.n_in {
                                    acc += oc.get(k, mu, nu, k2) * tc.get(a, nu, a2);
                                }
                                c.set(k * ra + a, mu, k2 * ra2 + a2, acc);
                            }
                        }
                    }
                }
            }
            cores.push(c);
        }
        TTTensor::new(cores)
    }

    /// Dense matrix of the full operator (tests only): rows indexed by the
    /// output multi-index with mode 0 slowest, columns likewise for input.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let rows: usize = self.dims_out().iter().product();
        let cols: usize = self.dims_in().iter().product();
        let mut m = DMatrix::zeros(rows, cols);
        let dims_out = self.dims_out();
        let dims_in = self.dims_in();
        let mut out_idx = vec![0usize; dims_out.len()];
        for r in 0..rows {
            let mut rr = r;
            for (k, &d) in dims_out.iter().enumerate().rev() {
                out_idx[k] = rr % d;
                rr /= d;
            }
            let mut in_idx = vec![0usize; dims_in.len()];
            for c in 0..cols {
                let mut cc = c;
                for (k, &d) in dims_in.iter().enumerate().rev() {
                    in_idx[k] = cc % d;
                    cc /= d;
                }
                let mut v = vec![0.0; self.first.len()];
                for (k, mat) in self.first.iter().enumerate() {
                    v[k] = mat.get(out_idx[0], in_idx[0]);
                }
                for (l, oc) in self.cores.iter().enumerate() {
                    let mut next = vec![0.0; oc.s_right];
                    for (k, &vk) in v.iter().enumerate() {
                        if vk == 0.0 {
                            continue;
                        }
                        for k2 in 0..oc.s_right {
                            next[k2] += vk * oc.get(k, out_idx[l + 1], in_idx[l + 1], k2);
                        }
                    }
                    v = next;
                }
                m[(r, c)] = v[0];
            }
        }
        m
    }

    /// Operator degrees of freedom:
    /// `N^2 s_1 - s_1^2 + sum_{l=1}^{L-1} (s_l q_l^2 s_{l+1} - s_{l+1}^2) + s_L q_L^2`
    /// with `q_l` the coefficient mode sizes.
    pub fn op_dofs(&self) -> usize {
        let n = self.first[0].n_rows();
        let s1 = self.first.len();
        let mut dofs = n * n * s1 - s1 * s1;
        let ll = self.cores.len();
        for l in 0..ll.saturating_sub(1) {
            let s_l = self.cores[l].s_left;
            let s_next = self.cores[l].s_right;
            let q = self.coeff_dims[l];
            dofs += s_l * q * q * s_next - s_next * s_next;
        }
        if ll > 0 {
            let s_last = self.cores[ll - 1].s_left;
            let q = self.coeff_dims[ll - 1];
            dofs += s_last * q * q;
        }
        dofs
    }
}
