//! Lognormal coefficient model and its tensor-train compression.
//!
//! The diffusion coefficient is `a(x, y) = exp(sum_m b_m(x) y_m)` with
//! cosine modes `b_m` of algebraically decaying amplitude and independent
//! standard Gaussian parameters `y_m`. Each factor `exp(b_m(x) y_m)` has an
//! explicit expansion in the scaled Hermite basis, and a right-to-left sweep
//! of quadrature-discretized correlation matrices compresses the product
//! into a train of low-rank stochastic cores behind a bank of continuous
//! physical functions `a_0[k]`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaos::{exp_coeffs, hermite_eval_all, ChaosError, MeasureParams};
use crate::tt::Core;

#[derive(Debug, Error)]
pub enum LognormalError {
    #[error("invalid field specification: {0}")]
    InvalidFieldSpec(&'static str),
    #[error("correlation matrix has eigenvalue {lambda:.3e} below -1e-10 * {lambda_max:.3e}")]
    NegativeEigenvalue { lambda: f64, lambda_max: f64 },
    #[error(transparent)]
    Measure(#[from] ChaosError),
}

/// Gauss-Legendre rule on [-1, 1] via the Jacobi matrix, polished with two
/// Newton steps on the Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eigen = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let legendre = |x: f64| {
        let mut p = vec![0.0; n + 1];
        p[0] = 1.0;
        if n >= 1 {
            p[1] = x;
        }
        for k in 1..n {
            p[k + 1] = ((2 * k + 1) as f64 * x * p[k] - k as f64 * p[k - 1]) / (k + 1) as f64;
        }
        p
    };
    let mut weights = vec![0.0; n];
    for (j, x) in nodes.iter_mut().enumerate() {
        for _ in 0..2 {
            let p = legendre(*x);
            let dp = n as f64 * (*x * p[n] - p[n - 1]) / (*x * *x - 1.0);
            *x -= p[n] / dp;
        }
        let p = legendre(*x);
        let dp = n as f64 * (*x * p[n] - p[n - 1]) / (*x * *x - 1.0);
        weights[j] = 2.0 / ((1.0 - *x * *x) * dp * dp);
    }
    (nodes, weights)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct QuadDescriptor {
    cells: usize,
    order: usize,
}

/// Tensorized Gauss-Legendre rule on a uniform cell grid over the unit
/// square. Serializes as its descriptor and is rebuilt verbatim on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "QuadDescriptor", into = "QuadDescriptor")]
pub struct QuadGrid {
    cells: usize,
    order: usize,
    coords: Vec<f64>,
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl QuadGrid {
    pub fn gauss_legendre(cells: usize, order: usize) -> Self {
        assert!(cells >= 1 && order >= 1);
        let (ref_nodes, ref_weights) = gauss_legendre(order);
        let h = 1.0 / cells as f64;
        let mut coords = Vec::with_capacity(cells * order);
        let mut weights_1d = Vec::with_capacity(cells * order);
        for c in 0..cells {
            for (x, w) in ref_nodes.iter().zip(&ref_weights) {
                coords.push(h * (c as f64 + 0.5 * (x + 1.0)));
                weights_1d.push(w * h / 2.0);
            }
        }
        let n = coords.len();
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                points.push([coords[ix], coords[iy]]);
                weights.push(weights_1d[ix] * weights_1d[iy]);
            }
        }
        QuadGrid { cells, order, coords, points, weights }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.weights.len());
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Bilinear interpolation of nodal values on the rectilinear node grid,
    /// linearly extrapolated outside the outermost nodes.
    pub fn interpolate(&self, values: &[f64], p: [f64; 2]) -> f64 {
        assert_eq!(values.len(), self.points.len());
        let n = self.coords.len();
        let bracket = |x: f64| -> (usize, f64) {
            let i = match self.coords.partition_point(|&c| c < x) {
                0 => 0,
                k if k >= n => n - 2,
                k => k - 1,
            };
            let t = (x - self.coords[i]) / (self.coords[i + 1] - self.coords[i]);
            (i, t)
        };
        let (ix, tx) = bracket(p[0]);
        let (iy, ty) = bracket(p[1]);
        let at = |jx: usize, jy: usize| values[jy * n + jx];
        let lo = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let hi = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        lo * (1.0 - ty) + hi * ty
    }
}

impl From<QuadDescriptor> for QuadGrid {
    fn from(d: QuadDescriptor) -> Self {
        QuadGrid::gauss_legendre(d.cells, d.order)
    }
}

impl From<QuadGrid> for QuadDescriptor {
    fn from(g: QuadGrid) -> Self {
        QuadDescriptor { cells: g.cells, order: g.order }
    }
}

/// Planar frequency pair of mode `m >= 1`: the modes enumerate all cosine
/// products `cos(2 pi r1 x1) cos(2 pi r2 x2)` in increasing total order.
pub fn mode_freqs(m: usize) -> (usize, usize) {
    assert!(m >= 1, "mode indices start at 1");
    let mut k = (-0.5 + (0.25 + 2.0 * m as f64).sqrt()).floor() as usize;
    while m < k * (k + 1) / 2 {
        k -= 1;
    }
    while m > k * (k + 1) / 2 + k {
        k += 1;
    }
    let r1 = m - k * (k + 1) / 2;
    (r1, k - r1)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldSpec {
    amp: f64,
    decay: f64,
    len: usize,
    m_trunc: usize,
    quad: QuadGrid,
}

impl FieldSpec {
    pub fn new(
        amp: f64,
        decay: f64,
        len: usize,
        m_trunc: usize,
        quad: QuadGrid,
    ) -> Result<Self, LognormalError> {
        if !(amp > 0.0) {
            return Err(LognormalError::InvalidFieldSpec("amplitude must be positive"));
        }
        if !(decay > 1.0) {
            return Err(LognormalError::InvalidFieldSpec(
                "decay must exceed 1 for a summable amplitude sequence",
            ));
        }
        if len < 1 {
            return Err(LognormalError::InvalidFieldSpec("need at least one mode"));
        }
        if len > m_trunc {
            return Err(LognormalError::InvalidFieldSpec(
                "expansion length exceeds the reference truncation",
            ));
        }
        Ok(FieldSpec { amp, decay, len, m_trunc, quad })
    }

    /// Benchmark field: amplitude 0.9, reference truncation 100, and a
    /// 128 x 128 node Gauss-Legendre grid.
    pub fn benchmark(len: usize, decay: f64) -> Self {
        FieldSpec::new(0.9, decay, len, 100, QuadGrid::gauss_legendre(64, 2)).unwrap()
    }

    pub fn amp(&self) -> f64 {
        self.amp
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn m_trunc(&self) -> usize {
        self.m_trunc
    }

    pub fn quad(&self) -> &QuadGrid {
        &self.quad
    }

    /// Sup norm of mode `m`, `amp * m^(-decay)`.
    pub fn beta(&self, m: usize) -> f64 {
        assert!(m >= 1);
        self.amp * (m as f64).powf(-self.decay)
    }

    pub fn betas(&self, count: usize) -> Vec<f64> {
        (1..=count).map(|m| self.beta(m)).collect()
    }

    /// Measure parameters for the first `count` modes.
    pub fn measure_params(
        &self,
        count: usize,
        rho: f64,
        theta: f64,
    ) -> Result<MeasureParams, ChaosError> {
        MeasureParams::new(self.betas(count), rho, theta)
    }

    /// Expansion mode `b_m(x)`.
    pub fn bm_eval(&self, m: usize, x: [f64; 2]) -> f64 {
        let (r1, r2) = mode_freqs(m);
        let two_pi = 2.0 * std::f64::consts::PI;
        self.beta(m) * (two_pi * r1 as f64 * x[0]).cos() * (two_pi * r2 as f64 * x[1]).cos()
    }

    /// Exponent `b(x, y) = sum_m b_m(x) y_m` truncated at the length of `y`.
    pub fn b_exact(&self, x: [f64; 2], y: &[f64]) -> f64 {
        y.iter().enumerate().map(|(i, &ym)| self.bm_eval(i + 1, x) * ym).sum()
    }

    /// Coefficient `a(x, y) = exp(b(x, y))`, positive for finite arguments.
    pub fn a_exact(&self, x: [f64; 2], y: &[f64]) -> f64 {
        self.b_exact(x, y).exp()
    }
}

/// Tensor-train coefficient with a continuous first component: a bank of
/// physical functions stored at the quadrature nodes and one orthonormal
/// stochastic core per expansion dimension.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoeffTT {
    /// Bank values, row `k` holding `a_0[k]` at all quadrature nodes.
    a0: Vec<f64>,
    n_banks: usize,
    cores: Vec<Core>,
    degrees: Vec<usize>,
    params: MeasureParams,
    quad: QuadGrid,
}

impl CoeffTT {
    pub fn n_banks(&self) -> usize {
        self.n_banks
    }

    pub fn n_modes(&self) -> usize {
        self.cores.len()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn params(&self) -> &MeasureParams {
        &self.params
    }

    pub fn quad(&self) -> &QuadGrid {
        &self.quad
    }

    pub fn core(&self, l: usize) -> &Core {
        &self.cores[l]
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    /// Ranks `s_1, ..., s_L` between the components (the bank count first).
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.r_left).collect();
        r.push(1);
        r
    }

    pub fn a0_bank(&self, k: usize) -> &[f64] {
        let p = self.quad.n_points();
        &self.a0[k * p..(k + 1) * p]
    }

    /// Contracts the stochastic cores at a parameter sample, returning the
    /// bank weights `v_k` so that `a(x, y) = sum_k a_0[k](x) v_k`.
    pub fn stoch_contraction(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_modes(), "one parameter per stochastic mode");
        let mut v = vec![1.0];
        for l in (0..self.cores.len()).rev() {
            let core = &self.cores[l];
            let h = hermite_eval_all(core.n - 1, y[l] / self.params.sigma(l));
            let mut next = vec![0.0; core.r_left];
            for k in 0..core.r_left {
                let mut acc = 0.0;
                for nu in 0..core.n {
                    for k2 in 0..core.r_right {
                        acc += core.get(k, nu, k2) * h[nu] * v[k2];
                    }
                }
                next[k] = acc;
            }
            v = next;
        }
        v
    }

    /// Evaluates the compressed coefficient at every quadrature node.
    pub fn eval_at_nodes(&self, y: &[f64]) -> Vec<f64> {
        let v = self.stoch_contraction(y);
        let p = self.quad.n_points();
        let mut out = vec![0.0; p];
        for (k, &vk) in v.iter().enumerate() {
            let bank = self.a0_bank(k);
            for (o, b) in out.iter_mut().zip(bank) {
                *o += vk * b;
            }
        }
        out
    }

    pub fn eval_node(&self, q: usize, y: &[f64]) -> f64 {
        let v = self.stoch_contraction(y);
        v.iter().enumerate().map(|(k, &vk)| vk * self.a0_bank(k)[q]).sum()
    }

    /// Mean field at the quadrature nodes: all cores contracted at degree 0.
    pub fn mean_at_nodes(&self) -> Vec<f64> {
        let mut v = vec![1.0];
        for l in (0..self.cores.len()).rev() {
            let core = &self.cores[l];
            let mut next = vec![0.0; core.r_left];
            for k in 0..core.r_left {
                next[k] = (0..core.r_right).map(|k2| core.get(k, 0, k2) * v[k2]).sum();
            }
            v = next;
        }
        let p = self.quad.n_points();
        let mut out = vec![0.0; p];
        for (k, &vk) in v.iter().enumerate() {
            let bank = self.a0_bank(k);
            for (o, b) in out.iter_mut().zip(bank) {
                *o += vk * b;
            }
        }
        out
    }

    /// Bank functions at an arbitrary point, rebuilt from the cores and the
    /// per-dimension expansion coefficients instead of the stored node
    /// values.
    pub fn a0_at_with(&self, modes: impl Fn(usize, [f64; 2]) -> f64, x: [f64; 2]) -> Vec<f64> {
        let mut v = vec![1.0];
        for l in (0..self.cores.len()).rev() {
            let core = &self.cores[l];
            let t = modes(l + 1, x) * self.params.sigma(l);
            let c = exp_coeffs(t, core.n - 1);
            let mut next = vec![0.0; core.r_left];
            for k in 0..core.r_left {
                let mut acc = 0.0;
                for nu in 0..core.n {
                    for k2 in 0..core.r_right {
                        acc += core.get(k, nu, k2) * c[nu] * v[k2];
                    }
                }
                next[k] = acc;
            }
            v = next;
        }
        v
    }

    pub fn a0_at(&self, spec: &FieldSpec, x: [f64; 2]) -> Vec<f64> {
        self.a0_at_with(|m, p| spec.bm_eval(m, p), x)
    }

    /// Bank functions interpolated from the node grid.
    pub fn a0_interpolated(&self, x: [f64; 2]) -> Vec<f64> {
        (0..self.n_banks).map(|k| self.quad.interpolate(self.a0_bank(k), x)).collect()
    }
}

/// Compresses `exp(sum_l b(l, x) y_l)` over `degrees.len()` dimensions for
/// arbitrary mode functions `b(l, x)`, `l = 1, ..., L`.
///
/// Sweeping right to left, the correlation matrix of the per-dimension
/// expansion functions against the current reduced basis is assembled by
/// quadrature and eigendecomposed; the leading eigenvectors (at most
/// `s_max`, dropping eigenvalues below `1e-14` of the largest) become the
/// stochastic core and define the next reduced basis.
pub fn split_coefficient_with(
    modes: impl Fn(usize, [f64; 2]) -> f64,
    quad: &QuadGrid,
    params: &MeasureParams,
    degrees: &[usize],
    s_max: usize,
) -> Result<CoeffTT, LognormalError> {
    let levels = degrees.len();
    assert!(levels >= 1, "need at least one stochastic dimension");
    assert!(params.len() >= levels, "measure parameters must cover every dimension");
    assert!(degrees.iter().all(|&q| q >= 1), "degrees must be positive");
    assert!(s_max >= 1);
    let n_points = quad.n_points();
    let block = 4096.min(n_points);

    // Reduced basis of the already-processed right part, one row per rank.
    let mut reduced: Vec<f64> = vec![1.0; n_points];
    let mut s_next = 1usize;
    let mut cores: Vec<Core> = Vec::with_capacity(levels);

    for l in (1..=levels).rev() {
        let q_l = degrees[l - 1];
        let sigma = params.sigma(l - 1);
        let n_cols = q_l * s_next;
        let fill_block = |start: usize, len: usize, e: &mut DMatrix<f64>| {
            for (row, q) in (start..start + len).enumerate() {
                let t = modes(l, quad.points()[q]) * sigma;
                let c = exp_coeffs(t, q_l - 1);
                for nu in 0..q_l {
                    for k2 in 0..s_next {
                        e[(row, nu * s_next + k2)] = c[nu] * reduced[k2 * n_points + q];
                    }
                }
            }
        };

        let mut corr = DMatrix::zeros(n_cols, n_cols);
        let mut e = DMatrix::zeros(block, n_cols);
        let mut start = 0;
        while start < n_points {
            let len = block.min(n_points - start);
            let mut eb = if len == block { std::mem::take(&mut e) } else { DMatrix::zeros(len, n_cols) };
            fill_block(start, len, &mut eb);
            let mut weighted = eb.clone();
            for (row, q) in (start..start + len).enumerate() {
                let w = quad.weights()[q].sqrt();
                for col in 0..n_cols {
                    weighted[(row, col)] *= w;
                }
            }
            corr += weighted.tr_mul(&weighted);
            if len == block {
                e = eb;
            }
            start += len;
        }

        let eigen = SymmetricEigen::new(corr);
        // Underflowed correlation blocks can produce non-finite eigenvalues;
        // rank them last so they are never kept.
        let finite = |v: f64| if v.is_finite() { v } else { f64::NEG_INFINITY };
        let mut order: Vec<usize> = (0..n_cols).collect();
        order.sort_by(|&a, &b| {
            finite(eigen.eigenvalues[b])
                .partial_cmp(&finite(eigen.eigenvalues[a]))
                .unwrap()
                .then(a.cmp(&b))
        });
        let lambda_max = finite(eigen.eigenvalues[order[0]]).max(0.0);
        for &i in &order {
            let lambda = eigen.eigenvalues[i];
            if lambda.is_finite() && lambda < -1e-10 * lambda_max {
                return Err(LognormalError::NegativeEigenvalue { lambda, lambda_max });
            }
        }
        let eps = 1e-14 * lambda_max;
        let significant = order.iter().filter(|&&i| eigen.eigenvalues[i] > eps).count();
        let s_l = significant.clamp(1, s_max);

        // Rows of the core are the leading eigenvectors; fix each sign so
        // the entry of largest magnitude is positive.
        let mut core = Core::zeros(s_l, q_l, s_next);
        for (k, &i) in order.iter().take(s_l).enumerate() {
            let col = eigen.eigenvectors.column(i);
            let mut lead = 0;
            for (j, &v) in col.iter().enumerate() {
                if v.abs() > col[lead].abs() {
                    lead = j;
                }
            }
            let flip = if col[lead] < 0.0 { -1.0 } else { 1.0 };
            for nu in 0..q_l {
                for k2 in 0..s_next {
                    core.set(k, nu, k2, flip * col[nu * s_next + k2]);
                }
            }
        }

        // New reduced basis at the quadrature nodes.
        let mut a_mat = DMatrix::zeros(s_l, n_cols);
        for k in 0..s_l {
            for nu in 0..q_l {
                for k2 in 0..s_next {
                    a_mat[(k, nu * s_next + k2)] = core.get(k, nu, k2);
                }
            }
        }
        let mut new_reduced = vec![0.0; s_l * n_points];
        let mut e = DMatrix::zeros(block, n_cols);
        let mut start = 0;
        while start < n_points {
            let len = block.min(n_points - start);
            let mut eb = if len == block { std::mem::take(&mut e) } else { DMatrix::zeros(len, n_cols) };
            fill_block(start, len, &mut eb);
            let tilde = &a_mat * eb.transpose();
            for k in 0..s_l {
                for (col, q) in (start..start + len).enumerate() {
                    new_reduced[k * n_points + q] = tilde[(k, col)];
                }
            }
            if len == block {
                e = eb;
            }
            start += len;
        }

        reduced = new_reduced;
        s_next = s_l;
        cores.push(core);
    }

    cores.reverse();
    Ok(CoeffTT {
        a0: reduced,
        n_banks: s_next,
        cores,
        degrees: degrees.to_vec(),
        params: params.clone(),
        quad: quad.clone(),
    })
}

/// Compresses the field of `spec` over `degrees.len()` leading modes.
pub fn split_coefficient(
    spec: &FieldSpec,
    params: &MeasureParams,
    degrees: &[usize],
    s_max: usize,
) -> Result<CoeffTT, LognormalError> {
    split_coefficient_with(|m, x| spec.bm_eval(m, x), spec.quad(), params, degrees, s_max)
}

/// Mean of the compressed coefficient at the quadrature nodes.
pub fn coeff_mean(c: &CoeffTT) -> Vec<f64> {
    c.mean_at_nodes()
}

/// Relative root mean square distance between the exact field (truncated at
/// the compressed length) and its compression, estimated by Monte Carlo with
/// squared spatial norms from the stored quadrature rule.
pub fn coeff_rrms(
    c: &CoeffTT,
    spec: &FieldSpec,
    n_samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    assert!(n_samples >= 1);
    let levels = c.n_modes();
    let quad = c.quad();
    let mut acc = 0.0;
    for _ in 0..n_samples {
        let y: Vec<f64> = (0..levels).map(|_| StandardNormal.sample(rng)).collect();
        let approx = c.eval_at_nodes(&y);
        let mut num = 0.0;
        let mut den = 0.0;
        for (q, (&w, &av)) in quad.weights().iter().zip(&approx).enumerate() {
            let exact = spec.a_exact(quad.points()[q], &y);
            num += w * (exact - av) * (exact - av);
            den += w * exact * exact;
        }
        acc += num / den;
    }
    (acc / n_samples as f64).sqrt()
}
