//! Residual lifting and the a posteriori error estimator.
//!
//! Multiplying the low-rank coefficient by the tensor-train iterate expands
//! the flux `a grad w` over an enlarged index box: products of coefficient
//! degrees below `q_m` and solution degrees below `d_m` reach degree
//! `q_m + d_m - 2` in each active dimension, and the full coefficient range
//! in the inactive ones. [`ResidualTT`] stores this expansion with the
//! physical part factored into coefficient values and solution gradients.
//! From it the estimator splits into a deterministic part (element residuals
//! and facet jumps restricted to the active set), a parametric part (the
//! tail of the box outside the active set) and an algebraic part (the
//! discrete residual in the inverse natural norm).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::chaos::{gramians_sized, triple_product, MeasureParams};
use crate::fem::{assemble_stiffness, element_data, facet_data, FemError, Mesh};
use crate::galerkin::DiscreteProblem;
use crate::lognormal::CoeffTT;
use crate::sparse::{EnvelopeCholesky, SparseError};
use crate::tt::{Core, TTTensor};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("iterate has {m} stochastic dimensions but the coefficient only carries {l}")]
    TooManyDims { m: usize, l: usize },
    #[error("physical core has {got} entries but the mesh has {expected} free vertices")]
    PhysicalSize { got: usize, expected: usize },
    #[error("chaos Gramian of dimension {dim} is not positive definite")]
    SingularGramian { dim: usize },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Flux expansion `a grad w` of a tensor-train iterate.
///
/// The stochastic part is a tensor train over the residual box with ranks
/// `s_m * r_m` (coefficient-major: combined index `k' * r_m + k`). The
/// physical part at the element quadrature points factors into coefficient
/// bank values and per-element solution gradients; divergence and facet jump
/// factors are precomputed the same way. The Gramian of the flux columns in
/// the spatial inner product is accumulated once for the tail estimator.
pub struct ResidualTT {
    n_tri: usize,
    s1: usize,
    r1: usize,
    /// Solution degrees `d_1..d_M`.
    degrees: Vec<usize>,
    /// Residual box `z_1..z_L`: `q_m + d_m - 1` active, `q_l` beyond.
    dims: Vec<usize>,
    /// Left rank of every stochastic core plus the closing one.
    ranks: Vec<usize>,
    cores: Vec<Core>,
    /// Coefficient bank values at the element quadrature points, `[qp][k']`.
    a0_qp: Vec<f64>,
    /// Solution rank gradients per element, `[tri][k]`.
    grad_w: Vec<[f64; 2]>,
    /// Gradient of the vertex interpolant of each bank function, `[tri][k']`.
    div_a: Vec<[f64; 2]>,
    /// Bank values at the two facet quadrature points, `[facet][point][k']`.
    facet_a0: Vec<f64>,
    /// Normal jump of each solution rank gradient, `[facet][k]`.
    facet_dgn: Vec<f64>,
    facet_interior: Vec<bool>,
    /// Spatial Gramian of the flux columns, `t_1 x t_1`.
    phys_gram: DMatrix<f64>,
}

impl ResidualTT {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn n_active(&self) -> usize {
        self.degrees.len()
    }

    /// Number of flux columns `t_1 = s_1 * r_1`.
    pub fn n_columns(&self) -> usize {
        self.s1 * self.r1
    }

    pub fn core(&self, m: usize) -> &Core {
        &self.cores[m]
    }

    pub fn phys_gram(&self) -> &DMatrix<f64> {
        &self.phys_gram
    }

    /// Flux vector of column `c` at element quadrature point `qp`
    /// (element-major, three points per triangle).
    pub fn flux(&self, qp: usize, c: usize) -> [f64; 2] {
        let (kp, k) = (c / self.r1, c % self.r1);
        let a = self.a0_qp[qp * self.s1 + kp];
        let g = self.grad_w[(qp / 3) * self.r1 + k];
        [a * g[0], a * g[1]]
    }

    /// Divergence of column `c` on a triangle, with the bank functions
    /// replaced by their vertex interpolants.
    pub fn divergence(&self, tri: usize, c: usize) -> f64 {
        let (kp, k) = (c / self.r1, c % self.r1);
        let da = self.div_a[tri * self.s1 + kp];
        let g = self.grad_w[tri * self.r1 + k];
        da[0] * g[0] + da[1] * g[1]
    }

    /// Stochastic factor of column `c` at a residual multi-index.
    pub fn stoch_eval(&self, c: usize, eta: &[usize]) -> f64 {
        assert_eq!(eta.len(), self.cores.len(), "index does not match the residual box");
        let mut v = vec![1.0];
        for (m, core) in self.cores.iter().enumerate().rev() {
            let i = eta[m];
            let mut next = vec![0.0; core.r_left];
            for (a, slot) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (b, vb) in v.iter().enumerate() {
                    acc += core.get(a, i, b) * vb;
                }
                *slot = acc;
            }
            v = next;
        }
        v[c]
    }
}

/// Expands the flux `a grad w` of an iterate over the residual box.
pub fn build_residual(
    w: &TTTensor,
    coeff: &CoeffTT,
    modes: &impl Fn(usize, [f64; 2]) -> f64,
    mesh: &Mesh,
) -> Result<ResidualTT, EstimateError> {
    let m_active = w.n_modes() - 1;
    let l_dims = coeff.n_modes();
    if m_active > l_dims {
        return Err(EstimateError::TooManyDims { m: m_active, l: l_dims });
    }
    let core0 = w.core(0);
    if core0.n != mesh.n_free() {
        return Err(EstimateError::PhysicalSize { got: core0.n, expected: mesh.n_free() });
    }
    let elems = element_data(mesh)?;
    let n_tri = mesh.n_triangles();
    let q = coeff.degrees();
    let degrees: Vec<usize> = w.dims()[1..].to_vec();
    let s1 = coeff.ranks()[0];
    let r1 = core0.r_right;
    let t1 = s1 * r1;

    // Bank values at quadrature points and vertices; vertex values keep the
    // interpolant consistent across neighboring elements.
    let mut a0_qp = vec![0.0; 3 * n_tri * s1];
    for (t, e) in elems.iter().enumerate() {
        for (i, &x) in e.quad_points.iter().enumerate() {
            let vals = coeff.a0_at_with(modes, x);
            a0_qp[(3 * t + i) * s1..(3 * t + i + 1) * s1].copy_from_slice(&vals);
        }
    }
    let vertex_a0: Vec<Vec<f64>> =
        (0..mesh.n_vertices()).map(|v| coeff.a0_at_with(modes, mesh.vertex(v))).collect();

    let mut grad_w = vec![[0.0; 2]; n_tri * r1];
    let mut div_a = vec![[0.0; 2]; n_tri * s1];
    for (t, e) in elems.iter().enumerate() {
        let verts = mesh.triangle(t).v;
        for (i, &v) in verts.iter().enumerate() {
            let bank = &vertex_a0[v];
            for kp in 0..s1 {
                let slot = &mut div_a[t * s1 + kp];
                slot[0] += bank[kp] * e.grads[i][0];
                slot[1] += bank[kp] * e.grads[i][1];
            }
            if let Some(free) = mesh.free_slot(v) {
                for k in 0..r1 {
                    let wv = core0.get(0, free, k);
                    let slot = &mut grad_w[t * r1 + k];
                    slot[0] += wv * e.grads[i][0];
                    slot[1] += wv * e.grads[i][1];
                }
            }
        }
    }

    let fdata = facet_data(mesh);
    let n_facet = fdata.len();
    let mut facet_a0 = vec![0.0; n_facet * 2 * s1];
    let mut facet_dgn = vec![0.0; n_facet * r1];
    let mut facet_interior = vec![false; n_facet];
    for (f, fd) in fdata.iter().enumerate() {
        let Some(t2) = fd.tris.1 else { continue };
        facet_interior[f] = true;
        let t1_ = fd.tris.0;
        for (p, &x) in fd.quad_points.iter().enumerate() {
            let vals = coeff.a0_at_with(modes, x);
            facet_a0[(f * 2 + p) * s1..(f * 2 + p + 1) * s1].copy_from_slice(&vals);
        }
        for k in 0..r1 {
            let g1 = grad_w[t1_ * r1 + k];
            let g2 = grad_w[t2 * r1 + k];
            facet_dgn[f * r1 + k] =
                (g1[0] - g2[0]) * fd.normal[0] + (g1[1] - g2[1]) * fd.normal[1];
        }
    }

    // Spatial Gramian of the flux columns, accumulated per element as a
    // product of coefficient and gradient Gramians. Fixed-size chunks are
    // combined in order so the result does not depend on scheduling.
    let chunks: Vec<DMatrix<f64>> = (0..n_tri)
        .collect::<Vec<_>>()
        .par_chunks(256)
        .map(|ts| {
            let mut p = DMatrix::zeros(t1, t1);
            let mut cmat = DMatrix::zeros(s1, s1);
            let mut gmat = DMatrix::zeros(r1, r1);
            for &t in ts {
                let qw = elems[t].quad_weight;
                cmat.fill(0.0);
                for i in 0..3 {
                    let row = &a0_qp[(3 * t + i) * s1..(3 * t + i + 1) * s1];
                    for kp in 0..s1 {
                        for lp in 0..s1 {
                            cmat[(kp, lp)] += qw * row[kp] * row[lp];
                        }
                    }
                }
                for k in 0..r1 {
                    let gk = grad_w[t * r1 + k];
                    for l in 0..r1 {
                        let gl = grad_w[t * r1 + l];
                        gmat[(k, l)] = gk[0] * gl[0] + gk[1] * gl[1];
                    }
                }
                for kp in 0..s1 {
                    for lp in 0..s1 {
                        let cv = cmat[(kp, lp)];
                        for k in 0..r1 {
                            for l in 0..r1 {
                                p[(kp * r1 + k, lp * r1 + l)] += cv * gmat[(k, l)];
                            }
                        }
                    }
                }
            }
            p
        })
        .collect();
    let mut phys_gram = DMatrix::zeros(t1, t1);
    for p in chunks {
        phys_gram += p;
    }

    // Stochastic cores: active dimensions pair every coefficient degree with
    // every solution degree through the product linearization; beyond the
    // iterate the solution factor is the constant one and the coefficient
    // cores carry over unchanged.
    let mut cores = Vec::with_capacity(l_dims);
    let mut ranks = Vec::with_capacity(l_dims + 1);
    let mut dims = Vec::with_capacity(l_dims);
    for m in 0..m_active {
        let a = coeff.core(m);
        let wc = w.core(m + 1);
        let z = q[m] + degrees[m] - 1;
        let mut rc = Core::zeros(a.r_left * wc.r_left, z, a.r_right * wc.r_right);
        for kp in 0..a.r_left {
            for lp in 0..a.r_right {
                for nu in 0..a.n {
                    let av = a.get(kp, nu, lp);
                    if av == 0.0 {
                        continue;
                    }
                    for k in 0..wc.r_left {
                        let row = kp * wc.r_left + k;
                        for l in 0..wc.r_right {
                            let col = lp * wc.r_right + l;
                            for mu in 0..wc.n {
                                let wv = wc.get(k, mu, l);
                                if wv == 0.0 {
                                    continue;
                                }
                                let mut eta = nu.abs_diff(mu);
                                while eta <= nu + mu {
                                    rc.add_to(row, eta, col, av * wv * triple_product(nu, mu, eta));
                                    eta += 2;
                                }
                            }
                        }
                    }
                }
            }
        }
        ranks.push(rc.r_left);
        dims.push(z);
        cores.push(rc);
    }
    for l in m_active..l_dims {
        let a = coeff.core(l);
        ranks.push(a.r_left);
        dims.push(a.n);
        cores.push(a.clone());
    }
    ranks.push(1);

    Ok(ResidualTT {
        n_tri,
        s1,
        r1,
        degrees,
        dims,
        ranks,
        cores,
        a0_qp,
        grad_w,
        div_a,
        facet_a0,
        facet_dgn,
        facet_interior,
        phys_gram,
    })
}

/// Per-dimension Gramians of the residual basis under the squared
/// reweighting density, plus the total mass of the squared density.
pub struct EstimatorGramians {
    pub ztilde: Vec<DMatrix<f64>>,
    pub zeta_mass: f64,
}

pub fn estimator_gramians(res: &ResidualTT, params: &MeasureParams) -> EstimatorGramians {
    let ztilde: Vec<DMatrix<f64>> = res
        .dims
        .iter()
        .enumerate()
        .map(|(m, &z)| gramians_sized(m, 1, z, params).ztilde)
        .collect();
    let zeta_mass = ztilde.iter().map(|zt| zt[(0, 0)]).product();
    EstimatorGramians { ztilde, zeta_mass }
}

/// Per-dimension membership masks of the active box: degrees below `active`
/// in covered dimensions, degree zero beyond.
pub fn lambda_masks(res: &ResidualTT, active: &[usize]) -> Vec<Option<Vec<bool>>> {
    res.dims
        .iter()
        .enumerate()
        .map(|(m, &z)| {
            let lim = if m < active.len() { active[m].min(z) } else { 1 };
            Some((0..z).map(|i| i < lim).collect())
        })
        .collect()
}

fn core_slice(c: &Core, i: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(c.r_left, c.r_right);
    for a in 0..c.r_left {
        for b in 0..c.r_right {
            m[(a, b)] = c.get(a, i, b);
        }
    }
    m
}

fn kept(mask: &Option<Vec<bool>>, i: usize) -> bool {
    mask.as_ref().map_or(true, |v| v[i])
}

/// Gramian of the flux columns in the stochastic pairing, restricted to the
/// masked index sets on either side: right-to-left sweep over the cores.
fn stoch_gram(
    res: &ResidualTT,
    g: &EstimatorGramians,
    keep_a: &[Option<Vec<bool>>],
    keep_b: &[Option<Vec<bool>>],
) -> DMatrix<f64> {
    let mut env = DMatrix::from_element(1, 1, 1.0);
    for m in (0..res.cores.len()).rev() {
        let core = &res.cores[m];
        let zt = &g.ztilde[m];
        let slices: Vec<DMatrix<f64>> = (0..core.n).map(|i| core_slice(core, i)).collect();
        let mut next = DMatrix::zeros(core.r_left, core.r_left);
        let mut u = DMatrix::zeros(core.r_left, core.r_right);
        for eta_b in 0..core.n {
            if !kept(&keep_b[m], eta_b) {
                continue;
            }
            u.fill(0.0);
            for eta_a in 0..core.n {
                if !kept(&keep_a[m], eta_a) {
                    continue;
                }
                let w = zt[(eta_a, eta_b)];
                if w == 0.0 {
                    continue;
                }
                for (uv, sv) in u.iter_mut().zip(slices[eta_a].iter()) {
                    *uv += w * sv;
                }
            }
            next += &u * &env * slices[eta_b].transpose();
        }
        env = next;
    }
    env
}

/// Source pairing vector over the flux columns: each column contracted with
/// the degree-zero index through the squared-density Gramians, restricted to
/// the masked set.
fn stoch_source(res: &ResidualTT, g: &EstimatorGramians, keep: &[Option<Vec<bool>>]) -> DVector<f64> {
    let mut env = DVector::from_element(1, 1.0);
    for m in (0..res.cores.len()).rev() {
        let core = &res.cores[m];
        let zt = &g.ztilde[m];
        let mut next = DVector::zeros(core.r_left);
        for eta in 0..core.n {
            if !kept(&keep[m], eta) {
                continue;
            }
            let w = zt[(eta, 0)];
            if w == 0.0 {
                continue;
            }
            for a in 0..core.r_left {
                let mut acc = 0.0;
                for b in 0..core.r_right {
                    acc += core.get(a, eta, b) * env[b];
                }
                next[a] += w * acc;
            }
        }
        env = next;
    }
    env
}

/// Masked tail quadratic form: flux columns paired through the spatial
/// Gramian on the physical side and the masked sweeps on the stochastic one.
pub fn tail_form(
    res: &ResidualTT,
    g: &EstimatorGramians,
    keep_a: &[Option<Vec<bool>>],
    keep_b: &[Option<Vec<bool>>],
) -> f64 {
    let env = stoch_gram(res, g, keep_a, keep_b);
    let t1 = res.n_columns();
    let mut acc = 0.0;
    for c in 0..t1 {
        for c2 in 0..t1 {
            acc += res.phys_gram[(c, c2)] * env[(c, c2)];
        }
    }
    acc
}

/// Clamps a squared estimator contribution to zero, logging when it falls
/// below the tolerated rounding level.
fn clamp_squared(v: f64, scale: f64, what: &str) -> f64 {
    if v >= 0.0 {
        return v;
    }
    if v < -1e-12 * scale.max(1.0) {
        eprintln!("warning: clamping negative {what}: {v:.3e} at scale {scale:.3e}");
    }
    0.0
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Deterministic estimator contributions.
#[derive(Clone, Debug)]
pub struct DetEstimate {
    pub per_element: Vec<f64>,
    pub per_facet: Vec<f64>,
    pub total: f64,
}

/// Element and facet residual indicators on the active set: squared volume
/// terms combine the source, its pairing with the flux divergence and the
/// divergence Gramian; facet terms pair the normal jumps.
pub fn eta_det(
    res: &ResidualTT,
    f: &impl Fn([f64; 2]) -> f64,
    mesh: &Mesh,
    g: &EstimatorGramians,
) -> Result<DetEstimate, EstimateError> {
    assert_eq!(mesh.n_triangles(), res.n_tri, "mesh does not match the residual");
    let elems = element_data(mesh)?;
    let lam = lambda_masks(res, &res.degrees);
    let gram = stoch_gram(res, g, &lam, &lam);
    let gvec = stoch_source(res, g, &lam);
    let t1 = res.n_columns();

    let fvals: Vec<f64> = elems
        .iter()
        .flat_map(|e| e.quad_points)
        .map(f)
        .collect();

    let per_element: Vec<f64> = (0..res.n_tri)
        .into_par_iter()
        .map(|t| {
            let e = &elems[t];
            let mut sf = 0.0;
            let mut sf2 = 0.0;
            for i in 0..3 {
                let v = fvals[3 * t + i];
                sf += v;
                sf2 += v * v;
            }
            let dvec = DVector::from_fn(t1, |c, _| res.divergence(t, c));
            let lin = dvec.dot(&gvec);
            let quad = dvec.dot(&(&gram * &dvec));
            let h2 = e.diameter * e.diameter;
            let source_term = g.zeta_mass * e.quad_weight * sf2;
            let cross_term = 2.0 * e.quad_weight * sf * lin;
            let val2 = h2 * (source_term + cross_term + e.area * quad);
            let scale = h2 * (source_term.abs() + cross_term.abs() + (e.area * quad).abs());
            clamp_squared(val2, scale, "element indicator").sqrt()
        })
        .collect();

    let fdata = facet_data(mesh);
    let s1 = res.s1;
    let r1 = res.r1;
    let per_facet: Vec<f64> = (0..fdata.len())
        .into_par_iter()
        .map(|fi| {
            if !res.facet_interior[fi] {
                return 0.0;
            }
            let len = fdata[fi].length;
            let mut val2 = 0.0;
            for p in 0..2 {
                let a0 = &res.facet_a0[(fi * 2 + p) * s1..(fi * 2 + p + 1) * s1];
                let jvec =
                    DVector::from_fn(t1, |c, _| a0[c / r1] * res.facet_dgn[fi * r1 + c % r1]);
                val2 += 0.5 * len * jvec.dot(&(&gram * &jvec));
            }
            (len * clamp_squared(val2, len * val2.abs(), "facet indicator")).sqrt()
        })
        .collect();

    let squares: Vec<f64> = per_element.iter().chain(&per_facet).map(|v| v * v).collect();
    let total = pairwise_sum(&squares).sqrt();
    Ok(DetEstimate { per_element, per_facet, total })
}

/// Parametric tail estimator.
#[derive(Clone, Debug)]
pub struct ParamEstimate {
    pub total: f64,
    /// One indicator per covered dimension plus the first inactive one.
    pub per_dim: Vec<f64>,
}

/// Tail of the residual outside the active box, with the total obtained by
/// subtracting the active part from the full form, and per-dimension
/// indicators on the first tail layer of one dimension at a time: the slice
/// at degree d_m with every other dimension inside the active box.  The
/// first layer is the part a refinement of d_m removes from the tail, so it
/// is the marking indicator; deeper layers only shift outward.
pub fn eta_param(res: &ResidualTT, active: &[usize], g: &EstimatorGramians) -> ParamEstimate {
    let l = res.dims.len();
    let none: Vec<Option<Vec<bool>>> = vec![None; l];
    let lam = lambda_masks(res, active);
    let q_full = tail_form(res, g, &none, &none);
    let b_mixed = tail_form(res, g, &none, &lam);
    let q_lam = tail_form(res, g, &lam, &lam);
    let scale = q_full.abs().max(q_lam.abs());
    let total2 = q_full - 2.0 * b_mixed + q_lam;
    let total = clamp_squared(total2, scale, "parametric estimator").sqrt();

    let bound = |mm: usize| if mm < active.len() { active[mm].min(res.dims[mm]) } else { 1 };
    let n_ind = (active.len() + 1).min(l);
    let per_dim = (0..n_ind)
        .map(|m| {
            let masks: Vec<Option<Vec<bool>>> = (0..l)
                .map(|mm| {
                    let lim = bound(mm);
                    let pick = |i: usize| if mm == m { i == lim } else { i < lim };
                    Some((0..res.dims[mm]).map(pick).collect())
                })
                .collect();
            let v = tail_form(res, g, &masks, &masks);
            clamp_squared(v, scale, "dimension indicator").sqrt()
        })
        .collect();
    ParamEstimate { total, per_dim }
}

/// Discrete residual of the Galerkin system in the inverse natural norm:
/// the physical block is weighted by the unit-coefficient stiffness, each
/// stochastic block by the chaos Gramian of its dimension.
pub fn eta_disc(
    p: &DiscreteProblem,
    w: &TTTensor,
    params: &MeasureParams,
) -> Result<f64, EstimateError> {
    let r = p.operator.apply(w).add(&p.rhs.scale(-1.0));
    let mut rt = r.clone();

    let ones = vec![1.0; 3 * p.mesh.n_triangles()];
    let z0 = assemble_stiffness(p.mesh, &ones)?;
    let chol = EnvelopeCholesky::factor(&z0)?;
    {
        let c0 = rt.core_mut(0);
        for b in 0..c0.r_right {
            let col: Vec<f64> = (0..c0.n).map(|i| c0.get(0, i, b)).collect();
            let sol = chol.solve(&col);
            for (i, v) in sol.into_iter().enumerate() {
                c0.set(0, i, b, v);
            }
        }
    }
    for m in 1..rt.n_modes() {
        let d = p.degrees[m - 1];
        let z = gramians_sized(m - 1, d, d, params).z;
        let chol_m =
            nalgebra::Cholesky::new(z).ok_or(EstimateError::SingularGramian { dim: m })?;
        let cm = rt.core_mut(m);
        for a in 0..cm.r_left {
            for b in 0..cm.r_right {
                let fiber = DVector::from_fn(cm.n, |i, _| cm.get(a, i, b));
                let sol = chol_m.solve(&fiber);
                for i in 0..cm.n {
                    cm.set(a, i, b, sol[i]);
                }
            }
        }
    }
    let v = r.dot(&rt);
    let scale = r.dot(&r).max(0.0);
    Ok(clamp_squared(v, scale, "algebraic residual").sqrt())
}

/// Combined bound: the three contributions in the energy part plus the
/// algebraic distance once more, all constants taken as one.
pub fn eta_all(det: f64, param: f64, disc: f64) -> f64 {
    let s = det + param + disc;
    (s * s + disc * disc).sqrt()
}

/// All estimator output for one iterate.
#[derive(Clone, Debug)]
pub struct EstimatorReport {
    pub eta_det_t: Vec<f64>,
    pub eta_det_f: Vec<f64>,
    pub eta_det: f64,
    pub eta_param: f64,
    pub eta_param_m: Vec<f64>,
    pub eta_disc: f64,
    pub eta_all: f64,
}

/// Builds the residual and evaluates every estimator part for an iterate of
/// the given discrete problem.
pub fn estimate_all(
    p: &DiscreteProblem,
    w: &TTTensor,
    coeff: &CoeffTT,
    modes: &impl Fn(usize, [f64; 2]) -> f64,
    f: &impl Fn([f64; 2]) -> f64,
    params: &MeasureParams,
) -> Result<EstimatorReport, EstimateError> {
    let res = build_residual(w, coeff, modes, p.mesh)?;
    let g = estimator_gramians(&res, params);
    let det = eta_det(&res, f, p.mesh, &g)?;
    let par = eta_param(&res, res.degrees(), &g);
    let disc = eta_disc(p, w, params)?;
    Ok(EstimatorReport {
        eta_det_t: det.per_element,
        eta_det_f: det.per_facet,
        eta_det: det.total,
        eta_param: par.total,
        eta_param_m: par.per_dim,
        eta_disc: disc,
        eta_all: eta_all(det.total, par.total, disc),
    })
}
