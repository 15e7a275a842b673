//! Stochastic Galerkin assembly in matrix-product operator form and an
//! alternating least squares solver preconditioned with the mean coefficient.
//!
//! The operator couples a bank of sparse stiffness matrices (one per reduced
//! physical basis function of the coefficient) with small stochastic cores
//! obtained by contracting the coefficient train against Hermite triple
//! products. Coefficient dimensions beyond the active set are folded into the
//! last core at chaos degree zero, where the basis function is constant one.

use crate::chaos::triple_product;
use crate::fem::{assemble_load, assemble_stiffness, element_quad_points, FemError, Mesh};
use crate::lognormal::{CoeffTT, FieldSpec};
use crate::sparse::{CsrMatrix, EnvelopeCholesky, SparseError};
use crate::tt::{Core, OpCore, TTOperator, TTTensor};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GalerkinError {
    #[error(
        "coefficient degree {q} in dimension {dim} is below 2*{d}-1; \
         triple products would be truncated"
    )]
    DegreeTooLow { dim: usize, q: usize, d: usize },
    #[error("active set has {m} dimensions but the coefficient only carries {l}")]
    TooManyDims { m: usize, l: usize },
    #[error("local system at sweep {sweep}, core {core} is not positive definite")]
    LocalNotSpd { sweep: usize, core: usize },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Discrete stochastic Galerkin problem on a fixed mesh and active set.
pub struct DiscreteProblem<'a> {
    pub mesh: &'a Mesh,
    pub operator: TTOperator,
    pub rhs: TTTensor,
    /// Active chaos degrees `d_1..d_M`.
    pub degrees: Vec<usize>,
}

/// Contracts coefficient cores `from..` at chaos degree zero, right to left.
/// Returns the weight vector over the left rank of core `from` (all ones of
/// length one when `from` is past the end).
fn fold_at_zero(c: &CoeffTT, from: usize) -> Vec<f64> {
    let mut v = vec![1.0];
    for l in (from..c.n_modes()).rev() {
        let core = c.core(l);
        let mut next = vec![0.0; core.r_left];
        for (k, slot) in next.iter_mut().enumerate() {
            for (k2, &vk) in v.iter().enumerate() {
                *slot += core.get(k, 0, k2) * vk;
            }
        }
        v = next;
    }
    v
}

/// Values of the reduced physical components at the element quadrature points,
/// one bank per first coefficient rank, each of length `3 * n_triangles`.
fn physical_banks(
    c: &CoeffTT,
    modes: &impl Fn(usize, [f64; 2]) -> f64,
    mesh: &Mesh,
) -> Result<Vec<Vec<f64>>, FemError> {
    let points = element_quad_points(mesh)?;
    let mut banks = vec![vec![0.0; points.len()]; c.n_banks()];
    for (p, &x) in points.iter().enumerate() {
        for (k, v) in c.a0_at_with(modes, x).into_iter().enumerate() {
            banks[k][p] = v;
        }
    }
    Ok(banks)
}

/// Mean coefficient at the element quadrature points: physical banks weighted
/// by the full chaos-degree-zero contraction.
pub fn mean_values_with(
    c: &CoeffTT,
    modes: &impl Fn(usize, [f64; 2]) -> f64,
    mesh: &Mesh,
) -> Result<Vec<f64>, FemError> {
    let banks = physical_banks(c, modes, mesh)?;
    let weights = fold_at_zero(c, 0);
    let mut vals = vec![0.0; banks[0].len()];
    for (bank, &w) in banks.iter().zip(&weights) {
        for (v, b) in vals.iter_mut().zip(bank) {
            *v += w * b;
        }
    }
    Ok(vals)
}

/// Assembles the Galerkin operator for the active degrees `d_1..d_M`,
/// re-evaluating the coefficient's physical components through the given mode
/// functions. The first core is a bank of stiffness matrices over the free
/// vertices; stochastic cores contract the coefficient against Hermite triple
/// products; trailing coefficient dimensions are folded at degree zero.
pub fn assemble_operator_with(
    c: &CoeffTT,
    modes: &impl Fn(usize, [f64; 2]) -> f64,
    mesh: &Mesh,
    degrees: &[usize],
) -> Result<TTOperator, GalerkinError> {
    let m_count = degrees.len();
    let l_count = c.n_modes();
    if m_count > l_count {
        return Err(GalerkinError::TooManyDims { m: m_count, l: l_count });
    }
    for (m, &d) in degrees.iter().enumerate() {
        let q = c.degrees()[m];
        if q + 1 < 2 * d {
            return Err(GalerkinError::DegreeTooLow { dim: m + 1, q, d });
        }
    }

    if m_count == 0 {
        let vals = mean_values_with(c, modes, mesh)?;
        let k_mean = assemble_stiffness(mesh, &vals)?;
        return Ok(TTOperator::new(vec![k_mean], vec![], vec![]));
    }

    let banks = physical_banks(c, modes, mesh)?;
    let mut first = Vec::with_capacity(banks.len());
    for bank in &banks {
        first.push(assemble_stiffness(mesh, bank)?);
    }

    let tail = fold_at_zero(c, m_count);
    let mut cores = Vec::with_capacity(m_count);
    for (m, &d) in degrees.iter().enumerate() {
        let cc = c.core(m);
        let q = cc.n;
        let last = m == m_count - 1;
        let s_right = if last { 1 } else { cc.r_right };
        let mut oc = OpCore::zeros(cc.r_left, d, d, s_right);
        for k in 0..cc.r_left {
            for mu in 0..d {
                for mu2 in 0..d {
                    for nu in 0..q.min(mu + mu2 + 1) {
                        let kappa = triple_product(mu, mu2, nu);
                        if kappa == 0.0 {
                            continue;
                        }
                        if last {
                            let mut folded = 0.0;
                            for (k2, &t) in tail.iter().enumerate() {
                                folded += cc.get(k, nu, k2) * t;
                            }
                            oc.set(k, mu, mu2, 0, oc.get(k, mu, mu2, 0) + kappa * folded);
                        } else {
                            for k2 in 0..cc.r_right {
                                let v = oc.get(k, mu, mu2, k2) + kappa * cc.get(k, nu, k2);
                                oc.set(k, mu, mu2, k2, v);
                            }
                        }
                    }
                }
            }
        }
        cores.push(oc);
    }
    let coeff_dims = c.degrees()[..m_count].to_vec();
    Ok(TTOperator::new(first, cores, coeff_dims))
}

/// [`assemble_operator_with`] using the field's own expansion functions.
pub fn assemble_operator(
    c: &CoeffTT,
    spec: &FieldSpec,
    mesh: &Mesh,
    degrees: &[usize],
) -> Result<TTOperator, GalerkinError> {
    assemble_operator_with(c, &|m, x| spec.bm_eval(m, x), mesh, degrees)
}

/// Rank-one right-hand side: the load vector of `f` in the physical dimension
/// and the zeroth chaos basis vector in every stochastic dimension.
pub fn assemble_rhs(
    mesh: &Mesh,
    f: impl Fn([f64; 2]) -> f64,
    degrees: &[usize],
) -> Result<TTTensor, FemError> {
    let load = assemble_load(mesh, f)?;
    let mut vectors = vec![load];
    for &d in degrees {
        let mut e0 = vec![0.0; d];
        e0[0] = 1.0;
        vectors.push(e0);
    }
    Ok(TTTensor::from_rank_one(&vectors))
}

/// Factorized stiffness matrix of the mean coefficient, used as a block
/// preconditioner for the physical core and as a direct solver for
/// deterministic reductions.
pub struct MeanPreconditioner {
    matrix: CsrMatrix,
    chol: EnvelopeCholesky,
}

impl MeanPreconditioner {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Solves `K(mean) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(b)
    }
}

pub fn mean_preconditioner_with(
    c: &CoeffTT,
    modes: &impl Fn(usize, [f64; 2]) -> f64,
    mesh: &Mesh,
) -> Result<MeanPreconditioner, GalerkinError> {
    let vals = mean_values_with(c, modes, mesh)?;
    let matrix = assemble_stiffness(mesh, &vals)?;
    let chol = EnvelopeCholesky::factor(&matrix)?;
    Ok(MeanPreconditioner { matrix, chol })
}

pub fn mean_preconditioner(
    c: &CoeffTT,
    spec: &FieldSpec,
    mesh: &Mesh,
) -> Result<MeanPreconditioner, GalerkinError> {
    mean_preconditioner_with(c, &|m, x| spec.bm_eval(m, x), mesh)
}

/// Result of an alternating least squares run: the iterate, whether the
/// stagnation criterion was met, the number of full sweeps, the relative
/// change per sweep and the discrete energy after every local solve.
pub struct AlsOutcome {
    pub w: TTTensor,
    pub converged: bool,
    pub sweeps: usize,
    pub deltas: Vec<f64>,
    pub energies: Vec<f64>,
}

/// Dense local solver threshold; larger systems use conjugate gradients.
const DENSE_LOCAL_LIMIT: usize = 2000;

/// Core slice `W(:, i, :)` as a rank-left by rank-right matrix.
fn core_slice(c: &Core, i: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(c.r_left, c.r_right);
    for a in 0..c.r_left {
        for b in 0..c.r_right {
            m[(a, b)] = c.get(a, i, b);
        }
    }
    m
}

/// Physical core as an `n` by rank matrix (its left rank is one).
fn first_core_matrix(c: &Core) -> DMatrix<f64> {
    DMatrix::from_row_slice(c.n, c.r_right, &c.data)
}

/// Right operator environment one position further left: contracts the
/// solution core from both sides and its operator core into `renv`,
/// producing one rank-by-rank matrix per left operator rank.
fn renv_step(w_core: &Core, op_core: &OpCore, renv: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let slices: Vec<DMatrix<f64>> = (0..w_core.n).map(|i| core_slice(w_core, i)).collect();
    // g[k2][mu] = W(:,mu,:) renv[k2] W(:,mu',:)^T accumulated on demand.
    let mut out = vec![DMatrix::zeros(w_core.r_left, w_core.r_left); op_core.s_left];
    for k2 in 0..op_core.s_right {
        let half: Vec<DMatrix<f64>> = slices.iter().map(|s| s * &renv[k2]).collect();
        for mu in 0..op_core.n_out {
            for mu2 in 0..op_core.n_in {
                let mut any = false;
                for k in 0..op_core.s_left {
                    if op_core.get(k, mu, mu2, k2) != 0.0 {
                        any = true;
                        break;
                    }
                }
                if !any {
                    continue;
                }
                let block = &half[mu] * slices[mu2].transpose();
                for k in 0..op_core.s_left {
                    let v = op_core.get(k, mu, mu2, k2);
                    if v != 0.0 {
                        out[k] += &block * v;
                    }
                }
            }
        }
    }
    out
}

/// Left operator environment one position further right.
fn lenv_step(w_core: &Core, op_core: &OpCore, lenv: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let slices: Vec<DMatrix<f64>> = (0..w_core.n).map(|i| core_slice(w_core, i)).collect();
    let mut out = vec![DMatrix::zeros(w_core.r_right, w_core.r_right); op_core.s_right];
    for k in 0..op_core.s_left {
        let half: Vec<DMatrix<f64>> = slices.iter().map(|s| s.transpose() * &lenv[k]).collect();
        for mu in 0..op_core.n_out {
            for mu2 in 0..op_core.n_in {
                let mut any = false;
                for k2 in 0..op_core.s_right {
                    if op_core.get(k, mu, mu2, k2) != 0.0 {
                        any = true;
                        break;
                    }
                }
                if !any {
                    continue;
                }
                let block = &half[mu] * &slices[mu2];
                for k2 in 0..op_core.s_right {
                    let v = op_core.get(k, mu, mu2, k2);
                    if v != 0.0 {
                        out[k2] += &block * v;
                    }
                }
            }
        }
    }
    out
}

/// Left environment over the physical pair: `W0^T A0[k] W0` per bank matrix.
fn lenv_physical(w0: &Core, first: &[CsrMatrix]) -> Vec<DMatrix<f64>> {
    let w = first_core_matrix(w0);
    let n = w.nrows();
    let r = w.ncols();
    let mut out = Vec::with_capacity(first.len());
    let mut col = vec![0.0; n];
    let mut prod = vec![0.0; n];
    for mat in first {
        let mut aw = DMatrix::zeros(n, r);
        for b in 0..r {
            for i in 0..n {
                col[i] = w[(i, b)];
            }
            mat.matvec_into(&col, &mut prod);
            for i in 0..n {
                aw[(i, b)] = prod[i];
            }
        }
        out.push(w.transpose() * aw);
    }
    out
}

/// Right rhs environment one step left: `W(:,mu,:) rf F(:,mu,:)^T` summed.
fn rf_step(w_core: &Core, f_core: &Core, rf: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(w_core.r_left, f_core.r_left);
    for mu in 0..w_core.n {
        out += core_slice(w_core, mu) * rf * core_slice(f_core, mu).transpose();
    }
    out
}

/// Left rhs environment one step right.
fn lf_step(w_core: &Core, f_core: &Core, lf: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(w_core.r_right, f_core.r_right);
    for mu in 0..w_core.n {
        out += core_slice(w_core, mu).transpose() * lf * core_slice(f_core, mu);
    }
    out
}

/// Makes core `pos` left-orthogonal, pushing its triangular factor into the
/// next core. Ranks may shrink when the unfolding is rank deficient.
fn push_left(w: &mut TTTensor, pos: usize) {
    let qr = w.core(pos).unfold_left().qr();
    let q = qr.q();
    let r = qr.r();
    let (r_left, n) = (w.core(pos).r_left, w.core(pos).n);
    *w.core_mut(pos) = Core::from_unfold_left(&q, r_left, n);
    let next = r * w.core(pos + 1).unfold_right();
    let (n2, r2) = (w.core(pos + 1).n, w.core(pos + 1).r_right);
    *w.core_mut(pos + 1) = Core::from_unfold_right(&next, n2, r2);
}

/// Makes core `pos` right-orthogonal, pushing its factor into the previous core.
fn push_right(w: &mut TTTensor, pos: usize) {
    let qr = w.core(pos).unfold_right().transpose().qr();
    let q = qr.q();
    let r = qr.r();
    let (n, r_right) = (w.core(pos).n, w.core(pos).r_right);
    *w.core_mut(pos) = Core::from_unfold_right(&q.transpose(), n, r_right);
    let prev = w.core(pos - 1).unfold_left() * r.transpose();
    let (r_left, n1) = (w.core(pos - 1).r_left, w.core(pos - 1).n);
    *w.core_mut(pos - 1) = Core::from_unfold_left(&prev, r_left, n1);
}

/// Discrete energy `w^T A w / 2 - F^T w`.
pub fn energy(p: &DiscreteProblem, w: &TTTensor) -> f64 {
    0.5 * p.operator.apply(w).dot(w) - p.rhs.dot(w)
}

struct LocalSolve<'p> {
    problem: &'p DiscreteProblem<'p>,
    precond: &'p MeanPreconditioner,
}

impl LocalSolve<'_> {
    /// Solves the physical-core system in place. The system couples the bank
    /// of stiffness matrices through the right environment; conjugate
    /// gradients are preconditioned by the mean stiffness applied per rank
    /// column.
    fn solve_physical(
        &self,
        w: &mut TTTensor,
        renv: &[DMatrix<f64>],
        rf: &DMatrix<f64>,
        sweep: usize,
    ) -> Result<(), GalerkinError> {
        let first = &self.problem.operator.first;
        let core = w.core(0);
        let (n, r) = (core.n, core.r_right);
        let f0 = first_core_matrix(self.problem.rhs.core(0));
        let b_mat = &f0 * rf.transpose();
        let b: Vec<f64> = (0..n * r).map(|i| b_mat[(i / r, i % r)]).collect();

        if n * r <= DENSE_LOCAL_LIMIT {
            let mut h = DMatrix::zeros(n * r, n * r);
            for (k, mat) in first.iter().enumerate() {
                h += mat.to_dense().kronecker(&renv[k]);
            }
            let x = dense_spd_solve(&h, &b).ok_or(GalerkinError::LocalNotSpd { sweep, core: 0 })?;
            w.core_mut(0).data.copy_from_slice(&x);
            return Ok(());
        }

        let apply = |x: &[f64], y: &mut [f64]| {
            y.iter_mut().for_each(|v| *v = 0.0);
            let mut tmp = vec![0.0; n];
            let mut prod = vec![0.0; n];
            for (k, mat) in first.iter().enumerate() {
                let env = &renv[k];
                for a in 0..r {
                    for i in 0..n {
                        let mut acc = 0.0;
                        for a2 in 0..r {
                            acc += x[i * r + a2] * env[(a, a2)];
                        }
                        tmp[i] = acc;
                    }
                    mat.matvec_into(&tmp, &mut prod);
                    for i in 0..n {
                        y[i * r + a] += prod[i];
                    }
                }
            }
        };
        let precond = |res: &[f64]| {
            let mut z = vec![0.0; n * r];
            let mut col = vec![0.0; n];
            for a in 0..r {
                for i in 0..n {
                    col[i] = res[i * r + a];
                }
                let solved = self.precond.solve(&col);
                for i in 0..n {
                    z[i * r + a] = solved[i];
                }
            }
            z
        };

        let x0: Vec<f64> = w.core(0).data.clone();
        let mut r0 = vec![0.0; n * r];
        apply(&x0, &mut r0);
        for (ri, bi) in r0.iter_mut().zip(&b) {
            *ri = bi - *ri;
        }
        let r0_norm = r0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tol_abs = (1e-2 * r0_norm).max(1e-14 * b_norm);
        match crate::sparse::cg_solve(apply, precond, &b, Some(&x0), 0.0, tol_abs, 50 * (n * r)) {
            Ok((x, _, _)) => {
                w.core_mut(0).data.copy_from_slice(&x);
                Ok(())
            }
            Err(SparseError::CgDidNotConverge { .. }) => {
                Err(GalerkinError::LocalNotSpd { sweep, core: 0 })
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Solves the stochastic-core system at solution position `pos` in place.
    fn solve_stochastic(
        &self,
        w: &mut TTTensor,
        pos: usize,
        lenv: &[DMatrix<f64>],
        renv: &[DMatrix<f64>],
        lf: &DMatrix<f64>,
        rf: &DMatrix<f64>,
        sweep: usize,
    ) -> Result<(), GalerkinError> {
        let oc = &self.problem.operator.cores[pos - 1];
        let fc = self.problem.rhs.core(pos);
        let core = w.core(pos);
        let (r1, d, r2) = (core.r_left, core.n, core.r_right);
        let size = r1 * d * r2;

        let mut b = vec![0.0; size];
        for mu in 0..d {
            let block = lf * core_slice(fc, mu) * rf.transpose();
            for a in 0..r1 {
                for bb in 0..r2 {
                    b[(a * d + mu) * r2 + bb] = block[(a, bb)];
                }
            }
        }

        if size <= DENSE_LOCAL_LIMIT {
            let mut h = DMatrix::zeros(size, size);
            for k in 0..oc.s_left {
                for k2 in 0..oc.s_right {
                    let mut op_block = DMatrix::zeros(d, d);
                    let mut any = false;
                    for mu in 0..d {
                        for mu2 in 0..d {
                            let v = oc.get(k, mu, mu2, k2);
                            op_block[(mu, mu2)] = v;
                            any |= v != 0.0;
                        }
                    }
                    if !any {
                        continue;
                    }
                    h += lenv[k].kronecker(&op_block).kronecker(&renv[k2]);
                }
            }
            let x =
                dense_spd_solve(&h, &b).ok_or(GalerkinError::LocalNotSpd { sweep, core: pos })?;
            w.core_mut(pos).data.copy_from_slice(&x);
            return Ok(());
        }

        let apply = |x: &[f64], y: &mut [f64]| {
            y.iter_mut().for_each(|v| *v = 0.0);
            let slice = |vals: &[f64], mu: usize| {
                let mut m = DMatrix::zeros(r1, r2);
                for a in 0..r1 {
                    for bb in 0..r2 {
                        m[(a, bb)] = vals[(a * d + mu) * r2 + bb];
                    }
                }
                m
            };
            let xs: Vec<DMatrix<f64>> = (0..d).map(|mu| slice(x, mu)).collect();
            for k in 0..oc.s_left {
                for k2 in 0..oc.s_right {
                    let mut mixed = DMatrix::zeros(r1, r2);
                    let mut used = vec![false; d];
                    let mut per_mu = vec![DMatrix::zeros(r1, r2); d];
                    for mu in 0..d {
                        mixed.fill(0.0);
                        let mut any = false;
                        for mu2 in 0..d {
                            let v = oc.get(k, mu, mu2, k2);
                            if v != 0.0 {
                                mixed += &xs[mu2] * v;
                                any = true;
                            }
                        }
                        if any {
                            per_mu[mu] = mixed.clone();
                            used[mu] = true;
                        }
                    }
                    for mu in 0..d {
                        if !used[mu] {
                            continue;
                        }
                        let block = &lenv[k] * &per_mu[mu] * renv[k2].transpose();
                        for a in 0..r1 {
                            for bb in 0..r2 {
                                y[(a * d + mu) * r2 + bb] += block[(a, bb)];
                            }
                        }
                    }
                }
            }
        };
        let x0: Vec<f64> = w.core(pos).data.clone();
        let mut r0 = vec![0.0; size];
        apply(&x0, &mut r0);
        for (ri, bi) in r0.iter_mut().zip(&b) {
            *ri = bi - *ri;
        }
        let r0_norm = r0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tol_abs = (1e-2 * r0_norm).max(1e-14 * b_norm);
        match crate::sparse::cg_solve(apply, |z| z.to_vec(), &b, Some(&x0), 0.0, tol_abs, 50 * size)
        {
            Ok((x, _, _)) => {
                w.core_mut(pos).data.copy_from_slice(&x);
                Ok(())
            }
            Err(SparseError::CgDidNotConverge { .. }) => {
                Err(GalerkinError::LocalNotSpd { sweep, core: pos })
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Dense symmetric positive definite solve; `None` when the Cholesky
/// factorization fails.
fn dense_spd_solve(h: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let sym = 0.5 * (h + h.transpose());
    let chol = sym.cholesky()?;
    let x = chol.solve(&nalgebra::DVector::from_column_slice(b));
    Some(x.iter().copied().collect())
}

/// Alternating least squares for `A w = F` on the fixed-rank manifold of `w0`.
///
/// Each full sweep solves the physical core and every stochastic core twice
/// (left to right, then back), keeping the iterate orthogonalized around the
/// active core. Stops when the orthogonalization-accurate norm of the sweep
/// update drops below `tol` times the iterate norm.
pub fn als_solve(
    p: &DiscreteProblem,
    w0: &TTTensor,
    precond: &MeanPreconditioner,
    tol: f64,
    max_sweeps: usize,
) -> Result<AlsOutcome, GalerkinError> {
    assert_eq!(p.operator.dims_in(), w0.dims(), "iterate does not match the operator");
    let mut w = w0.clone();
    w.right_orthogonalize();
    let n_cores = w.n_modes();
    let solver = LocalSolve { problem: p, precond };

    let mut deltas = Vec::new();
    let mut energies = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    for sweep in 1..=max_sweeps {
        sweeps = sweep;
        let prev = w.clone();

        // Right environments over cores pos+1.. for every position, valid
        // during the left-to-right half sweep.
        let mut renv: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); n_cores];
        let mut rf: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); n_cores];
        renv[n_cores - 1] = vec![DMatrix::from_element(1, 1, 1.0)];
        rf[n_cores - 1] = DMatrix::from_element(1, 1, 1.0);
        for pos in (1..n_cores).rev() {
            renv[pos - 1] =
                renv_step(w.core(pos), &p.operator.cores[pos - 1], &renv[pos]);
            rf[pos - 1] = rf_step(w.core(pos), p.rhs.core(pos), &rf[pos]);
        }

        let mut lenv: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); n_cores];
        let mut lf: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); n_cores];

        // Left to right.
        solver.solve_physical(&mut w, &renv[0], &rf[0], sweep)?;
        energies.push(energy(p, &w));
        for pos in 1..n_cores {
            push_left(&mut w, pos - 1);
            if pos == 1 {
                lenv[1] = lenv_physical(w.core(0), &p.operator.first);
                lf[1] = first_core_matrix(w.core(0)).transpose()
                    * first_core_matrix(p.rhs.core(0));
            } else {
                lenv[pos] =
                    lenv_step(w.core(pos - 1), &p.operator.cores[pos - 2], &lenv[pos - 1]);
                lf[pos] = lf_step(w.core(pos - 1), p.rhs.core(pos - 1), &lf[pos - 1]);
            }
            solver.solve_stochastic(&mut w, pos, &lenv[pos], &renv[pos], &lf[pos], &rf[pos], sweep)?;
            energies.push(energy(p, &w));
        }

        if n_cores > 1 {
            // Right to left.
            for pos in (1..n_cores).rev() {
                if pos < n_cores - 1 {
                    renv[pos] = renv_step(w.core(pos + 1), &p.operator.cores[pos], &renv[pos + 1]);
                    rf[pos] = rf_step(w.core(pos + 1), p.rhs.core(pos + 1), &rf[pos + 1]);
                    solver.solve_stochastic(
                        &mut w, pos, &lenv[pos], &renv[pos], &lf[pos], &rf[pos], sweep,
                    )?;
                    energies.push(energy(p, &w));
                }
                push_right(&mut w, pos);
            }
            renv[0] = renv_step(w.core(1), &p.operator.cores[0], &renv[1]);
            rf[0] = rf_step(w.core(1), p.rhs.core(1), &rf[1]);
            solver.solve_physical(&mut w, &renv[0], &rf[0], sweep)?;
            energies.push(energy(p, &w));
        }

        let diff = w.add(&prev.scale(-1.0));
        let delta = diff.norm_orthogonal();
        let scale = w.norm_orthogonal();
        deltas.push(if scale > 0.0 { delta / scale } else { delta });
        if delta <= tol * scale {
            converged = true;
            break;
        }
    }

    Ok(AlsOutcome { w, converged, sweeps, deltas, energies })
}

/// Norms of the Galerkin residual projected onto each single-core tangent
/// space of `w`, in the orthogonal gauge around that core. At an ALS fixed
/// point these all vanish.
pub fn local_residual_norms(p: &DiscreteProblem, w: &TTTensor) -> Vec<f64> {
    let mut w = w.clone();
    w.right_orthogonalize();
    let n_cores = w.n_modes();

    let mut renv: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); n_cores];
    let mut rf: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); n_cores];
    renv[n_cores - 1] = vec![DMatrix::from_element(1, 1, 1.0)];
    rf[n_cores - 1] = DMatrix::from_element(1, 1, 1.0);
    for pos in (1..n_cores).rev() {
        renv[pos - 1] = renv_step(w.core(pos), &p.operator.cores[pos - 1], &renv[pos]);
        rf[pos - 1] = rf_step(w.core(pos), p.rhs.core(pos), &rf[pos]);
    }

    let mut norms = Vec::with_capacity(n_cores);
    // Physical position: residual of the bank system at the current core.
    {
        let core = w.core(0);
        let (n, r) = (core.n, core.r_right);
        let f0 = first_core_matrix(p.rhs.core(0));
        let b = &f0 * rf[0].transpose();
        let x = first_core_matrix(core);
        let mut res = b.clone();
        let mut col = vec![0.0; n];
        let mut prod = vec![0.0; n];
        for (k, mat) in p.operator.first.iter().enumerate() {
            let xr = &x * renv[0][k].transpose();
            for a in 0..r {
                for i in 0..n {
                    col[i] = xr[(i, a)];
                }
                mat.matvec_into(&col, &mut prod);
                for i in 0..n {
                    res[(i, a)] -= prod[i];
                }
            }
        }
        norms.push(res.norm());
    }

    for pos in 1..n_cores {
        push_left(&mut w, pos - 1);
        let (lenv, lf) = lenv_physical_chain(p, &w, pos);
        let oc = &p.operator.cores[pos - 1];
        let fc = p.rhs.core(pos);
        let core = w.core(pos);
        let (r1, d, r2) = (core.r_left, core.n, core.r_right);
        let mut res = vec![0.0; r1 * d * r2];
        for mu in 0..d {
            let block = &lf * core_slice(fc, mu) * rf[pos].transpose();
            for a in 0..r1 {
                for bb in 0..r2 {
                    res[(a * d + mu) * r2 + bb] = block[(a, bb)];
                }
            }
        }
        let xs: Vec<DMatrix<f64>> = (0..d).map(|mu| core_slice(core, mu)).collect();
        for k in 0..oc.s_left {
            for k2 in 0..oc.s_right {
                for mu in 0..d {
                    let mut mixed = DMatrix::zeros(r1, r2);
                    let mut any = false;
                    for mu2 in 0..d {
                        let v = oc.get(k, mu, mu2, k2);
                        if v != 0.0 {
                            mixed += &xs[mu2] * v;
                            any = true;
                        }
                    }
                    if !any {
                        continue;
                    }
                    let block = &lenv[k] * mixed * renv[pos][k2].transpose();
                    for a in 0..r1 {
                        for bb in 0..r2 {
                            res[(a * d + mu) * r2 + bb] -= block[(a, bb)];
                        }
                    }
                }
            }
        }
        norms.push(res.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    norms
}

/// Left environments over cores `0..pos` for a tensor whose leading cores are
/// already left-orthogonal; recomputed from scratch for clarity.
fn lenv_physical_chain(
    p: &DiscreteProblem,
    w: &TTTensor,
    pos: usize,
) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let mut lenv = lenv_physical(w.core(0), &p.operator.first);
    let mut lf =
        first_core_matrix(w.core(0)).transpose() * first_core_matrix(p.rhs.core(0));
    for q in 1..pos {
        lenv = lenv_step(w.core(q), &p.operator.cores[q - 1], &lenv);
        lf = lf_step(w.core(q), p.rhs.core(q), &lf);
    }
    (lenv, lf)
}
