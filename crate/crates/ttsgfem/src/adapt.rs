//! Adaptive solve-estimate-refine driver.
//!
//! Each iteration assembles the discrete problem for the current mesh and
//! chaos degrees, solves it by ALS, evaluates the error estimator and refines
//! along exactly one branch: the mesh (dominant deterministic part), the
//! chaos degrees including activation of a new stochastic dimension
//! (parametric part), or the TT ranks of the iterate (algebraic part).
//! Contributors within a branch are chosen by Doerfler marking on squared
//! indicators. The loop stops at the target tolerance, the iteration limit or
//! the tt-dofs budget.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chaos::MeasureParams;
use crate::estimate::{estimate_all, EstimatorReport};
use crate::fem::Mesh;
use crate::galerkin::{
    als_solve, assemble_operator_with, assemble_rhs, mean_preconditioner_with, DiscreteProblem,
};
use crate::lognormal::{split_coefficient_with, CoeffTT, FieldSpec, QuadGrid};
use crate::tt::{tt_dofs, Core, TTTensor};

/// Which discretization component an iteration refined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineTag {
    /// Mesh bisection.
    Det,
    /// Chaos degree increase or dimension activation.
    Param,
    /// TT rank increase of the iterate.
    Rank,
}

impl fmt::Display for RefineTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefineTag::Det => "DET",
            RefineTag::Param => "PARAM",
            RefineTag::Rank => "RANK",
        })
    }
}

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("every TT rank of the iterate already meets the cap {cap}")]
    RankCap { cap: usize },
    #[error("iteration {iteration}: {message}")]
    Iteration { iteration: usize, message: String, log: Vec<IterationRecord> },
}

/// Parameters of the adaptive loop. `field = None` runs the degenerate
/// unit-coefficient (pure Poisson) problem.
#[derive(Clone, Debug)]
pub struct AdaptConfig {
    /// Doerfler fraction, applied squared to squared indicators.
    pub marking: f64,
    /// Stop once the total estimator drops to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Stop once the iterate reaches this many tt-dofs.
    pub max_tt_dofs: usize,
    /// Basis rescaling `sigma_m = exp(theta * rho * beta_m)` of the widened
    /// measure, from the per-mode amplitudes `beta_m`.
    pub rho: f64,
    pub theta: f64,
    pub field: Option<FieldSpec>,
    /// Largest admissible TT rank of the iterate.
    pub rank_cap: usize,
    /// Largest stochastic rank of the coefficient compression.
    pub coeff_rank_cap: usize,
    /// Constant right-hand side value.
    pub load: f64,
    pub als_tol: f64,
    pub als_max_sweeps: usize,
    pub seed: u64,
}

impl AdaptConfig {
    pub fn new(field: Option<FieldSpec>) -> Self {
        AdaptConfig {
            marking: 0.5,
            tolerance: 1e-4,
            max_iterations: 100,
            max_tt_dofs: 200_000,
            rho: 1.0,
            theta: 0.1,
            field,
            rank_cap: 64,
            coeff_rank_cap: 20,
            load: 1.0,
            als_tol: 1e-10,
            als_max_sweeps: 40,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), AdaptError> {
        if !(self.marking > 0.0 && self.marking < 1.0) {
            return Err(AdaptError::Config("marking fraction must lie in (0, 1)"));
        }
        if !(self.tolerance > 0.0) {
            return Err(AdaptError::Config("tolerance must be positive"));
        }
        if self.max_iterations < 1 {
            return Err(AdaptError::Config("need at least one iteration"));
        }
        if self.max_tt_dofs < 1 {
            return Err(AdaptError::Config("tt-dofs budget must be positive"));
        }
        if !(self.rho > 0.0) || !(self.theta >= 0.0) {
            return Err(AdaptError::Config("measure parameters must satisfy rho > 0, theta >= 0"));
        }
        if self.rank_cap < 1 || self.coeff_rank_cap < 1 {
            return Err(AdaptError::Config("rank caps must be positive"));
        }
        if !self.load.is_finite() {
            return Err(AdaptError::Config("load must be finite"));
        }
        if !(self.als_tol > 0.0) || self.als_max_sweeps < 1 {
            return Err(AdaptError::Config("ALS parameters must be positive"));
        }
        Ok(())
    }
}

/// One row of the iteration log, captured after the solve and before the
/// refinement of that iteration.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Applied refinement decision (argmax branch unless the rank cap forced
    /// a fallback).
    pub tag: RefineTag,
    /// Number of active stochastic dimensions.
    pub n_active: usize,
    pub d_max: usize,
    pub r_max: usize,
    /// Free physical dofs.
    pub m_dofs: usize,
    pub tt_dofs: usize,
    pub op_dofs: usize,
    pub report: EstimatorReport,
}

/// Post-solve snapshot of one iteration, kept for later sampling.
#[derive(Clone, Debug)]
pub struct Iterate {
    pub w: TTTensor,
    pub degrees: Vec<usize>,
    /// Index into the mesh refinement chain.
    pub mesh_level: usize,
}

/// Final state of a run plus its full history.
#[derive(Clone, Debug)]
pub struct AdaptState {
    pub mesh: Mesh,
    pub degrees: Vec<usize>,
    pub w: TTTensor,
    pub coeff: CoeffTT,
    pub log: Vec<IterationRecord>,
    /// Mesh refinement chain from the initial mesh to the final one; each
    /// entry was produced by bisecting its predecessor.
    pub meshes: Vec<Mesh>,
    /// One snapshot per logged iteration.
    pub iterates: Vec<Iterate>,
}

/// Smallest index set whose values, sorted descending, accumulate at least
/// `fraction` of the total. Ties prefer the lower original index; an all-zero
/// input marks nothing. Returned indices are sorted ascending.
pub fn mark_doerfler(values: &[f64], fraction: f64) -> Vec<usize> {
    assert!(fraction > 0.0 && fraction < 1.0, "marking fraction must lie in (0, 1)");
    for &v in values {
        assert!(v >= 0.0, "indicator values must be nonnegative");
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap().then(i.cmp(&j)));
    // Summing in the marking order makes the final prefix sum reach the
    // total exactly, so a fraction below one can always be met.
    let total: f64 = order.iter().map(|&i| values[i]).sum();
    if total == 0.0 {
        return Vec::new();
    }
    let target = fraction * total;
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for &i in &order {
        marked.push(i);
        acc += values[i];
        if acc >= target {
            break;
        }
    }
    marked.sort_unstable();
    marked
}

/// Raises the chaos degree of every marked active dimension by one; marking
/// the index one past the active dimensions activates a new dimension at
/// degree 2.
pub fn refine_stochastic(degrees: &[usize], marked: &[usize]) -> Vec<usize> {
    let m_count = degrees.len();
    let mut out = degrees.to_vec();
    let mut activate = false;
    for &m in marked {
        assert!(m <= m_count, "marked dimension out of range");
        if m < m_count {
            out[m] += 1;
        } else {
            activate = true;
        }
    }
    if activate {
        out.push(2);
    }
    out
}

/// Adds a random rank-one tensor of norm `1e-6 * |w|` (norm 1 for a zero
/// iterate), raising every internal TT rank by one. Fails once the largest
/// rank meets the cap.
pub fn refine_rank(
    w: &TTTensor,
    rank_cap: usize,
    rng: &mut impl Rng,
) -> Result<TTTensor, AdaptError> {
    let max_rank = w.ranks().into_iter().max().unwrap();
    if max_rank >= rank_cap {
        return Err(AdaptError::RankCap { cap: rank_cap });
    }
    let norm = w.norm();
    let delta = if norm > 0.0 { 1e-6 * norm } else { 1.0 };
    let kick = TTTensor::random_rank_one(&w.dims(), delta, rng);
    Ok(w.add(&kick))
}

/// Squared element indicators with each interior facet's squared indicator
/// split evenly between its two neighbours, so the pool sums to the squared
/// deterministic estimator.
fn det_marking_pool(report: &EstimatorReport, mesh: &Mesh) -> Vec<f64> {
    let mut values: Vec<f64> = report.eta_det_t.iter().map(|v| v * v).collect();
    for (facet, &ef) in mesh.facets().iter().zip(&report.eta_det_f) {
        if let (t0, Some(t1)) = facet.tris {
            let half = 0.5 * ef * ef;
            values[t0] += half;
            values[t1] += half;
        }
    }
    values
}

/// Moves the physical core onto a bisection refinement of its mesh by nodal
/// interpolation of every rank column.
fn prolong_physical(w: &TTTensor, coarse: &Mesh, fine: &Mesh) -> TTTensor {
    let c0 = w.core(0);
    assert_eq!(c0.n, coarse.n_free(), "iterate does not live on the coarse mesh");
    let r1 = c0.r_right;
    let mut next = Core::zeros(1, fine.n_free(), r1);
    for b in 0..r1 {
        let mut full = vec![0.0; coarse.n_vertices()];
        for (slot, &v) in coarse.free_vertices().iter().enumerate() {
            full[v] = c0.get(0, slot, b);
        }
        let fine_full = fine.prolong_full(&full);
        for (slot, &v) in fine.free_vertices().iter().enumerate() {
            next.set(0, slot, b, fine_full[v]);
        }
    }
    let mut cores = w.clone().into_cores();
    cores[0] = next;
    TTTensor::new(cores)
}

/// Random full-rank starting tensor over the free vertices and one stochastic
/// dimension, normalized to unit norm.
fn initial_iterate(n_free: usize, d: usize, rng: &mut impl Rng) -> TTTensor {
    let r = d.min(n_free);
    let mut c0 = Core::zeros(1, n_free, r);
    let mut c1 = Core::zeros(r, d, 1);
    for v in &mut c0.data {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in &mut c1.data {
        *v = rng.gen_range(-1.0..1.0);
    }
    let w = TTTensor::new(vec![c0, c1]);
    let norm = w.norm();
    if norm > 0.0 {
        w.scale(1.0 / norm)
    } else {
        w
    }
}

fn fail(iteration: usize, log: &[IterationRecord], e: impl fmt::Display) -> AdaptError {
    AdaptError::Iteration { iteration, message: e.to_string(), log: log.to_vec() }
}

/// Runs the adaptive loop from the fixed starting state: the 32-triangle
/// uniform mesh, one active dimension at degree 2 and a random full-rank
/// start tensor. Returns the final state with the complete iteration history;
/// mid-run failures carry the history accumulated so far.
pub fn run(cfg: &AdaptConfig) -> Result<AdaptState, AdaptError> {
    cfg.validate()?;
    let modes = |m: usize, x: [f64; 2]| match &cfg.field {
        Some(spec) => spec.bm_eval(m, x),
        None => 0.0,
    };
    let betas = |count: usize| match &cfg.field {
        Some(spec) => spec.betas(count),
        None => vec![0.0; count],
    };
    let quad = match &cfg.field {
        Some(spec) => spec.quad().clone(),
        None => QuadGrid::gauss_legendre(8, 2),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut meshes = vec![Mesh::initial(4)];
    let mut degrees: Vec<usize> = vec![2];
    let mut w = initial_iterate(meshes[0].n_free(), degrees[0], &mut rng);
    let mut coeff: Option<CoeffTT> = None;
    let mut log: Vec<IterationRecord> = Vec::new();
    let mut iterates: Vec<Iterate> = Vec::new();

    for iteration in 1..=cfg.max_iterations {
        let l_count = degrees.len() + 1;
        let params = MeasureParams::new(betas(l_count), cfg.rho, cfg.theta)
            .map_err(|e| fail(iteration, &log, e))?;
        if coeff.is_none() {
            let q: Vec<usize> =
                degrees.iter().map(|&d| 2 * d - 1).chain(std::iter::once(3)).collect();
            let c = split_coefficient_with(&modes, &quad, &params, &q, cfg.coeff_rank_cap)
                .map_err(|e| fail(iteration, &log, e))?;
            coeff = Some(c);
        }
        let c = coeff.as_ref().unwrap();

        let (report, m_dofs, ttd, opd) = {
            let mesh = meshes.last().unwrap();
            let operator = assemble_operator_with(c, &modes, mesh, &degrees)
                .map_err(|e| fail(iteration, &log, e))?;
            let rhs = assemble_rhs(mesh, |_| cfg.load, &degrees)
                .map_err(|e| fail(iteration, &log, e))?;
            let problem = DiscreteProblem { mesh, operator, rhs, degrees: degrees.clone() };
            let precond = mean_preconditioner_with(c, &modes, mesh)
                .map_err(|e| fail(iteration, &log, e))?;
            let outcome = als_solve(&problem, &w, &precond, cfg.als_tol, cfg.als_max_sweeps)
                .map_err(|e| fail(iteration, &log, e))?;
            w = outcome.w;
            let report = estimate_all(&problem, &w, c, &modes, &|_| cfg.load, &params)
                .map_err(|e| fail(iteration, &log, e))?;
            (report, mesh.n_free(), tt_dofs(&w), problem.operator.op_dofs())
        };

        iterates.push(Iterate {
            w: w.clone(),
            degrees: degrees.clone(),
            mesh_level: meshes.len() - 1,
        });
        let n_active = degrees.len();
        let d_max = *degrees.iter().max().unwrap();
        let r_max = w.ranks().into_iter().max().unwrap();

        let (det, par, disc) = (report.eta_det, report.eta_param, report.eta_disc);
        let mut tag = if det >= par && det >= disc {
            RefineTag::Det
        } else if par >= disc {
            RefineTag::Param
        } else {
            RefineTag::Rank
        };
        let stopping = report.eta_all <= cfg.tolerance
            || ttd >= cfg.max_tt_dofs
            || iteration == cfg.max_iterations;

        if !stopping {
            if tag == RefineTag::Rank {
                match refine_rank(&w, cfg.rank_cap, &mut rng) {
                    Ok(kicked) => w = kicked,
                    // Capped ranks: refine the larger of the other branches.
                    Err(AdaptError::RankCap { .. }) => {
                        tag = if det >= par { RefineTag::Det } else { RefineTag::Param };
                    }
                    Err(e) => return Err(e),
                }
            }
            match tag {
                RefineTag::Det => {
                    let values = det_marking_pool(&report, meshes.last().unwrap());
                    let marked = mark_doerfler(&values, cfg.marking * cfg.marking);
                    debug_assert!(!marked.is_empty());
                    let fine = meshes.last().unwrap().refine(&marked);
                    w = prolong_physical(&w, meshes.last().unwrap(), &fine);
                    meshes.push(fine);
                }
                RefineTag::Param => {
                    let values: Vec<f64> = report.eta_param_m.iter().map(|v| v * v).collect();
                    let marked = mark_doerfler(&values, cfg.marking * cfg.marking);
                    debug_assert!(!marked.is_empty());
                    let next = refine_stochastic(&degrees, &marked);
                    for (m, &d) in degrees.iter().enumerate() {
                        if next[m] > d {
                            w = w.pad_mode(m + 1, next[m]);
                        }
                    }
                    if next.len() > degrees.len() {
                        w = w.append_unit_mode(2, 0);
                    }
                    degrees = next;
                    coeff = None;
                }
                RefineTag::Rank => {}
            }
        }

        log.push(IterationRecord {
            iteration,
            tag,
            n_active,
            d_max,
            r_max,
            m_dofs,
            tt_dofs: ttd,
            op_dofs: opd,
            report,
        });
        if stopping {
            break;
        }
    }

    Ok(AdaptState {
        mesh: meshes.last().unwrap().clone(),
        degrees,
        w,
        coeff: coeff.expect("the final iteration leaves the coefficient in place"),
        log,
        meshes,
        iterates,
    })
}
