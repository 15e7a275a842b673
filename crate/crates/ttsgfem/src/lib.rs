//! Adaptive stochastic Galerkin finite elements in tensor-train format.
//!
//! Solves the elliptic model problem `-div(a grad u) = f` on the unit square
//! with homogeneous Dirichlet data, where `a = exp(sum_m b_m(x) y_m)` is a
//! lognormal random field in countably many Gaussian parameters `y_m`.
//! The Galerkin solution over a Hermite chaos basis is stored as a
//! tensor train, the Galerkin operator as a tensor-train operator, and the
//! discretization is steered by a reliable a posteriori error estimator with
//! separate deterministic, parametric and algebraic contributions.
//!
//! Module map:
//! * [`chaos`]: univariate Hermite algebra, triple products, quadrature, Gramians
//! * [`tt`]: tensor-train tensors and operators, rounding, contraction
//! * [`sparse`]: CSR matrices, envelope Cholesky, conjugate gradients
//! * [`fem`]: triangulations with newest-vertex bisection, P1 assembly
//! * [`lognormal`]: coefficient fields and their low-rank surrogate
//! * [`galerkin`]: discrete operator / right-hand side assembly and the ALS solver
//! * [`estimate`]: residual lifting and the error estimator
//! * [`adapt`]: marking, refinement and the adaptive loop
//! * [`bench`]: experiment configs, Monte Carlo validation, CSV reports

pub mod adapt;
pub mod bench;
pub mod chaos;
pub mod estimate;
pub mod fem;
pub mod galerkin;
pub mod lognormal;
pub mod sparse;
pub mod tt;
