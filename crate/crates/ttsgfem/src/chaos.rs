//! Univariate Hermite chaos algebra.
//!
//! Everything here is built on the orthonormal probabilists' Hermite
//! polynomials `H_n` with respect to the standard Gaussian measure:
//! three-term recurrence, products of two basis functions expanded in the
//! basis, Hermite coefficients of `exp(t y)`, Gauss quadrature for the
//! Gaussian weight, and the Gramian matrices of the scaled basis
//! `H_n(y / sigma_m)` under the two measures used by the error estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use twofloat::TwoFloat;

/// Largest polynomial degree for which triple products are evaluated through
/// exact integer binomials; beyond this the log-factorial fallback is used.
/// 44 is the largest degree whose squared coefficient `C(44,22)^3` still
/// fits in a u128.
const EXACT_TRIPLE_LIMIT: usize = 44;

#[derive(Debug, Error)]
pub enum ChaosError {
    /// The squared-density measure requires `sigma_m^2 < 2`.
    #[error("dimension {m}: sigma = {sigma} has sigma^2 >= 2, squared-density measure undefined")]
    SigmaTooLarge { m: usize, sigma: f64 },
}

/// Evaluates the orthonormal Hermite polynomial of degree `n` at `y`.
pub fn hermite_eval(n: usize, y: f64) -> f64 {
    *hermite_eval_all(n, y).last().unwrap()
}

/// Evaluates all orthonormal Hermite polynomials of degree `0..=n_max` at `y`.
pub fn hermite_eval_all(n_max: usize, y: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(n_max + 1);
    h.push(1.0);
    if n_max == 0 {
        return h;
    }
    h.push(y);
    for n in 1..n_max {
        let next = (y * h[n] - (n as f64).sqrt() * h[n - 1]) / ((n + 1) as f64).sqrt();
        h.push(next);
    }
    h
}

/// Natural log of `n!`.
pub fn ln_factorial(n: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

fn binomial_u128(n: usize, k: usize) -> u128 {
    debug_assert!(k <= n);
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Coefficient of `H_eta` in the product `H_nu * H_mu`.
///
/// Nonzero exactly when `nu + mu + eta` is even and the triangle inequality
/// `|nu - mu| <= eta <= nu + mu` holds; the value is
/// `sqrt(nu! mu! eta!) / (xi! (nu-xi)! (mu-xi)!)` with `xi = (nu+mu-eta)/2`.
/// Degrees up to 44 are computed from exact integer binomials and a
/// double-double square root so the result is correctly rounded; larger
/// degrees use log-factorials (~1e-13 relative accuracy).
pub fn triple_product(nu: usize, mu: usize, eta: usize) -> f64 {
    if (nu + mu + eta) % 2 != 0 {
        return 0.0;
    }
    if eta + nu < mu || eta + mu < nu || nu + mu < eta {
        return 0.0;
    }
    // The value is symmetric in all three degrees; evaluating in sorted order
    // keeps it bitwise symmetric as well.
    let mut s = [nu, mu, eta];
    s.sort_unstable();
    let [eta, mu, nu] = s;
    let xi = (nu + mu - eta) / 2;
    if nu.max(mu).max(eta) <= EXACT_TRIPLE_LIMIT {
        // kappa^2 = C(nu,xi) * C(mu,xi) * C(eta,nu-xi) is an exact integer.
        let sq = binomial_u128(nu, xi) * binomial_u128(mu, xi) * binomial_u128(eta, nu - xi);
        let sq_dd = TwoFloat::from(sq as f64)
            + TwoFloat::from((sq as i128 - (sq as f64) as i128) as f64);
        f64::from(sq_dd.sqrt())
    } else {
        let ln = 0.5 * (ln_factorial(nu) + ln_factorial(mu) + ln_factorial(eta))
            - ln_factorial(xi)
            - ln_factorial(nu - xi)
            - ln_factorial(mu - xi);
        ln.exp()
    }
}

/// Hermite coefficients of `y -> exp(t y)` up to degree `n_max`:
/// `c_n = t^n / sqrt(n!) * exp(t^2 / 2)`.
pub fn exp_coeffs(t: f64, n_max: usize) -> Vec<f64> {
    let mut c = Vec::with_capacity(n_max + 1);
    c.push((0.5 * t * t).exp());
    for n in 1..=n_max {
        let prev = c[n - 1];
        c.push(prev * t / (n as f64).sqrt());
    }
    c
}

/// Gauss quadrature nodes and weights for the standard Gaussian measure.
///
/// Exact for polynomials of degree `2n - 1`; the weights sum to one.
/// Computed from the symmetric tridiagonal Jacobi matrix of the orthonormal
/// Hermite recurrence, nodes sorted ascending.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature rule needs at least one node");
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Polish the eigenvalue approximations with Newton steps on H_n
    // (H_n' = sqrt(n) H_{n-1}) and take the weights from the Christoffel
    // identity; this reaches machine-accurate nodes where the plain
    // eigensolve leaves ~1e-14 absolute error.
    let sqrt_n = (n as f64).sqrt();
    let mut weights = Vec::with_capacity(n);
    for y in &mut nodes {
        for _ in 0..2 {
            let h = hermite_eval_all(n, *y);
            *y -= h[n] / (sqrt_n * h[n - 1]);
        }
        let h = hermite_eval_all(n - 1, *y);
        weights.push(1.0 / h.iter().map(|v| v * v).sum::<f64>());
    }
    (nodes, weights)
}

/// Scaling parameters of the Hermite bases and auxiliary measures, one set
/// per parametric dimension.
///
/// Dimension `m` (0-based) carries `sigma_m = exp(theta * rho * beta_m)`.
/// The square of the reweighting density `zeta_m` relative to the Gaussian
/// measure integrates test functions against a normal with standard deviation
/// `sigma'_m = sigma_m / sqrt(2 - sigma_m^2)` times the constant
/// `c_m = 1 / (sigma_m * sqrt(2 - sigma_m^2))`, which requires
/// `sigma_m^2 < 2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureParams {
    beta: Vec<f64>,
    rho: f64,
    theta: f64,
    sigma: Vec<f64>,
    sigma_prime: Vec<f64>,
    c_sigma: Vec<f64>,
}

impl MeasureParams {
    pub fn new(beta: Vec<f64>, rho: f64, theta: f64) -> Result<Self, ChaosError> {
        let sigma: Vec<f64> = beta.iter().map(|b| (theta * rho * b).exp()).collect();
        let mut sigma_prime = Vec::with_capacity(sigma.len());
        let mut c_sigma = Vec::with_capacity(sigma.len());
        for (m, &s) in sigma.iter().enumerate() {
            let rest = 2.0 - s * s;
            if rest <= 0.0 {
                return Err(ChaosError::SigmaTooLarge { m, sigma: s });
            }
            sigma_prime.push(s / rest.sqrt());
            c_sigma.push(1.0 / (s * rest.sqrt()));
        }
        Ok(Self { beta, rho, theta, sigma, sigma_prime, c_sigma })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self, m: usize) -> f64 {
        self.beta[m]
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Basis scaling of dimension `m`.
    pub fn sigma(&self, m: usize) -> f64 {
        self.sigma[m]
    }

    /// Standard deviation of the squared-density Gaussian in dimension `m`.
    pub fn sigma_prime(&self, m: usize) -> f64 {
        self.sigma_prime[m]
    }

    /// Normalization constant of the squared density in dimension `m`.
    pub fn c_sigma(&self, m: usize) -> f64 {
        self.c_sigma[m]
    }
}

/// Gramians of the scaled Hermite basis of one dimension under the Gaussian
/// measure (`z`) and under the squared reweighting density (`ztilde`).
#[derive(Clone, Debug)]
pub struct GramianPair {
    /// Gramian under the Gaussian measure, `d x d`.
    pub z: DMatrix<f64>,
    /// Gramian under the squared density, `zres x zres`.
    pub ztilde: DMatrix<f64>,
}

/// Builds the Gramians of dimension `m` for `d` active degrees.
///
/// `z` covers degrees below `d` and `ztilde` covers the residual degree range
/// `0..(3d - 2)`, which is where products of solution degrees `< d` and
/// coefficient degrees `< 2d - 1` live.
pub fn gramians(m: usize, d: usize, params: &MeasureParams) -> GramianPair {
    gramians_sized(m, d, 3 * d - 2, params)
}

/// Builds the Gramians of dimension `m` with explicit sizes `d` and `zres`.
pub fn gramians_sized(m: usize, d: usize, zres: usize, params: &MeasureParams) -> GramianPair {
    assert!(d >= 1 && zres >= d);
    let sigma = params.sigma(m);
    let sigma_prime = params.sigma_prime(m);
    let c = params.c_sigma(m);
    let (nodes, weights) = gauss_hermite(zres + 1);

    let mut z = DMatrix::zeros(d, d);
    let mut zt = DMatrix::zeros(zres, zres);
    for (&y, &w) in nodes.iter().zip(&weights) {
        let h = hermite_eval_all(zres - 1, y / sigma);
        for i in 0..d {
            for j in i..d {
                z[(i, j)] += w * h[i] * h[j];
            }
        }
        let ht = hermite_eval_all(zres - 1, sigma_prime * y / sigma);
        for i in 0..zres {
            for j in i..zres {
                zt[(i, j)] += c * w * ht[i] * ht[j];
            }
        }
    }
    z.fill_lower_triangle_with_upper_triangle();
    zt.fill_lower_triangle_with_upper_triangle();
    GramianPair { z, ztilde: zt }
}
