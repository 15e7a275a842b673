//! Extended-precision reference computations shared by the test binaries.
//!
//! The Hermite recurrence, Gauss quadrature and moment integrals here are
//! carried out in double-double arithmetic so that their results can serve
//! as independent, correctly rounded oracles for the f64 implementations.

#![allow(dead_code)]

use twofloat::TwoFloat;

/// Double-double division by iterated residual correction.
///
/// The crate's `Div` impl only reaches f64 accuracy, which would silently
/// degrade every oracle below; three correction steps restore ~1e-31
/// relative error using only the (accurate) add/sub/mul ops.
pub fn dd_div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r1 = a - TwoFloat::from(q1) * b;
    let q2 = r1.hi() / b.hi();
    let r2 = r1 - TwoFloat::from(q2) * b;
    let q3 = r2.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + TwoFloat::from(q3)
}

/// All orthonormal Hermite values `H_0(y) .. H_{n_max}(y)` in double-double.
pub fn dd_hermite_all(n_max: usize, y: TwoFloat) -> Vec<TwoFloat> {
    let mut h = Vec::with_capacity(n_max + 1);
    h.push(TwoFloat::from(1.0));
    if n_max == 0 {
        return h;
    }
    h.push(y);
    for n in 1..n_max {
        let sq_n = TwoFloat::from(n as f64).sqrt();
        let sq_n1 = TwoFloat::from((n + 1) as f64).sqrt();
        let next = dd_div(y * h[n] - sq_n * h[n - 1], sq_n1);
        h.push(next);
    }
    h
}

/// Gauss nodes and weights for the standard Gaussian measure in
/// double-double precision.
///
/// Starts from the f64 nodes and polishes each root of `H_n` with Newton
/// steps evaluated in double-double (`H_n' = sqrt(n) H_{n-1}`); the weights
/// come from the Christoffel identity `w_j = 1 / sum_{k<n} H_k(y_j)^2`.
pub fn dd_gauss_hermite(n: usize) -> (Vec<TwoFloat>, Vec<TwoFloat>) {
    let (nodes_f64, _) = ttsgfem::chaos::gauss_hermite(n);
    let sqrt_n = TwoFloat::from(n as f64).sqrt();
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &x in &nodes_f64 {
        let mut y = TwoFloat::from(x);
        for _ in 0..4 {
            let h = dd_hermite_all(n, y);
            y -= dd_div(h[n], sqrt_n * h[n - 1]);
        }
        let h = dd_hermite_all(n - 1, y);
        let mut chr = TwoFloat::from(0.0);
        for v in &h {
            chr += *v * *v;
        }
        nodes.push(y);
        weights.push(dd_div(TwoFloat::from(1.0), chr));
    }
    (nodes, weights)
}

/// `integral H_nu H_mu H_eta dgamma` by double-double Gauss quadrature,
/// exact (up to double-double roundoff) for the polynomial integrand.
pub fn dd_triple_quad(nu: usize, mu: usize, eta: usize) -> TwoFloat {
    let deg = nu + mu + eta;
    let n = deg / 2 + 2;
    let (nodes, weights) = dd_gauss_hermite(n);
    let top = nu.max(mu).max(eta);
    let mut acc = TwoFloat::from(0.0);
    for (y, w) in nodes.iter().zip(&weights) {
        let h = dd_hermite_all(top, *y);
        acc += *w * h[nu] * h[mu] * h[eta];
    }
    acc
}
