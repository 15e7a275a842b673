mod common;

use proptest::prelude::*;
use ttsgfem::chaos::{
    exp_coeffs, gauss_hermite, gramians, hermite_eval, hermite_eval_all, triple_product,
    MeasureParams,
};
use twofloat::TwoFloat;

#[test]
fn hermite_low_degrees() {
    assert_eq!(hermite_eval(0, 3.7), 1.0);
    assert_eq!(hermite_eval(1, 2.0), 2.0);
    // H_2(y) = (y^2 - 1) / sqrt(2) vanishes at 1.
    assert!(hermite_eval(2, 1.0).abs() < 1e-15);
    let h = hermite_eval_all(3, 0.5);
    assert!((h[2] - (0.25 - 1.0) / 2f64.sqrt()).abs() < 1e-15);
    assert!((h[3] - (0.125 - 3.0 * 0.5) / 6f64.sqrt()).abs() < 1e-15);
}

#[test]
fn hermite_orthonormal_under_quadrature() {
    let (nodes, weights) = gauss_hermite(23);
    let values: Vec<Vec<f64>> = nodes.iter().map(|&y| hermite_eval_all(20, y)).collect();
    for i in 0..=20 {
        for j in 0..=20 {
            let mut acc = 0.0;
            let mut scale = 0.0;
            for (h, &w) in values.iter().zip(&weights) {
                acc += w * h[i] * h[j];
                scale += w * (h[i] * h[j]).abs();
            }
            let expect = if i == j { 1.0 } else { 0.0 };
            // Node accuracy of the f64 eigensolve limits high-degree
            // entries to a few 1e-12; low degrees land near 1e-15.
            let tol = if i + j <= 20 { 1e-12 } else { 1e-14 * scale + 5e-12 };
            assert!(
                (acc - expect).abs() < tol,
                "gramian entry ({i},{j}) = {acc}, scale {scale}"
            );
        }
    }
}

#[test]
fn quadrature_reproduces_gaussian_moments() {
    let (nodes, weights) = gauss_hermite(12);
    // E[y^k] = (k-1)!! for even k, 0 for odd k; exact for k <= 23.
    let mut expect = vec![1.0f64];
    for k in 1..=23usize {
        let e = if k % 2 == 0 { expect[k - 2] * (k - 1) as f64 } else { 0.0 };
        expect.push(e);
    }
    for k in 0..=23usize {
        let acc: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(&y, &w)| w * y.powi(k as i32))
            .sum();
        // Odd moments vanish only through cancellation of the symmetric
        // terms, so the scale is the corresponding absolute moment.
        let scale: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(&y, &w)| w * y.abs().powi(k as i32))
            .sum::<f64>()
            .max(1.0);
        assert!(
            (acc - expect[k]).abs() <= 1e-13 * scale,
            "moment {k}: {acc} vs {}",
            expect[k]
        );
    }
}

#[test]
fn dd_quadrature_oracle_is_consistent() {
    let (nodes, weights) = common::dd_gauss_hermite(16);
    let mut sum = TwoFloat::from(0.0);
    let mut m2 = TwoFloat::from(0.0);
    let mut m6 = TwoFloat::from(0.0);
    for (y, w) in nodes.iter().zip(&weights) {
        sum += *w;
        m2 += *w * *y * *y;
        let y2 = *y * *y;
        m6 += *w * y2 * y2 * y2;
    }
    assert!(f64::from((sum - 1.0).abs()) < 1e-26);
    assert!(f64::from((m2 - 1.0).abs()) < 1e-26);
    assert!(f64::from((m6 - 15.0).abs()) < 1e-24);
}

#[test]
fn triple_product_known_values() {
    assert_eq!(triple_product(0, 0, 0), 1.0);
    assert_eq!(triple_product(5, 5, 0), 1.0);
    assert!((triple_product(1, 1, 2) - 2f64.sqrt()).abs() < 1e-15);
    assert!((triple_product(2, 2, 2) - 8f64.sqrt()).abs() < 1e-15);
    // Largest coefficient at degrees 16: C(16,8)^(3/2).
    let big = 12870f64.powi(3).sqrt();
    assert!((triple_product(16, 16, 16) - big).abs() < 1e-10 * big.max(1.0));
}

#[test]
fn triple_product_selection_rules() {
    // Odd total degree.
    assert_eq!(triple_product(1, 2, 0), 0.0);
    assert_eq!(triple_product(3, 3, 5), 0.0);
    // Triangle inequality violated.
    assert_eq!(triple_product(1, 1, 4), 0.0);
    assert_eq!(triple_product(7, 2, 1), 0.0);
}

#[test]
fn triple_product_matches_dd_quadrature_exactly() {
    // Spot checks across the exact-integer range; the full sweep to degree 16
    // runs in the acceptance suite.
    for &(nu, mu, eta) in &[
        (2usize, 2usize, 2usize),
        (4, 6, 8),
        (10, 10, 10),
        (12, 16, 14),
        (16, 16, 16),
        (20, 20, 20),
        (15, 11, 8),
    ] {
        let kappa = triple_product(nu, mu, eta);
        let oracle = f64::from(common::dd_triple_quad(nu, mu, eta));
        assert!(
            (kappa - oracle).abs() <= 1e-10,
            "({nu},{mu},{eta}): {kappa} vs {oracle}"
        );
    }
}

#[test]
fn triple_product_log_path_stays_accurate() {
    for &(nu, mu, eta) in &[(45usize, 45usize, 46usize), (50, 40, 20), (47, 25, 30)] {
        let kappa = triple_product(nu, mu, eta);
        let oracle = f64::from(common::dd_triple_quad(nu, mu, eta));
        assert!(
            (kappa - oracle).abs() <= 1e-11 * oracle.abs().max(1.0),
            "({nu},{mu},{eta}): {kappa} vs {oracle}"
        );
    }
}

#[test]
fn product_expansion_matches_pointwise() {
    // H_nu * H_mu = sum_eta kappa(nu, mu, eta) H_eta, checked in
    // double-double at 100 points so cancellation does not mask the algebra.
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut rand_unit = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..100 {
        let y = TwoFloat::from(6.0 * rand_unit() - 3.0);
        let nu = (rand_unit() * 17.0) as usize;
        let mu = (rand_unit() * 17.0) as usize;
        let h = common::dd_hermite_all(nu + mu, y);
        let mut expansion = TwoFloat::from(0.0);
        let mut eta = nu.abs_diff(mu);
        while eta <= nu + mu {
            expansion += TwoFloat::from(triple_product(nu, mu, eta)) * h[eta];
            eta += 2;
        }
        let product = h[nu] * h[mu];
        assert!(
            f64::from((expansion - product).abs()) <= 1e-10,
            "degrees ({nu},{mu}) at y = {}",
            f64::from(y)
        );
    }
}

#[test]
fn exp_coeffs_match_definition() {
    let c = exp_coeffs(0.0, 5);
    assert_eq!(c, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let t = 0.7f64;
    let c = exp_coeffs(t, 6);
    for (n, &cn) in c.iter().enumerate() {
        let fact: f64 = (1..=n).map(|k| k as f64).product::<f64>().max(1.0);
        let expect = t.powi(n as i32) / fact.sqrt() * (0.5 * t * t).exp();
        assert!((cn - expect).abs() < 1e-14, "c_{n}");
    }
}

#[test]
fn exp_coeffs_satisfy_parseval() {
    // sum_n c_n^2 = E[exp(2 t y)] = exp(2 t^2); the tail beyond degree 40 is
    // far below the tolerance for |t| <= 1.
    for &t in &[0.1f64, 0.5, 1.0, -0.8] {
        let c = exp_coeffs(t, 40);
        let sum: f64 = c.iter().map(|x| x * x).sum();
        assert!(
            (sum - (2.0 * t * t).exp()).abs() <= 1e-10,
            "t = {t}: {sum}"
        );
    }
}

#[test]
fn exp_coeffs_match_projection_quadrature() {
    let t = 0.7;
    let (nodes, weights) = gauss_hermite(60);
    let c = exp_coeffs(t, 10);
    for n in 0..=10 {
        let acc: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(&y, &w)| w * (t * y).exp() * hermite_eval(n, y))
            .sum();
        assert!((acc - c[n]).abs() < 1e-12, "projection degree {n}");
    }
}

#[test]
fn measure_params_reject_sigma_square_above_two() {
    // exp(0.4)^2 = 2.23 exceeds the admissible range.
    assert!(MeasureParams::new(vec![1.0], 1.0, 0.4).is_err());
    let params = MeasureParams::new(vec![1.0, 0.5], 1.0, 0.1).unwrap();
    assert!((params.sigma(0) - 0.1f64.exp()).abs() < 1e-15);
    let s = params.sigma(0);
    assert!((params.sigma_prime(0) - s / (2.0 - s * s).sqrt()).abs() < 1e-15);
    assert!((params.c_sigma(0) - 1.0 / (s * (2.0 - s * s).sqrt())).abs() < 1e-15);
}

#[test]
fn gramians_are_identities_for_unit_sigma() {
    let params = MeasureParams::new(vec![0.7], 1.0, 0.0).unwrap();
    let g = gramians(0, 4, &params);
    assert_eq!(g.z.nrows(), 4);
    assert_eq!(g.ztilde.nrows(), 10);
    for i in 0..4 {
        for j in 0..4 {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((g.z[(i, j)] - expect).abs() < 1e-12);
        }
    }
    for i in 0..10 {
        for j in 0..10 {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((g.ztilde[(i, j)] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn gramians_match_closed_forms_for_scaled_basis() {
    let beta = 0.3f64;
    let params = MeasureParams::new(vec![beta], 1.0, 1.0).unwrap();
    let s = params.sigma(0);
    let sp = params.sigma_prime(0);
    let c = params.c_sigma(0);
    let g = gramians(0, 3, &params);
    // Z entries against moments of H_n(y / sigma) under the Gaussian.
    assert!((g.z[(0, 0)] - 1.0).abs() < 1e-13);
    assert!((g.z[(1, 1)] - 1.0 / (s * s)).abs() < 1e-13);
    let h2_mean = (1.0 / (s * s) - 1.0) / 2f64.sqrt();
    assert!((g.z[(0, 2)] - h2_mean).abs() < 1e-13);
    // Ztilde entries against moments under c * N(0, sigma'^2).
    assert!((g.ztilde[(0, 0)] - c).abs() < 1e-13);
    assert!((g.ztilde[(1, 1)] - c * sp * sp / (s * s)).abs() < 1e-13);
    // Symmetric positive definite.
    for i in 0..g.ztilde.nrows() {
        for j in 0..i {
            assert!((g.ztilde[(i, j)] - g.ztilde[(j, i)]).abs() < 1e-13);
        }
    }
    assert!(g.ztilde.clone().cholesky().is_some());
    assert!(g.z.clone().cholesky().is_some());
}

proptest! {
    #[test]
    fn triple_product_fully_symmetric(nu in 0usize..28, mu in 0usize..28, eta in 0usize..28) {
        let a = triple_product(nu, mu, eta);
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, triple_product(mu, nu, eta));
        prop_assert_eq!(a, triple_product(eta, mu, nu));
        prop_assert_eq!(a, triple_product(nu, eta, mu));
    }

    #[test]
    fn quadrature_weights_positive_and_normalized(n in 1usize..40) {
        let (nodes, weights) = gauss_hermite(n);
        prop_assert_eq!(nodes.len(), n);
        let sum: f64 = weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for w in &weights {
            prop_assert!(*w > 0.0);
        }
        for pair in nodes.windows(2) {
            prop_assert!(pair[0] < pair[1]);
        }
    }
}
