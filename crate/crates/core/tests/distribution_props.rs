use std::sync::Arc;

use proptest::prelude::*;
use schauder_core::distributions::{
    lincomb, pointwise_derivative, weierstrass, weierstrass_with_terms, DerivativeOptions, Dist, Distribution,
};
use schauder_core::testfn::{make_bump, scale_center, vanishing_moment_mollifier_weighted, TestFunction};

fn w() -> Dist {
    Arc::new(weierstrass(0.6, 2).unwrap())
}

fn v() -> Dist {
    Arc::new(weierstrass_with_terms(0.4, 3, 6).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pairing_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, x in 0.0..1.0f64, e in 0u32..8) {
        let psi = scale_center(&make_bump(1), x, 2f64.powi(-(e as i32))).unwrap();
        let combo = lincomb(vec![(a, w()), (b, v())]);
        let lhs = combo.pair(&psi).unwrap();
        let rhs = a * w().pair(&psi).unwrap() + b * v().pair(&psi).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn scaling_derivative_rule(x in 0.0..1.0f64, lambda in 0.05..1.0f64, y in -0.9..0.9f64) {
        // ∂(φ_x^λ) = λ^{-1} (∂φ)_x^λ
        let phi = make_bump(2);
        let lhs = scale_center(&phi, x, lambda).unwrap().derivative(1).eval(x + y * lambda);
        let rhs = scale_center(&phi.derivative(1), x, lambda).unwrap().eval(x + y * lambda) / lambda;
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn derivative_limit_ignores_the_mollifier(x in 0.0..1.0f64, p in -0.8..0.8f64, k in 0usize..3) {
        let f = weierstrass_with_terms(0.5, 2, 5).unwrap();
        let delta = 3.5;
        let alt = DerivativeOptions {
            eta: Some(vanishing_moment_mollifier_weighted(delta, &TestFunction::poly_bump(vec![1.0, p])).unwrap()),
            ..Default::default()
        };
        let a = pointwise_derivative(&f, x, k, delta, &DerivativeOptions::default()).unwrap().value;
        let b = pointwise_derivative(&f, x, k, delta, &alt).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}
