use proptest::prelude::*;
use schauder_core::testfn::{
    annihilate_moments, large_scale_decompose, make_bump, scale_center, taylor_remainder_residual, TestFunction,
};

fn member(a: f64, b: f64) -> TestFunction {
    TestFunction::poly_bump(vec![1.0, a, b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_is_scale_invariant(a in -1.0..1.0f64, b in -1.0..1.0f64, x in -3.0..3.0f64, e in 0u32..12) {
        let phi = member(a, b);
        let lambda = 2f64.powi(-(e as i32)) * 1.3;
        let scaled = scale_center(&phi, x, lambda).unwrap();
        prop_assert!((scaled.mass() - phi.mass()).abs() <= 1e-12 * phi.mass().abs().max(1.0));
        let y = x + 0.37 * lambda;
        prop_assert!((scaled.eval(y) - phi.value(0.37) / lambda).abs() <= 1e-12 * (phi.value(0.37) / lambda).abs().max(1.0));
    }

    #[test]
    fn annihilated_functions_kill_low_monomials(a in -1.0..1.0f64, b in -1.0..1.0f64, c in 0i32..5) {
        let psi = annihilate_moments(&member(a, b), c).unwrap().function;
        for k in 0..=c as usize {
            prop_assert!(psi.moment(k).abs() <= 1e-10, "moment {} = {}", k, psi.moment(k));
        }
    }

    #[test]
    fn taylor_remainder_identity(x in -0.5..0.5f64, t in -1.0..1.0f64, n in 0i32..8, c in 0i32..4) {
        let y = x + t * 2f64.powi(-n);
        let s = 2f64.powi(-n);
        let probes: Vec<f64> = (0..=64).map(|i| x.min(y) - 2.0 * s + 4.0 * s * i as f64 / 64.0).collect();
        let r = taylor_remainder_residual(&make_bump(2), x, y, n, c, &probes).unwrap();
        // the identity is homogeneous of degree 1 in 2^n
        prop_assert!(r <= 1e-9 * 2f64.powi(n), "residual {r}");
    }
}

#[test]
fn large_scale_identity_up_to_twelve_levels() {
    let psi = member(0.3, -0.6);
    for c in [-1, 0, 1, 2] {
        for m in 0..=12usize {
            let dec = large_scale_decompose(&psi, m, c).unwrap();
            let span = 2f64.powi(m as i32);
            let worst = (0..=500)
                .map(|i| -span + 2.0 * span * i as f64 / 500.0)
                .map(|z| (dec.reassemble(z) - psi.value(z)).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-10, "c={c} M={m}: {worst}");
            if c >= 0 {
                assert!(dec.checks[0].annihilates(c, 1e-10));
            }
        }
    }
}
