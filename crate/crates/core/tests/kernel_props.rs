use std::sync::Arc;

use schauder_core::distributions::{hz_norm_estimate, Dist, ScaleGrid};
use schauder_core::germs::{holder_function, rough_distribution};
use schauder_core::kernels::{dyadic_decompose, fractional_kernel, integrate_distribution, kernel_series_terms};
use schauder_core::testfn::{make_bump, scale_center};

fn fixture(gamma: f64) -> Dist {
    if gamma < 0.0 {
        Arc::new(rough_distribution(gamma).unwrap())
    } else {
        Arc::new(holder_function(gamma).unwrap())
    }
}

#[test]
fn classical_schauder_gains_beta() {
    // kernel images settle into their asymptotic slope once λ is well below ρ
    let grid = ScaleGrid { j_max: 10, fit_range: (4, 10), ..ScaleGrid::default() };
    for beta in [0.5, 0.75] {
        let d = dyadic_decompose(&fractional_kernel(beta, 1.0, false).unwrap(), 10).unwrap();
        for gamma in [-0.75, -0.5, 0.25] {
            let f = fixture(gamma);
            let kf = integrate_distribution(&d, f).unwrap();
            let s_kf = hz_norm_estimate(kf.as_ref(), gamma + beta, &grid).unwrap().slope();
            assert!((s_kf - (gamma + beta)).abs() <= 0.12, "β {beta} γ {gamma}: {s_kf}");
        }
    }
}

#[test]
fn series_terms_decay_like_two_to_minus_beta_n() {
    let beta = 0.75;
    let d = dyadic_decompose(&fractional_kernel(beta, 1.0, false).unwrap(), 12).unwrap();
    let psi = scale_center(&make_bump(2), 0.4, 0.5).unwrap();
    for gamma in [-0.75, -0.5, 0.25] {
        let f = fixture(gamma);
        let terms = kernel_series_terms(&d, f.as_ref(), &psi, 12).unwrap();
        let c: Vec<f64> = terms.iter().enumerate().map(|(n, t)| t.abs() * 2f64.powf(beta * n as f64)).collect();
        let reference = c[..3].iter().cloned().fold(0.0, f64::max);
        let worst = c.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 4.0 * reference, "γ {gamma}: constants {c:?}");
    }
}
