use std::sync::OnceLock;

use proptest::prelude::*;
use schauder_core::germs::{germ_lincomb, make_fixture, Fixture, FixtureKind, FixtureParams, GermGrid, GermMeta};
use schauder_core::kernels::{dyadic_decompose, fractional_kernel, DyadicDecomposition};
use schauder_core::models::model_fixture;
use schauder_core::schauder::{lift_fits, schauder_map};
use schauder_core::testfn::{make_bump, scale_center};

fn decomp() -> &'static DyadicDecomposition {
    static D: OnceLock<DyadicDecomposition> = OnceLock::new();
    D.get_or_init(|| dyadic_decompose(&fractional_kernel(0.75, 1.0, false).unwrap(), 8).unwrap())
}

fn young() -> Fixture {
    make_fixture(FixtureKind::Young, &FixtureParams { regularity: -0.3, ..Default::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn lift_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, x in 0.0..1.0f64, lambda in 0.02..0.5f64) {
        // two Young germs over the same g with a common reconstruction rule (ℛ is linear)
        let f = young();
        let g = make_fixture(FixtureKind::Young, &FixtureParams { regularity: -0.3, holder: 0.7, ..Default::default() }).unwrap();
        let meta = GermMeta::new(-0.3, -0.3, 0.2, f.germ.meta().order).unwrap();
        let combo = germ_lincomb(vec![(a, f.germ.clone()), (b, g.germ.clone())], vec![], meta);
        let rc = schauder_core::distributions::lincomb(vec![(a, f.reconstruction.clone()), (b, g.reconstruction.clone())]);
        let lc = schauder_map(decomp(), &combo, Some(rc), 0.2).unwrap();
        let lf = schauder_map(decomp(), &f.germ, Some(f.reconstruction.clone()), 0.2).unwrap();
        let lg = schauder_map(decomp(), &g.germ, Some(g.reconstruction.clone()), 0.2).unwrap();
        let psi = scale_center(&make_bump(1), x, lambda).unwrap();
        let y = (x + 0.1).min(1.0);
        use schauder_core::germs::Germ;
        let lhs = lc.pair(y, &psi).unwrap();
        let rhs = a * lf.pair(y, &psi).unwrap() + b * lg.pair(y, &psi).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn lifted_exponents_follow_the_arithmetic() {
    let grid = GermGrid::fine();
    let fixtures = [
        make_fixture(FixtureKind::Taylor, &FixtureParams::default()).unwrap(),
        young(),
        model_fixture(&FixtureParams::default()).unwrap(),
    ];
    for f in fixtures {
        let gamma = f.germ.meta().gamma;
        let lift = schauder_map(decomp(), &f.germ, Some(f.reconstruction.clone()), gamma).unwrap();
        let fits = lift_fits(&lift, &grid).unwrap();
        let p = fits.predicted;
        println!("{:?}: predicted ({}; {}, {}), fitted γ {:.3}, α {:?}", f.kind, p.alpha_bar, p.alpha, p.gamma, fits.gamma_fit, fits.alpha_fit);
        assert!((fits.gamma_fit - p.gamma).abs() <= 0.15, "{:?}: γ fit {}", f.kind, fits.gamma_fit);
        if let Some(a) = fits.alpha_fit {
            assert!((a - p.alpha).abs() <= 0.15, "{:?}: α fit {a}", f.kind);
        }
    }
}
