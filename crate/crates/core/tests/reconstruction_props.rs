use proptest::prelude::*;
use schauder_core::distributions::{hz_norm_estimate, ScaleGrid};
use schauder_core::germs::{germ_lincomb, make_fixture, FixtureKind, FixtureParams, GermMeta, GermRef};
use schauder_core::reconstruction::{reconstruct, ReconstructionOptions};
use schauder_core::testfn::{make_bump, scale_center};

fn pair_of_germs() -> (GermRef, GermRef) {
    let t = make_fixture(FixtureKind::Taylor, &FixtureParams::default()).unwrap();
    let y = make_fixture(FixtureKind::Young, &FixtureParams { regularity: -0.3, ..Default::default() }).unwrap();
    (t.germ, y.germ)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn reconstruction_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, x in 0.1..0.9f64) {
        let (f, g) = pair_of_germs();
        let (mf, mg) = (f.meta(), g.meta());
        let meta = GermMeta::new(
            mf.alpha_bar.min(mg.alpha_bar),
            mf.alpha.min(mg.alpha),
            mf.gamma.min(mg.gamma),
            mf.order.max(mg.order),
        )
        .unwrap();
        let combo = germ_lincomb(vec![(a, f.clone()), (b, g.clone())], vec![], meta);
        let opts = ReconstructionOptions::default();
        let rc = reconstruct(&combo, meta.gamma, &opts).unwrap().distribution;
        let rf = reconstruct(&f, mf.gamma, &opts).unwrap().distribution;
        let rg = reconstruct(&g, mg.gamma, &opts).unwrap().distribution;
        let psi = scale_center(&make_bump(1), x, 0.2).unwrap();
        let lhs = rc.pair(&psi).unwrap();
        let rhs = a * rf.pair(&psi).unwrap() + b * rg.pair(&psi).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn reconstruction_has_the_homogeneity_of_the_germ() {
    let y = make_fixture(FixtureKind::Young, &FixtureParams { regularity: -0.3, ..Default::default() }).unwrap();
    let a = y.germ.meta().alpha_bar;
    let opts = ReconstructionOptions { panels_per_unit: 1024, ..Default::default() };
    let rf = reconstruct(&y.germ, y.germ.meta().gamma, &opts).unwrap().distribution;
    // the constructed ℛF reproduces the sampled seminorm of the known product h·g
    let small = ScaleGrid { x_points: 3, j_max: 7, ..ScaleGrid::default() };
    let built = hz_norm_estimate(rf.as_ref(), a, &small).unwrap();
    let known = hz_norm_estimate(y.reconstruction.as_ref(), a, &small).unwrap();
    assert!((built.slope() - known.slope()).abs() <= 0.02, "{} vs {}", built.slope(), known.slope());
    assert!((built.estimate / known.estimate - 1.0).abs() <= 1e-3);
    let full = hz_norm_estimate(y.reconstruction.as_ref(), a, &ScaleGrid::default()).unwrap().slope();
    assert!((full - a).abs() <= 0.12, "slope {full} vs ᾱ = {a}");
}
