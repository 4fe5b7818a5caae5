use proptest::prelude::*;
use schauder_core::distributions::ScaleGrid;
use schauder_core::germs::{coherence_report, homogeneity_report, make_fixture, Fixture, FixtureKind, FixtureParams, GermGrid};

fn light_grid() -> GermGrid {
    GermGrid { scales: ScaleGrid { x_points: 7, ..ScaleGrid::default() }, ..GermGrid::default() }
}

fn fixture(kind: u8) -> Fixture {
    let (kind, p) = match kind {
        0 => (FixtureKind::Constant, FixtureParams::default()),
        1 => (FixtureKind::Taylor, FixtureParams::default()),
        _ => (FixtureKind::Young, FixtureParams { regularity: -0.3, ..Default::default() }),
    };
    make_fixture(kind, &p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn homogeneity_estimate_is_monotone(kind in 0u8..3, a in -1.0..0.5f64, d in 0.01..0.8f64) {
        let f = fixture(kind);
        let r = f.germ.meta().order;
        let grid = light_grid();
        let lo = homogeneity_report(f.germ.as_ref(), a, &grid, r).unwrap().estimate;
        let hi = homogeneity_report(f.germ.as_ref(), a + d, &grid, r).unwrap().estimate;
        prop_assert!(hi >= lo * (1.0 - 1e-12), "ᾱ {a}: {lo} > {hi}");
    }

    #[test]
    fn coherence_estimate_is_monotone_in_alpha(kind in 1u8..3, a in -0.8..0.0f64, d in 0.01..0.5f64) {
        let f = fixture(kind);
        let m = f.germ.meta();
        let grid = light_grid();
        let lo = coherence_report(f.germ.as_ref(), a, m.gamma, &grid, m.order).unwrap().estimate;
        let hi = coherence_report(f.germ.as_ref(), (a + d).min(m.gamma), m.gamma, &grid, m.order).unwrap().estimate;
        prop_assert!(hi >= lo * (1.0 - 1e-12), "α {a}: {lo} > {hi}");
    }
}

#[test]
fn slopes_survive_a_larger_scale_bound() {
    for kind in 0..3 {
        let f = fixture(kind);
        let m = f.germ.meta();
        let base = GermGrid::default();
        let wide = GermGrid { scales: ScaleGrid { lambda_bar: 2.0, j_max: 9, fit_range: (3, 8), ..ScaleGrid::default() }, ..base.clone() };
        let a = homogeneity_report(f.germ.as_ref(), m.alpha_bar, &base, m.order).unwrap().slope();
        let b = homogeneity_report(f.germ.as_ref(), m.alpha_bar, &wide, m.order).unwrap().slope();
        assert!((a - b).abs() <= 0.05, "{:?}: {a} vs {b}", f.kind);
    }
}
