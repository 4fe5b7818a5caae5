use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use schauder_core::distributions::{weierstrass_with_terms, Dist};
use schauder_core::germs::{germ_lincomb, holder_function, homogeneity_report, FixtureParams, GermGrid};
use schauder_core::kernels::{dyadic_decompose, fractional_kernel, DyadicDecomposition};
use schauder_core::models::{
    hat_f, hat_model, md_distance, md_norm, model_distance, model_norm, polynomial_model, polynomial_modelled,
    reexpansion_probes, reexpansion_residual, young_modelled, CoefficientFn, HatModel, Model, ModelledDistribution,
    NormGrid,
};

fn decomp() -> DyadicDecomposition {
    dyadic_decompose(&fractional_kernel(0.75, 1.0, false).unwrap(), 8).unwrap()
}

fn young_hat() -> &'static (Arc<Model>, HatModel) {
    static HAT: OnceLock<(Arc<Model>, HatModel)> = OnceLock::new();
    HAT.get_or_init(|| {
        let (md, _) = young_modelled(&FixtureParams { regularity: -0.3, ..Default::default() }).unwrap();
        let hm = hat_model(&md.model, &decomp(), md.gamma, &GermGrid::default()).unwrap();
        (md.model.clone(), hm)
    })
}

fn group_defect(m: &Model, x: f64, y: f64, z: f64) -> f64 {
    let lhs = m.gamma_at(x, y) * m.gamma_at(y, z);
    let rhs = m.gamma_at(x, z);
    (lhs - &rhs).abs().max() / rhs.abs().max().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polynomial_gamma_is_a_group(level in 0usize..6, x in -1.0..2.0f64, y in -1.0..2.0f64, z in -1.0..2.0f64) {
        let m = polynomial_model(level);
        prop_assert!(group_defect(&m, x, y, z) <= 1e-12);
        let g = m.gamma_at(x, y);
        for i in 0..=level {
            prop_assert_eq!(g[(i, i)], 1.0);
            for j in 0..i {
                prop_assert_eq!(g[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn hat_gamma_is_a_group(x in 0.0..1.0f64, y in 0.0..1.0f64, z in 0.0..1.0f64) {
        let (_, hm) = young_hat();
        prop_assert!(group_defect(&hm.model, x, y, z) <= 1e-8);
    }
}

/// `{𝟙, s(· − x)}`: the level-one polynomial model with its second element scaled.
fn scaled_polynomial_model(s: f64) -> Model {
    let mut m = polynomial_model(1);
    let meta = m.germs[1].meta();
    m.germs[1] = germ_lincomb(vec![(s, m.germs[1].clone())], vec![], meta);
    m.gamma = Arc::new(move |x, y| nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, s * (x - y), 0.0, 1.0]));
    m
}

struct Side {
    md: ModelledDistribution,
    hat: ModelledDistribution,
}

fn side(model: Model, s: f64, eps: f64, gamma: f64) -> Side {
    use schauder_core::distributions::PointFunction;
    let f = holder_function(0.5).unwrap().antiderivative().unwrap();
    let bump = weierstrass_with_terms(0.5, 2, 3).unwrap().scaled(eps);
    let f = Arc::new(f.add(&bump));
    let (f0, f1) = (f.clone(), f.clone());
    let coeffs: Vec<CoefficientFn> =
        vec![Arc::new(move |x| f0.derivs_at(x, 0)[0]), Arc::new(move |x| f1.derivs_at(x, 1)[1] / s)];
    let md = ModelledDistribution::new(Arc::new(model), coeffs, gamma).unwrap();
    let hm = hat_model(&md.model, &decomp(), gamma, &GermGrid::default()).unwrap();
    let rf: Dist = f;
    let hat = hat_f(&md, &hm, rf).unwrap();
    Side { md, hat }
}

#[test]
fn enhanced_continuity_constant_is_stable() {
    let gamma = 1.4;
    let s = 1.05;
    let one = side(polynomial_model(1), 1.0, 0.0, gamma);
    let two = side(scaled_polynomial_model(s), s, 0.02, gamma);
    let probes = reexpansion_probes(1, 7).unwrap();
    assert!(reexpansion_residual(&two.md.model, &probes, 1e-12).unwrap().pass);

    let constant = |norm: &NormGrid, grid: &GermGrid| {
        let lhs = md_distance(&one.hat, &two.hat, norm).unwrap().total;
        let pi1 = model_norm(&one.md.model, grid).unwrap();
        let dpi = model_distance(&one.md.model, &two.md.model, grid).unwrap();
        let rhs = pi1 * md_distance(&one.md, &two.md, norm).unwrap().total + dpi * md_norm(&two.md, norm).total;
        assert!(lhs.is_finite() && rhs > 0.0);
        lhs / rhs
    };
    let coarse = constant(&NormGrid::default(), &GermGrid::default());
    let fine = constant(&NormGrid { x_points: 65, offsets: (1, 12), ..NormGrid::default() }, &GermGrid::fine());
    println!("enhanced continuity constant: {coarse:.4} (default grids), {fine:.4} (refined)");
    assert!(coarse > 0.0 && fine / coarse < 2.0 && coarse / fine < 2.0, "C = {coarse} vs {fine}");
}

#[test]
fn hat_preserves_the_order() {
    let (src, hm) = young_hat();
    assert_eq!(hm.model.order, src.order);
    let grid = GermGrid::default();
    for (g, &a) in hm.model.germs.iter().zip(&hm.model.homogeneities) {
        let rep = homogeneity_report(g.as_ref(), a, &grid, src.order).unwrap();
        assert!(rep.estimate.is_finite());
        let slope = rep.slope();
        // identically vanishing components have no slope
        assert!(slope.is_nan() || slope >= a - 0.15, "α = {a}, slope {slope}");
    }
}

#[test]
fn polynomial_modelled_norm_is_finite() {
    let f = Arc::new(holder_function(0.5).unwrap());
    let md = polynomial_modelled(f, 0, 0.5).unwrap();
    let n = md_norm(&md, &NormGrid::default());
    assert!(n.total.is_finite() && n.sup > 0.0);
}
