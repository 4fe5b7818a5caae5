//! Schauder estimates at the level of germs.
//!
//! For a `γ`-coherent germ `F` with reconstruction `ℛF` and a `β`-regularising
//! kernel `𝖪`, the lift is
//!
//! ```text
//! (𝒦F)_x = 𝖪F_x − Σ_{k < γ+β} D^k(𝖪{F_x − ℛF})(x) (·−x)^k / k!
//! ```
//!
//! Everything is evaluated through the difference `F_x − ℛF`, so that
//! `(𝒦F)_x = 𝖪ℛF + 𝖪(F_x − ℛF) − P_x` stays meaningful when `𝖪F_x` alone is not.

use std::sync::Arc;

use dashmap::DashMap;
use serde::Serialize;

use crate::distributions::{
    factorial, lincomb, orders_below, pointwise_derivative, ClosedForm, DerivativeOptions, Dist, Distribution,
    PointFunction, Polynomial,
};
use crate::error::{invalid, Error, Result};
use crate::germs::{
    canonical_order, coherence_report, germ_lincomb, germ_minus, homogeneity_report, Germ, GermGrid, GermMeta, GermRef,
};
use crate::kernels::{integrate_distribution, DyadicDecomposition};
use crate::reconstruction::{reconstruct, reconstruction_bound_report, BoundReport, ReconstructionOptions};
use crate::testfn::{make_bump, scale_center, ScaledTestFunction, TestFunction};

const INTEGER_TOL: f64 = 1e-12;

fn is_nonneg_integer(t: f64) -> bool {
    t > -INTEGER_TOL && (t - t.round()).abs() < INTEGER_TOL
}

// ---------------------------------------------------------------- integration of germs

struct IntegratedGerm {
    decomp: DyadicDecomposition,
    f: GermRef,
    meta: GermMeta,
}

impl Germ for IntegratedGerm {
    fn at(&self, x: f64) -> Result<Dist> {
        let fx = self.f.at(x)?;
        match fx.closed_form() {
            Some(c) => Ok(Arc::new(self.decomp.apply_closed_form(&c))),
            None => integrate_distribution(&self.decomp, fx),
        }
    }
    fn meta(&self) -> GermMeta {
        self.meta
    }
    fn label(&self) -> String {
        format!("𝖪[{}]", self.f.label())
    }
}

/// `x ↦ 𝖪F_x`, with exponents shifted by `β`.
pub fn integrate_germ(decomp: &DyadicDecomposition, f: &GermRef) -> Result<GermRef> {
    let m = f.meta();
    let beta = decomp.kernel().beta;
    let meta = GermMeta::new(m.alpha_bar + beta, m.alpha + beta, m.gamma + beta, m.order)?;
    Ok(Arc::new(IntegratedGerm { decomp: decomp.clone(), f: f.clone(), meta }))
}

// ---------------------------------------------------------------- positive renormalisation

/// `D^k g(x)` for `k < δ`: exact on closed forms, otherwise by the pointwise limit.
pub(crate) fn taylor_coefficients(g: &dyn Distribution, x: f64, delta: f64, opts: &DerivativeOptions) -> Result<Vec<f64>> {
    let n = orders_below(delta);
    if n == 0 {
        return Ok(Vec::new());
    }
    if let Some(c) = g.closed_form() {
        return Ok(c.derivs_at(x, n - 1));
    }
    (0..n).map(|k| Ok(pointwise_derivative(g, x, k, delta, opts)?.value)).collect()
}

pub(crate) fn taylor_of(x: f64, derivs: &[f64]) -> Polynomial {
    let coeffs: Vec<f64> = derivs.iter().enumerate().map(|(k, d)| d / factorial(k)).collect();
    Polynomial::new(x, if coeffs.is_empty() { vec![0.0] } else { coeffs })
}

struct RenormalisedGerm {
    f: GermRef,
    gamma: f64,
    meta: GermMeta,
    opts: DerivativeOptions,
    cache: DashMap<u64, Dist>,
}

impl Germ for RenormalisedGerm {
    fn at(&self, x: f64) -> Result<Dist> {
        if let Some(d) = self.cache.get(&x.to_bits()) {
            return Ok(d.clone());
        }
        let fx = self.f.at(x)?;
        let t = taylor_of(x, &taylor_coefficients(fx.as_ref(), x, self.gamma, &self.opts)?);
        let g: Dist = match fx.closed_form() {
            Some(c) => Arc::new(ClosedForm { trig: c.trig, poly: c.poly.add(&t.scaled(-1.0)) }),
            None => lincomb(vec![(1.0, fx), (-1.0, Arc::new(t))]),
        };
        self.cache.insert(x.to_bits(), g.clone());
        Ok(g)
    }
    fn meta(&self) -> GermMeta {
        self.meta
    }
    fn label(&self) -> String {
        format!("({} − 𝒯^{})", self.f.label(), self.gamma)
    }
}

/// `G_x = F_x − 𝒯^γ_x F_x`; the identity for `γ ≤ 0`.
pub fn positive_renormalise(f: &GermRef, gamma: f64) -> Result<GermRef> {
    positive_renormalise_with(f, gamma, &DerivativeOptions::default())
}

pub fn positive_renormalise_with(f: &GermRef, gamma: f64, opts: &DerivativeOptions) -> Result<GermRef> {
    if gamma <= 0.0 {
        return Ok(f.clone());
    }
    let m = f.meta();
    let meta = GermMeta::new(gamma, m.alpha.min(0.0), gamma, m.order)?;
    Ok(Arc::new(RenormalisedGerm { f: f.clone(), gamma, meta, opts: opts.clone(), cache: DashMap::new() }))
}

/// `sup_x |D^k F_x(x)|` over `xs` for each `k < γ`.
pub fn taylor_coefficient_sup(f: &GermRef, gamma: f64, xs: &[f64], opts: &DerivativeOptions) -> Result<Vec<f64>> {
    let mut sup = vec![0.0f64; orders_below(gamma)];
    for &x in xs {
        let d = taylor_coefficients(f.at(x)?.as_ref(), x, gamma, opts)?;
        for (s, v) in sup.iter_mut().zip(d) {
            *s = s.max(v.abs());
        }
    }
    Ok(sup)
}

// ---------------------------------------------------------------- the lift

/// Per-base-point data of the lift.
#[derive(Clone)]
pub struct LiftPoint {
    /// `𝖪(F_x − ℛF) − P_x`.
    pub local: Dist,
    /// `D^k(𝖪{F_x − ℛF})(x)` for `k < γ+β`.
    pub coeffs: Vec<f64>,
}

struct LiftInner {
    source: GermRef,
    decomp: DyadicDecomposition,
    gamma: f64,
    beta: f64,
    rf: Dist,
    krf: Dist,
    meta: GermMeta,
    opts: DerivativeOptions,
    cache: DashMap<u64, LiftPoint>,
}

/// The lifted germ `𝒦^{γ,β}F`, optionally with its polynomial part perturbed.
#[derive(Clone)]
pub struct SchauderLift {
    inner: Arc<LiftInner>,
    perturbation: Option<(usize, f64)>,
}

/// Builds `𝒦^{γ,β}F` for the kernel of `decomp` (`β` is the kernel's exponent).
/// `rf` may be omitted when `γ > 0`, in which case it is reconstructed.
pub fn schauder_map(decomp: &DyadicDecomposition, f: &GermRef, rf: Option<Dist>, gamma: f64) -> Result<SchauderLift> {
    schauder_map_with(decomp, f, rf, gamma, &DerivativeOptions::default())
}

pub fn schauder_map_with(
    decomp: &DyadicDecomposition,
    f: &GermRef,
    rf: Option<Dist>,
    gamma: f64,
    opts: &DerivativeOptions,
) -> Result<SchauderLift> {
    let beta = decomp.kernel().beta;
    let m = f.meta();
    if gamma.abs() < INTEGER_TOL {
        return Err(Error::Rejected("γ = 0 is excluded".into()));
    }
    if (m.alpha + beta).abs() < INTEGER_TOL {
        return Err(Error::Rejected(format!("α + β = 0 is excluded (α = {}, β = {beta})", m.alpha)));
    }
    if is_nonneg_integer(gamma + beta) {
        return Err(Error::Rejected(format!("γ + β = {} lies in ℕ₀", gamma + beta)));
    }
    let rf = match rf {
        Some(d) => d,
        None if gamma > 0.0 => reconstruct(f, gamma, &ReconstructionOptions::default())?.distribution,
        None => return invalid("a reconstruction must be supplied when γ < 0"),
    };
    let krf: Dist = match rf.closed_form() {
        Some(c) => Arc::new(decomp.apply_closed_form(&c)),
        None => integrate_distribution(decomp, rf.clone())?,
    };
    let (ab, a) = ((m.alpha_bar + beta).min(0.0), (m.alpha + beta).min(0.0));
    let meta = GermMeta::new(ab, a, gamma + beta, canonical_order(ab, a))?;
    let inner = LiftInner {
        source: f.clone(),
        decomp: decomp.clone(),
        gamma,
        beta,
        rf,
        krf,
        meta,
        opts: opts.clone(),
        cache: DashMap::new(),
    };
    Ok(SchauderLift { inner: Arc::new(inner), perturbation: None })
}

impl SchauderLift {
    pub fn gamma(&self) -> f64 {
        self.inner.gamma
    }
    pub fn beta(&self) -> f64 {
        self.inner.beta
    }
    pub fn source(&self) -> &GermRef {
        &self.inner.source
    }
    pub fn reconstruction(&self) -> &Dist {
        &self.inner.rf
    }
    /// `𝖪ℛF`.
    pub fn integrated_reconstruction(&self) -> &Dist {
        &self.inner.krf
    }
    pub fn decomposition(&self) -> &DyadicDecomposition {
        &self.inner.decomp
    }

    /// Same lift with `P_x` replaced by `P_x + amplitude·(·−x)^k`. Shares the cache.
    pub fn perturbed(&self, k: usize, amplitude: f64) -> Self {
        SchauderLift { inner: self.inner.clone(), perturbation: (amplitude != 0.0).then_some((k, amplitude)) }
    }

    pub fn as_germ(&self) -> GermRef {
        Arc::new(self.clone())
    }

    /// The lift data at `x`, computed once.
    pub fn point(&self, x: f64) -> Result<LiftPoint> {
        if let Some(p) = self.inner.cache.get(&x.to_bits()) {
            return Ok(p.clone());
        }
        let p = self.compute_point(x)?;
        self.inner.cache.insert(x.to_bits(), p.clone());
        Ok(p)
    }

    fn compute_point(&self, x: f64) -> Result<LiftPoint> {
        let s = &*self.inner;
        let diff = lincomb(vec![(1.0, s.source.at(x)?), (-1.0, s.rf.clone())]);
        let delta = s.gamma + s.beta;
        if let Some(c) = diff.closed_form() {
            let image = s.decomp.apply_closed_form(&c);
            let coeffs = taylor_coefficients(&image, x, delta, &s.opts)?;
            let poly = image.poly.add(&taylor_of(x, &coeffs).scaled(-1.0));
            return Ok(LiftPoint { local: Arc::new(ClosedForm { trig: image.trig, poly }), coeffs });
        }
        let image = integrate_distribution(&s.decomp, diff)?;
        let coeffs = taylor_coefficients(image.as_ref(), x, delta, &s.opts)?;
        let local = lincomb(vec![(1.0, image), (-1.0, Arc::new(taylor_of(x, &coeffs)))]);
        Ok(LiftPoint { local, coeffs })
    }

    /// Cached coefficients recomputed by the pointwise limit, for cross-checking.
    pub fn coefficients_by_limit(&self, x: f64) -> Result<Vec<f64>> {
        let s = &*self.inner;
        let diff = lincomb(vec![(1.0, s.source.at(x)?), (-1.0, s.rf.clone())]);
        let image = integrate_distribution(&s.decomp, diff)?;
        let delta = s.gamma + s.beta;
        (0..orders_below(delta))
            .map(|k| Ok(pointwise_derivative(image.as_ref(), x, k, delta, &s.opts)?.value))
            .collect()
    }

    /// `(𝒦F)_x − 𝖪ℛF`, the germ whose homogeneity is the commutation statement.
    pub fn difference_germ(&self) -> GermRef {
        germ_minus(&self.as_germ(), self.inner.krf.clone())
    }
}

impl Germ for SchauderLift {
    fn at(&self, x: f64) -> Result<Dist> {
        let p = self.point(x)?;
        let mut terms = vec![(1.0, self.inner.krf.clone()), (1.0, p.local)];
        if let Some((k, a)) = self.perturbation {
            terms.push((-a, Arc::new(Polynomial::monomial(x, k).scaled(factorial(k)))));
        }
        Ok(lincomb(terms))
    }
    fn pair(&self, x: f64, psi: &ScaledTestFunction) -> Result<f64> {
        let p = self.point(x)?;
        let mut v = self.inner.krf.pair(psi)? + p.local.pair(psi)?;
        if let Some((k, a)) = self.perturbation {
            v -= a * psi.moment_about(x, k);
        }
        Ok(v)
    }
    fn meta(&self) -> GermMeta {
        self.inner.meta
    }
    fn label(&self) -> String {
        format!("𝒦^{{{},{}}}[{}]", self.inner.gamma, self.inner.beta, self.inner.source.label())
    }
}

// ---------------------------------------------------------------- reports

/// Fitted exponents of the lift next to the predicted `((ᾱ+β)∧0; (α+β)∧0, γ+β)`.
#[derive(Debug, Clone, Serialize)]
pub struct LiftFits {
    pub predicted: GermMeta,
    /// Homogeneity slope of `𝒦F − 𝖪ℛF` (predicted `γ+β`).
    pub difference_slope: f64,
    /// Diagonal coherence fit of the lift (predicted `γ+β`).
    pub gamma_fit: f64,
    /// Plane fit of the coherence exponent `α`.
    pub alpha_fit: Option<f64>,
    pub order: usize,
}

pub fn lift_fits(lift: &SchauderLift, grid: &GermGrid) -> Result<LiftFits> {
    let meta = lift.meta();
    let r = meta.order.max(lift.source().meta().order);
    let hom = homogeneity_report(lift.difference_germ().as_ref(), meta.gamma, grid, r)?;
    let coh = coherence_report(lift, meta.alpha, meta.gamma, grid, r)?;
    Ok(LiftFits {
        predicted: meta,
        difference_slope: hom.slope(),
        gamma_fit: coh.gamma_fit(),
        alpha_fit: coh.alpha_fit,
        order: r,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutationReport {
    pub gamma_beta: f64,
    pub bound: BoundReport,
    /// Largest `|ℛ(𝒦F)(ψ) − 𝖪ℛF(ψ)|` over a few probes (when `γ+β > 0`).
    pub reconstruction_agreement: Option<f64>,
    /// `slope ≥ γ+β − 0.12` and agreement within `1e-4`.
    pub pass: bool,
}

/// Checks that `𝖪ℛF` reconstructs the lift: the bound slope of
/// `(𝒦F)_x − 𝖪ℛF` at `γ+β` and, for `γ+β > 0`, direct reconstruction on probes.
pub fn commutation_residual(lift: &SchauderLift, grid: &GermGrid) -> Result<CommutationReport> {
    let gb = lift.gamma() + lift.beta();
    let germ = lift.as_germ();
    let r = lift.meta().order.max(lift.source().meta().order);
    let mut bound = reconstruction_bound_report(&germ, lift.integrated_reconstruction().clone(), gb, grid, r)?;
    bound.pass = bound.slope >= gb - 0.12;
    let agreement = if gb > 0.0 {
        let rec = reconstruct(&germ, gb, &ReconstructionOptions { depth: 7, ..Default::default() })?.distribution;
        let probes = [
            scale_center(&make_bump(0), 0.35, 0.2)?,
            scale_center(&TestFunction::poly_bump(vec![1.0, -0.6]), 0.7, 0.15)?,
        ];
        let mut worst = 0.0f64;
        for p in &probes {
            worst = worst.max((rec.pair(p)? - lift.integrated_reconstruction().pair(p)?).abs());
        }
        Some(worst)
    } else {
        None
    };
    let pass = bound.pass && agreement.map_or(true, |a| a <= 1e-4);
    Ok(CommutationReport { gamma_beta: gb, bound, reconstruction_agreement: agreement, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct CanonicityReport {
    pub k: usize,
    pub amplitude: f64,
    pub perturbed_slope: f64,
    pub unperturbed_slope: f64,
    /// Perturbed slope `≤ k + 0.15` and unperturbed slope `≥ γ+β − 0.12`.
    pub pass: bool,
}

/// Perturbs `P_x` by `amplitude·(·−x)^k` and compares reconstruction-bound slopes.
pub fn canonicity_probe(lift: &SchauderLift, k: usize, amplitude: f64, grid: &GermGrid) -> Result<CanonicityReport> {
    let gb = lift.gamma() + lift.beta();
    if !(gb > 0.0) || (k as f64) >= gb {
        return invalid(format!("canonicity probe needs k < γ+β = {gb}, got k = {k}"));
    }
    let r = lift.meta().order.max(lift.source().meta().order);
    let krf = lift.integrated_reconstruction().clone();
    let base = reconstruction_bound_report(&lift.as_germ(), krf.clone(), gb, grid, r)?.slope;
    let pert = reconstruction_bound_report(&lift.perturbed(k, amplitude).as_germ(), krf, gb, grid, r)?.slope;
    Ok(CanonicityReport {
        k,
        amplitude,
        perturbed_slope: pert,
        unperturbed_slope: base,
        pass: pert <= k as f64 + 0.15 && base >= gb - 0.12,
    })
}

/// Largest pairing gap between the lift and the two-step construction
/// `positive_renormalise(integrate_germ(F − ℛF), γ+β) + 𝖪ℛF` over `probes`.
pub fn two_step_residual(lift: &SchauderLift, probes: &[(f64, ScaledTestFunction)]) -> Result<f64> {
    let diff = germ_minus(lift.source(), lift.reconstruction().clone());
    let integrated = integrate_germ(lift.decomposition(), &diff)?;
    let renorm = positive_renormalise_with(&integrated, lift.gamma() + lift.beta(), &lift.inner.opts)?;
    let two_step = germ_lincomb(vec![(1.0, renorm)], vec![(1.0, lift.integrated_reconstruction().clone())], lift.meta());
    let mut worst = 0.0f64;
    for (x, psi) in probes {
        worst = worst.max((lift.pair(*x, psi)? - two_step.pair(*x, psi)?).abs());
    }
    Ok(worst)
}
