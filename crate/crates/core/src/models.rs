//! Models `(Π, Γ)`, modelled distributions, and the multilevel construction
//! `(Π̂, Γ̂, f̂)` that lifts a model through a regularising kernel.
//!
//! Conventions: `Γ_{xy}` is stored as a matrix with entry `(j, i)` equal to
//! `Γ^{ji}_{xy}`, so that `Π^i_y = Σ_j Π^j_x Γ^{ji}_{xy}`. Polynomial indices
//! use the normalised monomials `𝕏^k_x = (·−x)^k / k!`.

use std::sync::Arc;

use dashmap::DashMap;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{
    factorial, lincomb, orders_below, weak_derivative, ClosedForm, DerivativeOptions, Dist, Polynomial,
    TrigSeries,
};
use crate::error::{invalid, Error, Result};
use crate::fit::golden_points;
use crate::germs::{
    canonical_order, constant_germ, germ_from_fn, holder_function, homogeneity_report, rough_distribution,
    Fixture, FixtureKind, FixtureParams, Germ, GermGrid, GermMeta, GermRef,
};
use crate::kernels::{integrate_distribution, DyadicDecomposition};
use crate::reconstruction::{reconstruction_bound_report, BoundReport};
use crate::schauder::{taylor_coefficients, taylor_of, SchauderLift};
use crate::testfn::{plain_family, scale_center, ScaledTestFunction};

pub type GammaFn = Arc<dyn Fn(f64, f64) -> DMatrix<f64> + Send + Sync>;
pub type CoefficientFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Polynomials only; all identities hold to rounding.
    Polynomial,
    /// Closed-form germs (trigonometric series plus polynomials).
    ClosedForm,
    /// Germs paired by quadrature.
    Quadrature,
}

impl ModelKind {
    /// Reexpansion tolerance for this kind of model.
    pub fn tolerance(self) -> f64 {
        match self {
            ModelKind::Quadrature => 1e-5,
            _ => 1e-8,
        }
    }
}

/// A model: germs `Π^i` with homogeneities `α_i` and reexpansion maps `Γ_{xy}`.
#[derive(Clone)]
pub struct Model {
    pub labels: Vec<String>,
    pub homogeneities: Vec<f64>,
    pub germs: Vec<GermRef>,
    pub gamma: GammaFn,
    pub order: usize,
    pub kind: ModelKind,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("labels", &self.labels).field("homogeneities", &self.homogeneities).finish()
    }
}

impl Model {
    pub fn len(&self) -> usize {
        self.germs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.germs.is_empty()
    }
    pub fn gamma_at(&self, x: f64, y: f64) -> DMatrix<f64> {
        (self.gamma)(x, y)
    }
    pub fn max_homogeneity(&self) -> f64 {
        self.homogeneities.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn min_homogeneity(&self) -> f64 {
        self.homogeneities.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// The same model with `Γ^{ji}_{xy}` shifted by `delta` whenever `x ≠ y`.
    pub fn with_corrupted_entry(&self, j: usize, i: usize, delta: f64) -> Model {
        let g = self.gamma.clone();
        let mut m = self.clone();
        m.gamma = Arc::new(move |x, y| {
            let mut a = g(x, y);
            if x != y {
                a[(j, i)] += delta;
            }
            a
        });
        m
    }

    /// The same model with the diagonal entry `Γ^{ii}` replaced by `value`.
    pub fn with_diagonal(&self, i: usize, value: f64) -> Model {
        let g = self.gamma.clone();
        let mut m = self.clone();
        m.gamma = Arc::new(move |x, y| {
            let mut a = g(x, y);
            a[(i, i)] = value;
            a
        });
        m
    }
}

fn element_meta(alpha: f64, order: usize) -> GermMeta {
    GermMeta { alpha_bar: alpha, alpha, gamma: alpha, order }
}

/// `(Γ^poly)^{lk}_{xy} = (x−y)^{k−l}/(k−l)!` for `l ≤ k`, else `0`.
pub fn poly_gamma(n: usize, x: f64, y: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |l, k| if l <= k { (x - y).powi((k - l) as i32) / factorial(k - l) } else { 0.0 })
}

/// The polynomial model of level `ℓ`: `Π^k = 𝕏^k`, `α_k = k` for `k ≤ ℓ`.
pub fn polynomial_model(level: usize) -> Model {
    let n = level + 1;
    let order = canonical_order(0.0, 0.0);
    let germs = (0..n)
        .map(|k| {
            germ_from_fn(format!("𝕏^{k}"), element_meta(k as f64, order), move |x| {
                Ok(Arc::new(Polynomial::monomial(x, k)) as Dist)
            })
        })
        .collect();
    Model {
        labels: (0..n).map(|k| format!("X^{k}")).collect(),
        homogeneities: (0..n).map(|k| k as f64).collect(),
        germs,
        gamma: Arc::new(move |x, y| poly_gamma(n, x, y)),
        order,
        kind: ModelKind::Polynomial,
    }
}

/// The model `{𝟙, g}` with constant germs and `Γ = Id`; `a < 0` is the regularity of `g`.
pub fn unit_and_distribution_model(g: Dist, a: f64) -> Result<Model> {
    if !(a < 0.0) {
        return invalid(format!("the second element needs negative homogeneity, got {a}"));
    }
    let order = canonical_order(a, a);
    let closed = g.closed_form().is_some();
    let unit: Dist = Arc::new(Polynomial::constant(1.0));
    let mut one = constant_germ(unit, 0.0);
    let mut gg = constant_germ(g.clone(), a);
    // constant germs report the homogeneity of their value
    one = relabel(one, element_meta(0.0, order));
    gg = relabel(gg, element_meta(a, order));
    Ok(Model {
        labels: vec!["1".into(), g.label()],
        homogeneities: vec![0.0, a],
        germs: vec![one, gg],
        gamma: Arc::new(|_, _| DMatrix::identity(2, 2)),
        order,
        kind: if closed { ModelKind::ClosedForm } else { ModelKind::Quadrature },
    })
}

fn relabel(g: GermRef, meta: GermMeta) -> GermRef {
    crate::germs::germ_lincomb(vec![(1.0, g)], vec![], meta)
}

// ---------------------------------------------------------------- modelled distributions

/// Coefficients `f^i` of a modelled distribution of order `γ` over a model.
#[derive(Clone)]
pub struct ModelledDistribution {
    pub model: Arc<Model>,
    pub coeffs: Vec<CoefficientFn>,
    pub gamma: f64,
}

impl ModelledDistribution {
    pub fn new(model: Arc<Model>, coeffs: Vec<CoefficientFn>, gamma: f64) -> Result<Self> {
        if coeffs.len() != model.len() {
            return invalid(format!("{} coefficients for a model with {} elements", coeffs.len(), model.len()));
        }
        if !(gamma > model.max_homogeneity()) {
            return invalid(format!("order γ = {gamma} must exceed max α = {}", model.max_homogeneity()));
        }
        Ok(ModelledDistribution { model, coeffs, gamma })
    }

    pub fn zero(model: Arc<Model>, gamma: f64) -> Result<Self> {
        let n = model.len();
        Self::new(model, (0..n).map(|_| Arc::new(|_: f64| 0.0) as CoefficientFn).collect(), gamma)
    }

    pub fn values(&self, x: f64) -> Vec<f64> {
        self.coeffs.iter().map(|c| c(x)).collect()
    }

    /// `Q_{≤t} f`: keeps the components with `α_i ≤ t`. The order drops to the
    /// smallest discarded homogeneity when that is below `γ`.
    pub fn truncated(&self, t: f64) -> Result<Self> {
        let a = &self.model.homogeneities;
        let gamma = a.iter().filter(|&&ai| ai > t).fold(self.gamma, |g, &ai| g.min(ai));
        let coeffs = self
            .coeffs
            .iter()
            .zip(a)
            .map(|(c, &ai)| if ai <= t { c.clone() } else { Arc::new(|_: f64| 0.0) as CoefficientFn })
            .collect();
        Ok(ModelledDistribution { model: self.model.clone(), coeffs, gamma })
    }
}

/// The polynomial modelled distribution of `f`: `f^k = f^{(k)}` for `k ≤ ℓ`.
pub fn polynomial_modelled(f: Arc<TrigSeries>, level: usize, gamma: f64) -> Result<ModelledDistribution> {
    let model = Arc::new(polynomial_model(level));
    let coeffs = (0..=level)
        .map(|k| {
            let f = f.clone();
            Arc::new(move |x: f64| {
                use crate::distributions::PointFunction;
                f.derivs_at(x, k)[k]
            }) as CoefficientFn
        })
        .collect();
    ModelledDistribution::new(model, coeffs, gamma)
}

/// Points and offsets on which modelled-distribution norms are sampled.
#[derive(Debug, Clone, Serialize)]
pub struct NormGrid {
    pub compact: (f64, f64),
    pub x_points: usize,
    /// Offsets `±2^{-j}` for `j` in this range.
    pub offsets: (usize, usize),
}

impl Default for NormGrid {
    fn default() -> Self {
        NormGrid { compact: (0.0, 1.0), x_points: 33, offsets: (1, 10) }
    }
}

impl NormGrid {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        let xs = golden_points(self.compact.0, self.compact.1, self.x_points);
        let (a, b) = self.offsets;
        xs.iter()
            .flat_map(|&x| (a..=b).flat_map(move |j| [(x, x + 2f64.powi(-(j as i32))), (x, x - 2f64.powi(-(j as i32)))]))
            .collect()
    }
    pub fn points(&self) -> Vec<f64> {
        golden_points(self.compact.0, self.compact.1, self.x_points)
    }
}

/// The two terms of `⦀f⦀`: `sup|f^i(x)|` and the weighted reexpansion defect.
#[derive(Debug, Clone, Serialize)]
pub struct MdNorm {
    pub sup: f64,
    pub defect: f64,
    pub total: f64,
}

/// Sampled `⦀f⦀` on the compact of `grid`.
pub fn md_norm(f: &ModelledDistribution, grid: &NormGrid) -> MdNorm {
    md_distance_impl(f, None, grid)
}

/// Sampled cross-model distance `⦀f₁; f₂⦀` (coefficient and defect differences).
pub fn md_distance(f1: &ModelledDistribution, f2: &ModelledDistribution, grid: &NormGrid) -> Result<MdNorm> {
    if f1.model.homogeneities != f2.model.homogeneities {
        return invalid("distance needs models over the same index set");
    }
    Ok(md_distance_impl(f1, Some(f2), grid))
}

fn defect(f: &ModelledDistribution, x: f64, y: f64) -> Vec<f64> {
    let g = f.model.gamma_at(x, y);
    let fy = nalgebra::DVector::from_vec(f.values(y));
    let fx = f.values(x);
    let reexp = g * fy;
    reexp.iter().zip(&fx).map(|(a, b)| a - b).collect()
}

fn md_distance_impl(f1: &ModelledDistribution, f2: Option<&ModelledDistribution>, grid: &NormGrid) -> MdNorm {
    let alphas = &f1.model.homogeneities;
    let gamma = f1.gamma;
    let sup = grid
        .points()
        .iter()
        .map(|&x| {
            let a = f1.values(x);
            let b = f2.map(|f| f.values(x)).unwrap_or_else(|| vec![0.0; a.len()]);
            a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let defect_max = grid
        .pairs()
        .par_iter()
        .map(|&(x, y)| {
            let d1 = defect(f1, x, y);
            let d2 = f2.map(|f| defect(f, x, y)).unwrap_or_else(|| vec![0.0; d1.len()]);
            let h = (y - x).abs();
            d1.iter()
                .zip(&d2)
                .zip(alphas)
                .map(|((a, b), &ai)| (a - b).abs() / h.powf(gamma - ai))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    MdNorm { sup, defect: defect_max, total: sup + defect_max }
}

struct ModelledGerm {
    f: ModelledDistribution,
    meta: GermMeta,
}

impl Germ for ModelledGerm {
    fn at(&self, x: f64) -> Result<Dist> {
        let vals = self.f.values(x);
        let mut closed = Some(ClosedForm::zero());
        let mut terms = Vec::with_capacity(vals.len());
        for (c, g) in vals.iter().zip(&self.f.model.germs) {
            if *c == 0.0 {
                continue;
            }
            let d = g.at(x)?;
            closed = match (closed, d.closed_form()) {
                (Some(acc), Some(cf)) => Some(acc.add(&cf.scaled(*c))),
                _ => None,
            };
            terms.push((*c, d));
        }
        Ok(match closed {
            Some(cf) => Arc::new(cf),
            None => lincomb(terms),
        })
    }
    fn pair(&self, x: f64, psi: &ScaledTestFunction) -> Result<f64> {
        let vals = self.f.values(x);
        let mut acc = 0.0;
        for (c, g) in vals.iter().zip(&self.f.model.germs) {
            if *c != 0.0 {
                acc += c * g.pair(x, psi)?;
            }
        }
        Ok(acc)
    }
    fn meta(&self) -> GermMeta {
        self.meta
    }
    fn label(&self) -> String {
        format!("⟨f, Π⟩[{}]", self.f.model.labels.join(", "))
    }
}

/// `F_x = Σ_i f^i(x) Π^i_x`, with exponents `(min α; min α, γ)`.
pub fn germ_from_modelled(f: &ModelledDistribution) -> GermRef {
    let a = f.model.min_homogeneity();
    let meta = GermMeta { alpha_bar: a, alpha: a, gamma: f.gamma, order: f.model.order };
    Arc::new(ModelledGerm { f: f.clone(), meta })
}

// ---------------------------------------------------------------- structural reports

/// Probe triples `(x, y, ψ)` for reexpansion checks: base points, offsets
/// `±2^{-j}` and probes of the plain family at a few scales.
pub fn reexpansion_probes(order: usize, points: usize) -> Result<Vec<(f64, f64, ScaledTestFunction)>> {
    let family = plain_family(order);
    let mut out = Vec::new();
    for (n, &x) in golden_points(0.0, 1.0, points).iter().enumerate() {
        for j in 1..=4usize {
            let sign = if (n + j) % 2 == 0 { 1.0 } else { -1.0 };
            let y = x + sign * 2f64.powi(-(j as i32));
            for (m, lam) in [0.5, 0.1, 0.02].iter().enumerate() {
                let phi = &family[(n + j + m) % family.len()];
                out.push((x, y, scale_center(phi, y, *lam)?));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReexpansionReport {
    pub max_residual: f64,
    /// Relative to the largest pairing seen.
    pub max_relative: f64,
    pub probes: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// `max |Π^i_y(ψ) − Σ_j Π^j_x(ψ) Γ^{ji}_{xy}|` over the probes.
pub fn reexpansion_residual(m: &Model, probes: &[(f64, f64, ScaledTestFunction)], tolerance: f64) -> Result<ReexpansionReport> {
    let rows: Vec<(f64, f64)> = probes
        .par_iter()
        .map(|(x, y, psi)| {
            let g = m.gamma_at(*x, *y);
            let px: Vec<f64> = m.germs.iter().map(|p| p.pair(*x, psi)).collect::<Result<_>>()?;
            let mut worst = 0.0f64;
            let mut scale = 0.0f64;
            for i in 0..m.len() {
                let lhs = m.germs[i].pair(*y, psi)?;
                let rhs: f64 = (0..m.len()).map(|j| px[j] * g[(j, i)]).sum();
                worst = worst.max((lhs - rhs).abs());
                scale = scale.max(lhs.abs());
            }
            Ok((worst, scale))
        })
        .collect::<Result<_>>()?;
    let max_residual = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let scale = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(ReexpansionReport {
        max_residual,
        max_relative: max_residual / scale.max(f64::MIN_POSITIVE),
        probes: probes.len(),
        tolerance,
        pass: max_residual <= tolerance,
    })
}

/// Worst-case witness `(x, y, z)` of a property check.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyCheck {
    pub value: f64,
    pub witness: (f64, f64, f64),
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaPropertyReport {
    /// `max |Γ_{xy}Γ_{yz} − Γ_{xz}|`.
    pub group: PropertyCheck,
    /// Largest deviation from `Γ^{ii} = 1` and `Γ^{ji} = 0` (`j ≠ i`, `α_j ≥ α_i`).
    pub triangular: PropertyCheck,
    /// `‖Γ‖ = max |Γ^{ji}_{xy}| / |x−y|^{α_i−α_j}` over `α_j < α_i`.
    pub analytic: PropertyCheck,
}

impl GammaPropertyReport {
    pub fn pass(&self) -> bool {
        self.group.pass && self.triangular.pass && self.analytic.pass
    }
}

/// Sample points for the property report: triples from the compact `[0, 1]`.
pub fn property_triples(n: usize) -> Vec<(f64, f64, f64)> {
    let xs = golden_points(0.0, 1.0, n);
    let mut out = vec![(0.0, 0.3, 0.7)];
    for (a, &x) in xs.iter().enumerate() {
        out.push((x, xs[(a + 3) % n], xs[(a + 7) % n]));
        out.push((x, x + 0.01, x - 0.003));
    }
    out
}

pub fn gamma_property_report(m: &Model, triples: &[(f64, f64, f64)], group_tol: f64) -> GammaPropertyReport {
    let a = &m.homogeneities;
    let n = m.len();
    let mut group = PropertyCheck { value: 0.0, witness: (0.0, 0.0, 0.0), pass: true };
    let mut tri = group.clone();
    let mut ana = group.clone();
    for &(x, y, z) in triples {
        let (gxy, gyz, gxz) = (m.gamma_at(x, y), m.gamma_at(y, z), m.gamma_at(x, z));
        let r = (&gxy * &gyz - &gxz).amax();
        if r > group.value {
            group.value = r;
            group.witness = (x, y, z);
        }
        for (u, v, g) in [(x, y, &gxy), (y, z, &gyz), (x, z, &gxz)] {
            let h = (u - v).abs();
            for i in 0..n {
                for j in 0..n {
                    let e = g[(j, i)];
                    let dev = if i == j {
                        (e - 1.0).abs()
                    } else if a[j] >= a[i] {
                        e.abs()
                    } else {
                        0.0
                    };
                    if dev > tri.value {
                        tri.value = dev;
                        tri.witness = (u, v, f64::NAN);
                    }
                    if a[j] < a[i] && h > 0.0 {
                        let c = e.abs() / h.powf(a[i] - a[j]);
                        if c > ana.value {
                            ana.value = c;
                            ana.witness = (u, v, f64::NAN);
                        }
                    }
                }
            }
        }
    }
    group.pass = group.value <= group_tol;
    tri.pass = tri.value == 0.0;
    ana.pass = ana.value.is_finite();
    GammaPropertyReport { group, triangular: tri, analytic: ana }
}

/// Sampled `‖Π‖`: the largest homogeneity estimate of the `Π^i` at `α_i`.
pub fn model_norm(m: &Model, grid: &GermGrid) -> Result<f64> {
    let mut best = 0.0f64;
    for (g, &a) in m.germs.iter().zip(&m.homogeneities) {
        best = best.max(homogeneity_report(g.as_ref(), a, grid, m.order)?.estimate);
    }
    Ok(best)
}

/// Sampled `‖Π₁ − Π₂‖` over the same index set.
pub fn model_distance(m1: &Model, m2: &Model, grid: &GermGrid) -> Result<f64> {
    if m1.homogeneities != m2.homogeneities {
        return invalid("distance needs models over the same index set");
    }
    let mut best = 0.0f64;
    for ((g1, g2), &a) in m1.germs.iter().zip(&m2.germs).zip(&m1.homogeneities) {
        let meta = g1.meta();
        let d = crate::germs::germ_lincomb(vec![(1.0, g1.clone()), (-1.0, g2.clone())], vec![], meta);
        best = best.max(homogeneity_report(d.as_ref(), a, grid, m1.order)?.estimate);
    }
    Ok(best)
}

// ---------------------------------------------------------------- compatibility

#[derive(Debug, Clone, Serialize)]
pub struct CompatibilityEntry {
    pub index: usize,
    pub k: usize,
    pub slope: f64,
    pub estimate: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompatibilityReport {
    pub beta: f64,
    pub entries: Vec<CompatibilityEntry>,
    /// `[𝖪Π]`: the largest 0-homogeneity estimate (0 when no `α_i + β` is an integer).
    pub constant: f64,
    pub vacuous: bool,
    pub pass: bool,
}

/// For each `i` with `k = α_i + β ∈ ℕ₀`, the 0-homogeneity of `x ↦ D^k(𝖪Π^i_x)`.
pub fn compatibility_report(m: &Model, decomp: &DyadicDecomposition, grid: &GermGrid) -> Result<CompatibilityReport> {
    let beta = decomp.kernel().beta;
    let mut entries = Vec::new();
    for (i, &a) in m.homogeneities.iter().enumerate() {
        let t = a + beta;
        if t < -1e-12 || (t - t.round()).abs() > 1e-12 {
            continue;
        }
        let k = t.round() as usize;
        let g = m.germs[i].clone();
        let d = decomp.clone();
        let germ = germ_from_fn(format!("D^{k}𝖪Π^{i}"), element_meta(0.0, m.order), move |x| {
            let px = g.at(x)?;
            Ok(match px.closed_form() {
                Some(c) => Arc::new(d.apply_closed_form(&c).derivative(k)) as Dist,
                None => weak_derivative(integrate_distribution(&d, px)?, k),
            })
        });
        let rep = homogeneity_report(germ.as_ref(), 0.0, grid, m.order)?;
        let slope = if rep.estimate == 0.0 { 0.0 } else { rep.slope() };
        entries.push(CompatibilityEntry { index: i, k, slope, estimate: rep.estimate, pass: slope >= -0.12 });
    }
    let constant = entries.iter().map(|e| e.estimate).fold(0.0, f64::max);
    let vacuous = entries.is_empty();
    let pass = entries.iter().all(|e| e.pass);
    Ok(CompatibilityReport { beta, entries, constant, vacuous, pass })
}

// ---------------------------------------------------------------- the hat model

struct HatInner {
    source: Arc<Model>,
    decomp: DyadicDecomposition,
    gamma: f64,
    beta: f64,
    poly: usize,
    opts: DerivativeOptions,
    /// `A_x^{i,l} = D^l(𝖪Π^i_x)(x)` for `l < α_i + β`.
    coeffs: DashMap<u64, Arc<Vec<Vec<f64>>>>,
}

impl HatInner {
    fn image(&self, i: usize, x: f64) -> Result<Dist> {
        let px = self.source.germs[i].at(x)?;
        Ok(match px.closed_form() {
            Some(c) => Arc::new(self.decomp.apply_closed_form(&c)),
            None => integrate_distribution(&self.decomp, px)?,
        })
    }

    fn coefficients(&self, x: f64) -> Result<Arc<Vec<Vec<f64>>>> {
        if let Some(c) = self.coeffs.get(&x.to_bits()) {
            return Ok(c.clone());
        }
        let mut all = Vec::with_capacity(self.source.len());
        for (i, &a) in self.source.homogeneities.iter().enumerate() {
            let delta = a + self.beta;
            all.push(if delta > 0.0 { taylor_coefficients(self.image(i, x)?.as_ref(), x, delta, &self.opts)? } else { Vec::new() });
        }
        let all = Arc::new(all);
        self.coeffs.insert(x.to_bits(), all.clone());
        Ok(all)
    }

    fn hat_gamma(&self, x: f64, y: f64) -> Result<DMatrix<f64>> {
        let n = self.source.len();
        let k = self.poly;
        let g = self.source.gamma_at(x, y);
        let gp = poly_gamma(k, x, y);
        let (ax, ay) = (self.coefficients(x)?, self.coefficients(y)?);
        let mut m = DMatrix::zeros(n + k, n + k);
        m.view_mut((0, 0), (n, n)).copy_from(&g);
        m.view_mut((n, n), (k, k)).copy_from(&gp);
        for l in 0..k {
            for i in 0..n {
                let mut v = 0.0;
                for j in 0..n {
                    if let Some(a) = ax[j].get(l) {
                        v += a * g[(j, i)];
                    }
                }
                for (kk, a) in ay[i].iter().enumerate() {
                    v -= gp[(l, kk)] * a;
                }
                m[(n + l, i)] = v;
            }
        }
        Ok(m)
    }
}

/// `(Π̂, Γ̂, α̂)` over `Î = I ⊔ poly(γ+β)`, plus the shared coefficient cache.
#[derive(Clone)]
pub struct HatModel {
    inner: Arc<HatInner>,
    pub model: Arc<Model>,
}

impl HatModel {
    pub fn source(&self) -> &Arc<Model> {
        &self.inner.source
    }
    /// `|I|`; hat indices `|I| + k` are the polynomial ones.
    pub fn source_len(&self) -> usize {
        self.inner.source.len()
    }
    pub fn poly_len(&self) -> usize {
        self.inner.poly
    }
    pub fn gamma(&self) -> f64 {
        self.inner.gamma
    }
    pub fn beta(&self) -> f64 {
        self.inner.beta
    }
    /// `A_x^{i,l}`.
    pub fn coefficients(&self, x: f64) -> Result<Arc<Vec<Vec<f64>>>> {
        self.inner.coefficients(x)
    }
}

/// Builds the hat model for a `β`-regularising kernel and target order `γ`.
pub fn hat_model(m: &Arc<Model>, decomp: &DyadicDecomposition, gamma: f64, grid: &GermGrid) -> Result<HatModel> {
    let k = decomp.kernel();
    let beta = k.beta;
    if !(gamma > m.max_homogeneity()) {
        return invalid(format!("γ = {gamma} must exceed max α = {}", m.max_homogeneity()));
    }
    let gb = gamma + beta;
    if gb > -1e-12 && (gb - gb.round()).abs() < 1e-12 {
        return Err(Error::Rejected(format!("γ + β = {gb} lies in ℕ₀")));
    }
    if !((k.m as f64) > gb) {
        return Err(Error::Rejected(format!("kernel order m = {} must exceed γ + β = {gb}", k.m)));
    }
    if k.r < m.order {
        return Err(Error::Rejected(format!("kernel order r = {} is below the model order {}", k.r, m.order)));
    }
    let compat = compatibility_report(m, decomp, grid)?;
    if !compat.pass {
        return Err(Error::Rejected("the model is not compatible with the kernel".into()));
    }
    let poly = orders_below(gb);
    let inner = Arc::new(HatInner {
        source: m.clone(),
        decomp: decomp.clone(),
        gamma,
        beta,
        poly,
        opts: DerivativeOptions::default(),
        coeffs: DashMap::new(),
    });
    let mut labels: Vec<String> = m.labels.iter().map(|l| format!("𝖪{l}")).collect();
    labels.extend((0..poly).map(|k| format!("X^{k}")));
    let mut hom: Vec<f64> = m.homogeneities.iter().map(|a| a + beta).collect();
    hom.extend((0..poly).map(|k| k as f64));
    let mut germs: Vec<GermRef> = Vec::with_capacity(m.len() + poly);
    for i in 0..m.len() {
        let h = inner.clone();
        let a = hom[i];
        germs.push(germ_from_fn(format!("Π̂^{i}"), element_meta(a, m.order), move |x| {
            let image = h.image(i, x)?;
            let t = taylor_of(x, &h.coefficients(x)?[i]);
            Ok(match image.closed_form() {
                Some(c) => Arc::new(ClosedForm { trig: c.trig, poly: c.poly.add(&t.scaled(-1.0)) }) as Dist,
                None => lincomb(vec![(1.0, image), (-1.0, Arc::new(t))]),
            })
        }));
    }
    for k in 0..poly {
        germs.push(germ_from_fn(format!("𝕏^{k}"), element_meta(k as f64, m.order), move |x| {
            Ok(Arc::new(Polynomial::monomial(x, k)) as Dist)
        }));
    }
    let h = inner.clone();
    let gamma_fn: GammaFn = Arc::new(move |x, y| {
        h.hat_gamma(x, y).unwrap_or_else(|_| DMatrix::from_element(h.source.len() + h.poly, h.source.len() + h.poly, f64::NAN))
    });
    let kind = if m.kind == ModelKind::Quadrature { ModelKind::Quadrature } else { ModelKind::ClosedForm };
    let model = Arc::new(Model { labels, homogeneities: hom, germs, gamma: gamma_fn, order: m.order, kind });
    Ok(HatModel { inner, model })
}

/// `f̂`: `f̂^i = f^i` on `I` and, for `k < γ+β`,
/// `f̂^k(x) = Σ_{α_j+β>k} f^j(x) A_x^{j,k} − D^k(𝖪{⟨f,Π⟩_x − ℛF})(x)`.
pub fn hat_f(f: &ModelledDistribution, hm: &HatModel, rf: Dist) -> Result<ModelledDistribution> {
    if !Arc::ptr_eq(&f.model, hm.source()) {
        return invalid("hat_f needs the modelled distribution over the hat model's source");
    }
    let n = f.model.len();
    let poly = hm.poly_len();
    let gb = hm.gamma() + hm.beta();
    let germ = germ_from_modelled(f);
    let inner = hm.inner.clone();
    let cache: Arc<DashMap<u64, Arc<Vec<f64>>>> = Arc::new(DashMap::new());
    let top = {
        let f = f.clone();
        move |x: f64| -> Result<Arc<Vec<f64>>> {
            if let Some(v) = cache.get(&x.to_bits()) {
                return Ok(v.clone());
            }
            let a = inner.coefficients(x)?;
            let vals = f.values(x);
            let diff = lincomb(vec![(1.0, germ.at(x)?), (-1.0, rf.clone())]);
            let image: Dist = match diff.closed_form() {
                Some(c) => Arc::new(inner.decomp.apply_closed_form(&c)),
                None => integrate_distribution(&inner.decomp, diff)?,
            };
            let d = taylor_coefficients(image.as_ref(), x, gb, &inner.opts)?;
            let out: Vec<f64> = (0..poly)
                .map(|k| {
                    let s: f64 = (0..n).filter_map(|j| a[j].get(k).map(|c| vals[j] * c)).sum();
                    s - d[k]
                })
                .collect();
            let out = Arc::new(out);
            cache.insert(x.to_bits(), out.clone());
            Ok(out)
        }
    };
    let top = Arc::new(top);
    let mut coeffs: Vec<CoefficientFn> = f.coeffs.clone();
    for k in 0..poly {
        let t = top.clone();
        coeffs.push(Arc::new(move |x| t(x).map(|v| v[k]).unwrap_or(f64::NAN)));
    }
    ModelledDistribution::new(hm.model.clone(), coeffs, gb)
}

/// `D^k(𝖪{ℛF − ⟨Q_{≤k−β}f, Π⟩_x})(x)`, the compact form of `f̂^k(x)`.
pub fn hat_f_compact(f: &ModelledDistribution, hm: &HatModel, rf: &Dist, x: f64, k: usize) -> Result<f64> {
    let q = f.truncated(k as f64 - hm.beta())?;
    let low = germ_from_modelled(&q).at(x)?;
    let diff = lincomb(vec![(1.0, rf.clone()), (-1.0, low)]);
    let gb = hm.gamma() + hm.beta();
    let image: Dist = match diff.closed_form() {
        Some(c) => Arc::new(hm.inner.decomp.apply_closed_form(&c)),
        None => integrate_distribution(&hm.inner.decomp, diff)?,
    };
    Ok(taylor_coefficients(image.as_ref(), x, gb, &hm.inner.opts)?[k])
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub max_residual: f64,
    pub pairings: usize,
    pub pass: bool,
}

/// Probes `(x, φ_x^λ)` over base points, scales and plain-family members.
pub fn identity_probes(grid: &GermGrid, order: usize) -> Result<Vec<(f64, ScaledTestFunction)>> {
    let family = plain_family(order);
    let mut out = Vec::new();
    for x in grid.scales.xs() {
        for lam in grid.scales.lambdas() {
            for phi in family.iter().take(4) {
                out.push((x, scale_center(phi, x, lam)?));
            }
        }
    }
    Ok(out)
}

/// `max |⟨f̂, Π̂⟩_x(ψ) − (𝒦^{γ,β}⟨f,Π⟩)_x(ψ)|` over the probes.
pub fn multilevel_identity_residual(
    fhat: &ModelledDistribution,
    lift: &SchauderLift,
    probes: &[(f64, ScaledTestFunction)],
) -> Result<IdentityReport> {
    let g = germ_from_modelled(fhat);
    let worst = probes
        .par_iter()
        .map(|(x, psi)| Ok((g.pair(*x, psi)? - lift.pair(*x, psi)?).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(IdentityReport { max_residual: worst, pairings: probes.len(), pass: worst <= 1e-6 })
}

/// Bound report of `⟨f̂, Π̂⟩ − 𝖪ℛF` at `γ+β`.
pub fn multilevel_consequence(fhat: &ModelledDistribution, krf: Dist, grid: &GermGrid) -> Result<BoundReport> {
    let g = germ_from_modelled(fhat);
    let mut rep = reconstruction_bound_report(&g, krf, fhat.gamma, grid, fhat.model.order)?;
    rep.pass = rep.slope >= fhat.gamma - 0.12;
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct HatPropertyReport {
    pub report: GammaPropertyReport,
    /// `Γ̂^{jk} = 0` for `j ∈ I`, `k ∈ poly`, exactly.
    pub block_zero: bool,
    /// `Γ̂^{li} = 0` whenever `l ≥ α_i + β`, exactly.
    pub sparsity: bool,
    pub group_preserved: bool,
    pub triangular_preserved: bool,
    pub analytic_preserved: bool,
    pub pass: bool,
}

/// Checks that every property holding for `Γ` also holds for `Γ̂`.
pub fn hat_gamma_property_report(hm: &HatModel, source: &GammaPropertyReport, triples: &[(f64, f64, f64)]) -> HatPropertyReport {
    let report = gamma_property_report(&hm.model, triples, 1e-8);
    let n = hm.source_len();
    let k = hm.poly_len();
    let hom = &hm.source().homogeneities;
    let mut block_zero = true;
    let mut sparsity = true;
    for &(x, y, _) in triples {
        let g = hm.model.gamma_at(x, y);
        for j in 0..n {
            for l in 0..k {
                block_zero &= g[(j, n + l)] == 0.0;
            }
        }
        for i in 0..n {
            for l in 0..k {
                if l as f64 >= hom[i] + hm.beta() {
                    sparsity &= g[(n + l, i)] == 0.0;
                }
            }
        }
    }
    let group_preserved = !source.group.pass || report.group.pass;
    let triangular_preserved = !source.triangular.pass || report.triangular.pass;
    let analytic_preserved = !source.analytic.pass || report.analytic.pass;
    let pass = block_zero && sparsity && group_preserved && triangular_preserved && analytic_preserved;
    HatPropertyReport { report, block_zero, sparsity, group_preserved, triangular_preserved, analytic_preserved, pass }
}

// ---------------------------------------------------------------- fixtures

/// The polynomial fixture: `f ∈ C^h` in the level-0 polynomial model, order `γ = h`.
pub fn model_fixture(params: &FixtureParams) -> Result<Fixture> {
    let f = Arc::new(holder_function(params.holder)?.scaled(params.amplitude));
    let md = polynomial_modelled(f.clone(), 0, params.holder)?;
    Ok(Fixture {
        kind: FixtureKind::Model,
        germ: germ_from_modelled(&md),
        reconstruction: Arc::new((*f).clone()),
        function: Some(f),
    })
}

/// The Young fixture as a modelled distribution over `{𝟙, g}` with `f = (0, h)`.
pub fn young_modelled(params: &FixtureParams) -> Result<(ModelledDistribution, Dist)> {
    let h = Arc::new(holder_function(params.holder)?.scaled(params.amplitude));
    let g = rough_distribution(params.regularity)?;
    let rf: Dist = Arc::new(h.product(&g));
    let model = Arc::new(unit_and_distribution_model(Arc::new(g), params.regularity)?);
    let hc = h.clone();
    let coeffs: Vec<CoefficientFn> = vec![
        Arc::new(|_| 0.0),
        Arc::new(move |x| {
            use crate::distributions::PointFunction;
            hc.value_at(x)
        }),
    ];
    Ok((ModelledDistribution::new(model, coeffs, params.regularity + params.holder)?, rf))
}
