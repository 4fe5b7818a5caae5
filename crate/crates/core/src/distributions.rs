//! Distributions of finite order on the line, realised through their pairing
//! with (possibly convolved) scaled test functions.
//!
//! Smooth realisations pick the cheapest exact route: polynomials pair
//! through probe moments, trigonometric series through the probe's Fourier
//! transform, and grid-backed functions by quadrature. Weak derivatives move
//! onto the probe. Pointwise derivatives and Taylor polynomials are obtained
//! as limits along a dyadic schedule of mollifications.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{golden_points, loglog_fit, LinearFit};
use crate::jet;
use crate::quad;
use crate::testfn::{
    annihilating_family, plain_family, scale_center, vanishing_moment_mollifier, ScaledTestFunction, TestFunction,
};

/// A continuous linear functional on test functions, of finite order.
pub trait Distribution: Send + Sync {
    /// `f(ψ)`.
    fn pair(&self, psi: &ScaledTestFunction) -> Result<f64>;
    /// Declared order `r`.
    fn order(&self) -> usize;
    /// True when pairings only use probe moments and Fourier samples, so the
    /// probe may carry singular (non-compact quadrature) convolution factors.
    fn spectral(&self) -> bool {
        false
    }
    fn label(&self) -> String;
    /// The distribution as a smooth closed-form function, when it is one.
    fn closed_form(&self) -> Option<ClosedForm> {
        None
    }
}

/// Shared handle to a distribution.
pub type Dist = Arc<dyn Distribution>;

impl fmt::Debug for dyn Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Distribution({})", self.label())
    }
}

/// A distribution given by a smooth function with exactly computable derivatives.
pub trait PointFunction: Distribution {
    /// `f^{(j)}(y)` for `j = 0..=n`.
    fn derivs_at(&self, y: f64, n: usize) -> Vec<f64>;
    fn value_at(&self, y: f64) -> f64 {
        self.derivs_at(y, 0)[0]
    }
    /// The same function as a shared distribution handle.
    fn to_dist(&self) -> Dist;
}

// ---------------------------------------------------------------- zero

#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl Distribution for Zero {
    fn pair(&self, _: &ScaledTestFunction) -> Result<f64> {
        Ok(0.0)
    }
    fn order(&self) -> usize {
        0
    }
    fn spectral(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        "0".into()
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        Some(ClosedForm::zero())
    }
}

pub fn zero() -> Dist {
    Arc::new(Zero)
}

// ---------------------------------------------------------------- polynomials

/// `Σ_p c_p (y − center)^p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polynomial {
    pub center: f64,
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(center: f64, coeffs: Vec<f64>) -> Self {
        Polynomial { center, coeffs }
    }
    pub fn constant(c: f64) -> Self {
        Polynomial { center: 0.0, coeffs: vec![c] }
    }
    /// The normalised monomial `(y − x)^k / k!`.
    pub fn monomial(x: f64, k: usize) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = 1.0 / factorial(k);
        Polynomial { center: x, coeffs }
    }
    /// The same polynomial expanded about `c`.
    pub fn recentered(&self, c: f64) -> Self {
        let d = jet::poly(&self.coeffs, c - self.center, self.coeffs.len().saturating_sub(1));
        Polynomial { center: c, coeffs: d }
    }
    pub fn derivative(&self, k: usize) -> Self {
        let coeffs = (k..self.coeffs.len())
            .map(|p| self.coeffs[p] * factorial(p) / factorial(p - k))
            .collect();
        Polynomial { center: self.center, coeffs }
    }
    pub fn scaled(&self, a: f64) -> Self {
        Polynomial { center: self.center, coeffs: self.coeffs.iter().map(|c| a * c).collect() }
    }
    /// Sum, expanded about the centre of `self`.
    pub fn add(&self, other: &Polynomial) -> Self {
        let o = other.recentered(self.center);
        let n = self.coeffs.len().max(o.coeffs.len());
        let coeffs = (0..n)
            .map(|p| self.coeffs.get(p).copied().unwrap_or(0.0) + o.coeffs.get(p).copied().unwrap_or(0.0))
            .collect();
        Polynomial { center: self.center, coeffs }
    }
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|c| *c != 0.0)
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl Distribution for Polynomial {
    fn pair(&self, psi: &ScaledTestFunction) -> Result<f64> {
        Ok(self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(p, c)| c * psi.moment_about(self.center, p))
            .sum())
    }
    fn order(&self) -> usize {
        0
    }
    fn spectral(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        format!("poly{:?}@{}", self.coeffs, self.center)
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        Some(ClosedForm { trig: TrigSeries::new([]), poly: self.clone() })
    }
}

impl PointFunction for Polynomial {
    fn derivs_at(&self, y: f64, n: usize) -> Vec<f64> {
        crate::jet::to_derivs(&crate::jet::poly(&self.coeffs, y - self.center, n))
    }
    fn to_dist(&self) -> Dist {
        Arc::new(self.clone())
    }
}

// ---------------------------------------------------------------- trigonometric series

/// `a cos(ωy) + b sin(ωy)` with `ω ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrigTerm {
    pub freq: f64,
    pub cos_amp: f64,
    pub sin_amp: f64,
}

/// A finite trigonometric series `Σ a_j cos(ω_j y) + b_j sin(ω_j y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrigSeries {
    terms: Vec<TrigTerm>,
}

impl TrigSeries {
    /// Builds the series, merging terms of equal frequency (relative tolerance 1e-12).
    pub fn new(terms: impl IntoIterator<Item = TrigTerm>) -> Self {
        let mut merged: BTreeMap<i64, TrigTerm> = BTreeMap::new();
        for mut t in terms {
            if t.freq < 0.0 {
                t.freq = -t.freq;
                t.sin_amp = -t.sin_amp;
            }
            if t.freq == 0.0 {
                t.sin_amp = 0.0;
            }
            let key = (t.freq * 1e9).round() as i64;
            merged
                .entry(key)
                .and_modify(|e| {
                    e.cos_amp += t.cos_amp;
                    e.sin_amp += t.sin_amp;
                })
                .or_insert(t);
        }
        TrigSeries { terms: merged.into_values().filter(|t| t.cos_amp != 0.0 || t.sin_amp != 0.0).collect() }
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    pub fn max_freq(&self) -> f64 {
        self.terms.iter().map(|t| t.freq).fold(0.0, f64::max)
    }

    /// `c · self`.
    pub fn scaled(&self, c: f64) -> Self {
        TrigSeries {
            terms: self
                .terms
                .iter()
                .map(|t| TrigTerm { freq: t.freq, cos_amp: c * t.cos_amp, sin_amp: c * t.sin_amp })
                .collect(),
        }
    }

    pub fn add(&self, other: &TrigSeries) -> Self {
        TrigSeries::new(self.terms.iter().chain(other.terms.iter()).copied())
    }

    /// Exact `k`-th derivative.
    pub fn derivative(&self, k: usize) -> Self {
        let mut terms = self.terms.clone();
        for _ in 0..k {
            for t in terms.iter_mut() {
                let (a, b) = (t.cos_amp, t.sin_amp);
                t.cos_amp = b * t.freq;
                t.sin_amp = -a * t.freq;
            }
        }
        TrigSeries::new(terms)
    }

    /// Mean-free antiderivative; fails when the series has a constant term.
    pub fn antiderivative(&self) -> Result<Self> {
        if self.terms.iter().any(|t| t.freq == 0.0) {
            return invalid("the antiderivative of a constant term is not a trigonometric series");
        }
        Ok(TrigSeries::new(self.terms.iter().map(|t| TrigTerm {
            freq: t.freq,
            cos_amp: -t.sin_amp / t.freq,
            sin_amp: t.cos_amp / t.freq,
        })))
    }

    /// Exact product, expanded by the product-to-sum formulas.
    pub fn product(&self, other: &TrigSeries) -> Self {
        let mut out = Vec::with_capacity(2 * self.terms.len() * other.terms.len());
        for s in &self.terms {
            for t in &other.terms {
                let (a1, b1, a2, b2) = (s.cos_amp, s.sin_amp, t.cos_amp, t.sin_amp);
                out.push(TrigTerm {
                    freq: s.freq + t.freq,
                    cos_amp: 0.5 * (a1 * a2 - b1 * b2),
                    sin_amp: 0.5 * (b1 * a2 + a1 * b2),
                });
                out.push(TrigTerm {
                    freq: s.freq - t.freq,
                    cos_amp: 0.5 * (a1 * a2 + b1 * b2),
                    sin_amp: 0.5 * (b1 * a2 - a1 * b2),
                });
            }
        }
        TrigSeries::new(out)
    }

    /// Applies a real even Fourier multiplier `m(ω)` term by term.
    pub fn multiplied(&self, m: impl Fn(f64) -> f64) -> Self {
        TrigSeries::new(self.terms.iter().map(|t| {
            let k = m(t.freq);
            TrigTerm { freq: t.freq, cos_amp: k * t.cos_amp, sin_amp: k * t.sin_amp }
        }))
    }
}

impl Distribution for TrigSeries {
    fn pair(&self, psi: &ScaledTestFunction) -> Result<f64> {
        Ok(self
            .terms
            .iter()
            .map(|t| {
                let (re, im) = psi.fourier(t.freq);
                t.cos_amp * re + t.sin_amp * im
            })
            .sum())
    }
    fn order(&self) -> usize {
        0
    }
    fn spectral(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        format!("trig[{} terms, ω ≤ {:.1}]", self.terms.len(), self.max_freq())
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        Some(ClosedForm { trig: self.clone(), poly: Polynomial::constant(0.0) })
    }
}

impl PointFunction for TrigSeries {
    fn derivs_at(&self, y: f64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n + 1];
        for t in &self.terms {
            let (s, c) = (t.freq * y).sin_cos();
            // value and successive derivatives of a cos + b sin
            let (mut a, mut b) = (t.cos_amp, t.sin_amp);
            for slot in out.iter_mut() {
                *slot += a * c + b * s;
                let na = b * t.freq;
                let nb = -a * t.freq;
                a = na;
                b = nb;
            }
        }
        out
    }
    fn to_dist(&self) -> Dist {
        Arc::new(self.clone())
    }
}

/// Frequency ceiling `b^J ≥ 2^14` used to truncate lacunary series.
pub const LACUNARY_CEILING: f64 = 16384.0;

/// The Weierstrass-type series `Σ_{j=0}^{J} a^j cos(b^j π y)`, Hölder of order
/// `log(1/a)/log b`, truncated at the first `J` with `b^J ≥ 2^14`.
pub fn weierstrass(a: f64, b: u32) -> Result<TrigSeries> {
    let terms = (LACUNARY_CEILING.ln() / (b as f64).ln()).ceil() as usize;
    weierstrass_with_terms(a, b, terms)
}

/// As [`weierstrass`] with an explicit truncation index `J`.
pub fn weierstrass_with_terms(a: f64, b: u32, j_max: usize) -> Result<TrigSeries> {
    if !(a > 0.0 && a < 1.0) {
        return invalid(format!("Weierstrass amplitude must lie in (0,1), got {a}"));
    }
    if b < 2 {
        return invalid(format!("Weierstrass base must be an integer ≥ 2, got {b}"));
    }
    if a * (b as f64) < 1.0 {
        return invalid(format!("Weierstrass parameters need ab ≥ 1, got a={a}, b={b}"));
    }
    let bf = b as f64;
    Ok(TrigSeries::new((0..=j_max).map(|j| TrigTerm {
        freq: bf.powi(j as i32) * std::f64::consts::PI,
        cos_amp: a.powi(j as i32),
        sin_amp: 0.0,
    })))
}

// ---------------------------------------------------------------- grid functions

/// A function sampled on a uniform grid with local cubic interpolation;
/// zero outside the grid interval.
#[derive(Debug, Clone)]
pub struct GridFunction {
    lo: f64,
    hi: f64,
    values: Arc<Vec<f64>>,
}

/// Default working box and resolution for grid-backed functions.
pub const GRID_BOX: (f64, f64) = (-4.0, 4.0);
pub const GRID_POINTS: usize = 1 << 14;

impl GridFunction {
    /// Samples `f` at `n + 1` equispaced points of `[lo, hi]`.
    pub fn sample(f: impl Fn(f64) -> f64 + Sync, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || n < 4 {
            return invalid("grid needs hi > lo and at least four cells");
        }
        let h = (hi - lo) / n as f64;
        let values: Vec<f64> = (0..=n).into_par_iter().map(|i| f(lo + i as f64 * h)).collect();
        Ok(GridFunction { lo, hi, values: Arc::new(values) })
    }

    /// Samples on the default box `[−4, 4]` with `2^14` cells.
    pub fn sample_default(f: impl Fn(f64) -> f64 + Sync) -> Result<Self> {
        Self::sample(f, GRID_BOX.0, GRID_BOX.1, GRID_POINTS)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Four-point Lagrange interpolation on the cell containing `y`.
    pub fn value(&self, y: f64) -> f64 {
        if y < self.lo || y > self.hi {
            return 0.0;
        }
        let n = self.values.len() - 1;
        let h = self.spacing();
        let t = (y - self.lo) / h;
        let i = (t.floor() as isize).clamp(1, n as isize - 2) as usize;
        let s = t - i as f64;
        let v = |k: usize| self.values[k];
        let (f0, f1, f2, f3) = (v(i - 1), v(i), v(i + 1), v(i + 2));
        // nodes at −1, 0, 1, 2
        -s * (s - 1.0) * (s - 2.0) / 6.0 * f0 + (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0 * f1
            - (s + 1.0) * s * (s - 2.0) / 2.0 * f2
            + (s + 1.0) * s * (s - 1.0) / 6.0 * f3
    }
}

impl Distribution for GridFunction {
    fn pair(&self, psi: &ScaledTestFunction) -> Result<f64> {
        let (a, b) = psi.support();
        let (a, b) = (a.max(self.lo), b.min(self.hi));
        if b <= a {
            return Ok(0.0);
        }
        let width = psi.scale() * 2.0;
        let panels = ((b - a) / width * 32.0).ceil().max(((b - a) / (2.0 * self.spacing())).ceil()) as usize;
        Ok(quad::composite(a, b, panels, |y| self.value(y) * psi.eval(y)))
    }
    fn order(&self) -> usize {
        0
    }
    fn label(&self) -> String {
        format!("grid[{}..{}; {}]", self.lo, self.hi, self.values.len())
    }
}

// ---------------------------------------------------------------- closed forms

/// A trigonometric series plus a polynomial. Sums, derivatives, and the
/// action of translation-invariant kernels stay in this class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedForm {
    pub trig: TrigSeries,
    pub poly: Polynomial,
}

impl ClosedForm {
    pub fn zero() -> Self {
        ClosedForm { trig: TrigSeries::new([]), poly: Polynomial::constant(0.0) }
    }
    pub fn scaled(&self, a: f64) -> Self {
        ClosedForm { trig: self.trig.scaled(a), poly: self.poly.scaled(a) }
    }
    pub fn add(&self, other: &ClosedForm) -> Self {
        ClosedForm { trig: self.trig.add(&other.trig), poly: self.poly.add(&other.poly) }
    }
    pub fn derivative(&self, k: usize) -> Self {
        ClosedForm { trig: self.trig.derivative(k), poly: self.poly.derivative(k) }
    }
}

impl Distribution for ClosedForm {
    fn pair(&self, psi: &ScaledTestFunction) -> Result<f64> {
        Ok(self.trig.pair(psi)? + self.poly.pair(psi)?)
    }
    fn order(&self) -> usize {
        0
    }
    fn spectral(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        format!("{} + {}", self.trig.label(), self.poly.label())
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        Some(self.clone())
    }
}

impl PointFunction for ClosedForm {
    fn derivs_at(&self, y: f64, n: usize) -> Vec<f64> {
        let a = self.trig.derivs_at(y, n);
        let b = self.poly.derivs_at(y, n);
        a.iter().zip(&b).map(|(u, v)| u + v).collect()
    }
    fn to_dist(&self) -> Dist {
        Arc::new(self.clone())
    }
}

// ---------------------------------------------------------------- combinators

/// `D^k f`, paired by duality as `(−1)^k f(∂^k φ)`.
#[derive(Clone)]
pub struct WeakDerivative {
    f: Dist,
    k: usize,
}

impl Distribution for WeakDerivative {
    fn pair(&self, psi: &ScaledTestFunction) -> Result<f64> {
        if psi.available_order() < self.k {
            return Err(Error::OrderMismatch { needed: self.k, available: psi.available_order() });
        }
        let sign = if self.k % 2 == 0 { 1.0 } else { -1.0 };
        Ok(sign * self.f.pair(&psi.derivative(self.k))?)
    }
    fn order(&self) -> usize {
        self.f.order() + self.k
    }
    fn spectral(&self) -> bool {
        self.f.spectral()
    }
    fn label(&self) -> String {
        format!("D^{}({})", self.k, self.f.label())
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        self.f.closed_form().map(|c| c.derivative(self.k))
    }
}

pub fn weak_derivative(f: Dist, k: usize) -> Dist {
    if k == 0 {
        return f;
    }
    Arc::new(WeakDerivative { f, k })
}

/// `Σ c_i f_i`.
#[derive(Clone)]
pub struct LinComb {
    terms: Vec<(f64, Dist)>,
}

impl Distribution for LinComb {
    fn pair(&self, psi: &ScaledTestFunction) -> Result<f64> {
        let mut acc = 0.0;
        for (c, f) in &self.terms {
            if *c != 0.0 {
                acc += c * f.pair(psi)?;
            }
        }
        Ok(acc)
    }
    fn order(&self) -> usize {
        self.terms.iter().map(|(_, f)| f.order()).max().unwrap_or(0)
    }
    fn spectral(&self) -> bool {
        self.terms.iter().all(|(_, f)| f.spectral())
    }
    fn label(&self) -> String {
        let parts: Vec<String> = self.terms.iter().map(|(c, f)| format!("{c}·{}", f.label())).collect();
        parts.join(" + ")
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        let mut acc = ClosedForm::zero();
        for (c, f) in &self.terms {
            acc = acc.add(&f.closed_form()?.scaled(*c));
        }
        Some(acc)
    }
}

pub fn lincomb(terms: Vec<(f64, Dist)>) -> Dist {
    let terms: Vec<(f64, Dist)> = terms.into_iter().filter(|(c, _)| *c != 0.0).collect();
    if terms.is_empty() {
        return zero();
    }
    Arc::new(LinComb { terms })
}

/// `f − g`.
pub fn difference(f: Dist, g: Dist) -> Dist {
    lincomb(vec![(1.0, f), (-1.0, g)])
}

/// A distribution defined by an arbitrary pairing closure.
pub struct FnDistribution<F> {
    pairing: F,
    order: usize,
    spectral: bool,
    label: String,
}

impl<F> Distribution for FnDistribution<F>
where
    F: Fn(&ScaledTestFunction) -> Result<f64> + Send + Sync,
{
    fn pair(&self, psi: &ScaledTestFunction) -> Result<f64> {
        (self.pairing)(psi)
    }
    fn order(&self) -> usize {
        self.order
    }
    fn spectral(&self) -> bool {
        self.spectral
    }
    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Wraps a pairing closure as a distribution. `spectral` declares that the
/// closure only uses moments and Fourier samples of the probe.
pub fn from_pairing(
    label: impl Into<String>,
    order: usize,
    spectral: bool,
    pairing: impl Fn(&ScaledTestFunction) -> Result<f64> + Send + Sync + 'static,
) -> Dist {
    Arc::new(FnDistribution { pairing, order, spectral, label: label.into() })
}

// ---------------------------------------------------------------- pointwise derivatives

/// Schedule and stopping rule for [`pointwise_derivative`].
#[derive(Debug, Clone)]
pub struct DerivativeOptions {
    /// Coarsest scale `λ̄`; the schedule is `λ_n = λ̄ 2^{-n}`.
    pub lambda_bar: f64,
    /// Levels always computed (the nominal schedule `n = 0..=min_levels`).
    pub min_levels: usize,
    /// Hard cap on the schedule.
    pub max_levels: usize,
    /// Increments below `tol·max(1, |value|)` on three consecutive levels stop the schedule.
    pub tol: f64,
    /// Mollifier; defaults to [`vanishing_moment_mollifier`]`(δ)`.
    pub eta: Option<TestFunction>,
    /// Number of leading levels used to fit the decay exponent.
    pub fit_levels: usize,
}

impl Default for DerivativeOptions {
    fn default() -> Self {
        DerivativeOptions { lambda_bar: 1.0, min_levels: 10, max_levels: 52, tol: 1e-13, eta: None, fit_levels: 10 }
    }
}

/// Limit value and convergence diagnostics of `D^k f(η_x^λ)` as `λ ↓ 0`.
#[derive(Debug, Clone, Serialize)]
pub struct PointwiseDerivative {
    pub x: f64,
    pub k: usize,
    pub value: f64,
    /// `D^k f(η_x^{λ_n})` along the schedule.
    pub sequence: Vec<f64>,
    /// Fitted exponent `θ` in `|increments| ≈ C λ^θ` over the leading levels.
    pub rate: f64,
    /// Estimated remaining tail added by geometric extrapolation.
    pub tail: f64,
    pub converged: bool,
}

/// `D^k f(x) = lim_{λ↓0} D^k f(η_x^λ)` for `|k| < δ`.
pub fn pointwise_derivative(
    f: &dyn Distribution,
    x: f64,
    k: usize,
    delta: f64,
    opts: &DerivativeOptions,
) -> Result<PointwiseDerivative> {
    if (k as f64) >= delta {
        return invalid(format!("pointwise derivative of order {k} needs |k| < δ = {delta}"));
    }
    let eta = match &opts.eta {
        Some(e) => e.clone(),
        None => vanishing_moment_mollifier(delta)?,
    };
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let probe = |n: usize| -> Result<f64> {
        let lambda = opts.lambda_bar * 2f64.powi(-(n as i32));
        let psi = scale_center(&eta, x, lambda)?.derivative(k);
        Ok(sign * f.pair(&psi)?)
    };
    let mut seq = Vec::with_capacity(opts.min_levels + 8);
    for n in 0..=opts.min_levels {
        seq.push(probe(n)?);
    }
    let small = |seq: &[f64]| {
        let m = seq.len();
        let scale = seq[m - 1].abs().max(1.0);
        m >= 4 && (1..4).all(|i| (seq[m - i] - seq[m - i - 1]).abs() <= opts.tol * scale)
    };
    while !small(&seq) && seq.len() <= opts.max_levels {
        let n = seq.len();
        seq.push(probe(n)?);
    }
    let incs: Vec<f64> = seq.windows(2).map(|w| w[1] - w[0]).collect();
    let last = *seq.last().unwrap();
    let converged_plain = small(&seq);

    // geometric tail from the last few increment ratios
    let m = incs.len();
    let ratios: Vec<f64> = (m.saturating_sub(4)..m)
        .filter(|&i| i > 0 && incs[i - 1] != 0.0)
        .map(|i| (incs[i] / incs[i - 1]).abs())
        .collect();
    let r = crate::fit::median(&ratios);
    let tail = if r.is_finite() && r < 0.95 { incs[m - 1] * r / (1.0 - r) } else { f64::NAN };
    let converged = converged_plain || (tail.is_finite() && tail.abs() <= 1e-8 * last.abs().max(1.0));
    if !converged {
        return Err(Error::NonConvergent(format!(
            "increments of D^{k}f(η_x^λ) at x = {x} do not decay (last {:.3e}, ratio {:.3})",
            incs[m - 1],
            r
        )));
    }
    let tail = if converged_plain || !tail.is_finite() { 0.0 } else { tail };

    // decay exponent of the increments over the leading levels, via tail sums
    let fit_n = opts.fit_levels.min(m);
    let lambdas: Vec<f64> = (0..fit_n).map(|n| opts.lambda_bar * 2f64.powi(-(n as i32))).collect();
    let sums: Vec<f64> = (0..fit_n).map(|n| incs[n..].iter().map(|d| d.abs()).sum()).collect();
    let rate = loglog_fit(&lambdas, &sums).map(|f| f.slope).unwrap_or(f64::INFINITY);

    Ok(PointwiseDerivative { x, k, value: last + tail, sequence: seq, rate, tail, converged })
}

/// `𝒯^δ_x f = Σ_{|k|<δ} D^k f(x) (· − x)^k / k!`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaylorPolynomialValue {
    pub x: f64,
    pub delta: f64,
    /// `D^k f(x)` for `0 ≤ k < δ`.
    pub derivatives: Vec<f64>,
}

impl TaylorPolynomialValue {
    pub fn zero(x: f64, delta: f64) -> Self {
        TaylorPolynomialValue { x, delta, derivatives: Vec::new() }
    }
    pub fn eval(&self, y: f64) -> f64 {
        self.polynomial().value_at(y)
    }
    /// The polynomial in the `(y − x)^k` basis.
    pub fn polynomial(&self) -> Polynomial {
        let coeffs: Vec<f64> = self.derivatives.iter().enumerate().map(|(k, d)| d / factorial(k)).collect();
        Polynomial::new(self.x, if coeffs.is_empty() { vec![0.0] } else { coeffs })
    }
}

/// Number of integer orders `k ≥ 0` with `k < δ`.
pub fn orders_below(delta: f64) -> usize {
    if delta <= 0.0 {
        0
    } else {
        delta.ceil() as usize
    }
}

/// Taylor polynomial of `f` at `x` of order `δ` (zero for `δ ≤ 0`).
pub fn taylor_polynomial(
    f: &dyn Distribution,
    x: f64,
    delta: f64,
    opts: &DerivativeOptions,
) -> Result<TaylorPolynomialValue> {
    let n = orders_below(delta);
    let mut derivatives = Vec::with_capacity(n);
    for k in 0..n {
        derivatives.push(pointwise_derivative(f, x, k, delta, opts)?.value);
    }
    Ok(TaylorPolynomialValue { x, delta, derivatives })
}

// ---------------------------------------------------------------- Hölder–Zygmund estimates

/// Sampling grid for scaling estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleGrid {
    /// Compact `K` on which base points are drawn.
    pub compact: (f64, f64),
    pub x_points: usize,
    /// `λ = λ̄ 2^{-j}` for `j = 0..=j_max`.
    pub j_max: usize,
    pub lambda_bar: f64,
    /// Inclusive range of `j` used in slope fits.
    pub fit_range: (usize, usize),
}

impl Default for ScaleGrid {
    fn default() -> Self {
        ScaleGrid { compact: (0.0, 1.0), x_points: 17, j_max: 8, lambda_bar: 1.0, fit_range: (2, 7) }
    }
}

impl ScaleGrid {
    pub fn xs(&self) -> Vec<f64> {
        golden_points(self.compact.0, self.compact.1, self.x_points)
    }
    pub fn lambda(&self, j: usize) -> f64 {
        self.lambda_bar * 2f64.powi(-(j as i32))
    }
    pub fn lambdas(&self) -> Vec<f64> {
        (0..=self.j_max).map(|j| self.lambda(j)).collect()
    }
    /// Fits `log envelope` against `log λ` over the fit range.
    pub fn fit_envelope(&self, envelope: &[f64]) -> Option<LinearFit> {
        let (a, b) = self.fit_range;
        let l: Vec<f64> = (a..=b).map(|j| self.lambda(j)).collect();
        loglog_fit(&l, &envelope[a..=b])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HzSample {
    pub x: f64,
    pub lambda: f64,
    pub member: usize,
    pub value: f64,
}

/// Sampled `𝒵^γ` norm estimate.
#[derive(Debug, Clone, Serialize)]
pub struct HzReport {
    pub gamma: f64,
    pub order: usize,
    /// Sup of `|f(φ_x^λ)| / λ^γ` over the samples, including the scale-one term.
    pub estimate: f64,
    /// `sup_x |f(φ_x)|` over the plain family (only used when `γ ≥ 0`).
    pub zeroth_scale: f64,
    /// Per-scale maxima of `|f(φ_x^λ)|`.
    pub envelope: Vec<f64>,
    pub fit: Option<LinearFit>,
    pub samples: Vec<HzSample>,
}

impl HzReport {
    pub fn slope(&self) -> f64 {
        self.fit.map(|f| f.slope).unwrap_or(f64::NAN)
    }
}

/// Sampled `𝒵^γ` norm and scaling slope of `f` over `x ∈ K`, `λ ∈ (0, λ̄]`.
pub fn hz_norm_estimate(f: &dyn Distribution, gamma: f64, grid: &ScaleGrid) -> Result<HzReport> {
    let (order, family, zeroth_family) = if gamma < 0.0 {
        let r = (1.0 - gamma).floor() as usize;
        (r, plain_family(r), None)
    } else {
        (0, annihilating_family(0, gamma.floor() as i32), Some(plain_family(0)))
    };
    let xs = grid.xs();
    let lambdas = grid.lambdas();
    let jobs: Vec<(usize, usize, usize)> = (0..xs.len())
        .flat_map(|i| (0..lambdas.len()).flat_map(move |j| (0..8).map(move |m| (i, j, m))))
        .filter(|&(_, _, m)| m < family.len())
        .collect();
    let samples: Vec<HzSample> = jobs
        .par_iter()
        .map(|&(i, j, m)| {
            let psi = scale_center(&family[m], xs[i], lambdas[j])?;
            Ok(HzSample { x: xs[i], lambda: lambdas[j], member: m, value: f.pair(&psi)? })
        })
        .collect::<Result<_>>()?;
    let mut envelope = vec![0.0f64; lambdas.len()];
    let mut estimate = 0.0f64;
    for s in &samples {
        let j = lambdas.iter().position(|l| *l == s.lambda).unwrap();
        envelope[j] = envelope[j].max(s.value.abs());
        estimate = estimate.max(s.value.abs() / s.lambda.powf(gamma));
    }
    let mut zeroth_scale = 0.0f64;
    if let Some(fam) = zeroth_family {
        for x in &xs {
            for phi in fam.iter() {
                zeroth_scale = zeroth_scale.max(f.pair(&scale_center(phi, *x, 1.0)?)?.abs());
            }
        }
        estimate = estimate.max(zeroth_scale);
    }
    let fit = grid.fit_envelope(&envelope);
    Ok(HzReport { gamma, order, estimate, zeroth_scale, envelope, fit, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::make_bump;

    fn unit_bump() -> TestFunction {
        let b = TestFunction::bump();
        b.scaled(1.0 / b.mass())
    }

    #[test]
    fn constant_against_unit_mass() {
        let one = Polynomial::constant(1.0);
        let psi = scale_center(&unit_bump(), 0.37, 0.2).unwrap();
        assert!((one.pair(&psi).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn odd_integrand_vanishes() {
        let id = Polynomial::new(0.0, vec![0.0, 1.0]);
        let psi = scale_center(&make_bump(1), 0.0, 0.7).unwrap();
        assert!(id.pair(&psi).unwrap().abs() < 1e-10);
    }

    #[test]
    fn weierstrass_at_origin() {
        let w = weierstrass(0.5, 2).unwrap();
        let expected = 2.0 - 2f64.powi(-14);
        assert!((w.value_at(0.0) - expected).abs() < 1e-12);
        assert!((w.value_at(0.0) - w.value_at(2.0)).abs() < 1e-9);
        assert!(weierstrass(0.3, 2).is_err());
    }

    #[test]
    fn trig_pairing_matches_refined_quadrature() {
        let w = weierstrass(0.5, 2).unwrap();
        let psi = scale_center(&make_bump(0), 0.3, 0.1).unwrap();
        let fourier = w.pair(&psi).unwrap();
        let (a, b) = psi.support();
        let oracle = quad::composite(a, b, 4096, |y| w.value_at(y) * psi.eval(y));
        assert!((fourier - oracle).abs() <= 1e-6 * oracle.abs(), "{fourier} vs {oracle}");
    }

    #[test]
    fn trig_product_is_pointwise_product() {
        let f = weierstrass(0.7, 2).unwrap();
        let g = weierstrass(0.6, 3).unwrap().derivative(1);
        let p = f.product(&g);
        for y in [-0.3, 0.11, 0.77] {
            let direct = f.value_at(y) * g.value_at(y);
            assert!((p.value_at(y) - direct).abs() < 1e-8 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn derivative_and_antiderivative_invert() {
        let w = weierstrass(0.8, 2).unwrap();
        let back = w.antiderivative().unwrap().derivative(1);
        for y in [0.0, 0.3, -0.9] {
            assert!((back.value_at(y) - w.value_at(y)).abs() < 1e-12);
        }
    }

    #[test]
    fn weak_derivative_of_constant_is_zero() {
        let one: Dist = Arc::new(Polynomial::constant(1.0));
        let d = weak_derivative(one, 1);
        let psi = scale_center(&make_bump(2), 0.2, 0.3).unwrap();
        assert!(d.pair(&psi).unwrap().abs() < 1e-12);
    }

    #[test]
    fn weak_derivative_of_square() {
        let sq: Dist = Arc::new(Polynomial::new(0.0, vec![0.0, 0.0, 1.0]));
        let d = weak_derivative(sq, 1);
        let psi = scale_center(&unit_bump(), 0.4, 1e-3).unwrap();
        assert!((d.pair(&psi).unwrap() - 0.8).abs() < 1e-6);
    }

    #[test]
    fn weak_derivative_composes() {
        let w: Dist = Arc::new(weierstrass(0.6, 2).unwrap());
        let twice = weak_derivative(weak_derivative(w.clone(), 1), 1);
        let once = weak_derivative(w, 2);
        for (i, x) in golden_points(-1.0, 1.0, 20).into_iter().enumerate() {
            let psi = scale_center(&make_bump(2), x, 0.05 + 0.01 * i as f64).unwrap();
            let (a, b) = (twice.pair(&psi).unwrap(), once.pair(&psi).unwrap());
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn weak_derivative_needs_smooth_probe() {
        let rough = TestFunction::custom((-1.0, 1.0), 1, "C¹ probe", |z, n| {
            let mut d = vec![0.0; n + 1];
            d[0] = (1.0 - z * z).max(0.0).powi(2);
            d
        });
        let f = weak_derivative(Arc::new(Polynomial::constant(1.0)), 3);
        let psi = scale_center(&rough, 0.0, 1.0).unwrap();
        assert!(matches!(f.pair(&psi), Err(Error::OrderMismatch { needed: 3, available: 1 })));
    }

    #[test]
    fn grid_function_matches_trig() {
        // the grid resolves frequencies up to about 2^6·π to this accuracy
        let w = weierstrass_with_terms(0.5, 2, 6).unwrap();
        let g = GridFunction::sample_default(|y| w.value_at(y)).unwrap();
        let psi = scale_center(&make_bump(0), 0.3, 0.1).unwrap();
        let (a, b) = (g.pair(&psi).unwrap(), w.pair(&psi).unwrap());
        assert!((a - b).abs() < 1e-6 * b.abs());
    }

    #[test]
    fn pointwise_derivative_of_square() {
        let sq = Polynomial::new(0.0, vec![0.0, 0.0, 1.0]);
        let d = pointwise_derivative(&sq, 0.3, 1, 3.0, &DerivativeOptions::default()).unwrap();
        assert!((d.value - 0.6).abs() < 1e-4);
    }

    #[test]
    fn pointwise_derivative_precondition() {
        let w = weierstrass(0.5, 2).unwrap();
        assert!(pointwise_derivative(&w, 0.3, 1, 0.5, &DerivativeOptions::default()).is_err());
    }

    #[test]
    fn taylor_zero_and_linear() {
        let f = Polynomial::new(0.0, vec![1.0, 1.0]);
        let t = taylor_polynomial(&f, 0.0, -0.5, &DerivativeOptions::default()).unwrap();
        assert!(t.derivatives.is_empty());
        assert_eq!(t.eval(0.7), 0.0);
        let t = taylor_polynomial(&f, 0.0, 1.5, &DerivativeOptions::default()).unwrap();
        assert!((t.derivatives[0] - 1.0).abs() < 1e-10 && (t.derivatives[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hz_of_zero() {
        let r = hz_norm_estimate(&Zero, 0.5, &ScaleGrid::default()).unwrap();
        assert_eq!(r.estimate, 0.0);
    }
}
