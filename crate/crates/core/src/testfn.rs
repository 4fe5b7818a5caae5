//! Compactly supported test functions built from the reference bump
//! `exp(-1/(1-z²))`, their scaled copies, moment-annihilating projections and
//! the two decomposition lemmas (large-scale decomposition and Taylor
//! recentring).
//!
//! Every [`TestFunction`] is an expression over polynomial multiples of the
//! bump, so derivatives of any order are exact (via jets). Moments and Fourier
//! samples are computed once by composite Gauss–Legendre quadrature and cached.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use dashmap::DashMap;
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::jet;
use crate::quad;

mod scaled;
pub use scaled::{scale_center, ConvolutionFactor, ScaledTestFunction};

/// Highest derivative order tracked by [`TestFunction::cr_norm`].
pub const R_MAX: usize = 6;
/// Number of moments cached per function (orders `0..MOMENT_DEPTH`).
pub const MOMENT_DEPTH: usize = 16;
/// Highest moment depth `c` accepted by [`annihilate_moments`].
pub const MAX_ANNIHILATION_DEPTH: i32 = 6;
/// Beyond this product of frequency and support width the Fourier transform of
/// a bump-based function is below double precision and is returned as zero.
const FOURIER_CUTOFF: f64 = 4000.0;

type CustomEval = Arc<dyn Fn(f64, usize) -> Vec<f64> + Send + Sync>;

enum Node {
    /// `p(z) · exp(-1/(1-z²))` with `p` in the monomial basis.
    PolyBump(Vec<f64>),
    /// `amp · f(s z + t)`.
    Affine { f: TestFunction, amp: f64, s: f64, t: f64 },
    /// `f^{(k)}`.
    Deriv { f: TestFunction, k: usize },
    Sum(Vec<(f64, TestFunction)>),
    /// `pref · [f(2z + h) − Σ_{k≤c} h^k/k! f^{(k)}(2z)] / h^{c+1}`.
    Remainder { f: TestFunction, h: f64, c: usize, pref: f64 },
    /// Numerically defined function with derivatives up to `max_order`.
    Custom { eval: CustomEval, max_order: usize },
}

struct Inner {
    node: Node,
    support: (f64, f64),
    label: String,
    fourier: DashMap<u64, (f64, f64)>,
    moments: OnceLock<Vec<f64>>,
    norms: OnceLock<Vec<f64>>,
}

/// A smooth compactly supported function on the line with exact derivatives.
///
/// Cloning is cheap (shared pointer); cached quadrature data is shared too.
#[derive(Clone)]
pub struct TestFunction(Arc<Inner>);

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.0.label)
            .field("support", &self.0.support)
            .finish()
    }
}

impl TestFunction {
    fn from_node(node: Node, support: (f64, f64), label: impl Into<String>) -> Self {
        TestFunction(Arc::new(Inner {
            node,
            support,
            label: label.into(),
            fourier: DashMap::new(),
            moments: OnceLock::new(),
            norms: OnceLock::new(),
        }))
    }

    /// The un-normalised reference bump `exp(-1/(1-z²))`.
    pub fn bump() -> Self {
        Self::poly_bump(vec![1.0])
    }

    /// `p(z)·exp(-1/(1-z²))` for a polynomial given by monomial coefficients.
    pub fn poly_bump(coeffs: Vec<f64>) -> Self {
        let label = format!("poly_bump{:?}", coeffs);
        Self::from_node(Node::PolyBump(coeffs), (-1.0, 1.0), label)
    }

    /// A function given by an evaluator returning derivative values `0..=n`.
    pub fn custom(
        support: (f64, f64),
        max_order: usize,
        label: impl Into<String>,
        eval: impl Fn(f64, usize) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::from_node(Node::Custom { eval: Arc::new(eval), max_order }, support, label)
    }

    /// `amp · self(s z + t)`, for `s ≠ 0`.
    pub fn affine(&self, amp: f64, s: f64, t: f64) -> Self {
        assert!(s != 0.0, "affine map needs a nonzero slope");
        let (lo, hi) = self.support();
        let a = (lo - t) / s;
        let b = (hi - t) / s;
        Self::from_node(
            Node::Affine { f: self.clone(), amp, s, t },
            (a.min(b), a.max(b)),
            format!("{}∘affine", self.label()),
        )
    }

    /// `a · self`.
    pub fn scaled(&self, a: f64) -> Self {
        self.affine(a, 1.0, 0.0)
    }

    /// The `k`-th derivative as a new test function.
    pub fn derivative(&self, k: usize) -> Self {
        if k == 0 {
            return self.clone();
        }
        Self::from_node(Node::Deriv { f: self.clone(), k }, self.support(), format!("∂^{k}{}", self.label()))
    }

    /// `Σ c_i f_i`.
    pub fn sum(terms: Vec<(f64, TestFunction)>) -> Self {
        let lo = terms.iter().map(|(_, f)| f.support().0).fold(f64::INFINITY, f64::min);
        let hi = terms.iter().map(|(_, f)| f.support().1).fold(f64::NEG_INFINITY, f64::max);
        let label = format!("sum[{}]", terms.len());
        Self::from_node(Node::Sum(terms), (lo.min(0.0), hi.max(0.0)), label)
    }

    pub fn label(&self) -> &str {
        &self.0.label
    }

    /// Interval outside of which the function vanishes identically.
    pub fn support(&self) -> (f64, f64) {
        self.0.support
    }

    /// Radius `R` with `supp ⊂ B(0, R)`.
    pub fn support_radius(&self) -> f64 {
        let (lo, hi) = self.support();
        lo.abs().max(hi.abs())
    }

    /// Coefficients of `p` when the function is `p · bump`.
    pub fn poly_coeffs(&self) -> Option<&[f64]> {
        match &self.0.node {
            Node::PolyBump(c) => Some(c),
            _ => None,
        }
    }

    /// Highest derivative order the evaluator can produce exactly.
    pub fn max_order(&self) -> usize {
        match &self.0.node {
            Node::PolyBump(_) => usize::MAX,
            Node::Affine { f, .. } => f.max_order(),
            Node::Deriv { f, k } => f.max_order().saturating_sub(*k),
            Node::Sum(t) => t.iter().map(|(_, f)| f.max_order()).min().unwrap_or(usize::MAX),
            Node::Remainder { f, c, .. } => f.max_order().saturating_sub(c + 1),
            Node::Custom { max_order, .. } => *max_order,
        }
    }

    /// Number of derivatives stacked on the underlying bumps; steepens the
    /// integrand near the support edges.
    fn derivative_depth(&self) -> usize {
        match &self.0.node {
            Node::PolyBump(_) | Node::Custom { .. } => 0,
            Node::Affine { f, .. } => f.derivative_depth(),
            Node::Deriv { f, k } => f.derivative_depth() + k,
            Node::Sum(t) => t.iter().map(|(_, f)| f.derivative_depth()).max().unwrap_or(0),
            Node::Remainder { f, c, .. } => f.derivative_depth() + c + 1,
        }
    }

    fn panels(&self, lo: f64, hi: f64) -> usize {
        let d = 1 + self.derivative_depth();
        quad::unit_panels(lo, hi) * d * d
    }

    /// Derivative values `f^{(j)}(z)` for `j = 0..=n`.
    pub fn derivs(&self, z: f64, n: usize) -> Vec<f64> {
        let (lo, hi) = self.support();
        if z < lo || z > hi {
            return vec![0.0; n + 1];
        }
        match &self.0.node {
            Node::PolyBump(c) => jet::to_derivs(&jet::mul(&jet::poly(c, z, n), &jet::bump(z, n))),
            Node::Affine { f, amp, s, t } => {
                let mut d = f.derivs(s * z + t, n);
                let mut sk = *amp;
                for v in d.iter_mut() {
                    *v *= sk;
                    sk *= s;
                }
                d
            }
            Node::Deriv { f, k } => f.derivs(z, n + k)[*k..].to_vec(),
            Node::Sum(terms) => {
                let mut out = vec![0.0; n + 1];
                for (c, f) in terms {
                    for (o, v) in out.iter_mut().zip(f.derivs(z, n)) {
                        *o += c * v;
                    }
                }
                out
            }
            Node::Remainder { f, h, c, pref } => remainder_derivs(f, *h, *c, *pref, z, n),
            Node::Custom { eval, .. } => eval(z, n),
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        match &self.0.node {
            Node::PolyBump(c) => {
                let u = 1.0 - z * z;
                if u <= 0.0 {
                    return 0.0;
                }
                let p = c.iter().rev().fold(0.0, |acc, v| acc * z + v);
                p * (-1.0 / u).exp()
            }
            Node::Affine { f, amp, s, t } => amp * f.value(s * z + t),
            _ => self.derivs(z, 0)[0],
        }
    }

    /// The `k`-th derivative at `z`.
    pub fn deriv(&self, z: f64, k: usize) -> f64 {
        self.derivs(z, k)[k]
    }

    /// Integrates `g(z)·f(z)` over the support with 64 nodes per unit length.
    pub fn integrate_against(&self, g: impl Fn(f64) -> f64) -> f64 {
        let (lo, hi) = self.support();
        quad::composite(lo, hi, self.panels(lo, hi), |z| g(z) * self.value(z))
    }

    /// Raw moments `∫ f(z) z^p dz` for `p < MOMENT_DEPTH`.
    pub fn moments(&self) -> &[f64] {
        self.0.moments.get_or_init(|| {
            let (lo, hi) = self.support();
            let mut m = vec![0.0; MOMENT_DEPTH];
            for (z, w) in quad::composite_nodes(lo, hi, self.panels(lo, hi)) {
                let v = w * self.value(z);
                let mut zp = 1.0;
                for slot in m.iter_mut() {
                    *slot += v * zp;
                    zp *= z;
                }
            }
            m
        })
    }

    pub fn moment(&self, p: usize) -> f64 {
        if p < MOMENT_DEPTH {
            return self.moments()[p];
        }
        self.integrate_against(|z| z.powi(p as i32))
    }

    /// `∫ f`, preserved by scaling.
    pub fn mass(&self) -> f64 {
        self.moment(0)
    }

    /// `(∫ f cos(ξz), ∫ f sin(ξz))`, i.e. real and imaginary parts of `∫ f e^{iξz}`.
    pub fn fourier(&self, xi: f64) -> (f64, f64) {
        if xi == 0.0 {
            return (self.mass(), 0.0);
        }
        let sign = xi.signum();
        let a = xi.abs();
        let (c, s) = self.fourier_pos(a);
        (c, sign * s)
    }

    fn fourier_pos(&self, xi: f64) -> (f64, f64) {
        let (lo, hi) = self.support();
        if xi * (hi - lo) > FOURIER_CUTOFF {
            return (0.0, 0.0);
        }
        match &self.0.node {
            Node::Affine { f, amp, s, t } => {
                // ∫ f(sz+t) e^{iξz} dz = |s|^{-1} e^{-iξt/s} F(ξ/s)
                let (fc, fs) = f.fourier(xi / s);
                let ph = -xi * t / s;
                let (cph, sph) = (ph.cos(), ph.sin());
                let k = amp / s.abs();
                (k * (cph * fc - sph * fs), k * (sph * fc + cph * fs))
            }
            Node::Deriv { f, k } => {
                // ∫ f^{(k)} e^{iξz} = (−iξ)^k F(ξ)
                let (fc, fs) = f.fourier(xi);
                let (mut re, mut im) = (1.0, 0.0);
                for _ in 0..*k {
                    let nre = im * xi;
                    let nim = -re * xi;
                    re = nre;
                    im = nim;
                }
                (re * fc - im * fs, re * fs + im * fc)
            }
            Node::Sum(terms) => {
                let mut acc = (0.0, 0.0);
                for (c, f) in terms {
                    let (a, b) = f.fourier(xi);
                    acc.0 += c * a;
                    acc.1 += c * b;
                }
                acc
            }
            _ => {
                let key = xi.to_bits();
                if let Some(v) = self.0.fourier.get(&key) {
                    return *v;
                }
                let panels = self.panels(lo, hi).max((xi * (hi - lo) / 6.0).ceil() as usize);
                let mut c = 0.0;
                let mut s = 0.0;
                for (z, w) in quad::composite_nodes(lo, hi, panels) {
                    let v = w * self.value(z);
                    c += v * (xi * z).cos();
                    s += v * (xi * z).sin();
                }
                self.0.fourier.insert(key, (c, s));
                (c, s)
            }
        }
    }

    /// Sup-norms of the derivatives of orders `0..=min(R_MAX, max_order)`.
    pub fn cr_norms(&self) -> &[f64] {
        self.0.norms.get_or_init(|| sup_norms(self, R_MAX.min(self.max_order())))
    }

    /// `‖f‖_{C^r} = max_{k≤r} ‖f^{(k)}‖_∞`.
    pub fn cr_norm(&self, r: usize) -> f64 {
        let n = self.cr_norms();
        assert!(r < n.len(), "C^{r} norm requested beyond the tracked order {}", n.len() - 1);
        n[..=r].iter().cloned().fold(0.0, f64::max)
    }

    /// The function rescaled so that `‖f‖_{C^r} = 1`.
    pub fn normalized(&self, r: usize) -> Self {
        let n = self.cr_norm(r);
        self.scaled(1.0 / n)
    }

    /// Membership in `𝔅^r`: `‖f‖_{C^r} ≤ 1 (+tol)` and support in the unit ball.
    pub fn in_class(&self, r: usize, tol: f64) -> bool {
        self.support_radius() <= 1.0 + 1e-12 && self.cr_norm(r) <= 1.0 + tol
    }

    /// Whether moments `0..=c` vanish up to `tol` (membership in `𝔅_c`).
    pub fn annihilates(&self, c: i32, tol: f64) -> bool {
        (0..=c).all(|k| self.moment(k as usize).abs() <= tol)
    }
}

fn remainder_derivs(f: &TestFunction, h: f64, c: usize, pref: f64, z: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if h.abs() >= 0.1 {
        let shifted = f.derivs(2.0 * z + h, n);
        let base = f.derivs(2.0 * z, n + c);
        let hc = h.powi(c as i32 + 1);
        for (j, o) in out.iter_mut().enumerate() {
            let mut taylor = 0.0;
            let mut hk = 1.0;
            for k in 0..=c {
                taylor += hk * base[k + j];
                hk *= h / (k + 1) as f64;
            }
            *o = pref * 2f64.powi(j as i32) * (shifted[j] - taylor) / hc;
        }
    } else {
        // integral form of the Taylor remainder, stable as h → 0
        let mut cfact = 1.0;
        for k in 1..=c {
            cfact *= k as f64;
        }
        let nodes = quad::composite_nodes(0.0, 1.0, 4);
        for (t, w) in nodes {
            let d = f.derivs(2.0 * z + t * h, c + 1 + n);
            let wt = w * (1.0 - t).powi(c as i32) / cfact;
            for (j, o) in out.iter_mut().enumerate() {
                *o += wt * d[c + 1 + j];
            }
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o *= pref * 2f64.powi(j as i32);
        }
    }
    out
}

/// Sampled sup-norms with local golden-section refinement around the largest samples.
fn sup_norms(f: &TestFunction, rmax: usize) -> Vec<f64> {
    let (lo, hi) = f.support();
    // custom nodes are quadrature-backed and far more expensive per sample
    let n = if matches!(f.0.node, Node::Custom { .. }) { 512 } else { 4096 };
    let h = (hi - lo) / n as f64;
    let samples: Vec<Vec<f64>> = (0..=n).map(|i| f.derivs(lo + i as f64 * h, rmax)).collect();
    (0..=rmax)
        .map(|k| {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| samples[b][k].abs().total_cmp(&samples[a][k].abs()));
            let mut best = samples[order[0]][k].abs();
            for &i in order.iter().take(4) {
                let a = (lo + (i as f64 - 1.0) * h).max(lo);
                let b = (lo + (i as f64 + 1.0) * h).min(hi);
                best = best.max(golden_max(|z| f.derivs(z, k)[k].abs(), a, b));
            }
            best
        })
        .collect()
}

fn golden_max(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..60 {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    gc.max(gd)
}

/// The normalised standard bump: `exp(-1/(1-z²))` divided by its `C^r` norm.
pub fn make_bump(r: usize) -> TestFunction {
    TestFunction::bump().normalized(r)
}

/// Coefficients (in `z²`) of the "gentle" polynomial weight: among even
/// polynomial multiples of the bump of degree ten it approximately minimises
/// `‖·‖_{C²}/‖·‖_{C¹}`, so normalising at consecutive orders changes
/// amplitudes as little as the unit support allows.
const GENTLE_EVEN: [f64; 6] = [1.0, -1.4234, -1.9147, 6.7882, -6.3541, 2.0960];

/// The gentle profile `p(z²)·bump` (unnormalised, positive, even).
pub fn gentle_profile() -> TestFunction {
    let mut c = vec![0.0; 2 * GENTLE_EVEN.len() - 1];
    for (i, v) in GENTLE_EVEN.iter().enumerate() {
        c[2 * i] = *v;
    }
    TestFunction::poly_bump(c)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Multiplies a polynomial multiple of the bump by another polynomial.
pub fn times_poly(f: &TestFunction, q: &[f64]) -> Option<TestFunction> {
    f.poly_coeffs().map(|p| TestFunction::poly_bump(poly_mul(p, q)))
}

/// Solves the bump-weighted Gram system for the polynomial `q` of degree `deg`
/// with `∫ q w z^l = δ_{l0}` for `l = 0..=deg`; returns `q·w`.
fn unit_mass_vanishing(weight: &TestFunction, deg: usize) -> Result<TestFunction> {
    let p = weight
        .poly_coeffs()
        .ok_or_else(|| Error::InvalidInput("mollifier weight must be a polynomial multiple of the bump".into()))?;
    let n = deg + 1;
    if 2 * deg >= MOMENT_DEPTH {
        return invalid(format!("moment system of degree {deg} exceeds the cached depth"));
    }
    let m = weight.moments();
    let g = DMatrix::from_fn(n, n, |i, j| m[i + j]);
    let sv = g.clone().singular_values();
    let cond = sv.max() / sv.min();
    if !cond.is_finite() || cond > 1e13 {
        return Err(Error::SingularMoments(cond));
    }
    let mut rhs = DVector::zeros(n);
    rhs[0] = 1.0;
    let q = g.lu().solve(&rhs).ok_or(Error::SingularMoments(f64::INFINITY))?;
    let coeffs = poly_mul(p, q.as_slice());
    Ok(TestFunction::poly_bump(coeffs))
}

/// `η` with `∫η = 1` and `∫η z^l = 0` for `1 ≤ l < δ`, supported in the unit ball,
/// obtained by a polynomial correction of the bump.
pub fn vanishing_moment_mollifier(delta: f64) -> Result<TestFunction> {
    vanishing_moment_mollifier_weighted(delta, &TestFunction::bump())
}

/// As [`vanishing_moment_mollifier`] with a caller-chosen polynomial-bump weight;
/// different weights give different admissible mollifiers.
pub fn vanishing_moment_mollifier_weighted(delta: f64, weight: &TestFunction) -> Result<TestFunction> {
    if !(delta > 0.0) {
        return invalid(format!("mollifier order must be positive, got {delta}"));
    }
    let deg = (delta.ceil() as usize).saturating_sub(1);
    unit_mass_vanishing(weight, deg)
}

/// Reference `η_c` used by moment annihilation: a polynomial correction of the
/// bump with unit mass and moments `1..=c` vanishing. Cached per depth.
pub fn annihilation_reference(c: i32) -> Result<TestFunction> {
    static CACHE: OnceLock<Mutex<HashMap<i32, TestFunction>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(f) = cache.lock().unwrap().get(&c) {
        return Ok(f.clone());
    }
    let eta = unit_mass_vanishing(&TestFunction::bump(), c.max(0) as usize)?;
    cache.lock().unwrap().insert(c, eta.clone());
    Ok(eta)
}

/// Result of a moment annihilation: the projected function and its `C^r` norms
/// (the constant `cst` with `ψ̌ ∈ cst·𝔅^r_c`).
#[derive(Debug, Clone)]
pub struct Annihilated {
    pub function: TestFunction,
    pub cst: Vec<f64>,
}

/// `ψ̌ = φ − Σ_{k≤c} (−1)^k 𝕏₀^k(φ) ∂^kη_c` with `𝕏₀^k(φ) = ∫ z^k/k! φ`.
///
/// The result has vanishing moments of orders `0..=c`; `c = −1` returns `φ`.
pub fn annihilate_moments(phi: &TestFunction, c: i32) -> Result<Annihilated> {
    if c < -1 {
        return invalid(format!("annihilation depth must be ≥ −1, got {c}"));
    }
    if c > MAX_ANNIHILATION_DEPTH {
        return invalid(format!("annihilation depth {c} exceeds the reference depth {MAX_ANNIHILATION_DEPTH}"));
    }
    if c == -1 {
        return Ok(Annihilated { function: phi.clone(), cst: phi.cr_norms().to_vec() });
    }
    let eta = annihilation_reference(c)?;
    let mut terms = vec![(1.0, phi.clone())];
    let mut fact = 1.0;
    for k in 0..=c as usize {
        if k > 0 {
            fact *= k as f64;
        }
        let xk = phi.moment(k) / fact;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        terms.push((-sign * xk, eta.derivative(k)));
    }
    let function = TestFunction::sum(terms);
    let cst = function.cr_norms().to_vec();
    Ok(Annihilated { function, cst })
}

/// Pieces of the large-scale decomposition
/// `ψ = (ψ̃^{[M]})^{2^M} + Σ_{n=0}^{M} (ψ̌^{[n]})^{2^n}`, scalings centred at 0.
#[derive(Debug, Clone)]
pub struct LargeScaleDecomposition {
    pub tilde: TestFunction,
    pub checks: Vec<TestFunction>,
    pub levels: usize,
    /// Largest `C^r` norm (r = 2) among the pieces.
    pub cst: f64,
}

impl LargeScaleDecomposition {
    /// Right-hand side of the identity at the point `z`.
    pub fn reassemble(&self, z: f64) -> f64 {
        let m = self.levels as i32;
        let big = 2f64.powi(m);
        let mut acc = self.tilde.value(z / big) / big;
        for (n, piece) in self.checks.iter().enumerate() {
            let s = 2f64.powi(n as i32);
            acc += piece.value(z / s) / s;
        }
        acc
    }
}

/// Splits `ψ` into a coarse piece at scale `2^M` and moment-annihilating pieces
/// at scales `2^n`, `n = 0..=M`, using `η = η_c` and `φ = 2η(2·) − η`.
pub fn large_scale_decompose(psi: &TestFunction, m: usize, c: i32) -> Result<LargeScaleDecomposition> {
    if psi.support_radius() > 1.0 + 1e-12 {
        return invalid("large-scale decomposition needs supp ψ ⊂ B(0,1)");
    }
    if m > 60 {
        return invalid("decomposition depth beyond 60 levels");
    }
    let check0 = annihilate_moments(psi, c)?.function;
    let mut checks = vec![check0];
    if c < 0 {
        checks.extend((1..=m).map(|_| TestFunction::sum(vec![(0.0, psi.clone())])));
        let tilde = TestFunction::sum(vec![(0.0, psi.clone())]);
        let cst = checks.iter().map(|f| f.cr_norm(2)).fold(0.0, f64::max);
        return Ok(LargeScaleDecomposition { tilde, checks, levels: m, cst });
    }
    let eta = annihilation_reference(c)?;
    let phi = TestFunction::sum(vec![(1.0, eta.affine(2.0, 2.0, 0.0)), (-1.0, eta.clone())]);
    let mut fact = 1.0;
    let xs: Vec<f64> = (0..=c as usize)
        .map(|k| {
            if k > 0 {
                fact *= k as f64;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * psi.moment(k) / fact
        })
        .collect();
    let combo = |base: &TestFunction, n: usize| {
        TestFunction::sum(
            xs.iter()
                .enumerate()
                .map(|(k, x)| (x * 2f64.powi(-((n * k) as i32)), base.derivative(k)))
                .collect(),
        )
    };
    for n in 1..=m {
        checks.push(combo(&phi, n));
    }
    let tilde = combo(&eta, m);
    let cst = checks.iter().chain(std::iter::once(&tilde)).map(|f| f.cr_norm(2)).fold(0.0, f64::max);
    Ok(LargeScaleDecomposition { tilde, checks, levels: m, cst })
}

/// The function `ψ = ψ^{[x,y,n]}` of the Taylor-remainder identity
/// `φ_x^{2^{-n}} − Σ_{k≤c} ((x−y)^k/k!)(−2^n)^k (∂^kφ)_y^{2^{-n}} = (2^n(x−y))^{c+1} ψ_y^{2^{-n+1}}`.
pub fn taylor_recenter_remainder(phi: &TestFunction, x: f64, y: f64, n: i32, c: i32) -> Result<TestFunction> {
    if c < 0 {
        return invalid("Taylor recentring needs c ≥ 0");
    }
    let scale = 2f64.powi(-n);
    if (y - x).abs() > scale * (1.0 + 1e-12) {
        return invalid(format!("|y − x| = {} exceeds 2^-n = {}", (y - x).abs(), scale));
    }
    let h = (y - x) / scale;
    let c = c as usize;
    let pref = if (c + 1) % 2 == 0 { 2.0 } else { -2.0 };
    let (lo, hi) = phi.support();
    let support = (((lo - h) / 2.0).min(lo / 2.0), ((hi - h) / 2.0).max(hi / 2.0));
    Ok(TestFunction::from_node(
        Node::Remainder { f: phi.clone(), h, c, pref },
        support,
        format!("remainder[{}; h={h:.3}, c={c}]", phi.label()),
    ))
}

/// Sup over the probe points of the Taylor-remainder identity residual.
pub fn taylor_remainder_residual(phi: &TestFunction, x: f64, y: f64, n: i32, c: i32, probes: &[f64]) -> Result<f64> {
    let psi = taylor_recenter_remainder(phi, x, y, n, c)?;
    let s = 2f64.powi(n);
    let mut worst: f64 = 0.0;
    for &w in probes {
        let mut lhs = s * phi.value(s * (w - x));
        let mut coef = 1.0;
        for k in 0..=c as usize {
            if k > 0 {
                coef *= (x - y) * (-s) / k as f64;
            }
            lhs -= coef * s * phi.deriv(s * (w - y), k);
        }
        let half = s / 2.0;
        let rhs = (s * (x - y)).powi(c + 1) * half * psi.value(half * (w - y));
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// The plain test family used for sampled seminorms at order `r` (8 members,
/// each normalised to `‖·‖_{C^r} = 1`).
pub fn plain_family(r: usize) -> Arc<Vec<TestFunction>> {
    family(r, -1)
}

/// The moment-annihilating family `𝔅^r_c` (members annihilate moments `0..=c`).
pub fn annihilating_family(r: usize, c: i32) -> Arc<Vec<TestFunction>> {
    family(r, c)
}

/// Polynomial factors applied to the gentle profile to build the family.
const FAMILY_FACTORS: [&[f64]; 6] = [
    &[1.0],
    &[1.0, 0.2],
    &[1.0, -0.2],
    &[1.0, 0.0, -0.3],
    &[1.0, 0.1, -0.3],
    &[1.0, -0.1, -0.3],
];

/// Off-centre members: the gentle profile contracted by `s` and shifted by `t`.
const FAMILY_SHIFTS: [(f64, f64); 2] = [(0.95, 0.05), (0.95, -0.05)];

fn family(r: usize, c: i32) -> Arc<Vec<TestFunction>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, i32), Arc<Vec<TestFunction>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(f) = cache.lock().unwrap().get(&(r, c)) {
        return f.clone();
    }
    let g = gentle_profile();
    let bases = FAMILY_FACTORS
        .iter()
        .map(|q| times_poly(&g, q).expect("gentle profile is a polynomial bump"))
        .chain(FAMILY_SHIFTS.iter().map(|&(s, t)| g.affine(1.0, 1.0 / s, -t / s)));
    let members: Vec<TestFunction> = bases
        .map(|base| {
            let base = if c >= 0 {
                annihilate_moments(&base, c).expect("family annihilation depth within range").function
            } else {
                base
            };
            base.normalized(r)
        })
        .collect();
    let fam = Arc::new(members);
    cache.lock().unwrap().insert((r, c), fam.clone());
    fam
}
