//! Translation-invariant regularising kernels `K(z) = |z|^{β−1} χ(z)` (and the
//! logarithmic variant at `β = 1`), their dyadic decomposition
//! `K = Σ_n K_n`, the defining bounds, and singular integration of
//! distributions `𝖪f(ψ) = Σ_n f(K_n^*ψ)`.
//!
//! The cutoff `χ` is a smooth step built from the primitive of the bump, equal
//! to one on `B(0, ρ/2)` and supported in `B(0, ρ)`. The partition profile is
//! `φ̃(z) = χ(z) − χ(2z)`, so `K_n(z) = K(z) φ̃(2^n z)` is supported in the
//! annulus `ρ2^{-n}/4 ≤ |z| ≤ ρ2^{-n}` and the power-law levels are exactly
//! self-similar: `K_n(z) = 2^{-nβ} 2^n K_0(2^n z)`. Fourier samples and moments
//! of every level therefore reduce to those of `K_0`.

use std::sync::{Arc, OnceLock};

use dashmap::DashMap;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::distributions::{ClosedForm, Dist, Distribution, GridFunction, Polynomial};
use crate::error::{invalid, Error, Result};
use crate::jet::{self, Jet};
use crate::quad;
use crate::testfn::{ConvolutionFactor, ScaledTestFunction, TestFunction};

/// Levels used by the logarithmic variant beyond a given level before the
/// remainder (of size `~2^{-64}`) is dropped.
const LOG_LEVELS: usize = 64;
/// Number of moments tabulated per profile.
const MOMENTS: usize = 25;

// ---------------------------------------------------------------- smooth step

struct BumpPrimitive {
    h: f64,
    table: Vec<f64>,
}

fn bump_value(s: f64) -> f64 {
    let u = 1.0 - s * s;
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

fn bump_primitive() -> &'static BumpPrimitive {
    static P: OnceLock<BumpPrimitive> = OnceLock::new();
    P.get_or_init(|| {
        let cells = 2048;
        let h = 2.0 / cells as f64;
        let mut table = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        table.push(0.0);
        for i in 0..cells {
            let a = -1.0 + i as f64 * h;
            acc += quad::gl16().integrate(a, a + h, bump_value);
            table.push(acc);
        }
        BumpPrimitive { h, table }
    })
}

impl BumpPrimitive {
    /// `B(s) = ∫_{-1}^s exp(-1/(1-u²)) du`.
    fn at(&self, s: f64) -> f64 {
        if s <= -1.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return *self.table.last().unwrap();
        }
        let i = (((s + 1.0) / self.h).floor() as usize).min(self.table.len() - 2);
        let a = -1.0 + i as f64 * self.h;
        self.table[i] + quad::gl16().integrate(a, s, bump_value)
    }
    fn total(&self) -> f64 {
        *self.table.last().unwrap()
    }
}

/// Jet of the smooth step `S(t) = B(2t−1)/B(1)` (0 for `t ≤ 0`, 1 for `t ≥ 1`).
fn step_jet(t: f64, n: usize) -> Jet {
    if t <= 0.0 {
        return jet::constant(0.0, n);
    }
    if t >= 1.0 {
        return jet::constant(1.0, n);
    }
    let p = bump_primitive();
    let mut out = jet::constant(p.at(2.0 * t - 1.0) / p.total(), n);
    if n > 0 {
        // S'(t) = 2 bump(2t − 1)/B(1)
        let b = jet::bump(2.0 * t - 1.0, n - 1);
        let mut two_k = 2.0;
        for k in 0..n {
            out[k + 1] = two_k * b[k] / p.total() / (k + 1) as f64;
            two_k *= 2.0;
        }
    }
    out
}

/// Jet in `z` of the cutoff `χ(z) = S((ρ − |z|)/(ρ/2))`.
fn chi_jet(z: f64, rho: f64, n: usize) -> Jet {
    let a = z.abs();
    if a <= 0.5 * rho {
        return jet::constant(1.0, n);
    }
    if a >= rho {
        return jet::constant(0.0, n);
    }
    let s = step_jet(2.0 - 2.0 * a / rho, n);
    let dt = if z > 0.0 { -2.0 / rho } else { 2.0 / rho };
    let mut f = 1.0;
    s.iter()
        .map(|c| {
            let v = c * f;
            f *= dt;
            v
        })
        .collect()
}

/// Jet in `z` of `g(s z)` from the jet of `g` at `s z`.
fn rescale_jet(mut j: Jet, s: f64) -> Jet {
    let mut f = 1.0;
    for c in j.iter_mut() {
        *c *= f;
        f *= s;
    }
    j
}

/// Jet of the partition profile `φ̃(s z) = χ(s z) − χ(2 s z)`.
fn partition_jet(z: f64, s: f64, rho: f64, n: usize) -> Jet {
    let a = rescale_jet(chi_jet(s * z, rho, n), s);
    let b = rescale_jet(chi_jet(2.0 * s * z, rho, n), 2.0 * s);
    a.iter().zip(&b).map(|(x, y)| x - y).collect()
}

fn mirror(mut j: Jet, negative: bool) -> Jet {
    if negative {
        for (k, c) in j.iter_mut().enumerate() {
            if k % 2 == 1 {
                *c = -*c;
            }
        }
    }
    j
}

// ---------------------------------------------------------------- kernel

/// A translation-invariant `β`-regularising kernel of order `(m, r)` with range `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularKernel {
    pub beta: f64,
    pub rho: f64,
    pub log_variant: bool,
    /// Order in the first slot.
    pub m: usize,
    /// Order in the second slot.
    pub r: usize,
}

/// `K(z) = |z|^{β−1} χ(z)` for `0 < β ≤ 1`, or `log(1 + |z|^{-1}) χ(z)` when
/// `log_variant` is set (which requires `β = 1`). Orders default to `(4, 4)`.
pub fn fractional_kernel(beta: f64, rho: f64, log_variant: bool) -> Result<SingularKernel> {
    if !(beta > 0.0) {
        return invalid(format!("kernel exponent β must be positive, got {beta}"));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return invalid(format!("kernel range ρ must be positive, got {rho}"));
    }
    if log_variant && beta != 1.0 {
        return invalid("the logarithmic kernel is only defined for β = d = 1");
    }
    if !log_variant && beta > 1.0 {
        return invalid(format!("the power-law kernel needs 0 < β ≤ d = 1, got {beta}"));
    }
    Ok(SingularKernel { beta, rho, log_variant, m: 4, r: 4 })
}

impl SingularKernel {
    pub fn with_orders(mut self, m: usize, r: usize) -> Self {
        self.m = m;
        self.r = r;
        self
    }

    /// Jet of the radial profile (`|z|^{β−1}` or `log(1+1/|z|)`) at `z ≠ 0`.
    fn profile_jet(&self, z: f64, n: usize) -> Jet {
        let a = z.abs();
        let j = if self.log_variant {
            let ln1 = jet::ln(&jet::variable(1.0 + a, n));
            let ln0 = jet::ln(&jet::variable(a, n));
            ln1.iter().zip(&ln0).map(|(p, q)| p - q).collect()
        } else {
            jet::powf(a, self.beta - 1.0, n)
        };
        mirror(j, z < 0.0)
    }

    /// `K^{(j)}(z)` for `j = 0..=n`, `z ≠ 0`.
    pub fn derivs(&self, z: f64, n: usize) -> Vec<f64> {
        if z.abs() >= self.rho {
            return vec![0.0; n + 1];
        }
        jet::to_derivs(&jet::mul(&self.profile_jet(z, n), &chi_jet(z, self.rho, n)))
    }

    pub fn value(&self, z: f64) -> f64 {
        if z == 0.0 {
            return f64::INFINITY;
        }
        self.derivs(z, 0)[0]
    }

    /// `(m+1)^{-1}` weights of the logarithmic decomposition.
    fn level_weight_jet(&self, level: usize, z: f64, n: usize) -> Jet {
        if !self.log_variant {
            return partition_jet(z, 2f64.powi(level as i32), self.rho, n);
        }
        // only the two annuli around |z| contribute
        let a = z.abs();
        let mut out = jet::constant(0.0, n);
        if a >= self.rho * 2f64.powi(-(level as i32)) || a == 0.0 {
            return out;
        }
        let top = (self.rho / a).log2().floor() as i64;
        for m in [top - 2, top - 1, top, top + 1] {
            if m < level as i64 {
                continue;
            }
            let p = partition_jet(z, 2f64.powi(m as i32), self.rho, n);
            let w = 1.0 / (m + 1) as f64;
            for (o, v) in out.iter_mut().zip(&p) {
                *o += w * v;
            }
        }
        out
    }

    /// `K_n^{(j)}(z)` for `j = 0..=k`.
    pub fn level_derivs(&self, level: usize, z: f64, k: usize) -> Vec<f64> {
        if z == 0.0 || z.abs() >= self.rho * 2f64.powi(-(level as i32)) {
            return vec![0.0; k + 1];
        }
        let w = self.level_weight_jet(level, z, k);
        if w.iter().all(|c| *c == 0.0) {
            return vec![0.0; k + 1];
        }
        jet::to_derivs(&jet::mul(&self.profile_jet(z, k), &w))
    }
}

// ---------------------------------------------------------------- decomposition

struct Inner {
    kernel: SingularKernel,
    n_max: usize,
    /// `(u, w·p(u))` on `[ρ/4, ρ]` keyed by `(piece, panels)`; piece 0 is `K_0`
    /// in the power case and `log(1 + 2^m/u) φ̃(u)` for piece `m` otherwise.
    nodes: DashMap<(usize, usize), Arc<Vec<(f64, f64)>>>,
    piece_ft: DashMap<(usize, u64), f64>,
    piece_moments: DashMap<usize, Arc<Vec<f64>>>,
    levels: DashMap<usize, Arc<KernelLevel>>,
    full: OnceLock<Arc<FullKernel>>,
}

/// The decomposition `K = Σ_n K_n` with cached level data. Cloning is cheap.
#[derive(Clone)]
pub struct DyadicDecomposition(Arc<Inner>);

impl std::fmt::Debug for DyadicDecomposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DyadicDecomposition").field("kernel", &self.0.kernel).field("n_max", &self.0.n_max).finish()
    }
}

/// Builds the dyadic decomposition with default truncation level `n_max ≥ 4`.
pub fn dyadic_decompose(kernel: &SingularKernel, n_max: usize) -> Result<DyadicDecomposition> {
    if n_max < 4 {
        return invalid(format!("dyadic decomposition needs N_max ≥ 4, got {n_max}"));
    }
    Ok(DyadicDecomposition(Arc::new(Inner {
        kernel: *kernel,
        n_max,
        nodes: DashMap::new(),
        piece_ft: DashMap::new(),
        piece_moments: DashMap::new(),
        levels: DashMap::new(),
        full: OnceLock::new(),
    })))
}

impl Inner {
    fn piece_value(&self, piece: usize, u: f64) -> f64 {
        let k = &self.kernel;
        let phi = partition_jet(u, 1.0, k.rho, 0)[0];
        if phi == 0.0 {
            return 0.0;
        }
        if k.log_variant {
            (1.0 + 2f64.powi(piece as i32) / u).ln() * phi
        } else {
            u.powf(k.beta - 1.0) * phi
        }
    }

    fn piece_nodes(&self, piece: usize, panels: usize) -> Arc<Vec<(f64, f64)>> {
        if let Some(v) = self.nodes.get(&(piece, panels)) {
            return v.clone();
        }
        let rho = self.kernel.rho;
        let v: Vec<(f64, f64)> = quad::composite_nodes(0.25 * rho, rho, panels)
            .into_iter()
            .map(|(u, w)| (u, w * self.piece_value(piece, u)))
            .collect();
        let v = Arc::new(v);
        self.nodes.insert((piece, panels), v.clone());
        v
    }

    /// `∫ p(u) e^{iξu} du` over both half-annuli (real, `p` even).
    fn piece_fourier(&self, piece: usize, xi: f64) -> f64 {
        let xi = xi.abs();
        let rho = self.kernel.rho;
        if xi * rho > 12000.0 {
            return 0.0;
        }
        let key = (piece, xi.to_bits());
        if let Some(v) = self.piece_ft.get(&key) {
            return *v;
        }
        let panels = ((xi * 0.75 * rho / 6.0).ceil() as usize).max(32).next_power_of_two();
        let nodes = self.piece_nodes(piece, panels);
        let v = 2.0 * nodes.iter().map(|(u, wk)| wk * (xi * u).cos()).sum::<f64>();
        self.piece_ft.insert(key, v);
        v
    }

    /// `∫ p(u) u^q du` over both half-annuli, `q < MOMENTS`.
    fn piece_moments(&self, piece: usize) -> Arc<Vec<f64>> {
        if let Some(v) = self.piece_moments.get(&piece) {
            return v.clone();
        }
        let nodes = self.piece_nodes(piece, 64);
        let m: Vec<f64> = (0..MOMENTS)
            .map(|q| if q % 2 == 1 { 0.0 } else { 2.0 * nodes.iter().map(|(u, wk)| wk * u.powi(q as i32)).sum::<f64>() })
            .collect();
        let m = Arc::new(m);
        self.piece_moments.insert(piece, m.clone());
        m
    }

    /// `Σ_{n ≥ from} μ_{n,q}`-type sums are assembled from these per-annulus pieces:
    /// the annulus `2^{-m}[ρ/4, ρ]` carries weight `w_m` and the profile piece.
    fn annulus_fourier(&self, m: usize, xi: f64) -> f64 {
        let s = 2f64.powi(-(m as i32));
        if self.kernel.log_variant {
            s * self.piece_fourier(m, xi * s)
        } else {
            s.powf(self.kernel.beta) * self.piece_fourier(0, xi * s)
        }
    }

    fn annulus_moment(&self, m: usize, q: usize) -> f64 {
        let s = 2f64.powi(-(m as i32));
        if self.kernel.log_variant {
            s.powi(1 + q as i32) * self.piece_moments(m)[q]
        } else {
            s.powf(self.kernel.beta + q as f64) * self.piece_moments(0)[q]
        }
    }

    fn annulus_nodes(&self, m: usize, panels: usize) -> Vec<(f64, f64)> {
        let s = 2f64.powi(-(m as i32));
        let (piece, amp) = if self.kernel.log_variant { (m, s) } else { (0, s.powf(self.kernel.beta)) };
        self.piece_nodes(piece, panels)
            .iter()
            .flat_map(|&(u, wk)| [(s * u, amp * wk), (-s * u, amp * wk)])
            .collect()
    }
}

impl DyadicDecomposition {
    pub fn kernel(&self) -> &SingularKernel {
        &self.0.kernel
    }

    pub fn n_max(&self) -> usize {
        self.0.n_max
    }

    /// The level `K_n`.
    pub fn level(&self, n: usize) -> Arc<KernelLevel> {
        if let Some(l) = self.0.levels.get(&n) {
            return l.clone();
        }
        let l = Arc::new(KernelLevel {
            inner: self.0.clone(),
            n,
            nodes: OnceLock::new(),
            ft: DashMap::new(),
            moments: OnceLock::new(),
        });
        self.0.levels.insert(n, l.clone());
        l
    }

    /// The whole kernel `K` as a convolution factor.
    pub fn full(&self) -> Arc<FullKernel> {
        self.0
            .full
            .get_or_init(|| {
                Arc::new(FullKernel { inner: self.0.clone(), nodes: OnceLock::new(), ft: DashMap::new(), moments: OnceLock::new() })
            })
            .clone()
    }

    /// `Σ_{n ≤ N} K_n(z)`.
    pub fn partial_sum(&self, z: f64, big_n: usize) -> f64 {
        (0..=big_n).map(|n| self.0.kernel.level_derivs(n, z, 0)[0]).sum()
    }

    /// Fourier multiplier `K̂(ω) = ∫ K(z) e^{iωz} dz` of the full kernel.
    pub fn multiplier(&self, omega: f64) -> f64 {
        self.full().fourier(omega)
    }

    /// `𝖪` applied exactly: trigonometric terms pick up the multiplier and
    /// `𝖪p = Σ_q M_q p^{(q)}/q!` for polynomials (`M_q` the even moments of `K`).
    pub fn apply_closed_form(&self, c: &ClosedForm) -> ClosedForm {
        let full = self.full();
        let trig = c.trig.multiplied(|w| full.fourier(w));
        let mut poly = Polynomial::new(c.poly.center, vec![0.0]);
        let deg = c.poly.degree().unwrap_or(0);
        let mut fact = 1.0;
        for q in 0..=deg {
            if q > 0 {
                fact *= q as f64;
            }
            if q % 2 == 0 {
                poly = poly.add(&c.poly.derivative(q).scaled(full.moment(q) / fact));
            }
        }
        ClosedForm { trig, poly }
    }

    /// `Σ_{n > big_n} ∫ K_n(z) z^q dz`.
    pub fn tail_moment(&self, big_n: usize, q: usize) -> f64 {
        if q % 2 == 1 {
            return 0.0;
        }
        let inner = &self.0;
        if inner.kernel.log_variant {
            (big_n + 1..big_n + 1 + LOG_LEVELS).map(|n| self.level(n).moment(q)).sum()
        } else {
            let e = inner.kernel.beta + q as f64;
            inner.piece_moments(0)[q] * 2f64.powf(-(big_n as f64 + 1.0) * e) / (1.0 - 2f64.powf(-e))
        }
    }
}

/// One level `K_n` of the decomposition, usable as a convolution factor.
pub struct KernelLevel {
    inner: Arc<Inner>,
    n: usize,
    nodes: OnceLock<Vec<(f64, f64)>>,
    ft: DashMap<u64, f64>,
    moments: OnceLock<Vec<f64>>,
}

impl KernelLevel {
    pub fn index(&self) -> usize {
        self.n
    }
    pub fn kernel(&self) -> &SingularKernel {
        &self.inner.kernel
    }
    /// `K_n^{(j)}(z)`, `j = 0..=k`.
    pub fn derivs(&self, z: f64, k: usize) -> Vec<f64> {
        self.inner.kernel.level_derivs(self.n, z, k)
    }
    pub fn value(&self, z: f64) -> f64 {
        self.derivs(z, 0)[0]
    }
    /// Annuli `2^{-m}[ρ/4, ρ]` carrying this level, with the weight of each.
    fn annuli(&self) -> Vec<(usize, f64)> {
        if self.inner.kernel.log_variant {
            (self.n..self.n + LOG_LEVELS).map(|m| (m, 1.0 / (m + 1) as f64)).collect()
        } else {
            vec![(self.n, 1.0)]
        }
    }
    /// Radial intervals `[a, b]` (positive side) on which the level is smooth.
    pub fn shells(&self) -> Vec<(f64, f64)> {
        let rho = self.inner.kernel.rho;
        let top = rho * 2f64.powi(-(self.n as i32));
        if self.inner.kernel.log_variant {
            (0..40).map(|j| (top * 2f64.powi(-(j as i32) - 1), top * 2f64.powi(-(j as i32)))).collect()
        } else {
            vec![(0.25 * top, top)]
        }
    }
}

impl ConvolutionFactor for KernelLevel {
    fn radius(&self) -> f64 {
        self.inner.kernel.rho * 2f64.powi(-(self.n as i32))
    }
    fn weighted_nodes(&self) -> &[(f64, f64)] {
        self.nodes.get_or_init(|| {
            let panels = if self.inner.kernel.log_variant { 8 } else { 64 };
            self.annuli()
                .into_iter()
                .take(40)
                .flat_map(|(m, w)| self.inner.annulus_nodes(m, panels).into_iter().map(move |(z, v)| (z, w * v)))
                .collect()
        })
    }
    fn fourier(&self, xi: f64) -> f64 {
        let inner = &self.inner;
        if !inner.kernel.log_variant {
            return inner.annulus_fourier(self.n, xi);
        }
        let key = xi.abs().to_bits();
        if let Some(v) = self.ft.get(&key) {
            return *v;
        }
        let v = self.annuli().into_iter().map(|(m, w)| w * inner.annulus_fourier(m, xi)).sum();
        self.ft.insert(key, v);
        v
    }
    fn moment(&self, q: usize) -> f64 {
        if q >= MOMENTS {
            return 0.0;
        }
        self.moments.get_or_init(|| {
            (0..MOMENTS)
                .map(|q| self.annuli().into_iter().map(|(m, w)| w * self.inner.annulus_moment(m, q)).sum())
                .collect()
        })[q]
    }
    fn label(&self) -> String {
        format!("K_{}", self.n)
    }
}

/// The full kernel `K = Σ_n K_n` as a convolution factor (singular at 0).
pub struct FullKernel {
    inner: Arc<Inner>,
    nodes: OnceLock<Vec<(f64, f64)>>,
    ft: DashMap<u64, f64>,
    moments: OnceLock<Vec<f64>>,
}

impl ConvolutionFactor for FullKernel {
    fn radius(&self) -> f64 {
        self.inner.kernel.rho
    }
    fn weighted_nodes(&self) -> &[(f64, f64)] {
        self.nodes.get_or_init(|| (0..48).flat_map(|m| self.inner.annulus_nodes(m, 8)).collect())
    }
    fn fourier(&self, xi: f64) -> f64 {
        let xi = xi.abs();
        let key = xi.to_bits();
        if let Some(v) = self.ft.get(&key) {
            return *v;
        }
        let inner = &self.inner;
        let k = inner.kernel;
        let v = if k.log_variant {
            (0..LOG_LEVELS + 8).map(|m| inner.annulus_fourier(m, xi)).sum()
        } else {
            // levels until the annulus is far inside a wavelength, then the
            // closed-form geometric tail of the even Taylor expansion
            let mut acc = 0.0;
            let mut n = 0usize;
            while xi * k.rho * 2f64.powi(-(n as i32)) > 1e-2 {
                acc += inner.annulus_fourier(n, xi);
                n += 1;
            }
            let star = inner.piece_moments(0);
            let mut fact = 1.0;
            for q in (0..=8).step_by(2) {
                if q > 0 {
                    fact *= ((q - 1) * q) as f64;
                }
                let e = k.beta + q as f64;
                let sign = if (q / 2) % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * xi.powi(q as i32) * star[q] / fact * 2f64.powf(-(n as f64) * e) / (1.0 - 2f64.powf(-e));
            }
            acc
        };
        self.ft.insert(key, v);
        v
    }
    fn moment(&self, q: usize) -> f64 {
        if q >= MOMENTS {
            return 0.0;
        }
        self.moments.get_or_init(|| {
            let inner = &self.inner;
            (0..MOMENTS)
                .map(|q| {
                    if inner.kernel.log_variant {
                        (0..LOG_LEVELS + 8).map(|m| inner.annulus_moment(m, q)).sum()
                    } else {
                        let e = inner.kernel.beta + q as f64;
                        inner.piece_moments(0)[q] / (1.0 - 2f64.powf(-e))
                    }
                })
                .collect()
        })[q]
    }
    fn label(&self) -> String {
        "K".into()
    }
}

// ---------------------------------------------------------------- singular integration

/// `𝖪f`, paired as `Σ_n f(K_n^*ψ)`.
pub struct KernelImage {
    decomp: DyadicDecomposition,
    f: Dist,
}

impl KernelImage {
    pub fn source(&self) -> &Dist {
        &self.f
    }

    /// Truncation level for a probe of scale `λ`.
    fn truncation(&self, psi: &ScaledTestFunction) -> usize {
        let rho = self.decomp.kernel().rho;
        let fine = (rho / psi.scale()).log2().ceil().max(0.0) as usize + 8;
        self.decomp.n_max().max(fine)
    }

    fn series_pair(&self, psi: &ScaledTestFunction) -> Result<f64> {
        let big_n = self.truncation(psi);
        let terms = kernel_series_terms(&self.decomp, self.f.as_ref(), psi, big_n)?;
        // asymptotic range: annulus well inside the probe
        let rho = self.decomp.kernel().rho;
        let start = (rho / psi.scale()).log2().ceil().max(0.0) as usize + 2;
        let scaled: Vec<f64> = (start..=big_n)
            .map(|n| terms[n].abs() / self.decomp.level(n).moment(0).abs().max(f64::MIN_POSITIVE))
            .collect();
        if scaled.len() >= 3 {
            let first = scaled[0].max(1e-300);
            if scaled.iter().any(|s| *s > 8.0 * first && *s > 1e-12) {
                return Err(Error::DivergenceSuspected(format!(
                    "|f(K_n^*ψ)|/∫K_n grows from {:.3e} to {:.3e} over levels {start}..{big_n}",
                    scaled[0],
                    scaled.iter().cloned().fold(0.0, f64::max)
                )));
            }
        }
        let mut acc: f64 = terms.iter().sum();
        let mut fact = 1.0;
        for q in [0usize, 2, 4] {
            if q > 0 {
                fact *= ((q - 1) * q) as f64;
            }
            let t = self.decomp.tail_moment(big_n, q);
            if psi.available_order() >= q {
                acc += t / fact * self.f.pair(&psi.derivative(q))?;
            }
        }
        Ok(acc)
    }
}

impl Distribution for KernelImage {
    fn pair(&self, psi: &ScaledTestFunction) -> Result<f64> {
        if self.f.spectral() {
            return self.f.pair(&psi.convolve(self.decomp.full()));
        }
        self.series_pair(psi)
    }
    fn order(&self) -> usize {
        self.decomp.kernel().r
    }
    fn spectral(&self) -> bool {
        self.f.spectral()
    }
    fn label(&self) -> String {
        format!("𝖪({})", self.f.label())
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        Some(self.decomp.apply_closed_form(&self.f.closed_form()?))
    }
}

/// The terms `f(K_n^*ψ)` for `n = 0..=levels`.
pub fn kernel_series_terms(
    decomp: &DyadicDecomposition,
    f: &dyn Distribution,
    psi: &ScaledTestFunction,
    levels: usize,
) -> Result<Vec<f64>> {
    (0..=levels).map(|n| f.pair(&psi.convolve(decomp.level(n)))).collect()
}

/// `𝖪f` as a lazily paired distribution of order `r`.
pub fn integrate_distribution(decomp: &DyadicDecomposition, f: Dist) -> Result<Dist> {
    if f.order() > decomp.kernel().r {
        return Err(Error::OrderMismatch { needed: f.order(), available: decomp.kernel().r });
    }
    Ok(Arc::new(KernelImage { decomp: decomp.clone(), f }))
}

/// `K_n^*ψ` sampled on a uniform grid over its support.
pub fn adjoint_apply(level: &Arc<KernelLevel>, psi: &ScaledTestFunction) -> Result<GridFunction> {
    let conv = psi.convolve(level.clone());
    let (a, b) = conv.support();
    GridFunction::sample(|y| conv.eval(y), a, b, 1024)
}

// ---------------------------------------------------------------- bounds report

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `sup |∂₁^k ∂₂^l K_n| / 2^{(1−β+k+l)n}`.
    Derivative,
    /// `|∫ (y−x)^l ∂₂^k K_n(x,y) dx| / 2^{−βn}`; for `l < k` the integral must
    /// vanish and is reported relative to `2^{(k−l−β)n}`.
    Moment,
    /// Distance of `x ↦ ∫ K_n(x,y) y^k dy` from a degree-`k` polynomial.
    PolynomialPreservation,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub kind: BoundKind,
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsOptions {
    /// Inclusive level range; the first level fixes the reference constants.
    pub levels: (usize, usize),
    /// Highest derivative orders `(m, r)` probed.
    pub orders: (usize, usize),
    pub compact: (f64, f64),
}

impl Default for BoundsOptions {
    fn default() -> Self {
        BoundsOptions { levels: (2, 10), orders: (2, 2), compact: (0.0, 1.0) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelBoundsReport {
    pub rows: Vec<BoundRow>,
    /// `c_n = max` of the derivative and `l ≥ k` moment ratios at level `n`.
    pub level_constants: Vec<(usize, f64)>,
    /// `max c_n / min c_n` over the level range.
    pub stability: f64,
    /// Largest `|∫(y−x)^l ∂₂^k K_n dx|` with `l < k`.
    pub max_vanishing_moment: f64,
    pub max_polynomial_residual: f64,
    pub pass: bool,
}

fn level_nodes(level: &KernelLevel, panels: usize) -> Vec<(f64, f64)> {
    level
        .shells()
        .into_iter()
        .flat_map(|(a, b)| quad::composite_nodes(a, b, panels).into_iter().flat_map(|(z, w)| [(z, w), (-z, w)]))
        .collect()
}

/// Samples the defining bounds of the kernel on each level of the range.
pub fn kernel_bounds_report(decomp: &DyadicDecomposition, opts: &BoundsOptions) -> KernelBoundsReport {
    let k = *decomp.kernel();
    let (n0, n1) = opts.levels;
    let (mo, ro) = opts.orders;
    let mut rows = Vec::new();
    let mut reference: std::collections::HashMap<(usize, usize, u8), f64> = Default::default();
    let mut max_vanishing: f64 = 0.0;
    let mut max_poly: f64 = 0.0;
    for n in n0..=n1 {
        let level = decomp.level(n);
        let top = level.radius();
        let bottom = if k.log_variant { top * 2f64.powi(-8) } else { 0.25 * top };
        let samples: Vec<f64> = (0..=1200).map(|i| bottom + (top - bottom) * i as f64 / 1200.0).collect();
        let jmax = mo + ro.max(mo);
        let sups: Vec<f64> = (0..=jmax)
            .map(|j| samples.iter().map(|z| level.derivs(*z, j)[j].abs()).fold(0.0, f64::max))
            .collect();
        let nodes = level_nodes(&level, 256);
        let jets: Vec<Vec<f64>> = nodes.iter().map(|(z, _)| level.derivs(*z, ro)).collect();
        for kk in 0..=mo {
            for l in 0..=ro {
                let ratio = sups[kk + l] / 2f64.powf((1.0 - k.beta + (kk + l) as f64) * n as f64);
                let key = (kk, l, 0u8);
                let r0 = *reference.entry(key).or_insert(ratio);
                let pass = ratio <= 2.0 * r0 && ratio >= 0.5 * r0;
                rows.push(BoundRow { n, k: kk, l, kind: BoundKind::Derivative, ratio, bound: 2.0 * r0, pass });
            }
        }
        for kk in 0..=ro {
            for l in 0..=ro {
                // ∫ (y−x)^l ∂₂^k K_n(x−y) dx = ∫ (−z)^l (−1)^k K_n^{(k)}(z) dz
                let sign = if (kk + l) % 2 == 0 { 1.0 } else { -1.0 };
                let integral: f64 =
                    sign * nodes.iter().zip(&jets).map(|((z, w), d)| w * z.powi(l as i32) * d[kk]).sum::<f64>();
                if l < kk {
                    // measured against the natural size 2^{(k−l−β)n} of the integrand
                    let rel = integral.abs() / 2f64.powf((kk as f64 - l as f64 - k.beta) * n as f64);
                    max_vanishing = max_vanishing.max(rel);
                    rows.push(BoundRow {
                        n,
                        k: kk,
                        l,
                        kind: BoundKind::Moment,
                        ratio: rel,
                        bound: 1e-10,
                        pass: rel <= 1e-10,
                    });
                } else {
                    let ratio = integral.abs() / 2f64.powf(-k.beta * n as f64);
                    let key = (kk, l, 1u8);
                    let r0 = *reference.entry(key).or_insert(ratio);
                    let bound = 2.0 * r0.max(1e-300);
                    rows.push(BoundRow { n, k: kk, l, kind: BoundKind::Moment, ratio, bound, pass: ratio <= bound });
                }
            }
        }
        for kk in 0..=ro {
            let xs: Vec<f64> =
                (0..7).map(|i| opts.compact.0 + (opts.compact.1 - opts.compact.0) * i as f64 / 6.0).collect();
            let vals: Vec<f64> = xs
                .iter()
                .map(|x| nodes.iter().zip(&jets).map(|((z, w), d)| w * d[0] * (x - z).powi(kk as i32)).sum())
                .collect();
            let res = polynomial_fit_residual(&xs, &vals, kk);
            max_poly = max_poly.max(res);
            rows.push(BoundRow {
                n,
                k: kk,
                l: 0,
                kind: BoundKind::PolynomialPreservation,
                ratio: res,
                bound: 1e-8,
                pass: res <= 1e-8,
            });
        }
    }
    let level_constants: Vec<(usize, f64)> = (n0..=n1)
        .map(|n| {
            let c = rows
                .iter()
                .filter(|r| r.n == n)
                .filter(|r| r.kind == BoundKind::Derivative || (r.kind == BoundKind::Moment && r.l >= r.k))
                .map(|r| r.ratio)
                .fold(0.0, f64::max);
            (n, c)
        })
        .collect();
    let cmax = level_constants.iter().map(|c| c.1).fold(0.0, f64::max);
    let cmin = level_constants.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let stability = cmax / cmin;
    let pass = rows.iter().all(|r| r.pass) && stability <= 2.0;
    KernelBoundsReport { rows, level_constants, stability, max_vanishing_moment: max_vanishing, max_polynomial_residual: max_poly, pass }
}

/// Max deviation of `vals` from their least-squares polynomial of degree `deg`,
/// relative to `max(1, |vals|)`.
fn polynomial_fit_residual(xs: &[f64], vals: &[f64], deg: usize) -> f64 {
    let a = DMatrix::from_fn(xs.len(), deg + 1, |i, j| xs[i].powi(j as i32));
    let b = DVector::from_column_slice(vals);
    let svd = a.clone().svd(true, true);
    let coef = match svd.solve(&b, 1e-14) {
        Ok(c) => c,
        Err(_) => return f64::INFINITY,
    };
    let fit = a * coef;
    let scale = vals.iter().map(|v| v.abs()).fold(1.0, f64::max);
    (fit - b).amax() / scale
}

// ---------------------------------------------------------------- η/ζ factorisation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `ρ2^{-n} ≤ λ`: `K_n^*φ_x^λ = 2^{-βn} η_x^{2λ}`.
    Large,
    /// `ρ2^{-n} ≥ λ`: `K_n^*φ_x^λ = 2^{-βn}(2^nλ)^{m'} ζ_x^{2ρ2^{-n}}`.
    Small,
}

/// Result of [`eta_zeta_factorize`].
#[derive(Debug, Clone)]
pub struct Factorization {
    pub regime: Regime,
    pub prefactor: f64,
    /// Scale of the factored function (`2λ` or `2ρ2^{-n}`).
    pub scale: f64,
    pub function: TestFunction,
    /// Sup of the identity residual over probe points, relative to `sup |K_n^*φ_x^λ|`.
    pub residual: f64,
    /// `‖factored‖_{C^r}` with `r = min(2, kernel r)`.
    pub cst: f64,
}

/// Factorises `K_n^*φ_x^λ` into a prefactor times a scaled test function, in
/// the regime selected by comparing `ρ2^{-n}` with `λ`.
pub fn eta_zeta_factorize(level: &Arc<KernelLevel>, phi: &TestFunction, x: f64, lambda: f64, c: i32) -> Result<Factorization> {
    let rho_n = level.radius();
    let regime = if rho_n <= lambda { Regime::Large } else { Regime::Small };
    eta_zeta_factorize_in(level, phi, x, lambda, c, regime)
}

/// As [`eta_zeta_factorize`] with the regime forced (both formulas are valid
/// on the boundary `ρ2^{-n} = λ`).
pub fn eta_zeta_factorize_in(
    level: &Arc<KernelLevel>,
    phi: &TestFunction,
    x: f64,
    lambda: f64,
    c: i32,
    regime: Regime,
) -> Result<Factorization> {
    if !(lambda > 0.0) {
        return invalid("η/ζ factorisation needs λ > 0");
    }
    if c < -1 {
        return invalid("annihilation depth must be ≥ −1");
    }
    let kernel = *level.kernel();
    let n = level.index();
    let rho_n = level.radius();
    let tol = 1e-12 * rho_n.max(lambda);
    match regime {
        Regime::Large if rho_n > lambda + tol => return invalid("large-scale regime needs ρ2^{-n} ≤ λ"),
        Regime::Small if rho_n + tol < lambda => return invalid("small-scale regime needs ρ2^{-n} ≥ λ"),
        _ => {}
    }
    let two_n = 2f64.powi(n as i32);
    let m_eff = ((c + 1).max(0) as usize).min(kernel.m);
    let beta_n = two_n.powf(kernel.beta);
    // arguments of K_n: λz − s·y with s = 2λ (η) or 2ρ2^{-n} (ζ)
    let (s, pref_inner, prefactor, scale) = match regime {
        Regime::Large => (2.0 * lambda, beta_n * 2.0 * lambda, 1.0 / beta_n, 2.0 * lambda),
        Regime::Small => {
            let g = (two_n * lambda).powi(m_eff as i32);
            (2.0 * rho_n, beta_n / g * 2.0 * rho_n, g / beta_n, 2.0 * rho_n)
        }
    };
    let order = kernel.r.min(2);
    let lvl = level.clone();
    let base = phi.clone();
    let shells = level.shells();
    let func = TestFunction::custom((-1.0, 1.0), order, format!("{regime:?}[n={n}]"), move |y, nd| {
        let mut out = vec![0.0; nd + 1];
        // ∂^l: (−s)^l ∫ φ(z) K_n^{(l)}(λz − s y) dz over the shells of K_n
        for &(a, b) in &shells {
            for sign in [1.0, -1.0] {
                // λz − s y ∈ sign·[a, b]
                let (za, zb) = if sign > 0.0 { ((s * y + a) / lambda, (s * y + b) / lambda) } else { ((s * y - b) / lambda, (s * y - a) / lambda) };
                let (za, zb) = (za.max(-1.0), zb.min(1.0));
                if zb <= za {
                    continue;
                }
                for (z, w) in quad::composite_nodes(za, zb, 24) {
                    let pz = base.value(z);
                    if pz == 0.0 {
                        continue;
                    }
                    let d = lvl.derivs(lambda * z - s * y, nd);
                    let mut f = 1.0;
                    for (o, dv) in out.iter_mut().zip(&d) {
                        *o += w * pz * dv * f;
                        f *= -s;
                    }
                }
            }
        }
        for o in out.iter_mut() {
            *o *= pref_inner;
        }
        out
    });
    // identity check against direct quadrature of K_n^*φ_x^λ
    let direct = crate::testfn::scale_center(phi, x, lambda)?.convolve(level.clone());
    let (a, b) = direct.support();
    let mut worst: f64 = 0.0;
    let mut size: f64 = 0.0;
    for i in 0..=96 {
        let yp = a + (b - a) * i as f64 / 96.0;
        let d = direct.eval(yp);
        let f = prefactor / scale * func.value((yp - x) / scale);
        worst = worst.max((d - f).abs());
        size = size.max(d.abs());
    }
    let cst = func.cr_norm(order);
    Ok(Factorization { regime, prefactor, scale, function: func, residual: worst / size.max(f64::MIN_POSITIVE), cst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{weierstrass, weierstrass_with_terms};
    use crate::testfn::{annihilate_moments, make_bump, scale_center};

    fn kernel(beta: f64) -> DyadicDecomposition {
        dyadic_decompose(&fractional_kernel(beta, 1.0, false).unwrap(), 14).unwrap()
    }

    #[test]
    fn fractional_kernel_examples() {
        let k = fractional_kernel(0.5, 1.0, false).unwrap();
        assert!((k.value(0.25) - 2.0).abs() < 1e-14);
        assert_eq!(k.value(1.2), 0.0);
        for i in 1..50 {
            let z = 0.019 * i as f64;
            assert!((k.value(z) - k.value(-z)).abs() < 1e-14);
        }
        assert!(fractional_kernel(0.0, 1.0, false).is_err());
        assert!(fractional_kernel(0.5, 1.0, true).is_err());
    }

    #[test]
    fn telescoping() {
        let d = kernel(0.5);
        assert!((d.partial_sum(0.3, 8) - d.kernel().value(0.3)).abs() < 1e-12);
        assert_eq!(d.level(5).value(0.5), 0.0);
        let l = dyadic_decompose(&fractional_kernel(1.0, 1.0, true).unwrap(), 8).unwrap();
        for z in [0.3, -0.05, 0.71] {
            assert!((l.partial_sum(z, 12) - l.kernel().value(z)).abs() < 1e-10);
        }
    }

    #[test]
    fn self_similar_levels() {
        let d = kernel(0.75);
        let (n, z) = (3usize, 0.05);
        let lhs = d.level(n).value(z);
        let rhs = 2f64.powf(-0.75 * n as f64) * 8.0 * d.level(0).value(8.0 * z);
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs());
    }

    #[test]
    fn level_fourier_and_moments_match_quadrature() {
        let d = kernel(0.5);
        let lvl = d.level(3);
        let nodes = lvl.weighted_nodes();
        let xi = 17.0;
        let direct: f64 = nodes.iter().map(|(z, w)| w * (xi * z).cos()).sum();
        assert!((lvl.fourier(xi) - direct).abs() < 1e-12);
        let m2: f64 = nodes.iter().map(|(z, w)| w * z * z).sum();
        assert!((lvl.moment(2) - m2).abs() < 1e-14);
    }

    #[test]
    fn full_kernel_moment_is_sum_of_levels() {
        let d = kernel(0.5);
        let full = d.full();
        let partial: f64 = (0..=40).map(|n| d.level(n).moment(0)).sum::<f64>() + d.tail_moment(40, 0);
        assert!((full.moment(0) - partial).abs() < 1e-12);
        let xi = 300.0;
        let partial: f64 = (0..=60).map(|n| d.level(n).fourier(xi)).sum();
        assert!((full.fourier(xi) - partial).abs() < 1e-8, "{} {}", full.fourier(xi), partial);
    }

    #[test]
    fn integrating_constant_gives_kernel_mass() {
        let d = kernel(0.5);
        let one: Dist = Arc::new(Polynomial::constant(1.0));
        let kf = integrate_distribution(&d, one).unwrap();
        let phi = make_bump(0);
        let psi = scale_center(&phi, 0.4, 0.3).unwrap();
        let expected = d.full().moment(0) * phi.mass();
        assert!((kf.pair(&psi).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn spectral_and_series_paths_agree() {
        let d = kernel(0.75);
        let w = weierstrass(0.7, 2).unwrap();
        let spectral = integrate_distribution(&d, Arc::new(w.clone())).unwrap();
        let series = KernelImage { decomp: d.clone(), f: Arc::new(w) };
        let psi = scale_center(&make_bump(1), 0.3, 0.25).unwrap();
        let a = spectral.pair(&psi).unwrap();
        let b = series.series_pair(&psi).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} {b}");
    }

    #[test]
    fn closed_form_image_matches_pairing() {
        let d = kernel(0.75);
        let src = ClosedForm {
            trig: weierstrass_with_terms(0.7, 2, 6).unwrap(),
            poly: Polynomial::new(0.2, vec![1.0, -0.5, 0.25, 0.1]),
        };
        let img = integrate_distribution(&d, Arc::new(src)).unwrap();
        let cf = img.closed_form().unwrap();
        let psi = scale_center(&make_bump(1), 0.4, 0.2).unwrap();
        let a = img.pair(&psi).unwrap();
        assert!((a - cf.pair(&psi).unwrap()).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn divergence_is_flagged() {
        let d = kernel(0.5);
        // pairs with the reciprocal radius of the outermost factor, growing like 2^n
        let bad = crate::distributions::from_pairing("bad", 0, false, |psi| {
            Ok(psi.factors().last().map(|k| 1.0 / k.radius()).unwrap_or(1.0))
        });
        let kf = integrate_distribution(&d, bad).unwrap();
        let psi = scale_center(&make_bump(0), 0.0, 0.5).unwrap();
        assert!(matches!(kf.pair(&psi), Err(Error::DivergenceSuspected(_))));
    }

    #[test]
    fn bounds_report_passes() {
        let d = kernel(0.5);
        let r = kernel_bounds_report(&d, &BoundsOptions::default());
        assert!(r.pass, "stability {} rows {:?}", r.stability, r.rows.iter().filter(|r| !r.pass).collect::<Vec<_>>());
        assert!(r.max_vanishing_moment <= 1e-10);
        assert!(r.max_polynomial_residual <= 1e-8);
    }

    #[test]
    fn adjoint_support() {
        let d = kernel(0.5);
        let psi = scale_center(&make_bump(0), 0.2, 0.1).unwrap();
        let lvl = d.level(3);
        let g = adjoint_apply(&lvl, &psi).unwrap();
        let reach = 0.1 + 0.125;
        assert_eq!(g.value(0.2 + reach + 1e-3), 0.0);
        assert_eq!(g.value(0.2 - reach - 1e-3), 0.0);
    }

    #[test]
    fn factorization_regimes() {
        let d = kernel(0.5);
        let phi = annihilate_moments(&TestFunction::poly_bump(vec![1.0, 0.5, -0.3]), 1).unwrap().function;
        // large regime: ρ2^{-4} = 1/16 ≤ λ = 0.2
        let f = eta_zeta_factorize(&d.level(4), &phi, 0.3, 0.2, 1).unwrap();
        assert_eq!(f.regime, Regime::Large);
        assert!(f.residual < 1e-8, "{}", f.residual);
        assert!(f.function.value(1.0001) == 0.0);
        // small regime
        let f = eta_zeta_factorize(&d.level(2), &phi, 0.3, 0.05, 1).unwrap();
        assert_eq!(f.regime, Regime::Small);
        assert!(f.residual < 1e-8, "{}", f.residual);
        // boundary: both agree
        let lam = 0.125;
        let a = eta_zeta_factorize_in(&d.level(3), &phi, 0.3, lam, 1, Regime::Large).unwrap();
        let b = eta_zeta_factorize_in(&d.level(3), &phi, 0.3, lam, 1, Regime::Small).unwrap();
        assert!(a.residual < 1e-8 && b.residual < 1e-8);
        // moments up to min(c, c0) vanish
        for q in 0..=1 {
            assert!(b.function.moment(q).abs() < 1e-9, "{}", b.function.moment(q));
        }
    }
}
