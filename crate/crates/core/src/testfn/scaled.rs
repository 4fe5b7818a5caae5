//! Scaled and centred test functions `φ_x^λ`, possibly differentiated and
//! smoothed by even convolution factors (kernel levels), which is how adjoint
//! kernel applications `K_n^*φ_x^λ` are represented without discretisation.

use std::fmt;
use std::sync::Arc;

use super::TestFunction;
use crate::error::{invalid, Result};

/// An even, compactly supported (or integrable) convolution factor `k`.
///
/// A probe `ψ` convolved with `k` is `y ↦ ∫ ψ(y + z) k(z) dz`.
pub trait ConvolutionFactor: Send + Sync {
    /// Radius of the support of `k`.
    fn radius(&self) -> f64;
    /// Quadrature nodes `(z, w·k(z))` for integrals `∫ g(z) k(z) dz` with smooth `g`.
    fn weighted_nodes(&self) -> &[(f64, f64)];
    /// `∫ k(z) e^{iξz} dz` (real because `k` is even).
    fn fourier(&self, xi: f64) -> f64;
    /// `∫ k(z) z^q dz`.
    fn moment(&self, q: usize) -> f64;
    fn label(&self) -> String;
}

/// `weight · ∂^deriv [ (φ_x^λ) ⋆ k_1 ⋆ … ⋆ k_m ]`.
#[derive(Clone)]
pub struct ScaledTestFunction {
    base: TestFunction,
    center: f64,
    scale: f64,
    deriv: usize,
    weight: f64,
    factors: Vec<Arc<dyn ConvolutionFactor>>,
}

impl fmt::Debug for ScaledTestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScaledTestFunction")
            .field("base", &self.base.label())
            .field("center", &self.center)
            .field("scale", &self.scale)
            .field("deriv", &self.deriv)
            .field("weight", &self.weight)
            .field("factors", &self.factors.iter().map(|k| k.label()).collect::<Vec<_>>())
            .finish()
    }
}

/// `φ_x^λ(y) = λ^{-1} φ((y − x)/λ)`.
pub fn scale_center(phi: &TestFunction, x: f64, lambda: f64) -> Result<ScaledTestFunction> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return invalid(format!("scale must be positive and finite, got {lambda}"));
    }
    if !x.is_finite() {
        return invalid("centre must be finite");
    }
    Ok(ScaledTestFunction { base: phi.clone(), center: x, scale: lambda, deriv: 0, weight: 1.0, factors: Vec::new() })
}

impl ScaledTestFunction {
    pub fn base(&self) -> &TestFunction {
        &self.base
    }
    pub fn center(&self) -> f64 {
        self.center
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn deriv_order(&self) -> usize {
        self.deriv
    }
    pub fn weight(&self) -> f64 {
        self.weight
    }
    pub fn factors(&self) -> &[Arc<dyn ConvolutionFactor>] {
        &self.factors
    }

    /// Number of further derivatives the probe can take exactly.
    pub fn available_order(&self) -> usize {
        self.base.max_order().saturating_sub(self.deriv)
    }

    /// `a · ψ`.
    pub fn times(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.weight *= a;
        out
    }

    /// `∂^k ψ`.
    pub fn derivative(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.deriv += k;
        out
    }

    /// `ψ ⋆ k`.
    pub fn convolve(&self, k: Arc<dyn ConvolutionFactor>) -> Self {
        let mut out = self.clone();
        out.factors.push(k);
        out
    }

    /// The same probe without convolution factors.
    pub fn unconvolved(&self) -> Self {
        let mut out = self.clone();
        out.factors.clear();
        out
    }

    /// Interval containing the support.
    pub fn support(&self) -> (f64, f64) {
        let (lo, hi) = self.base.support();
        let widen: f64 = self.factors.iter().map(|k| k.radius()).sum();
        (self.center + self.scale * lo - widen, self.center + self.scale * hi + widen)
    }

    fn eval_plain(&self, y: f64) -> f64 {
        let u = (y - self.center) / self.scale;
        let d = self.deriv;
        let v = if d == 0 { self.base.value(u) } else { self.base.deriv(u, d) };
        self.weight * v * self.scale.powi(-1 - d as i32)
    }

    fn eval_nested(&self, y: f64, depth: usize) -> f64 {
        if depth == self.factors.len() {
            return self.eval_plain(y);
        }
        self.factors[depth].weighted_nodes().iter().map(|&(z, w)| w * self.eval_nested(y + z, depth + 1)).sum()
    }

    /// Pointwise value; convolution factors are applied by quadrature.
    pub fn eval(&self, y: f64) -> f64 {
        let (lo, hi) = self.support();
        if y < lo || y > hi {
            return 0.0;
        }
        self.eval_nested(y, 0)
    }

    /// `∫ ψ(y) e^{iωy} dy` as `(re, im)`.
    pub fn fourier(&self, omega: f64) -> (f64, f64) {
        let (fr, fi) = self.base.fourier(self.scale * omega);
        // e^{iωx} Φ(λω)
        let (c, s) = ((omega * self.center).cos(), (omega * self.center).sin());
        let (mut re, mut im) = (c * fr - s * fi, c * fi + s * fr);
        // (−iω)^d
        for _ in 0..self.deriv {
            let nre = omega * im;
            let nim = -omega * re;
            re = nre;
            im = nim;
        }
        let mult: f64 = self.factors.iter().map(|k| k.fourier(omega)).product();
        (self.weight * mult * re, self.weight * mult * im)
    }

    /// `∫ ψ(y) (y − c)^p dy`, exact up to the cached moments of the base and factors.
    pub fn moment_about(&self, c: f64, p: usize) -> f64 {
        self.weight * self.moment_rec(c, p, self.factors.len())
    }

    fn moment_rec(&self, c: f64, p: usize, nf: usize) -> f64 {
        if nf == 0 {
            // ∂^d moves to the monomial: ∫ ∂^d g (y−c)^p = (−1)^d p!/(p−d)! ∫ g (y−c)^{p−d}
            let d = self.deriv;
            if d > p {
                return 0.0;
            }
            let mut falling = 1.0;
            for i in 0..d {
                falling *= (p - i) as f64;
            }
            let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
            let q = p - d;
            // ∫ λ^{-1} φ((y−x)/λ) (y−c)^q dy = Σ_j C(q,j) λ^j m_j (x−c)^{q−j}
            let off = self.center - c;
            let mut acc = 0.0;
            let mut binom = 1.0;
            for j in 0..=q {
                acc += binom * self.scale.powi(j as i32) * self.base.moment(j) * off.powi((q - j) as i32);
                binom = binom * (q - j) as f64 / (j + 1) as f64;
            }
            return sign * falling * acc;
        }
        // ∫∫ g(y+z) k(z) (y−c)^p = Σ_q C(p,q) (−1)^q μ_q ∫ g(u) (u−c)^{p−q}
        let k = &self.factors[nf - 1];
        let mut acc = 0.0;
        let mut binom = 1.0;
        for q in 0..=p {
            if q % 2 == 0 {
                acc += binom * k.moment(q) * self.moment_rec(c, p - q, nf - 1);
            }
            binom = binom * (p - q) as f64 / (q + 1) as f64;
        }
        acc
    }

    /// `∫ ψ`.
    pub fn mass(&self) -> f64 {
        self.moment_about(0.0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::make_bump;

    #[test]
    fn identity_scaling() {
        let phi = make_bump(1);
        let s = scale_center(&phi, 0.0, 1.0).unwrap();
        for y in [-0.7, -0.1, 0.0, 0.4] {
            assert!((s.eval(y) - phi.value(y)).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_scale() {
        let phi = make_bump(0);
        assert!(scale_center(&phi, 0.0, 0.0).is_err());
        assert!(scale_center(&phi, 0.0, -1.0).is_err());
    }

    #[test]
    fn chain_rule_example() {
        let phi = make_bump(2);
        let s = scale_center(&phi, 0.0, 0.5).unwrap().derivative(1);
        let expected = 0.5f64.powi(-2) * phi.deriv(0.2, 1);
        assert!((s.eval(0.1) - expected).abs() < 1e-13);
        // finite-difference oracle
        let p = scale_center(&phi, 0.0, 0.5).unwrap();
        let h = 1e-5;
        let fd = (p.eval(0.1 + h) - p.eval(0.1 - h)) / (2.0 * h);
        assert!((fd - expected).abs() < 1e-7);
    }

    #[test]
    fn moments_match_quadrature() {
        let phi = TestFunction::poly_bump(vec![1.0, 0.4, -0.2]);
        let s = scale_center(&phi, 0.3, 0.2).unwrap().derivative(1);
        let (lo, hi) = s.support();
        for p in 0..5 {
            let direct = crate::quad::composite(lo, hi, 128, |y| s.eval(y) * (y - 0.1f64).powi(p as i32));
            assert!((s.moment_about(0.1, p) - direct).abs() < 1e-11, "p={p}");
        }
    }

    #[test]
    fn fourier_matches_quadrature() {
        let phi = TestFunction::poly_bump(vec![1.0, -0.3]);
        let s = scale_center(&phi, -0.2, 0.3).unwrap().derivative(2).times(0.7);
        let (lo, hi) = s.support();
        let w = 9.0;
        let (re, im) = s.fourier(w);
        let dre = crate::quad::composite(lo, hi, 128, |y| s.eval(y) * (w * y).cos());
        let dim = crate::quad::composite(lo, hi, 128, |y| s.eval(y) * (w * y).sin());
        assert!((re - dre).abs() < 1e-10 && (im - dim).abs() < 1e-10, "{re} {dre} {im} {dim}");
    }
}
