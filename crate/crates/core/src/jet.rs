//! Truncated Taylor series ("jets") used to obtain exact derivatives of
//! closed-form profiles. A jet `c` of length `n + 1` at a point `z` stands for
//! `f(z + h) = Σ c[k] h^k + O(h^{n+1})`.

pub type Jet = Vec<f64>;

pub fn constant(v: f64, n: usize) -> Jet {
    let mut j = vec![0.0; n + 1];
    j[0] = v;
    j
}

/// The identity jet `z + h`.
pub fn variable(z: f64, n: usize) -> Jet {
    let mut j = constant(z, n);
    if n >= 1 {
        j[1] = 1.0;
    }
    j
}

pub fn mul(a: &[f64], b: &[f64]) -> Jet {
    let n = a.len().min(b.len());
    let mut out = vec![0.0; n];
    for i in 0..n {
        if a[i] == 0.0 {
            continue;
        }
        for j in 0..n - i {
            out[i + j] += a[i] * b[j];
        }
    }
    out
}

pub fn scale(a: &[f64], s: f64) -> Jet {
    a.iter().map(|v| v * s).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Jet {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn recip(a: &[f64]) -> Jet {
    let n = a.len();
    let mut r = vec![0.0; n];
    r[0] = 1.0 / a[0];
    for k in 1..n {
        let mut s = 0.0;
        for j in 1..=k {
            s += a[j] * r[k - j];
        }
        r[k] = -s * r[0];
    }
    r
}

pub fn exp(a: &[f64]) -> Jet {
    let n = a.len();
    let mut e = vec![0.0; n];
    e[0] = a[0].exp();
    if e[0] == 0.0 {
        return e;
    }
    for k in 1..n {
        let mut s = 0.0;
        for j in 1..=k {
            s += j as f64 * a[j] * e[k - j];
        }
        e[k] = s / k as f64;
    }
    e
}

/// `log(a)` for a jet with positive constant term.
pub fn ln(a: &[f64]) -> Jet {
    let n = a.len();
    let mut l = vec![0.0; n];
    l[0] = a[0].ln();
    for k in 1..n {
        let mut s = 0.0;
        for j in 1..k {
            s += j as f64 * l[j] * a[k - j];
        }
        l[k] = (a[k] - s / k as f64) / a[0];
    }
    l
}

/// Jet of `(z + h)^p` at `z > 0`.
pub fn powf(z: f64, p: f64, n: usize) -> Jet {
    let mut out = vec![0.0; n + 1];
    let mut coef = z.powf(p);
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = coef;
        coef *= (p - k as f64) / ((k + 1) as f64 * z);
    }
    out
}

/// Jet of a polynomial `Σ c_i z^i` at `z`.
pub fn poly(coeffs: &[f64], z: f64, n: usize) -> Jet {
    // repeated synthetic division gives the Taylor shift
    let mut c: Vec<f64> = coeffs.to_vec();
    let mut out = vec![0.0; n + 1];
    let deg = c.len();
    for (k, slot) in out.iter_mut().enumerate() {
        if k >= deg {
            break;
        }
        let mut acc = 0.0;
        for i in (k..deg).rev() {
            acc = acc * z + c[i];
            c[i] = acc;
        }
        *slot = c[k];
    }
    out
}

/// Taylor coefficients to derivative values: `f^{(k)} = k! c_k`.
pub fn to_derivs(j: &[f64]) -> Vec<f64> {
    let mut f = 1.0;
    j.iter()
        .enumerate()
        .map(|(k, c)| {
            if k > 0 {
                f *= k as f64;
            }
            c * f
        })
        .collect()
}

/// Derivative values to Taylor coefficients.
pub fn from_derivs(d: &[f64]) -> Jet {
    let mut f = 1.0;
    d.iter()
        .enumerate()
        .map(|(k, c)| {
            if k > 0 {
                f *= k as f64;
            }
            c / f
        })
        .collect()
}

/// Jet of the reference bump `exp(-1/(1-z²))` (zero outside the open unit ball).
pub fn bump(z: f64, n: usize) -> Jet {
    let u0 = 1.0 - z * z;
    if u0 <= 0.0 || -1.0 / u0 < -740.0 {
        return vec![0.0; n + 1];
    }
    let mut u = constant(u0, n);
    if n >= 1 {
        u[1] = -2.0 * z;
    }
    if n >= 2 {
        u[2] = -1.0;
    }
    let g = scale(&recip(&u), -1.0);
    exp(&g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_derivative_matches_closed_form() {
        let z: f64 = 0.37;
        let d = to_derivs(&bump(z, 2));
        let b = (-1.0 / (1.0 - z * z)).exp();
        let b1 = -2.0 * z / (1.0 - z * z).powi(2) * b;
        assert!((d[0] - b).abs() < 1e-15);
        assert!((d[1] - b1).abs() < 1e-14);
        // second derivative by central differences of the first
        let h = 1e-5;
        let fd = (to_derivs(&bump(z + h, 1))[1] - to_derivs(&bump(z - h, 1))[1]) / (2.0 * h);
        assert!((d[2] - fd).abs() < 1e-8);
    }

    #[test]
    fn poly_shift_and_powers() {
        // (1 + 2z + 3z²) at z = 0.5 → value 2.75, derivative 5, second 6
        let d = to_derivs(&poly(&[1.0, 2.0, 3.0], 0.5, 3));
        assert_eq!(d, vec![2.75, 5.0, 6.0, 0.0]);
        let p = to_derivs(&powf(2.0, -0.5, 2));
        assert!((p[1] + 0.5 * 2f64.powf(-1.5)).abs() < 1e-15);
        let l = to_derivs(&ln(&variable(3.0, 2)));
        assert!((l[1] - 1.0 / 3.0).abs() < 1e-15 && (l[2] + 1.0 / 9.0).abs() < 1e-15);
    }
}
