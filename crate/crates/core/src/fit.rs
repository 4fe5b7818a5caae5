//! Least-squares fits on log–log data and the sampling grids shared by the
//! seminorm reports.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return LinearFit { slope: f64::NAN, intercept: f64::NAN, r2: f64::NAN, points: xs.len() };
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    LinearFit { slope, intercept, r2, points: xs.len() }
}

/// Fit of `log v ≈ c + s·log λ` over positive samples. Zero values are dropped;
/// `None` when fewer than two positive samples remain.
pub fn loglog_fit(lambdas: &[f64], values: &[f64]) -> Option<LinearFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = lambdas
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(l, v)| (l.ln(), v.ln()))
        .unzip();
    if xs.len() < 2 {
        return None;
    }
    Some(linear_fit(&xs, &ys))
}

/// Two-regressor least squares `y ≈ c + a·u + b·v`; returns `(c, a, b)`.
pub fn plane_fit(u: &[f64], v: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = y.len();
    if n < 3 {
        return None;
    }
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for i in 0..n {
        let row = nalgebra::Vector3::new(1.0, u[i], v[i]);
        ata += row * row.transpose();
        atb += row * y[i];
    }
    let sol = ata.lu().solve(&atb)?;
    Some((sol[0], sol[1], sol[2]))
}

/// `n` points of `[a, b]` from the golden-ratio sequence. The points are never
/// dyadic rationals, where lacunary trigonometric fixtures have exceptional
/// symmetries.
pub fn golden_points(a: f64, b: f64, n: usize) -> Vec<f64> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut pts: Vec<f64> = (0..n).map(|i| a + (b - a) * (0.5 + (i as f64) * g).fract()).collect();
    pts.sort_by(f64::total_cmp);
    pts
}

/// Median of a slice (NaN for an empty one).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovers_power_law() {
        let l: Vec<f64> = (2..8).map(|j| 2f64.powi(-j)).collect();
        let v: Vec<f64> = l.iter().map(|x| 3.0 * x.powf(0.7)).collect();
        let f = loglog_fit(&l, &v).unwrap();
        assert!((f.slope - 0.7).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plane_fit_exact() {
        let u = [0.0, 1.0, 2.0, 0.5, 3.0];
        let v = [1.0, 0.0, 2.0, 4.0, -1.0];
        let y: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 0.5 + 2.0 * a - 0.25 * b).collect();
        let (c, a, b) = plane_fit(&u, &v, &y).unwrap();
        assert!((c - 0.5).abs() < 1e-12 && (a - 2.0).abs() < 1e-12 && (b + 0.25).abs() < 1e-12);
    }

    #[test]
    fn golden_points_inside() {
        let p = golden_points(-1.0, 1.0, 17);
        assert_eq!(p.len(), 17);
        assert!(p.iter().all(|x| (-1.0..1.0).contains(x)));
    }

    proptest! {
        #[test]
        fn slope_is_scale_invariant(s in 0.1f64..3.0, c in 0.01f64..100.0) {
            let l: Vec<f64> = (1..9).map(|j| 2f64.powi(-j)).collect();
            let v: Vec<f64> = l.iter().map(|x| c * x.powf(s)).collect();
            let f = loglog_fit(&l, &v).unwrap();
            prop_assert!((f.slope - s).abs() < 1e-9);
        }
    }
}
