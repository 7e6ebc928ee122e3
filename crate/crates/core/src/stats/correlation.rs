use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Product-moment correlation of paired samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::UndefinedCorrelation("sequences differ in length"));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two pairs"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    /// Infinite when |r| = 1.
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

/// Student t test of H0: rho = 0.
pub fn corr_t_test(r: f64, n: usize) -> Result<TTest> {
    if n < 3 {
        return Err(Error::Domain(format!("t test needs n >= 3, got {n}")));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("correlation {r} outside [-1, 1]")));
    }
    let df = n - 2;
    if r.abs() == 1.0 {
        return Ok(TTest {
            t: r.signum() * f64::INFINITY,
            df,
            p: 0.0,
        });
    }
    let t = r * (df as f64).sqrt() / (1.0 - r * r).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}

pub fn fisher_z(r: f64) -> Result<f64> {
    if r.is_nan() || r.abs() >= 1.0 {
        return Err(Error::Domain(format!("Fisher transform undefined at r = {r}")));
    }
    Ok(r.atanh())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    pub lo: f64,
    pub hi: f64,
}

impl Ci {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn straddles_zero(&self) -> bool {
        self.contains(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub n: usize,
    /// None when n < 3 or the statistic is infinite.
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub ci: Option<Ci>,
}

impl CorrelationResult {
    /// r with its t test; no interval yet.
    pub fn from_pairs(x: &[f64], y: &[f64]) -> Result<Self> {
        let r = pearson(x, y)?;
        let n = x.len();
        let (t, p) = match corr_t_test(r, n) {
            Ok(tt) => (tt.t.is_finite().then_some(tt.t), Some(tt.p)),
            Err(_) => (None, None),
        };
        Ok(Self { r, n, t, p, ci: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        assert_abs_diff_eq!(pearson(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0, epsilon = 1e-12);
        // sxy = 1, sxx = 2, syy = 2/3 -> 1/sqrt(4/3)
        let want = 1.0 / (4.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(pearson(&[1., 2., 3.], &[1., 2., 2.]).unwrap(), want, epsilon = 1e-12);
        assert_abs_diff_eq!(want, 0.8660, epsilon = 1e-4);
        assert!(pearson(&[1., 1., 1.], &[1., 2., 3.]).is_err());
        assert!(pearson(&[1., 2.], &[1., 2., 3.]).is_err());
    }

    #[test]
    fn t_test_examples() {
        let t0 = corr_t_test(0.0, 50).unwrap();
        assert_eq!(t0.t, 0.0);
        assert_abs_diff_eq!(t0.p, 1.0, epsilon = 1e-12);

        let r = 1.0 / (4.0f64 / 3.0).sqrt();
        let tt = corr_t_test(r, 3).unwrap();
        assert_eq!(tt.df, 1);
        assert_abs_diff_eq!(tt.t, 3f64.sqrt(), epsilon = 1e-9);
        // t(1) is Cauchy: two-sided p = 1 - 2 atan(t)/pi
        assert_abs_diff_eq!(tt.p, 1.0 - 2.0 * 3f64.sqrt().atan() / std::f64::consts::PI, epsilon = 1e-9);

        // r = .5, n = 103: t = .5*10/sqrt(.75) = 5.77, far above the 1.984 critical value
        let tt = corr_t_test(0.5, 103).unwrap();
        assert!(tt.t > 1.984 && tt.p < 0.05);

        let one = corr_t_test(1.0, 10).unwrap();
        assert!(one.t.is_infinite());
        assert_eq!(one.p, 0.0);
    }

    #[test]
    fn fisher_examples() {
        assert_eq!(fisher_z(0.0).unwrap(), 0.0);
        // 0.5 * ln(1.5 / 0.5) = 0.5 ln 3
        assert_abs_diff_eq!(fisher_z(0.5).unwrap(), 0.5 * 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(fisher_z(0.5).unwrap(), 0.5493, epsilon = 1e-4);
        assert_abs_diff_eq!(fisher_z(-0.3).unwrap(), -fisher_z(0.3).unwrap(), epsilon = 1e-15);
        assert!(fisher_z(1.0).is_err());
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            xs in proptest::collection::vec(-10.0f64..10.0, 5..30),
            a in 0.1f64..5.0, b in -5.0f64..5.0,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x - (i as f64).sin()).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
                prop_assert!((pearson(&scaled, &ys).unwrap() - r).abs() < 1e-9);
                prop_assert!((pearson(&xs, &neg).unwrap() + r).abs() < 1e-9);
            }
        }
    }
}
