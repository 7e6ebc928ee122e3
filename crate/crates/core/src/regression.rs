//! Maximum-likelihood logistic regression by Newton–Raphson (IRLS) with
//! Wald inference and McFadden's pseudo-R².

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::confounders::DesignMatrix;
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "intercept";

/// Coefficients beyond this magnitude on standardized inputs are taken as
/// evidence of (quasi-)separation.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub response: String,
    pub regressors: Vec<String>,
    pub intercept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p: f64,
}

impl Coefficient {
    /// `*` p < .05, `**` p < .01, `***` p < .001.
    pub fn stars(&self) -> &'static str {
        regression_stars(self.p)
    }
}

pub fn regression_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub coefficients: Vec<Coefficient>,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub pseudo_r2: f64,
    pub n: usize,
    pub converged: bool,
    /// Log-likelihood after each iteration.
    pub trace: Vec<f64>,
}

impl RegressionSummary {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// Fitted probabilities on a design carrying the same regressors.
    pub fn predict(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        let mut eta = vec![0.0; design.n_rows()];
        for c in &self.coefficients {
            if c.name == INTERCEPT {
                eta.iter_mut().for_each(|e| *e += c.estimate);
                continue;
            }
            let col = design
                .column(&c.name)
                .ok_or_else(|| Error::Config(format!("design lacks column {:?}", c.name)))?;
            for (e, v) in eta.iter_mut().zip(&col.values) {
                *e += c.estimate * v;
            }
        }
        Ok(eta.into_iter().map(logistic).collect())
    }
}

pub fn pseudo_r2(summary: &RegressionSummary) -> f64 {
    1.0 - summary.log_likelihood / summary.null_log_likelihood
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

// ln(1 + e^eta) without overflow
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood of `beta` for design `x` (rows = observations).
pub fn log_likelihood(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter().zip(y).map(|(e, yi)| yi * e - softplus(*e)).sum()
}

/// Score vector X'(y − p).
pub fn gradient(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> DVector<f64> {
    let eta = x * beta;
    let resid = DVector::from_iterator(y.len(), eta.iter().zip(y).map(|(e, yi)| yi - logistic(*e)));
    x.transpose() * resid
}

fn information(x: &DMatrix<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
    let eta = x * beta;
    let mut xw = x.clone();
    for (i, e) in eta.iter().enumerate() {
        let p = logistic(*e);
        let w = p * (1.0 - p);
        xw.row_mut(i).scale_mut(w);
    }
    x.transpose() * xw
}

/// Rejects exactly (numerically) collinear columns, naming the first
/// offending column and the earlier columns it is built from.
fn check_collinearity(x: &DMatrix<f64>, names: &[String], order: &[usize]) -> Result<()> {
    let n = x.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut accepted: Vec<usize> = Vec::new();
    for &j in order {
        let col: DVector<f64> = x.column(j).into_owned();
        let norm = col.norm();
        let mut v = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let resid = v.norm();
        if norm == 0.0 || resid <= 1e-9 * norm.max(1.0) * (n as f64).sqrt().max(1.0) {
            let others = if accepted.is_empty() || norm == 0.0 {
                Vec::new()
            } else {
                let prev = DMatrix::from_columns(
                    &accepted.iter().map(|&a| x.column(a).into_owned()).collect::<Vec<_>>(),
                );
                let coef = prev
                    .svd(true, true)
                    .solve(&col, 1e-12)
                    .unwrap_or_else(|_| DVector::zeros(accepted.len()));
                accepted
                    .iter()
                    .zip(coef.iter())
                    .filter(|(_, c)| c.abs() > 1e-6)
                    .map(|(&a, _)| names[a].clone())
                    .collect()
            };
            return Err(Error::Collinearity {
                column: names[j].clone(),
                others,
            });
        }
        basis.push(v / resid);
        accepted.push(j);
    }
    Ok(())
}

/// Fits a logistic regression of `y` on the columns of `x`.
pub fn fit_matrix(
    x: &DMatrix<f64>,
    y: &[f64],
    names: &[String],
    has_intercept: bool,
    opts: FitOptions,
) -> Result<RegressionSummary> {
    let n = x.nrows();
    let p = x.ncols();
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::Precondition("response must be 0/1".into()));
    }
    if n <= p {
        return Err(Error::Precondition(format!("{n} observations for {p} parameters")));
    }
    let ones = y.iter().filter(|v| **v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::Separation("response is constant".into()));
    }
    // the intercept goes first so a constant regressor is the one reported
    let mut order: Vec<usize> = (0..p).collect();
    if has_intercept {
        if let Some(pos) = names.iter().position(|nm| nm == INTERCEPT) {
            order.remove(pos);
            order.insert(0, pos);
        }
    }
    check_collinearity(x, names, &order)?;

    let mut beta = DVector::zeros(p);
    let mut ll = log_likelihood(x, y, &beta);
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let g = gradient(x, y, &beta);
        let h = information(x, &beta);
        let step = h
            .cholesky()
            .ok_or_else(|| Error::Separation("information matrix lost positive definiteness".into()))?
            .solve(&g);
        let mut scale = 1.0;
        let (mut next, mut next_ll);
        loop {
            next = &beta + &step * scale;
            next_ll = log_likelihood(x, y, &next);
            if next_ll >= ll - 1e-12 * ll.abs() || scale < 1e-10 {
                break;
            }
            scale *= 0.5;
        }
        let change = (next_ll - ll).abs();
        beta = next;
        ll = next_ll;
        trace.push(ll);
        if let Some((j, b)) = beta
            .iter()
            .enumerate()
            .filter(|(_, b)| b.abs() > SEPARATION_BOUND)
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        {
            return Err(Error::Separation(format!(
                "coefficient of {:?} diverged to {b:.1}",
                names[j]
            )));
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("logistic fit stopped after {} iterations without converging", opts.max_iter);
    }

    let cov = information(x, &beta)
        .try_inverse()
        .ok_or_else(|| Error::Separation("singular information matrix at the optimum".into()))?;
    let normal = Normal::standard();
    let coefficients = (0..p)
        .map(|j| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = beta[j] / se;
            Coefficient {
                name: names[j].clone(),
                estimate: beta[j],
                std_error: se,
                z,
                p: (2.0 * normal.sf(z.abs())).min(1.0),
            }
        })
        .collect();
    let null_ll = if has_intercept {
        let m = ones as f64 / n as f64;
        n as f64 * (m * m.ln() + (1.0 - m) * (1.0 - m).ln())
    } else {
        n as f64 * 0.5f64.ln()
    };
    Ok(RegressionSummary {
        coefficients,
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        pseudo_r2: 1.0 - ll / null_ll,
        n,
        converged,
        trace,
    })
}

/// Assembles the model matrix for `spec` (intercept last) from a design.
pub fn model_matrix(design: &DesignMatrix, spec: &RegressionSpec) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = design.n_rows();
    let mut names = spec.regressors.clone();
    let mut cols: Vec<&[f64]> = Vec::new();
    for name in &spec.regressors {
        let c = design
            .column(name)
            .ok_or_else(|| Error::Config(format!("regressor {name:?} not in the design matrix")))?;
        cols.push(&c.values);
    }
    let ones = vec![1.0; n];
    if spec.intercept {
        names.push(INTERCEPT.to_string());
        cols.push(&ones);
    }
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    Ok((x, names))
}

pub fn fit_logistic(design: &DesignMatrix, spec: &RegressionSpec, opts: FitOptions) -> Result<RegressionSummary> {
    if spec.response != "alignment" {
        return Err(Error::Config(format!(
            "unknown response column {:?}; designs carry `alignment`",
            spec.response
        )));
    }
    let (x, names) = model_matrix(design, spec)?;
    fit_matrix(&x, &design.response, &names, spec.intercept, opts)
}
