//! Weighted GLM fitting for the two families the estimators need:
//! logistic (propensity score) and Gaussian with identity link (outcome model).
//!
//! The Gaussian working variance is the constant 1, so the weighted score
//! equation is the weighted least-squares normal equation. The logistic fit is
//! plain Newton / IRLS on the weighted Bernoulli log-likelihood.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_DEVIANCE_TOL: f64 = 1e-8;
pub const IRLS_COEF_TOL: f64 = 1e-8;
/// Coefficients beyond this magnitude are treated as evidence of separation.
pub const COEF_CAP: f64 = 30.0;
/// Relative Cholesky pivot size below which a column is declared collinear.
const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    Gaussian,
}

/// Dense row-major `n × q` design with an all-ones first column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    q: usize,
    data: Vec<f64>,
    pub column_names: Vec<String>,
    /// Non-fatal problems found while building the design (e.g. constant
    /// covariates under polynomial expansion).
    pub warnings: Vec<String>,
}

impl DesignMatrix {
    pub fn new(n: usize, q: usize, data: Vec<f64>, column_names: Vec<String>) -> Result<Self> {
        if q == 0 {
            return Err(Error::Dimension("design needs at least one column".into()));
        }
        if data.len() != n * q || column_names.len() != q {
            return Err(Error::Dimension(format!(
                "design data has {} values and {} names for {n}×{q}",
                data.len(),
                column_names.len()
            )));
        }
        if (0..n).any(|i| data[i * q] != 1.0) {
            return Err(Error::Dimension(
                "first design column must be the intercept".into(),
            ));
        }
        Ok(Self {
            n,
            q,
            data,
            column_names,
            warnings: Vec::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], column_names: Vec<String>) -> Result<Self> {
        let q = column_names.len();
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::Dimension("ragged design rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), q, data, column_names)
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.q + j]).collect()
    }
}

/// How to turn `(d, x)` into a design row.
///
/// Column layout: intercept, treatment (if included), raw selected covariates,
/// standardized powers `2..=degree` of each selected covariate, then
/// treatment × raw covariate interactions (if enabled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub include_treatment: bool,
    pub covariates: Vec<usize>,
    pub degree: usize,
    pub interactions: bool,
    centers: Vec<f64>,
    scales: Vec<f64>,
    names: Vec<String>,
    warnings: Vec<String>,
}

impl DesignSpec {
    /// `covariates` index into `dataset.covariate_names`. Centering and scaling
    /// for the power terms are taken from `dataset`.
    pub fn new(
        dataset: &Dataset,
        include_treatment: bool,
        covariates: Vec<usize>,
        degree: usize,
        interactions: bool,
    ) -> Result<Self> {
        if degree < 1 {
            return Err(Error::Config("basis degree must be at least 1".into()));
        }
        if let Some(&bad) = covariates.iter().find(|&&c| c >= dataset.p()) {
            return Err(Error::Dimension(format!(
                "covariate index {bad} out of range for p = {}",
                dataset.p()
            )));
        }
        let n = dataset.n().max(1) as f64;
        let mut centers = Vec::with_capacity(covariates.len());
        let mut scales = Vec::with_capacity(covariates.len());
        let mut warnings = Vec::new();
        for &c in &covariates {
            let mean = dataset.records.iter().map(|r| r.x[c]).sum::<f64>() / n;
            let var = dataset
                .records
                .iter()
                .map(|r| (r.x[c] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            if degree > 1 && sd == 0.0 {
                warnings.push(format!(
                    "covariate `{}` is constant; its power terms are rank deficient",
                    dataset.covariate_names[c]
                ));
            }
            centers.push(mean);
            scales.push(if sd > 0.0 { sd } else { 1.0 });
        }

        let cname = |c: usize| dataset.covariate_names[c].clone();
        let mut names = vec!["(intercept)".to_string()];
        if include_treatment {
            names.push(dataset.treatment_name.clone());
        }
        names.extend(covariates.iter().map(|&c| cname(c)));
        for power in 2..=degree {
            names.extend(covariates.iter().map(|&c| format!("{}^{power}", cname(c))));
        }
        if interactions && include_treatment {
            names.extend(
                covariates
                    .iter()
                    .map(|&c| format!("{}:{}", dataset.treatment_name, cname(c))),
            );
        }
        Ok(Self {
            include_treatment,
            covariates,
            degree,
            interactions: interactions && include_treatment,
            centers,
            scales,
            names,
            warnings,
        })
    }

    /// Outcome model on every covariate, no interactions.
    pub fn outcome(dataset: &Dataset, degree: usize) -> Result<Self> {
        Self::new(dataset, true, (0..dataset.p()).collect(), degree, false)
    }

    /// Outcome model on treatment only.
    pub fn treatment_only(dataset: &Dataset) -> Result<Self> {
        Self::new(dataset, true, Vec::new(), 1, false)
    }

    /// Propensity model: intercept plus expanded covariates, no treatment.
    pub fn propensity(dataset: &Dataset, degree: usize) -> Result<Self> {
        Self::new(dataset, false, (0..dataset.p()).collect(), degree, false)
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn treatment_column(&self) -> Option<usize> {
        self.include_treatment.then_some(1)
    }

    pub fn write_row(&self, d: f64, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        if self.include_treatment {
            out.push(d);
        }
        out.extend(self.covariates.iter().map(|&c| x[c]));
        for power in 2..=self.degree {
            for (k, &c) in self.covariates.iter().enumerate() {
                let z = (x[c] - self.centers[k]) / self.scales[k];
                out.push(z.powi(power as i32));
            }
        }
        if self.interactions {
            out.extend(self.covariates.iter().map(|&c| d * x[c]));
        }
    }

    pub fn row(&self, d: f64, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ncols());
        self.write_row(d, x, &mut out);
        out
    }

    /// `row(1, x) - row(0, x)`, the design contrast of switching treatment on.
    pub fn contrast(&self, x: &[f64]) -> Vec<f64> {
        let one = self.row(1.0, x);
        let zero = self.row(0.0, x);
        one.iter().zip(&zero).map(|(a, b)| a - b).collect()
    }

    pub fn build(&self, dataset: &Dataset) -> DesignMatrix {
        let q = self.ncols();
        let mut data = Vec::with_capacity(dataset.n() * q);
        let mut row = Vec::with_capacity(q);
        for r in &dataset.records {
            self.write_row(r.d as f64, &r.x, &mut row);
            data.extend_from_slice(&row);
        }
        DesignMatrix {
            n: dataset.n(),
            q,
            data,
            column_names: self.names.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Intercept, treatment and all covariates with power terms up to `degree`.
pub fn expand_basis(dataset: &Dataset, degree: usize) -> Result<DesignMatrix> {
    Ok(DesignSpec::outcome(dataset, degree)?.build(dataset))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub family: Family,
    pub converged: bool,
    pub iterations: usize,
}

impl GlmFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        dot(&self.coefficients, row)
    }

    /// Mean response for one design row.
    pub fn mean(&self, row: &[f64]) -> f64 {
        let eta = self.linear_predictor(row);
        match self.family {
            Family::Gaussian => eta,
            Family::Logistic => expit(eta),
        }
    }
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_weights(n: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Dimension(format!(
            "{} weights for {n} rows",
            weights.len()
        )));
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Domain(format!(
            "weight {i} is {} (must be positive and finite)",
            weights[i]
        )));
    }
    Ok(())
}

/// In-place Cholesky solve of the symmetric positive definite `q × q` system
/// `a · x = b`. On a negligible pivot returns the offending column.
fn cholesky_solve(a: &mut [f64], q: usize, b: &mut [f64]) -> std::result::Result<(), usize> {
    for j in 0..q {
        let diag0 = a[j * q + j];
        let mut d = diag0;
        for k in 0..j {
            d -= a[j * q + k] * a[j * q + k];
        }
        if !(d > PIVOT_TOL * diag0.abs()) || !d.is_finite() {
            return Err(j);
        }
        let l = d.sqrt();
        a[j * q + j] = l;
        for i in (j + 1)..q {
            let mut s = a[i * q + j];
            for k in 0..j {
                s -= a[i * q + k] * a[j * q + k];
            }
            a[i * q + j] = s / l;
        }
    }
    for i in 0..q {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * q + k] * b[k];
        }
        b[i] = s / a[i * q + i];
    }
    for i in (0..q).rev() {
        let mut s = b[i];
        for k in (i + 1)..q {
            s -= a[k * q + i] * b[k];
        }
        b[i] = s / a[i * q + i];
    }
    Ok(())
}

/// Accumulate `XᵀWX` (lower triangle mirrored) and `XᵀWz`.
fn normal_equations(design: &DesignMatrix, w: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let q = design.q;
    let mut a = vec![0.0; q * q];
    let mut b = vec![0.0; q];
    for i in 0..design.n {
        let row = design.row(i);
        let wi = w[i];
        let wz = wi * z[i];
        for j in 0..q {
            let wx = wi * row[j];
            b[j] += row[j] * wz;
            for k in 0..=j {
                a[j * q + k] += wx * row[k];
            }
        }
    }
    for j in 0..q {
        for k in 0..j {
            a[k * q + j] = a[j * q + k];
        }
    }
    (a, b)
}

fn solve(design: &DesignMatrix, mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    cholesky_solve(&mut a, design.q, &mut b).map_err(|j| Error::Singular {
        column: design.column_names[j].clone(),
    })?;
    Ok(b)
}

/// Weighted least squares: one solve of `XᵀWX β = XᵀWy`.
pub fn fit_weighted_linear(
    design: &DesignMatrix,
    response: &[f64],
    weights: &[f64],
) -> Result<GlmFit> {
    if response.len() != design.n {
        return Err(Error::Dimension(format!(
            "{} responses for {} rows",
            response.len(),
            design.n
        )));
    }
    check_weights(design.n, weights)?;
    let (a, b) = normal_equations(design, weights, response);
    let coefficients = solve(design, a, b)?;
    Ok(GlmFit {
        coefficients,
        family: Family::Gaussian,
        converged: true,
        iterations: 1,
    })
}

fn bernoulli_deviance(response: &[f64], weights: &[f64], eta: &[f64]) -> f64 {
    // -2 Σ w [y η - log(1 + e^η)], computed without overflow.
    let mut s = 0.0;
    for i in 0..eta.len() {
        let e = eta[i];
        let log1p_exp = if e > 0.0 {
            e + (-e).exp().ln_1p()
        } else {
            e.exp().ln_1p()
        };
        s += weights[i] * (response[i] * e - log1p_exp);
    }
    -2.0 * s
}

/// Weighted maximum-likelihood logistic regression by Newton–Raphson (IRLS).
///
/// Converged means the relative deviance change dropped below
/// [`IRLS_DEVIANCE_TOL`] and the largest coefficient update below
/// [`IRLS_COEF_TOL`]. Running out of iterations is not an error; the fit is
/// returned with `converged = false`.
pub fn fit_weighted_logistic(
    design: &DesignMatrix,
    response: &[f64],
    weights: &[f64],
) -> Result<GlmFit> {
    let n = design.n;
    let q = design.q;
    if response.len() != n {
        return Err(Error::Dimension(format!(
            "{} responses for {n} rows",
            response.len()
        )));
    }
    if let Some(i) = response.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Domain(format!(
            "logistic response {i} is {} (must be 0 or 1)",
            response[i]
        )));
    }
    check_weights(n, weights)?;

    let linear = |beta: &[f64]| -> Vec<f64> { (0..n).map(|i| dot(design.row(i), beta)).collect() };

    let mut beta = vec![0.0; q];
    let mut eta = vec![0.0; n];
    let mut deviance = bernoulli_deviance(response, weights, &eta);
    let mut converged = false;
    let mut iterations = 0;
    let mut working = vec![0.0; n];
    let mut resid = vec![0.0; n];

    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        for i in 0..n {
            let mu = expit(eta[i]);
            let v = mu * (1.0 - mu);
            working[i] = weights[i] * v;
            // (y - μ) / v so that XᵀW'r is the weighted score.
            resid[i] = if v > 0.0 { (response[i] - mu) / v } else { 0.0 };
        }
        let (h, g) = normal_equations(design, &working, &resid);
        let step = solve(design, h, g)?;

        let mut scale = 1.0;
        let (new_beta, new_eta, new_dev) = loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let cand_eta = linear(&cand);
            let cand_dev = bernoulli_deviance(response, weights, &cand_eta);
            if cand_dev <= deviance * (1.0 + 1e-12) + 1e-12 || scale < 1e-3 {
                break (cand, cand_eta, cand_dev);
            }
            scale *= 0.5;
        };

        if let Some((j, _)) = new_beta
            .iter()
            .enumerate()
            .filter(|(_, b)| b.abs() > COEF_CAP)
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        {
            return Err(Error::Separation {
                covariate: design.column_names[j].clone(),
            });
        }

        let max_update = beta
            .iter()
            .zip(&new_beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let rel_dev = (new_dev - deviance).abs() / (new_dev.abs() + 0.1);
        beta = new_beta;
        eta = new_eta;
        deviance = new_dev;
        if rel_dev < IRLS_DEVIANCE_TOL && max_update < IRLS_COEF_TOL {
            converged = true;
            break;
        }
    }

    Ok(GlmFit {
        coefficients: beta,
        family: Family::Logistic,
        converged,
        iterations,
    })
}

pub fn predict(fit: &GlmFit, design: &DesignMatrix) -> Result<Vec<f64>> {
    if design.q != fit.coefficients.len() {
        return Err(Error::Dimension(format!(
            "design has {} columns, fit has {} coefficients",
            design.q,
            fit.coefficients.len()
        )));
    }
    Ok((0..design.n).map(|i| fit.mean(design.row(i))).collect())
}
