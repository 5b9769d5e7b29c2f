#![allow(dead_code)]

use bdr_core::{DesignMatrix, SeedStream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    SeedStream::new(seed).rng()
}

pub fn names(q: usize) -> Vec<String> {
    let mut v = vec!["(intercept)".to_string()];
    v.extend((1..q).map(|j| format!("x{j}")));
    v
}

pub fn to_matrix(design: &DesignMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(design.nrows(), design.ncols(), |i, j| design.row(i)[j])
}

/// Normal-equations oracle via LU.
pub fn wls_oracle(design: &DesignMatrix, y: &[f64], w: &[f64]) -> Vec<f64> {
    let x = to_matrix(design);
    let wd = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let xtw = x.transpose() * wd;
    let a = &xtw * &x;
    let b = xtw * DVector::from_column_slice(y);
    a.lu().solve(&b).expect("oracle solve").as_slice().to_vec()
}

/// Dense Newton–Raphson for the weighted Bernoulli likelihood, iterated until
/// the step is at rounding level.
pub fn logistic_oracle(design: &DesignMatrix, y: &[f64], w: &[f64]) -> Vec<f64> {
    let x = to_matrix(design);
    let n = x.nrows();
    let mut beta = DVector::zeros(x.ncols());
    for _ in 0..500 {
        let eta = &x * &beta;
        let mu: Vec<f64> = eta.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect();
        let grad = x.transpose() * DVector::from_fn(n, |i, _| w[i] * (y[i] - mu[i]));
        let h = x.transpose()
            * DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    w[i] * mu[i] * (1.0 - mu[i])
                } else {
                    0.0
                }
            })
            * &x;
        let step = h.lu().solve(&grad).expect("oracle hessian");
        beta += &step;
        if step.amax() < 1e-15 {
            break;
        }
    }
    beta.as_slice().to_vec()
}

/// Random design with intercept and `q - 1` standard-normal covariates.
pub fn random_design(r: &mut ChaCha8Rng, n: usize, q: usize) -> DesignMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut row = vec![1.0];
            row.extend((1..q).map(|_| r.random::<f64>() * 4.0 - 2.0));
            row
        })
        .collect();
    DesignMatrix::from_rows(&rows, names(q)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}
