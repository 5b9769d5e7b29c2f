//! Simulation study: one confounded data-generating process and the five
//! OR / DR configurations compared on it.
//!
//! ```text
//! X ~ Normal(0, x_scale²)
//! D ~ Bernoulli(expit(alpha0 + alpha1·X))
//! Y ~ Normal(beta0 + beta1·D + beta2·X, y_noise_scale²)
//! ```
//!
//! Scales are standard deviations. The defaults (`√10`, `√5`) read the
//! second Normal parameter as a variance; see the README for the calibration
//! that fixed this reading.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes_boot::KappaSource;
use crate::data::{Dataset, ObservationRecord};
use crate::error::{Error, Result};
use crate::estimators::{bayes_regression_ate, TreatmentPrior};
use crate::glm::{expit, DesignSpec};
use crate::propensity::{clamp_score, estimate_propensity, kappa_from_scores};
use crate::stream::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Standard deviation of X.
    pub x_scale: f64,
    /// Standard deviation of the outcome noise.
    pub y_noise_scale: f64,
    pub n: usize,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            alpha0: 2.0,
            alpha1: 0.2,
            beta0: 10.0,
            beta1: 5.0,
            beta2: 0.2,
            x_scale: 10f64.sqrt(),
            y_noise_scale: 5f64.sqrt(),
            n: 1000,
        }
    }
}

impl DgpParams {
    pub fn check(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!(
                "n must be at least 2, got {}",
                self.n
            )));
        }
        if !(self.x_scale > 0.0) || !(self.y_noise_scale >= 0.0) {
            return Err(Error::Config("DGP scales must be positive".into()));
        }
        Ok(())
    }

    /// The true ATE.
    pub fn truth(&self) -> f64 {
        self.beta1
    }
}

/// Units are drawn one at a time as `(x, d, y)` from `rng`.
pub fn generate_dgp<R: Rng + ?Sized>(params: &DgpParams, rng: &mut R) -> Dataset {
    let records = (0..params.n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            let x = params.x_scale * z;
            let p = expit(params.alpha0 + params.alpha1 * x);
            let d = u8::from(rng.random::<f64>() < p);
            let e: f64 = StandardNormal.sample(rng);
            let y = params.beta0
                + params.beta1 * d as f64
                + params.beta2 * x
                + params.y_noise_scale * e;
            ObservationRecord::new(y, d, vec![x])
        })
        .collect();
    Dataset::new(records, vec!["x".into()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimConfiguration {
    /// Correct outcome model.
    BOR1,
    /// Outcome model without X.
    BOR2,
    /// Outcome model without X, κ from the correct propensity model.
    BDR1,
    /// Correct outcome model, κ from Uniform(0,1) scores.
    BDR2,
    /// Outcome model without X, κ from Uniform(0,1) scores.
    BDR3,
}

impl SimConfiguration {
    pub const ALL: [SimConfiguration; 5] =
        [Self::BOR1, Self::BOR2, Self::BDR1, Self::BDR2, Self::BDR3];

    pub fn name(&self) -> &'static str {
        match self {
            Self::BOR1 => "BOR1",
            Self::BOR2 => "BOR2",
            Self::BDR1 => "BDR1",
            Self::BDR2 => "BDR2",
            Self::BDR3 => "BDR3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// `L = M` posterior refits / ATE samples per run.
    pub reps: usize,
    pub resample_v: usize,
    pub prior: Option<TreatmentPrior>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            reps: 200,
            resample_v: 1000,
            prior: Some(TreatmentPrior::normal(5.0, 1.0, 1.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub name: String,
    pub average_estimate: f64,
    pub empirical_variance: f64,
    pub mse: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimates: Vec<f64>,
}

impl SimRow {
    /// Variance uses the `1/R` divisor; `mse` is the mean squared error
    /// computed directly from the estimates.
    pub fn from_estimates(name: &str, estimates: Vec<f64>, truth: f64) -> Self {
        let r = estimates.len() as f64;
        let average_estimate = estimates.iter().sum::<f64>() / r;
        let empirical_variance = estimates
            .iter()
            .map(|e| (e - average_estimate).powi(2))
            .sum::<f64>()
            / r;
        let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / r;
        Self {
            name: name.to_string(),
            average_estimate,
            empirical_variance,
            mse,
            estimates,
        }
    }

    pub fn bias(&self, truth: f64) -> f64 {
        self.average_estimate - truth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub runs: usize,
    pub n: usize,
    pub truth: f64,
    pub rows: Vec<SimRow>,
}

impl SimulationReport {
    pub fn row(&self, name: &str) -> Option<&SimRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn without_estimates(mut self) -> Self {
        for r in &mut self.rows {
            r.estimates.clear();
        }
        self
    }
}

/// Posterior-mean ATE of every configuration on one generated dataset.
pub fn run_once(params: &DgpParams, config: &SimConfig, stream: SeedStream) -> Result<[f64; 5]> {
    let data = generate_dgp(params, &mut stream.child("data", 0).rng());
    data.require_valid()?;

    let full = DesignSpec::outcome(&data, 1)?;
    let no_x = DesignSpec::treatment_only(&data)?;
    let ps = estimate_propensity(&data, 1)?;

    let mut urng = stream.child("random-ps", 0).rng();
    let random_scores: Vec<f64> = (0..data.n())
        .map(|_| clamp_score(urng.random::<f64>()))
        .collect();
    let random_kappa = kappa_from_scores(&data.treatments(), &random_scores)?;

    let mut out = [0.0; 5];
    for (slot, cfg) in SimConfiguration::ALL.iter().enumerate() {
        let (spec, kappa) = match cfg {
            SimConfiguration::BOR1 => (&full, KappaSource::None),
            SimConfiguration::BOR2 => (&no_x, KappaSource::None),
            SimConfiguration::BDR1 => (&no_x, KappaSource::Fixed(&ps.kappa)),
            SimConfiguration::BDR2 => (&full, KappaSource::Fixed(&random_kappa)),
            SimConfiguration::BDR3 => (&no_x, KappaSource::Fixed(&random_kappa)),
        };
        let (ate, _) = bayes_regression_ate(
            &data,
            spec,
            kappa,
            config.reps,
            config.resample_v,
            config.prior.as_ref(),
            stream.child(cfg.name(), 0),
        )?;
        out[slot] = ate.mean;
    }
    Ok(out)
}

pub fn run_simulation_study(
    runs: usize,
    params: &DgpParams,
    config: &SimConfig,
    stream: SeedStream,
) -> Result<SimulationReport> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    params.check()?;
    if config.reps == 0 || config.resample_v == 0 {
        return Err(Error::Config("reps and V must be at least 1".into()));
    }
    if let Some(p) = &config.prior {
        p.on_column(1).check()?;
    }

    let results: Vec<Result<[f64; 5]>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            run_once(params, config, stream.child("run", r as u64)).map_err(|e| Error::RunFailed {
                run: r,
                source: Box::new(e),
            })
        })
        .collect();
    let per_run = results.into_iter().collect::<Result<Vec<_>>>()?;

    let truth = params.truth();
    let rows = SimConfiguration::ALL
        .iter()
        .enumerate()
        .map(|(slot, cfg)| {
            SimRow::from_estimates(cfg.name(), per_run.iter().map(|r| r[slot]).collect(), truth)
        })
        .collect();
    Ok(SimulationReport {
        runs,
        n: params.n,
        truth,
        rows,
    })
}
