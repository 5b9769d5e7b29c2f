//! Approximate Bayesian engine.
//!
//! 1. Draw Dirichlet(1, …, 1) observation weights (standardised exponentials),
//!    multiply by the κ weights and refit the Gaussian outcome model; the
//!    refits form the empirical posterior `p_n`.
//! 2. Optionally mix `p_n` with a prior (Muliere–Secchi): draw `m` proposals
//!    from `(k·p0 + L·p_n)/(k + L)`, attach `Gamma((L + k)/m, 1)` weights and
//!    resample proportionally, giving `p_m`.
//! 3. For each ATE sample draw one parameter row and `V` covariate vectors and
//!    average the predicted treated-minus-control contrast.
//!
//! Replicate `i` of every stage draws from `stream.child(<stage>, i)`, so the
//! output does not depend on thread count or scheduling.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Exp1, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{dot, fit_weighted_linear, DesignMatrix, DesignSpec, Family};
use crate::propensity::{estimate_with_spec, PropensityFit};
use crate::stream::SeedStream;

/// Observation weights with mean 1 (sum `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapWeights(pub Vec<f64>);

impl BootstrapWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn draw_dirichlet_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> BootstrapWeights {
    let mut w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    for v in &mut w {
        *v /= mean;
    }
    BootstrapWeights(w)
}

/// How observation weights are generated per replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Dirichlet,
    /// Every weight is 1; each replicate reproduces the plain weighted fit.
    Unit,
}

impl WeightScheme {
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> BootstrapWeights {
        match self {
            WeightScheme::Dirichlet => draw_dirichlet_weights(n, rng),
            WeightScheme::Unit => BootstrapWeights(vec![1.0; n]),
        }
    }
}

/// Source of the inverse-probability weights multiplied into each replicate.
#[derive(Debug, Clone, Copy)]
pub enum KappaSource<'a> {
    /// κ ≡ 1: the plain outcome-regression posterior.
    None,
    /// One κ vector (from an initial propensity fit) reused by every replicate.
    Fixed(&'a [f64]),
    /// Refit the propensity model with the replicate's weights, then use its κ.
    Reestimate(&'a PropensityFit),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DrawLabel {
    /// Empirical posterior from weighted refits.
    PN,
    /// After prior mixing.
    PM,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub draws: Vec<Vec<f64>>,
    pub label: DrawLabel,
    pub family: Family,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|r| r[j]).collect()
    }
}

fn fit_replicate(
    design: &DesignMatrix,
    dataset: &Dataset,
    response: &[f64],
    kappa: KappaSource<'_>,
    w: &BootstrapWeights,
) -> Result<Vec<f64>> {
    let combined: Vec<f64> = match kappa {
        KappaSource::None => w.0.clone(),
        KappaSource::Fixed(k) => w.0.iter().zip(k).map(|(a, b)| a * b).collect(),
        KappaSource::Reestimate(ps) => {
            let refit = estimate_with_spec(dataset, ps.design.clone(), &w.0)?;
            w.0.iter().zip(&refit.kappa).map(|(a, b)| a * b).collect()
        }
    };
    Ok(fit_weighted_linear(design, response, &combined)?.coefficients)
}

/// `L` weighted refits of the Gaussian outcome model (the `p_n` draws).
pub fn posterior_sample(
    dataset: &Dataset,
    spec: &DesignSpec,
    kappa: KappaSource<'_>,
    replicates: usize,
    scheme: WeightScheme,
    stream: SeedStream,
) -> Result<PosteriorDraws> {
    if replicates == 0 {
        return Err(Error::Config(
            "number of posterior replicates must be at least 1".into(),
        ));
    }
    if let KappaSource::Fixed(k) = kappa {
        if k.len() != dataset.n() {
            return Err(Error::Dimension(format!(
                "{} κ weights for {} records",
                k.len(),
                dataset.n()
            )));
        }
    }
    let design = spec.build(dataset);
    let response = dataset.outcomes();
    let n = dataset.n();

    let results: Vec<Result<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|l| {
            let mut rng = stream.child("pn", l as u64).rng();
            let first = fit_replicate(
                &design,
                dataset,
                &response,
                kappa,
                &scheme.draw(n, &mut rng),
            );
            match first {
                Ok(beta) => Ok(beta),
                Err(_) => fit_replicate(
                    &design,
                    dataset,
                    &response,
                    kappa,
                    &scheme.draw(n, &mut rng),
                )
                .map_err(|e| Error::ReplicateFailed {
                    index: l,
                    source: Box::new(e),
                }),
            }
        })
        .collect();

    let draws = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        draws,
        label: DrawLabel::PN,
        family: Family::Gaussian,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Normal,
    PointMass,
}

/// Prior on a single coefficient plus the measure of faith `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub target_coefficient: usize,
    pub mean: f64,
    /// Ignored for [`PriorKind::PointMass`].
    pub sd: f64,
    pub k: f64,
}

impl PriorSpec {
    pub fn normal(target_coefficient: usize, mean: f64, sd: f64, k: f64) -> Self {
        Self {
            kind: PriorKind::Normal,
            target_coefficient,
            mean,
            sd,
            k,
        }
    }

    pub fn point_mass(target_coefficient: usize, value: f64, k: f64) -> Self {
        Self {
            kind: PriorKind::PointMass,
            target_coefficient,
            mean: value,
            sd: 0.0,
            k,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.k >= 1.0) || !self.k.is_finite() {
            return Err(Error::Config(format!(
                "measure of faith k must be ≥ 1, got {}",
                self.k
            )));
        }
        if !self.mean.is_finite() {
            return Err(Error::Config("prior mean must be finite".into()));
        }
        if self.kind == PriorKind::Normal && !(self.sd > 0.0 && self.sd.is_finite()) {
            return Err(Error::Config(format!(
                "prior sd must be positive, got {}",
                self.sd
            )));
        }
        Ok(())
    }
}

/// Prior-mixing output with the intermediate quantities exposed for checks.
#[derive(Debug, Clone)]
pub struct MixingTrace {
    pub draws: PosteriorDraws,
    /// The `Gamma((L + k)/m, 1)` resampling weights, one per proposal.
    pub gamma_weights: Vec<f64>,
    /// Number of proposals that came from the prior component.
    pub prior_proposals: usize,
}

pub fn muliere_secchi_resample(
    pn: &PosteriorDraws,
    prior: &PriorSpec,
    m: usize,
    stream: SeedStream,
) -> Result<PosteriorDraws> {
    Ok(muliere_secchi_trace(pn, prior, m, stream)?.draws)
}

/// Prior-origin proposals copy a uniformly drawn `p_n` row and replace only the
/// target coefficient with a prior draw.
pub fn muliere_secchi_trace(
    pn: &PosteriorDraws,
    prior: &PriorSpec,
    m: usize,
    stream: SeedStream,
) -> Result<MixingTrace> {
    prior.check()?;
    if m == 0 {
        return Err(Error::Config(
            "number of prior-mixing draws must be at least 1".into(),
        ));
    }
    if pn.is_empty() {
        return Err(Error::Config(
            "prior mixing needs at least one posterior draw".into(),
        ));
    }
    let q = pn.draws[0].len();
    if prior.target_coefficient >= q {
        return Err(Error::Dimension(format!(
            "prior targets coefficient {} of {q}",
            prior.target_coefficient
        )));
    }

    let l = pn.len() as f64;
    let prior_prob = prior.k / (prior.k + l);
    let mut rng = stream.rng();
    let pick = Uniform::new(0, pn.len()).expect("nonempty");
    let normal = match prior.kind {
        PriorKind::Normal => {
            Some(Normal::new(prior.mean, prior.sd).map_err(|e| Error::Config(e.to_string()))?)
        }
        PriorKind::PointMass => None,
    };

    let mut proposals = Vec::with_capacity(m);
    let mut prior_proposals = 0;
    for _ in 0..m {
        let from_prior = rng.random::<f64>() < prior_prob;
        let mut row = pn.draws[pick.sample(&mut rng)].clone();
        if from_prior {
            prior_proposals += 1;
            row[prior.target_coefficient] = match &normal {
                Some(dist) => dist.sample(&mut rng),
                None => prior.mean,
            };
        }
        proposals.push(row);
    }

    let gamma =
        Gamma::new((l + prior.k) / m as f64, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let gamma_weights: Vec<f64> = (0..m).map(|_| gamma.sample(&mut rng)).collect();
    let picker = WeightedIndex::new(&gamma_weights)
        .map_err(|e| Error::Domain(format!("gamma weights: {e}")))?;
    let draws = (0..m)
        .map(|_| proposals[picker.sample(&mut rng)].clone())
        .collect();

    Ok(MixingTrace {
        draws: PosteriorDraws {
            draws,
            label: DrawLabel::PM,
            family: pn.family,
        },
        gamma_weights,
        prior_proposals,
    })
}

/// Sampled ATE values with summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteDistribution {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<f64>,
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub credible_interval_95: (f64, f64),
    /// Parameter row used for each sample, when the samples came from draws.
    #[serde(skip)]
    pub parameter_rows: Vec<usize>,
}

/// Linear-interpolation empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl AteDistribution {
    /// `sd` uses the `n - 1` divisor (0 for a single sample); the interval is
    /// the empirical 2.5% / 97.5% quantile pair.
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let count = samples.len();
        let n = count as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = if count > 1 {
            (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let credible_interval_95 = (
            quantile_sorted(&sorted, 0.025),
            quantile_sorted(&sorted, 0.975),
        );
        Self {
            samples,
            count,
            mean,
            sd,
            credible_interval_95,
            parameter_rows: Vec::new(),
        }
    }

    pub fn without_samples(mut self) -> Self {
        self.samples.clear();
        self
    }
}

/// Posterior predictive ATE: `m_samples` values, each averaging the
/// treated-minus-control prediction over `v` resampled covariate vectors.
pub fn posterior_predictive_ate(
    draws: &PosteriorDraws,
    dataset: &Dataset,
    spec: &DesignSpec,
    v: usize,
    m_samples: usize,
    stream: SeedStream,
) -> Result<AteDistribution> {
    if v == 0 || m_samples == 0 {
        return Err(Error::Config("V and M must both be at least 1".into()));
    }
    if draws.is_empty() {
        return Err(Error::Config("no posterior draws to sample from".into()));
    }
    if dataset.n() == 0 {
        return Err(Error::EmptyInput);
    }
    let q = spec.ncols();
    if draws.draws.iter().any(|r| r.len() != q) {
        return Err(Error::Dimension(format!(
            "posterior rows do not have {q} coefficients"
        )));
    }
    let n = dataset.n();
    let rows1: Vec<Vec<f64>> = dataset
        .records
        .iter()
        .map(|r| spec.row(1.0, &r.x))
        .collect();
    let rows0: Vec<Vec<f64>> = dataset
        .records
        .iter()
        .map(|r| spec.row(0.0, &r.x))
        .collect();
    let pick_draw = Uniform::new(0, draws.len()).expect("nonempty");
    let pick_unit = Uniform::new(0, n).expect("nonempty");

    let results: Vec<(usize, f64)> = (0..m_samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream.child("ate", j as u64).rng();
            let row = pick_draw.sample(&mut rng);
            let xi = &draws.draws[row];
            let tau = match draws.family {
                Family::Gaussian => {
                    // Identity link: average the design contrast, then one dot.
                    let mut mean_contrast = vec![0.0; q];
                    for _ in 0..v {
                        let u = pick_unit.sample(&mut rng);
                        for (c, (a, b)) in
                            mean_contrast.iter_mut().zip(rows1[u].iter().zip(&rows0[u]))
                        {
                            *c += a - b;
                        }
                    }
                    let vf = v as f64;
                    mean_contrast.iter_mut().for_each(|c| *c /= vf);
                    dot(&mean_contrast, xi)
                }
                Family::Logistic => {
                    let mut s = 0.0;
                    for _ in 0..v {
                        let u = pick_unit.sample(&mut rng);
                        s += crate::glm::expit(dot(&rows1[u], xi))
                            - crate::glm::expit(dot(&rows0[u], xi));
                    }
                    s / v as f64
                }
            };
            (row, tau)
        })
        .collect();

    let (parameter_rows, samples): (Vec<usize>, Vec<f64>) = results.into_iter().unzip();
    let mut out = AteDistribution::from_samples(samples);
    out.parameter_rows = parameter_rows;
    Ok(out)
}
