//! OR, IPW, DR and naïve estimators, each as a Bayesian-bootstrap posterior
//! with an optional frequentist bootstrap comparator.

use rand::distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes_boot::{
    draw_dirichlet_weights, muliere_secchi_resample, posterior_predictive_ate, posterior_sample,
    AteDistribution, KappaSource, PosteriorDraws, PriorKind, PriorSpec, WeightScheme,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{dot, fit_weighted_linear, DesignSpec};
use crate::matching::{match_dataset, MatchSettings};
use crate::propensity::{estimate_propensity, estimate_with_spec, PropensityFit};
use crate::stream::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EstimatorKind {
    Or,
    Ipw,
    Dr,
    Naive,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "or" => Ok(Self::Or),
            "ipw" => Ok(Self::Ipw),
            "dr" => Ok(Self::Dr),
            "naive" => Ok(Self::Naive),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReportKind {
    Or,
    Ipw,
    Dr,
    NaiveMatched,
    NaiveFull,
}

impl ReportKind {
    pub fn label(&self) -> &'static str {
        match self {
            ReportKind::Or => "OR",
            ReportKind::Ipw => "IPW",
            ReportKind::Dr => "DR",
            ReportKind::NaiveMatched => "Naive (matched sample)",
            ReportKind::NaiveFull => "Naive (full sample)",
        }
    }
}

/// Prior on the treatment coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreatmentPrior {
    pub kind: PriorKind,
    pub mean: f64,
    pub sd: f64,
    /// Measure of faith.
    pub k: f64,
}

impl TreatmentPrior {
    pub fn normal(mean: f64, sd: f64, k: f64) -> Self {
        Self {
            kind: PriorKind::Normal,
            mean,
            sd,
            k,
        }
    }

    pub fn on_column(&self, column: usize) -> PriorSpec {
        PriorSpec {
            kind: self.kind,
            target_coefficient: column,
            mean: self.mean,
            sd: self.sd,
            k: self.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// `M`: posterior refits and ATE samples (the two are equal).
    pub reps: usize,
    /// `V`: covariate vectors resampled per ATE sample.
    pub resample_v: usize,
    pub prior: Option<TreatmentPrior>,
    pub seed: u64,
    pub outcome_degree: usize,
    pub ps_degree: usize,
    /// Refit the propensity model inside every replicate instead of fixing κ.
    pub reestimate_ps: bool,
    /// Estimate on the matched sample when set.
    pub matching: Option<MatchSettings>,
    /// `B` for the frequentist comparator; `None` skips it.
    pub frequentist_reps: Option<usize>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            reps: 1000,
            resample_v: 1000,
            prior: None,
            seed: 0,
            outcome_degree: 1,
            ps_degree: 1,
            reestimate_ps: false,
            matching: None,
            frequentist_reps: None,
        }
    }
}

impl EstimatorConfig {
    pub fn check(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("bootstrap reps M must be at least 1".into()));
        }
        if self.resample_v == 0 {
            return Err(Error::Config(
                "covariate resample size V must be at least 1".into(),
            ));
        }
        if let Some(p) = &self.prior {
            p.on_column(0).check()?;
        }
        if self.frequentist_reps == Some(0) {
            return Err(Error::Config(
                "frequentist bootstrap needs at least 1 resample".into(),
            ));
        }
        Ok(())
    }

    pub fn stream(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequentistEstimate {
    pub point: f64,
    pub se: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub kind: ReportKind,
    pub label: String,
    pub n: usize,
    pub n_treated: usize,
    pub bayes: AteDistribution,
    pub frequentist: Option<FrequentistEstimate>,
}

/// The analysis sample with propensity scores aligned to its rows.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub data: Dataset,
    /// Absent only for the unadjusted full-sample naïve estimator.
    pub propensity: Option<PropensityFit>,
    /// Original row indices when the sample was trimmed by matching.
    pub kept_rows: Option<Vec<usize>>,
}

impl PreparedSample {
    pub fn propensity(&self) -> Result<&PropensityFit> {
        self.propensity
            .as_ref()
            .ok_or_else(|| Error::Config("estimator needs a propensity model".into()))
    }
}

/// Fit the propensity model on the full data and, when `matching` is given,
/// trim to the matched sample and refit the same model there, so scores and κ
/// describe assignment within the analysed rows.
pub fn prepare_sample(
    dataset: &Dataset,
    ps_degree: usize,
    matching: Option<&MatchSettings>,
) -> Result<PreparedSample> {
    dataset.require_valid()?;
    let ps = estimate_propensity(dataset, ps_degree)?;
    let Some(settings) = matching else {
        return Ok(PreparedSample {
            data: dataset.clone(),
            propensity: Some(ps),
            kept_rows: None,
        });
    };
    let m = match_dataset(&ps.scores, dataset, settings)?;
    m.trimmed_dataset.require_valid()?;
    let ones = vec![1.0; m.trimmed_dataset.n()];
    let propensity = estimate_with_spec(&m.trimmed_dataset, ps.design, &ones)?;
    Ok(PreparedSample {
        data: m.trimmed_dataset,
        propensity: Some(propensity),
        kept_rows: Some(m.kept_rows),
    })
}

/// Posterior draws → optional prior mixing → posterior predictive ATE.
pub fn bayes_regression_ate(
    dataset: &Dataset,
    spec: &DesignSpec,
    kappa: KappaSource<'_>,
    reps: usize,
    resample_v: usize,
    prior: Option<&TreatmentPrior>,
    stream: SeedStream,
) -> Result<(AteDistribution, PosteriorDraws)> {
    let pn = posterior_sample(
        dataset,
        spec,
        kappa,
        reps,
        WeightScheme::Dirichlet,
        stream.child("pn", 0),
    )?;
    let pm = match prior {
        Some(p) => {
            let column = spec
                .treatment_column()
                .ok_or_else(|| Error::Config("prior needs a treatment column".into()))?;
            muliere_secchi_resample(&pn, &p.on_column(column), reps, stream.child("pm", 0))?
        }
        None => pn,
    };
    let ate =
        posterior_predictive_ate(&pm, dataset, spec, resample_v, reps, stream.child("ppd", 0))?;
    Ok((ate, pm))
}

/// Plug-in regression ATE: weighted fit, then the mean contrast over all rows.
pub fn regression_point(
    dataset: &Dataset,
    spec: &DesignSpec,
    weights: Option<&[f64]>,
) -> Result<f64> {
    let design = spec.build(dataset);
    let ones;
    let w = match weights {
        Some(w) => w,
        None => {
            ones = vec![1.0; dataset.n()];
            &ones
        }
    };
    let fit = fit_weighted_linear(&design, &dataset.outcomes(), w)?;
    let n = dataset.n() as f64;
    Ok(dataset
        .records
        .iter()
        .map(|r| dot(&spec.contrast(&r.x), &fit.coefficients))
        .sum::<f64>()
        / n)
}

/// Horvitz–Thompson `(1/n) Σ wᵢ [dᵢyᵢ/πᵢ − (1−dᵢ)yᵢ/(1−πᵢ)]`.
pub fn ipw_sum(dataset: &Dataset, scores: &[f64], weights: Option<&[f64]>) -> f64 {
    let n = dataset.n() as f64;
    dataset
        .records
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (r, &p))| {
            let w = weights.map_or(1.0, |w| w[i]);
            let term = if r.treated() {
                r.y / p
            } else {
                -r.y / (1.0 - p)
            };
            w * term
        })
        .sum::<f64>()
        / n
}

fn report(kind: ReportKind, data: &Dataset, bayes: AteDistribution) -> EstimateReport {
    EstimateReport {
        kind,
        label: kind.label().to_string(),
        n: data.n(),
        n_treated: data.n_treated(),
        bayes,
        frequentist: None,
    }
}

fn kappa_source<'a>(
    sample: &'a PreparedSample,
    config: &EstimatorConfig,
) -> Result<KappaSource<'a>> {
    let ps = sample.propensity()?;
    Ok(if config.reestimate_ps {
        KappaSource::Reestimate(ps)
    } else {
        KappaSource::Fixed(&ps.kappa)
    })
}

fn or_on(sample: &PreparedSample, config: &EstimatorConfig) -> Result<EstimateReport> {
    let spec = DesignSpec::outcome(&sample.data, config.outcome_degree)?;
    let (ate, _) = bayes_regression_ate(
        &sample.data,
        &spec,
        KappaSource::None,
        config.reps,
        config.resample_v,
        config.prior.as_ref(),
        config.stream().child("or", 0),
    )?;
    Ok(report(ReportKind::Or, &sample.data, ate))
}

fn ipw_on(sample: &PreparedSample, config: &EstimatorConfig) -> Result<EstimateReport> {
    let stream = config.stream().child("ipw", 0);
    let data = &sample.data;
    let ps = sample.propensity()?;
    let n = data.n();
    let results: Vec<Result<f64>> = (0..config.reps)
        .into_par_iter()
        .map(|l| {
            let mut rng = stream.child("pn", l as u64).rng();
            let w = draw_dirichlet_weights(n, &mut rng);
            if config.reestimate_ps {
                let refit =
                    estimate_with_spec(data, ps.design.clone(), w.as_slice()).map_err(|e| {
                        Error::ReplicateFailed {
                            index: l,
                            source: Box::new(e),
                        }
                    })?;
                Ok(ipw_sum(data, &refit.scores, Some(w.as_slice())))
            } else {
                Ok(ipw_sum(data, &ps.scores, Some(w.as_slice())))
            }
        })
        .collect();
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(report(
        ReportKind::Ipw,
        data,
        AteDistribution::from_samples(samples),
    ))
}

fn dr_on(sample: &PreparedSample, config: &EstimatorConfig) -> Result<EstimateReport> {
    let spec = DesignSpec::outcome(&sample.data, config.outcome_degree)?;
    let (ate, _) = bayes_regression_ate(
        &sample.data,
        &spec,
        kappa_source(sample, config)?,
        config.reps,
        config.resample_v,
        config.prior.as_ref(),
        config.stream().child("dr", 0),
    )?;
    Ok(report(ReportKind::Dr, &sample.data, ate))
}

fn naive_on(data: &Dataset, kind: ReportKind, config: &EstimatorConfig) -> Result<EstimateReport> {
    let spec = DesignSpec::treatment_only(data)?;
    let tag = if kind == ReportKind::NaiveMatched {
        "naive-matched"
    } else {
        "naive-full"
    };
    let (ate, _) = bayes_regression_ate(
        data,
        &spec,
        KappaSource::None,
        config.reps,
        config.resample_v,
        config.prior.as_ref(),
        config.stream().child(tag, 0),
    )?;
    Ok(report(kind, data, ate))
}

fn with_frequentist(
    mut rep: EstimateReport,
    sample: &PreparedSample,
    config: &EstimatorConfig,
    kind: EstimatorKind,
) -> Result<EstimateReport> {
    if let Some(b) = config.frequentist_reps {
        rep.frequentist = Some(frequentist_on(sample, config, kind, b)?);
    }
    Ok(rep)
}

pub fn estimate_or(dataset: &Dataset, config: &EstimatorConfig) -> Result<EstimateReport> {
    config.check()?;
    let sample = prepare_sample(dataset, config.ps_degree, config.matching.as_ref())?;
    with_frequentist(or_on(&sample, config)?, &sample, config, EstimatorKind::Or)
}

pub fn estimate_ipw(dataset: &Dataset, config: &EstimatorConfig) -> Result<EstimateReport> {
    config.check()?;
    let sample = prepare_sample(dataset, config.ps_degree, config.matching.as_ref())?;
    with_frequentist(
        ipw_on(&sample, config)?,
        &sample,
        config,
        EstimatorKind::Ipw,
    )
}

pub fn estimate_dr(dataset: &Dataset, config: &EstimatorConfig) -> Result<EstimateReport> {
    config.check()?;
    let sample = prepare_sample(dataset, config.ps_degree, config.matching.as_ref())?;
    with_frequentist(dr_on(&sample, config)?, &sample, config, EstimatorKind::Dr)
}

/// Intercept + treatment regression, on the matched sample when
/// `use_matching` (using `config.matching` or the default settings).
pub fn estimate_naive(
    dataset: &Dataset,
    config: &EstimatorConfig,
    use_matching: bool,
) -> Result<EstimateReport> {
    config.check()?;
    dataset.require_valid()?;
    let (sample, kind) = if use_matching {
        let settings = config.matching.unwrap_or_default();
        (
            prepare_sample(dataset, config.ps_degree, Some(&settings))?,
            ReportKind::NaiveMatched,
        )
    } else {
        (
            PreparedSample {
                data: dataset.clone(),
                propensity: None,
                kept_rows: None,
            },
            ReportKind::NaiveFull,
        )
    };
    let rep = naive_on(&sample.data, kind, config)?;
    with_frequentist(rep, &sample, config, EstimatorKind::Naive)
}

/// All five rows: OR, IPW and DR on the configured sample, naïve on matched
/// and full samples.
pub fn estimate_all(
    dataset: &Dataset,
    config: &EstimatorConfig,
    kinds: &[EstimatorKind],
) -> Result<Vec<EstimateReport>> {
    config.check()?;
    let mut out = Vec::new();
    let needs_sample = kinds.iter().any(|k| *k != EstimatorKind::Naive);
    let sample = if needs_sample {
        Some(prepare_sample(
            dataset,
            config.ps_degree,
            config.matching.as_ref(),
        )?)
    } else {
        None
    };
    for kind in kinds {
        match kind {
            EstimatorKind::Or => {
                let s = sample.as_ref().expect("prepared");
                out.push(with_frequentist(or_on(s, config)?, s, config, *kind)?);
            }
            EstimatorKind::Ipw => {
                let s = sample.as_ref().expect("prepared");
                out.push(with_frequentist(ipw_on(s, config)?, s, config, *kind)?);
            }
            EstimatorKind::Dr => {
                let s = sample.as_ref().expect("prepared");
                out.push(with_frequentist(dr_on(s, config)?, s, config, *kind)?);
            }
            EstimatorKind::Naive => {
                out.push(estimate_naive(dataset, config, true)?);
                out.push(estimate_naive(dataset, config, false)?);
            }
        }
    }
    Ok(out)
}

fn point_on(sample: &PreparedSample, config: &EstimatorConfig, kind: EstimatorKind) -> Result<f64> {
    let data = &sample.data;
    let scores_for = |s: &PreparedSample| -> Result<(Vec<f64>, Vec<f64>)> {
        let ps = s.propensity()?;
        if config.reestimate_ps {
            let refit = estimate_with_spec(data, ps.design.clone(), &vec![1.0; data.n()])?;
            Ok((refit.scores, refit.kappa))
        } else {
            Ok((ps.scores.clone(), ps.kappa.clone()))
        }
    };
    match kind {
        EstimatorKind::Or => regression_point(
            data,
            &DesignSpec::outcome(data, config.outcome_degree)?,
            None,
        ),
        EstimatorKind::Naive => regression_point(data, &DesignSpec::treatment_only(data)?, None),
        EstimatorKind::Ipw => {
            let (scores, _) = scores_for(sample)?;
            Ok(ipw_sum(data, &scores, None))
        }
        EstimatorKind::Dr => {
            let (_, kappa) = scores_for(sample)?;
            regression_point(
                data,
                &DesignSpec::outcome(data, config.outcome_degree)?,
                Some(&kappa),
            )
        }
    }
}

fn resample(sample: &PreparedSample, rows: &[usize]) -> PreparedSample {
    let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
    PreparedSample {
        data: sample.data.subset(rows),
        propensity: sample.propensity.as_ref().map(|ps| PropensityFit {
            glm: ps.glm.clone(),
            design: ps.design.clone(),
            scores: pick(&ps.scores),
            kappa: pick(&ps.kappa),
        }),
        kept_rows: None,
    }
}

fn frequentist_on(
    sample: &PreparedSample,
    config: &EstimatorConfig,
    kind: EstimatorKind,
    reps: usize,
) -> Result<FrequentistEstimate> {
    let point = point_on(sample, config, kind)?;
    let stream = config.stream().child("frequentist", kind as u64);
    let n = sample.data.n();
    let pick = Uniform::new(0, n).map_err(|e| Error::Domain(e.to_string()))?;
    let results: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream.child("resample", b as u64).rng();
            let mut attempt = || {
                let rows: Vec<usize> = (0..n).map(|_| pick.sample(&mut rng)).collect();
                let s = resample(sample, &rows);
                s.data.require_valid()?;
                point_on(&s, config, kind)
            };
            attempt()
                .or_else(|_| attempt())
                .map_err(|e| Error::ReplicateFailed {
                    index: b,
                    source: Box::new(e),
                })
        })
        .collect();
    let estimates = results.into_iter().collect::<Result<Vec<_>>>()?;
    let sd = AteDistribution::from_samples(estimates).sd;
    Ok(FrequentistEstimate {
        point,
        se: sd,
        reps,
    })
}

/// Frequentist bootstrap of the point estimator: `B` row resamples of the
/// analysis sample with unit weights.
pub fn frequentist_bootstrap(
    dataset: &Dataset,
    config: &EstimatorConfig,
    kind: EstimatorKind,
) -> Result<FrequentistEstimate> {
    config.check()?;
    let reps = config.frequentist_reps.unwrap_or(1000);
    let sample = prepare_sample(dataset, config.ps_degree, config.matching.as_ref())?;
    frequentist_on(&sample, config, kind, reps)
}
