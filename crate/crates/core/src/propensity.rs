//! Propensity score estimation, inverse-probability κ weights and overlap checks.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_logistic, DesignSpec, GlmFit};

/// Scores are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]` before they are
/// turned into weights.
pub const SCORE_CLAMP: f64 = 1e-6;
pub const OVERLAP_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    pub glm: GlmFit,
    pub design: DesignSpec,
    /// Clamped fitted probabilities of treatment.
    pub scores: Vec<f64>,
    pub kappa: Vec<f64>,
}

pub fn clamp_score(p: f64) -> f64 {
    p.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

/// `1/score` for treated units, `1/(1 - score)` for controls.
pub fn kappa_weight(d: u8, score: f64) -> Result<f64> {
    if !(score > 0.0 && score < 1.0) {
        return Err(Error::Domain(format!(
            "propensity score {score} is outside (0, 1)"
        )));
    }
    Ok(match d {
        1 => 1.0 / score,
        0 => 1.0 / (1.0 - score),
        other => {
            return Err(Error::Domain(format!(
                "treatment value {other} is not 0 or 1"
            )))
        }
    })
}

pub fn kappa_from_scores(treatments: &[u8], scores: &[f64]) -> Result<Vec<f64>> {
    if treatments.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} treatments for {} scores",
            treatments.len(),
            scores.len()
        )));
    }
    treatments
        .iter()
        .zip(scores)
        .map(|(&d, &s)| kappa_weight(d, s))
        .collect()
}

/// Unit-weight logistic propensity model on the degree-`degree` basis.
pub fn estimate_propensity(dataset: &Dataset, degree: usize) -> Result<PropensityFit> {
    estimate_propensity_weighted(dataset, degree, &vec![1.0; dataset.n()])
}

pub fn estimate_propensity_weighted(
    dataset: &Dataset,
    degree: usize,
    weights: &[f64],
) -> Result<PropensityFit> {
    dataset.require_valid()?;
    let spec = DesignSpec::propensity(dataset, degree)?;
    estimate_with_spec(dataset, spec, weights)
}

/// Fit with a fixed basis; used when refitting on reweighted data so the
/// standardisation of power terms stays that of the original sample.
pub fn estimate_with_spec(
    dataset: &Dataset,
    spec: DesignSpec,
    weights: &[f64],
) -> Result<PropensityFit> {
    let design = spec.build(dataset);
    let response: Vec<f64> = dataset.records.iter().map(|r| r.d as f64).collect();
    let glm = fit_weighted_logistic(&design, &response, weights)?;
    let scores: Vec<f64> = (0..design.nrows())
        .map(|i| clamp_score(glm.mean(design.row(i))))
        .collect();
    let kappa = kappa_from_scores(&dataset.treatments(), &scores)?;
    Ok(PropensityFit {
        glm,
        design: spec,
        scores,
        kappa,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRange {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    pub treated: Option<ArmRange>,
    pub control: Option<ArmRange>,
    /// `[max of arm minima, min of arm maxima]`; empty when `lower > upper`.
    pub support_lower: f64,
    pub support_upper: f64,
    pub off_support: usize,
    pub off_support_fraction: f64,
    /// Equal-width bins on (0, 1).
    pub treated_hist: Vec<usize>,
    pub control_hist: Vec<usize>,
}

fn arm_range(scores: impl Iterator<Item = f64>) -> Option<ArmRange> {
    scores.fold(None, |acc, s| match acc {
        None => Some(ArmRange {
            min: s,
            max: s,
            count: 1,
        }),
        Some(a) => Some(ArmRange {
            min: a.min.min(s),
            max: a.max.max(s),
            count: a.count + 1,
        }),
    })
}

pub fn overlap_report(fit: &PropensityFit, dataset: &Dataset) -> OverlapSummary {
    overlap_from_scores(&fit.scores, &dataset.treatments())
}

pub fn overlap_from_scores(scores: &[f64], treatments: &[u8]) -> OverlapSummary {
    let pairs = || scores.iter().copied().zip(treatments.iter().copied());
    let treated = arm_range(pairs().filter(|p| p.1 == 1).map(|p| p.0));
    let control = arm_range(pairs().filter(|p| p.1 != 1).map(|p| p.0));
    let (lower, upper) = match (&treated, &control) {
        (Some(t), Some(c)) => (t.min.max(c.min), t.max.min(c.max)),
        _ => (f64::INFINITY, f64::NEG_INFINITY),
    };
    let off_support = scores.iter().filter(|&&s| s < lower || s > upper).count();
    let mut treated_hist = vec![0; OVERLAP_BINS];
    let mut control_hist = vec![0; OVERLAP_BINS];
    for (s, d) in pairs() {
        let bin = ((s * OVERLAP_BINS as f64).floor().max(0.0) as usize).min(OVERLAP_BINS - 1);
        if d == 1 {
            treated_hist[bin] += 1;
        } else {
            control_hist[bin] += 1;
        }
    }
    OverlapSummary {
        treated,
        control,
        support_lower: lower,
        support_upper: upper,
        off_support,
        off_support_fraction: if scores.is_empty() {
            0.0
        } else {
            off_support as f64 / scores.len() as f64
        },
        treated_hist,
        control_hist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa_weight(1, 0.5).unwrap(), 2.0);
        assert_eq!(kappa_weight(0, 0.5).unwrap(), 2.0);
        assert_eq!(kappa_weight(0, 0.2).unwrap(), 1.25);
        assert!((kappa_weight(1, 0.1).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(kappa_weight(1, 0.0), Err(Error::Domain(_))));
        assert!(matches!(kappa_weight(0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(kappa_weight(1, f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn clamping_keeps_kappa_finite() {
        let s = clamp_score(1.0);
        assert!(s < 1.0);
        let k = kappa_weight(0, s).unwrap();
        assert!(k.is_finite() && (k - 1e6).abs() < 1.0);
    }

    #[test]
    fn overlap_uniform_arms_all_on_support() {
        let scores: Vec<f64> = (0..40).map(|i| 0.025 + 0.05 * (i / 2) as f64).collect();
        let d: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let o = overlap_from_scores(&scores, &d);
        assert_eq!(o.off_support, 0);
        assert_eq!(o.treated_hist, vec![1; 20]);
        assert_eq!(o.control_hist, vec![1; 20]);
    }

    #[test]
    fn overlap_disjoint_flags_everyone() {
        let scores = [0.1, 0.2, 0.3, 0.6, 0.7, 0.9];
        let d = [0, 0, 0, 1, 1, 1];
        let o = overlap_from_scores(&scores, &d);
        assert_eq!(o.off_support, 6);
        assert_eq!(o.off_support_fraction, 1.0);
    }
}
