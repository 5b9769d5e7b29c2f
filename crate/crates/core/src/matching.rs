//! Greedy nearest-neighbour matching on the propensity score.
//!
//! Treated units are visited in descending score order (ties: lower row
//! first). Each takes its `ratio` closest available controls by absolute score
//! distance, ties going to the lower row index.

use std::collections::BTreeSet;
use std::ops::Bound;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::propensity::PropensityFit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchSettings {
    pub ratio: usize,
    pub with_replacement: bool,
    pub caliper: Option<f64>,
}

impl Default for MatchSettings {
    fn default() -> Self {
        Self {
            ratio: 1,
            with_replacement: false,
            caliper: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated: usize,
    pub control: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    /// Treated rows dropped because no control fell inside the caliper.
    pub unmatched_treated: Vec<usize>,
    /// Original row indices of the trimmed sample, ascending.
    pub kept_rows: Vec<usize>,
    pub trimmed_dataset: Dataset,
}

type Key = (OrderedFloat<f64>, usize);

fn nearest(pool: &BTreeSet<Key>, t: f64) -> Option<(Key, f64)> {
    let below = pool
        .range(..=(OrderedFloat(t), usize::MAX))
        .next_back()
        .and_then(|&(s, _)| pool.range((s, 0)..).next().copied());
    let above = pool
        .range((
            Bound::Excluded((OrderedFloat(t), usize::MAX)),
            Bound::Unbounded,
        ))
        .next()
        .copied();
    let cand = |k: Key| (k, (k.0 .0 - t).abs());
    match (below.map(cand), above.map(cand)) {
        (Some(a), Some(b)) => {
            if b.1 < a.1 || (b.1 == a.1 && b.0 .1 < a.0 .1) {
                Some(b)
            } else {
                Some(a)
            }
        }
        (a, b) => a.or(b),
    }
}

/// Match on raw scores. `scores` and `treatments` are indexed by row.
pub fn match_scores(
    scores: &[f64],
    treatments: &[u8],
    settings: &MatchSettings,
) -> Result<Vec<MatchedPair>> {
    let (pairs, _) = match_scores_inner(scores, treatments, settings)?;
    Ok(pairs)
}

fn match_scores_inner(
    scores: &[f64],
    treatments: &[u8],
    settings: &MatchSettings,
) -> Result<(Vec<MatchedPair>, Vec<usize>)> {
    if scores.len() != treatments.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} treatments",
            scores.len(),
            treatments.len()
        )));
    }
    if settings.ratio == 0 {
        return Err(Error::Config("matching ratio must be at least 1".into()));
    }
    if let Some(c) = settings.caliper {
        if !(c > 0.0) {
            return Err(Error::Config(format!("caliper must be positive, got {c}")));
        }
    }
    let mut treated: Vec<usize> = (0..scores.len()).filter(|&i| treatments[i] == 1).collect();
    let mut pool: BTreeSet<Key> = (0..scores.len())
        .filter(|&i| treatments[i] != 1)
        .map(|i| (OrderedFloat(scores[i]), i))
        .collect();

    let required = if settings.with_replacement {
        settings.ratio.min(settings.ratio * treated.len())
    } else {
        settings.ratio * treated.len()
    };
    if pool.len() < required {
        return Err(Error::PoolExhausted {
            needed: required - pool.len(),
        });
    }

    treated.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut pairs = Vec::with_capacity(treated.len() * settings.ratio);
    let mut unmatched = Vec::new();
    for &t in &treated {
        let ts = scores[t];
        let mut taken: Vec<Key> = Vec::with_capacity(settings.ratio);
        for _ in 0..settings.ratio {
            let Some((key, dist)) = nearest(&pool, ts) else {
                break;
            };
            if settings.caliper.is_some_and(|c| dist > c) {
                break;
            }
            pool.remove(&key);
            taken.push(key);
            pairs.push(MatchedPair {
                treated: t,
                control: key.1,
                distance: dist,
            });
        }
        if taken.is_empty() {
            unmatched.push(t);
        }
        if settings.with_replacement {
            pool.extend(taken);
        }
    }
    Ok((pairs, unmatched))
}

pub fn nearest_neighbor_match(
    fit: &PropensityFit,
    dataset: &Dataset,
    settings: &MatchSettings,
) -> Result<MatchResult> {
    match_dataset(&fit.scores, dataset, settings)
}

pub fn match_dataset(
    scores: &[f64],
    dataset: &Dataset,
    settings: &MatchSettings,
) -> Result<MatchResult> {
    let (pairs, unmatched_treated) = match_scores_inner(scores, &dataset.treatments(), settings)?;
    let mut keep = vec![false; dataset.n()];
    for p in &pairs {
        keep[p.treated] = true;
        keep[p.control] = true;
    }
    let kept_rows: Vec<usize> = (0..dataset.n()).filter(|&i| keep[i]).collect();
    let trimmed_dataset = dataset.subset(&kept_rows);
    Ok(MatchResult {
        pairs,
        unmatched_treated,
        kept_rows,
        trimmed_dataset,
    })
}

/// `treated_row,control_row,distance`
pub fn write_pairs_csv<W: std::io::Write>(pairs: &[MatchedPair], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["treated_row", "control_row", "distance"])?;
    for p in pairs {
        w.write_record([
            p.treated.to_string(),
            p.control.to_string(),
            p.distance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Absolute standardized mean difference of `values` between arms, using the
/// pooled within-arm standard deviation.
pub fn standardized_mean_difference(values: &[f64], treatments: &[u8]) -> f64 {
    let arm = |flag: u8| {
        let v: Vec<f64> = values
            .iter()
            .zip(treatments)
            .filter(|(_, &d)| (d == 1) == (flag == 1))
            .map(|(x, _)| *x)
            .collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, var)
    };
    let (m1, v1) = arm(1);
    let (m0, v0) = arm(0);
    let pooled = ((v1 + v0) / 2.0).sqrt();
    if pooled == 0.0 {
        return if m1 == m0 { 0.0 } else { f64::INFINITY };
    }
    (m1 - m0).abs() / pooled
}
