mod common;

use bdr_core::data::ObservationRecord;
use bdr_core::estimators::{
    estimate_all, estimate_naive, estimate_or, frequentist_bootstrap, ipw_sum,
};
use bdr_core::glm::{expit, fit_weighted_linear};
use bdr_core::sim::{generate_dgp, run_once, run_simulation_study};
use bdr_core::{
    Dataset, DesignSpec, DgpParams, EstimatorConfig, EstimatorKind, ReportKind, SeedStream,
    SimConfig,
};
use common::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn small_config() -> EstimatorConfig {
    EstimatorConfig {
        reps: 200,
        resample_v: 200,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn ipw_with_true_scores_is_unbiased() {
    let params = DgpParams {
        n: 10_000,
        ..Default::default()
    };
    let estimates: Vec<f64> = (0..200)
        .map(|s| {
            let ds = generate_dgp(&params, &mut rng(700 + s));
            let scores: Vec<f64> = ds
                .records
                .iter()
                .map(|r| expit(2.0 + 0.2 * r.x[0]))
                .collect();
            ipw_sum(&ds, &scores, None)
        })
        .collect();
    assert!((mean(&estimates) - 5.0).abs() < 0.1, "{}", mean(&estimates));
}

#[test]
fn zero_effect_credible_region_covers_zero() {
    let mut r = rng(71);
    let recs: Vec<ObservationRecord> = (0..1000)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut r);
            let d = u8::from(r.random::<f64>() < expit(0.5 * x));
            let e: f64 = StandardNormal.sample(&mut r);
            ObservationRecord::new(1.0 + x + e, d, vec![x])
        })
        .collect();
    let ds = Dataset::new(recs, vec!["x".into()]);
    let rep = estimate_or(&ds, &small_config()).unwrap();
    assert!(
        rep.bayes.mean.abs() < 3.0 * rep.bayes.sd,
        "{} ± {}",
        rep.bayes.mean,
        rep.bayes.sd
    );
}

#[test]
fn naive_overstates_confounded_effect() {
    let ds = generate_dgp(&DgpParams::default(), &mut rng(72));
    let cfg = small_config();
    let naive = estimate_naive(&ds, &cfg, false).unwrap();
    assert!(naive.bayes.mean - 5.0 > 0.0);
    let or = estimate_or(&ds, &cfg).unwrap();
    assert!((or.bayes.mean - 5.0).abs() < naive.bayes.mean - 5.0);
}

#[test]
fn matched_and_full_naive_rows_differ() {
    let ds = generate_dgp(&DgpParams::default(), &mut rng(73));
    let cfg = EstimatorConfig {
        matching: Some(bdr_core::MatchSettings {
            with_replacement: true,
            ..Default::default()
        }),
        ..small_config()
    };
    let reports = estimate_all(&ds, &cfg, &[EstimatorKind::Naive]).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].kind, ReportKind::NaiveMatched);
    assert_eq!(reports[1].kind, ReportKind::NaiveFull);
    assert!(reports[0].n < reports[1].n);
    assert_ne!(reports[0].bayes.mean, reports[1].bayes.mean);
}

#[test]
fn frequentist_bootstrap_agrees_with_posterior() {
    let ds = generate_dgp(&DgpParams::default(), &mut rng(74));
    let cfg = EstimatorConfig {
        reps: 1000,
        frequentist_reps: Some(1000),
        ..small_config()
    };
    let bayes = estimate_or(&ds, &cfg).unwrap();
    let freq = bayes.frequentist.unwrap();
    assert!((freq.point - bayes.bayes.mean).abs() < 0.1);
    assert!((freq.se / bayes.bayes.sd - 1.0).abs() < 0.25);
    let again = frequentist_bootstrap(&ds, &cfg, EstimatorKind::Or).unwrap();
    assert_eq!(again, freq);
}

#[test]
fn frequentist_se_vanishes_without_within_arm_spread() {
    let recs: Vec<ObservationRecord> = (0..60)
        .map(|i| {
            ObservationRecord::new(
                if i % 3 == 0 { 4.0 } else { 1.5 },
                u8::from(i % 3 == 0),
                vec![],
            )
        })
        .collect();
    let ds = Dataset::new(recs, vec![]);
    let cfg = EstimatorConfig {
        frequentist_reps: Some(200),
        ..small_config()
    };
    let f = frequentist_bootstrap(&ds, &cfg, EstimatorKind::Naive).unwrap();
    assert!((f.point - 2.5).abs() < 1e-12);
    assert!(f.se < 1e-10);
}

#[test]
fn dgp_treated_fraction_without_covariate_effect() {
    let params = DgpParams {
        alpha1: 0.0,
        n: 100_000,
        ..Default::default()
    };
    let ds = generate_dgp(&params, &mut rng(75));
    let frac = ds.n_treated() as f64 / ds.n() as f64;
    assert!((frac - 0.881).abs() < 0.005, "{frac}");
}

#[test]
fn dgp_outcome_coefficients_recovered_at_scale() {
    let params = DgpParams {
        n: 1_000_000,
        ..Default::default()
    };
    let ds = generate_dgp(&params, &mut rng(76));
    let spec = DesignSpec::outcome(&ds, 1).unwrap();
    let fit = fit_weighted_linear(&spec.build(&ds), &ds.outcomes(), &vec![1.0; ds.n()]).unwrap();
    for (b, t) in fit.coefficients.iter().zip([10.0, 5.0, 0.2]) {
        assert!((b - t).abs() < 0.02, "{:?}", fit.coefficients);
    }
}

fn tiny_sim() -> SimConfig {
    SimConfig {
        reps: 50,
        resample_v: 50,
        ..Default::default()
    }
}

#[test]
fn single_run_has_zero_variance() {
    let params = DgpParams {
        n: 300,
        ..Default::default()
    };
    let rep = run_simulation_study(1, &params, &tiny_sim(), SeedStream::new(5)).unwrap();
    for row in &rep.rows {
        assert_eq!(row.empirical_variance, 0.0);
        assert!((row.mse - row.bias(5.0).powi(2)).abs() < 1e-12);
    }
}

#[test]
fn mse_is_variance_plus_squared_bias() {
    let params = DgpParams {
        n: 300,
        ..Default::default()
    };
    let rep = run_simulation_study(8, &params, &tiny_sim(), SeedStream::new(6)).unwrap();
    for row in &rep.rows {
        let identity = row.empirical_variance + row.bias(rep.truth).powi(2);
        assert!((row.mse - identity).abs() < 1e-10, "{}", row.name);
    }
}

#[test]
fn study_is_reproducible_and_thread_independent() {
    let params = DgpParams {
        n: 300,
        ..Default::default()
    };
    let s = SeedStream::new(7);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_simulation_study(4, &params, &tiny_sim(), s).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(3));
    let direct = run_once(&params, &tiny_sim(), s.child("run", 2)).unwrap();
    let col: Vec<f64> = a.rows.iter().map(|r| r.estimates[2]).collect();
    assert_eq!(col, direct.to_vec());
}
