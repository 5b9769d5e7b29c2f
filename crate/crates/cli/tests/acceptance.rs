//! Acceptance checks, one PASS/FAIL line each. Criterion 1 runs the full
//! 1000-run study and dominates the runtime.

use std::path::{Path, PathBuf};
use std::process::Command;

use bdr_core::bayes_boot::{posterior_predictive_ate, posterior_sample, KappaSource, WeightScheme};
use bdr_core::estimators::estimate_all;
use bdr_core::glm::{expit, fit_weighted_linear, fit_weighted_logistic};
use bdr_core::sim::{generate_dgp, run_simulation_study};
use bdr_core::{
    DesignMatrix, DesignSpec, DgpParams, EstimatorConfig, EstimatorKind, SeedStream, SimConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

const REFERENCE: [(&str, f64, f64, f64); 5] = [
    ("BOR1", 5.004, 0.036, 0.10),
    ("BOR2", 5.350, 0.036, 0.15),
    ("BDR1", 5.008, 0.046, 0.10),
    ("BDR2", 5.018, 0.862, 0.10),
    ("BDR3", 5.360, 0.946, 0.15),
];

struct Outcome {
    ok: bool,
    detail: String,
}

fn bdr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bdr"))
}

fn run(cmd: &mut Command) -> std::process::Output {
    let out = cmd.output().expect("spawn bdr");
    assert!(
        out.status.success(),
        "bdr failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn reference_study(dir: &Path) -> Value {
    let out = dir.join("study");
    run(bdr()
        .args([
            "simulate", "--runs", "1000", "--n", "1000", "--seed", "7", "--reps", "200",
        ])
        .args([
            "--resample-V",
            "1000",
            "--prior-mean",
            "5",
            "--faith-k",
            "1",
            "--out-dir",
        ])
        .arg(&out));
    read_json(&out.join("simulation.json"))
}

fn row<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["report"]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["name"] == name)
        .unwrap()
}

fn criterion1(report: &Value) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, est, var, tol) in REFERENCE {
        let r = row(report, name);
        let a = r["average_estimate"].as_f64().unwrap();
        let v = r["empirical_variance"].as_f64().unwrap();
        let rel = (v - var) / var;
        ok &= (a - est).abs() <= tol && rel.abs() <= 0.40;
        parts.push(format!("{name} {a:.3}/{v:.3} ({:+.0}%)", rel * 100.0));
    }
    let mse = |n| row(report, n)["mse"].as_f64().unwrap();
    let order = mse("BOR1") < mse("BDR1")
        && mse("BDR1") < mse("BOR2").min(mse("BDR2"))
        && mse("BOR2").max(mse("BDR2")) < mse("BDR3");
    ok &= order;
    parts.push(format!(
        "MSE ordering {}",
        if order { "holds" } else { "broken" }
    ));
    Outcome {
        ok,
        detail: parts.join(", "),
    }
}

fn criterion2(report: &Value) -> Outcome {
    let bias = |n| row(report, n)["average_estimate"].as_f64().unwrap() - 5.0;
    let ok = bias("BDR1").abs() < 0.1
        && bias("BDR2").abs() < 0.1
        && bias("BOR2").abs() > 0.25
        && bias("BDR3").abs() > 0.25;
    Outcome {
        ok,
        detail: format!(
            "bias BDR1 {:+.3}, BDR2 {:+.3}, BOR2 {:+.3}, BDR3 {:+.3}",
            bias("BDR1"),
            bias("BDR2"),
            bias("BOR2"),
            bias("BDR3")
        ),
    }
}

fn dense(design: &DesignMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(design.nrows(), design.ncols(), |i, j| design.row(i)[j])
}

fn normal_equations(design: &DesignMatrix, y: &[f64], w: &[f64]) -> Vec<f64> {
    let x = dense(design);
    let xtw = DMatrix::from_fn(x.ncols(), x.nrows(), |j, i| x[(i, j)] * w[i]);
    (&xtw * &x)
        .lu()
        .solve(&(&xtw * DVector::from_column_slice(y)))
        .unwrap()
        .as_slice()
        .to_vec()
}

fn newton(design: &DesignMatrix, y: &[f64], w: &[f64]) -> Vec<f64> {
    let x = dense(design);
    let mut beta = DVector::zeros(x.ncols());
    for _ in 0..500 {
        let mu: Vec<f64> = (&x * &beta)
            .iter()
            .map(|e| 1.0 / (1.0 + (-e).exp()))
            .collect();
        let grad = x.transpose() * DVector::from_fn(x.nrows(), |i, _| w[i] * (y[i] - mu[i]));
        let xtw = DMatrix::from_fn(x.ncols(), x.nrows(), |j, i| {
            x[(i, j)] * w[i] * mu[i] * (1.0 - mu[i])
        });
        let step = (&xtw * &x).lu().solve(&grad).unwrap();
        beta += &step;
        if step.amax() < 1e-15 {
            break;
        }
    }
    beta.as_slice().to_vec()
}

fn random_instance(seed: u64) -> (DesignMatrix, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut r = SeedStream::new(seed).rng();
    let n = r.random_range(30..80);
    let q = r.random_range(2..5);
    let names: Vec<String> = (0..q).map(|j| format!("c{j}")).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut row = vec![1.0];
            row.extend((1..q).map(|_| r.random::<f64>() * 4.0 - 2.0));
            row
        })
        .collect();
    let design = DesignMatrix::from_rows(&rows, names).unwrap();
    let truth: Vec<f64> = (0..q).map(|_| r.random::<f64>() - 0.5).collect();
    let eta: Vec<f64> = rows
        .iter()
        .map(|row| row.iter().zip(&truth).map(|(a, b)| a * b).sum())
        .collect();
    let binary: Vec<f64> = eta
        .iter()
        .map(|&e| f64::from(u8::from(r.random::<f64>() < expit(e))))
        .collect();
    let gaussian: Vec<f64> = eta
        .iter()
        .map(|&e| e + Distribution::<f64>::sample(&StandardNormal, &mut r))
        .collect();
    let w: Vec<f64> = (0..n).map(|_| 0.2 + 2.8 * r.random::<f64>()).collect();
    (design, binary, gaussian, w)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn criterion3() -> Outcome {
    let (mut worst_logit, mut worst_lin) = (0.0f64, 0.0f64);
    for seed in 0..50 {
        let (design, binary, gaussian, w) = random_instance(9000 + seed);
        let logit = fit_weighted_logistic(&design, &binary, &w).unwrap();
        worst_logit = worst_logit.max(max_diff(&logit.coefficients, &newton(&design, &binary, &w)));
        let lin = fit_weighted_linear(&design, &gaussian, &w).unwrap();
        worst_lin = worst_lin.max(max_diff(
            &lin.coefficients,
            &normal_equations(&design, &gaussian, &w),
        ));
    }
    Outcome {
        ok: worst_logit < 1e-8 && worst_lin < 1e-8,
        detail: format!(
            "50 instances, max |Δβ| logistic {worst_logit:.1e}, linear {worst_lin:.1e}"
        ),
    }
}

fn criterion4() -> Outcome {
    let ds = generate_dgp(&DgpParams::default(), &mut SeedStream::new(41).rng());
    let spec = DesignSpec::outcome(&ds, 1).unwrap();
    let pn = posterior_sample(
        &ds,
        &spec,
        KappaSource::None,
        200,
        WeightScheme::Dirichlet,
        SeedStream::new(42),
    )
    .unwrap();
    let ate = posterior_predictive_ate(&pn, &ds, &spec, 1000, 200, SeedStream::new(43)).unwrap();
    let coef = pn.column(1);
    let ate_gap = ate
        .samples
        .iter()
        .zip(&ate.parameter_rows)
        .map(|(t, &r)| (t - coef[r]).abs() / coef[r].abs())
        .fold(0.0, f64::max);

    let small = SimConfig {
        reps: 50,
        resample_v: 100,
        ..Default::default()
    };
    let study =
        run_simulation_study(20, &DgpParams::default(), &small, SeedStream::new(44)).unwrap();
    let bv_gap = study
        .rows
        .iter()
        .map(|r| (r.mse - r.empirical_variance - r.bias(study.truth).powi(2)).abs())
        .fold(0.0, f64::max);

    let mut scale_gap = 0.0f64;
    for seed in 0..20 {
        let (design, binary, gaussian, w) = random_instance(9500 + seed);
        for c in [1e-3, 7.0, 1e3] {
            let ws: Vec<f64> = w.iter().map(|v| v * c).collect();
            let a = fit_weighted_logistic(&design, &binary, &w)
                .unwrap()
                .coefficients;
            let b = fit_weighted_logistic(&design, &binary, &ws)
                .unwrap()
                .coefficients;
            scale_gap = scale_gap.max(max_diff(&a, &b));
            let a = fit_weighted_linear(&design, &gaussian, &w)
                .unwrap()
                .coefficients;
            let b = fit_weighted_linear(&design, &gaussian, &ws)
                .unwrap()
                .coefficients;
            scale_gap = scale_gap.max(max_diff(&a, &b));
        }
    }
    Outcome {
        ok: ate_gap < 1e-12 && bv_gap < 1e-9 && scale_gap < 1e-10,
        detail: format!(
            "ATE vs β₁ rel {ate_gap:.1e}, MSE identity {bv_gap:.1e}, weight scale {scale_gap:.1e}"
        ),
    }
}

fn criterion5() -> Outcome {
    let ds = generate_dgp(&DgpParams::default(), &mut SeedStream::new(51).rng());
    let config = EstimatorConfig {
        reps: 1000,
        resample_v: 1000,
        frequentist_reps: Some(1000),
        seed: 52,
        ..Default::default()
    };
    let reports = estimate_all(&ds, &config, &[EstimatorKind::Or, EstimatorKind::Dr]).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &reports {
        let f = r.frequentist.as_ref().unwrap();
        let gap = (r.bayes.mean - f.point).abs();
        let ratio = r.bayes.sd / f.se;
        ok &= gap <= 0.1 && (ratio - 1.0).abs() <= 0.25;
        parts.push(format!("{} |Δmean| {gap:.3}, sd/se {ratio:.3}", r.label));
    }
    Outcome {
        ok,
        detail: parts.join("; "),
    }
}

/// Units with high pre-period levels `x` are selected for treatment and drift
/// back down, so differenced outcomes overstate the effect unless adjusted.
fn write_confounded_csv(path: &Path) {
    let mut r = SeedStream::new(61).rng();
    let mut out = String::from("y,d,x\n");
    for _ in 0..2000 {
        let x: f64 = StandardNormal.sample(&mut r);
        let d = u8::from(r.random::<f64>() < expit(-0.5 + 1.5 * x));
        let e: f64 = StandardNormal.sample(&mut r);
        let y = -f64::from(d) - 2.0 * x + e;
        out.push_str(&format!("{y},{d},{x}\n"));
    }
    std::fs::write(path, out).unwrap();
}

fn estimate_args(input: &Path, out: &Path, threads: &str) -> Vec<String> {
    [
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--outcome-col",
        "y",
        "--treatment-col",
        "d",
        "--covariate-cols",
        "x",
        "--seed",
        "62",
        "--reps",
        "500",
        "--freq-reps",
        "500",
        "--threads",
        threads,
        "--out-dir",
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn criterion6(dir: &Path) -> Outcome {
    let input = dir.join("confounded.csv");
    write_confounded_csv(&input);
    let out = dir.join("report");
    run(bdr().args(estimate_args(&input, &out, "2")));
    let json = read_json(&out.join("estimate.json"));
    let reports = json["reports"].as_array().unwrap();
    let text = std::fs::read_to_string(out.join("estimate.txt")).unwrap();
    let svg = std::fs::read_to_string(out.join("posterior.svg")).unwrap();
    let effect = |kind: &str| {
        reports.iter().find(|r| r["kind"] == kind).unwrap()["bayes"]["mean"]
            .as_f64()
            .unwrap()
            .abs()
    };
    let causal = ["OR", "IPW", "DR"].map(effect);
    let naive = ["NAIVE_MATCHED", "NAIVE_FULL"].map(effect);
    let max_causal = causal.iter().cloned().fold(0.0, f64::max);
    let min_naive = naive.iter().cloned().fold(f64::INFINITY, f64::min);
    let shaped = reports.len() == 5
        && text.contains("95% cred. int.")
        && svg.starts_with("<svg")
        && svg.matches("<rect").count() >= 20
        && svg.contains("<polyline");
    Outcome {
        ok: shaped && min_naive > max_causal,
        detail: format!(
            "{} rows, |causal| OR/IPW/DR {:.3}/{:.3}/{:.3}, |naive| matched/full {:.3}/{:.3}",
            reports.len(),
            causal[0],
            causal[1],
            causal[2],
            naive[0],
            naive[1]
        ),
    }
}

fn criterion7(dir: &Path) -> Outcome {
    let input = dir.join("confounded.csv");
    let mut same = true;
    let mut checked = Vec::new();
    let estimate_json = |name: &str, threads: &str| {
        let out = dir.join(name);
        run(bdr().args(estimate_args(&input, &out, threads)));
        std::fs::read(out.join("estimate.json")).unwrap()
    };
    let a = estimate_json("det-a", "1");
    same &= a == estimate_json("det-b", "1") && a == estimate_json("det-c", "4");
    checked.push("estimate");

    let simulate_json = |name: &str, threads: &str| {
        let out = dir.join(name);
        run(bdr()
            .args([
                "simulate",
                "--runs",
                "8",
                "--n",
                "500",
                "--reps",
                "50",
                "--resample-V",
                "100",
                "--seed",
                "71",
            ])
            .args(["--threads", threads, "--out-dir"])
            .arg(&out));
        std::fs::read(out.join("simulation.json")).unwrap()
    };
    let s = simulate_json("sim-a", "1");
    same &= s == simulate_json("sim-b", "4");
    checked.push("simulate");

    let match_json = |name: &str, threads: &str| {
        let out = dir.join(name);
        run(bdr()
            .args(["match", "--input"])
            .arg(&input)
            .args([
                "--outcome-col",
                "y",
                "--treatment-col",
                "d",
                "--covariate-cols",
                "x",
                "--seed",
                "72",
            ])
            .args(["--threads", threads, "--out-dir"])
            .arg(&out));
        std::fs::read(out.join("match.json")).unwrap()
    };
    let m = match_json("match-a", "1");
    same &= m == match_json("match-b", "4");
    checked.push("match");

    Outcome {
        ok: same,
        detail: format!(
            "{} JSON identical across reruns and thread counts",
            checked.join(", ")
        ),
    }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let dir: PathBuf = tmp.path().to_path_buf();

    let study = reference_study(&dir);
    let results = [
        ("1 simulation study", criterion1(&study)),
        ("2 double robustness", criterion2(&study)),
        ("3 oracle equivalence", criterion3()),
        ("4 exact identities", criterion4()),
        ("5 Bayesian vs frequentist", criterion5()),
        ("6 confounded-data report", criterion6(&dir)),
        ("7 determinism", criterion7(&dir)),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        let tag = if outcome.ok { "PASS" } else { "FAIL" };
        println!("{tag} criterion {name}: {}", outcome.detail);
        failed += usize::from(!outcome.ok);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
