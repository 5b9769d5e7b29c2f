use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bdr_core::data::{difference_csv, load_csv, save_csv};
use bdr_core::estimators::{
    estimate_all, EstimateReport, EstimatorConfig, EstimatorKind, TreatmentPrior,
};
use bdr_core::matching::{match_dataset, write_pairs_csv, MatchSettings};
use bdr_core::propensity::{estimate_propensity, overlap_report};
use bdr_core::report::{
    estimate_table, histogram_svg, percent_table, simulation_table, Baseline, EstimateFile,
    RunMeta, SimulationFile, SCHEMA_VERSION,
};
use bdr_core::sim::{generate_dgp, run_simulation_study, DgpParams, SimConfig};
use bdr_core::{Dataset, SeedStream};
use serde::Serialize;

use crate::settings::FileSettings;
use crate::{
    Cli, Command, DataArgs, DifferenceArgs, EstimateArgs, MatchArgs, MatchFlags, PriorArgs,
    ReportArgs, SimulateArgs,
};

/// Bad flags or config values; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "usage: {}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct RunContext {
    file: FileSettings,
    seed: u64,
    out_dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileSettings::load(cli.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    let threads: Option<usize> = file
        .pick_opt(cli.threads, "threads")
        .map_err(|e| usage(e.to_string()))?;
    if let Some(t) = threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring thread pool")?;
    }
    let seeded = !matches!(cli.command, Command::Difference(_) | Command::Report(_));
    let seed = match file
        .pick_opt(cli.seed, "seed")
        .map_err(|e| usage(e.to_string()))?
    {
        Some(s) => s,
        None => {
            let s: u64 = rand::random();
            if seeded {
                eprintln!("seed: {s}");
            }
            s
        }
    };
    let out_dir: PathBuf = file
        .pick(
            cli.out_dir.map(|p| p.display().to_string()),
            "out-dir",
            ".".to_string(),
        )
        .map_err(|e| usage(e.to_string()))?
        .into();
    let ctx = RunContext {
        file,
        seed,
        out_dir,
    };

    match cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Estimate(a) => estimate(&ctx, a),
        Command::Match(a) => match_cmd(&ctx, a),
        Command::Difference(a) => difference(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn u<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| usage(format!("{e:#}")))
}

fn resolve_prior(
    ctx: &RunContext,
    args: &PriorArgs,
    default: Option<TreatmentPrior>,
) -> Result<Option<TreatmentPrior>> {
    let f = &ctx.file;
    let mean: Option<f64> = u(f.pick_opt(args.prior_mean, "prior-mean"))?;
    let base = match (mean, default) {
        (Some(m), d) => TreatmentPrior::normal(m, d.map_or(1.0, |d| d.sd), d.map_or(1.0, |d| d.k)),
        (None, Some(d)) => d,
        (None, None) => {
            if args.prior_sd.is_some() || args.faith_k.is_some() {
                return Err(usage("--prior-sd/--faith-k need --prior-mean"));
            }
            return Ok(None);
        }
    };
    let sd = u(f.pick(args.prior_sd, "prior-sd", base.sd))?;
    let k = u(f.pick(args.faith_k, "faith-k", base.k))?;
    let prior = TreatmentPrior::normal(base.mean, sd, k);
    prior
        .on_column(1)
        .check()
        .map_err(|e| usage(e.to_string()))?;
    Ok(Some(prior))
}

#[derive(Debug, Serialize)]
struct SimulateConfig {
    runs: usize,
    reps: usize,
    resample_v: usize,
    prior: Option<TreatmentPrior>,
    dgp: DgpParams,
}

fn simulate(ctx: &RunContext, a: SimulateArgs) -> Result<()> {
    let f = &ctx.file;
    let runs: usize = u(f.pick(a.runs, "runs", 1000))?;
    let n: usize = u(f.pick(a.n, "n", 1000))?;
    let reps: usize = u(f.pick(a.reps, "reps", 200))?;
    let resample_v: usize = u(f.pick(a.resample_v, "resample-V", 1000))?;
    let no_prior = a.no_prior || u(f.flag("no-prior"))?;
    if runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    if reps == 0 || resample_v == 0 {
        return Err(usage("--reps and --resample-V must be at least 1"));
    }
    let prior = if no_prior {
        None
    } else {
        resolve_prior(ctx, &a.prior, SimConfig::default().prior)?
    };
    let dgp = DgpParams {
        n,
        ..Default::default()
    };
    dgp.check().map_err(|e| usage(e.to_string()))?;
    let stream = SeedStream::new(ctx.seed);

    if let Some(path) = a.emit_data {
        let data = generate_dgp(&dgp, &mut stream.child("emit-data", 0).rng());
        save_csv(&data, &path).context("writing simulated data")?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }

    let sim = SimConfig {
        reps,
        resample_v,
        prior,
    };
    let report = run_simulation_study(runs, &dgp, &sim, stream)
        .context("simulation")?
        .without_estimates();
    let config = SimulateConfig {
        runs,
        reps,
        resample_v,
        prior,
        dgp,
    };
    let meta = RunMeta::new(ctx.seed, serde_json::to_value(&config)?);
    ensure_out_dir(&ctx.out_dir)?;
    let table = simulation_table(&report, Some(&meta));
    print!("{table}");
    write(&ctx.out_dir.join("simulation.txt"), &table)?;
    let file = SimulationFile {
        schema_version: SCHEMA_VERSION,
        meta,
        report,
    };
    write(&ctx.out_dir.join("simulation.json"), &to_json(&file)?)
}

#[derive(Debug, Serialize)]
struct DataConfig {
    input: String,
    outcome_col: String,
    treatment_col: String,
    covariate_cols: Vec<String>,
}

fn resolve_data(ctx: &RunContext, d: &DataArgs) -> Result<DataConfig> {
    let f = &ctx.file;
    let input: String = u(f.pick_opt(d.input.as_ref().map(|p| p.display().to_string()), "input"))?
        .ok_or_else(|| usage("--input is required"))?;
    let outcome_col = u(f.pick(d.outcome_col.clone(), "outcome-col", "y".to_string()))?;
    let treatment_col = u(f.pick(d.treatment_col.clone(), "treatment-col", "d".to_string()))?;
    let covariate_cols = match &d.covariate_cols {
        Some(c) => c.clone(),
        None => u(f.get::<String>("covariate-cols"))?
            .map(|s| {
                s.split(',')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect()
            })
            .unwrap_or_default(),
    };
    Ok(DataConfig {
        input,
        outcome_col,
        treatment_col,
        covariate_cols,
    })
}

fn load(cfg: &DataConfig) -> Result<Dataset> {
    let ds = load_csv(
        &cfg.input,
        &cfg.outcome_col,
        &cfg.treatment_col,
        &cfg.covariate_cols,
    )
    .with_context(|| format!("ingestion of {}", cfg.input))?;
    let violations = ds.validate();
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        bail!("validation of {} failed: {}", cfg.input, msg.join("; "));
    }
    Ok(ds)
}

fn resolve_matching(ctx: &RunContext, m: &MatchFlags) -> Result<(MatchSettings, usize)> {
    let f = &ctx.file;
    let ratio = u(f.pick(m.ratio, "ratio", 1))?;
    let caliper = u(f.pick_opt(m.caliper, "caliper"))?;
    let with_replacement = m.with_replacement || u(f.flag("with-replacement"))?;
    let ps_degree = u(f.pick(m.ps_degree, "ps-degree", 1))?;
    if ratio == 0 {
        return Err(usage("--ratio must be at least 1"));
    }
    if caliper.is_some_and(|c| !(c > 0.0)) {
        return Err(usage("--caliper must be positive"));
    }
    if ps_degree == 0 {
        return Err(usage("--ps-degree must be at least 1"));
    }
    Ok((
        MatchSettings {
            ratio,
            with_replacement,
            caliper,
        },
        ps_degree,
    ))
}

#[derive(Debug, Serialize)]
struct EstimateConfigOut {
    data: DataConfig,
    estimators: Vec<EstimatorKind>,
    estimator: EstimatorConfig,
    naive_matching: MatchSettings,
    baseline_col: Option<String>,
    include_samples: bool,
}

fn estimate(ctx: &RunContext, a: EstimateArgs) -> Result<()> {
    let f = &ctx.file;
    let data_cfg = resolve_data(ctx, &a.data)?;
    let kinds_raw: Vec<String> = match a.estimators {
        Some(v) => v,
        None => u(f.get::<String>("estimators"))?
            .unwrap_or_else(|| "or,ipw,dr,naive".to_string())
            .split(',')
            .map(str::to_string)
            .collect(),
    };
    let mut kinds = Vec::new();
    for k in &kinds_raw {
        let kind: EstimatorKind = k
            .parse()
            .map_err(|e: bdr_core::Error| usage(e.to_string()))?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(usage("--estimators is empty"));
    }
    let (match_settings, ps_degree) = resolve_matching(ctx, &a.matching)?;
    let no_match = a.no_match || u(f.flag("no-match"))?;
    let reps = u(f.pick(a.reps, "reps", 1000))?;
    let resample_v = u(f.pick(a.resample_v, "resample-V", 1000))?;
    let freq_reps: usize = u(f.pick(a.freq_reps, "freq-reps", 1000))?;
    let degree = u(f.pick(a.degree, "degree", 1))?;
    let reestimate_ps = a.reestimate_ps || u(f.flag("reestimate-ps"))?;
    let baseline_col: Option<String> = u(f.pick_opt(a.baseline_col, "baseline-col"))?;
    let include_samples = a.include_samples || u(f.flag("include-samples"))?;
    let prior = resolve_prior(ctx, &a.prior, None)?;

    let config = EstimatorConfig {
        reps,
        resample_v,
        prior,
        seed: ctx.seed,
        outcome_degree: degree,
        ps_degree,
        reestimate_ps,
        matching: (!no_match).then_some(match_settings),
        frequentist_reps: (freq_reps > 0).then_some(freq_reps),
    };
    config.check().map_err(|e| usage(e.to_string()))?;
    if degree == 0 {
        return Err(usage("--degree must be at least 1"));
    }

    let dataset = load(&data_cfg)?;
    let baseline = match &baseline_col {
        Some(col) => {
            let b = load_csv(
                &data_cfg.input,
                &data_cfg.outcome_col,
                &data_cfg.treatment_col,
                std::slice::from_ref(col),
            )
            .with_context(|| format!("ingestion of baseline column `{col}`"))?;
            let mean = b.records.iter().map(|r| r.x[0]).sum::<f64>() / b.n() as f64;
            if mean == 0.0 {
                bail!("baseline column `{col}` has mean 0; percentages are undefined");
            }
            Some(Baseline {
                column: col.clone(),
                mean,
            })
        }
        None => None,
    };

    // The naïve matched row always uses the matching settings, even with --no-match.
    let naive_cfg = EstimatorConfig {
        matching: Some(match_settings),
        ..config.clone()
    };
    let mut reports: Vec<EstimateReport> = Vec::new();
    let causal: Vec<EstimatorKind> = kinds
        .iter()
        .copied()
        .filter(|k| *k != EstimatorKind::Naive)
        .collect();
    if !causal.is_empty() {
        reports.extend(estimate_all(&dataset, &config, &causal).context("estimation")?);
    }
    if kinds.contains(&EstimatorKind::Naive) {
        reports.extend(
            estimate_all(&dataset, &naive_cfg, &[EstimatorKind::Naive]).context("estimation")?,
        );
    }

    let out_cfg = EstimateConfigOut {
        data: data_cfg,
        estimators: kinds,
        estimator: config,
        naive_matching: match_settings,
        baseline_col,
        include_samples,
    };
    let meta = RunMeta::new(ctx.seed, serde_json::to_value(&out_cfg)?);
    ensure_out_dir(&ctx.out_dir)?;

    let mut table = estimate_table(&reports, None, Some(&meta));
    if let Some(b) = &baseline {
        table.push_str(&percent_table(&reports, None, b));
    }
    print!("{table}");
    write(&ctx.out_dir.join("estimate.txt"), &table)?;

    let shown = reports
        .iter()
        .find(|r| r.kind == bdr_core::ReportKind::Dr)
        .unwrap_or(&reports[0]);
    let svg = histogram_svg(
        &[(shown.label.clone(), &shown.bayes.samples[..])],
        &format!(
            "Posterior predictive distribution of the ATE ({})",
            shown.label
        ),
        Some(&meta),
    );
    write(&ctx.out_dir.join("posterior.svg"), &svg)?;

    let reports = if include_samples {
        reports
    } else {
        reports
            .into_iter()
            .map(|mut r| {
                r.bayes = r.bayes.without_samples();
                r
            })
            .collect()
    };
    let file = EstimateFile {
        schema_version: SCHEMA_VERSION,
        meta,
        reports,
        baseline,
    };
    write(&ctx.out_dir.join("estimate.json"), &to_json(&file)?)
}

#[derive(Debug, Serialize)]
struct MatchConfigOut {
    data: DataConfig,
    matching: MatchSettings,
    ps_degree: usize,
}

#[derive(Debug, Serialize)]
struct MatchSummary {
    schema_version: u32,
    meta: RunMeta,
    pairs: usize,
    unmatched_treated: Vec<usize>,
    trimmed_n: usize,
    overlap_before: bdr_core::OverlapSummary,
}

fn match_cmd(ctx: &RunContext, a: MatchArgs) -> Result<()> {
    let data_cfg = resolve_data(ctx, &a.data)?;
    let (settings, ps_degree) = resolve_matching(ctx, &a.matching)?;
    let dataset = load(&data_cfg)?;
    let ps = estimate_propensity(&dataset, ps_degree).context("propensity model")?;
    let overlap = overlap_report(&ps, &dataset);
    let m = match_dataset(&ps.scores, &dataset, &settings).context("matching")?;

    ensure_out_dir(&ctx.out_dir)?;
    let pairs_path = ctx.out_dir.join("matches.csv");
    let mut buf = Vec::new();
    write_pairs_csv(&m.pairs, &mut buf)?;
    write(&pairs_path, std::str::from_utf8(&buf)?)?;
    let trimmed_path = ctx.out_dir.join("matched.csv");
    save_csv(&m.trimmed_dataset, &trimmed_path).context("writing matched sample")?;
    eprintln!("wrote {}", trimmed_path.display());

    let cfg = MatchConfigOut {
        data: data_cfg,
        matching: settings,
        ps_degree,
    };
    let summary = MatchSummary {
        schema_version: SCHEMA_VERSION,
        meta: RunMeta::new(ctx.seed, serde_json::to_value(&cfg)?),
        pairs: m.pairs.len(),
        unmatched_treated: m.unmatched_treated,
        trimmed_n: m.trimmed_dataset.n(),
        overlap_before: overlap,
    };
    println!(
        "{} pairs, trimmed n = {}, {} treated unmatched",
        summary.pairs,
        summary.trimmed_n,
        summary.unmatched_treated.len()
    );
    write(&ctx.out_dir.join("match.json"), &to_json(&summary)?)
}

fn difference(ctx: &RunContext, a: DifferenceArgs) -> Result<()> {
    let f = &ctx.file;
    let input: String = u(f.pick_opt(a.input.map(|p| p.display().to_string()), "input"))?
        .ok_or_else(|| usage("--input is required"))?;
    let pre: String =
        u(f.pick_opt(a.pre_col, "pre-col"))?.ok_or_else(|| usage("--pre-col is required"))?;
    let post: String =
        u(f.pick_opt(a.post_col, "post-col"))?.ok_or_else(|| usage("--post-col is required"))?;
    let out_col = u(f.pick(a.output_col, "output-col", "y".to_string()))?;
    let output = match a.output {
        Some(p) => p,
        None => {
            ensure_out_dir(&ctx.out_dir)?;
            ctx.out_dir.join("differenced.csv")
        }
    };
    let reader = fs::File::open(&input).with_context(|| format!("opening {input}"))?;
    let writer =
        fs::File::create(&output).with_context(|| format!("creating {}", output.display()))?;
    let rows = difference_csv(reader, writer, &pre, &post, &out_col).context("differencing")?;
    eprintln!("wrote {} ({rows} rows)", output.display());
    Ok(())
}

fn read_estimate_file(path: &Path) -> Result<(u64, serde_json::Value)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))?;
    let version = v
        .get("schema_version")
        .and_then(|s| s.as_u64())
        .ok_or_else(|| anyhow!("{} has no schema_version", path.display()))?;
    Ok((version, v))
}

/// Row labels, suffixed with the input index wherever a label repeats.
pub fn disambiguate(labels: &[(String, usize)]) -> Vec<String> {
    labels
        .iter()
        .map(|(l, src)| {
            if labels.iter().filter(|(m, _)| m == l).count() > 1 {
                format!("{l} [{}]", src + 1)
            } else {
                l.clone()
            }
        })
        .collect()
}

fn report(ctx: &RunContext, a: ReportArgs) -> Result<()> {
    let mut loaded = Vec::new();
    for p in &a.paths {
        loaded.push((p.clone(), read_estimate_file(p)?));
    }
    let first_version = loaded[0].1 .0;
    if let Some((p, (v, _))) = loaded.iter().find(|(_, (v, _))| *v != first_version) {
        bail!(
            "mixed schema versions: {} has {first_version}, {} has {v}",
            a.paths[0].display(),
            p.display()
        );
    }
    if first_version != SCHEMA_VERSION as u64 {
        bail!("unsupported schema version {first_version} (this build reads {SCHEMA_VERSION})");
    }

    let mut files = Vec::new();
    for (p, (_, v)) in loaded {
        let file: EstimateFile = serde_json::from_value(v)
            .with_context(|| format!("{} is not an estimate report", p.display()))?;
        files.push(file);
    }

    let mut reports = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, f) in files.iter().enumerate() {
        for r in &f.reports {
            raw_labels.push((r.label.clone(), i));
            reports.push(r.clone());
        }
    }
    let labels = disambiguate(&raw_labels);

    let table = if files.len() == 1 {
        let mut t = estimate_table(&reports, Some(&labels), Some(&files[0].meta));
        if let Some(b) = &files[0].baseline {
            t.push_str(&percent_table(&reports, Some(&labels), b));
        }
        t
    } else {
        let mut t = String::new();
        for (p, f) in a.paths.iter().zip(&files) {
            t.push_str(&format!(
                "# source [{}] {}: seed={} config={}\n",
                files.iter().position(|g| std::ptr::eq(g, f)).unwrap_or(0) + 1,
                p.display(),
                f.meta.seed,
                serde_json::to_string(&f.meta.config)?
            ));
        }
        t.push_str(&estimate_table(&reports, Some(&labels), None));
        t
    };
    print!("{table}");
    ensure_out_dir(&ctx.out_dir)?;
    write(&ctx.out_dir.join("report.txt"), &table)?;

    let series: Vec<(String, &[f64])> = reports
        .iter()
        .zip(&labels)
        .filter(|(r, _)| !r.bayes.samples.is_empty())
        .map(|(r, l)| (l.clone(), &r.bayes.samples[..]))
        .collect();
    if series.is_empty() {
        eprintln!("note: inputs carry no ATE samples (use `estimate --include-samples`); histogram is empty");
    }
    let meta = (files.len() == 1).then(|| files[0].meta.clone());
    let svg = histogram_svg(
        &series,
        "Posterior predictive distributions of the ATE",
        meta.as_ref(),
    );
    write(&ctx.out_dir.join("report.svg"), &svg)
}
