//! Text tables, SVG histograms and the versioned JSON envelopes written by the CLI.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::estimators::EstimateReport;
use crate::sim::SimulationReport;

pub const SCHEMA_VERSION: u32 = 1;
pub const HISTOGRAM_BINS: usize = 20;

/// Seed and resolved configuration embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl RunMeta {
    pub fn new(seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: format!("bdr {}", env!("CARGO_PKG_VERSION")),
            seed,
            config,
        }
    }

    fn comment(&self) -> String {
        format!(
            "seed={} config={}",
            self.seed,
            serde_json::to_string(&self.config).unwrap_or_default()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub schema_version: u32,
    pub meta: RunMeta,
    pub reports: Vec<EstimateReport>,
    /// Present when a baseline column was supplied; percentages are
    /// `100 · ATE / mean`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Baseline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub column: String,
    pub mean: f64,
}

/// Posterior summaries rescaled to percent of the baseline mean.
pub fn percent_table(
    reports: &[EstimateReport],
    labels: Option<&[String]>,
    baseline: &Baseline,
) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# derived: 100 * ATE / mean({}) with mean = {:.6}",
        baseline.column, baseline.mean
    );
    let width = reports
        .iter()
        .enumerate()
        .map(|(i, r)| labels.map_or(r.label.len(), |l| l[i].len()))
        .max()
        .unwrap_or(0)
        .max(8)
        + 2;
    let _ = writeln!(
        s,
        "{:<width$}{:>16}{:>10}{:>26}",
        "", "mean (%)", "s.d. (%)", "95% cred. int. (%)"
    );
    let pct = |v: f64| 100.0 * v / baseline.mean;
    for (i, r) in reports.iter().enumerate() {
        let label = labels.map_or(r.label.as_str(), |l| l[i].as_str());
        let (a, b) = r.bayes.credible_interval_95;
        let (a, b) = if baseline.mean < 0.0 {
            (pct(b), pct(a))
        } else {
            (pct(a), pct(b))
        };
        let ci = format!("({a:.3}, {b:.3})");
        let _ = writeln!(
            s,
            "{:<width$}{:>16.3}{:>10.3}{:>26}",
            label,
            pct(r.bayes.mean),
            (100.0 * r.bayes.sd / baseline.mean).abs(),
            ci
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationFile {
    pub schema_version: u32,
    pub meta: RunMeta,
    pub report: SimulationReport,
}

pub fn simulation_table(report: &SimulationReport, meta: Option<&RunMeta>) -> String {
    let mut s = String::new();
    if let Some(m) = meta {
        let _ = writeln!(s, "# {}", m.comment());
    }
    let _ = writeln!(
        s,
        "# Simulation results for posterior predictive distributions (tau={:.1}, runs={}, n={})",
        report.truth, report.runs, report.n
    );
    let _ = writeln!(
        s,
        "{:<8}{:>12}{:>12}{:>12}",
        "", "Av. Est.", "Emp. Var.", "MSE"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<8}{:>12.3}{:>12.3}{:>12.3}",
            r.name, r.average_estimate, r.empirical_variance, r.mse
        );
    }
    s
}

/// Bayesian bootstrap and frequentist bootstrap columns, one row per report.
/// `labels` overrides the row labels when given.
pub fn estimate_table(
    reports: &[EstimateReport],
    labels: Option<&[String]>,
    meta: Option<&RunMeta>,
) -> String {
    let mut s = String::new();
    if let Some(m) = meta {
        let _ = writeln!(s, "# {}", m.comment());
    }
    let width = reports
        .iter()
        .enumerate()
        .map(|(i, r)| labels.map_or(r.label.len(), |l| l[i].len()))
        .max()
        .unwrap_or(0)
        .max(8)
        + 2;
    let _ = writeln!(
        s,
        "{:<width$}{:>16}{:>10}{:>26}{:>12}{:>10}",
        "", "posterior mean", "s.d.", "95% cred. int.", "Est.", "s.e."
    );
    for (i, r) in reports.iter().enumerate() {
        let label = labels.map_or(r.label.as_str(), |l| l[i].as_str());
        let ci = format!(
            "({:.3}, {:.3})",
            r.bayes.credible_interval_95.0, r.bayes.credible_interval_95.1
        );
        let (est, se) = match &r.frequentist {
            Some(f) => (format!("{:.3}", f.point), format!("{:.3}", f.se)),
            None => ("-".to_string(), "-".to_string()),
        };
        let _ = writeln!(
            s,
            "{:<width$}{:>16.3}{:>10.3}{:>26}{:>12}{:>10}",
            label, r.bayes.mean, r.bayes.sd, ci, est, se
        );
    }
    s
}

/// Counts of `samples` in `bins` equal-width bins over `[lo, hi]`.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &x in samples {
        let b = if width > 0.0 {
            (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    counts
}

const PALETTE: [&str; 6] = [
    "#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Histogram (density scale) with the empirical density polyline through bin
/// midpoints, one series per `(label, samples)`; series share one bin grid.
pub fn histogram_svg(series: &[(String, &[f64])], title: &str, meta: Option<&RunMeta>) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const ML: f64 = 60.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 50.0;

    let all = series.iter().flat_map(|(_, s)| s.iter().copied());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let densities: Vec<Vec<f64>> = series
        .iter()
        .map(|(_, s)| {
            let n = s.len().max(1) as f64;
            histogram(s, lo, hi, HISTOGRAM_BINS)
                .into_iter()
                .map(|c| c as f64 / (n * width))
                .collect()
        })
        .collect();
    let ymax = densities
        .iter()
        .flatten()
        .copied()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);

    let px = |x: f64| ML + (x - lo) / (hi - lo) * (W - ML - MR);
    let py = |y: f64| H - MB - y / ymax * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    if let Some(m) = meta {
        let _ = writeln!(s, "<metadata>{}</metadata>", xml_escape(&m.comment()));
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{ML}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(
        s,
        r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{:.1}" stroke="black"/>"#,
        H - MB
    );
    for t in 0..=4 {
        let x = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{:.3}</text>"#,
            px(x),
            H - MB + 16.0,
            x
        );
        let y = ymax * t as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{:.3}</text>"#,
            ML - 4.0,
            py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">average treatment effect</text>"#,
        (ML + W - MR) / 2.0,
        H - 12.0
    );

    for (k, ((label, _), dens)) in series.iter().zip(&densities).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let opacity = if series.len() > 1 { 0.35 } else { 0.6 };
        for (b, &d) in dens.iter().enumerate() {
            let x0 = px(lo + b as f64 * width);
            let x1 = px(lo + (b + 1) as f64 * width);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="{opacity}"/>"#,
                x0,
                py(d),
                (x1 - x0).max(0.0),
                (H - MB) - py(d)
            );
        }
        let points: Vec<String> = dens
            .iter()
            .enumerate()
            .map(|(b, &d)| format!("{:.2},{:.2}", px(lo + (b as f64 + 0.5) * width), py(d)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            W - MR - 200.0,
            MT + 16.0 * (k as f64 + 1.0),
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.5, 1.0, 0.99], 0.0, 1.0, 4);
        assert_eq!(h, vec![1, 0, 1, 2]);
        assert_eq!(histogram(&[2.0, 2.0], 2.0, 2.0, 3), vec![2, 0, 0]);
    }

    #[test]
    fn svg_has_twenty_bins_per_series() {
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 2.5];
        let svg = histogram_svg(&[("a".into(), &a[..]), ("b".into(), &b[..])], "t", None);
        assert_eq!(svg.matches("<rect").count(), 2 * HISTOGRAM_BINS);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg"));
    }
}
