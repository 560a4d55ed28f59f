//! Attack benchmark: detection delay and alarm frequency per severity and
//! method, plus predictive-fit scores on hold-out nominal cycles.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_dataset, run_cycle, Models, RunConfig};
use crate::detect::{summarize_delays, DetectionReport, DetectorConfig, ResidualKind};
use crate::error::{Error, Result};
use crate::sim::CycleRole;
use crate::{producer, read_json, write_json};

const METHODS: [ResidualKind; 2] = [ResidualKind::Mvgp, ResidualKind::Iid];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub severity_cm: f64,
    pub method: ResidualKind,
    pub cycles: usize,
    /// Mean over cycles that raised an alarm after onset.
    pub mean_delay: Option<f64>,
    pub detected: usize,
    pub missed: usize,
    pub mean_alarm_frequency: f64,
    pub pre_onset_false_alarm_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub method: ResidualKind,
    pub cycles: usize,
    pub nll: f64,
    pub log_vol: f64,
    pub false_alarm_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub producer: String,
    pub config_hash: String,
    pub alpha: f64,
    pub threshold: f64,
    pub rows: Vec<BenchRow>,
    pub fit: Vec<FitRow>,
}

impl BenchSummary {
    pub fn row(&self, severity_cm: f64, method: ResidualKind) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.severity_cm == severity_cm && r.method == method)
    }

    pub fn fit_row(&self, method: ResidualKind) -> Option<&FitRow> {
        self.fit.iter().find(|r| r.method == method)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Runs both detectors over every attacked and hold-out cycle and writes
/// `bench.json` and `bench.txt` to the reports directory.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchSummary> {
    let data = load_dataset(cfg)?;
    let models = Models::load(&cfg.paths.models)?;
    models.check(&data.manifest)?;
    let j = data.manifest.joints;
    let predictors = METHODS.iter().map(|&k| models.predictor(k)).collect::<Result<Vec<_>>>()?;
    let configs = METHODS
        .iter()
        .map(|&k| DetectorConfig::new(cfg.detector.alpha, j, k))
        .collect::<Result<Vec<_>>>()?;

    let entries = &data.manifest.cycles;
    let jobs: Vec<(usize, usize)> = (0..entries.len())
        .filter(|&i| matches!(entries[i].role, CycleRole::Attack | CycleRole::Holdout))
        .flat_map(|i| (0..METHODS.len()).map(move |m| (i, m)))
        .collect();
    let reports: Vec<DetectionReport> = jobs
        .par_iter()
        .map(|&(i, m)| run_cycle(&models.tr, &predictors[m], configs[m], &data.cycles[i]))
        .collect::<Result<_>>()?;

    let mut severities: Vec<f64> = entries.iter().filter_map(|e| e.attack.as_ref().map(|a| a.deviation_cm)).collect();
    severities.sort_by(f64::total_cmp);
    severities.dedup();

    let select = |m: usize, keep: &dyn Fn(usize) -> bool| -> Vec<DetectionReport> {
        jobs.iter()
            .zip(&reports)
            .filter(|((i, mm), _)| *mm == m && keep(*i))
            .map(|(_, r)| r.clone())
            .collect()
    };
    let mut rows = Vec::new();
    for &s in &severities {
        for (m, &method) in METHODS.iter().enumerate() {
            let rs = select(m, &|i| entries[i].attack.as_ref().is_some_and(|a| a.deviation_cm == s));
            let delays = summarize_delays(&rs);
            rows.push(BenchRow {
                severity_cm: s,
                method,
                cycles: rs.len(),
                mean_delay: delays.mean_delay,
                detected: delays.detected,
                missed: delays.missed,
                mean_alarm_frequency: mean(rs.iter().filter_map(|r| r.alarm_frequency)),
                pre_onset_false_alarm_rate: mean(rs.iter().filter_map(|r| r.false_alarm_rate)),
            });
        }
    }
    let mut fit = Vec::new();
    for (m, &method) in METHODS.iter().enumerate() {
        let rs = select(m, &|i| entries[i].role == CycleRole::Holdout);
        fit.push(FitRow {
            method,
            cycles: rs.len(),
            nll: mean(rs.iter().map(|r| r.nll)),
            log_vol: mean(rs.iter().map(|r| r.log_vol)),
            false_alarm_rate: mean(rs.iter().filter_map(|r| r.false_alarm_rate)),
        });
    }
    let summary = BenchSummary {
        producer: producer(),
        config_hash: cfg.hash(),
        alpha: cfg.detector.alpha,
        threshold: configs[0].threshold,
        rows,
        fit,
    };
    let dir = &cfg.paths.reports;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(dir.join("bench.json"), &summary)?;
    let text = render_bench(&summary);
    std::fs::write(dir.join("bench.txt"), &text).map_err(|e| Error::io(dir.join("bench.txt"), e))?;
    Ok(summary)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:.2}"))
}

/// Aligned-text rendering of a bench summary.
pub fn render_bench(s: &BenchSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} (config {})", s.producer, &s.config_hash[..12.min(s.config_hash.len())]);
    let _ = writeln!(out, "alpha = {}, threshold = {:.4}\n", s.alpha, s.threshold);
    let _ = writeln!(
        out,
        "{:>9}  {:<9}  {:>6}  {:>10}  {:>8}  {:>10}  {:>10}",
        "severity", "method", "cycles", "mean delay", "missed", "alarm freq", "pre-onset"
    );
    for r in &s.rows {
        let _ = writeln!(
            out,
            "{:>7}cm  {:<9}  {:>6}  {:>10}  {:>8}  {:>10.3}  {:>10.4}",
            r.severity_cm,
            r.method.label(),
            r.cycles,
            fmt_opt(r.mean_delay),
            r.missed,
            r.mean_alarm_frequency,
            r.pre_onset_false_alarm_rate
        );
    }
    let _ = writeln!(out, "\n{:<9}  {:>6}  {:>9}  {:>9}  {:>11}", "method", "cycles", "NLL", "log-VOL", "false alarm");
    for r in &s.fit {
        let _ = writeln!(
            out,
            "{:<9}  {:>6}  {:>9.4}  {:>9.4}  {:>11.4}",
            r.method.label(),
            r.cycles,
            r.nll,
            r.log_vol,
            r.false_alarm_rate
        );
    }
    out
}

/// Renders the stored bench summary.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let summary: BenchSummary = read_json(cfg.paths.reports.join("bench.json"))?;
    Ok(render_bench(&summary))
}
