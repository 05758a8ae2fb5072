//! Strategy × budget comparison tables built from run summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use wdunet_al::evaluate::MeanStd;
use wdunet_al::{StrategyName, Summary};

use crate::error::CliError;

pub const SUMMARY: &str = "summary.json";
pub const METRICS: [&str; 5] = ["dsc", "precision", "td", "bd", "iou"];
const TITLES: [&str; 5] = ["DSC", "Precision", "TD", "BD", "IoU"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub strategy: String,
    pub budget: f64,
    pub runs: usize,
    /// In `METRICS` order.
    pub metrics: [MeanStd; 5],
}

pub fn load_summaries(dirs: &[PathBuf]) -> Result<Vec<Summary>, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    dirs.iter()
        .map(|d| {
            let path = d.join(SUMMARY);
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Data(format!("{}: no readable {SUMMARY} ({e})", d.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn strategy_rank(name: &str) -> usize {
    [StrategyName::Random, StrategyName::LeastConfidence, StrategyName::Entropy, StrategyName::Wd]
        .iter()
        .position(|s| s.as_str() == name)
        .unwrap_or(usize::MAX)
}

fn final_metrics(s: &Summary) -> [MeanStd; 5] {
    let m = &s.final_round.metrics;
    [m.dsc, m.precision, m.td, m.bd, m.iou]
}

/// Groups runs by (strategy, label budget). A group of one run keeps that
/// run's spread over test units; larger groups report the mean and spread
/// of the per-run means (seed-to-seed variation).
pub fn aggregate(summaries: &[Summary]) -> Vec<ReportRow> {
    let mut keys: Vec<(String, f64)> = summaries
        .iter()
        .map(|s| (s.strategy.clone(), s.config.experiment.label_budget_fraction))
        .collect();
    keys.sort_by(|a, b| {
        strategy_rank(&a.0)
            .cmp(&strategy_rank(&b.0))
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.total_cmp(&b.1))
    });
    keys.dedup();
    keys.into_iter()
        .map(|(strategy, budget)| {
            let group: Vec<[MeanStd; 5]> = summaries
                .iter()
                .filter(|s| s.strategy == strategy && s.config.experiment.label_budget_fraction == budget)
                .map(final_metrics)
                .collect();
            let metrics = if group.len() == 1 {
                group[0]
            } else {
                std::array::from_fn(|k| MeanStd::of(&group.iter().map(|g| g[k].mean).collect::<Vec<_>>()))
            };
            ReportRow {
                strategy,
                budget,
                runs: group.len(),
                metrics,
            }
        })
        .collect()
}

fn budget_label(b: f64) -> String {
    format!("{}%", (b * 10000.0).round() / 100.0)
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("strategy,budget,runs");
    for m in METRICS {
        let _ = write!(out, ",{m}_mean,{m}_std");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.strategy, r.budget, r.runs);
        for m in &r.metrics {
            let _ = write!(out, ",{},{}", m.mean, m.std);
        }
        out.push('\n');
    }
    out
}

/// Fixed-width table: strategy left-aligned, the rest right-aligned.
pub fn report_text(rows: &[ReportRow]) -> String {
    let mut table: Vec<Vec<String>> = vec![["Strategy", "Budget", "Runs"]
        .iter()
        .chain(TITLES.iter())
        .map(|s| s.to_string())
        .collect()];
    for r in rows {
        let mut line = vec![r.strategy.clone(), budget_label(r.budget), r.runs.to_string()];
        line.extend(r.metrics.iter().map(|m| format!("{:.4}±{:.4}", m.mean, m.std)));
        table.push(line);
    }
    let width = |c: usize| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..table[0].len()).map(width).collect();
    let mut out = String::new();
    for line in &table {
        let cells: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let pad = " ".repeat(widths[c] - cell.chars().count());
                if c == 0 {
                    format!("{cell}{pad}")
                } else {
                    format!("{pad}{cell}")
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Writes `report.csv` and `report.txt` into `out`.
pub fn write_report(rows: &[ReportRow], out: &Path) -> Result<(), CliError> {
    for (name, text) in [("report.csv", report_csv(rows)), ("report.txt", report_text(rows))] {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}
