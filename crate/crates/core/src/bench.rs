//! Comparison rows for the two passes, as CSV or markdown.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::graph::Graph;
use crate::transform::{banoff_pass, naive_pass};
use crate::verify::{check_equivalence, speedup_ratio, VerifyError, DEFAULT_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub model: String,
    pub naive_speedup_percent: f64,
    pub banoff_speedup_percent: f64,
    pub removed_params_percent: f64,
    pub bn_total: usize,
    pub bn_folded_naive: usize,
    pub bn_folded_banoff: usize,
    pub equivalence_pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Markdown),
            _ => Err(format!("unknown table format `{s}` (csv or md)")),
        }
    }
}

impl fmt::Display for TableFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableFormat::Csv => "csv",
            TableFormat::Markdown => "md",
        })
    }
}

pub const HEADERS: [&str; 8] = [
    "model",
    "naive speedup % (desk-scale, interpreter-relative)",
    "banoff speedup % (desk-scale, interpreter-relative)",
    "% removed params",
    "bn total",
    "bn folded naive",
    "bn folded banoff",
    "equivalence",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub reps: usize,
    pub batch: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            reps: 20,
            batch: 8,
            samples: 100,
            seed: crate::verify::DEFAULT_SEED,
        }
    }
}

/// Runs both passes on `graph`, verifies both results and times them
/// against the original.
pub fn bench_graph(graph: &Graph, config: &BenchConfig) -> Result<BenchRow, VerifyError> {
    let (naive, naive_report) = naive_pass(graph);
    let (full, full_report) = banoff_pass(graph);
    let eq_naive = check_equivalence(
        graph,
        &naive,
        config.samples,
        config.seed,
        DEFAULT_TOLERANCE,
    )?;
    let eq_full = check_equivalence(graph, &full, config.samples, config.seed, DEFAULT_TOLERANCE)?;
    let t_naive = speedup_ratio(graph, &naive, config.reps, config.batch, config.seed)?;
    let t_full = speedup_ratio(graph, &full, config.reps, config.batch, config.seed)?;
    Ok(BenchRow {
        model: graph.name().to_string(),
        naive_speedup_percent: 100.0 * t_naive.ratio,
        banoff_speedup_percent: 100.0 * t_full.ratio,
        removed_params_percent: full_report.removed_percent,
        bn_total: graph.batch_norm_count(),
        bn_folded_naive: naive_report.folded_count(),
        bn_folded_banoff: full_report.folded_count(),
        equivalence_pass: eq_naive.pass && eq_full.pass,
    })
}

fn cells(row: &BenchRow) -> [String; 8] {
    [
        row.model.clone(),
        format!("{:.2}", row.naive_speedup_percent),
        format!("{:.2}", row.banoff_speedup_percent),
        format!("{:.4}", row.removed_params_percent),
        row.bn_total.to_string(),
        row.bn_folded_naive.to_string(),
        row.bn_folded_banoff.to_string(),
        if row.equivalence_pass { "pass" } else { "FAIL" }.to_string(),
    ]
}

pub fn emit_table(rows: &[BenchRow], format: TableFormat) -> String {
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(HEADERS).expect("in-memory write");
            for row in rows {
                w.write_record(cells(row)).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
        }
        TableFormat::Markdown => {
            let mut out = format!("| {} |\n", HEADERS.join(" | "));
            out.push_str(&format!("|{}\n", "---|".repeat(HEADERS.len())));
            for row in rows {
                out.push_str(&format!("| {} |\n", cells(row).join(" | ")));
            }
            out
        }
    }
}
