//! `bnfold` command line: generate, inspect, fold, verify, bench.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error,
//! 3 I/O or parse error. `BNFOLD_SEED` replaces the default seed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bnfold::analysis::{self, AnalysisOptions, Side};
use bnfold::bench::{bench_graph, emit_table, BenchConfig, TableFormat};
use bnfold::graph::Graph;
use bnfold::models::{self, generate, load_graph, Archetype, Dims};
use bnfold::transform::{banoff_pass_with, naive_pass, BanOffOptions, FoldReport};
use bnfold::verify::{check_equivalence, EquivalenceReport, DEFAULT_SEED, DEFAULT_TOLERANCE};

#[derive(Parser)]
#[command(
    name = "bnfold",
    version,
    about = "Fold batch-norm layers out of computation graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an archetype graph to a file.
    Generate {
        /// fig2a, fig2b, fig2c, fig4, fig5a, fig5b, resnet[N], random:NODES:SEED
        archetype: Archetype,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 8)]
        image: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Weight seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print every batch norm's decision and its affine component.
    Inspect {
        file: PathBuf,
        #[arg(long)]
        strict_paper: bool,
    },
    /// Fold a graph, verify the result and write it.
    Fold {
        file: PathBuf,
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long)]
        strict_paper: bool,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tol: f64,
    },
    /// Compare two graphs on random inputs; exit 0 iff they agree.
    Verify {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tol: f64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run both passes on each file and print a comparison table.
    Bench {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "md")]
        format: TableFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Naive,
    Banoff,
}

enum Failure {
    Verification(String),
    Usage(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

fn seed_or_default(seed: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var("BNFOLD_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("BNFOLD_SEED must be an integer, got `{v}`"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn load(path: &Path) -> Result<Graph, Failure> {
    load_graph(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn ids(set: &std::collections::BTreeSet<String>) -> String {
    set.iter().cloned().collect::<Vec<_>>().join(", ")
}

fn inspect(graph: &Graph, strict: bool) {
    let opts = AnalysisOptions {
        strict_paper: strict,
    };
    println!(
        "{}: {} nodes, {} batch norms",
        graph.name(),
        graph.nodes().len(),
        graph.batch_norm_count()
    );
    for bn in graph.batch_norm_ids() {
        let decision = analysis::check_foldable_with(graph, &bn, &opts).expect("batch-norm id");
        let comp = analysis::affine_component_with(graph, &bn, &opts).expect("batch-norm id");
        let direction = decision
            .direction
            .map_or("-".to_string(), |d| d.to_string());
        println!(
            "{bn}: foldable={} direction={direction} reason={}",
            decision.foldable, decision.reason
        );
        println!("  C     = {{{}}}", ids(&comp.members));
        for (label, side) in [("C_in ", Side::In), ("C_out", Side::Out)] {
            let part = comp.part(side);
            println!("  {label} = {{{}}}", ids(&part.members));
            if !part.leaves.is_empty() {
                let leaves: Vec<String> = part
                    .leaves
                    .leaves
                    .iter()
                    .map(|(id, class)| format!("{id}:{class:?}"))
                    .collect();
                println!("    leaves = {}", leaves.join(", "));
                println!(
                    "    I = {{{}}}  O = {{{}}}",
                    ids(&part.partition.inner),
                    ids(&part.partition.outer)
                );
            }
        }
        let halts: Vec<String> = comp
            .halted_at()
            .iter()
            .map(|h| format!("({}, {})", h.member, h.at))
            .collect();
        if !halts.is_empty() {
            println!("  halted at {}", halts.join(", "));
        }
    }
}

#[derive(Serialize)]
struct FoldOutput<'a> {
    report: &'a FoldReport,
    equivalence: &'a EquivalenceReport,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate {
            archetype,
            channels,
            image,
            depth,
            seed,
            output,
        } => {
            let dims = Dims {
                channels,
                image,
                depth,
            };
            let (graph, _) = generate(archetype, &dims, seed_or_default(seed)?)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            models::save_graph(&graph, &output)
                .map_err(|e| Failure::Io(format!("{}: {e}", output.display())))?;
            println!(
                "wrote {} ({} nodes, {} batch norms)",
                output.display(),
                graph.nodes().len(),
                graph.batch_norm_count()
            );
        }
        Command::Inspect { file, strict_paper } => inspect(&load(&file)?, strict_paper),
        Command::Fold {
            file,
            algo,
            strict_paper,
            output,
            report,
            samples,
            seed,
            tol,
        } => {
            let graph = load(&file)?;
            let (folded, fold_report) = match algo {
                Algo::Naive => naive_pass(&graph),
                Algo::Banoff => banoff_pass_with(
                    &graph,
                    &BanOffOptions {
                        analysis: AnalysisOptions { strict_paper },
                        ..Default::default()
                    },
                ),
            };
            let eq = check_equivalence(&graph, &folded, samples, seed_or_default(seed)?, tol)
                .map_err(|e| Failure::Verification(e.to_string()))?;
            println!(
                "folded {} of {} batch norms, removed {:.4}% of parameters, max L1 {:.3e}",
                fold_report.folded_count(),
                graph.batch_norm_count(),
                fold_report.removed_percent,
                eq.max_l1
            );
            for (id, reason) in &fold_report.skipped {
                println!("  kept {id}: {reason}");
            }
            if !eq.pass {
                return Err(Failure::Verification(format!(
                    "folded graph deviates by {:e} (tolerance {:e}); nothing written",
                    eq.max_l1, tol
                )));
            }
            models::save_graph(&folded, &output)
                .map_err(|e| Failure::Io(format!("{}: {e}", output.display())))?;
            if let Some(path) = report {
                let doc = FoldOutput {
                    report: &fold_report,
                    equivalence: &eq,
                };
                write_text(
                    &path,
                    &serde_json::to_string_pretty(&doc).expect("plain data"),
                )?;
            }
        }
        Command::Verify {
            a,
            b,
            samples,
            seed,
            tol,
            json,
        } => {
            let (ga, gb) = (load(&a)?, load(&b)?);
            let eq = check_equivalence(&ga, &gb, samples, seed_or_default(seed)?, tol)
                .map_err(|e| Failure::Verification(e.to_string()))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&eq).expect("plain data"));
            } else {
                println!(
                    "{} samples, max L1 {:.3e}, max Linf {:.3e}: {}",
                    eq.samples,
                    eq.max_l1,
                    eq.max_linf,
                    if eq.pass { "pass" } else { "FAIL" }
                );
            }
            if !eq.pass {
                return Err(Failure::Verification(format!(
                    "max L1 {:e} exceeds {:e}",
                    eq.max_l1, tol
                )));
            }
        }
        Command::Bench {
            files,
            reps,
            batch,
            samples,
            seed,
            format,
        } => {
            if reps < 5 {
                return Err(Failure::Usage("--reps must be at least 5".into()));
            }
            let config = BenchConfig {
                reps,
                batch,
                samples,
                seed: seed_or_default(seed)?,
            };
            let mut rows = Vec::new();
            for file in &files {
                let graph = load(file)?;
                rows.push(
                    bench_graph(&graph, &config)
                        .map_err(|e| Failure::Verification(e.to_string()))?,
                );
            }
            print!("{}", emit_table(&rows, format));
            if rows.iter().any(|r| !r.equivalence_pass) {
                return Err(Failure::Verification(
                    "a folded graph failed verification".into(),
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Verification(m) | Failure::Usage(m) | Failure::Io(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
