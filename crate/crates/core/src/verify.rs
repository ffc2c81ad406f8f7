//! Numerical equivalence, decision audits and the reported metrics.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{self, AnalysisOptions, FoldDecision};
use crate::graph::{param_count, Graph, TensorValue};
use crate::interp::{eval_graph, EvalError, InputBinding};
use crate::transform::apply_fold;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_BATCH: usize = 8;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("graphs differ in signature: {0}")]
    SignatureMismatch(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub samples: usize,
    /// Largest L1 distance of one output tensor, over samples and outputs.
    pub max_l1: f64,
    pub max_linf: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub seed: u64,
}

fn signature_check(g1: &Graph, g2: &Graph) -> Result<(), VerifyError> {
    if g1.inputs() != g2.inputs() {
        return Err(VerifyError::SignatureMismatch("graph inputs differ".into()));
    }
    if g1.outputs().len() != g2.outputs().len() {
        return Err(VerifyError::SignatureMismatch(format!(
            "{} outputs vs {}",
            g1.outputs().len(),
            g2.outputs().len()
        )));
    }
    for (i, (a, b)) in g1.outputs().iter().zip(g2.outputs()).enumerate() {
        if g1.value_shape(a) != g2.value_shape(b) {
            return Err(VerifyError::SignatureMismatch(format!(
                "output {i} has shape {} vs {}",
                g1.value_shape(a),
                g2.value_shape(b)
            )));
        }
    }
    Ok(())
}

/// Standard-normal bindings for every graph input. Sample `index` draws
/// from its own stream of `seed`, so samples are independent of each other.
pub fn random_binding(graph: &Graph, batch: usize, seed: u64, index: u64) -> InputBinding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    graph
        .inputs()
        .iter()
        .map(|input| {
            let shape = input.shape.with_batch(batch);
            let len = shape.dims().iter().product();
            let data = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            (input.id.clone(), TensorValue::new(shape, data))
        })
        .collect()
}

pub fn check_equivalence(
    g1: &Graph,
    g2: &Graph,
    n_samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<EquivalenceReport, VerifyError> {
    signature_check(g1, g2)?;
    let per_sample: Vec<(f64, f64)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let binding = random_binding(g1, DEFAULT_BATCH, seed, i as u64);
            let a = eval_graph(g1, &binding)?;
            let b = eval_graph(g2, &binding)?;
            let mut l1 = 0.0f64;
            let mut linf = 0.0f64;
            for ((_, x), (_, y)) in a.iter().zip(&b) {
                l1 = l1.max(x.l1_distance(y));
                linf = linf.max(x.linf_distance(y));
            }
            Ok((l1, linf))
        })
        .collect::<Result<_, VerifyError>>()?;
    let max_l1 = per_sample.iter().map(|p| p.0).fold(0.0, f64::max);
    let max_linf = per_sample.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(EquivalenceReport {
        samples: n_samples,
        max_l1,
        max_linf,
        tolerance,
        pass: max_l1 <= tolerance,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub bn_id: String,
    pub expected: bool,
    pub decision: FoldDecision,
    /// Present for batch norms labelled foldable that the analysis agrees on.
    pub equivalence: Option<EquivalenceReport>,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.ok)
    }
}

/// Compares each label with the analysis, and folds every batch norm
/// labelled foldable on its own to check the result.
pub fn audit_decisions(graph: &Graph, labels: &BTreeMap<String, bool>) -> AuditReport {
    let opts = AnalysisOptions::default();
    let entries = labels
        .iter()
        .map(|(bn_id, &expected)| {
            let (decision, plan) = match analysis::analyze(graph, bn_id, &opts) {
                Ok(r) => r,
                Err(_) => {
                    return AuditEntry {
                        bn_id: bn_id.clone(),
                        expected,
                        decision: FoldDecision {
                            foldable: false,
                            direction: None,
                            reason: analysis::FoldReason::SurroundedByNonAffine,
                        },
                        equivalence: None,
                        ok: false,
                    }
                }
            };
            let equivalence = match (expected, plan) {
                (true, Some(plan)) => apply_fold(graph, &plan).ok().and_then(|folded| {
                    check_equivalence(graph, &folded, 16, DEFAULT_SEED, DEFAULT_TOLERANCE).ok()
                }),
                _ => None,
            };
            let ok = decision.foldable == expected
                && (!expected || equivalence.as_ref().is_some_and(|e| e.pass));
            AuditEntry {
                bn_id: bn_id.clone(),
                expected,
                decision,
                equivalence,
                ok,
            }
        })
        .collect();
    AuditReport { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamStats {
    pub removed: i64,
    pub percent: f64,
}

pub fn param_stats(before: &Graph, after: &Graph) -> ParamStats {
    let b = param_count(before) as i64;
    let removed = b - param_count(after) as i64;
    let percent = if b == 0 {
        0.0
    } else {
        100.0 * removed as f64 / b as f64
    };
    ParamStats { removed, percent }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedupMeasure {
    pub t_old: Duration,
    pub t_new: Duration,
    pub ratio: f64,
}

impl SpeedupMeasure {
    pub fn from_times(t_old: Duration, t_new: Duration) -> Self {
        let old = t_old.as_secs_f64();
        let ratio = if old == 0.0 {
            0.0
        } else {
            (old - t_new.as_secs_f64()) / old
        };
        SpeedupMeasure {
            t_old,
            t_new,
            ratio,
        }
    }
}

const WARMUP_RUNS: usize = 2;
const REP_TARGET: Duration = Duration::from_millis(10);

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Median single-threaded evaluation time of each graph on one shared
/// binding. Runs of the two graphs alternate.
pub fn speedup_ratio(
    g_old: &Graph,
    g_new: &Graph,
    reps: usize,
    batch: usize,
    seed: u64,
) -> Result<SpeedupMeasure, VerifyError> {
    assert!(reps >= 5, "at least 5 repetitions are needed");
    signature_check(g_old, g_new)?;
    let binding = random_binding(g_old, batch, seed, 0);
    // Fastest of `iters` back-to-back calls. Preemption only ever adds time,
    // so short graphs are repeated until one rep spans about REP_TARGET.
    let time = |g: &Graph, iters: u32| -> Result<Duration, VerifyError> {
        let mut best = Duration::MAX;
        for _ in 0..iters {
            let start = Instant::now();
            let out = eval_graph(g, &binding)?;
            best = best.min(start.elapsed());
            std::hint::black_box(out);
        }
        Ok(best)
    };
    let mut slowest = Duration::ZERO;
    for _ in 0..WARMUP_RUNS {
        slowest = slowest.max(time(g_old, 1)?).max(time(g_new, 1)?);
    }
    let iters = (REP_TARGET.as_nanos() / slowest.as_nanos().max(1)).clamp(1, 1000) as u32;
    let mut old = Vec::with_capacity(reps);
    let mut new = Vec::with_capacity(reps);
    for _ in 0..reps {
        old.push(time(g_old, iters)?);
        new.push(time(g_new, iters)?);
    }
    Ok(SpeedupMeasure::from_times(median(old), median(new)))
}
