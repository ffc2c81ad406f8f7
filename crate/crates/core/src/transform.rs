//! Applying fold plans, and the two end-to-end passes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::analysis::{self, AnalysisOptions, Direction, FoldError, FoldPlan, FoldReason};
use crate::graph::{param_count, AffineOp, Graph, LayerClass, NodeKind, Producer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Algorithm {
    Naive,
    BanOff,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub algorithm: Algorithm,
    pub folded: Vec<(String, Direction)>,
    pub skipped: Vec<(String, FoldReason)>,
    pub params_before: usize,
    pub params_after: usize,
    pub removed_percent: f64,
}

impl FoldReport {
    fn new(
        algorithm: Algorithm,
        before: &Graph,
        after: &Graph,
        folded: Vec<(String, Direction)>,
        skipped: Vec<(String, FoldReason)>,
    ) -> Self {
        let params_before = param_count(before);
        let params_after = param_count(after);
        let removed_percent = if params_before == 0 {
            0.0
        } else {
            100.0 * (params_before - params_after) as f64 / params_before as f64
        };
        FoldReport {
            algorithm,
            folded,
            skipped,
            params_before,
            params_after,
            removed_percent,
        }
    }

    pub fn folded_count(&self) -> usize {
        self.folded.len()
    }
}

/// Deletes the planned batch norm, rewires its readers to its input and
/// installs the leaf updates. The input graph is left untouched.
pub fn apply_fold(graph: &Graph, plan: &FoldPlan) -> Result<Graph, FoldError> {
    if graph.fingerprint() != plan.graph_fingerprint {
        return Err(FoldError::StalePlan);
    }
    let bn = graph
        .node(&plan.bn_id)
        .ok_or_else(|| FoldError::NotABatchNorm(plan.bn_id.clone()))?;
    let source = bn.inputs[0].clone();

    let mut parts = graph.to_parts();
    parts.nodes.retain(|n| n.id != plan.bn_id);
    for node in &mut parts.nodes {
        for input in &mut node.inputs {
            if *input == plan.bn_id {
                *input = source.clone();
            }
        }
        if let Some(update) = plan.leaf_updates.get(&node.id) {
            node.kind = update.clone().into_kind();
        }
    }
    for out in &mut parts.outputs {
        if *out == plan.bn_id {
            *out = source.clone();
        }
    }
    Ok(parts.build()?)
}

/// Folds along strictly sequential paths only: a single scan in
/// topological order, trying each batch norm backward then forward.
pub fn naive_pass(graph: &Graph) -> (Graph, FoldReport) {
    let opts = AnalysisOptions::default();
    let mut current = graph.clone();
    let mut folded = Vec::new();
    let mut skipped = Vec::new();
    for bn_id in graph.batch_norm_ids() {
        let mut reason = None;
        for direction in [Direction::Backward, Direction::Forward] {
            if !sequential_path(&current, &bn_id, direction) {
                continue;
            }
            match analysis::plan_direction(&current, &bn_id, direction, &opts)
                .and_then(|plan| apply_fold(&current, &plan))
            {
                Ok(next) => {
                    current = next;
                    folded.push((bn_id.clone(), direction));
                    reason = Some(FoldReason::Ok);
                    break;
                }
                Err(e) => reason = reason.or(Some(reason_of(&e))),
            }
        }
        match reason {
            Some(FoldReason::Ok) => {}
            Some(r) => skipped.push((bn_id, r)),
            None => {
                let r = match analysis::affine_component(&current, &bn_id) {
                    Ok(c) if c.part_in.is_trivial() && c.part_out.is_trivial() => {
                        FoldReason::SurroundedByNonAffine
                    }
                    _ => FoldReason::NotSequential,
                };
                skipped.push((bn_id, r));
            }
        }
    }
    let report = FoldReport::new(Algorithm::Naive, graph, &current, folded, skipped);
    (current, report)
}

fn reason_of(e: &FoldError) -> FoldReason {
    match e {
        FoldError::NotFoldable { reason, .. } => *reason,
        FoldError::NonInvertibleAffine { .. } => FoldReason::NonInvertibleBN,
        _ => FoldReason::InconsistentPush,
    }
}

fn single_input_link(kind: &NodeKind) -> bool {
    matches!(
        kind,
        NodeKind::OtherAffine(AffineOp::Identity | AffineOp::AvgPool2d { .. } | AffineOp::Flatten)
    )
}

/// Whether an expressive layer is reachable from `bn_id` in `direction`
/// through nodes that each have exactly one predecessor and one successor.
fn sequential_path(graph: &Graph, bn_id: &str, direction: Direction) -> bool {
    if graph.fan_out(bn_id) != 1 {
        return false;
    }
    match direction {
        Direction::Backward => {
            let mut cur = graph.node(bn_id).unwrap().inputs[0].clone();
            loop {
                if graph.fan_out(&cur) != 1 {
                    return false;
                }
                let Some(Producer::Node(_)) = graph.producer(&cur) else {
                    return false;
                };
                let node = graph.node(&cur).unwrap();
                if node.class() == LayerClass::Expressive {
                    return true;
                }
                if !single_input_link(&node.kind) {
                    return false;
                }
                cur = node.inputs[0].clone();
            }
        }
        Direction::Forward => {
            let mut cur = bn_id.to_string();
            loop {
                let consumers = graph.consumers(&cur);
                if graph.fan_out(&cur) != 1 || consumers.len() != 1 {
                    return false;
                }
                let next = consumers[0];
                if next.class() == LayerClass::Expressive {
                    return true;
                }
                if !single_input_link(&next.kind) {
                    return false;
                }
                cur = next.id.clone();
            }
        }
    }
}

/// Scan order for the fixed-point pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ScanOrder {
    #[default]
    Topological,
    /// Batch norms listed earlier are tried first; unlisted ones go last in
    /// topological order.
    Priority(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BanOffOptions {
    pub analysis: AnalysisOptions,
    pub order: ScanOrder,
}

pub fn banoff_pass(graph: &Graph) -> (Graph, FoldReport) {
    banoff_pass_with(graph, &BanOffOptions::default())
}

/// Folds the first foldable batch norm, then rescans, until a full scan
/// folds nothing.
pub fn banoff_pass_with(graph: &Graph, opts: &BanOffOptions) -> (Graph, FoldReport) {
    let mut current = graph.clone();
    let mut folded = Vec::new();
    loop {
        let mut reasons = BTreeMap::new();
        let mut progressed = false;
        for bn_id in scan(&current, &opts.order) {
            let (decision, plan) = analysis::analyze(&current, &bn_id, &opts.analysis)
                .expect("scan yields batch-norm ids");
            if let Some(plan) = plan {
                current = apply_fold(&current, &plan).expect("plan is fresh");
                folded.push((bn_id, plan.direction));
                progressed = true;
                break;
            }
            reasons.insert(bn_id, decision.reason);
        }
        if !progressed {
            let skipped = current
                .batch_norm_ids()
                .into_iter()
                .map(|id| {
                    let r = reasons[&id];
                    (id, r)
                })
                .collect();
            let report = FoldReport::new(Algorithm::BanOff, graph, &current, folded, skipped);
            return (current, report);
        }
    }
}

fn scan(graph: &Graph, order: &ScanOrder) -> Vec<String> {
    let mut ids = graph.batch_norm_ids();
    if let ScanOrder::Priority(priority) = order {
        let rank: BTreeMap<&str, usize> = priority
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let topo: BTreeMap<String, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        ids.sort_by_key(|id| {
            (
                rank.get(id.as_str()).copied().unwrap_or(usize::MAX),
                topo[id],
            )
        });
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{
        build_graph, BatchNormParams, DenseParams, GraphInput, Node, NonAffineOp, TensorShape,
    };

    fn bn(c: usize, gamma: f64) -> NodeKind {
        NodeKind::BatchNorm(BatchNormParams {
            gamma: vec![gamma; c],
            beta: vec![0.5; c],
            mu: vec![0.25; c],
            sigma: vec![1.5; c],
            epsilon: 1e-3,
        })
    }

    fn dense(o: usize, i: usize) -> NodeKind {
        let weight = (0..o * i).map(|k| (k as f64 * 0.37).sin()).collect();
        NodeKind::Dense(DenseParams::new(o, i, weight, vec![0.1; o]))
    }

    fn relu() -> NodeKind {
        NodeKind::NonAffine(NonAffineOp::Relu)
    }

    fn chain() -> Graph {
        build_graph(
            "chain",
            vec![GraphInput::new("x", TensorShape::vector(3))],
            vec![
                Node::new("d", dense(4, 3), &["x"]),
                Node::new("n", bn(4, 2.0), &["d"]),
                Node::new("r", relu(), &["n"]),
            ],
            vec!["r".into()],
        )
        .unwrap()
    }

    #[test]
    fn chain_folds_backward_and_drops_the_node() {
        let g = chain();
        let (folded, report) = banoff_pass(&g);
        assert_eq!(report.folded, vec![("n".to_string(), Direction::Backward)]);
        assert_eq!(folded.nodes().len(), 2);
        assert_eq!(report.params_before - report.params_after, 16);
        assert_eq!(folded.node("r").unwrap().inputs, vec!["d".to_string()]);
    }

    #[test]
    fn stale_plan_is_rejected() {
        let g = chain();
        let (_, plan) = analysis::analyze(&g, "n", &AnalysisOptions::default()).unwrap();
        let plan = plan.unwrap();
        let (other, _) = naive_pass(&g);
        assert_eq!(apply_fold(&other, &plan), Err(FoldError::StalePlan));
        assert!(apply_fold(&g, &plan).is_ok());
    }

    #[test]
    fn identity_bn_fold_keeps_weights_bit_identical() {
        let id_bn = NodeKind::BatchNorm(BatchNormParams {
            gamma: vec![1.0; 4],
            beta: vec![0.0; 4],
            mu: vec![0.0; 4],
            sigma: vec![0.999; 4],
            epsilon: 0.001,
        });
        let g = build_graph(
            "id",
            vec![GraphInput::new("x", TensorShape::vector(3))],
            vec![
                Node::new("d", dense(4, 3), &["x"]),
                Node::new("n", id_bn, &["d"]),
                Node::new("r", relu(), &["n"]),
            ],
            vec!["r".into()],
        )
        .unwrap();
        let (folded, _) = banoff_pass(&g);
        assert_eq!(folded.node("d").unwrap().kind, g.node("d").unwrap().kind);
    }

    #[test]
    fn bn_between_activations_is_surrounded() {
        let g = build_graph(
            "sandwich",
            vec![GraphInput::new("x", TensorShape::vector(3))],
            vec![
                Node::new("a", relu(), &["x"]),
                Node::new("n", bn(3, 1.5), &["a"]),
                Node::new("b", relu(), &["n"]),
            ],
            vec!["b".into()],
        )
        .unwrap();
        let (_, naive) = naive_pass(&g);
        let (_, full) = banoff_pass(&g);
        assert_eq!(
            naive.skipped,
            vec![("n".into(), FoldReason::SurroundedByNonAffine)]
        );
        assert_eq!(
            full.skipped,
            vec![("n".into(), FoldReason::SurroundedByNonAffine)]
        );
    }

    #[test]
    fn no_batch_norm_means_empty_report() {
        let g = build_graph(
            "plain",
            vec![GraphInput::new("x", TensorShape::vector(3))],
            vec![Node::new("d", dense(2, 3), &["x"])],
            vec!["d".into()],
        )
        .unwrap();
        let (out, report) = banoff_pass(&g);
        assert_eq!(out, g);
        assert!(report.folded.is_empty() && report.skipped.is_empty());
        assert_eq!(report.removed_percent, 0.0);
    }

    #[test]
    fn sibling_reader_forces_compensation() {
        // d feeds both the batch norm and a second dense layer.
        let g = build_graph(
            "sibling",
            vec![GraphInput::new("x", TensorShape::vector(3))],
            vec![
                Node::new("d", dense(4, 3), &["x"]),
                Node::new("n", bn(4, 2.0), &["d"]),
                Node::new("r", relu(), &["n"]),
                Node::new("e", dense(2, 4), &["d"]),
            ],
            vec!["r".into(), "e".into()],
        )
        .unwrap();
        let (_, naive) = naive_pass(&g);
        assert_eq!(naive.skipped, vec![("n".into(), FoldReason::NotSequential)]);
        let (_, plan) = analysis::analyze(&g, "n", &AnalysisOptions::default()).unwrap();
        let plan = plan.unwrap();
        assert_eq!(plan.direction, Direction::Backward);
        assert!(plan.partition.inner.contains("d"));
        assert!(plan.partition.outer.contains("e"));
    }
}
