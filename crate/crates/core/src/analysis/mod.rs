//! Foldability analysis for batch-norm layers.
//!
//! For a batch norm `N`, [`affine_component`] grows the affine region on
//! either side of it. The input part covers what must change if `N` is
//! pushed into its producers; the output part covers what must change if
//! `N` is pushed into its consumers. [`check_foldable`] solves each part
//! that is more than `{N}` for per-value channel transforms, with every
//! value seen by a non-affine operator or a graph boundary held fixed, and
//! picks a side whose system has a solution. A halt blocks only when the
//! value behind it would have to change. [`plan_fold`] returns the solved
//! side as a [`FoldPlan`] of parameter updates.

mod affine;
mod region;
mod solve;
mod update;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{Graph, GraphError, LayerClass};

pub use affine::ChannelAffine;
pub use region::SideRegion;
pub use update::ParameterUpdate;

use solve::SolveError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoldError {
    #[error("`{0}` is not a batch-norm node")]
    NotABatchNorm(String),
    #[error("batch norm `{bn}` is not foldable: {reason}")]
    NotFoldable { bn: String, reason: FoldReason },
    #[error("folding `{bn}` needs to invert a zero-scale transform at `{node}`")]
    NonInvertibleAffine { bn: String, node: String },
    #[error("no consistent transform exists for `{bn}` (conflict at `{value}`)")]
    InconsistentPush { bn: String, value: String },
    #[error("plan was compiled for a different graph")]
    StalePlan,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Direction {
    /// Push the batch norm into its producers (input part).
    Backward,
    /// Push the batch norm into its consumers (output part).
    Forward,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Backward => "backward",
            Direction::Forward => "forward",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    In,
    Out,
}

impl Side {
    pub fn direction(self) -> Direction {
        match self {
            Side::In => Direction::Backward,
            Side::Out => Direction::Forward,
        }
    }
}

/// Where expansion stopped.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Boundary {
    /// A non-affine node.
    Node(String),
    GraphInput(String),
    GraphOutput(String),
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Node(id) => write!(f, "{id}"),
            Boundary::GraphInput(id) => write!(f, "input:{id}"),
            Boundary::GraphOutput(id) => write!(f, "output:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Halt {
    pub member: String,
    pub at: Boundary,
}

impl Halt {
    pub fn new(member: &str, at: Boundary) -> Self {
        Halt {
            member: member.to_string(),
            at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum LeafClass {
    Expressive,
    BatchNormTerminal,
    /// Dead end, or touching a non-affine operator or graph boundary.
    Blocked,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LeafSet {
    pub leaves: BTreeMap<String, LeafClass>,
}

impl LeafSet {
    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.leaves.keys().cloned().collect()
    }
}

/// Leaves split by whether a directed path links them with the batch norm.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IoPartition {
    /// `I`: receive the fold itself.
    pub inner: BTreeSet<String>,
    /// `O`: compensate for the changed values they read or feed.
    pub outer: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FoldReason {
    Ok,
    /// Both parts are just the batch norm.
    SurroundedByNonAffine,
    /// Every non-trivial part reaches a non-affine operator or graph boundary.
    BlockedLeaf,
    /// A qualifying part needs the inverse of a zero-scale channel.
    NonInvertibleBN,
    /// A qualifying part admits no single consistent transform.
    InconsistentPush,
    /// Sequential-only folding found no fan-in/fan-out-free path.
    NotSequential,
}

impl FoldReason {
    /// Higher means the analysis got further before failing.
    fn rank(self) -> u8 {
        match self {
            FoldReason::Ok => 5,
            FoldReason::NonInvertibleBN => 4,
            FoldReason::InconsistentPush => 3,
            FoldReason::BlockedLeaf => 2,
            FoldReason::NotSequential => 1,
            FoldReason::SurroundedByNonAffine => 0,
        }
    }
}

impl fmt::Display for FoldReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FoldReason::Ok => "OK",
            FoldReason::SurroundedByNonAffine => "SurroundedByNonAffine",
            FoldReason::BlockedLeaf => "BlockedLeaf",
            FoldReason::NonInvertibleBN => "NonInvertibleBN",
            FoldReason::InconsistentPush => "InconsistentPush",
            FoldReason::NotSequential => "NotSequential",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldDecision {
    pub foldable: bool,
    pub direction: Option<Direction>,
    pub reason: FoldReason,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalysisOptions {
    /// Treat neighbouring batch norms as non-expressive leaves instead of
    /// letting them absorb the transform.
    pub strict_paper: bool,
}

/// The affine component of one batch norm, split into its two parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub bn_id: String,
    pub members: BTreeSet<String>,
    pub part_in: SideRegion,
    pub part_out: SideRegion,
}

impl Component {
    pub fn part(&self, side: Side) -> &SideRegion {
        match side {
            Side::In => &self.part_in,
            Side::Out => &self.part_out,
        }
    }

    pub fn halted_at(&self) -> BTreeSet<Halt> {
        self.part_in
            .halts
            .union(&self.part_out.halts)
            .cloned()
            .collect()
    }
}

/// Per-leaf parameter updates that remove one batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub bn_id: String,
    pub direction: Direction,
    /// Transform (new value as a function of old, for backward plans; old as
    /// a function of new, for forward plans) on the edges leaving each value.
    pub edge_affines: BTreeMap<String, ChannelAffine>,
    pub leaf_updates: BTreeMap<String, ParameterUpdate>,
    pub partition: IoPartition,
    pub(crate) graph_fingerprint: u64,
}

fn batch_norm_checked<'g>(
    graph: &'g Graph,
    bn_id: &str,
) -> Result<&'g crate::graph::BatchNormParams, FoldError> {
    graph
        .node(bn_id)
        .and_then(|n| n.kind.as_batch_norm())
        .ok_or_else(|| FoldError::NotABatchNorm(bn_id.to_string()))
}

pub fn affine_component(graph: &Graph, bn_id: &str) -> Result<Component, FoldError> {
    affine_component_with(graph, bn_id, &AnalysisOptions::default())
}

pub fn affine_component_with(
    graph: &Graph,
    bn_id: &str,
    opts: &AnalysisOptions,
) -> Result<Component, FoldError> {
    batch_norm_checked(graph, bn_id)?;
    let part_in = region::explore(graph, bn_id, Direction::Backward, opts);
    let part_out = region::explore(graph, bn_id, Direction::Forward, opts);
    let members = part_in.members.union(&part_out.members).cloned().collect();
    Ok(Component {
        bn_id: bn_id.to_string(),
        members,
        part_in,
        part_out,
    })
}

pub fn component_leaves(component: &Component, side: Side) -> LeafSet {
    component.part(side).leaves.clone()
}

pub fn partition_io(component: &Component, side: Side) -> IoPartition {
    component.part(side).partition.clone()
}

pub fn check_foldable(graph: &Graph, bn_id: &str) -> Result<FoldDecision, FoldError> {
    check_foldable_with(graph, bn_id, &AnalysisOptions::default())
}

pub fn check_foldable_with(
    graph: &Graph,
    bn_id: &str,
    opts: &AnalysisOptions,
) -> Result<FoldDecision, FoldError> {
    let component = affine_component_with(graph, bn_id, opts)?;
    let (_, decision) = decide(graph, &component)?;
    Ok(decision)
}

/// Compiles the plan for the direction chosen by `decision`.
pub fn plan_fold(
    graph: &Graph,
    bn_id: &str,
    decision: &FoldDecision,
) -> Result<FoldPlan, FoldError> {
    plan_fold_with(graph, bn_id, decision, &AnalysisOptions::default())
}

pub fn plan_fold_with(
    graph: &Graph,
    bn_id: &str,
    decision: &FoldDecision,
    opts: &AnalysisOptions,
) -> Result<FoldPlan, FoldError> {
    let direction = match (decision.foldable, decision.direction) {
        (true, Some(d)) => d,
        _ => {
            return Err(FoldError::NotFoldable {
                bn: bn_id.to_string(),
                reason: decision.reason,
            })
        }
    };
    plan_direction(graph, bn_id, direction, opts)
}

/// Compiles a plan for one side without looking at the other one. Used
/// directly by the sequential-only pass.
pub fn plan_direction(
    graph: &Graph,
    bn_id: &str,
    direction: Direction,
    opts: &AnalysisOptions,
) -> Result<FoldPlan, FoldError> {
    batch_norm_checked(graph, bn_id)?;
    let region = region::explore(graph, bn_id, direction, opts);
    if !region.is_candidate() {
        return Err(FoldError::NotFoldable {
            bn: bn_id.to_string(),
            reason: structural_reason(&region),
        });
    }
    compile(graph, bn_id, &region)
}

fn structural_reason(region: &SideRegion) -> FoldReason {
    if region.is_trivial() {
        FoldReason::SurroundedByNonAffine
    } else {
        FoldReason::BlockedLeaf
    }
}

fn decide(
    graph: &Graph,
    component: &Component,
) -> Result<(Option<FoldPlan>, FoldDecision), FoldError> {
    let bn_id = &component.bn_id;
    let mut best: Option<FoldPlan> = None;
    let mut failures = Vec::new();
    for side in [Side::In, Side::Out] {
        let region = component.part(side);
        if !region.is_candidate() {
            failures.push(structural_reason(region));
            continue;
        }
        match compile(graph, bn_id, region) {
            Ok(plan) => {
                let better = match &best {
                    None => true,
                    // Fewer compensating leaves wins; ties keep the backward plan.
                    Some(b) => plan.partition.outer.len() < b.partition.outer.len(),
                };
                if better {
                    best = Some(plan);
                }
            }
            Err(FoldError::NonInvertibleAffine { .. }) => {
                failures.push(FoldReason::NonInvertibleBN)
            }
            Err(FoldError::InconsistentPush { .. }) => failures.push(FoldReason::InconsistentPush),
            Err(FoldError::NotFoldable { reason, .. }) => failures.push(reason),
            Err(e) => return Err(e),
        }
    }
    if let Some(plan) = best {
        let decision = FoldDecision {
            foldable: true,
            direction: Some(plan.direction),
            reason: FoldReason::Ok,
        };
        return Ok((Some(plan), decision));
    }
    let reason = failures
        .into_iter()
        .max_by_key(|r| r.rank())
        .unwrap_or(FoldReason::SurroundedByNonAffine);
    Ok((
        None,
        FoldDecision {
            foldable: false,
            direction: None,
            reason,
        },
    ))
}

/// Check and plan in one go; `Ok(None)` when the batch norm can't be folded.
pub fn analyze(
    graph: &Graph,
    bn_id: &str,
    opts: &AnalysisOptions,
) -> Result<(FoldDecision, Option<FoldPlan>), FoldError> {
    let component = affine_component_with(graph, bn_id, opts)?;
    let (plan, decision) = decide(graph, &component)?;
    Ok((decision, plan))
}

fn compile(graph: &Graph, bn_id: &str, region: &SideRegion) -> Result<FoldPlan, FoldError> {
    let bn = batch_norm_checked(graph, bn_id)?;
    let root = ChannelAffine::from_batch_norm(bn);
    let mut affines = solve::solve_region(graph, region, &root, false).map_err(|e| match e {
        SolveError::Inconsistent { value } => FoldError::InconsistentPush {
            bn: bn_id.to_string(),
            value,
        },
    })?;
    if !region.halted_values.is_empty() {
        affines = solve::solve_region(graph, region, &root, true).map_err(|_| {
            FoldError::NotFoldable {
                bn: bn_id.to_string(),
                reason: FoldReason::BlockedLeaf,
            }
        })?;
    }

    let mut leaf_updates = BTreeMap::new();
    for id in &region.terminals {
        let node = graph.node(id).unwrap();
        debug_assert!(matches!(
            node.class(),
            LayerClass::Expressive | LayerClass::BatchNorm
        ));
        let incoming = affines.get(&node.inputs[0]).filter(|a| !a.is_identity());
        let outgoing = affines.get(id).filter(|a| !a.is_identity());
        if incoming.is_none() && outgoing.is_none() {
            continue;
        }
        let invert = |a: &ChannelAffine| {
            a.inverse().ok_or_else(|| FoldError::NonInvertibleAffine {
                bn: bn_id.to_string(),
                node: id.clone(),
            })
        };
        // Backward transforms map old values to new ones: readers undo them,
        // writers apply them. Forward transforms run the other way.
        let (pre, post) = match region.direction {
            Direction::Backward => (incoming.map(invert).transpose()?, outgoing.cloned()),
            Direction::Forward => (incoming.cloned(), outgoing.map(invert).transpose()?),
        };
        leaf_updates.insert(
            id.clone(),
            update::rewrite_terminal(&node.kind, pre.as_ref(), post.as_ref()),
        );
    }

    Ok(FoldPlan {
        bn_id: bn_id.to_string(),
        direction: region.direction,
        edge_affines: affines,
        leaf_updates,
        partition: region.partition.clone(),
        graph_fingerprint: graph.fingerprint(),
    })
}
