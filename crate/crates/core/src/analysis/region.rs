//! Growth of the affine region around a batch-norm node.
//!
//! Expansion runs over values (edge sources) rather than bare node
//! adjacency: when a value is going to change, its producer and every one
//! of its consumers are touched, so a sibling reading the same tensor is
//! never missed. Expressive layers and other batch norms are terminals:
//! they join the region but are not expanded past.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::graph::{Graph, LayerClass, Producer};

use super::{AnalysisOptions, Boundary, Direction, Halt, IoPartition, LeafClass, LeafSet};

/// One side (input or output part) of a batch norm's affine component.
#[derive(Debug, Clone, PartialEq)]
pub struct SideRegion {
    pub direction: Direction,
    /// Member node ids, including the batch norm itself.
    pub members: BTreeSet<String>,
    pub halts: BTreeSet<Halt>,
    pub leaves: LeafSet,
    pub partition: IoPartition,
    /// Values whose transform is solved for.
    pub(crate) values: BTreeSet<String>,
    /// Parameterless affine members that tie transforms together.
    pub(crate) links: BTreeSet<String>,
    /// Expressive and batch-norm members other than the root.
    pub(crate) terminals: BTreeSet<String>,
    /// The value carrying the batch-norm transform, and the one pinned to identity.
    pub(crate) root_value: String,
    pub(crate) pinned_value: String,
    pub(crate) pinned_touched: bool,
    /// Values read by a non-affine node or the caller, or not produced by an
    /// affine member. They must keep their old contents.
    pub(crate) halted_values: BTreeSet<String>,
    /// A neighbouring batch norm was met while running in strict mode.
    pub(crate) strict_violation: bool,
}

impl SideRegion {
    pub fn is_trivial(&self) -> bool {
        self.members.len() == 1
    }

    /// Every leaf is a layer with parameters and nothing was halted. Implies
    /// foldability whenever the transforms are consistent.
    pub fn qualifies(&self) -> bool {
        !self.is_trivial()
            && self.halts.is_empty()
            && !self.strict_violation
            && self
                .leaves
                .leaves
                .values()
                .all(|c| matches!(c, LeafClass::Expressive | LeafClass::BatchNormTerminal))
    }

    /// Non-trivial and no strict-mode conflict; halts are left to the solver.
    pub(crate) fn is_candidate(&self) -> bool {
        !self.is_trivial() && !self.strict_violation
    }
}

pub(crate) fn explore(
    graph: &Graph,
    bn_id: &str,
    direction: Direction,
    opts: &AnalysisOptions,
) -> SideRegion {
    let bn = graph.node(bn_id).expect("caller checked the id");
    let source = bn.inputs[0].clone();
    let (root_value, pinned_value) = match direction {
        Direction::Backward => (source, bn_id.to_string()),
        Direction::Forward => (bn_id.to_string(), source),
    };

    let mut members: BTreeSet<String> = BTreeSet::from([bn_id.to_string()]);
    let mut halts = BTreeSet::new();
    let mut values = BTreeSet::new();
    let mut links = BTreeSet::new();
    let mut terminals = BTreeSet::new();
    let mut pinned_touched = false;
    let mut halted_values = BTreeSet::new();
    let mut strict_violation = false;

    let mut queue: VecDeque<(String, String)> = VecDeque::new();
    queue.push_back((root_value.clone(), bn_id.to_string()));

    while let Some((value, explorer)) = queue.pop_front() {
        if value == pinned_value {
            pinned_touched = true;
            continue;
        }
        if !values.insert(value.clone()) {
            continue;
        }

        // Who halts are charged to when the value itself cannot change.
        let mut owner = explorer.clone();

        if value != bn_id {
            match graph.producer(&value).expect("validated graph") {
                Producer::Input(_) => {
                    halts.insert(Halt::new(&explorer, Boundary::GraphInput(value.clone())));
                    halted_values.insert(value.clone());
                }
                Producer::Node(_) => {
                    let node = graph.node(&value).unwrap();
                    match node.class() {
                        LayerClass::NonAffine => {
                            halts.insert(Halt::new(&explorer, Boundary::Node(value.clone())));
                            halted_values.insert(value.clone());
                        }
                        LayerClass::Expressive | LayerClass::BatchNorm => {
                            if node.class() == LayerClass::BatchNorm && opts.strict_paper {
                                strict_violation = true;
                            }
                            members.insert(value.clone());
                            terminals.insert(value.clone());
                            owner = value.clone();
                        }
                        LayerClass::OtherAffine => {
                            members.insert(value.clone());
                            owner = value.clone();
                            if links.insert(value.clone()) {
                                for input in &node.inputs {
                                    queue.push_back((input.clone(), value.clone()));
                                }
                            }
                        }
                    }
                }
            }
        } else {
            owner = bn_id.to_string();
        }

        if graph.is_graph_output(&value) {
            halts.insert(Halt::new(&owner, Boundary::GraphOutput(value.clone())));
            halted_values.insert(value.clone());
        }

        for consumer in graph.consumers(&value) {
            if consumer.id == bn_id {
                continue;
            }
            match consumer.class() {
                LayerClass::NonAffine => {
                    halts.insert(Halt::new(&owner, Boundary::Node(consumer.id.clone())));
                    halted_values.insert(value.clone());
                }
                LayerClass::Expressive | LayerClass::BatchNorm => {
                    if consumer.class() == LayerClass::BatchNorm && opts.strict_paper {
                        strict_violation = true;
                    }
                    members.insert(consumer.id.clone());
                    terminals.insert(consumer.id.clone());
                }
                LayerClass::OtherAffine => {
                    members.insert(consumer.id.clone());
                    if links.insert(consumer.id.clone()) {
                        queue.push_back((consumer.id.clone(), consumer.id.clone()));
                        for input in &consumer.inputs {
                            queue.push_back((input.clone(), consumer.id.clone()));
                        }
                    }
                }
            }
        }
    }

    let leaves = classify_leaves(graph, bn_id, &members, &halts);
    let partition = split_leaves(graph, bn_id, direction, &members, &leaves);

    SideRegion {
        direction,
        members,
        halts,
        leaves,
        partition,
        values,
        links,
        terminals,
        root_value,
        pinned_value,
        pinned_touched,
        halted_values,
        strict_violation,
    }
}

/// Distinct member neighbours of `id` (producers of its inputs and its consumers).
fn degree_within(graph: &Graph, id: &str, members: &BTreeSet<String>) -> usize {
    let node = graph.node(id).unwrap();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for input in &node.inputs {
        if members.contains(input) {
            seen.insert(input);
        }
    }
    for c in graph.consumers(id) {
        if members.contains(&c.id) {
            seen.insert(&c.id);
        }
    }
    seen.len()
}

fn classify_leaves(
    graph: &Graph,
    bn_id: &str,
    members: &BTreeSet<String>,
    halts: &BTreeSet<Halt>,
) -> LeafSet {
    let halted: BTreeSet<&str> = halts.iter().map(|h| h.member.as_str()).collect();
    let mut leaves = BTreeMap::new();
    for id in members {
        if id == bn_id {
            continue;
        }
        let node = graph.node(id).unwrap();
        let class = if halted.contains(id.as_str()) {
            Some(LeafClass::Blocked)
        } else {
            match node.class() {
                LayerClass::Expressive => Some(LeafClass::Expressive),
                LayerClass::BatchNorm => Some(LeafClass::BatchNormTerminal),
                _ if degree_within(graph, id, members) <= 1 => Some(LeafClass::Blocked),
                _ => None,
            }
        };
        if let Some(class) = class {
            leaves.insert(id.clone(), class);
        }
    }
    LeafSet { leaves }
}

/// `I` = leaves with a directed path to the batch norm (backward) or from it
/// (forward) through members; `O` = the rest.
fn split_leaves(
    graph: &Graph,
    bn_id: &str,
    direction: Direction,
    members: &BTreeSet<String>,
    leaves: &LeafSet,
) -> IoPartition {
    let mut reached: BTreeSet<String> = BTreeSet::from([bn_id.to_string()]);
    let mut frontier = vec![bn_id.to_string()];
    while let Some(id) = frontier.pop() {
        let next: Vec<String> = match direction {
            Direction::Backward => graph.node(&id).unwrap().inputs.clone(),
            Direction::Forward => graph.consumers(&id).iter().map(|n| n.id.clone()).collect(),
        };
        for n in next {
            if members.contains(&n) && reached.insert(n.clone()) {
                // Terminals end a directed path.
                let node = graph.node(&n).unwrap();
                if node.class() == LayerClass::OtherAffine {
                    frontier.push(n);
                }
            }
        }
    }
    let mut partition = IoPartition::default();
    for id in leaves.leaves.keys() {
        if reached.contains(id) {
            partition.inner.insert(id.clone());
        } else {
            partition.outer.insert(id.clone());
        }
    }
    partition
}
