//! Random valid graphs over the whole operator set.
//!
//! Nodes are appended one at a time. Each picks an operator by weight and
//! its operands from the values built so far, preferring the most recent
//! one. Operators that do not fit any available operand are skipped. One
//! position is reserved for a batch norm, so every graph has at least one.
//! Every value nobody reads becomes a graph output.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::graph::{
    build_graph, AffineOp, Graph, GraphError, GraphInput, Node, NodeKind, NonAffineOp, TensorShape,
};

use super::init::Init;

#[derive(Debug, Clone, Copy)]
enum Op {
    Dense,
    Conv,
    BatchNorm,
    Activation,
    MaxPool,
    AvgPool,
    Add,
    Concat,
    Flatten,
    Identity,
}

const OPS: [(Op, u32); 10] = [
    (Op::Dense, 4),
    (Op::Conv, 3),
    (Op::BatchNorm, 5),
    (Op::Activation, 3),
    (Op::MaxPool, 1),
    (Op::AvgPool, 1),
    (Op::Add, 3),
    (Op::Concat, 2),
    (Op::Flatten, 1),
    (Op::Identity, 2),
];

struct Builder {
    init: Init,
    values: Vec<(String, TensorShape)>,
    nodes: Vec<Node>,
}

impl Builder {
    fn pick_operand(&mut self, fits: impl Fn(&TensorShape) -> bool) -> Option<usize> {
        let last = self.values.len() - 1;
        if fits(&self.values[last].1) && self.init.rng.random_bool(0.6) {
            return Some(last);
        }
        let candidates: Vec<usize> = (0..self.values.len())
            .filter(|&i| fits(&self.values[i].1))
            .collect();
        candidates.choose(&mut self.init.rng).copied()
    }

    fn try_op(&mut self, op: Op, id: &str) -> Option<Node> {
        let spatial_ok = |s: &TensorShape| s.rank() == 4;
        match op {
            Op::Dense => {
                let a = self.pick_operand(|s| s.rank() == 2)?;
                let inp = self.values[a].1.channels();
                let out = self.init.rng.random_range(2..=6);
                Some(Node::new(
                    id,
                    self.init.dense(out, inp),
                    &[&self.values[a].0],
                ))
            }
            Op::Conv => {
                let a = self.pick_operand(spatial_ok)?;
                let s = &self.values[a].1;
                let k = if s.dims()[2] >= 4 && self.init.rng.random_bool(0.5) {
                    3
                } else {
                    1
                };
                let inp = s.channels();
                let out = self.init.rng.random_range(2..=4);
                let kind = self.init.conv(out, inp, k);
                Some(Node::new(id, kind, &[&self.values[a].0]))
            }
            Op::BatchNorm => {
                let a = self.pick_operand(|_| true)?;
                let kind = self.init.batch_norm(self.values[a].1.channels());
                Some(Node::new(id, kind, &[&self.values[a].0]))
            }
            Op::Activation => {
                let a = self.pick_operand(|_| true)?;
                let op = *[NonAffineOp::Relu, NonAffineOp::Sigmoid, NonAffineOp::Tanh]
                    .choose(&mut self.init.rng)
                    .unwrap();
                Some(Node::new(id, NodeKind::NonAffine(op), &[&self.values[a].0]))
            }
            Op::MaxPool | Op::AvgPool => {
                let a = self.pick_operand(|s| s.rank() == 4 && s.dims()[2] >= 4)?;
                let kind = match op {
                    Op::MaxPool => NodeKind::NonAffine(NonAffineOp::MaxPool2d { kh: 2, kw: 2 }),
                    _ => NodeKind::OtherAffine(AffineOp::AvgPool2d { kh: 2, kw: 2 }),
                };
                Some(Node::new(id, kind, &[&self.values[a].0]))
            }
            Op::Add => {
                let a = self.pick_operand(|_| true)?;
                let shape = self.values[a].1.clone();
                let b = self.pick_operand(|s| *s == shape)?;
                let (x, y) = (self.values[a].0.clone(), self.values[b].0.clone());
                Some(Node::new(
                    id,
                    NodeKind::OtherAffine(AffineOp::Add),
                    &[&x, &y],
                ))
            }
            Op::Concat => {
                let a = self.pick_operand(|_| true)?;
                let shape = self.values[a].1.clone();
                let b = self.pick_operand(|s| {
                    s.rank() == shape.rank() && s.dims()[2..] == shape.dims()[2..]
                })?;
                let (x, y) = (self.values[a].0.clone(), self.values[b].0.clone());
                Some(Node::new(
                    id,
                    NodeKind::OtherAffine(AffineOp::Concat),
                    &[&x, &y],
                ))
            }
            Op::Flatten => {
                let a = self.pick_operand(spatial_ok)?;
                let kind = NodeKind::OtherAffine(AffineOp::Flatten);
                Some(Node::new(id, kind, &[&self.values[a].0]))
            }
            Op::Identity => {
                let a = self.pick_operand(|_| true)?;
                let kind = NodeKind::OtherAffine(AffineOp::Identity);
                Some(Node::new(id, kind, &[&self.values[a].0]))
            }
        }
    }

    fn shape_of(&self, node: &Node) -> TensorShape {
        let inputs: Vec<&TensorShape> = node
            .inputs
            .iter()
            .map(|i| &self.values.iter().find(|(id, _)| id == i).unwrap().1)
            .collect();
        crate::graph::node_output_shape(&node.kind, &inputs).expect("grammar keeps shapes valid")
    }
}

pub(super) fn random_dag(n_nodes: usize, seed: u64) -> Result<Graph, GraphError> {
    let mut init = Init::new(seed);
    let input = if init.rng.random_bool(0.5) {
        TensorShape::vector(init.rng.random_range(2..=6))
    } else {
        let hw = init.rng.random_range(4..=6);
        TensorShape::image(init.rng.random_range(2..=4), hw, hw)
    };
    let forced_bn = init.rng.random_range(0..n_nodes);
    let mut b = Builder {
        init,
        values: vec![("x".to_string(), input.clone())],
        nodes: Vec::new(),
    };
    let weights: Vec<u32> = OPS.iter().map(|(_, w)| *w).collect();
    let total: u32 = weights.iter().sum();
    for k in 0..n_nodes {
        let id = format!("n{k:02}");
        let node = loop {
            let op = if k == forced_bn {
                Op::BatchNorm
            } else {
                let mut r = b.init.rng.random_range(0..total);
                let mut chosen = OPS[0].0;
                for (op, w) in OPS {
                    if r < w {
                        chosen = op;
                        break;
                    }
                    r -= w;
                }
                chosen
            };
            if let Some(node) = b.try_op(op, &id) {
                break node;
            }
        };
        let shape = b.shape_of(&node);
        b.values.push((id, shape));
        b.nodes.push(node);
    }

    let read: BTreeSet<&str> = b
        .nodes
        .iter()
        .flat_map(|n| n.inputs.iter().map(String::as_str))
        .collect();
    let outputs = b
        .nodes
        .iter()
        .filter(|n| !read.contains(n.id.as_str()))
        .map(|n| n.id.clone())
        .collect();
    build_graph(
        format!("random{n_nodes}s{seed}"),
        vec![GraphInput::new("x", input)],
        b.nodes,
        outputs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_graph() {
        assert_eq!(random_dag(12, 7).unwrap(), random_dag(12, 7).unwrap());
        assert_ne!(random_dag(12, 7).unwrap(), random_dag(12, 8).unwrap());
    }

    #[test]
    fn every_graph_is_valid_with_a_batch_norm() {
        for seed in 0..300 {
            let n = 1 + (seed as usize % 15);
            let g = random_dag(n, seed).unwrap();
            assert_eq!(g.nodes().len(), n);
            assert!(g.batch_norm_count() >= 1, "seed {seed}");
            assert!(!g.outputs().is_empty());
        }
    }
}
