use crate::graph::{
    build_graph, AffineOp, Graph, GraphInput, Node, NodeKind, NonAffineOp, TensorShape,
};

use super::init::Init;
use super::{Archetype, Dims, Labels, ModelError};

const RELU: NodeKind = NodeKind::NonAffine(NonAffineOp::Relu);
const TANH: NodeKind = NodeKind::NonAffine(NonAffineOp::Tanh);
const IDENTITY: NodeKind = NodeKind::OtherAffine(AffineOp::Identity);
const ADD: NodeKind = NodeKind::OtherAffine(AffineOp::Add);
const CONCAT: NodeKind = NodeKind::OtherAffine(AffineOp::Concat);
const FLATTEN: NodeKind = NodeKind::OtherAffine(AffineOp::Flatten);

const IMAGE_CHANNELS: usize = 3;
const CLASSES: usize = 10;

fn avg_pool(k: usize) -> NodeKind {
    NodeKind::OtherAffine(AffineOp::AvgPool2d { kh: k, kw: k })
}

fn labels(entries: &[(&str, bool, bool)]) -> Labels {
    let mut l = Labels::default();
    for &(id, naive, banoff) in entries {
        l.foldable.insert(id.to_string(), banoff);
        if naive {
            l.naive.insert(id.to_string());
        }
        if banoff {
            l.banoff.insert(id.to_string());
        }
    }
    l
}

fn finish(
    name: String,
    input: TensorShape,
    nodes: Vec<Node>,
    outputs: &[&str],
    labels: Labels,
) -> Result<(Graph, Labels), ModelError> {
    let graph = build_graph(
        name,
        vec![GraphInput::new("x", input)],
        nodes,
        outputs.iter().map(|s| s.to_string()).collect(),
    )?;
    Ok((graph, labels))
}

pub(super) fn build(
    archetype: Archetype,
    dims: &Dims,
    seed: u64,
) -> Result<(Graph, Labels), ModelError> {
    let mut init = Init::new(seed);
    let c = dims.channels;
    let h = dims.image;
    let name = archetype.name();
    match archetype {
        Archetype::Fig2a => {
            if h < 2 * dims.depth + 1 {
                return Err(ModelError::InvalidDims(format!(
                    "{} 3x3 convolutions need images of at least {}",
                    dims.depth,
                    2 * dims.depth + 1
                )));
            }
            let mut nodes = Vec::new();
            let mut prev = "x".to_string();
            let mut entries = Vec::new();
            let mut ids = Vec::new();
            for k in 1..=dims.depth {
                let in_c = if k == 1 { IMAGE_CHANNELS } else { c };
                let (conv, bn, relu) = (format!("conv{k}"), format!("bn{k}"), format!("relu{k}"));
                nodes.push(Node::new(&conv, init.conv(c, in_c, 3), &[&prev]));
                nodes.push(Node::new(&bn, init.batch_norm(c), &[&conv]));
                nodes.push(Node::new(&relu, RELU, &[&bn]));
                ids.push(bn);
                prev = relu;
            }
            for id in &ids {
                entries.push((id.as_str(), true, true));
            }
            let labels = labels(&entries);
            finish(
                name,
                TensorShape::image(IMAGE_CHANNELS, h, h),
                nodes,
                &[&prev],
                labels,
            )
        }
        Archetype::Fig2b => {
            if h < 4 {
                return Err(ModelError::InvalidDims(
                    "fig2b needs images of at least 4".into(),
                ));
            }
            let pooled = (h - 2) / 2;
            let nodes = vec![
                Node::new("conv1", init.conv(c, IMAGE_CHANNELS, 3), &["x"]),
                Node::new("pool1", avg_pool(2), &["conv1"]),
                Node::new("bn1", init.batch_norm(c), &["pool1"]),
                Node::new("relu1", RELU, &["bn1"]),
                Node::new("bn2", init.batch_norm(c), &["relu1"]),
                Node::new("tanh2", TANH, &["bn2"]),
                Node::new("bn3", init.batch_norm(c), &["tanh2"]),
                Node::new("flat", FLATTEN, &["bn3"]),
                Node::new("fc", init.dense(c, c * pooled * pooled), &["flat"]),
                Node::new("relu3", RELU, &["fc"]),
            ];
            let labels = labels(&[
                ("bn1", true, true),
                ("bn2", false, false),
                ("bn3", true, true),
            ]);
            finish(
                name,
                TensorShape::image(IMAGE_CHANNELS, h, h),
                nodes,
                &["relu3"],
                labels,
            )
        }
        Archetype::Fig2c => {
            let nodes = vec![
                Node::new("d1", init.dense(c, c), &["x"]),
                Node::new("d2", init.dense(c, c), &["x"]),
                Node::new("add", ADD, &["d1", "d2"]),
                Node::new("bn", init.batch_norm(c), &["add"]),
                Node::new("relu1", RELU, &["bn"]),
                Node::new("d3", init.dense(c, c), &["add"]),
                Node::new("relu2", RELU, &["d3"]),
                Node::new("cat", CONCAT, &["relu1", "relu2"]),
                Node::new("d4", init.dense(c, 2 * c), &["cat"]),
            ];
            let labels = labels(&[("bn", false, true)]);
            finish(name, TensorShape::vector(c), nodes, &["d4"], labels)
        }
        Archetype::Fig4 => {
            let nodes = vec![
                Node::new("d1", init.dense(c, c), &["x"]),
                Node::new("s", IDENTITY, &["d1"]),
                Node::new("bn", init.batch_norm(c), &["s"]),
                Node::new("relu1", RELU, &["bn"]),
                Node::new("t", IDENTITY, &["s"]),
                Node::new("relu2", RELU, &["t"]),
            ];
            let labels = labels(&[("bn", false, false)]);
            finish(
                name,
                TensorShape::vector(c),
                nodes,
                &["relu1", "relu2"],
                labels,
            )
        }
        Archetype::Fig5a | Archetype::Fig5b => {
            let mut nodes = vec![
                Node::new("d1", init.dense(c, c), &["x"]),
                Node::new("d2", init.dense(c, c), &["d1"]),
                Node::new("d3", init.dense(c, c), &["d1"]),
                Node::new("g1", ADD, &["d2", "d3"]),
                Node::new("g2", IDENTITY, &["g1"]),
                Node::new("bn", init.batch_norm(c), &["g2"]),
                Node::new("relu1", RELU, &["bn"]),
                Node::new("d4", init.dense(c, c), &["g2"]),
                Node::new("relu2", RELU, &["d4"]),
            ];
            let mut outputs = vec!["relu1", "relu2"];
            let foldable = archetype == Archetype::Fig5a;
            if !foldable {
                nodes.push(Node::new("relu3", RELU, &["g1"]));
                outputs.push("relu3");
            }
            let labels = labels(&[("bn", false, foldable)]);
            finish(name, TensorShape::vector(c), nodes, &outputs, labels)
        }
        Archetype::ResNetToy { blocks } => {
            if h < 3 {
                return Err(ModelError::InvalidDims(
                    "resnet needs images of at least 3".into(),
                ));
            }
            let mut nodes = vec![
                Node::new("stem_conv", init.conv(c, IMAGE_CHANNELS, 3), &["x"]),
                Node::new("stem_bn", init.batch_norm(c), &["stem_conv"]),
                Node::new("stem_relu", RELU, &["stem_bn"]),
            ];
            let mut l = labels(&[("stem_bn", true, true)]);
            let mut prev = "stem_relu".to_string();
            for b in 1..=blocks {
                let id = |s: &str| format!("b{b}_{s}");
                nodes.push(Node::new(id("conv1"), init.conv(c, c, 1), &[&prev]));
                nodes.push(Node::new(id("bn1"), init.batch_norm(c), &[&id("conv1")]));
                nodes.push(Node::new(id("relu1"), RELU, &[&id("bn1")]));
                nodes.push(Node::new(id("conv2"), init.conv(c, c, 1), &[&id("relu1")]));
                nodes.push(Node::new(id("proj"), init.conv(c, c, 1), &[&prev]));
                nodes.push(Node::new(id("add"), ADD, &[&id("conv2"), &id("proj")]));
                nodes.push(Node::new(id("bn2"), init.batch_norm(c), &[&id("add")]));
                nodes.push(Node::new(id("relu2"), RELU, &[&id("bn2")]));
                for (bn, naive) in [(id("bn1"), true), (id("bn2"), false)] {
                    l.foldable.insert(bn.clone(), true);
                    l.banoff.insert(bn.clone());
                    if naive {
                        l.naive.insert(bn);
                    }
                }
                prev = id("relu2");
            }
            nodes.push(Node::new("pool", avg_pool(h - 2), &[&prev]));
            nodes.push(Node::new("flat", FLATTEN, &["pool"]));
            nodes.push(Node::new("fc", init.dense(CLASSES, c), &["flat"]));
            finish(
                name,
                TensorShape::image(IMAGE_CHANNELS, h, h),
                nodes,
                &["fc"],
                l,
            )
        }
        Archetype::RandomDag { .. } => unreachable!("handled by the caller"),
    }
}
