//! JSON graph files.
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "name": "...",
//!   "inputs": [{"id": "x", "shape": [0, 3, 8, 8]}],
//!   "nodes": [{"id", "op", "inputs", "attrs", "weights"}],
//!   "outputs": ["..."]
//! }
//! ```
//!
//! Weights are nested arrays (`weight` is `[out][in]`, `kernel` is
//! `[out][in][kh][kw]`). Numbers are written in their shortest round-trip
//! form, so a save/load cycle is bit-exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::graph::{
    build_graph, AffineOp, BatchNormParams, Conv2dParams, DenseParams, Graph, GraphError,
    GraphInput, Node, NodeKind, NonAffineOp, TensorShape,
};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("format version {found} is not supported (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Deserialize)]
struct Header {
    format_version: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    #[allow(dead_code)]
    format_version: u64,
    name: String,
    inputs: Vec<FileInput>,
    nodes: Vec<FileNode>,
    outputs: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileInput {
    id: String,
    shape: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNode {
    id: String,
    op: OpName,
    inputs: Vec<String>,
    #[serde(default)]
    attrs: BTreeMap<String, Value>,
    #[serde(default)]
    weights: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
enum OpName {
    Dense,
    Conv2D,
    BatchNorm,
    ReLU,
    Sigmoid,
    Tanh,
    MaxPool2D,
    AvgPool2D,
    Add,
    Concat,
    Flatten,
    Identity,
}

fn serde_error(e: serde_json::Error) -> LoadError {
    LoadError::Parse {
        line: e.line(),
        reason: e.to_string(),
    }
}

/// Line of the first `"id": "<id>"` occurrence, for errors found after parsing.
fn line_of(text: &str, id: &str) -> usize {
    let needle = format!("\"{id}\"");
    text.lines()
        .position(|l| l.contains("\"id\"") && l.contains(&needle))
        .map_or(0, |i| i + 1)
}

pub fn parse_graph(text: &str) -> Result<Graph, LoadError> {
    let header: Header = serde_json::from_str(text).map_err(serde_error)?;
    match header.format_version {
        Some(FORMAT_VERSION) => {}
        Some(found) => return Err(LoadError::VersionMismatch { found }),
        None => {
            return Err(LoadError::Parse {
                line: 1,
                reason: "missing `format_version`".into(),
            })
        }
    }
    let doc: FileDoc = serde_json::from_str(text).map_err(serde_error)?;

    let inputs: Vec<GraphInput> = doc
        .inputs
        .into_iter()
        .map(|i| GraphInput::new(i.id, TensorShape::new(i.shape)))
        .collect();
    let mut defined: BTreeSet<String> = inputs.iter().map(|i| i.id.clone()).collect();
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for n in doc.nodes {
        let fail = |reason: String| LoadError::Parse {
            line: line_of(text, &n.id),
            reason: format!("node `{}`: {reason}", n.id),
        };
        if let Some(missing) = n.inputs.iter().find(|i| !defined.contains(*i)) {
            return Err(fail(format!(
                "input `{missing}` is not defined earlier in the file"
            )));
        }
        let kind = node_kind(n.op, &n.attrs, &n.weights).map_err(fail)?;
        defined.insert(n.id.clone());
        nodes.push(Node {
            id: n.id,
            kind,
            inputs: n.inputs,
            out_shape: None,
        });
    }
    Ok(build_graph(doc.name, inputs, nodes, doc.outputs)?)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph, LoadError> {
    parse_graph(&fs::read_to_string(path)?)
}

pub fn save_graph(graph: &Graph, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, write_graph(graph))
}

fn attr_usize(attrs: &BTreeMap<String, Value>, key: &str) -> Result<usize, String> {
    attrs
        .get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| format!("missing integer attribute `{key}`"))
}

fn weight<'a>(weights: &'a BTreeMap<String, Value>, key: &str) -> Result<&'a Value, String> {
    weights
        .get(key)
        .ok_or_else(|| format!("missing weight `{key}`"))
}

/// Flattens a rectangular nested array of numbers of the given depth.
fn tensor(v: &Value, depth: usize, name: &str) -> Result<(Vec<usize>, Vec<f64>), String> {
    fn walk(
        v: &Value,
        depth: usize,
        level: usize,
        shape: &mut Vec<usize>,
        out: &mut Vec<f64>,
    ) -> Result<(), ()> {
        if level == depth {
            out.push(v.as_f64().ok_or(())?);
            return Ok(());
        }
        let items = v.as_array().ok_or(())?;
        if shape.len() == level {
            shape.push(items.len());
        } else if shape[level] != items.len() {
            return Err(());
        }
        for item in items {
            walk(item, depth, level + 1, shape, out)?;
        }
        Ok(())
    }
    let mut shape = Vec::new();
    let mut out = Vec::new();
    walk(v, depth, 0, &mut shape, &mut out)
        .map_err(|_| format!("`{name}` must be a rectangular {depth}-d array of numbers"))?;
    shape.resize(depth, 0);
    Ok((shape, out))
}

fn vector(weights: &BTreeMap<String, Value>, key: &str) -> Result<Vec<f64>, String> {
    Ok(tensor(weight(weights, key)?, 1, key)?.1)
}

fn node_kind(
    op: OpName,
    attrs: &BTreeMap<String, Value>,
    weights: &BTreeMap<String, Value>,
) -> Result<NodeKind, String> {
    Ok(match op {
        OpName::Dense => {
            let (shape, weight) = tensor(self::weight(weights, "weight")?, 2, "weight")?;
            NodeKind::Dense(DenseParams::new(
                shape[0],
                shape[1],
                weight,
                vector(weights, "bias")?,
            ))
        }
        OpName::Conv2D => {
            let (shape, kernel) = tensor(weight(weights, "kernel")?, 4, "kernel")?;
            NodeKind::Conv2d(Conv2dParams {
                out_channels: shape[0],
                in_channels: shape[1],
                kernel_h: shape[2],
                kernel_w: shape[3],
                kernel,
                bias: vector(weights, "bias")?,
            })
        }
        OpName::BatchNorm => NodeKind::BatchNorm(BatchNormParams {
            gamma: vector(weights, "gamma")?,
            beta: vector(weights, "beta")?,
            mu: vector(weights, "mu")?,
            sigma: vector(weights, "sigma")?,
            epsilon: attrs
                .get("epsilon")
                .and_then(Value::as_f64)
                .ok_or("missing number attribute `epsilon`")?,
        }),
        OpName::ReLU => NodeKind::NonAffine(NonAffineOp::Relu),
        OpName::Sigmoid => NodeKind::NonAffine(NonAffineOp::Sigmoid),
        OpName::Tanh => NodeKind::NonAffine(NonAffineOp::Tanh),
        OpName::MaxPool2D => NodeKind::NonAffine(NonAffineOp::MaxPool2d {
            kh: attr_usize(attrs, "kh")?,
            kw: attr_usize(attrs, "kw")?,
        }),
        OpName::AvgPool2D => NodeKind::OtherAffine(AffineOp::AvgPool2d {
            kh: attr_usize(attrs, "kh")?,
            kw: attr_usize(attrs, "kw")?,
        }),
        OpName::Add => NodeKind::OtherAffine(AffineOp::Add),
        OpName::Concat => NodeKind::OtherAffine(AffineOp::Concat),
        OpName::Flatten => NodeKind::OtherAffine(AffineOp::Flatten),
        OpName::Identity => NodeKind::OtherAffine(AffineOp::Identity),
    })
}

/// Output tree: objects keep field order, arrays of scalars stay on one line.
enum Out {
    Raw(String),
    Arr(Vec<Out>),
    Obj(Vec<(&'static str, Out)>),
}

fn num(x: f64) -> Out {
    Out::Raw(serde_json::to_string(&x).expect("finite weights"))
}

fn text(s: &str) -> Out {
    Out::Raw(serde_json::to_string(s).unwrap())
}

fn nested(data: &[f64], shape: &[usize]) -> Out {
    if shape.len() == 1 {
        return Out::Arr(data.iter().map(|&x| num(x)).collect());
    }
    let stride: usize = shape[1..].iter().product();
    Out::Arr(
        data.chunks(stride.max(1))
            .take(shape[0])
            .map(|chunk| nested(chunk, &shape[1..]))
            .collect(),
    )
}

fn node_out(node: &Node) -> Out {
    let mut attrs = Vec::new();
    let mut weights = Vec::new();
    let op = match &node.kind {
        NodeKind::Dense(d) => {
            weights.push((
                "weight",
                nested(&d.weight, &[d.out_features, d.in_features]),
            ));
            weights.push(("bias", nested(&d.bias, &[d.out_features])));
            "Dense"
        }
        NodeKind::Conv2d(c) => {
            let shape = [c.out_channels, c.in_channels, c.kernel_h, c.kernel_w];
            weights.push(("kernel", nested(&c.kernel, &shape)));
            weights.push(("bias", nested(&c.bias, &[c.out_channels])));
            "Conv2D"
        }
        NodeKind::BatchNorm(bn) => {
            attrs.push(("epsilon", num(bn.epsilon)));
            let n = [bn.channels()];
            weights.push(("gamma", nested(&bn.gamma, &n)));
            weights.push(("beta", nested(&bn.beta, &n)));
            weights.push(("mu", nested(&bn.mu, &n)));
            weights.push(("sigma", nested(&bn.sigma, &n)));
            "BatchNorm"
        }
        NodeKind::NonAffine(NonAffineOp::MaxPool2d { kh, kw }) => {
            attrs.push(("kh", Out::Raw(kh.to_string())));
            attrs.push(("kw", Out::Raw(kw.to_string())));
            "MaxPool2D"
        }
        NodeKind::OtherAffine(AffineOp::AvgPool2d { kh, kw }) => {
            attrs.push(("kh", Out::Raw(kh.to_string())));
            attrs.push(("kw", Out::Raw(kw.to_string())));
            "AvgPool2D"
        }
        other => other.op_name(),
    };
    Out::Obj(vec![
        ("id", text(&node.id)),
        ("op", text(op)),
        (
            "inputs",
            Out::Arr(node.inputs.iter().map(|s| text(s)).collect()),
        ),
        ("attrs", Out::Obj(attrs)),
        ("weights", Out::Obj(weights)),
    ])
}

fn render(v: &Out, indent: usize, buf: &mut String) {
    let pad = |n: usize| " ".repeat(n);
    match v {
        Out::Raw(s) => buf.push_str(s),
        Out::Arr(items) if items.iter().all(|i| matches!(i, Out::Raw(_))) => {
            buf.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    buf.push_str(", ");
                }
                render(item, indent, buf);
            }
            buf.push(']');
        }
        Out::Arr(items) => {
            buf.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                buf.push_str(&pad(indent + 2));
                render(item, indent + 2, buf);
                buf.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            buf.push_str(&pad(indent));
            buf.push(']');
        }
        Out::Obj(fields) if fields.is_empty() => buf.push_str("{}"),
        Out::Obj(fields) => {
            buf.push_str("{\n");
            for (k, (key, item)) in fields.iter().enumerate() {
                buf.push_str(&pad(indent + 2));
                buf.push_str(&format!("\"{key}\": "));
                render(item, indent + 2, buf);
                buf.push_str(if k + 1 < fields.len() { ",\n" } else { "\n" });
            }
            buf.push_str(&pad(indent));
            buf.push('}');
        }
    }
}

pub fn write_graph(graph: &Graph) -> String {
    let inputs = graph
        .inputs()
        .iter()
        .map(|i| {
            Out::Obj(vec![
                ("id", text(&i.id)),
                (
                    "shape",
                    Out::Arr(
                        i.shape
                            .dims()
                            .iter()
                            .map(|d| Out::Raw(d.to_string()))
                            .collect(),
                    ),
                ),
            ])
        })
        .collect();
    let doc = Out::Obj(vec![
        ("format_version", Out::Raw(FORMAT_VERSION.to_string())),
        ("name", text(graph.name())),
        ("inputs", Out::Arr(inputs)),
        (
            "nodes",
            Out::Arr(graph.nodes().iter().map(node_out).collect()),
        ),
        (
            "outputs",
            Out::Arr(graph.outputs().iter().map(|s| text(s)).collect()),
        ),
    ]);
    let mut buf = String::new();
    render(&doc, 0, &mut buf);
    buf.push('\n');
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "format_version": 1,
  "name": "tiny",
  "inputs": [{"id": "x", "shape": [0, 2]}],
  "nodes": [
    {"id": "d", "op": "Dense", "inputs": ["x"], "weights": {"weight": [[1, 2]], "bias": [0.5]}}
  ],
  "outputs": ["d"]
}"#;

    #[test]
    fn minimal_file_loads() {
        let g = parse_graph(MINIMAL).unwrap();
        assert_eq!(g.nodes().len(), 1);
        assert_eq!(g.value_shape("d").dims(), &[0, 1]);
    }

    #[test]
    fn unknown_op_is_named_with_its_line() {
        let bad = MINIMAL.replace("\"Dense\"", "\"Dense3D\"");
        match parse_graph(&bad) {
            Err(LoadError::Parse { line, reason }) => {
                assert_eq!(line, 6);
                assert!(reason.contains("Dense3D"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_is_checked() {
        let bad = MINIMAL.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(
            parse_graph(&bad),
            Err(LoadError::VersionMismatch { found: 2 })
        ));
    }

    #[test]
    fn ragged_weights_are_rejected() {
        let bad = MINIMAL.replace("[[1, 2]]", "[[1, 2], [3]]");
        match parse_graph(&bad) {
            Err(LoadError::Parse { line, reason }) => {
                assert_eq!(line, 6);
                assert!(reason.contains("rectangular"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn awkward_floats_round_trip_bit_exact() {
        let values = [0.1, -0.0, 1e-308, 5e-324, f64::MAX, 1.0 / 3.0, -2.5e17];
        let g = build_graph(
            "floats",
            vec![GraphInput::new("x", TensorShape::vector(values.len()))],
            vec![Node::new(
                "d",
                NodeKind::Dense(DenseParams::new(
                    1,
                    values.len(),
                    values.to_vec(),
                    vec![0.7],
                )),
                &["x"],
            )],
            vec!["d".into()],
        )
        .unwrap();
        let back = parse_graph(&write_graph(&g)).unwrap();
        let (NodeKind::Dense(a), NodeKind::Dense(b)) = (&g.nodes()[0].kind, &back.nodes()[0].kind)
        else {
            panic!()
        };
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.weight), bits(&b.weight));
        assert_eq!(write_graph(&back), write_graph(&g));
    }
}
