//! Straight-line reference evaluation of graphs.
//!
//! Every node is evaluated once in canonical topological order with plain
//! loops and no fusion. This is the oracle every fold is checked against.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{
    node_output_shape, AffineOp, Graph, NodeKind, NonAffineOp, Producer, TensorShape, TensorValue,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("graph input `{0}` is not bound")]
    UnboundInput(String),
    #[error("shape mismatch at `{node}`: {reason}")]
    ShapeMismatch { node: String, reason: String },
}

/// Concrete tensors for every graph input.
pub type InputBinding = BTreeMap<String, TensorValue>;

/// Evaluates `graph` and returns `(output id, tensor)` pairs in the order of
/// `graph.outputs()`.
pub fn eval_graph(
    graph: &Graph,
    bindings: &InputBinding,
) -> Result<Vec<(String, TensorValue)>, EvalError> {
    let mut inputs = Vec::with_capacity(graph.inputs().len());
    for input in graph.inputs() {
        let value = bindings
            .get(&input.id)
            .ok_or_else(|| EvalError::UnboundInput(input.id.clone()))?;
        if !value.shape.matches_symbolic(&input.shape) {
            return Err(EvalError::ShapeMismatch {
                node: input.id.clone(),
                reason: format!("bound {} to input of shape {}", value.shape, input.shape),
            });
        }
        inputs.push(value);
    }

    let mut values: Vec<TensorValue> = Vec::with_capacity(graph.nodes().len());
    for node in graph.nodes() {
        let args: Vec<&TensorValue> = node
            .inputs
            .iter()
            .map(|id| match graph.producer(id).expect("validated graph") {
                Producer::Input(k) => inputs[k],
                Producer::Node(k) => &values[k],
            })
            .collect();
        let out = eval_node(&node.kind, &args).map_err(|reason| EvalError::ShapeMismatch {
            node: node.id.clone(),
            reason,
        })?;
        values.push(out);
    }

    Ok(graph
        .outputs()
        .iter()
        .map(|id| {
            let t = match graph.producer(id).expect("validated graph") {
                Producer::Input(k) => inputs[k].clone(),
                Producer::Node(k) => values[k].clone(),
            };
            (id.clone(), t)
        })
        .collect())
}

/// Applies one operator to concrete inputs.
pub fn eval_node(kind: &NodeKind, inputs: &[&TensorValue]) -> Result<TensorValue, String> {
    let shapes: Vec<&TensorShape> = inputs.iter().map(|t| &t.shape).collect();
    let out_shape = node_output_shape(kind, &shapes)?;
    if inputs.iter().any(|t| t.batch() != inputs[0].batch()) {
        return Err("inputs disagree on batch size".into());
    }
    let x = inputs[0];
    let out = match kind {
        NodeKind::Dense(d) => {
            let batch = x.batch();
            let mut data = vec![0.0; batch * d.out_features];
            for n in 0..batch {
                let row = &x.data[n * d.in_features..(n + 1) * d.in_features];
                for o in 0..d.out_features {
                    let w = &d.weight[o * d.in_features..(o + 1) * d.in_features];
                    let mut acc = d.bias[o];
                    for i in 0..d.in_features {
                        acc += w[i] * row[i];
                    }
                    data[n * d.out_features + o] = acc;
                }
            }
            TensorValue::new(out_shape, data)
        }
        NodeKind::Conv2d(c) => {
            let dims = x.shape.dims();
            let (batch, h, w) = (dims[0], dims[2], dims[3]);
            let od = out_shape.dims();
            let (oh, ow) = (od[2], od[3]);
            let mut data = vec![0.0; batch * c.out_channels * oh * ow];
            for n in 0..batch {
                for o in 0..c.out_channels {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = c.bias[o];
                            for i in 0..c.in_channels {
                                for ky in 0..c.kernel_h {
                                    for kx in 0..c.kernel_w {
                                        let k = c.kernel[((o * c.in_channels + i) * c.kernel_h
                                            + ky)
                                            * c.kernel_w
                                            + kx];
                                        let v = x.data
                                            [((n * c.in_channels + i) * h + y + ky) * w + xx + kx];
                                        acc += k * v;
                                    }
                                }
                            }
                            data[((n * c.out_channels + o) * oh + y) * ow + xx] = acc;
                        }
                    }
                }
            }
            TensorValue::new(out_shape, data)
        }
        NodeKind::BatchNorm(bn) => {
            let channels = x.shape.channels();
            let spatial = x.shape.spatial();
            let mut data = x.data.clone();
            for (idx, v) in data.iter_mut().enumerate() {
                let c = (idx / spatial) % channels;
                *v = bn.gamma[c] * (*v - bn.mu[c]) / (bn.sigma[c] + bn.epsilon) + bn.beta[c];
            }
            TensorValue::new(out_shape, data)
        }
        NodeKind::NonAffine(NonAffineOp::Relu) => pointwise(x, |v| v.max(0.0)),
        NodeKind::NonAffine(NonAffineOp::Sigmoid) => pointwise(x, |v| 1.0 / (1.0 + (-v).exp())),
        NodeKind::NonAffine(NonAffineOp::Tanh) => pointwise(x, f64::tanh),
        NodeKind::NonAffine(NonAffineOp::MaxPool2d { kh, kw }) => {
            pool(x, &out_shape, *kh, *kw, |window| {
                window.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            })
        }
        NodeKind::OtherAffine(AffineOp::AvgPool2d { kh, kw }) => {
            pool(x, &out_shape, *kh, *kw, |window| {
                window.iter().sum::<f64>() / window.len() as f64
            })
        }
        NodeKind::OtherAffine(AffineOp::Identity) => x.clone(),
        NodeKind::OtherAffine(AffineOp::Flatten) => TensorValue::new(out_shape, x.data.clone()),
        NodeKind::OtherAffine(AffineOp::Add) => {
            let mut data = x.data.clone();
            for other in &inputs[1..] {
                for (acc, v) in data.iter_mut().zip(&other.data) {
                    *acc += v;
                }
            }
            TensorValue::new(out_shape, data)
        }
        NodeKind::OtherAffine(AffineOp::Concat) => {
            let batch = x.batch();
            let mut data = Vec::with_capacity(out_shape.dims().iter().product());
            for n in 0..batch {
                for t in inputs {
                    let row = t.shape.row_len();
                    data.extend_from_slice(&t.data[n * row..(n + 1) * row]);
                }
            }
            TensorValue::new(out_shape, data)
        }
    };
    Ok(out)
}

fn pointwise(x: &TensorValue, f: impl Fn(f64) -> f64) -> TensorValue {
    TensorValue::new(x.shape.clone(), x.data.iter().map(|&v| f(v)).collect())
}

/// Non-overlapping pooling with stride equal to the window.
fn pool(
    x: &TensorValue,
    out_shape: &TensorShape,
    kh: usize,
    kw: usize,
    reduce: impl Fn(&[f64]) -> f64,
) -> TensorValue {
    let dims = x.shape.dims();
    let (batch, channels, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let od = out_shape.dims();
    let (oh, ow) = (od[2], od[3]);
    let mut data = Vec::with_capacity(batch * channels * oh * ow);
    let mut window = Vec::with_capacity(kh * kw);
    for n in 0..batch {
        for c in 0..channels {
            let base = (n * channels + c) * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    window.clear();
                    for ky in 0..kh {
                        for kx in 0..kw {
                            window.push(x.data[base + (y * kh + ky) * w + xx * kw + kx]);
                        }
                    }
                    data.push(reduce(&window));
                }
            }
        }
    }
    TensorValue::new(out_shape.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BatchNormParams, DenseParams};

    fn vec_tensor(rows: &[&[f64]]) -> TensorValue {
        let c = rows[0].len();
        TensorValue::new(
            TensorShape::new(vec![rows.len(), c]),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    #[test]
    fn identity_dense() {
        let kind = NodeKind::Dense(DenseParams::new(
            3,
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0; 3],
        ));
        let x = vec_tensor(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(eval_node(&kind, &[&x]).unwrap().data, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn batch_norm_with_unit_denominator() {
        let kind = NodeKind::BatchNorm(BatchNormParams {
            gamma: vec![2.0],
            beta: vec![1.0],
            mu: vec![0.0],
            sigma: vec![0.999],
            epsilon: 0.001,
        });
        let x = vec_tensor(&[&[3.0]]);
        assert_eq!(eval_node(&kind, &[&x]).unwrap().data, vec![7.0]);
    }

    #[test]
    fn add_and_avg_pool() {
        let a = vec_tensor(&[&[1.0, 2.0]]);
        let b = vec_tensor(&[&[3.0, 4.0]]);
        let add = NodeKind::OtherAffine(AffineOp::Add);
        assert_eq!(eval_node(&add, &[&a, &b]).unwrap().data, vec![4.0, 6.0]);

        let img = TensorValue::new(TensorShape::new(vec![1, 2, 4, 4]), vec![2.5; 32]);
        let pool = NodeKind::OtherAffine(AffineOp::AvgPool2d { kh: 2, kw: 2 });
        let out = eval_node(&pool, &[&img]).unwrap();
        assert_eq!(out.shape.dims(), &[1, 2, 2, 2]);
        assert!(out.data.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn concat_stacks_channels_per_row() {
        let a = vec_tensor(&[&[1.0], &[2.0]]);
        let b = vec_tensor(&[&[10.0, 11.0], &[20.0, 21.0]]);
        let cat = NodeKind::OtherAffine(AffineOp::Concat);
        let out = eval_node(&cat, &[&a, &b]).unwrap();
        assert_eq!(out.data, vec![1.0, 10.0, 11.0, 2.0, 20.0, 21.0]);
    }

    #[test]
    fn max_pool_is_not_affine() {
        // max(-x) != -max(x) for x = [1, 2]
        let x = TensorValue::new(TensorShape::new(vec![1, 1, 1, 2]), vec![1.0, 2.0]);
        let neg = TensorValue::new(TensorShape::new(vec![1, 1, 1, 2]), vec![-1.0, -2.0]);
        let pool = NodeKind::NonAffine(NonAffineOp::MaxPool2d { kh: 1, kw: 2 });
        let a = eval_node(&pool, &[&neg]).unwrap().data[0];
        let b = -eval_node(&pool, &[&x]).unwrap().data[0];
        assert_ne!(a, b);
    }

    #[test]
    fn relu_of_batch_norm_matches_hand_formula() {
        let params = BatchNormParams {
            gamma: vec![1.5],
            beta: vec![-0.25],
            mu: vec![0.3],
            sigma: vec![0.8],
            epsilon: 1e-3,
        };
        let bn = NodeKind::BatchNorm(params.clone());
        let relu = NodeKind::NonAffine(NonAffineOp::Relu);
        for &v in &[-1.7, 0.2, 2.9] {
            let x = vec_tensor(&[&[v]]);
            let y = eval_node(&relu, &[&eval_node(&bn, &[&x]).unwrap()]).unwrap();
            let hand = (1.5 * (v - 0.3) / (0.8 + 1e-3) - 0.25_f64).max(0.0);
            assert!((y.data[0] - hand).abs() <= 1e-12);
        }
    }
}
