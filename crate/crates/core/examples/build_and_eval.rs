//! Builds a small dense -> batch norm -> relu graph by hand and evaluates it.

use std::collections::BTreeMap;

use bnfold::graph::{
    build_graph, param_count, BatchNormParams, DenseParams, GraphInput, Node, NodeKind,
    NonAffineOp, TensorShape, TensorValue,
};
use bnfold::interp::eval_graph;

fn main() {
    let dense = DenseParams::new(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5], vec![0.0, 1.0]);
    let bn = BatchNormParams {
        gamma: vec![2.0, 0.5],
        beta: vec![0.1, -0.1],
        mu: vec![0.0, 1.0],
        sigma: vec![1.0, 2.0],
        epsilon: 1e-3,
    };
    let g = build_graph(
        "tiny",
        vec![GraphInput::new("x", TensorShape::vector(3))],
        vec![
            Node::new("fc", NodeKind::Dense(dense), &["x"]),
            Node::new("bn", NodeKind::BatchNorm(bn), &["fc"]),
            Node::new("act", NodeKind::NonAffine(NonAffineOp::Relu), &["bn"]),
        ],
        vec!["act".into()],
    )
    .expect("valid graph");

    for node in g.nodes() {
        println!("{:4} {:10} {}", node.id, node.kind.op_name(), node.shape());
    }
    println!("parameters: {}", param_count(&g));

    let x = TensorValue::new(
        TensorShape::new(vec![2, 3]),
        vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0],
    );
    let out = eval_graph(&g, &BTreeMap::from([("x".to_string(), x)])).expect("bound input");
    for (id, value) in out {
        println!("{id} = {:?}", value.data);
    }
}
