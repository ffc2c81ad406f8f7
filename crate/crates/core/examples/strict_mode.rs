//! Two batch norms between ReLUs. By default one is folded into the other;
//! strict mode does not count a batch norm as a leaf, so both stay.

use bnfold::analysis::AnalysisOptions;
use bnfold::graph::{
    build_graph, BatchNormParams, GraphInput, Node, NodeKind, NonAffineOp, TensorShape,
};
use bnfold::transform::{banoff_pass_with, BanOffOptions};
use bnfold::verify::check_equivalence;

fn bn(gamma: f64, beta: f64) -> NodeKind {
    NodeKind::BatchNorm(BatchNormParams {
        gamma: vec![gamma; 4],
        beta: vec![beta; 4],
        mu: vec![0.2; 4],
        sigma: vec![1.5; 4],
        epsilon: 1e-3,
    })
}

fn main() {
    let relu = || NodeKind::NonAffine(NonAffineOp::Relu);
    let g = build_graph(
        "bn_pair",
        vec![GraphInput::new("x", TensorShape::vector(4))],
        vec![
            Node::new("r1", relu(), &["x"]),
            Node::new("bn1", bn(2.0, 0.5), &["r1"]),
            Node::new("bn2", bn(-0.7, 0.1), &["bn1"]),
            Node::new("r2", relu(), &["bn2"]),
        ],
        vec!["r2".into()],
    )
    .unwrap();
    for strict_paper in [false, true] {
        let opts = BanOffOptions {
            analysis: AnalysisOptions { strict_paper },
            ..Default::default()
        };
        let (folded, report) = banoff_pass_with(&g, &opts);
        let eq = check_equivalence(&g, &folded, 50, 42, 1e-9).unwrap();
        println!(
            "strict={strict_paper}: folded {:?}, max L1 {:.2e}",
            report.folded, eq.max_l1
        );
        for (id, reason) in &report.skipped {
            println!("  kept {id}: {reason}");
        }
    }
}
