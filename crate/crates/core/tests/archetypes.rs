//! Labelled corpus graphs and small hand-built counterexamples.

use bnfold::analysis::{check_foldable, AnalysisOptions, FoldReason, Side};
use bnfold::graph::{
    build_graph, param_count, AffineOp, BatchNormParams, Conv2dParams, DenseParams, Graph,
    GraphInput, Node, NodeKind, NonAffineOp, TensorShape,
};
use bnfold::models::{generate, Archetype, Dims};
use bnfold::transform::{banoff_pass, banoff_pass_with, naive_pass, BanOffOptions};
use bnfold::verify::{audit_decisions, check_equivalence};

fn bn_params(gamma: Vec<f64>) -> BatchNormParams {
    let c = gamma.len();
    BatchNormParams {
        gamma,
        beta: (0..c).map(|i| 0.1 * i as f64 - 0.2).collect(),
        mu: (0..c).map(|i| 0.05 * i as f64).collect(),
        sigma: vec![0.8; c],
        epsilon: 1e-3,
    }
}

fn dense(out: usize, inp: usize) -> NodeKind {
    let w = (0..out * inp)
        .map(|k| ((k * 7 % 11) as f64 - 5.0) / 10.0)
        .collect();
    NodeKind::Dense(DenseParams::new(out, inp, w, vec![0.01; out]))
}

fn conv(out: usize, inp: usize) -> NodeKind {
    NodeKind::Conv2d(Conv2dParams {
        out_channels: out,
        in_channels: inp,
        kernel_h: 2,
        kernel_w: 2,
        kernel: (0..out * inp * 4)
            .map(|k| ((k * 5 % 9) as f64 - 4.0) / 8.0)
            .collect(),
        bias: vec![0.0; out],
    })
}

fn relu() -> NodeKind {
    NodeKind::NonAffine(NonAffineOp::Relu)
}

fn graph(name: &str, input: TensorShape, nodes: Vec<Node>, out: &str) -> Graph {
    build_graph(
        name,
        vec![GraphInput::new("x", input)],
        nodes,
        vec![out.into()],
    )
    .unwrap()
}

#[test]
fn every_archetype_matches_its_labels() {
    for arch in Archetype::corpus() {
        let (g, labels) = generate(arch, &Dims::default(), 11).unwrap();
        let audit = audit_decisions(&g, &labels.foldable);
        assert!(audit.all_ok(), "{arch}: {:?}", audit.entries);
        let (_, naive) = naive_pass(&g);
        let (_, full) = banoff_pass(&g);
        let ids = |r: &bnfold::FoldReport| -> std::collections::BTreeSet<String> {
            r.folded.iter().map(|(id, _)| id.clone()).collect()
        };
        assert_eq!(ids(&naive), labels.naive, "{arch} naive");
        assert_eq!(ids(&full), labels.banoff, "{arch} banoff");
    }
}

#[test]
fn labels_hold_at_other_sizes() {
    let dims = Dims {
        channels: 3,
        image: 12,
        depth: 5,
    };
    for arch in Archetype::corpus() {
        let (g, labels) = generate(arch, &dims, 2).unwrap();
        assert!(audit_decisions(&g, &labels.foldable).all_ok(), "{arch}");
    }
}

#[test]
fn fig2c_has_the_documented_layout() {
    let (g, _) = generate(Archetype::Fig2c, &Dims::default(), 1).unwrap();
    let ops: Vec<&str> = g.nodes().iter().map(|n| n.kind.op_name()).collect();
    assert_eq!(g.nodes().len(), 9);
    assert_eq!(g.batch_norm_count(), 1);
    assert_eq!(ops.iter().filter(|o| **o == "Dense").count(), 4);
    assert!(ops.contains(&"Add") && ops.contains(&"Concat"));
}

#[test]
fn removing_a_batch_norm_removes_four_parameters_per_channel() {
    for arch in Archetype::corpus() {
        let (g, _) = generate(arch, &Dims::default(), 4).unwrap();
        let (folded, report) = banoff_pass(&g);
        let expected: usize = report
            .folded
            .iter()
            .map(|(id, _)| 4 * g.node(id).unwrap().kind.as_batch_norm().unwrap().channels())
            .sum();
        assert_eq!(param_count(&g) - param_count(&folded), expected, "{arch}");
    }
}

#[test]
fn zero_gamma_folds_backward_without_readers_to_compensate() {
    let g = graph(
        "zero_back",
        TensorShape::vector(3),
        vec![
            Node::new("fc", dense(3, 3), &["x"]),
            Node::new(
                "bn",
                NodeKind::BatchNorm(bn_params(vec![1.5, 0.0, -0.4])),
                &["fc"],
            ),
            Node::new("act", relu(), &["bn"]),
        ],
        "act",
    );
    let (folded, report) = banoff_pass(&g);
    assert_eq!(report.folded_count(), 1);
    assert!(check_equivalence(&g, &folded, 20, 1, 1e-9).unwrap().pass);
}

#[test]
fn zero_gamma_with_a_compensating_reader_is_not_invertible() {
    let (g, _) = generate(
        Archetype::Fig2c,
        &Dims {
            channels: 4,
            image: 8,
            depth: 3,
        },
        1,
    )
    .unwrap();
    let mut parts = g.to_parts();
    for node in &mut parts.nodes {
        if let NodeKind::BatchNorm(bn) = &mut node.kind {
            bn.gamma[2] = 0.0;
        }
    }
    let g = parts.build().unwrap();
    let decision = check_foldable(&g, "bn").unwrap();
    assert!(!decision.foldable);
    assert_eq!(decision.reason, FoldReason::NonInvertibleBN);
}

#[test]
fn flatten_needs_block_constant_parameters_to_fold_backward() {
    let make = |gamma: Vec<f64>| {
        graph(
            "flat",
            TensorShape::image(2, 3, 3),
            vec![
                Node::new("c", conv(2, 2), &["x"]),
                Node::new("f", NodeKind::OtherAffine(AffineOp::Flatten), &["c"]),
                Node::new("bn", NodeKind::BatchNorm(bn_params(gamma)), &["f"]),
                Node::new("act", relu(), &["bn"]),
            ],
            "act",
        )
    };
    let mut varied = vec![1.0; 8];
    varied[1] = 2.0;
    let d = check_foldable(&make(varied), "bn").unwrap();
    assert_eq!(d.reason, FoldReason::InconsistentPush);

    let mut blocks = vec![1.0; 4];
    blocks.extend([-0.5; 4]);
    let mut g = make(blocks);
    let mut parts = g.to_parts();
    if let NodeKind::BatchNorm(bn) = &mut parts.nodes[2].kind {
        bn.beta = vec![0.3, 0.3, 0.3, 0.3, -0.1, -0.1, -0.1, -0.1];
        bn.mu = vec![0.0; 8];
    }
    g = parts.build().unwrap();
    assert!(check_foldable(&g, "bn").unwrap().foldable);
    let (folded, _) = banoff_pass(&g);
    assert!(check_equivalence(&g, &folded, 20, 2, 1e-9).unwrap().pass);
}

#[test]
fn max_pooling_stops_the_component() {
    let pool = || NodeKind::NonAffine(NonAffineOp::MaxPool2d { kh: 2, kw: 2 });
    let g = graph(
        "pool_then_bn",
        TensorShape::image(2, 4, 4),
        vec![
            Node::new("p", pool(), &["x"]),
            Node::new(
                "bn",
                NodeKind::BatchNorm(bn_params(vec![-1.0, 2.0])),
                &["p"],
            ),
            Node::new("act", relu(), &["bn"]),
        ],
        "act",
    );
    assert_eq!(
        check_foldable(&g, "bn").unwrap().reason,
        FoldReason::SurroundedByNonAffine
    );

    // Swapping the two changes the result once a scale is negative.
    let swapped = graph(
        "bn_then_pool",
        TensorShape::image(2, 4, 4),
        vec![
            Node::new(
                "bn",
                NodeKind::BatchNorm(bn_params(vec![-1.0, 2.0])),
                &["x"],
            ),
            Node::new("p", pool(), &["bn"]),
            Node::new("act", relu(), &["p"]),
        ],
        "act",
    );
    assert!(!check_equivalence(&g, &swapped, 10, 3, 1e-9).unwrap().pass);
}

#[test]
fn strict_mode_does_not_fold_into_batch_norms() {
    let g = graph(
        "pair",
        TensorShape::vector(3),
        vec![
            Node::new("r1", relu(), &["x"]),
            Node::new(
                "bn1",
                NodeKind::BatchNorm(bn_params(vec![1.0, 2.0, 3.0])),
                &["r1"],
            ),
            Node::new(
                "bn2",
                NodeKind::BatchNorm(bn_params(vec![0.5, -1.0, 1.0])),
                &["bn1"],
            ),
            Node::new("r2", relu(), &["bn2"]),
        ],
        "r2",
    );
    let (merged, report) = banoff_pass(&g);
    assert_eq!((report.folded_count(), merged.batch_norm_count()), (1, 1));
    assert!(check_equivalence(&g, &merged, 20, 4, 1e-9).unwrap().pass);

    let strict = BanOffOptions {
        analysis: AnalysisOptions { strict_paper: true },
        ..Default::default()
    };
    let (_, report) = banoff_pass_with(&g, &strict);
    assert_eq!(report.folded_count(), 0);
    assert!(report
        .skipped
        .iter()
        .all(|(_, r)| *r == FoldReason::BlockedLeaf));
}

#[test]
fn fig5b_extra_reader_is_reported_as_a_halt() {
    let (g, _) = generate(Archetype::Fig5b, &Dims::default(), 1).unwrap();
    let comp = bnfold::analysis::affine_component(&g, "bn").unwrap();
    let halts: Vec<String> = comp.halted_at().iter().map(|h| h.member.clone()).collect();
    assert!(halts.contains(&"g1".to_string()), "{halts:?}");
    assert!(comp.part(Side::In).partition.outer.contains("d4"));
}
