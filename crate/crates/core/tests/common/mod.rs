#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bnfold::analysis::Direction;
use bnfold::graph::{
    build_graph, AffineOp, BatchNormParams, Conv2dParams, DenseParams, Graph, GraphInput, Node,
    NodeKind, TensorShape, TensorValue,
};
use bnfold::interp::InputBinding;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus/v1")
}

/// `x = [2, 3]` for the hand-written one-layer file.
pub fn minimal_dense_input() -> InputBinding {
    InputBinding::from([(
        "x".to_string(),
        TensorValue::new(TensorShape::new(vec![1, 2]), vec![2.0, 3.0]),
    )])
}

/// `W = [[1, 2], [-0.5, 4]]`, `b = [0.25, -1]` applied to `[2, 3]`, by hand.
pub const MINIMAL_DENSE_OUTPUT: [f64; 2] = [8.25, 10.0];

pub fn weights(kind: &NodeKind) -> Vec<u64> {
    let v: Vec<f64> = match kind {
        NodeKind::Dense(d) => [d.weight.clone(), d.bias.clone()].concat(),
        NodeKind::Conv2d(c) => [c.kernel.clone(), c.bias.clone()].concat(),
        NodeKind::BatchNorm(b) => [
            b.gamma.clone(),
            b.beta.clone(),
            b.mu.clone(),
            b.sigma.clone(),
            vec![b.epsilon],
        ]
        .concat(),
        _ => Vec::new(),
    };
    v.into_iter().map(f64::to_bits).collect()
}

/// Same structure and the same bits in every weight.
pub fn bit_identical(a: &Graph, b: &Graph) -> bool {
    a.name() == b.name()
        && a.inputs() == b.inputs()
        && a.outputs() == b.outputs()
        && a.nodes().len() == b.nodes().len()
        && a.nodes().iter().zip(b.nodes()).all(|(x, y)| {
            x.id == y.id
                && x.inputs == y.inputs
                && x.kind.op_name() == y.kind.op_name()
                && weights(&x.kind) == weights(&y.kind)
        })
}

/// Dense tensor `[batch][c][h][w]`; vectors have `h = w = 1` and `flat`.
#[derive(Clone, Debug)]
struct T {
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    flat: bool,
    data: Vec<f64>,
}

impl T {
    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }
    fn hw(&self) -> usize {
        self.h * self.w
    }
}

#[derive(Clone, Debug)]
enum Step {
    Input,
    /// 1x1 convolution (on images) or dense layer (on vectors); `w` is `[out][in]`.
    Linear {
        src: usize,
        w: Vec<f64>,
        b: Vec<f64>,
        out: usize,
    },
    Identity(usize),
    AvgPool(usize),
    Flatten(usize),
    Concat(usize, usize),
    Add(usize, usize),
    Bn {
        src: usize,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mu: Vec<f64>,
        sigma: Vec<f64>,
    },
}

const EPS: f64 = 1e-3;

/// One (BN, interior chain) pair with an independent evaluator.
pub struct PushCase {
    pub graph: Graph,
    pub direction: Direction,
    steps: Vec<Step>,
    out: usize,
}

impl PushCase {
    pub fn describe(&self) -> String {
        self.steps
            .iter()
            .map(|s| match s {
                Step::Input => "x",
                Step::Linear { .. } => "lin",
                Step::Identity(_) => "id",
                Step::AvgPool(_) => "avg",
                Step::Flatten(_) => "flat",
                Step::Concat(..) => "cat",
                Step::Add(..) => "add",
                Step::Bn { .. } => "BN",
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Straight-line evaluation of the original graph, batch norm included.
    pub fn oracle(&self, x: &TensorValue) -> Vec<f64> {
        let d = x.shape.dims();
        let mut vals: Vec<T> = Vec::new();
        for step in &self.steps {
            let v = match step {
                Step::Input => T {
                    batch: d[0],
                    c: d[1],
                    h: d[2],
                    w: d[3],
                    flat: false,
                    data: x.data.clone(),
                },
                Step::Linear { src, w, b, out } => {
                    let s = &vals[*src];
                    let mut data = Vec::new();
                    for n in 0..s.batch {
                        for o in 0..*out {
                            for p in 0..s.hw() {
                                let mut acc = b[o];
                                for i in 0..s.c {
                                    acc += w[o * s.c + i] * s.data[(n * s.c + i) * s.hw() + p];
                                }
                                data.push(acc);
                            }
                        }
                    }
                    T {
                        c: *out,
                        data,
                        ..s.clone()
                    }
                }
                Step::Identity(a) => vals[*a].clone(),
                Step::AvgPool(a) => {
                    let s = &vals[*a];
                    let (h, w) = (s.h / 2, s.w / 2);
                    let mut data = Vec::new();
                    for n in 0..s.batch {
                        for c in 0..s.c {
                            for y in 0..h {
                                for x in 0..w {
                                    let sum = s.at(n, c, 2 * y, 2 * x)
                                        + s.at(n, c, 2 * y + 1, 2 * x)
                                        + s.at(n, c, 2 * y, 2 * x + 1)
                                        + s.at(n, c, 2 * y + 1, 2 * x + 1);
                                    data.push(sum / 4.0);
                                }
                            }
                        }
                    }
                    T {
                        h,
                        w,
                        data,
                        ..s.clone()
                    }
                }
                Step::Flatten(a) => {
                    let s = &vals[*a];
                    T {
                        c: s.c * s.hw(),
                        h: 1,
                        w: 1,
                        flat: true,
                        ..s.clone()
                    }
                }
                Step::Concat(a, b) => {
                    let (s, t) = (&vals[*a], &vals[*b]);
                    let mut data = Vec::new();
                    for n in 0..s.batch {
                        let row = s.c * s.hw();
                        data.extend_from_slice(&s.data[n * row..(n + 1) * row]);
                        let row_t = t.c * t.hw();
                        data.extend_from_slice(&t.data[n * row_t..(n + 1) * row_t]);
                    }
                    T {
                        c: s.c + t.c,
                        data,
                        ..s.clone()
                    }
                }
                Step::Add(a, b) => {
                    let (s, t) = (&vals[*a], &vals[*b]);
                    let data = s.data.iter().zip(&t.data).map(|(p, q)| p + q).collect();
                    T { data, ..s.clone() }
                }
                Step::Bn {
                    src,
                    gamma,
                    beta,
                    mu,
                    sigma,
                } => {
                    let s = &vals[*src];
                    let mut data = s.data.clone();
                    for n in 0..s.batch {
                        for c in 0..s.c {
                            for p in 0..s.hw() {
                                let k = (n * s.c + c) * s.hw() + p;
                                data[k] =
                                    gamma[c] * (s.data[k] - mu[c]) / (sigma[c] + EPS) + beta[c];
                            }
                        }
                    }
                    T { data, ..s.clone() }
                }
            };
            vals.push(v);
        }
        vals[self.out].data.clone()
    }
}

struct CaseBuilder {
    rng: ChaCha8Rng,
    steps: Vec<Step>,
    nodes: Vec<Node>,
    /// Per value: channels, spatial side (0 for vectors).
    shapes: Vec<(usize, usize)>,
    /// Per value and channel: the group whose batch-norm parameters it shares.
    groups: Vec<Vec<usize>>,
    next_group: usize,
    bn_at: Option<usize>,
}

impl CaseBuilder {
    fn id(&self, v: usize) -> String {
        if v == 0 {
            "x".into()
        } else if Some(v) == self.bn_at {
            "bn".into()
        } else {
            format!("v{v:02}")
        }
    }

    fn push(
        &mut self,
        step: Step,
        kind: NodeKind,
        inputs: &[usize],
        shape: (usize, usize),
        groups: Vec<usize>,
    ) -> usize {
        let v = self.steps.len();
        if matches!(step, Step::Bn { .. }) {
            self.bn_at = Some(v);
        }
        let ids: Vec<String> = inputs.iter().map(|&i| self.id(i)).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        self.nodes.push(Node::new(self.id(v), kind, &refs));
        self.steps.push(step);
        self.shapes.push(shape);
        self.groups.push(groups);
        v
    }

    fn fresh_groups(&mut self, n: usize) -> Vec<usize> {
        let g = (self.next_group..self.next_group + n).collect();
        self.next_group += n;
        g
    }

    fn uniform(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.random_range(-1.0..1.0)).collect()
    }

    /// Expressive layer over `src` with `out` channels.
    fn linear(&mut self, src: usize, out: usize) -> usize {
        let (c, side) = self.shapes[src];
        let w = self.uniform(out * c);
        let b = self.uniform(out);
        let kind = if side == 0 {
            NodeKind::Dense(DenseParams::new(out, c, w.clone(), b.clone()))
        } else {
            NodeKind::Conv2d(Conv2dParams {
                out_channels: out,
                in_channels: c,
                kernel_h: 1,
                kernel_w: 1,
                kernel: w.clone(),
                bias: b.clone(),
            })
        };
        let groups = self.fresh_groups(out);
        self.push(
            Step::Linear { src, w, b, out },
            kind,
            &[src],
            (out, side),
            groups,
        )
    }

    /// A value derived from the input with the given spatial side, read
    /// only through a fresh expressive layer.
    fn branch(&mut self, side: usize, channels: usize) -> usize {
        let mut src = 0;
        let mut s = self.shapes[0].1;
        while side != 0 && s > side {
            let (c, _) = self.shapes[src];
            let groups = self.fresh_groups(c);
            src = self.push(
                Step::AvgPool(src),
                NodeKind::OtherAffine(AffineOp::AvgPool2d { kh: 2, kw: 2 }),
                &[src],
                (c, s / 2),
                groups,
            );
            s /= 2;
        }
        if side == 0 {
            let (c, _) = self.shapes[src];
            let groups = self.fresh_groups(c * s * s);
            src = self.push(
                Step::Flatten(src),
                NodeKind::OtherAffine(AffineOp::Flatten),
                &[src],
                (c * s * s, 0),
                groups,
            );
        }
        self.linear(src, channels)
    }

    fn batch_norm(&mut self, src: usize) -> usize {
        let groups = self.groups[src].clone();
        let n_groups = self.next_group;
        let mut per = Vec::with_capacity(n_groups);
        for _ in 0..n_groups {
            let g: f64 = self.rng.random_range(0.5..1.5);
            let sign = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
            per.push((
                sign * g,
                self.rng.random_range(-1.0..1.0),
                self.rng.random_range(-1.0..1.0),
                self.rng.random_range(0.5..1.5),
            ));
        }
        let pick = |f: fn(&(f64, f64, f64, f64)) -> f64| {
            groups.iter().map(|&g| f(&per[g])).collect::<Vec<f64>>()
        };
        let (gamma, beta, mu, sigma) = (pick(|p| p.0), pick(|p| p.1), pick(|p| p.2), pick(|p| p.3));
        let kind = NodeKind::BatchNorm(BatchNormParams {
            gamma: gamma.clone(),
            beta: beta.clone(),
            mu: mu.clone(),
            sigma: sigma.clone(),
            epsilon: EPS,
        });
        let shape = self.shapes[src];
        self.push(
            Step::Bn {
                src,
                gamma,
                beta,
                mu,
                sigma,
            },
            kind,
            &[src],
            shape,
            groups,
        )
    }

    /// Appends 1 to 4 random parameterless affine ops after `v`.
    fn chain(&mut self, mut v: usize) -> usize {
        let len = self.rng.random_range(1..=4);
        for _ in 0..len {
            let (c, side) = self.shapes[v];
            let choice = self.rng.random_range(0..5);
            v = match choice {
                0 => {
                    let g = self.groups[v].clone();
                    self.push(
                        Step::Identity(v),
                        NodeKind::OtherAffine(AffineOp::Identity),
                        &[v],
                        (c, side),
                        g,
                    )
                }
                1 if side >= 2 && side % 2 == 0 => {
                    let g = self.groups[v].clone();
                    self.push(
                        Step::AvgPool(v),
                        NodeKind::OtherAffine(AffineOp::AvgPool2d { kh: 2, kw: 2 }),
                        &[v],
                        (c, side / 2),
                        g,
                    )
                }
                2 if side > 0 => {
                    let g: Vec<usize> = self.groups[v]
                        .iter()
                        .flat_map(|&g| std::iter::repeat_n(g, side * side))
                        .collect();
                    self.push(
                        Step::Flatten(v),
                        NodeKind::OtherAffine(AffineOp::Flatten),
                        &[v],
                        (c * side * side, 0),
                        g,
                    )
                }
                3 => {
                    let width = self.rng.random_range(1..=3);
                    let b = self.branch(side, width);
                    let (first, second) = if self.rng.random_bool(0.5) {
                        (v, b)
                    } else {
                        (b, v)
                    };
                    let g = [self.groups[first].clone(), self.groups[second].clone()].concat();
                    self.push(
                        Step::Concat(first, second),
                        NodeKind::OtherAffine(AffineOp::Concat),
                        &[first, second],
                        (c + width, side),
                        g,
                    )
                }
                _ => {
                    let b = self.branch(side, c);
                    let g = self.groups[v].clone();
                    let (first, second) = if self.rng.random_bool(0.5) {
                        (v, b)
                    } else {
                        (b, v)
                    };
                    self.push(
                        Step::Add(first, second),
                        NodeKind::OtherAffine(AffineOp::Add),
                        &[first, second],
                        (c, side),
                        g,
                    )
                }
            };
        }
        v
    }
}

/// Even seeds push backward into producers, odd seeds forward into consumers.
pub fn push_case(seed: u64) -> PushCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0 = rng.random_range(1..=3);
    let mut b = CaseBuilder {
        rng,
        steps: vec![Step::Input],
        nodes: Vec::new(),
        shapes: vec![(c0, 4)],
        groups: vec![(0..c0).collect()],
        next_group: c0,
        bn_at: None,
    };
    let direction = if seed.is_multiple_of(2) {
        Direction::Backward
    } else {
        Direction::Forward
    };
    let out = match direction {
        Direction::Backward => {
            let c = b.rng.random_range(1..=3);
            let e = b.linear(0, c);
            let v = b.chain(e);
            b.batch_norm(v)
        }
        Direction::Forward => {
            let n = b.batch_norm(0);
            let v = b.chain(n);
            let c = b.rng.random_range(1..=3);
            b.linear(v, c)
        }
    };
    let graph = build_graph(
        format!("push{seed}"),
        vec![GraphInput::new("x", TensorShape::image(c0, 4, 4))],
        b.nodes,
        vec![b_id(out, b.bn_at)],
    )
    .expect("case graphs are valid");
    PushCase {
        graph,
        direction,
        steps: b.steps,
        out,
    }
}

fn b_id(v: usize, bn_at: Option<usize>) -> String {
    if Some(v) == bn_at {
        "bn".into()
    } else {
        format!("v{v:02}")
    }
}
