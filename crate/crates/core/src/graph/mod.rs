//! Computation-graph data model: operator taxonomy, validation, topological
//! ordering and shape inference.
//!
//! A [`Graph`] is immutable once built. Passes that change a graph take
//! it apart with [`Graph::to_parts`], edit the node list and call
//! [`build_graph`] again, which re-validates everything.

mod kind;
mod shape;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use thiserror::Error;

pub use kind::{
    AffineOp, BatchNormParams, Conv2dParams, DenseParams, LayerClass, NodeKind, NonAffineOp,
};
pub use shape::{TensorShape, TensorValue};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("cycle detected through node `{0}`")]
    CycleDetected(String),
    #[error("node `{node}` references unknown id `{missing}`")]
    UnknownId { node: String, missing: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("node `{node}` ({op}) expects {expected} input(s), got {got}")]
    ArityMismatch {
        node: String,
        op: &'static str,
        expected: String,
        got: usize,
    },
    #[error("shape mismatch at `{node}`: {reason}")]
    ShapeMismatch { node: String, reason: String },
    #[error("invalid parameters at `{node}`: {reason}")]
    InvalidParameters { node: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub id: String,
    pub shape: TensorShape,
}

impl GraphInput {
    pub fn new(id: impl Into<String>, shape: TensorShape) -> Self {
        GraphInput {
            id: id.into(),
            shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub inputs: Vec<String>,
    /// Filled in by shape inference; `None` on raw nodes.
    pub out_shape: Option<TensorShape>,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind, inputs: &[&str]) -> Self {
        Node {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            out_shape: None,
        }
    }

    pub fn class(&self) -> LayerClass {
        self.kind.class()
    }

    /// Output shape; always present on nodes of a built graph.
    pub fn shape(&self) -> &TensorShape {
        self.out_shape
            .as_ref()
            .expect("node shape is inferred by build_graph")
    }
}

/// Where a value (an edge source) comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Producer {
    Input(usize),
    Node(usize),
}

/// Validated feed-forward computation graph with nodes in canonical
/// topological order.
#[derive(Debug, Clone)]
pub struct Graph {
    name: String,
    inputs: Vec<GraphInput>,
    nodes: Vec<Node>,
    outputs: Vec<String>,
    index: BTreeMap<String, Producer>,
    consumers: Vec<Vec<usize>>,
    input_consumers: Vec<Vec<usize>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.inputs == other.inputs
            && self.nodes == other.nodes
            && self.outputs == other.outputs
    }
}

/// Raw pieces of a graph, as accepted by [`build_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphParts {
    pub name: String,
    pub inputs: Vec<GraphInput>,
    pub nodes: Vec<Node>,
    pub outputs: Vec<String>,
}

/// Validates a raw node list and returns it as a [`Graph`] in topological
/// order with every output shape inferred.
pub fn build_graph(
    name: impl Into<String>,
    inputs: Vec<GraphInput>,
    nodes: Vec<Node>,
    outputs: Vec<String>,
) -> Result<Graph, GraphError> {
    let name = name.into();
    let mut seen = BTreeSet::new();
    for input in &inputs {
        if !seen.insert(input.id.clone()) {
            return Err(GraphError::DuplicateId(input.id.clone()));
        }
        if !input.shape.is_well_formed() || input.shape.batch() != 0 {
            return Err(GraphError::ShapeMismatch {
                node: input.id.clone(),
                reason: format!(
                    "graph input shape {} is not [0,C] or [0,C,H,W]",
                    input.shape
                ),
            });
        }
    }
    for node in &nodes {
        if !seen.insert(node.id.clone()) {
            return Err(GraphError::DuplicateId(node.id.clone()));
        }
    }
    for node in &nodes {
        let (min, variadic) = node.kind.arity();
        let ok = if variadic {
            node.inputs.len() >= min
        } else {
            node.inputs.len() == min
        };
        if !ok {
            return Err(GraphError::ArityMismatch {
                node: node.id.clone(),
                op: node.kind.op_name(),
                expected: if variadic {
                    format!("at least {min}")
                } else {
                    min.to_string()
                },
                got: node.inputs.len(),
            });
        }
        for input in &node.inputs {
            if !seen.contains(input) {
                return Err(GraphError::UnknownId {
                    node: node.id.clone(),
                    missing: input.clone(),
                });
            }
        }
        validate_params(node)?;
    }
    for out in &outputs {
        if !seen.contains(out) {
            return Err(GraphError::UnknownId {
                node: "<outputs>".into(),
                missing: out.clone(),
            });
        }
    }

    let sorted = sort_nodes(&inputs, nodes)?;
    let mut graph = Graph::assemble(name, inputs, sorted, outputs);
    graph.fill_shapes()?;
    Ok(graph)
}

/// Kahn's algorithm with the ready set ordered by id.
fn sort_nodes(inputs: &[GraphInput], nodes: Vec<Node>) -> Result<Vec<Node>, GraphError> {
    let input_ids: BTreeSet<&str> = inputs.iter().map(|i| i.id.as_str()).collect();
    let by_id: BTreeMap<String, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.clone(), i))
        .collect();
    let mut pending = vec![0usize; nodes.len()];
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        for input in &node.inputs {
            if input_ids.contains(input.as_str()) {
                continue;
            }
            let src = by_id[input];
            pending[i] += 1;
            users[src].push(i);
        }
    }
    let mut ready: BTreeSet<(String, usize)> = nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| pending[*i] == 0)
        .map(|(i, n)| (n.id.clone(), i))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(first) = ready.pop_first() {
        let i = first.1;
        order.push(i);
        for &u in &users[i] {
            pending[u] -= 1;
            if pending[u] == 0 {
                ready.insert((nodes[u].id.clone(), u));
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| pending[*i] > 0)
            .map(|(_, n)| n.id.clone())
            .min()
            .unwrap_or_default();
        return Err(GraphError::CycleDetected(stuck));
    }
    let mut slots: Vec<Option<Node>> = nodes.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| slots[i].take().expect("each node emitted once"))
        .collect())
}

fn validate_params(node: &Node) -> Result<(), GraphError> {
    let bad = |reason: String| GraphError::InvalidParameters {
        node: node.id.clone(),
        reason,
    };
    let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
    match &node.kind {
        NodeKind::Dense(d) => {
            if d.out_features == 0 || d.in_features == 0 {
                return Err(bad("dense layer with zero features".into()));
            }
            if d.weight.len() != d.out_features * d.in_features || d.bias.len() != d.out_features {
                return Err(bad(format!(
                    "weight must be {}x{} with bias of {}",
                    d.out_features, d.in_features, d.out_features
                )));
            }
            if !finite(&d.weight) || !finite(&d.bias) {
                return Err(bad("non-finite weight".into()));
            }
        }
        NodeKind::Conv2d(c) => {
            if c.out_channels == 0 || c.in_channels == 0 || c.kernel_h == 0 || c.kernel_w == 0 {
                return Err(bad("convolution with a zero extent".into()));
            }
            if c.kernel.len() != c.out_channels * c.in_channels * c.window()
                || c.bias.len() != c.out_channels
            {
                return Err(bad(
                    "kernel or bias length inconsistent with declared dims".into()
                ));
            }
            if !finite(&c.kernel) || !finite(&c.bias) {
                return Err(bad("non-finite weight".into()));
            }
        }
        NodeKind::BatchNorm(bn) => {
            let n = bn.gamma.len();
            if n == 0 || bn.beta.len() != n || bn.mu.len() != n || bn.sigma.len() != n {
                return Err(bad(
                    "gamma, beta, mu and sigma must share one nonzero length".into(),
                ));
            }
            if !(bn.epsilon > 0.0 && bn.epsilon.is_finite()) {
                return Err(bad(format!("epsilon must be positive, got {}", bn.epsilon)));
            }
            if bn.sigma.iter().any(|&s| !(s >= 0.0)) {
                return Err(bad("sigma must be nonnegative".into()));
            }
            if ![&bn.gamma, &bn.beta, &bn.mu, &bn.sigma]
                .iter()
                .all(|v| finite(v))
            {
                return Err(bad("non-finite weight".into()));
            }
        }
        NodeKind::NonAffine(NonAffineOp::MaxPool2d { kh, kw })
        | NodeKind::OtherAffine(AffineOp::AvgPool2d { kh, kw }) => {
            if *kh == 0 || *kw == 0 {
                return Err(bad("pooling window must be positive".into()));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Output shape of `kind` applied to `inputs` (batch dim passed through).
pub fn node_output_shape(kind: &NodeKind, inputs: &[&TensorShape]) -> Result<TensorShape, String> {
    let first = inputs[0];
    let batch = first.batch();
    match kind {
        NodeKind::Dense(d) => {
            if first.rank() != 2 || first.channels() != d.in_features {
                return Err(format!(
                    "Dense expects [N,{}], got {}",
                    d.in_features, first
                ));
            }
            Ok(TensorShape::new(vec![batch, d.out_features]))
        }
        NodeKind::Conv2d(c) => {
            let dims = first.dims();
            if first.rank() != 4 || dims[1] != c.in_channels {
                return Err(format!(
                    "Conv2D expects [N,{},H,W], got {}",
                    c.in_channels, first
                ));
            }
            if dims[2] < c.kernel_h || dims[3] < c.kernel_w {
                return Err(format!(
                    "kernel {}x{} larger than input {}",
                    c.kernel_h, c.kernel_w, first
                ));
            }
            Ok(TensorShape::new(vec![
                batch,
                c.out_channels,
                dims[2] - c.kernel_h + 1,
                dims[3] - c.kernel_w + 1,
            ]))
        }
        NodeKind::BatchNorm(bn) => {
            if first.channels() != bn.channels() {
                return Err(format!(
                    "BatchNorm has {} channels, input is {}",
                    bn.channels(),
                    first
                ));
            }
            Ok(first.clone())
        }
        NodeKind::NonAffine(NonAffineOp::MaxPool2d { kh, kw })
        | NodeKind::OtherAffine(AffineOp::AvgPool2d { kh, kw }) => {
            let dims = first.dims();
            if first.rank() != 4 || dims[2] < *kh || dims[3] < *kw {
                return Err(format!(
                    "{kh}x{kw} pooling needs an image of at least that size, got {first}"
                ));
            }
            Ok(TensorShape::new(vec![
                batch,
                dims[1],
                dims[2] / kh,
                dims[3] / kw,
            ]))
        }
        NodeKind::NonAffine(_) | NodeKind::OtherAffine(AffineOp::Identity) => Ok(first.clone()),
        NodeKind::OtherAffine(AffineOp::Flatten) => {
            Ok(TensorShape::new(vec![batch, first.row_len()]))
        }
        NodeKind::OtherAffine(AffineOp::Add) => {
            if let Some(other) = inputs.iter().find(|s| !s.matches_symbolic(first)) {
                return Err(format!("Add operands disagree: {first} vs {other}"));
            }
            Ok(first.clone())
        }
        NodeKind::OtherAffine(AffineOp::Concat) => {
            let spatial = &first.dims()[2..];
            if inputs
                .iter()
                .any(|s| s.rank() != first.rank() || &s.dims()[2..] != spatial)
            {
                return Err("Concat operands must agree on every non-channel dim".into());
            }
            let mut dims = first.dims().to_vec();
            dims[1] = inputs.iter().map(|s| s.channels()).sum();
            Ok(TensorShape::new(dims))
        }
    }
}

impl Graph {
    fn assemble(
        name: String,
        inputs: Vec<GraphInput>,
        nodes: Vec<Node>,
        outputs: Vec<String>,
    ) -> Graph {
        let mut index = BTreeMap::new();
        for (i, input) in inputs.iter().enumerate() {
            index.insert(input.id.clone(), Producer::Input(i));
        }
        for (i, node) in nodes.iter().enumerate() {
            index.insert(node.id.clone(), Producer::Node(i));
        }
        let mut consumers = vec![Vec::new(); nodes.len()];
        let mut input_consumers = vec![Vec::new(); inputs.len()];
        for (i, node) in nodes.iter().enumerate() {
            let mut uniq: Vec<&String> = node.inputs.iter().collect();
            uniq.sort();
            uniq.dedup();
            for src in uniq {
                match index[src] {
                    Producer::Input(k) => input_consumers[k].push(i),
                    Producer::Node(k) => consumers[k].push(i),
                }
            }
        }
        Graph {
            name,
            inputs,
            nodes,
            outputs,
            index,
            consumers,
            input_consumers,
        }
    }

    fn fill_shapes(&mut self) -> Result<(), GraphError> {
        for i in 0..self.nodes.len() {
            let shape = {
                let node = &self.nodes[i];
                let ins: Vec<&TensorShape> =
                    node.inputs.iter().map(|id| self.value_shape(id)).collect();
                node_output_shape(&node.kind, &ins).map_err(|reason| GraphError::ShapeMismatch {
                    node: node.id.clone(),
                    reason,
                })?
            };
            self.nodes[i].out_shape = Some(shape);
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &[GraphInput] {
        &self.inputs
    }

    /// Nodes in canonical topological order.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn to_parts(&self) -> GraphParts {
        GraphParts {
            name: self.name.clone(),
            inputs: self.inputs.clone(),
            nodes: self.nodes.clone(),
            outputs: self.outputs.clone(),
        }
    }

    pub fn producer(&self, id: &str) -> Option<Producer> {
        self.index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        match self.producer(id)? {
            Producer::Node(i) => Some(&self.nodes[i]),
            Producer::Input(_) => None,
        }
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        match self.producer(id)? {
            Producer::Node(i) => Some(i),
            Producer::Input(_) => None,
        }
    }

    pub fn is_graph_input(&self, id: &str) -> bool {
        matches!(self.producer(id), Some(Producer::Input(_)))
    }

    pub fn is_graph_output(&self, id: &str) -> bool {
        self.outputs.iter().any(|o| o == id)
    }

    /// Shape of the value named `id` (node output or graph input). Panics on unknown ids.
    pub fn value_shape(&self, id: &str) -> &TensorShape {
        match self.index[id] {
            Producer::Input(k) => &self.inputs[k].shape,
            Producer::Node(k) => self.nodes[k]
                .out_shape
                .as_ref()
                .expect("shapes are filled in topological order"),
        }
    }

    /// Distinct consumer nodes of value `id`, in topological order.
    pub fn consumers(&self, id: &str) -> Vec<&Node> {
        let list = match self.index.get(id) {
            Some(Producer::Input(k)) => &self.input_consumers[*k],
            Some(Producer::Node(k)) => &self.consumers[*k],
            None => return Vec::new(),
        };
        list.iter().map(|&i| &self.nodes[i]).collect()
    }

    /// Number of distinct successors of `id`, counting a graph-output slot as one.
    pub fn fan_out(&self, id: &str) -> usize {
        self.consumers(id).len() + usize::from(self.is_graph_output(id))
    }

    /// Topological index used for deterministic tie-breaking; graph inputs sort first.
    pub fn topo_rank(&self, id: &str) -> i64 {
        match self.index.get(id) {
            Some(Producer::Node(i)) => *i as i64,
            Some(Producer::Input(k)) => -(self.inputs.len() as i64) + *k as i64,
            None => i64::MAX,
        }
    }

    pub fn batch_norm_ids(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|n| n.class() == LayerClass::BatchNorm)
            .map(|n| n.id.clone())
            .collect()
    }

    pub fn batch_norm_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.class() == LayerClass::BatchNorm)
            .count()
    }

    /// Stable 64-bit digest of structure and weight bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.name.hash(&mut h);
        for input in &self.inputs {
            input.id.hash(&mut h);
            input.shape.hash(&mut h);
        }
        for node in &self.nodes {
            node.id.hash(&mut h);
            node.inputs.hash(&mut h);
            hash_kind(&node.kind, &mut h);
        }
        self.outputs.hash(&mut h);
        h.finish()
    }
}

fn hash_kind(kind: &NodeKind, h: &mut DefaultHasher) {
    let bits = |xs: &[f64], h: &mut DefaultHasher| {
        for x in xs {
            x.to_bits().hash(h);
        }
    };
    kind.op_name().hash(h);
    match kind {
        NodeKind::Dense(d) => {
            (d.out_features, d.in_features).hash(h);
            bits(&d.weight, h);
            bits(&d.bias, h);
        }
        NodeKind::Conv2d(c) => {
            (c.out_channels, c.in_channels, c.kernel_h, c.kernel_w).hash(h);
            bits(&c.kernel, h);
            bits(&c.bias, h);
        }
        NodeKind::BatchNorm(bn) => {
            bits(&bn.gamma, h);
            bits(&bn.beta, h);
            bits(&bn.mu, h);
            bits(&bn.sigma, h);
            bn.epsilon.to_bits().hash(h);
        }
        NodeKind::NonAffine(op) => op.hash(h),
        NodeKind::OtherAffine(op) => op.hash(h),
    }
}

pub fn classify_node(node: &Node) -> LayerClass {
    node.kind.class()
}

/// Node ids in canonical topological order (ties broken by id).
pub fn topo_order(graph: &Graph) -> Vec<String> {
    graph.nodes().iter().map(|n| n.id.clone()).collect()
}

/// Recomputes every node's output shape from the graph inputs.
pub fn infer_shapes(graph: &Graph) -> Result<Graph, GraphError> {
    let parts = graph.to_parts();
    let nodes = parts
        .nodes
        .into_iter()
        .map(|mut n| {
            n.out_shape = None;
            n
        })
        .collect();
    build_graph(parts.name, parts.inputs, nodes, parts.outputs)
}

/// Total learnable parameters: Dense/Conv2D weights plus biases, four per BN channel.
pub fn param_count(graph: &Graph) -> usize {
    graph.nodes().iter().map(|n| n.kind.param_count()).sum()
}

impl GraphParts {
    pub fn build(self) -> Result<Graph, GraphError> {
        build_graph(self.name, self.inputs, self.nodes, self.outputs)
    }
}
