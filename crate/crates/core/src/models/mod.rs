//! Hand-drawn archetypes, random DAGs and the on-disk JSON format.

mod archetype;
mod init;
mod io;
mod random_dag;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{Graph, GraphError};

pub use io::{load_graph, parse_graph, save_graph, write_graph, LoadError, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Archetype {
    /// Repeated Conv -> BN -> ReLU blocks.
    Fig2a,
    /// Sequential, with pooling and flattening between layers and one batch
    /// norm trapped between two activations.
    Fig2b,
    /// A batch norm reading a junction whose value is also read elsewhere.
    Fig2c,
    /// Two paths from one ancestor, one ending in an activation.
    Fig4,
    /// Junction with two producing and one compensating expressive layer.
    Fig5a,
    /// Like `Fig5a`, plus an activation reading the junction.
    Fig5b,
    /// Residual blocks with a batch norm after every addition.
    ResNetToy { blocks: usize },
    /// Random graph over the whole operator set.
    RandomDag { nodes: usize, seed: u64 },
}

impl Archetype {
    /// The fixed corpus, in a stable order.
    pub fn corpus() -> Vec<Archetype> {
        vec![
            Archetype::Fig2a,
            Archetype::Fig2b,
            Archetype::Fig2c,
            Archetype::Fig4,
            Archetype::Fig5a,
            Archetype::Fig5b,
            Archetype::ResNetToy { blocks: 3 },
        ]
    }

    pub fn name(&self) -> String {
        match self {
            Archetype::Fig2a => "fig2a".into(),
            Archetype::Fig2b => "fig2b".into(),
            Archetype::Fig2c => "fig2c".into(),
            Archetype::Fig4 => "fig4".into(),
            Archetype::Fig5a => "fig5a".into(),
            Archetype::Fig5b => "fig5b".into(),
            Archetype::ResNetToy { blocks } => format!("resnet{blocks}"),
            Archetype::RandomDag { nodes, seed } => format!("random{nodes}s{seed}"),
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Archetype {
    type Err = String;

    /// Accepts `fig2a`..`fig5b`, `resnet` / `resnetN`, `random:NODES:SEED`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "fig2a" => Archetype::Fig2a,
            "fig2b" => Archetype::Fig2b,
            "fig2c" => Archetype::Fig2c,
            "fig4" => Archetype::Fig4,
            "fig5a" => Archetype::Fig5a,
            "fig5b" => Archetype::Fig5b,
            "resnet" => Archetype::ResNetToy { blocks: 3 },
            _ => {
                if let Some(n) = lower.strip_prefix("resnet") {
                    let blocks = n.parse().map_err(|_| format!("bad block count in `{s}`"))?;
                    Archetype::ResNetToy { blocks }
                } else if let Some(rest) = lower.strip_prefix("random") {
                    let parts: Vec<&str> = rest.trim_start_matches(':').split(':').collect();
                    let [nodes, seed] = parts.as_slice() else {
                        return Err(format!("expected random:NODES:SEED, got `{s}`"));
                    };
                    Archetype::RandomDag {
                        nodes: nodes
                            .parse()
                            .map_err(|_| format!("bad node count in `{s}`"))?,
                        seed: seed.parse().map_err(|_| format!("bad seed in `{s}`"))?,
                    }
                } else {
                    return Err(format!("unknown archetype `{s}`"));
                }
            }
        })
    }
}

/// Size knobs shared by the archetypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub channels: usize,
    /// Height and width of image inputs.
    pub image: usize,
    /// Conv blocks in `Fig2a`.
    pub depth: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            channels: 16,
            image: 8,
            depth: 3,
        }
    }
}

/// Expected outcomes shipped with an archetype.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Labels {
    /// Expected result of the foldability check on the generated graph.
    pub foldable: BTreeMap<String, bool>,
    /// Batch norms the sequential-only pass removes.
    pub naive: BTreeSet<String>,
    /// Batch norms the fixed-point pass removes.
    pub banoff: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid dims: {0}")]
    InvalidDims(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Deterministic graph and labels for `(archetype, dims, weight_seed)`.
/// Random DAGs carry their own seed and no labels.
pub fn generate(
    archetype: Archetype,
    dims: &Dims,
    weight_seed: u64,
) -> Result<(Graph, Labels), ModelError> {
    if dims.channels == 0 || dims.image == 0 || dims.depth == 0 {
        return Err(ModelError::InvalidDims("dims must be positive".into()));
    }
    match archetype {
        Archetype::RandomDag { nodes, seed } => {
            if nodes == 0 {
                return Err(ModelError::InvalidDims(
                    "a random DAG needs at least one node".into(),
                ));
            }
            Ok((random_dag::random_dag(nodes, seed)?, Labels::default()))
        }
        other => archetype::build(other, dims, weight_seed),
    }
}
