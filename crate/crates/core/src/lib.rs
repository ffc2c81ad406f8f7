//! Batch-normalization folding for feed-forward computation graphs.
//!
//! A batch norm at inference time is a per-channel affine map, so it can
//! often be deleted by rewriting the parameters of nearby dense or
//! convolution layers. This crate provides:
//!
//! * [`graph`]: the graph model, validation and shape inference.
//! * [`interp`]: a plain reference interpreter.
//! * [`analysis`]: the foldability check and fold planning.
//! * [`transform`]: plan application, a sequential-only pass and the
//!   fixed-point pass that folds every foldable batch norm.
//! * [`verify`]: numerical equivalence, label audits and metrics.
//! * [`models`]: the archetype corpus, random DAGs and JSON files.
//! * [`bench`]: comparison tables.
//!
//! ```
//! use bnfold::models::{generate, Archetype, Dims};
//! use bnfold::transform::{banoff_pass, naive_pass};
//! use bnfold::verify::check_equivalence;
//!
//! let (g, _) = generate(Archetype::Fig2c, &Dims::default(), 1).unwrap();
//! let (_, naive) = naive_pass(&g);
//! let (folded, report) = banoff_pass(&g);
//! assert_eq!(naive.folded_count(), 0);
//! assert_eq!(report.folded_count(), 1);
//! assert!(check_equivalence(&g, &folded, 10, 42, 1e-9).unwrap().pass);
//! ```

pub mod analysis;
pub mod bench;
pub mod graph;
pub mod interp;
pub mod models;
pub mod transform;
pub mod verify;

pub use analysis::{check_foldable, plan_fold, Direction, FoldDecision, FoldPlan, FoldReason};
pub use graph::{build_graph, Graph};
pub use transform::{apply_fold, banoff_pass, naive_pass, FoldReport};
