//! Construction pipeline for graph-based approximate nearest neighbor indexes
//! at scales where a single machine cannot build the whole graph.
//!
//! The dataset is split into overlapping subsets whose sizes never exceed a
//! per-worker capacity, one proximity graph is built per subset on a pool of
//! workers under a longest-processing-time schedule, and the subgraphs are
//! folded together pairwise along an overlap-prioritized binary tree.
//!
//! Stage map:
//!
//! * [`partition`]: centroid training and overload-aware vector assignment
//! * [`quantize`]: product quantization, encoded once per vector
//! * [`graph`]: per-subset graph construction, beam search, robust pruning
//! * [`schedule`]: LPT assignment of build tasks to workers
//! * [`merge`]: merge-tree planning and execution
//! * [`eval`]: ground truth, recall and connectivity diagnostics
//! * [`pipeline`]: end-to-end orchestration and on-disk artifacts

pub mod config;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod kmeans;
pub mod merge;
pub mod partition;
pub mod pipeline;
pub mod quantize;
pub mod schedule;
pub mod synth;

pub use dataset::{GroundTruth, VectorDataset, VectorId};
pub use error::{Error, Result};
