//! Synthetic designs, split protocols, batch reference fits and the
//! experiments built on them.

pub mod alloc;
pub mod cost;
pub mod divergence;
pub mod equivalence;
pub mod generators;
pub mod pipeline;
pub mod split;

pub use alloc::TrackingAllocator;
pub use cost::{cost_benchmark, CostReport};
pub use divergence::{divergence_experiment, divergence_for_design, DivergenceCurve};
pub use equivalence::{batch_gmm_fit, equivalence_report, matchers, ClusterMatcher, EquivalenceReport, GreedyMatcher, HungarianMatcher};
pub use generators::{generators, DataGenerator, LabeledDataset};
pub use pipeline::{run_design, DesignRun};
pub use split::{random_split, split_protocol, DatasetSplit};
