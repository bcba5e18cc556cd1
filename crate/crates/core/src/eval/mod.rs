//! Metrics, threshold calibration, the alignment baseline and the
//! secondary-structure probe.

pub mod metrics;
pub mod nw;
pub mod probe;
pub mod report;
pub mod thresholds;

pub use metrics::{average_precision, pearson, spearman};
pub use nw::{blosum62, nw_align_score};
pub use probe::{kmer_features, ss_probe, ProbeConfig, ProbeResult};
pub use report::{evaluate_pairs, EvalReport};
pub use thresholds::{fit_thresholds, ThresholdSet};
