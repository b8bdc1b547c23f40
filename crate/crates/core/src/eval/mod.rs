//! Evaluation: distribution distances, alignment and retrieval metrics, the
//! linear probe, the leakage audit and the ablation sweeps.

mod ablation;
mod alignment;
mod fidelity;
mod leakage;
mod probe;
mod report;

pub use ablation::{ablate_km, ablate_retrieval, km_allocation, SamplingPipeline, KM_SWEEP, SWEEP_PER_KEYWORD};
pub use alignment::{
    alignment_score, average_precision_at, rank_by_cosine, retrieval_metrics, RankedRetrieval, RetrievalAtK,
};
pub use fidelity::{fid, fid_from_stats, kid, kid_blocked, mmd2_block, GaussianStats, EIGEN_FLOOR, KID_BLOCK};
pub use leakage::{leakage_check, LeakPair, LeakageReport, LEAKAGE_THRESHOLD};
pub use probe::{
    binary_auc, linear_probe, weighted_f1, weighted_ovr_auc, LabeledFeatures, ProbeResult, ProbeSplit,
    SPLIT_FRACTIONS,
};
pub use report::{MetricReport, MAP_NOTE};
