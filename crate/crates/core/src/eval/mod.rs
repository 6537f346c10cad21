//! Inference protocols, correlation metrics, projections and the ablation harness.

pub mod health;
pub mod linalg;
pub mod metrics;
pub mod projection;
pub mod report;

pub use health::{
    estimate_full_history, estimate_history_with_references, estimate_with_references, reference_pool, strided_cycles,
    write_health_csv, HealthEstimate, DEFAULT_DRAWS, DEFAULT_EVAL_STRIDE, DEFAULT_REFERENCES,
};
pub use metrics::{kendall_tau, mean, non_increasing_fraction, pearson_r, std_dev};
pub use projection::{classical_mds, geodesic_distances, isomap_2d, pca_2d, Pca};
pub use report::{
    correlate_with_capacity, default_grid, run_ablation, write_ablation_csv, AblationCase, AblationRow,
    CellCorrelation, CorrelationReport, EvalConfig, FINAL_LOSS_EPOCHS,
};
