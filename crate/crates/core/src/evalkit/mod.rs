//! Verification metrics, training, causal rollout with narrative editing,
//! and the control and ablation experiment suites.

mod data;
mod experiment;
mod metrics;
mod model;
mod rollout;
mod train;

pub use data::{
    build_examples, from_splits, narrate_dataset, oracle_hint, pair_narratives, prepare, state_pairs, DataConfig,
    NarrationSummary, Prepared,
};
pub use metrics::{acc, lat_rmse, metrics_csv, read_metrics_csv, write_metrics_csv, MetricRow, METRICS_HEADER};
pub use model::{ForwardCache, Forecaster, ModelConfig, TextMode, Variant};
pub use train::{
    assign_texts, derangement, loss_csv, train, train_from, vocabulary, write_loss_csv, Example, TrainConfig,
    TrainOutcome, LOSS_HEADER,
};
pub use experiment::{
    evaluate_one_step, median, narration_settings, rollout_dataset, EvalContext, RolloutRun, normalized_by_lead, normalized_rmse, run_ablation, run_control, run_rollout_comparison,
    score_states, ExperimentConfig, Lab, Narrations, Suite, SuiteResult, SuiteRow, AGENT_ORDER, SEED_HEADER, STEP_HOURS,
    SUITE_HEADER, VISION_ONLY,
};
pub use rollout::{audit_causality, rollout, AuditReport, InputId, LeakStub, ProvenanceEvent, RolloutTrace};
