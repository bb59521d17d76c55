//! Multi-agent narration: per-variable describers, a sequential integrator,
//! a rule-based evaluator with typed feedback, bounded refinement, the
//! rollout editor, backends and the offline cache.

mod backend;
mod cache;
mod clause;
mod defects;
mod evaluator;
mod http;
mod pipeline;

pub use backend::{MockBackend, NarrationContext, NarratorBackend, OracleHint};
pub use cache::{cache_get, cache_put, CacheRecord, NarrationCache};
pub use clause::{has_hedge, trend_word, unhedged_causal, Clause, ClauseKind, Narrative, Polarity, VariableDescription, BANNED_CAUSAL, HEDGES};
pub use defects::{apply_refinement, inject_defect, Defect};
pub use evaluator::{Evaluator, EvaluatorVerdict, Feedback, FeedbackType, RuleEvaluator};
pub use http::{HttpBackend, HttpConfig};
pub use pipeline::{
    build_context, describe_variable, edit_step, integrate, refine, run_pipeline, MmnpConfig, PipelineMode,
    PipelineOutcome, PIPELINE_VERSION,
};
