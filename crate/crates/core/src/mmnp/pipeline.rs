use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backend::{NarrationContext, NarratorBackend, OracleHint};
use super::cache::CacheRecord;
use super::clause::{Clause, Narrative, VariableDescription};
use super::evaluator::{Evaluator, EvaluatorVerdict, Feedback};
use crate::error::{Error, Result};
use crate::fieldgrid::{normalize_state, AtmosphericState, GridSpec, NormStats};
use crate::heatmap::{field_digest, render_state, rotation_center};

pub const PIPELINE_VERSION: &str = "mmnp-1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    /// Parallel describers, sequential integration, evaluator and refinement.
    #[default]
    Full,
    /// Describers and integration only; the integrated narrative is final.
    NoEvaluator,
    /// One agent narrates every variable in a single call.
    SingleAgent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmnpConfig {
    /// Refinement budget R.
    pub rounds: usize,
    pub mode: PipelineMode,
    /// Variables with active describers; `None` enables all.
    pub enabled: Option<Vec<String>>,
    pub render_images: bool,
}

impl Default for MmnpConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            mode: PipelineMode::Full,
            enabled: None,
            render_images: false,
        }
    }
}

impl MmnpConfig {
    pub fn version_tag(&self) -> String {
        let mode = match self.mode {
            PipelineMode::Full => "full",
            PipelineMode::NoEvaluator => "no-evaluator",
            PipelineMode::SingleAgent => "single-agent",
        };
        format!("{PIPELINE_VERSION}/{mode}/r{}", self.rounds)
    }
}

/// Digests (and optionally heatmaps) of a raw state, as seen by the agents.
pub fn build_context(
    spec: &GridSpec,
    state: &AtmosphericState,
    stats: &NormStats,
    hint: Option<OracleHint>,
    cfg: &MmnpConfig,
) -> Result<NarrationContext> {
    let norm = normalize_state(state, stats)?;
    let digests = spec
        .variables
        .iter()
        .zip(&norm.fields)
        .map(|(v, f)| field_digest(f, v))
        .collect::<Result<Vec<_>>>()?;
    let rotation = match (norm.field(spec, "u"), norm.field(spec, "v")) {
        (Some(u), Some(v)) => Some(rotation_center(u, v)?),
        _ => None,
    };
    let enabled = match &cfg.enabled {
        None => (0..spec.num_vars()).collect(),
        Some(names) => {
            let mut idx = names
                .iter()
                .map(|n| {
                    spec.var_index(n)
                        .ok_or_else(|| Error::Config(format!("unknown variable {n:?} in enabled describers")))
                })
                .collect::<Result<Vec<_>>>()?;
            idx.sort_unstable();
            idx.dedup();
            idx
        }
    };
    let images = if cfg.render_images { render_state(state, stats)? } else { Vec::new() };
    Ok(NarrationContext {
        sample_id: state.sample_id.clone(),
        variables: spec.variables.clone(),
        digests,
        enabled,
        rotation_center: rotation,
        hint,
        images,
    })
}

fn parse_for(text: &str, ctx: &NarrationContext) -> Result<Vec<Clause>> {
    Narrative::parse_clauses(text, &ctx.variables).map_err(|e| Error::Backend {
        message: format!("unparseable agent output: {e}"),
        retries: 0,
    })
}

pub fn describe_variable(backend: &dyn NarratorBackend, ctx: &NarrationContext, i: usize) -> Result<VariableDescription> {
    let var = ctx
        .variables
        .get(i)
        .ok_or_else(|| Error::Contract(format!("no variable with index {i}")))?;
    let text = backend.describe(ctx, i)?;
    if text.trim().is_empty() {
        return Err(Error::Backend {
            message: format!("describer for {var} returned empty text"),
            retries: 0,
        });
    }
    let clauses = parse_for(&text, ctx)?;
    VariableDescription::new(i, var, clauses, &ctx.digests[i]).map_err(|e| Error::Backend {
        message: e.to_string(),
        retries: 0,
    })
}

pub fn integrate(
    backend: &dyn NarratorBackend,
    ctx: &NarrationContext,
    prev: &Narrative,
    d: &VariableDescription,
) -> Result<Narrative> {
    if let Some(&last) = prev.integrated.last() {
        if d.index <= last {
            return Err(Error::Ordering(format!(
                "variable {} integrated after variable {last}",
                d.index
            )));
        }
    }
    let text = backend.integrate(ctx, prev, d)?;
    let mut provenance = prev.provenance.clone();
    provenance.push(d.digest_hash.clone());
    let mut integrated = prev.integrated.clone();
    integrated.push(d.index);
    Ok(Narrative {
        clauses: parse_for(&text, ctx)?,
        version: prev.version + 1,
        provenance,
        integrated,
    })
}

pub fn refine(backend: &dyn NarratorBackend, ctx: &NarrationContext, s: &Narrative, feedback: &Feedback) -> Result<Narrative> {
    let text = backend.refine(ctx, s, feedback)?;
    Ok(Narrative {
        clauses: parse_for(&text, ctx)?,
        version: s.version + 1,
        ..s.clone()
    })
}

/// Rollout editor step: observation clauses are recomputed from the current
/// digests by the integrator alone. An unchanged result returns `prev` as is.
pub fn edit_step(backend: &dyn NarratorBackend, ctx: &NarrationContext, prev: &Narrative) -> Result<Narrative> {
    let text = backend.edit(ctx, prev).map_err(to_pipeline)?;
    let clauses = parse_for(&text, ctx).map_err(to_pipeline)?;
    if crate::mmnp::clause::join_lines(&clauses) == prev.text() {
        return Ok(prev.clone());
    }
    Ok(Narrative {
        clauses,
        version: prev.version + 1,
        provenance: prev.provenance.clone(),
        integrated: ctx.enabled.clone(),
    })
}

fn to_pipeline(e: Error) -> Error {
    match e {
        Error::Backend { .. } => Error::Pipeline(e.to_string()),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutcome {
    pub narrative: Narrative,
    pub descriptions: Vec<VariableDescription>,
    /// Verdict on the returned narrative; absent when no evaluator ran.
    pub verdict: Option<EvaluatorVerdict>,
    pub rounds_used: usize,
    /// The refinement budget ran out and the best-scoring candidate was kept.
    pub fallback: bool,
    pub log: Vec<String>,
    /// Evaluator score of every candidate, in generation order.
    pub scores: Vec<f64>,
}

impl PipelineOutcome {
    pub fn passed(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.pass)
    }

    pub fn record(&self, sample_id: &str, k: usize, cfg: &MmnpConfig) -> CacheRecord {
        CacheRecord::new(
            sample_id,
            k,
            self.narrative.text(),
            self.descriptions.iter().map(VariableDescription::text).collect(),
            self.log.clone(),
            self.rounds_used,
            self.passed(),
            self.fallback,
            &cfg.version_tag(),
        )
    }
}

pub fn run_pipeline(
    backend: &dyn NarratorBackend,
    evaluator: &dyn Evaluator,
    ctx: &NarrationContext,
    cfg: &MmnpConfig,
) -> Result<PipelineOutcome> {
    run_inner(backend, evaluator, ctx, cfg).map_err(to_pipeline)
}

fn run_inner(
    backend: &dyn NarratorBackend,
    evaluator: &dyn Evaluator,
    ctx: &NarrationContext,
    cfg: &MmnpConfig,
) -> Result<PipelineOutcome> {
    if cfg.mode == PipelineMode::SingleAgent {
        let text = backend.narrate_single(ctx)?;
        return Ok(PipelineOutcome {
            narrative: Narrative {
                clauses: parse_for(&text, ctx)?,
                version: 1,
                provenance: Vec::new(),
                integrated: ctx.enabled.clone(),
            },
            descriptions: Vec::new(),
            verdict: None,
            rounds_used: 0,
            fallback: false,
            log: vec!["single agent".into()],
            scores: Vec::new(),
        });
    }
    let descriptions = ctx
        .enabled
        .par_iter()
        .map(|&i| describe_variable(backend, ctx, i))
        .collect::<Result<Vec<_>>>()?;
    let mut s = Narrative::empty();
    for d in &descriptions {
        s = integrate(backend, ctx, &s, d)?;
    }
    if cfg.mode == PipelineMode::NoEvaluator {
        return Ok(PipelineOutcome {
            narrative: s,
            descriptions,
            verdict: None,
            rounds_used: 0,
            fallback: false,
            log: vec!["evaluator disabled".into()],
            scores: Vec::new(),
        });
    }
    let mut verdict = evaluator.evaluate(&descriptions, &s);
    let mut log = vec![verdict.log_line(0)];
    let mut candidates = vec![(s.clone(), verdict.clone())];
    let mut rounds = 0;
    while !verdict.pass && rounds < cfg.rounds {
        let feedback = verdict.feedback.clone().ok_or_else(|| {
            Error::Contract("evaluator failed a narrative without feedback".into())
        })?;
        s = refine(backend, ctx, &s, &feedback)?;
        rounds += 1;
        verdict = evaluator.evaluate(&descriptions, &s);
        log.push(verdict.log_line(rounds));
        candidates.push((s.clone(), verdict.clone()));
    }
    let scores: Vec<f64> = candidates.iter().map(|(_, v)| v.score).collect();
    let fallback = !verdict.pass;
    let (narrative, verdict) = if fallback {
        let mut best = 0;
        for (k, (_, v)) in candidates.iter().enumerate() {
            if v.score > candidates[best].1.score {
                best = k;
            }
        }
        log.push(format!("fallback to candidate {best}"));
        candidates.swap_remove(best)
    } else {
        (s, verdict)
    };
    Ok(PipelineOutcome {
        narrative,
        descriptions,
        verdict: Some(verdict),
        rounds_used: rounds,
        fallback,
        log,
        scores,
    })
}
