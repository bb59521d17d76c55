//! Narrator backends. Agents exchange plain clause text; the pipeline parses
//! and normalises whatever a backend returns.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::clause::{join_lines, normalise_clauses, Clause, ClauseKind, Narrative, VariableDescription};
use super::defects::{inject_defect, Defect};
use super::evaluator::{Feedback, FeedbackType};
use crate::error::{Error, Result};
use crate::heatmap::{FieldDigest, Region, RgbImage};

/// Knowledge the mock agents may draw on beyond the rendered fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleHint {
    /// +1 counterclockwise, -1 clockwise.
    pub rotation_sign: i8,
}

/// Everything the agents see about one state.
#[derive(Clone, Debug, PartialEq)]
pub struct NarrationContext {
    pub sample_id: String,
    pub variables: Vec<String>,
    /// One digest per variable, in variable order.
    pub digests: Vec<FieldDigest>,
    /// Variables whose describers are active, ascending.
    pub enabled: Vec<usize>,
    pub rotation_center: Option<Region>,
    pub hint: Option<OracleHint>,
    /// Rendered heatmaps, one per variable; may be empty.
    pub images: Vec<RgbImage>,
}

impl NarrationContext {
    pub fn all_enabled(&mut self) {
        self.enabled = (0..self.variables.len()).collect();
    }

    pub fn last_enabled(&self) -> Option<usize> {
        self.enabled.last().copied()
    }

    /// Canonical description used as prompt context and for hashing.
    pub fn summary(&self) -> String {
        let mut out: Vec<String> = self.digests.iter().map(FieldDigest::summary).collect();
        if let Some(r) = self.rotation_center {
            out.push(format!("rotation center {r}"));
        }
        out.join("; ")
    }
}

pub trait NarratorBackend: Send + Sync {
    /// Describer for variable `i`.
    fn describe(&self, ctx: &NarrationContext, i: usize) -> Result<String>;
    /// Sequential integrator: returns the updated narrative text.
    fn integrate(&self, ctx: &NarrationContext, prev: &Narrative, d: &VariableDescription) -> Result<String>;
    fn refine(&self, ctx: &NarrationContext, s: &Narrative, feedback: &Feedback) -> Result<String>;
    /// Rollout editor over the current fields.
    fn edit(&self, ctx: &NarrationContext, prev: &Narrative) -> Result<String>;
    /// One-shot narration of all enabled variables by a single agent.
    fn narrate_single(&self, ctx: &NarrationContext) -> Result<String>;
    /// Generation requests served so far.
    fn calls(&self) -> usize;
}

/// Deterministic stand-in for the multimodal agents.
///
/// With a nonzero `defect_rate` the integrator corrupts some final narratives
/// with one defect drawn from a hash of the sample id, which exercises the
/// evaluator loop.
#[derive(Debug, Default)]
pub struct MockBackend {
    pub hypothesis_variable: String,
    pub defect_rate: f64,
    pub seed: u64,
    /// Defect applied to every final integration, overriding the rate.
    pub forced: Option<Defect>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new() -> Self {
        Self {
            hypothesis_variable: "v".into(),
            ..Self::default()
        }
    }

    pub fn with_defects(rate: f64, seed: u64) -> Self {
        Self {
            defect_rate: rate,
            seed,
            ..Self::new()
        }
    }

    pub fn forcing(defect: Defect) -> Self {
        Self {
            forced: Some(defect),
            ..Self::new()
        }
    }

    fn tick(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
    }

    fn hash_unit(&self, sample_id: &str, salt: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(sample_id.as_bytes());
        h.update(salt.as_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }

    fn sampled_defect(&self, ctx: &NarrationContext) -> Option<Defect> {
        if let Some(d) = self.forced {
            return Some(d);
        }
        if self.defect_rate <= 0.0 || ctx.enabled.is_empty() {
            return None;
        }
        let u = (self.hash_unit(&ctx.sample_id, "rate") >> 11) as f64 / (1u64 << 53) as f64;
        if u >= self.defect_rate {
            return None;
        }
        let pick = self.hash_unit(&ctx.sample_id, "kind");
        Some(Defect {
            kind: FeedbackType::ALL[(pick % 4) as usize],
            index: ctx.enabled[((pick >> 8) % ctx.enabled.len() as u64) as usize],
        })
    }

    fn hypothesis(&self, ctx: &NarrationContext, prev: &Narrative, d: &VariableDescription) -> Option<Clause> {
        if d.variable != self.hypothesis_variable {
            return None;
        }
        let sign = ctx.hint?.rotation_sign;
        let centre = ctx.rotation_center?;
        let z_region = prev
            .clauses_for("z")
            .find(|c| c.kind == ClauseKind::Observation)
            .and_then(|c| c.region)?;
        (z_region == centre).then(|| Clause::rotation_hypothesis(&d.variable, centre, sign))
    }

    fn observations(&self, ctx: &NarrationContext) -> Vec<Clause> {
        ctx.enabled.iter().map(|&i| Clause::from_digest(&ctx.digests[i])).collect()
    }
}

impl NarratorBackend for MockBackend {
    fn describe(&self, ctx: &NarrationContext, i: usize) -> Result<String> {
        self.tick();
        let digest = ctx
            .digests
            .get(i)
            .ok_or_else(|| Error::Contract(format!("no digest for variable {i}")))?;
        Ok(Clause::from_digest(digest).text)
    }

    fn integrate(&self, ctx: &NarrationContext, prev: &Narrative, d: &VariableDescription) -> Result<String> {
        self.tick();
        let mut clauses = prev.clauses.clone();
        clauses.extend(d.clauses.iter().cloned());
        clauses.extend(self.hypothesis(ctx, prev, d));
        let mut s = Narrative {
            clauses: normalise_clauses(clauses, &ctx.variables),
            ..Narrative::empty()
        };
        if Some(d.index) == ctx.last_enabled() {
            if let Some(defect) = self.sampled_defect(ctx) {
                s = inject_defect(&s, &ctx.variables, defect)?;
            }
        }
        Ok(s.text())
    }

    fn refine(&self, ctx: &NarrationContext, s: &Narrative, feedback: &Feedback) -> Result<String> {
        self.tick();
        Ok(super::defects::apply_refinement(s, feedback, &ctx.variables).text())
    }

    fn edit(&self, ctx: &NarrationContext, prev: &Narrative) -> Result<String> {
        self.tick();
        let mut clauses = self.observations(ctx);
        // Free-text clauses survive for variables whose observations did not
        // move; the rotation hypothesis is re-derived below.
        let remarks: Vec<Clause> = prev
            .clauses
            .iter()
            .filter(|c| c.kind != ClauseKind::Observation && c.rotation_sense().is_none())
            .filter(|c| {
                let old: Vec<&str> = prev
                    .clauses_for(&c.variable)
                    .filter(|o| o.kind == ClauseKind::Observation)
                    .map(|o| o.text.as_str())
                    .collect();
                let new: Vec<&str> = clauses.iter().filter(|o| o.variable == c.variable).map(|o| o.text.as_str()).collect();
                old == new
            })
            .cloned()
            .collect();
        clauses.extend(remarks);
        let var = &self.hypothesis_variable;
        if let (Some(sign), Some(centre)) = (prev.rotation_sense(), ctx.rotation_center) {
            if ctx.variables.contains(var) {
                clauses.push(Clause::rotation_hypothesis(var, centre, sign));
            }
        }
        Ok(join_lines(&normalise_clauses(clauses, &ctx.variables)))
    }

    fn narrate_single(&self, ctx: &NarrationContext) -> Result<String> {
        self.tick();
        let s = Narrative {
            clauses: self.observations(ctx),
            ..Narrative::empty()
        };
        let s = match self.sampled_defect(ctx) {
            Some(defect) => inject_defect(&s, &ctx.variables, defect)?,
            None => s,
        };
        Ok(s.text())
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}
