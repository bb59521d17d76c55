//! Strictly causal autoregressive rollout with narrative editing, plus the
//! provenance audit.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::model::Forecaster;
use crate::error::{Error, Result};
use crate::fieldgrid::{AtmosphericState, GridSpec, NormStats};
use crate::mmnp::{build_context, edit_step, MmnpConfig, Narrative, NarratorBackend};
use crate::numcore::ParamStore;

/// Identity of an artifact a rollout step reads or writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "index")]
pub enum InputId {
    Initial,
    Prediction(usize),
    Narrative(usize),
    /// Ground truth at a lead step; never allowed.
    Truth(usize),
}

impl fmt::Display for InputId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputId::Initial => f.write_str("initial"),
            InputId::Prediction(k) => write!(f, "prediction[{k}]"),
            InputId::Narrative(k) => write!(f, "narrative[{k}]"),
            InputId::Truth(k) => write!(f, "truth[{k}]"),
        }
    }
}

/// One produced artifact and everything read to produce it. `step` is the
/// prediction step the artifact belongs to: prediction `k` at step `k`,
/// narrative `S^(k)` at step `k + 1` since it conditions that prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub step: usize,
    pub produced: InputId,
    pub consumed: Vec<InputId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTrace {
    pub sample_id: String,
    pub initial: AtmosphericState,
    /// Predictions for steps `1..=K`.
    pub predictions: Vec<AtmosphericState>,
    /// `S^(0..=K)`.
    pub narratives: Vec<String>,
    pub provenance: Vec<ProvenanceEvent>,
}

impl RolloutTrace {
    pub fn steps(&self) -> usize {
        self.predictions.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    /// First offending step and input, if any.
    pub violation: Option<(usize, InputId)>,
}

impl AuditReport {
    pub fn line(&self) -> String {
        match self.violation {
            None => "audit PASS".into(),
            Some((step, id)) => format!("audit FAIL at step {step}: consumed {id}"),
        }
    }
}

fn allowed(step: usize, id: InputId) -> bool {
    match id {
        InputId::Initial => true,
        InputId::Prediction(j) | InputId::Narrative(j) => j < step,
        InputId::Truth(_) => false,
    }
}

pub fn audit_causality(trace: &RolloutTrace) -> AuditReport {
    let violation = trace
        .provenance
        .iter()
        .find_map(|e| e.consumed.iter().find(|&&id| !allowed(e.step, id)).map(|&id| (e.step, id)));
    AuditReport {
        passed: violation.is_none(),
        violation,
    }
}

/// Fault injection: at `step`, the model input is replaced by the true state
/// at that lead step.
#[derive(Clone, Copy, Debug)]
pub struct LeakStub<'a> {
    pub step: usize,
    pub truth: &'a [AtmosphericState],
}

fn narrative_from_text(text: &str, spec: &GridSpec) -> Result<Narrative> {
    Ok(Narrative {
        clauses: Narrative::parse_clauses(text, &spec.variables)?,
        version: 1,
        provenance: Vec::new(),
        integrated: (0..spec.num_vars()).collect(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn rollout(
    model: &Forecaster,
    ps: &ParamStore,
    stats: &NormStats,
    spec: &GridSpec,
    editor: &dyn NarratorBackend,
    mmnp: &MmnpConfig,
    initial: &AtmosphericState,
    s0: &str,
    steps: usize,
    leak: Option<LeakStub<'_>>,
) -> Result<RolloutTrace> {
    let mut narrative = narrative_from_text(s0, spec)?;
    let mut trace = RolloutTrace {
        sample_id: initial.sample_id.clone(),
        initial: initial.clone(),
        predictions: Vec::with_capacity(steps),
        narratives: vec![narrative.text()],
        provenance: vec![ProvenanceEvent {
            step: 1,
            produced: InputId::Narrative(0),
            consumed: vec![InputId::Initial],
        }],
    };
    for k in 1..=steps {
        let (input, input_id) = match leak {
            Some(l) if l.step == k => {
                let t = l
                    .truth
                    .get(k - 1)
                    .ok_or_else(|| Error::Contract(format!("leak stub has no truth for step {k}")))?;
                (t, InputId::Truth(k))
            }
            _ if k == 1 => (initial, InputId::Initial),
            _ => (&trace.predictions[k - 2], InputId::Prediction(k - 1)),
        };
        let text = model.uses_text().then(|| model.embed(&trace.narratives[k - 1]));
        let mut pred = model.step(ps, input, stats, text.as_ref())?;
        pred.time_index = initial.time_index + k as i64;
        let mut consumed = vec![input_id];
        if text.is_some() {
            consumed.push(InputId::Narrative(k - 1));
        }
        trace.provenance.push(ProvenanceEvent {
            step: k,
            produced: InputId::Prediction(k),
            consumed,
        });
        let ctx = build_context(spec, &pred, stats, None, mmnp)?;
        narrative = edit_step(editor, &ctx, &narrative)?;
        trace.narratives.push(narrative.text());
        trace.provenance.push(ProvenanceEvent {
            step: k + 1,
            produced: InputId::Narrative(k),
            consumed: vec![InputId::Prediction(k), InputId::Narrative(k - 1)],
        });
        trace.predictions.push(pred);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::{ModelConfig, Variant};
    use crate::fieldgrid::gen_synthetic;
    use crate::mmnp::{run_pipeline, MockBackend, RuleEvaluator};

    struct Fixture {
        model: Forecaster,
        ps: ParamStore,
        stats: NormStats,
        spec: GridSpec,
        seq: Vec<AtmosphericState>,
        s0: String,
    }

    fn fixture(variant: Variant) -> Fixture {
        let spec = GridSpec::desk_default();
        let data = gen_synthetic(3, 4, &spec, 8).unwrap();
        let stats = NormStats::fit(&spec, data.dataset.states()).unwrap();
        let model = Forecaster::new(variant, ModelConfig::default(), &spec).unwrap();
        let ps = model.init(4).unwrap();
        let seq = data.dataset.sequences[0].states.clone();
        let hint = crate::evalkit::oracle_hint(&data, &seq[0]);
        let ctx = build_context(&spec, &seq[0], &stats, hint, &MmnpConfig::default()).unwrap();
        let s0 = run_pipeline(&MockBackend::new(), &RuleEvaluator, &ctx, &MmnpConfig::default())
            .unwrap()
            .narrative
            .text();
        Fixture {
            model,
            ps,
            stats,
            spec,
            seq,
            s0,
        }
    }

    fn run(f: &Fixture, steps: usize, leak: Option<LeakStub<'_>>) -> RolloutTrace {
        let cfg = MmnpConfig::default();
        rollout(&f.model, &f.ps, &f.stats, &f.spec, &MockBackend::new(), &cfg, &f.seq[0], &f.s0, steps, leak).unwrap()
    }

    #[test]
    fn empty_rollout_holds_initial_state_only() {
        let f = fixture(Variant::Agcd);
        let t = run(&f, 0, None);
        assert!(t.predictions.is_empty());
        assert_eq!(t.narratives, vec![f.s0.clone()]);
        assert!(audit_causality(&t).passed);
    }

    #[test]
    fn eight_steps_are_causal_and_deterministic() {
        for variant in [Variant::Baseline, Variant::Agcd] {
            let f = fixture(variant);
            let t = run(&f, 8, None);
            assert_eq!(t.steps(), 8);
            assert_eq!(t.narratives.len(), 9);
            assert_eq!(t.predictions[7].time_index, 8);
            assert!(t.predictions.iter().all(|p| p.fields.iter().all(|x| x.all_finite())));
            assert!(audit_causality(&t).passed);
            assert_eq!(t, run(&f, 8, None));
        }
    }

    #[test]
    fn text_conditioned_steps_read_the_previous_narrative() {
        let f = fixture(Variant::Agcd);
        let t = run(&f, 2, None);
        let p2 = t.provenance.iter().find(|e| e.produced == InputId::Prediction(2)).unwrap();
        assert_eq!(p2.consumed, vec![InputId::Prediction(1), InputId::Narrative(1)]);
    }

    #[test]
    fn leaked_future_state_fails_the_audit() {
        let f = fixture(Variant::Agcd);
        let leak = LeakStub {
            step: 3,
            truth: &f.seq[1..],
        };
        let report = audit_causality(&run(&f, 8, Some(leak)));
        assert!(!report.passed);
        assert_eq!(report.violation, Some((3, InputId::Truth(3))));
        assert!(report.line().contains("step 3"));
    }

    #[test]
    fn future_narratives_are_flagged() {
        let f = fixture(Variant::Agcd);
        let mut t = run(&f, 3, None);
        t.provenance[3].consumed.push(InputId::Narrative(2));
        let r = audit_causality(&t);
        assert_eq!(r.violation, Some((2, InputId::Narrative(2))));
    }
}
