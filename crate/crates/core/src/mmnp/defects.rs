//! Single-defect injection and the matching refinement rules.

use serde::{Deserialize, Serialize};

use super::clause::{normalise_clauses, unhedged_causal, Clause, ClauseKind, Narrative, Polarity};
use super::evaluator::{Feedback, FeedbackType};
use crate::error::{Error, Result};
use crate::heatmap::{quantize, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    pub kind: FeedbackType,
    /// Variable index.
    pub index: usize,
}

fn observation_pos(s: &Narrative, var: &str) -> Result<usize> {
    s.clauses
        .iter()
        .position(|c| c.variable == var && c.kind == ClauseKind::Observation)
        .ok_or_else(|| Error::Contract(format!("narrative has no observation for {var}")))
}

fn effect_phrase(var: &str) -> &'static str {
    match var {
        "z" => "downstream ridging",
        "t" => "warming",
        "u" | "v" => "stronger winds",
        _ => "a response",
    }
}

/// Corrupts `s` with exactly one defect of the given type at variable `index`.
pub fn inject_defect(s: &Narrative, variables: &[String], defect: Defect) -> Result<Narrative> {
    let var = variables
        .get(defect.index)
        .ok_or_else(|| Error::Contract(format!("no variable with index {}", defect.index)))?
        .as_str();
    let pos = observation_pos(s, var)?;
    let obs = s.clauses[pos].clone();
    let (region, value, polarity) = (
        obs.region.expect("observation has a region"),
        obs.value.expect("observation has a value"),
        obs.polarity.expect("observation has a polarity"),
    );
    let mut clauses = s.clauses.clone();
    match defect.kind {
        FeedbackType::Missing => {
            clauses.retain(|c| !(c.variable == var && c.kind == ClauseKind::Observation));
        }
        FeedbackType::Distorted => {
            clauses[pos] = if region == Region::Center {
                Clause::observation(var, polarity, quantize(value + 1.0), region)
            } else {
                Clause::observation(var, polarity, value, region.opposite())
            };
        }
        FeedbackType::Contradictory => {
            clauses.insert(pos + 1, Clause::observation(var, polarity.flip(), quantize(-value), region));
        }
        FeedbackType::OverstatedCausality => {
            let text = format!("{var}: the {} near {region} causes {}", polarity.word(), effect_phrase(var));
            clauses.insert(pos + 1, Clause::parse(&text)?);
        }
    }
    Ok(Narrative {
        clauses: normalise_clauses(clauses, variables),
        ..s.clone()
    })
}

fn hedge_causal(text: &str) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut words = text.split(' ').peekable();
    while let Some(w) = words.next() {
        match w {
            "causes" => out.push("may cause".into()),
            "forces" => out.push("may force".into()),
            "will" if words.peek() == Some(&"produce") => {
                words.next();
                out.push("may produce".into());
            }
            _ => out.push(w.into()),
        }
    }
    out.join(" ")
}

/// Applies the refinement rule for `feedback.kind`; clauses the rule does not
/// target are carried over unchanged.
pub fn apply_refinement(s: &Narrative, feedback: &Feedback, variables: &[String]) -> Narrative {
    let d = &feedback.description;
    let var = d.variable.as_str();
    let mut clauses = s.clauses.clone();
    match feedback.kind {
        FeedbackType::Missing => {
            for c in &d.clauses {
                if !clauses.iter().any(|x| x.text == c.text) {
                    clauses.push(c.clone());
                }
            }
        }
        FeedbackType::Distorted => {
            for dc in d.clauses.iter().filter(|c| c.kind == ClauseKind::Observation) {
                for c in clauses.iter_mut() {
                    let same = c.variable == var && c.kind == ClauseKind::Observation && c.polarity == dc.polarity;
                    if same && (c.region != dc.region || c.value != dc.value) {
                        *c = dc.clone();
                    }
                }
            }
        }
        FeedbackType::Contradictory => {
            let supported: Vec<(Option<Region>, Option<Polarity>)> =
                d.clauses.iter().map(|c| (c.region, c.polarity)).collect();
            let conflicting: Vec<Option<Region>> = clauses
                .iter()
                .filter(|c| c.variable == var && c.kind == ClauseKind::Observation)
                .map(|c| c.region)
                .collect();
            clauses.retain(|c| {
                if c.variable != var || c.kind != ClauseKind::Observation {
                    return true;
                }
                let contested = conflicting.iter().filter(|r| **r == c.region).count() > 1;
                !contested || supported.contains(&(c.region, c.polarity))
            });
        }
        FeedbackType::OverstatedCausality => {
            for c in clauses.iter_mut() {
                if unhedged_causal(&c.text).is_some() {
                    *c = Clause::parse(&hedge_causal(&c.text)).expect("hedging keeps the clause well formed");
                }
            }
        }
    }
    Narrative {
        clauses: normalise_clauses(clauses, variables),
        version: s.version + 1,
        ..s.clone()
    }
}
