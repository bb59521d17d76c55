use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::clause::{unhedged_causal, ClauseKind, Narrative, VariableDescription};
use crate::error::Error;

/// Evaluator checks, in the order they are run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackType {
    Missing,
    Distorted,
    Contradictory,
    OverstatedCausality,
}

impl FeedbackType {
    pub const ALL: [FeedbackType; 4] = [
        FeedbackType::Missing,
        FeedbackType::Distorted,
        FeedbackType::Contradictory,
        FeedbackType::OverstatedCausality,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FeedbackType::Missing => "missing",
            FeedbackType::Distorted => "distorted",
            FeedbackType::Contradictory => "contradictory",
            FeedbackType::OverstatedCausality => "overstated-causality",
        }
    }
}

impl fmt::Display for FeedbackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FeedbackType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        FeedbackType::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| Error::Contract(format!("unknown feedback type {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub kind: FeedbackType,
    /// Variable index in the grid's variable order.
    pub index: usize,
    pub description: VariableDescription,
    pub narrative: Narrative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorVerdict {
    pub pass: bool,
    pub feedback: Option<Feedback>,
    /// Fraction of checks passed.
    pub score: f64,
}

impl EvaluatorVerdict {
    pub fn log_line(&self, round: usize) -> String {
        match &self.feedback {
            None => format!("round {round}: PASS score {:.2}", self.score),
            Some(f) => format!("round {round}: FAIL {} {} score {:.2}", f.kind, f.index, self.score),
        }
    }
}

pub trait Evaluator: Sync {
    fn evaluate(&self, descriptions: &[VariableDescription], s: &Narrative) -> EvaluatorVerdict;
}

/// Rule-based evaluator over structured clauses.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleEvaluator;

fn first_missing(ds: &[VariableDescription], s: &Narrative) -> Option<usize> {
    ds.iter().position(|d| {
        d.clauses.iter().filter(|c| c.kind == ClauseKind::Observation).any(|dc| {
            !s.clauses_for(&d.variable)
                .any(|c| c.kind == ClauseKind::Observation && c.polarity == dc.polarity)
        })
    })
}

fn first_distorted(ds: &[VariableDescription], s: &Narrative) -> Option<usize> {
    ds.iter().position(|d| {
        d.clauses.iter().filter(|c| c.kind == ClauseKind::Observation).any(|dc| {
            s.clauses_for(&d.variable)
                .filter(|c| c.kind == ClauseKind::Observation && c.polarity == dc.polarity)
                .any(|c| c.region != dc.region || c.value != dc.value)
        })
    })
}

fn first_contradiction(ds: &[VariableDescription], s: &Narrative) -> Option<usize> {
    let obs: Vec<_> = s.clauses.iter().filter(|c| c.kind == ClauseKind::Observation).collect();
    for (k, a) in obs.iter().enumerate() {
        for b in &obs[k + 1..] {
            if a.variable == b.variable && a.region == b.region && a.polarity != b.polarity {
                return ds.iter().position(|d| d.variable == a.variable);
            }
        }
    }
    None
}

fn first_overstated(ds: &[VariableDescription], s: &Narrative) -> Option<usize> {
    s.clauses
        .iter()
        .find(|c| unhedged_causal(&c.text).is_some())
        .and_then(|c| ds.iter().position(|d| d.variable == c.variable))
        .or_else(|| {
            let any = s.clauses.iter().any(|c| unhedged_causal(&c.text).is_some());
            (any && !ds.is_empty()).then_some(0)
        })
}

impl Evaluator for RuleEvaluator {
    fn evaluate(&self, ds: &[VariableDescription], s: &Narrative) -> EvaluatorVerdict {
        let checks = [
            (FeedbackType::Missing, first_missing(ds, s)),
            (FeedbackType::Distorted, first_distorted(ds, s)),
            (FeedbackType::Contradictory, first_contradiction(ds, s)),
            (FeedbackType::OverstatedCausality, first_overstated(ds, s)),
        ];
        let passed = checks.iter().filter(|(_, f)| f.is_none()).count();
        let score = passed as f64 / checks.len() as f64;
        let feedback = checks.iter().find_map(|(kind, f)| {
            f.map(|pos| Feedback {
                kind: *kind,
                index: ds[pos].index,
                description: ds[pos].clone(),
                narrative: s.clone(),
            })
        });
        EvaluatorVerdict {
            pass: feedback.is_none(),
            feedback,
            score,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::{FieldDigest, Region};
    use crate::mmnp::clause::Clause;

    fn desc(i: usize, var: &str, region: Region, v: f64) -> VariableDescription {
        let digest = FieldDigest {
            variable: var.into(),
            region,
            argmax: (0, 0),
            maximum: v,
            minimum: -v,
            gradient: 0.1,
        };
        VariableDescription::new(i, var, vec![Clause::from_digest(&digest)], &digest).unwrap()
    }

    fn descs() -> Vec<VariableDescription> {
        vec![
            desc(0, "z", Region::SouthWest, 2.3),
            desc(1, "t", Region::North, 1.1),
            desc(2, "u", Region::East, 0.6),
        ]
    }

    fn narrative(lines: &[&str]) -> Narrative {
        Narrative {
            clauses: lines.iter().map(|l| Clause::parse(l).unwrap()).collect(),
            ..Narrative::empty()
        }
    }

    fn full() -> Vec<&'static str> {
        vec![
            "z: strong maximum +2.3 near south-west",
            "t: moderate maximum +1.1 near north",
            "u: weak maximum +0.6 near east",
        ]
    }

    #[test]
    fn clean_narrative_passes() {
        let v = RuleEvaluator.evaluate(&descs(), &narrative(&full()));
        assert!(v.pass);
        assert_eq!(v.score, 1.0);
    }

    #[test]
    fn missing_variable_reported() {
        let mut lines = full();
        lines.remove(2);
        let v = RuleEvaluator.evaluate(&descs(), &narrative(&lines));
        let f = v.feedback.unwrap();
        assert_eq!((f.kind, f.index), (FeedbackType::Missing, 2));
        assert_eq!(f.description.variable, "u");
        assert_eq!(v.score, 0.75);
    }

    #[test]
    fn wrong_region_is_distortion() {
        let mut lines = full();
        lines[0] = "z: strong maximum +2.3 near north-east";
        let f = RuleEvaluator.evaluate(&descs(), &narrative(&lines)).feedback.unwrap();
        assert_eq!((f.kind, f.index), (FeedbackType::Distorted, 0));
    }

    #[test]
    fn opposite_polarity_same_region_contradicts() {
        let mut lines = full();
        lines.insert(2, "t: moderate minimum -1.1 near north");
        let f = RuleEvaluator.evaluate(&descs(), &narrative(&lines)).feedback.unwrap();
        assert_eq!((f.kind, f.index), (FeedbackType::Contradictory, 1));
    }

    #[test]
    fn causal_overstatement() {
        let mut lines = full();
        lines.insert(1, "z: the ridge causes warming");
        let f = RuleEvaluator.evaluate(&descs(), &narrative(&lines)).feedback.unwrap();
        assert_eq!((f.kind, f.index), (FeedbackType::OverstatedCausality, 0));
        let mut lines = full();
        lines.insert(1, "z: the ridge may cause warming");
        assert!(RuleEvaluator.evaluate(&descs(), &narrative(&lines)).pass);
    }

    #[test]
    fn first_failing_check_wins() {
        let lines = vec!["z: strong maximum +2.3 near north", "z: the ridge causes warming"];
        let v = RuleEvaluator.evaluate(&descs(), &narrative(&lines));
        assert_eq!(v.feedback.unwrap().kind, FeedbackType::Missing);
        assert_eq!(v.score, 0.25);
    }

    #[test]
    fn labels_round_trip() {
        for t in FeedbackType::ALL {
            assert_eq!(t.label().parse::<FeedbackType>().unwrap(), t);
        }
        assert!("vague".parse::<FeedbackType>().is_err());
    }
}
