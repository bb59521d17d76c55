//! Clause grammar shared by agents, evaluator and refinement.
//!
//! Every clause is one line `<var>: <body>`. Observation bodies follow
//! `<trend> <maximum|minimum> <±v.v> near <region>`; anything else is a
//! hypothesis when it carries a hedge word and a remark otherwise.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::heatmap::{FieldDigest, Region};

pub const HEDGES: [&str; 4] = ["may", "could", "possibly", "appears"];
pub const BANNED_CAUSAL: [&str; 3] = ["causes", "forces", "will produce"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClauseKind {
    Observation,
    Hypothesis,
    /// Unhedged free text, typically an overstated claim awaiting refinement.
    Remark,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Maximum,
    Minimum,
}

impl Polarity {
    pub fn word(self) -> &'static str {
        match self {
            Polarity::Maximum => "maximum",
            Polarity::Minimum => "minimum",
        }
    }

    pub fn flip(self) -> Polarity {
        match self {
            Polarity::Maximum => Polarity::Minimum,
            Polarity::Minimum => Polarity::Maximum,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub variable: String,
    pub kind: ClauseKind,
    pub region: Option<Region>,
    pub polarity: Option<Polarity>,
    /// Quantized to one decimal.
    pub value: Option<f64>,
    pub text: String,
}

pub fn trend_word(value: f64) -> &'static str {
    match value.abs() {
        a if a >= 2.0 => "strong",
        a if a >= 1.0 => "moderate",
        _ => "weak",
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn has_hedge(text: &str) -> bool {
    words(text).iter().any(|w| HEDGES.contains(&w.as_str()))
}

/// Word offset of the first banned causal phrase that has no hedge word
/// anywhere before it in the clause.
pub fn unhedged_causal(text: &str) -> Option<&'static str> {
    let ws = words(text);
    for (k, w) in ws.iter().enumerate() {
        let hit = match w.as_str() {
            "causes" => Some("causes"),
            "forces" => Some("forces"),
            "will" if ws.get(k + 1).map(String::as_str) == Some("produce") => Some("will produce"),
            _ => None,
        };
        if let Some(term) = hit {
            if !ws[..k].iter().any(|p| HEDGES.contains(&p.as_str())) {
                return Some(term);
            }
        }
    }
    None
}

impl Clause {
    pub fn observation(variable: &str, polarity: Polarity, value: f64, region: Region) -> Clause {
        let text = format!(
            "{variable}: {} {} {:+.1} near {region}",
            trend_word(value),
            polarity.word(),
            value
        );
        Clause {
            variable: variable.to_string(),
            kind: ClauseKind::Observation,
            region: Some(region),
            polarity: Some(polarity),
            value: Some(value),
            text,
        }
    }

    /// The describer template applied to a digest.
    pub fn from_digest(d: &FieldDigest) -> Clause {
        Clause::observation(&d.variable, Polarity::Maximum, d.maximum, d.region)
    }

    /// Rotation hypothesis attached to `variable`; `sign` +1 is counterclockwise.
    pub fn rotation_hypothesis(variable: &str, region: Region, sign: i8) -> Clause {
        let sense = if sign >= 0 { "counterclockwise" } else { "clockwise" };
        Clause::parse(&format!(
            "{variable}: circulation near {region} may turn the z maximum {sense}"
        ))
        .expect("hypothesis template parses")
    }

    pub fn parse(line: &str) -> Result<Clause> {
        let (var, body) = line
            .split_once(": ")
            .ok_or_else(|| Error::Format(format!("clause without variable prefix: {line:?}")))?;
        if var.is_empty() || var.contains(char::is_whitespace) || body.trim().is_empty() || line.contains('\n') {
            return Err(Error::Format(format!("malformed clause {line:?}")));
        }
        let toks: Vec<&str> = body.split(' ').collect();
        if let [trend, extreme, value, "near", region] = toks[..] {
            let polarity = match extreme {
                "maximum" => Some(Polarity::Maximum),
                "minimum" => Some(Polarity::Minimum),
                _ => None,
            };
            let value: Option<f64> = value.parse().ok();
            let region: Option<Region> = region.parse().ok();
            if let (Some(p), Some(v), Some(r)) = (polarity, value, region) {
                if ["weak", "moderate", "strong"].contains(&trend) {
                    return Ok(Clause {
                        variable: var.to_string(),
                        kind: ClauseKind::Observation,
                        region: Some(r),
                        polarity: Some(p),
                        value: Some(v),
                        text: line.to_string(),
                    });
                }
            }
        }
        let region = toks
            .windows(2)
            .find(|w| w[0] == "near")
            .and_then(|w| w[1].parse::<Region>().ok());
        Ok(Clause {
            variable: var.to_string(),
            kind: if has_hedge(body) { ClauseKind::Hypothesis } else { ClauseKind::Remark },
            region,
            polarity: None,
            value: None,
            text: line.to_string(),
        })
    }

    /// Rotation sense named by a hypothesis clause, if any.
    pub fn rotation_sense(&self) -> Option<i8> {
        if self.kind != ClauseKind::Hypothesis {
            return None;
        }
        let ws = words(&self.text);
        if ws.iter().any(|w| w == "counterclockwise") {
            Some(1)
        } else if ws.iter().any(|w| w == "clockwise") {
            Some(-1)
        } else {
            None
        }
    }
}

/// Output of one describer: the clauses for variable `index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableDescription {
    pub index: usize,
    pub variable: String,
    pub clauses: Vec<Clause>,
    pub digest_hash: String,
}

impl VariableDescription {
    pub fn new(index: usize, variable: &str, clauses: Vec<Clause>, digest: &FieldDigest) -> Result<Self> {
        if clauses.is_empty() {
            return Err(Error::Contract(format!("description of {variable} has no clauses")));
        }
        if let Some(c) = clauses.iter().find(|c| c.variable != variable) {
            return Err(Error::Contract(format!(
                "description of {variable} contains a clause for {}",
                c.variable
            )));
        }
        Ok(Self {
            index,
            variable: variable.to_string(),
            clauses,
            digest_hash: hex::encode(Sha256::digest(digest.summary().as_bytes())),
        })
    }

    pub fn text(&self) -> String {
        join_lines(&self.clauses)
    }
}

pub(crate) fn join_lines(clauses: &[Clause]) -> String {
    clauses.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n")
}

/// A running or final narrative.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub clauses: Vec<Clause>,
    pub version: u32,
    /// Digest hashes of the descriptions integrated so far.
    pub provenance: Vec<String>,
    /// Variable indices integrated so far, ascending.
    pub integrated: Vec<usize>,
}

impl Narrative {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn text(&self) -> String {
        join_lines(&self.clauses)
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    /// Parses newline-separated clauses, orders them by variable (stable) and
    /// drops repeated lines. Unknown variables are rejected.
    pub fn parse_clauses(text: &str, variables: &[String]) -> Result<Vec<Clause>> {
        let mut clauses = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let c = Clause::parse(line)?;
            if !variables.contains(&c.variable) {
                return Err(Error::Format(format!("clause for unknown variable {:?}", c.variable)));
            }
            clauses.push(c);
        }
        Ok(normalise_clauses(clauses, variables))
    }

    pub fn clauses_for<'a>(&'a self, variable: &'a str) -> impl Iterator<Item = &'a Clause> + 'a {
        self.clauses.iter().filter(move |c| c.variable == variable)
    }

    pub fn rotation_sense(&self) -> Option<i8> {
        self.clauses.iter().find_map(Clause::rotation_sense)
    }
}

/// Canonical order: by variable, then observations, other clauses, and the
/// rotation hypothesis last.
pub(crate) fn normalise_clauses(mut clauses: Vec<Clause>, variables: &[String]) -> Vec<Clause> {
    let rank = |c: &Clause| {
        let var = variables.iter().position(|v| *v == c.variable).unwrap_or(usize::MAX);
        let kind = match c.kind {
            ClauseKind::Observation => 0,
            _ if c.rotation_sense().is_some() => 2,
            _ => 1,
        };
        (var, kind)
    };
    clauses.sort_by_key(rank);
    let mut seen = std::collections::HashSet::new();
    clauses.retain(|c| seen.insert(c.text.clone()));
    clauses
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_template() {
        let c = Clause::observation("z", Polarity::Maximum, 2.3, Region::SouthWest);
        assert_eq!(c.text, "z: strong maximum +2.3 near south-west");
        assert_eq!(Clause::parse(&c.text).unwrap(), c);
        let weak = Clause::observation("t", Polarity::Minimum, -0.4, Region::Center);
        assert_eq!(weak.text, "t: weak minimum -0.4 near center");
        assert_eq!(Clause::parse(&weak.text).unwrap().polarity, Some(Polarity::Minimum));
    }

    #[test]
    fn hypothesis_and_remark_kinds() {
        let h = Clause::rotation_hypothesis("v", Region::East, -1);
        assert_eq!(h.kind, ClauseKind::Hypothesis);
        assert_eq!(h.region, Some(Region::East));
        assert_eq!(h.rotation_sense(), Some(-1));
        assert_eq!(Clause::rotation_hypothesis("v", Region::East, 1).rotation_sense(), Some(1));
        let r = Clause::parse("z: the ridge causes warming").unwrap();
        assert_eq!(r.kind, ClauseKind::Remark);
        assert!(Clause::parse("no prefix here").is_err());
    }

    #[test]
    fn causal_language_detection() {
        assert_eq!(unhedged_causal("z: the ridge causes warming"), Some("causes"));
        assert_eq!(unhedged_causal("u: jet will produce shear"), Some("will produce"));
        assert_eq!(unhedged_causal("u: jet may produce shear"), None);
        assert_eq!(unhedged_causal("z: the ridge possibly causes warming"), None);
        assert_eq!(unhedged_causal("z: it forces ascent"), Some("forces"));
        assert_eq!(unhedged_causal("z: strong maximum +2.0 near north"), None);
    }

    #[test]
    fn parsing_orders_and_dedups() {
        let vars: Vec<String> = ["z", "t"].iter().map(|s| s.to_string()).collect();
        let text = "t: weak maximum +0.1 near north\nz: weak maximum +0.2 near east\nt: weak maximum +0.1 near north";
        let cs = Narrative::parse_clauses(text, &vars).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].variable, "z");
        assert!(Narrative::parse_clauses("q: weak maximum +0.1 near north", &vars).is_err());
    }
}
