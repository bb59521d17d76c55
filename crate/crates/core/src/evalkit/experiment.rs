//! Seeded experiment harness: narration, training and scoring shared by the
//! control and ablation suites.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{build_examples, narrate_dataset, pair_narratives, prepare, state_pairs, DataConfig, NarrationSummary, Prepared};
use super::metrics::{acc, lat_rmse, MetricRow};
use super::model::{Forecaster, ModelConfig, TextMode, Variant};
use super::rollout::{audit_causality, rollout, AuditReport, LeakStub, RolloutTrace};
use super::train::{assign_texts, train, vocabulary, TrainConfig, TrainOutcome};
use crate::crid::CridAblation;
use crate::error::{Error, Result};
use crate::fieldgrid::{latitude_weights, AtmosphericState, ClimatologyTable, GridSpec, NormStats, Sequence};
use crate::mmnp::{MmnpConfig, MockBackend, NarrationCache, NarratorBackend, PipelineMode, RuleEvaluator};
use crate::numcore::ParamStore;

pub const STEP_HOURS: u32 = 6;
pub const SUITE_HEADER: &str = "setting,lead_hours,variable,rmse,acc";
pub const SEED_HEADER: &str = "setting,seed,lead_hours,variable,rmse,acc";

/// Describer order of the incremental agents suite.
pub const AGENT_ORDER: [&str; 4] = ["t", "u", "v", "z"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub text_mode: TextMode,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mmnp: MmnpConfig,
    /// Mock-integrator defect rate during narration.
    pub defect_rate: f64,
    pub rollout_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Agcd,
            text_mode: TextMode::Matched,
            seeds: vec![1, 2, 3, 4, 5],
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mmnp: MmnpConfig::default(),
            defect_rate: 0.3,
            rollout_steps: 8,
        }
    }
}

/// Narratives for every training pair and for every test sequence's first
/// state.
#[derive(Clone, Debug)]
pub struct Narrations {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub summary: NarrationSummary,
}

pub struct Lab {
    pub config: ExperimentConfig,
    pub data: Prepared,
    work_dir: PathBuf,
}

/// Everything needed to score forecasts against truth.
#[derive(Clone, Copy, Debug)]
pub struct EvalContext<'a> {
    pub spec: &'a GridSpec,
    /// Training-split statistics.
    pub stats: &'a NormStats,
    /// Training-split climatology.
    pub clim: &'a ClimatologyTable,
}

impl Prepared {
    pub fn eval_context(&self) -> EvalContext<'_> {
        EvalContext {
            spec: &self.spec,
            stats: &self.stats,
            clim: &self.clim,
        }
    }
}

/// Mean score per variable over samples.
pub fn score_states(
    ctx: EvalContext<'_>,
    preds: &[AtmosphericState],
    truths: &[&AtmosphericState],
    lead_hours: u32,
) -> Result<Vec<MetricRow>> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::Data(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let w = latitude_weights(ctx.spec);
    let n = preds.len() as f64;
    ctx.spec
        .variables
        .iter()
        .enumerate()
        .map(|(v, name)| {
            let (mut r, mut a) = (0.0, 0.0);
            for (p, t) in preds.iter().zip(truths) {
                r += lat_rmse(&p.fields[v], &t.fields[v], &w)?;
                a += acc(&p.fields[v], &t.fields[v], &ctx.clim.fields[v], &w)?;
            }
            Ok(MetricRow {
                lead_hours,
                variable: name.clone(),
                rmse: r / n,
                acc: a / n,
            })
        })
        .collect()
}

/// One-step scores on the first transition of every sequence. `texts` holds
/// one narrative per sequence and is required by text-guided models.
pub fn evaluate_one_step(
    ctx: EvalContext<'_>,
    model: &Forecaster,
    ps: &ParamStore,
    seqs: &[Sequence],
    texts: Option<&[String]>,
) -> Result<Vec<MetricRow>> {
    if seqs.iter().any(|s| s.states.len() < 2) {
        return Err(Error::Data("every sequence needs at least two states".into()));
    }
    let preds = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let text = match (model.uses_text(), texts) {
                (false, _) => None,
                (true, Some(t)) => Some(model.embed(&t[i])),
                (true, None) => return Err(Error::Data("text-guided model evaluated without texts".into())),
            };
            model.step(ps, &s.states[0], ctx.stats, text.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<&AtmosphericState> = seqs.iter().map(|s| &s.states[1]).collect();
    score_states(ctx, &preds, &truths, STEP_HOURS)
}

#[derive(Clone, Debug)]
pub struct RolloutRun {
    pub traces: Vec<RolloutTrace>,
    /// Scores per lead step, `6·k` hours for `k = 1..=steps`.
    pub rows: Vec<MetricRow>,
    pub audits: Vec<AuditReport>,
}

/// Causal rollouts from the first state of every sequence, starting from the
/// narratives `s0`. `leak_step` injects the truth-reading stub.
#[allow(clippy::too_many_arguments)]
pub fn rollout_dataset(
    ctx: EvalContext<'_>,
    model: &Forecaster,
    ps: &ParamStore,
    editor: &dyn NarratorBackend,
    mmnp: &MmnpConfig,
    seqs: &[Sequence],
    s0: &[String],
    steps: usize,
    leak_step: Option<usize>,
) -> Result<RolloutRun> {
    if seqs.iter().any(|s| s.states.len() <= steps) {
        return Err(Error::Config(format!("sequences are shorter than {steps} rollout steps")));
    }
    if s0.len() != seqs.len() {
        return Err(Error::Data(format!("{} initial narratives for {} sequences", s0.len(), seqs.len())));
    }
    let mut traces = Vec::with_capacity(seqs.len());
    for (s, text) in seqs.iter().zip(s0) {
        let leak = leak_step.map(|step| LeakStub {
            step,
            truth: &s.states[1..],
        });
        traces.push(rollout(model, ps, ctx.stats, ctx.spec, editor, mmnp, &s.states[0], text, steps, leak)?);
    }
    let mut rows = Vec::new();
    for k in 0..steps {
        let preds: Vec<AtmosphericState> = traces.iter().map(|t| t.predictions[k].clone()).collect();
        let truths: Vec<&AtmosphericState> = seqs.iter().map(|s| &s.states[k + 1]).collect();
        if !preds.is_empty() {
            rows.extend(score_states(ctx, &preds, &truths, STEP_HOURS * (k as u32 + 1))?);
        }
    }
    let audits = traces.iter().map(audit_causality).collect();
    Ok(RolloutRun { traces, rows, audits })
}

/// Mean over variables of RMSE divided by the variable's training std, at
/// one lead time.
pub fn normalized_rmse(rows: &[MetricRow], stats: &NormStats, lead_hours: u32) -> f64 {
    let picked: Vec<f64> = rows
        .iter()
        .filter(|r| r.lead_hours == lead_hours)
        .filter_map(|r| {
            let i = stats.variables.iter().position(|v| *v == r.variable)?;
            Some(r.rmse / stats.std[i])
        })
        .collect();
    picked.iter().sum::<f64>() / picked.len().max(1) as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

impl Lab {
    pub fn new(config: ExperimentConfig, work_dir: impl AsRef<Path>) -> Result<Self> {
        if config.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let work_dir = work_dir.as_ref().to_path_buf();
        fs::create_dir_all(&work_dir)?;
        Ok(Self {
            data: prepare(&config.data)?,
            config,
            work_dir,
        })
    }

    /// Narrates both splits under `mmnp` into `narration-<label>.jsonl`.
    pub fn narrate(&self, mmnp: &MmnpConfig, label: &str) -> Result<Narrations> {
        let mut cache = NarrationCache::open(self.work_dir.join(format!("narration-{label}.jsonl")))?;
        let backend = MockBackend::with_defects(self.config.defect_rate, 0);
        let mut summary =
            narrate_dataset(&backend, &RuleEvaluator, &self.data.train, &self.data.stats, mmnp, self.config.data.train_horizon as i64, &mut cache)?;
        let test = narrate_dataset(&backend, &RuleEvaluator, &self.data.test, &self.data.stats, mmnp, 1, &mut cache)?;
        summary.narrated += test.narrated;
        summary.cached += test.cached;
        summary.passed += test.passed;
        summary.failed += test.failed;
        summary.fallback += test.fallback;
        summary.rounds += test.rounds;
        let train = pair_narratives(&cache, &state_pairs(&self.data.train))?;
        let test = self
            .data
            .test
            .dataset
            .sequences
            .iter()
            .map(|s| cache.get(&s.sample_id, 0).map(|r| r.narrative.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Narrations { train, test, summary })
    }

    pub fn model(&self, variant: Variant, config: &ModelConfig) -> Result<Forecaster> {
        Forecaster::new(variant, config.clone(), &self.data.spec)
    }

    pub fn train(&self, model: &Forecaster, narr: Option<&Narrations>, seed: u64) -> Result<TrainOutcome> {
        let pairs = state_pairs(&self.data.train);
        let cfg = TrainConfig {
            seed,
            ..self.config.train.clone()
        };
        let texts = narr.map(|n| n.train.as_slice());
        let examples = build_examples(model, &self.data.stats, &pairs, texts, cfg.text_mode, cfg.shuffle_seed)?;
        let vocab = match narr {
            Some(n) if model.uses_text() => vocabulary(model, &n.train),
            _ => Vec::new(),
        };
        train(model, &examples, &cfg, &vocab)
    }

    /// Test-set narratives as fed under `mode`.
    pub fn test_texts(&self, narr: &Narrations, mode: TextMode) -> Vec<String> {
        assign_texts(mode, &narr.test, self.config.train.shuffle_seed)
    }

    /// One-step scores on the first transition of every test sequence.
    pub fn evaluate(&self, model: &Forecaster, ps: &ParamStore, texts: Option<&[String]>) -> Result<Vec<MetricRow>> {
        evaluate_one_step(self.data.eval_context(), model, ps, &self.data.test.dataset.sequences, texts)
    }

    /// Honest causal rollouts from every test sequence's first state.
    pub fn rollout(&self, model: &Forecaster, ps: &ParamStore, s0: &[String]) -> Result<RolloutRun> {
        rollout_dataset(
            self.data.eval_context(),
            model,
            ps,
            &MockBackend::new(),
            &self.config.mmnp,
            &self.data.test.dataset.sequences,
            s0,
            self.config.rollout_steps,
            None,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteRow {
    pub setting: String,
    pub seed: u64,
    pub row: MetricRow,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteResult {
    pub rows: Vec<SuiteRow>,
    pub notes: Vec<String>,
}

impl SuiteResult {
    fn push(&mut self, setting: &str, seed: u64, rows: Vec<MetricRow>) {
        self.rows.extend(rows.into_iter().map(|row| SuiteRow {
            setting: setting.to_string(),
            seed,
            row,
        }));
    }

    /// Settings in first-seen order.
    pub fn settings(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.setting) {
                out.push(r.setting.clone());
            }
        }
        out
    }

    /// Per-seed values of `f` for one setting, lead and variable.
    pub fn values(&self, setting: &str, lead_hours: u32, variable: &str, f: impl Fn(&MetricRow) -> f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.setting == setting && r.row.lead_hours == lead_hours && r.row.variable == variable)
            .map(|r| f(&r.row))
            .collect()
    }

    /// Median over seeds of every (setting, lead, variable).
    pub fn medians(&self) -> Vec<(String, MetricRow)> {
        let mut keys: Vec<(String, u32, String)> = Vec::new();
        for r in &self.rows {
            let k = (r.setting.clone(), r.row.lead_hours, r.row.variable.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(s, lead, v)| {
                let row = MetricRow {
                    lead_hours: lead,
                    rmse: median(&self.values(&s, lead, &v, |r| r.rmse)),
                    acc: median(&self.values(&s, lead, &v, |r| r.acc)),
                    variable: v,
                };
                (s, row)
            })
            .collect()
    }

    pub fn median_rmse(&self, setting: &str, lead_hours: u32, variable: &str) -> f64 {
        median(&self.values(setting, lead_hours, variable, |r| r.rmse))
    }

    pub fn csv(&self) -> String {
        let mut s = format!("{SUITE_HEADER}\n");
        for (setting, r) in self.medians() {
            writeln!(s, "{setting},{},{},{},{}", r.lead_hours, r.variable, r.rmse, r.acc).expect("string write");
        }
        s
    }

    pub fn per_seed_csv(&self) -> String {
        let mut s = format!("{SEED_HEADER}\n");
        for r in &self.rows {
            let m = &r.row;
            writeln!(s, "{},{},{},{},{},{}", r.setting, r.seed, m.lead_hours, m.variable, m.rmse, m.acc).expect("string write");
        }
        s
    }

    pub fn write(&self, dir: impl AsRef<Path>, name: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{name}.csv")), self.csv())?;
        fs::write(dir.join(format!("{name}_per_seed.csv")), self.per_seed_csv())?;
        Ok(())
    }
}

pub const VISION_ONLY: &str = "vision-only";

/// Vision-only baseline and the text-guided model trained on matched
/// narratives, then evaluated with matched, shuffled and empty text.
pub fn run_control(lab: &Lab) -> Result<SuiteResult> {
    let narr = lab.narrate(&lab.config.mmnp, "full")?;
    let mut out = SuiteResult::default();
    out.notes.push(format!("narration: {}", narr.summary.line()));
    for &seed in &lab.config.seeds {
        let base = lab.model(Variant::Baseline, &lab.config.model)?;
        let trained = lab.train(&base, None, seed)?;
        out.push(VISION_ONLY, seed, lab.evaluate(&base, &trained.params, None)?);
        let agcd = lab.model(Variant::Agcd, &lab.config.model)?;
        let trained = lab.train(&agcd, Some(&narr), seed)?;
        for mode in TextMode::ALL {
            let texts = lab.test_texts(&narr, mode);
            out.push(mode.label(), seed, lab.evaluate(&agcd, &trained.params, Some(&texts))?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Crid,
    Mmnp,
    Agents,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crid" => Ok(Suite::Crid),
            "mmnp" => Ok(Suite::Mmnp),
            "agents" => Ok(Suite::Agents),
            other => Err(Error::Config(format!("unknown ablation suite {other:?} (crid|mmnp|agents)"))),
        }
    }
}

/// Narration settings of the narration-side suites, in row order.
pub fn narration_settings(suite: Suite, base: &MmnpConfig) -> Vec<(String, MmnpConfig)> {
    match suite {
        Suite::Crid => Vec::new(),
        Suite::Mmnp => [
            ("single-agent", PipelineMode::SingleAgent),
            ("no-evaluator", PipelineMode::NoEvaluator),
            ("full", PipelineMode::Full),
        ]
        .into_iter()
        .map(|(label, mode)| (label.to_string(), MmnpConfig { mode, ..base.clone() }))
        .collect(),
        Suite::Agents => (0..=AGENT_ORDER.len())
            .map(|n| {
                let label = if n == 0 { "none".to_string() } else { format!("+{}", AGENT_ORDER[..n].join("+")) };
                let enabled = AGENT_ORDER[..n].iter().map(|s| s.to_string()).collect();
                (
                    label,
                    MmnpConfig {
                        enabled: Some(enabled),
                        mode: PipelineMode::Full,
                        ..base.clone()
                    },
                )
            })
            .collect(),
    }
}

pub fn run_ablation(lab: &Lab, suite: Suite) -> Result<SuiteResult> {
    let mut out = SuiteResult::default();
    match suite {
        Suite::Crid => {
            let narr = lab.narrate(&lab.config.mmnp, "full")?;
            for ablation in CridAblation::ALL {
                let cfg = ModelConfig {
                    crid: ablation.apply(&lab.config.model.crid),
                    ..lab.config.model.clone()
                };
                let model = lab.model(Variant::Agcd, &cfg)?;
                if ablation == CridAblation::NoHopfield {
                    let crid = model.crid.as_ref().expect("text-guided model");
                    let l = crid.context_len(lab.config.model.crid.max_tokens)?;
                    let m = lab.config.model.crid.memory_tokens;
                    out.notes.push(format!(
                        "no-hopfield attends over L = {l} tokens instead of M = {m}; cost ratio L/M = {l}/{m} = {:.3}",
                        l as f64 / m as f64
                    ));
                }
                for &seed in &lab.config.seeds {
                    let trained = lab.train(&model, Some(&narr), seed)?;
                    let texts = lab.test_texts(&narr, TextMode::Matched);
                    out.push(ablation.label(), seed, lab.evaluate(&model, &trained.params, Some(&texts))?);
                }
            }
        }
        Suite::Mmnp | Suite::Agents => {
            let model = lab.model(Variant::Agcd, &lab.config.model)?;
            for (label, mmnp) in narration_settings(suite, &lab.config.mmnp) {
                let narr = lab.narrate(&mmnp, &label)?;
                out.notes.push(format!("{label}: {}", narr.summary.line()));
                for &seed in &lab.config.seeds {
                    let trained = lab.train(&model, Some(&narr), seed)?;
                    let texts = lab.test_texts(&narr, TextMode::Matched);
                    out.push(&label, seed, lab.evaluate(&model, &trained.params, Some(&texts))?);
                }
            }
        }
    }
    Ok(out)
}

/// Baseline and text-guided causal rollouts per seed, plus every audit.
pub fn run_rollout_comparison(lab: &Lab) -> Result<(SuiteResult, Vec<AuditReport>)> {
    let narr = lab.narrate(&lab.config.mmnp, "full")?;
    let mut out = SuiteResult::default();
    let mut audits = Vec::new();
    let empty = vec![String::new(); narr.test.len()];
    for &seed in &lab.config.seeds {
        for variant in [Variant::Baseline, Variant::Agcd] {
            let model = lab.model(variant, &lab.config.model)?;
            let trained = lab.train(&model, model.uses_text().then_some(&narr), seed)?;
            let s0 = if model.uses_text() { &narr.test } else { &empty };
            let run = lab.rollout(&model, &trained.params, s0)?;
            audits.extend(run.audits);
            out.push(variant.label(), seed, run.rows);
        }
    }
    Ok((out, audits))
}

/// Aggregate normalized RMSE per (setting, lead) for the seed medians.
pub fn normalized_by_lead(result: &SuiteResult, stats: &NormStats) -> BTreeMap<(String, u32), f64> {
    let mut per_seed: BTreeMap<(String, u32, u64), Vec<MetricRow>> = BTreeMap::new();
    for r in &result.rows {
        per_seed
            .entry((r.setting.clone(), r.row.lead_hours, r.seed))
            .or_default()
            .push(r.row.clone());
    }
    let mut grouped: BTreeMap<(String, u32), Vec<f64>> = BTreeMap::new();
    for ((s, lead, _), rows) in per_seed {
        grouped.entry((s, lead)).or_default().push(normalized_rmse(&rows, stats, lead));
    }
    grouped.into_iter().map(|(k, v)| (k, median(&v))).collect()
}
