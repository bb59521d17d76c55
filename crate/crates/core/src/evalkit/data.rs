//! Train/test synthetic splits, offline narration into the cache, and
//! assembly of supervised pairs.

use serde::{Deserialize, Serialize};

use super::model::{Forecaster, TextMode};
use super::train::{assign_texts, Example};
use crate::error::{Error, Result};
use crate::fieldgrid::{compute_climatology, gen_synthetic, AtmosphericState, ClimatologyTable, GridSpec, NormStats, SyntheticData};
use crate::mmnp::{build_context, run_pipeline, Evaluator, MmnpConfig, NarrationCache, NarratorBackend, OracleHint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_seed: u64,
    pub test_seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Steps per training sequence; every state but the last is an input.
    pub train_horizon: usize,
    pub test_horizon: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_seed: 101,
            test_seed: 202,
            train_samples: 2048,
            test_samples: 256,
            train_horizon: 1,
            test_horizon: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub spec: GridSpec,
    pub train: SyntheticData,
    pub test: SyntheticData,
    /// Fitted on the training split.
    pub stats: NormStats,
    /// Training-split climatology, physical units.
    pub clim: ClimatologyTable,
}

pub fn prepare(cfg: &DataConfig) -> Result<Prepared> {
    let spec = GridSpec::desk_default();
    if cfg.train_samples == 0 || cfg.test_samples == 0 {
        return Err(Error::Config("train and test splits must be non-empty".into()));
    }
    if cfg.train_seed == cfg.test_seed {
        return Err(Error::Config("train and test seeds must differ".into()));
    }
    let train = gen_synthetic(cfg.train_seed, cfg.train_samples, &spec, cfg.train_horizon)?;
    let test = gen_synthetic(cfg.test_seed, cfg.test_samples, &spec, cfg.test_horizon)?;
    Ok(from_splits(train, test)?)
}

pub fn from_splits(train: SyntheticData, test: SyntheticData) -> Result<Prepared> {
    let spec = train.dataset.spec.clone();
    let stats = NormStats::fit(&spec, train.dataset.states())?;
    let clim = compute_climatology(&spec, train.dataset.states())?;
    Ok(Prepared {
        spec,
        train,
        test,
        stats,
        clim,
    })
}

pub fn oracle_hint(data: &SyntheticData, state: &AtmosphericState) -> Option<OracleHint> {
    data.annotation(&state.sample_id, state.time_index)
        .and_then(|a| a.rotation_sign())
        .map(|s| OracleHint { rotation_sign: s })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NarrationSummary {
    pub narrated: usize,
    pub cached: usize,
    pub passed: usize,
    pub failed: usize,
    pub fallback: usize,
    pub rounds: usize,
}

impl NarrationSummary {
    pub fn line(&self) -> String {
        format!(
            "narrated {} cached {} PASS {} FAIL {} fallback {} rounds {}",
            self.narrated, self.cached, self.passed, self.failed, self.fallback, self.rounds
        )
    }
}

/// Narrates every state with `time_index < max_time` that the cache lacks.
/// Records are keyed by `(sample_id, time_index)`.
pub fn narrate_dataset(
    backend: &dyn NarratorBackend,
    evaluator: &dyn Evaluator,
    data: &SyntheticData,
    stats: &NormStats,
    cfg: &MmnpConfig,
    max_time: i64,
    cache: &mut NarrationCache,
) -> Result<NarrationSummary> {
    let mut summary = NarrationSummary::default();
    for state in data.dataset.states().filter(|s| s.time_index < max_time) {
        let k = state.time_index as usize;
        if cache.contains(&state.sample_id, k) {
            summary.cached += 1;
            continue;
        }
        let ctx = build_context(&data.dataset.spec, state, stats, oracle_hint(data, state), cfg)?;
        let out = run_pipeline(backend, evaluator, &ctx, cfg)?;
        summary.narrated += 1;
        summary.rounds += out.rounds_used;
        if out.passed() {
            summary.passed += 1;
        } else if out.verdict.is_some() {
            summary.failed += 1;
        }
        if out.fallback {
            summary.fallback += 1;
        }
        cache.put(out.record(&state.sample_id, k, cfg))?;
    }
    Ok(summary)
}

/// Input/target state pairs: consecutive states of every sequence.
pub fn state_pairs(data: &SyntheticData) -> Vec<(&AtmosphericState, &AtmosphericState)> {
    data.dataset
        .sequences
        .iter()
        .flat_map(|s| s.states.windows(2).map(|w| (&w[0], &w[1])))
        .collect()
}

/// Cached narrative of every input state, in pair order.
pub fn pair_narratives(cache: &NarrationCache, pairs: &[(&AtmosphericState, &AtmosphericState)]) -> Result<Vec<String>> {
    pairs
        .iter()
        .map(|(x, _)| {
            cache
                .get(&x.sample_id, x.time_index as usize)
                .map(|r| r.narrative.clone())
                .map_err(|e| match e {
                    Error::NotFound(_) => Error::Data(format!(
                        "no cached narrative for ({}, {}); run narration first",
                        x.sample_id, x.time_index
                    )),
                    other => other,
                })
        })
        .collect()
}

/// Normalized patch pairs with text embeddings assigned under `mode`.
pub fn build_examples(
    model: &Forecaster,
    stats: &NormStats,
    pairs: &[(&AtmosphericState, &AtmosphericState)],
    narratives: Option<&[String]>,
    mode: TextMode,
    shuffle_seed: u64,
) -> Result<Vec<Example>> {
    let texts = match (model.uses_text(), narratives) {
        (false, _) => None,
        (true, Some(n)) => Some(assign_texts(mode, n, shuffle_seed)),
        (true, None) if mode == TextMode::Empty => Some(vec![String::new(); pairs.len()]),
        (true, None) => return Err(Error::Data(format!("{mode} text requested without narratives"))),
    };
    pairs
        .iter()
        .enumerate()
        .map(|(i, (x, y))| {
            Ok(Example {
                sample_id: x.sample_id.clone(),
                time_index: x.time_index,
                x: model.state_patches(x, stats)?,
                y: model.state_patches(y, stats)?,
                text: texts.as_ref().map(|t| model.embed(&t[i])),
            })
        })
        .collect()
}
