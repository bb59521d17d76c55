//! Mini-batch Adam training on `(state_t, state_t+1, narrative_t)` pairs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Forecaster, TextMode};
use crate::error::{Error, Result};
use crate::numcore::{adam_step, AdamConfig, AdamState, Grads, ParamStore, Tensor};

pub const LOSS_HEADER: &str = "step,loss";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub text_mode: TextMode,
    /// Seed for parameter init and batch sampling.
    pub seed: u64,
    /// Seed of the shuffled-text derangement.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            adam: AdamConfig::default(),
            text_mode: TextMode::Matched,
            seed: 1,
            shuffle_seed: 7,
        }
    }
}

/// One supervised pair in normalized patch space.
#[derive(Clone, Debug)]
pub struct Example {
    pub sample_id: String,
    pub time_index: i64,
    pub x: Tensor,
    pub y: Tensor,
    pub text: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    /// Mean batch loss per step, starting at step 1.
    pub losses: Vec<f64>,
    pub table_hash_before: String,
    pub table_hash_after: String,
}

/// Seeded uniformly random cyclic permutation (Sattolo); no index maps to
/// itself when `n ≥ 2`.
pub fn derangement(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Narrative fed to each sample under `mode`.
pub fn assign_texts(mode: TextMode, narratives: &[String], seed: u64) -> Vec<String> {
    match mode {
        TextMode::Matched => narratives.to_vec(),
        TextMode::Shuffled => derangement(narratives.len(), seed)
            .into_iter()
            .map(|j| narratives[j].clone())
            .collect(),
        TextMode::Empty => vec![String::new(); narratives.len()],
    }
}

/// Sorted distinct tokens of `texts`, for the frozen-table hash.
pub fn vocabulary(model: &Forecaster, texts: &[String]) -> Vec<String> {
    let mut v: Vec<String> = texts
        .iter()
        .flat_map(|t| model.encoder.tokenize(t).tokens().to_vec())
        .collect();
    v.sort();
    v.dedup();
    v
}

pub fn train(model: &Forecaster, examples: &[Example], cfg: &TrainConfig, vocab: &[String]) -> Result<TrainOutcome> {
    train_from(model, model.init(cfg.seed)?, examples, cfg, vocab)
}

pub fn train_from(
    model: &Forecaster,
    mut params: ParamStore,
    examples: &[Example],
    cfg: &TrainConfig,
    vocab: &[String],
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let table_hash_before = model.encoder.table_hash(vocab.iter().map(String::as_str));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut state = AdamState::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut grads = Grads::new();
        let mut total = 0.0;
        for _ in 0..cfg.batch {
            let ex = &examples[rng.random_range(0..examples.len())];
            total += model.loss_and_grad(&params, &ex.x, &ex.y, ex.text.as_ref(), &mut grads)?;
        }
        grads.scale(1.0 / cfg.batch as f64);
        let loss = total / cfg.batch as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at step {}", losses.len() + 1)));
        }
        losses.push(loss);
        params.set_grads(&grads)?;
        adam_step(&mut params, &mut state, &cfg.adam)?;
    }
    params.clear_grads();
    Ok(TrainOutcome {
        params,
        losses,
        table_hash_before,
        table_hash_after: model.encoder.table_hash(vocab.iter().map(String::as_str)),
    })
}

pub fn loss_csv(losses: &[f64]) -> String {
    let mut s = format!("{LOSS_HEADER}\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "{},{l}", i + 1).expect("string write");
    }
    s
}

pub fn write_loss_csv(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    fs::write(path, loss_csv(losses))?;
    Ok(())
}
