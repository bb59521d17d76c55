use std::fs;
use std::path::{Path, PathBuf};

use agcd_core::backbone::{load_checkpoint, save_checkpoint};
use agcd_core::evalkit::{
    assign_texts, build_examples, evaluate_one_step, metrics_csv, narrate_dataset, pair_narratives, rollout_dataset,
    run_ablation, state_pairs, vocabulary, write_loss_csv, write_metrics_csv, EvalContext, Forecaster, Lab,
    ModelConfig, Suite, TextMode, TrainConfig, Variant,
};
use agcd_core::fieldgrid::{
    compute_climatology, gen_synthetic, read_grid_file, write_grid_file, ClimatologyTable, Dataset, GridSpec,
    NormStats, OracleAnnotation, Sequence, SyntheticData,
};
use agcd_core::heatmap::{render_state, write_ppm};
use agcd_core::mmnp::{HttpBackend, MockBackend, NarrationCache, NarratorBackend, RuleEvaluator};
use agcd_core::{Error, ParamStore};
use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::config::Config;
use crate::{AblateArgs, BackendKind, EvalArgs, GenDataArgs, NarrateArgs, RenderArgs, RolloutArgs, SuiteArg, TrainArgs};

pub const GRID_FILE: &str = "grid.agcd";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("causality audit failed: {0}")]
    Audit(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn load_config(path: &Option<PathBuf>) -> CliResult<Config> {
    Ok(Config::load(path.as_deref())?)
}

fn write_data(dir: &Path, data: &SyntheticData) -> CliResult {
    fs::create_dir_all(dir)?;
    write_grid_file(dir.join(GRID_FILE), &data.dataset)?;
    let mut lines = String::new();
    for a in &data.annotations {
        lines.push_str(&serde_json::to_string(a)?);
        lines.push('\n');
    }
    fs::write(dir.join(ANNOTATIONS_FILE), lines)?;
    Ok(())
}

fn load_data(dir: &Path) -> CliResult<SyntheticData> {
    let dataset = read_grid_file(dir.join(GRID_FILE))?;
    let path = dir.join(ANNOTATIONS_FILE);
    let annotations = if path.exists() {
        fs::read_to_string(&path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<OracleAnnotation>)
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    Ok(SyntheticData { dataset, annotations })
}

fn fit_stats(ds: &Dataset) -> CliResult<NormStats> {
    Ok(NormStats::fit(&ds.spec, ds.states())?)
}

pub fn gen_data(a: GenDataArgs) -> CliResult {
    let mut cfg = load_config(&a.config.config)?;
    if let Some(s) = a.seed {
        cfg.data.train_seed = s;
    }
    if let Some(n) = a.samples {
        cfg.data.train_samples = n;
    }
    if let Some(h) = a.horizon {
        cfg.data.train_horizon = h;
    }
    let spec = GridSpec::desk_default();
    let data = gen_synthetic(cfg.data.train_seed, cfg.data.train_samples, &spec, cfg.data.train_horizon)?;
    write_data(&a.out, &data)?;
    cfg.write_resolved(&a.out)?;
    println!(
        "wrote {} sequences of {} states to {}",
        data.dataset.len(),
        cfg.data.train_horizon + 1,
        a.out.display()
    );
    Ok(())
}

pub fn narrate(a: NarrateArgs) -> CliResult {
    let mut cfg = load_config(&a.config.config)?;
    if let Some(r) = a.rounds {
        cfg.mmnp.rounds = r;
    }
    if let Some(d) = a.defect_rate {
        cfg.mmnp.defect_rate = d;
    }
    let data = load_data(&a.data)?;
    let mut cache = NarrationCache::open(&a.cache)?;
    if data.dataset.is_empty() {
        println!("narrated 0 cached 0 PASS 0 FAIL 0 fallback 0 rounds 0");
        return Ok(());
    }
    let stats = match &a.stats_from {
        Some(dir) => fit_stats(&load_data(dir)?.dataset)?,
        None => fit_stats(&data.dataset)?,
    };
    let max_time = a.max_time.unwrap_or_else(|| {
        data.dataset
            .sequences
            .iter()
            .map(|s| s.states.len() as i64 - 1)
            .max()
            .unwrap_or(0)
            .max(1)
    });
    let backend: Box<dyn NarratorBackend> = match a.backend {
        BackendKind::Mock => Box::new(MockBackend::with_defects(cfg.mmnp.defect_rate, cfg.mmnp.defect_seed)),
        BackendKind::Http => Box::new(HttpBackend::new(cfg.mmnp.http.clone())?),
    };
    let summary = narrate_dataset(backend.as_ref(), &RuleEvaluator, &data, &stats, &cfg.mmnp.pipeline(), max_time, &mut cache)?;
    println!("{} backend-calls {}", summary.line(), backend.calls());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    variant: Variant,
    model: ModelConfig,
    train: TrainConfig,
    stats: NormStats,
}

const CLIM_PREFIX: &str = "clim.";

fn save_model(path: &Path, params: &ParamStore, meta: &CheckpointMeta, clim: &ClimatologyTable, spec: &GridSpec) -> CliResult {
    let mut ps = params.clone();
    for (v, f) in spec.variables.iter().zip(&clim.fields) {
        ps.insert(format!("{CLIM_PREFIX}{v}"), f.clone(), false)?;
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    save_checkpoint(path, &ps, &serde_json::to_value(meta)?)?;
    Ok(())
}

struct Loaded {
    model: Forecaster,
    params: ParamStore,
    meta: CheckpointMeta,
    clim: ClimatologyTable,
}

fn load_model(path: &Path, spec: &GridSpec) -> CliResult<Loaded> {
    let (params, meta) = load_checkpoint(path)?;
    let meta: CheckpointMeta = serde_json::from_value(meta)
        .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    if meta.stats.variables != spec.variables {
        return Err(Error::Data(format!(
            "checkpoint variables {:?} do not match dataset variables {:?}",
            meta.stats.variables, spec.variables
        ))
        .into());
    }
    let fields = spec
        .variables
        .iter()
        .map(|v| params.value(&format!("{CLIM_PREFIX}{v}")).cloned())
        .collect::<agcd_core::Result<Vec<_>>>()?;
    let model = Forecaster::new(meta.variant, meta.model.clone(), spec)?;
    Ok(Loaded {
        model,
        params,
        meta,
        clim: ClimatologyTable { fields },
    })
}

fn open_cache(path: &Option<PathBuf>, what: &str) -> CliResult<NarrationCache> {
    match path {
        Some(p) if p.exists() => Ok(NarrationCache::open(p)?),
        Some(p) => Err(Error::Data(format!("narration cache {} does not exist; run `agcd narrate` first", p.display())).into()),
        None => Err(Error::Data(format!("{what} needs narratives: pass --cache")).into()),
    }
}

/// First-state narrative of every sequence under `mode`.
fn initial_texts(seqs: &[Sequence], cache: &Option<PathBuf>, mode: TextMode, shuffle_seed: u64) -> CliResult<Vec<String>> {
    if mode == TextMode::Empty {
        return Ok(vec![String::new(); seqs.len()]);
    }
    let cache = open_cache(cache, &format!("{mode} text"))?;
    let narratives = seqs
        .iter()
        .map(|s| {
            cache.get(&s.sample_id, 0).map(|r| r.narrative.clone()).map_err(|_| {
                Error::Data(format!("no cached narrative for ({}, 0); run `agcd narrate` first", s.sample_id))
            })
        })
        .collect::<agcd_core::Result<Vec<_>>>()?;
    Ok(assign_texts(mode, &narratives, shuffle_seed))
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut cfg = load_config(&a.config.config)?;
    if let Some(v) = a.variant {
        cfg.eval.variant = v.into();
    }
    if let Some(t) = a.text {
        cfg.train.text_mode = t.into();
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let data = load_data(&a.data)?;
    let spec = data.dataset.spec.clone();
    let stats = fit_stats(&data.dataset)?;
    let clim = compute_climatology(&spec, data.dataset.states())?;
    let model = Forecaster::new(cfg.eval.variant, cfg.model(), &spec)?;
    let pairs = state_pairs(&data);
    let narratives = if model.uses_text() && cfg.train.text_mode != TextMode::Empty {
        let cache = open_cache(&a.cache, &format!("{} training", cfg.train.text_mode))?;
        Some(pair_narratives(&cache, &pairs)?)
    } else {
        None
    };
    let examples = build_examples(&model, &stats, &pairs, narratives.as_deref(), cfg.train.text_mode, cfg.train.shuffle_seed)?;
    let vocab = narratives.as_ref().map(|n| vocabulary(&model, n)).unwrap_or_default();
    let outcome = agcd_core::evalkit::train(&model, &examples, &cfg.train, &vocab)?;
    let meta = CheckpointMeta {
        variant: cfg.eval.variant,
        model: cfg.model(),
        train: cfg.train.clone(),
        stats,
    };
    save_model(&a.ckpt, &outcome.params, &meta, &clim, &spec)?;
    fs::create_dir_all(&a.out)?;
    write_loss_csv(a.out.join("loss.csv"), &outcome.losses)?;
    cfg.write_resolved(&a.out)?;
    let first = outcome.losses.first().copied().unwrap_or(f64::NAN);
    let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} on {} pairs for {} steps: loss {first:.5} -> {last:.5}",
        cfg.eval.variant,
        examples.len(),
        outcome.losses.len()
    );
    println!(
        "embedding table hash {} ({})",
        outcome.table_hash_after,
        if outcome.table_hash_before == outcome.table_hash_after { "unchanged" } else { "CHANGED" }
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult {
    let cfg = load_config(&a.config.config)?;
    let data = load_data(&a.data)?;
    let spec = data.dataset.spec.clone();
    let l = load_model(&a.ckpt, &spec)?;
    let mode = a.text.map(TextMode::from).unwrap_or(cfg.eval.text_mode);
    let seqs = &data.dataset.sequences;
    let texts = if l.model.uses_text() {
        Some(initial_texts(seqs, &a.cache, mode, l.meta.train.shuffle_seed)?)
    } else {
        None
    };
    let ctx = EvalContext {
        spec: &spec,
        stats: &l.meta.stats,
        clim: &l.clim,
    };
    let rows = evaluate_one_step(ctx, &l.model, &l.params, seqs, texts.as_deref())?;
    fs::create_dir_all(&a.out)?;
    write_metrics_csv(a.out.join("metrics.csv"), &rows)?;
    cfg.write_resolved(&a.out)?;
    print!("{}", metrics_csv(&rows));
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    sample_id: &'a str,
    narratives: &'a [String],
    provenance: &'a [agcd_core::evalkit::ProvenanceEvent],
    audit: &'a agcd_core::evalkit::AuditReport,
}

pub fn rollout(a: RolloutArgs) -> CliResult {
    let mut cfg = load_config(&a.config.config)?;
    if let Some(s) = a.steps {
        cfg.eval.rollout_steps = s;
    }
    let data = load_data(&a.data)?;
    let spec = data.dataset.spec.clone();
    let l = load_model(&a.ckpt, &spec)?;
    let seqs = &data.dataset.sequences;
    let s0 = if l.model.uses_text() {
        initial_texts(seqs, &a.cache, TextMode::Matched, 0)?
    } else {
        vec![String::new(); seqs.len()]
    };
    let ctx = EvalContext {
        spec: &spec,
        stats: &l.meta.stats,
        clim: &l.clim,
    };
    let editor = MockBackend::new();
    let run = rollout_dataset(ctx, &l.model, &l.params, &editor, &cfg.mmnp.pipeline(), seqs, &s0, cfg.eval.rollout_steps, a.inject_leak)?;
    fs::create_dir_all(&a.out)?;
    let mut lines = String::new();
    for (t, audit) in run.traces.iter().zip(&run.audits) {
        let line = TraceLine {
            sample_id: &t.sample_id,
            narratives: &t.narratives,
            provenance: &t.provenance,
            audit,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    fs::write(a.out.join("trace.jsonl"), lines)?;
    let predictions = Dataset {
        spec: spec.clone(),
        sequences: run
            .traces
            .iter()
            .map(|t| Sequence {
                sample_id: t.sample_id.clone(),
                states: t.predictions.clone(),
            })
            .filter(|s| !s.states.is_empty())
            .collect(),
    };
    write_grid_file(a.out.join("predictions.agcd"), &predictions)?;
    write_metrics_csv(a.out.join("metrics.csv"), &run.rows)?;
    cfg.write_resolved(&a.out)?;
    print!("{}", metrics_csv(&run.rows));
    let failed: Vec<String> = run
        .traces
        .iter()
        .zip(&run.audits)
        .filter(|(_, r)| !r.passed)
        .map(|(t, r)| format!("{}: {}", t.sample_id, r.line()))
        .collect();
    if a.audit {
        if failed.is_empty() {
            println!("audit PASS ({} rollouts, {} steps)", run.traces.len(), cfg.eval.rollout_steps);
        } else {
            for f in &failed {
                println!("{f}");
            }
            println!("audit FAIL ({} of {} rollouts)", failed.len(), run.traces.len());
            return Err(CliError::Audit(failed[0].clone()));
        }
    }
    Ok(())
}

pub fn render(a: RenderArgs) -> CliResult {
    let data = load_data(&a.data)?;
    let ds = &data.dataset;
    let stats = fit_stats(ds)?;
    let state = ds
        .states()
        .find(|s| s.sample_id == a.sample && s.time_index == a.time)
        .ok_or_else(|| Error::NotFound(format!("state ({}, {})", a.sample, a.time)))?;
    let picked: Vec<usize> = match &a.var {
        None => (0..ds.spec.num_vars()).collect(),
        Some(v) => vec![ds
            .spec
            .var_index(v)
            .ok_or_else(|| Error::NotFound(format!("variable {v:?}; have {:?}", ds.spec.variables)))?],
    };
    fs::create_dir_all(&a.out)?;
    let images = render_state(state, &stats)?;
    for v in picked {
        let path = a.out.join(format!("{}_t{}_{}.ppm", a.sample, a.time, ds.spec.variables[v]));
        write_ppm(&images[v], &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn ablate(a: AblateArgs) -> CliResult {
    let cfg = load_config(&a.config.config)?;
    let suite = match a.suite {
        SuiteArg::Crid => Suite::Crid,
        SuiteArg::Mmnp => Suite::Mmnp,
        SuiteArg::Agents => Suite::Agents,
    };
    let name = format!("{suite:?}").to_lowercase();
    let lab = Lab::new(cfg.experiment(), &a.out)?;
    let result = run_ablation(&lab, suite)?;
    result.write(&a.out, &name)?;
    fs::write(a.out.join(format!("{name}_notes.txt")), result.notes.join("\n") + "\n")?;
    cfg.write_resolved(&a.out)?;
    for n in &result.notes {
        println!("{n}");
    }
    print!("{}", result.csv());
    Ok(())
}
