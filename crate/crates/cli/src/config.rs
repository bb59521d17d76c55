//! The JSON run configuration. Every key is optional; unknown keys are
//! rejected.

use std::fs;
use std::path::Path;

use agcd_core::backbone::BackboneConfig;
use agcd_core::crid::CridConfig;
use agcd_core::evalkit::{DataConfig, ExperimentConfig, ModelConfig, TextMode, TrainConfig, Variant};
use agcd_core::mmnp::{HttpConfig, MmnpConfig, PipelineMode};
use agcd_core::textenc::TextEncoderConfig;
use agcd_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataConfig,
    pub mmnp: MmnpSection,
    pub model: ModelSection,
    pub crid: CridConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmnpSection {
    pub rounds: usize,
    pub mode: PipelineMode,
    pub enabled: Option<Vec<String>>,
    pub render_images: bool,
    /// Share of samples whose mock integration carries one injected defect.
    pub defect_rate: f64,
    pub defect_seed: u64,
    pub http: HttpConfig,
}

impl Default for MmnpSection {
    fn default() -> Self {
        let m = MmnpConfig::default();
        Self {
            rounds: m.rounds,
            mode: m.mode,
            enabled: m.enabled,
            render_images: m.render_images,
            defect_rate: 0.3,
            defect_seed: 0,
            http: HttpConfig::default(),
        }
    }
}

impl MmnpSection {
    pub fn pipeline(&self) -> MmnpConfig {
        MmnpConfig {
            rounds: self.rounds,
            mode: self.mode,
            enabled: self.enabled.clone(),
            render_images: self.render_images,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub backbone: BackboneConfig,
    pub text: TextEncoderConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub variant: Variant,
    pub text_mode: TextMode,
    pub seeds: Vec<u64>,
    pub rollout_steps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            variant: e.variant,
            text_mode: e.text_mode,
            seeds: e.seeds,
            rollout_steps: e.rollout_steps,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.model.backbone.clone(),
            crid: self.crid.clone(),
            text: self.model.text.clone(),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            variant: self.eval.variant,
            text_mode: self.eval.text_mode,
            seeds: self.eval.seeds.clone(),
            data: self.data.clone(),
            model: self.model(),
            train: self.train.clone(),
            mmnp: self.mmnp.pipeline(),
            defect_rate: self.mmnp.defect_rate,
            rollout_steps: self.eval.rollout_steps,
        }
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("resolved_config.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
