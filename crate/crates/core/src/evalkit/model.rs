//! The forecaster: backbone plus either the baseline head or the
//! text-guided decoder, with a latitude-weighted patch-space loss.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{patchify, unpatchify, Backbone, BackboneCache, BackboneConfig, BaselineHead, PatchLayout};
use crate::crid::{Crid, CridCache, CridConfig};
use crate::error::{shape_err, Error, Result};
use crate::fieldgrid::{denormalize_state, latitude_weights, normalize_state, AtmosphericState, GridSpec, NormStats};
use crate::numcore::{Grads, ParamStore, Tensor};
use crate::textenc::{TextEncoder, TextEncoderConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    #[default]
    Agcd,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Agcd => "agcd",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "agcd" => Ok(Variant::Agcd),
            other => Err(Error::Config(format!("unknown variant {other:?} (baseline|agcd)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextMode {
    #[default]
    Matched,
    Shuffled,
    Empty,
}

impl TextMode {
    pub const ALL: [TextMode; 3] = [TextMode::Matched, TextMode::Shuffled, TextMode::Empty];

    pub fn label(self) -> &'static str {
        match self {
            TextMode::Matched => "matched",
            TextMode::Shuffled => "shuffled",
            TextMode::Empty => "empty",
        }
    }
}

impl fmt::Display for TextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matched" => Ok(TextMode::Matched),
            "shuffled" => Ok(TextMode::Shuffled),
            "empty" => Ok(TextMode::Empty),
            other => Err(Error::Config(format!("unknown text mode {other:?} (matched|shuffled|empty)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub crid: CridConfig,
    pub text: TextEncoderConfig,
}

#[derive(Clone, Debug)]
pub struct Forecaster {
    pub variant: Variant,
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub head: BaselineHead,
    pub crid: Option<Crid>,
    pub encoder: TextEncoder,
    pub layout: PatchLayout,
    loss_weights: Tensor,
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    p: Tensor,
    backbone: BackboneCache,
    crid: Option<CridCache>,
}

impl Forecaster {
    pub fn new(variant: Variant, config: ModelConfig, spec: &GridSpec) -> Result<Self> {
        let backbone = Backbone::new(config.backbone.clone(), spec)?;
        let layout = backbone.layout;
        if config.crid.text_dim != config.text.dim || config.crid.max_tokens != config.text.max_tokens {
            return Err(Error::Config(format!(
                "decoder expects {} tokens of width {}, encoder yields {} of width {}",
                config.crid.max_tokens, config.crid.text_dim, config.text.max_tokens, config.text.dim
            )));
        }
        let crid = match variant {
            Variant::Agcd => Some(Crid::new(
                config.crid.clone(),
                config.backbone.dim,
                layout.num_patches(),
                layout.patch_len(),
            )?),
            Variant::Baseline => None,
        };
        Ok(Self {
            variant,
            encoder: TextEncoder::new(config.text.clone()),
            loss_weights: layout.weights(&latitude_weights(spec)),
            config,
            backbone,
            head: BaselineHead::new(),
            crid,
            layout,
        })
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        self.backbone.init(&mut ps, &mut rng)?;
        match &self.crid {
            Some(c) => c.init(&mut ps, &mut rng)?,
            None => self.head.init(&mut ps, &mut rng, self.config.backbone.dim, self.layout.patch_len())?,
        }
        Ok(ps)
    }

    pub fn uses_text(&self) -> bool {
        self.crid.is_some()
    }

    pub fn embed(&self, narrative: &str) -> Tensor {
        self.encoder.encode(narrative)
    }

    /// Patch-space prediction from normalized input patches.
    pub fn forward(&self, ps: &ParamStore, x: &Tensor, text: Option<&Tensor>) -> Result<(Tensor, ForwardCache)> {
        let enc = self.backbone.encode(ps, x)?;
        match &self.crid {
            Some(crid) => {
                let text = text.ok_or_else(|| Error::Contract("the text-guided decoder needs a text embedding".into()))?;
                let out = crid.predict(ps, &enc.p, &enc.c, text)?;
                Ok((
                    out.patches,
                    ForwardCache {
                        p: enc.p,
                        backbone: enc.cache,
                        crid: Some(out.cache),
                    },
                ))
            }
            None => Ok((
                self.head.forward(ps, &enc.p)?,
                ForwardCache {
                    p: enc.p,
                    backbone: enc.cache,
                    crid: None,
                },
            )),
        }
    }

    pub fn backward(&self, ps: &ParamStore, cache: &ForwardCache, dy: &Tensor, grads: &mut Grads) -> Result<()> {
        let (dp, dc) = match (&self.crid, &cache.crid) {
            (Some(crid), Some(cc)) => crid.backward(ps, cc, dy, grads)?,
            _ => (
                self.head.backward(ps, &cache.p, dy, grads)?,
                Tensor::zeros(&[1, self.config.backbone.dim]),
            ),
        };
        self.backbone.backward(ps, &cache.backbone, &dp, &dc, grads)
    }

    /// Latitude-weighted mean squared error and its gradient.
    pub fn loss(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        if pred.shape() != target.shape() || pred.shape() != self.loss_weights.shape() {
            return Err(shape_err(format!("loss on {:?} vs {:?}", pred.shape(), target.shape())));
        }
        let count = pred.len() as f64;
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(pred.len());
        for ((p, t), w) in pred.data().iter().zip(target.data()).zip(self.loss_weights.data()) {
            let e = p - t;
            total += w * e * e;
            grad.push(2.0 * w * e / count);
        }
        Ok((total / count, Tensor::new(pred.shape(), grad)?))
    }

    /// Loss for one pair; gradients are accumulated into `grads`.
    pub fn loss_and_grad(&self, ps: &ParamStore, x: &Tensor, target: &Tensor, text: Option<&Tensor>, grads: &mut Grads) -> Result<f64> {
        let (pred, cache) = self.forward(ps, x, text)?;
        let (l, dy) = self.loss(&pred, target)?;
        self.backward(ps, &cache, &dy, grads)?;
        Ok(l)
    }

    pub fn state_patches(&self, state: &AtmosphericState, stats: &NormStats) -> Result<Tensor> {
        patchify(&normalize_state(state, stats)?.fields, &self.layout)
    }

    /// One forecast step in physical units.
    pub fn step(&self, ps: &ParamStore, state: &AtmosphericState, stats: &NormStats, text: Option<&Tensor>) -> Result<AtmosphericState> {
        let x = self.state_patches(state, stats)?;
        let (y, _) = self.forward(ps, &x, text)?;
        let normalized = AtmosphericState {
            sample_id: state.sample_id.clone(),
            time_index: state.time_index + 1,
            fields: unpatchify(&y, &self.layout)?,
        };
        denormalize_state(&normalized, stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::{grad_check, Coverage};
    use crate::numcore::layers::init_uniform;

    #[test]
    fn labels_round_trip() {
        for v in [Variant::Baseline, Variant::Agcd] {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        for m in TextMode::ALL {
            assert_eq!(m.label().parse::<TextMode>().unwrap(), m);
        }
        assert!("fancy".parse::<TextMode>().is_err());
    }

    #[test]
    fn loss_gradient_matches_difference() {
        let spec = GridSpec::desk_default();
        let model = Forecaster::new(Variant::Agcd, ModelConfig::default(), &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_uniform(&mut rng, &[16, 64], 1);
        let t = init_uniform(&mut rng, &[16, 64], 1);
        let (_, g) = model.loss(&p, &t).unwrap();
        for k in [0, 100, 1000] {
            let mut a = p.clone();
            a.data_mut()[k] += 1e-6;
            let mut b = p.clone();
            b.data_mut()[k] -= 1e-6;
            let fd = (model.loss(&a, &t).unwrap().0 - model.loss(&b, &t).unwrap().0) / 2e-6;
            assert!((fd - g.data()[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn end_to_end_sampled_gradients() {
        let spec = GridSpec::desk_default();
        for variant in [Variant::Baseline, Variant::Agcd] {
            let model = Forecaster::new(variant, ModelConfig::default(), &spec).unwrap();
            let mut ps = model.init(5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let x = init_uniform(&mut rng, &[16, 64], 1);
            let t = init_uniform(&mut rng, &[16, 64], 1);
            let text = model.embed("z: strong maximum +2.1 near north circulation near north may turn the z maximum clockwise");
            let mut grads = Grads::new();
            model.loss_and_grad(&ps, &x, &t, Some(&text), &mut grads).unwrap();
            let loss = |ps: &ParamStore| -> Result<f64> {
                let (y, _) = model.forward(ps, &x, Some(&text))?;
                Ok(model.loss(&y, &t)?.0)
            };
            let cov = Coverage::Sampled { per_tensor: 3, seed: 7 };
            let rep = grad_check(&mut ps, &grads, 1e-5, 1e-4, cov, loss).unwrap();
            assert!(rep.passed, "{variant}: {:?}", rep.worst());
        }
    }

    #[test]
    fn baseline_ignores_text_and_agcd_requires_it() {
        let spec = GridSpec::desk_default();
        let base = Forecaster::new(Variant::Baseline, ModelConfig::default(), &spec).unwrap();
        let ps = base.init(1).unwrap();
        assert!(!ps.contains("crid.head.w"));
        let x = Tensor::zeros(&[16, 64]);
        assert!(base.forward(&ps, &x, None).is_ok());
        let agcd = Forecaster::new(Variant::Agcd, ModelConfig::default(), &spec).unwrap();
        let ps = agcd.init(1).unwrap();
        assert!(agcd.forward(&ps, &x, None).is_err());
    }
}
