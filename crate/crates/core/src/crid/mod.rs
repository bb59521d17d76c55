//! Text-guided replacement for the baseline decoding head: class-token gating
//! of text tokens, region tokens, pooled memory and memory cross-attention.

mod cmg;
mod pool;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cmg::{cmg_gates, cmg_gates_backward, GateCache, GuidedText};
pub use pool::{
    attention_pool, attention_pool_backward, check_memory_size, grid_side, hopfield_pool, num_region_tokens,
    region_tokens, region_tokens_backward, PoolCache,
};

use crate::error::{shape_err, Error, Result};
use crate::numcore::layers::{init_uniform, Activation, AttentionCache, Linear, Mlp, MlpCache, MultiHeadAttention};
use crate::numcore::ops::concat_rows;
use crate::numcore::{Grads, ParamStore, Tensor};

/// Key/value maps applied to the context before pooling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolProjection {
    #[default]
    Learned,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CridConfig {
    pub text_dim: usize,
    pub max_tokens: usize,
    pub gate_hidden: usize,
    pub scales: Vec<usize>,
    pub memory_tokens: usize,
    /// Pooling inverse temperature; `1/√d` when absent.
    pub inv_temperature: Option<f64>,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub mlp_activation: Activation,
    pub pool_projection: PoolProjection,
    pub region_tokens: bool,
    pub hopfield: bool,
    pub gating: bool,
}

impl Default for CridConfig {
    fn default() -> Self {
        Self {
            text_dim: 48,
            max_tokens: 64,
            gate_hidden: 64,
            scales: vec![2, 4],
            memory_tokens: 8,
            inv_temperature: None,
            heads: 4,
            mlp_ratio: 4,
            mlp_activation: Activation::Gelu,
            pool_projection: PoolProjection::Learned,
            region_tokens: true,
            hopfield: true,
            gating: true,
        }
    }
}

/// Component switched off in an ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CridAblation {
    Full,
    NoRegion,
    NoHopfield,
    NoCmg,
}

impl CridAblation {
    pub const ALL: [CridAblation; 4] = [Self::NoRegion, Self::NoHopfield, Self::NoCmg, Self::Full];

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoRegion => "no-region",
            Self::NoHopfield => "no-hopfield",
            Self::NoCmg => "no-cmg",
        }
    }

    pub fn apply(self, cfg: &CridConfig) -> CridConfig {
        let mut c = cfg.clone();
        match self {
            Self::Full => {}
            Self::NoRegion => c.region_tokens = false,
            Self::NoHopfield => c.hopfield = false,
            Self::NoCmg => c.gating = false,
        }
        c
    }
}

#[derive(Clone, Debug)]
pub struct Crid {
    pub config: CridConfig,
    pub dim: usize,
    pub num_patches: usize,
    pub patch_len: usize,
    g: Option<Linear>,
    f: Mlp,
    queries: String,
    pool_k: Option<Linear>,
    pool_v: Option<Linear>,
    attn: MultiHeadAttention,
    mlp: Mlp,
    head: Linear,
}

#[derive(Clone, Debug)]
struct CmiCache {
    x: Tensor,
    pool: Option<PoolCache>,
    memory: Tensor,
    p_hat: Tensor,
    attn: AttentionCache,
    mlp: MlpCache,
    p_out: Tensor,
}

#[derive(Clone, Debug)]
pub struct CridCache {
    text: Tensor,
    f: Option<MlpCache>,
    gates: Option<GateCache>,
    n_t: usize,
    cmi: CmiCache,
}

/// Outputs of [`Crid::predict`].
#[derive(Clone, Debug)]
pub struct CridOutput {
    /// Patch-space prediction, `N × patch_len`.
    pub patches: Tensor,
    pub guided: GuidedText,
    /// Residual stream after memory attention.
    pub p_hat: Tensor,
    pub p_out: Tensor,
    pub memory: Tensor,
    pub cache: CridCache,
}

impl Crid {
    pub fn new(config: CridConfig, dim: usize, num_patches: usize, patch_len: usize) -> Result<Self> {
        let side = grid_side(num_patches)?;
        num_region_tokens(side, &config.scales)?;
        if config.heads == 0 || dim % config.heads != 0 {
            return Err(shape_err(format!("width {dim} not divisible by {} heads", config.heads)));
        }
        if config.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        let crid = Self {
            g: (config.text_dim != dim).then(|| Linear::without_bias("crid.g")),
            f: Mlp::new("crid.f", Activation::Gelu),
            queries: "crid.pool.q".into(),
            pool_k: (config.pool_projection == PoolProjection::Learned).then(|| Linear::without_bias("crid.pool.k")),
            pool_v: (config.pool_projection == PoolProjection::Learned).then(|| Linear::without_bias("crid.pool.v")),
            attn: MultiHeadAttention::new("crid.attn", config.heads),
            mlp: Mlp::new("crid.mlp", config.mlp_activation),
            head: Linear::new("crid.head"),
            config,
            dim,
            num_patches,
            patch_len,
        };
        if crid.config.hopfield {
            check_memory_size(crid.config.memory_tokens, crid.context_len(crid.config.max_tokens)?)?;
        }
        Ok(crid)
    }

    pub fn num_region_tokens(&self) -> usize {
        if !self.config.region_tokens {
            return 0;
        }
        num_region_tokens(grid_side(self.num_patches).expect("checked in new"), &self.config.scales)
            .expect("checked in new")
    }

    /// Context length `L = N + N_r + N_t`.
    pub fn context_len(&self, n_t: usize) -> Result<usize> {
        if n_t == 0 || n_t > self.config.max_tokens {
            return Err(shape_err(format!("{n_t} text tokens, limit {}", self.config.max_tokens)));
        }
        Ok(self.num_patches + self.num_region_tokens() + n_t)
    }

    pub fn inv_temperature(&self) -> f64 {
        self.config.inv_temperature.unwrap_or(1.0 / (self.dim as f64).sqrt())
    }

    pub fn init<R: Rng>(&self, ps: &mut ParamStore, rng: &mut R) -> Result<()> {
        let (d, cfg) = (self.dim, &self.config);
        if let Some(g) = &self.g {
            g.init(ps, rng, cfg.text_dim, d)?;
        }
        if cfg.gating {
            self.f.init(ps, rng, d, cfg.gate_hidden, cfg.max_tokens + d)?;
        }
        if cfg.hopfield {
            ps.insert(&self.queries, init_uniform(rng, &[cfg.memory_tokens, d], d), true)?;
            for l in [&self.pool_k, &self.pool_v].into_iter().flatten() {
                l.init(ps, rng, d, d)?;
            }
        }
        self.attn.init(ps, rng, d)?;
        self.mlp.init(ps, rng, d, d * cfg.mlp_ratio, d)?;
        self.head.init(ps, rng, d, self.patch_len)
    }

    /// Name of the output projection inside the memory attention.
    pub fn output_projection(&self) -> &str {
        &self.attn.wo.w
    }

    pub fn pooling_queries(&self) -> &str {
        &self.queries
    }

    fn project_text(&self, ps: &ParamStore, text: &Tensor) -> Result<Tensor> {
        let (n_t, dt) = text.expect_2d("text embedding")?;
        if dt != self.config.text_dim {
            return Err(shape_err(format!("text width {dt}, expected {}", self.config.text_dim)));
        }
        self.context_len(n_t)?;
        match &self.g {
            Some(g) => g.forward(ps, text),
            None => Ok(text.clone()),
        }
    }

    /// Gated text tokens for class token `c`.
    pub fn cmg_forward(&self, ps: &ParamStore, text: &Tensor, c: &Tensor) -> Result<(GuidedText, Option<MlpCache>, Option<GateCache>)> {
        let u = self.project_text(ps, text)?;
        let n_t = u.rows();
        if !self.config.gating {
            return Ok((
                GuidedText {
                    tokens: u,
                    alpha: Tensor::full(&[1, n_t], 1.0 / n_t as f64),
                    beta: Tensor::full(&[1, self.dim], 1.0 / self.dim as f64),
                },
                None,
                None,
            ));
        }
        if c.shape() != [1, self.dim] {
            return Err(shape_err(format!("class token shape {:?}", c.shape())));
        }
        let (q, fcache) = self.f.forward(ps, c)?;
        let q_tok = Tensor::new(&[1, n_t], q.data()[..n_t].to_vec())?;
        let q_ch = Tensor::new(&[1, self.dim], q.data()[self.config.max_tokens..].to_vec())?;
        let (guided, gcache) = cmg_gates(&u, &q_tok, &q_ch)?;
        Ok((guided, Some(fcache), Some(gcache)))
    }

    fn cmi_forward(&self, ps: &ParamStore, p: &Tensor, tokens: &Tensor) -> Result<CmiCache> {
        let (n, d) = p.expect_2d("patch tokens")?;
        if n != self.num_patches || d != self.dim || tokens.cols() != d {
            return Err(shape_err(format!(
                "patch tokens {:?} and text tokens {:?} for {} patches of width {}",
                p.shape(),
                tokens.shape(),
                self.num_patches,
                self.dim
            )));
        }
        let x = if self.config.region_tokens {
            concat_rows(&[p, &region_tokens(p, &self.config.scales)?, tokens])?
        } else {
            concat_rows(&[p, tokens])?
        };
        let (memory, pool) = if self.config.hopfield {
            let keys = match &self.pool_k {
                Some(k) => k.forward(ps, &x)?,
                None => x.clone(),
            };
            let values = match &self.pool_v {
                Some(v) => v.forward(ps, &x)?,
                None => x.clone(),
            };
            let (z, c) = attention_pool(ps.value(&self.queries)?, &keys, &values, self.inv_temperature())?;
            (z, Some(c))
        } else {
            (x.clone(), None)
        };
        let (a, attn) = self.attn.forward(ps, p, &memory)?;
        let p_hat = a.add(p)?;
        let (p_out, mlp) = self.mlp.forward(ps, &p_hat)?;
        Ok(CmiCache {
            x,
            pool,
            memory,
            p_hat,
            attn,
            mlp,
            p_out,
        })
    }

    /// Decodes patch tokens `p` and class token `c` with text embedding `text`
    /// into a patch-space prediction.
    pub fn predict(&self, ps: &ParamStore, p: &Tensor, c: &Tensor, text: &Tensor) -> Result<CridOutput> {
        let (guided, f, gates) = self.cmg_forward(ps, text, c)?;
        let cmi = self.cmi_forward(ps, p, &guided.tokens)?;
        let patches = self.head.forward(ps, &cmi.p_out)?;
        Ok(CridOutput {
            patches,
            p_hat: cmi.p_hat.clone(),
            p_out: cmi.p_out.clone(),
            memory: cmi.memory.clone(),
            cache: CridCache {
                text: text.clone(),
                f,
                gates,
                n_t: guided.tokens.rows(),
                cmi,
            },
            guided,
        })
    }

    /// Accumulates parameter gradients; returns `(dP, dC)`.
    pub fn backward(&self, ps: &ParamStore, cache: &CridCache, dpatches: &Tensor, grads: &mut Grads) -> Result<(Tensor, Tensor)> {
        let cmi = &cache.cmi;
        let dp_out = self.head.backward(ps, &cmi.p_out, dpatches, grads)?;
        let dp_hat = self.mlp.backward(ps, &cmi.mlp, &dp_out, grads)?;
        let (dq, dmem) = self.attn.backward(ps, &cmi.attn, &dp_hat, grads)?;
        let mut dp = dp_hat.add(&dq)?;
        let dx = match &cmi.pool {
            Some(pc) => {
                let (dqh, dkeys, dvalues) = attention_pool_backward(pc, &dmem, self.inv_temperature())?;
                grads.accumulate(&self.queries, dqh);
                let mut dx = match &self.pool_k {
                    Some(k) => k.backward(ps, &cmi.x, &dkeys, grads)?,
                    None => dkeys,
                };
                dx.add_assign(&match &self.pool_v {
                    Some(v) => v.backward(ps, &cmi.x, &dvalues, grads)?,
                    None => dvalues,
                })?;
                dx
            }
            None => dmem,
        };
        let n = self.num_patches;
        let n_r = self.num_region_tokens();
        dp.add_assign(&dx.slice_rows(0, n))?;
        if n_r > 0 {
            dp.add_assign(&region_tokens_backward(&dx.slice_rows(n, n + n_r), n, &self.config.scales)?)?;
        }
        let dtokens = dx.slice_rows(n + n_r, n + n_r + cache.n_t);
        let (du, dc) = match (&cache.f, &cache.gates) {
            (Some(fc), Some(gc)) => {
                let (du, dq_tok, dq_ch) = cmg_gates_backward(gc, &dtokens)?;
                let mut dq = vec![0.0; self.config.max_tokens + self.dim];
                dq[..cache.n_t].copy_from_slice(dq_tok.data());
                dq[self.config.max_tokens..].copy_from_slice(dq_ch.data());
                let dc = self.f.backward(ps, fc, &Tensor::new(&[1, dq.len()], dq)?, grads)?;
                (du, dc)
            }
            _ => (dtokens, Tensor::zeros(&[1, self.dim])),
        };
        if let Some(g) = &self.g {
            g.backward(ps, &cache.text, &du, grads)?;
        }
        Ok((dp, dc))
    }
}

#[cfg(test)]
mod tests;
