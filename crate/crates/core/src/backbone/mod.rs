//! Toy patch-token forecaster: patch embedding, a learned class token,
//! position embeddings and pre-norm transformer blocks, plus the linear
//! baseline decoding head.

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CKPT_MAGIC};

use crate::error::{shape_err, Result};
use crate::fieldgrid::{AtmosphericState, GridSpec};
use crate::numcore::layers::{init_uniform, Activation, AttentionCache, LayerNorm, LayerNormCache, Linear, Mlp, MlpCache, MultiHeadAttention};
use crate::numcore::ops::concat_rows;
use crate::numcore::{Grads, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            patch: 4,
            dim: 32,
            heads: 4,
            depth: 2,
            mlp_ratio: 4,
        }
    }
}

/// Patch grid geometry for one grid spec.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchLayout {
    pub height: usize,
    pub width: usize,
    pub vars: usize,
    pub patch: usize,
}

impl PatchLayout {
    pub fn new(spec: &GridSpec, patch: usize) -> Result<Self> {
        if patch == 0 || spec.height % patch != 0 || spec.width % patch != 0 {
            return Err(shape_err(format!(
                "patch size {patch} does not divide the {}x{} grid",
                spec.height, spec.width
            )));
        }
        Ok(Self {
            height: spec.height,
            width: spec.width,
            vars: spec.num_vars(),
            patch,
        })
    }

    pub fn grid_rows(&self) -> usize {
        self.height / self.patch
    }

    pub fn grid_cols(&self) -> usize {
        self.width / self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.vars
    }

    /// `(variable, row, col)` of entry `k` of patch `n`.
    fn locate(&self, n: usize, k: usize) -> (usize, usize, usize) {
        let p = self.patch;
        let (pr, pc) = (n / self.grid_cols(), n % self.grid_cols());
        let (v, rem) = (k / (p * p), k % (p * p));
        (v, pr * p + rem / p, pc * p + rem % p)
    }

    /// Per-entry latitude weight in patch layout.
    pub fn weights(&self, lat_weights: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&[self.num_patches(), self.patch_len()]);
        for n in 0..self.num_patches() {
            for (k, o) in out.row_mut(n).iter_mut().enumerate() {
                *o = lat_weights.data()[self.locate(n, k).1];
            }
        }
        out
    }
}

/// Non-overlapping patches in row-major order, flattened `[variable][row][col]`.
pub fn patchify(fields: &[Tensor], layout: &PatchLayout) -> Result<Tensor> {
    if fields.len() != layout.vars || fields.iter().any(|f| f.shape() != [layout.height, layout.width]) {
        return Err(shape_err(format!(
            "expected {} fields of {}x{}",
            layout.vars, layout.height, layout.width
        )));
    }
    let mut out = Tensor::zeros(&[layout.num_patches(), layout.patch_len()]);
    for n in 0..layout.num_patches() {
        for (k, o) in out.row_mut(n).iter_mut().enumerate() {
            let (v, r, c) = layout.locate(n, k);
            *o = fields[v].at(r, c);
        }
    }
    Ok(out)
}

pub fn unpatchify(patches: &Tensor, layout: &PatchLayout) -> Result<Vec<Tensor>> {
    if patches.shape() != [layout.num_patches(), layout.patch_len()] {
        return Err(shape_err(format!("patch matrix has shape {:?}", patches.shape())));
    }
    let mut fields = vec![Tensor::zeros(&[layout.height, layout.width]); layout.vars];
    for n in 0..layout.num_patches() {
        for (k, &x) in patches.row(n).iter().enumerate() {
            let (v, r, c) = layout.locate(n, k);
            fields[v].set(r, c, x);
        }
    }
    Ok(fields)
}

/// Fields of a state rebuilt from patch predictions (values left as given).
pub fn state_from_patches(
    patches: &Tensor,
    layout: &PatchLayout,
    sample_id: &str,
    time_index: i64,
) -> Result<AtmosphericState> {
    Ok(AtmosphericState {
        sample_id: sample_id.to_string(),
        time_index,
        fields: unpatchify(patches, layout)?,
    })
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    mlp: Mlp,
}

#[derive(Clone, Debug)]
struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    mlp: MlpCache,
}

impl Block {
    fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        let (n1, ln1) = self.ln1.forward(ps, x)?;
        let (a, attn) = self.attn.forward(ps, &n1, &n1)?;
        let h = x.add(&a)?;
        let (n2, ln2) = self.ln2.forward(ps, &h)?;
        let (m, mlp) = self.mlp.forward(ps, &n2)?;
        Ok((h.add(&m)?, BlockCache { ln1, attn, ln2, mlp }))
    }

    fn backward(&self, ps: &ParamStore, c: &BlockCache, dy: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let dn2 = self.mlp.backward(ps, &c.mlp, dy, grads)?;
        let mut dh = dy.clone();
        dh.add_assign(&self.ln2.backward(ps, &c.ln2, &dn2, grads)?)?;
        let (dq, dkv) = self.attn.backward(ps, &c.attn, &dh, grads)?;
        let dn1 = dq.add(&dkv)?;
        let mut dx = dh;
        dx.add_assign(&self.ln1.backward(ps, &c.ln1, &dn1, grads)?)?;
        Ok(dx)
    }
}

/// Names of the backbone's parameters; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub layout: PatchLayout,
    cls: String,
    pos: String,
    embed: Linear,
    blocks: Vec<Block>,
}

#[derive(Clone, Debug)]
pub struct BackboneCache {
    patches: Tensor,
    blocks: Vec<BlockCache>,
}

/// Outputs of [`Backbone::encode`].
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Patch tokens, `N × d`.
    pub p: Tensor,
    /// Class token, `1 × d`.
    pub c: Tensor,
    pub cache: BackboneCache,
}

impl Backbone {
    pub fn new(config: BackboneConfig, spec: &GridSpec) -> Result<Self> {
        let layout = PatchLayout::new(spec, config.patch)?;
        if config.heads == 0 || config.dim % config.heads != 0 {
            return Err(shape_err(format!("width {} not divisible by {} heads", config.dim, config.heads)));
        }
        let blocks = (0..config.depth)
            .map(|i| Block {
                ln1: LayerNorm::new(&format!("bb.block{i}.ln1")),
                attn: MultiHeadAttention::new(&format!("bb.block{i}.attn"), config.heads),
                ln2: LayerNorm::new(&format!("bb.block{i}.ln2")),
                mlp: Mlp::new(&format!("bb.block{i}.mlp"), Activation::Gelu),
            })
            .collect();
        Ok(Self {
            config,
            layout,
            cls: "bb.cls".into(),
            pos: "bb.pos".into(),
            embed: Linear::new("bb.embed"),
            blocks,
        })
    }

    pub fn init<R: Rng>(&self, ps: &mut ParamStore, rng: &mut R) -> Result<()> {
        let d = self.config.dim;
        let n = self.layout.num_patches();
        self.embed.init(ps, rng, self.layout.patch_len(), d)?;
        ps.insert(&self.cls, init_uniform(rng, &[1, d], d), true)?;
        ps.insert(&self.pos, init_uniform(rng, &[n + 1, d], d), true)?;
        for b in &self.blocks {
            b.ln1.init(ps, d)?;
            b.attn.init(ps, rng, d)?;
            b.ln2.init(ps, d)?;
            b.mlp.init(ps, rng, d, d * self.config.mlp_ratio, d)?;
        }
        Ok(())
    }

    pub fn position_param(&self) -> &str {
        &self.pos
    }

    pub fn class_param(&self) -> &str {
        &self.cls
    }

    /// Encodes a patch matrix into `(P, C)`.
    pub fn encode(&self, ps: &ParamStore, patches: &Tensor) -> Result<Encoded> {
        let e = self.embed.forward(ps, patches)?;
        let mut x = concat_rows(&[ps.value(&self.cls)?, &e])?;
        x.add_assign(ps.value(&self.pos)?)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(ps, &x)?;
            caches.push(c);
            x = y;
        }
        let n = x.rows();
        Ok(Encoded {
            c: x.slice_rows(0, 1),
            p: x.slice_rows(1, n),
            cache: BackboneCache {
                patches: patches.clone(),
                blocks: caches,
            },
        })
    }

    pub fn backward(&self, ps: &ParamStore, cache: &BackboneCache, dp: &Tensor, dc: &Tensor, grads: &mut Grads) -> Result<()> {
        let mut dx = concat_rows(&[dc, dp])?;
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dx = b.backward(ps, c, &dx, grads)?;
        }
        grads.accumulate(&self.pos, dx.clone());
        grads.accumulate(&self.cls, dx.slice_rows(0, 1));
        self.embed.backward(ps, &cache.patches, &dx.slice_rows(1, dx.rows()), grads)?;
        Ok(())
    }
}

/// Per-patch linear map from tokens to patch pixels.
#[derive(Clone, Debug)]
pub struct BaselineHead {
    pub linear: Linear,
}

impl BaselineHead {
    pub fn new() -> Self {
        Self {
            linear: Linear::new("head"),
        }
    }

    pub fn init<R: Rng>(&self, ps: &mut ParamStore, rng: &mut R, dim: usize, patch_len: usize) -> Result<()> {
        self.linear.init(ps, rng, dim, patch_len)
    }

    pub fn forward(&self, ps: &ParamStore, p: &Tensor) -> Result<Tensor> {
        self.linear.forward(ps, p)
    }

    pub fn backward(&self, ps: &ParamStore, p: &Tensor, dy: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        self.linear.backward(ps, p, dy, grads)
    }
}

impl Default for BaselineHead {
    fn default() -> Self {
        Self::new()
    }
}
