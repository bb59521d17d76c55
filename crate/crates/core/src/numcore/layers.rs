//! Parameterised building blocks. Each layer stores the names of its
//! parameters; values live in a [`ParamStore`] and gradients are accumulated
//! into a [`Grads`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{matmul, matmul_nt, matmul_tn, softmax_rows, softmax_rows_backward};
use super::{Grads, ParamStore, Tensor};
use crate::error::{shape_err, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Seeded uniform initialisation in `±1/sqrt(fan_in)`.
pub fn init_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Gelu => x.map(gelu),
            Activation::Identity => x.clone(),
        }
    }

    fn backward(self, x: &Tensor, dy: &Tensor) -> Tensor {
        match self {
            Activation::Gelu => {
                let data = x
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&xv, &g)| g * gelu_grad(xv))
                    .collect();
                Tensor::new(x.shape(), data).expect("same shape")
            }
            Activation::Identity => dy.clone(),
        }
    }
}

/// `y = x W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: String,
    pub b: Option<String>,
}

impl Linear {
    pub fn new(prefix: &str) -> Self {
        Self {
            w: format!("{prefix}.w"),
            b: Some(format!("{prefix}.b")),
        }
    }

    pub fn without_bias(prefix: &str) -> Self {
        Self {
            w: format!("{prefix}.w"),
            b: None,
        }
    }

    pub fn init<R: Rng>(&self, ps: &mut ParamStore, rng: &mut R, fan_in: usize, fan_out: usize) -> Result<()> {
        ps.insert(&self.w, init_uniform(rng, &[fan_in, fan_out], fan_in), true)?;
        if let Some(b) = &self.b {
            ps.insert(b, Tensor::zeros(&[1, fan_out]), true)?;
        }
        Ok(())
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut y = matmul(x, ps.value(&self.w)?)?;
        if let Some(b) = &self.b {
            let bias = ps.value(b)?;
            if bias.len() != y.cols() {
                return Err(shape_err(format!("bias {b} has {} entries", bias.len())));
            }
            for i in 0..y.rows() {
                for (v, bv) in y.row_mut(i).iter_mut().zip(bias.data()) {
                    *v += bv;
                }
            }
        }
        Ok(y)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&self, ps: &ParamStore, x: &Tensor, dy: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        grads.accumulate(&self.w, matmul_tn(x, dy)?);
        if let Some(b) = &self.b {
            grads.accumulate(b, dy.col_sums());
        }
        matmul_nt(dy, ps.value(&self.w)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: String,
    pub bias: String,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(prefix: &str) -> Self {
        Self {
            gain: format!("{prefix}.g"),
            bias: format!("{prefix}.b"),
        }
    }

    pub fn init(&self, ps: &mut ParamStore, d: usize) -> Result<()> {
        ps.insert(&self.gain, Tensor::full(&[1, d], 1.0), true)?;
        ps.insert(&self.bias, Tensor::zeros(&[1, d]), true)
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let (r, c) = x.expect_2d("layer_norm")?;
        let g = ps.value(&self.gain)?.data();
        let b = ps.value(&self.bias)?.data();
        let mut xhat = x.clone();
        let mut y = x.clone();
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = x.row(i);
            let mean = row.iter().fold(0.0, |a, v| a + v) / c as f64;
            let var = row.iter().fold(0.0, |a, v| a + (v - mean) * (v - mean)) / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            let xr = xhat.row_mut(i);
            for (j, v) in xr.iter_mut().enumerate() {
                *v = (row[j] - mean) * is;
            }
            let xr = xhat.row(i).to_vec();
            for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                *v = xr[j] * g[j] + b[j];
            }
        }
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(&self, ps: &ParamStore, cache: &LayerNormCache, dy: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let g = ps.value(&self.gain)?.data();
        let (r, c) = (dy.rows(), dy.cols());
        let mut dgain = vec![0.0; c];
        let mut dbias = vec![0.0; c];
        let mut dx = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let (xh, gy) = (cache.xhat.row(i), dy.row(i));
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for j in 0..c {
                dgain[j] += gy[j] * xh[j];
                dbias[j] += gy[j];
                let dxh = gy[j] * g[j];
                sum_d += dxh;
                sum_dx += dxh * xh[j];
            }
            let (mean_d, mean_dx) = (sum_d / c as f64, sum_dx / c as f64);
            let is = cache.inv_std[i];
            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                *o = is * (gy[j] * g[j] - mean_d - xh[j] * mean_dx);
            }
        }
        grads.accumulate(&self.gain, Tensor::new(&[1, c], dgain)?);
        grads.accumulate(&self.bias, Tensor::new(&[1, c], dbias)?);
        Ok(dx)
    }
}

/// Two-layer perceptron `fc2(act(fc1(x)))`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub act: Activation,
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    x: Tensor,
    pre: Tensor,
    post: Tensor,
}

impl Mlp {
    pub fn new(prefix: &str, act: Activation) -> Self {
        Self {
            fc1: Linear::new(&format!("{prefix}.fc1")),
            fc2: Linear::new(&format!("{prefix}.fc2")),
            act,
        }
    }

    pub fn init<R: Rng>(&self, ps: &mut ParamStore, rng: &mut R, d_in: usize, hidden: usize, d_out: usize) -> Result<()> {
        self.fc1.init(ps, rng, d_in, hidden)?;
        self.fc2.init(ps, rng, hidden, d_out)
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        let pre = self.fc1.forward(ps, x)?;
        let post = self.act.apply(&pre);
        let y = self.fc2.forward(ps, &post)?;
        Ok((
            y,
            MlpCache {
                x: x.clone(),
                pre,
                post,
            },
        ))
    }

    pub fn backward(&self, ps: &ParamStore, cache: &MlpCache, dy: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let dpost = self.fc2.backward(ps, &cache.post, dy, grads)?;
        let dpre = self.act.backward(&cache.pre, &dpost);
        self.fc1.backward(ps, &cache.x, &dpre, grads)
    }
}

/// Multi-head scaled dot-product attention with bias-free projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    q_in: Tensor,
    kv_in: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    weights: Vec<Tensor>,
    merged: Tensor,
}

impl AttentionCache {
    /// Per-head attention weights (queries × keys).
    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }
}

fn head_slice(x: &Tensor, h: usize, dh: usize) -> Tensor {
    let r = x.rows();
    let mut out = Vec::with_capacity(r * dh);
    for i in 0..r {
        out.extend_from_slice(&x.row(i)[h * dh..(h + 1) * dh]);
    }
    Tensor::new(&[r, dh], out).expect("head slice")
}

fn head_scatter(dst: &mut Tensor, src: &Tensor, h: usize, dh: usize) {
    for i in 0..src.rows() {
        dst.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(src.row(i));
    }
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, heads: usize) -> Self {
        Self {
            wq: Linear::without_bias(&format!("{prefix}.wq")),
            wk: Linear::without_bias(&format!("{prefix}.wk")),
            wv: Linear::without_bias(&format!("{prefix}.wv")),
            wo: Linear::without_bias(&format!("{prefix}.wo")),
            heads,
        }
    }

    pub fn init<R: Rng>(&self, ps: &mut ParamStore, rng: &mut R, d: usize) -> Result<()> {
        if self.heads == 0 || d % self.heads != 0 {
            return Err(shape_err(format!("width {d} not divisible by {} heads", self.heads)));
        }
        for l in [&self.wq, &self.wk, &self.wv, &self.wo] {
            l.init(ps, rng, d, d)?;
        }
        Ok(())
    }

    /// Queries from `q_in`, keys and values from `kv_in`.
    pub fn forward(&self, ps: &ParamStore, q_in: &Tensor, kv_in: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let q = self.wq.forward(ps, q_in)?;
        let k = self.wk.forward(ps, kv_in)?;
        let v = self.wv.forward(ps, kv_in)?;
        let d = q.cols();
        if d % self.heads != 0 || k.cols() != d {
            return Err(shape_err(format!("attention width {d} with {} heads", self.heads)));
        }
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut merged = Tensor::zeros(&[q.rows(), d]);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = (head_slice(&q, h, dh), head_slice(&k, h, dh), head_slice(&v, h, dh));
            let a = softmax_rows(&matmul_nt(&qh, &kh)?.scale(scale))?;
            head_scatter(&mut merged, &matmul(&a, &vh)?, h, dh);
            weights.push(a);
        }
        let out = self.wo.forward(ps, &merged)?;
        Ok((
            out,
            AttentionCache {
                q_in: q_in.clone(),
                kv_in: kv_in.clone(),
                q,
                k,
                v,
                weights,
                merged,
            },
        ))
    }

    /// Returns gradients for `(q_in, kv_in)`.
    pub fn backward(&self, ps: &ParamStore, c: &AttentionCache, dy: &Tensor, grads: &mut Grads) -> Result<(Tensor, Tensor)> {
        let dmerged = self.wo.backward(ps, &c.merged, dy, grads)?;
        let d = c.q.cols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(c.q.shape());
        let mut dk = Tensor::zeros(c.k.shape());
        let mut dv = Tensor::zeros(c.v.shape());
        for h in 0..self.heads {
            let (qh, kh, vh) = (head_slice(&c.q, h, dh), head_slice(&c.k, h, dh), head_slice(&c.v, h, dh));
            let a = &c.weights[h];
            let dout = head_slice(&dmerged, h, dh);
            let da = matmul_nt(&dout, &vh)?;
            head_scatter(&mut dv, &matmul_tn(a, &dout)?, h, dh);
            let ds = softmax_rows_backward(a, &da).scale(scale);
            head_scatter(&mut dq, &matmul(&ds, &kh)?, h, dh);
            head_scatter(&mut dk, &matmul_tn(&ds, &qh)?, h, dh);
        }
        let dq_in = self.wq.backward(ps, &c.q_in, &dq, grads)?;
        let mut dkv = self.wk.backward(ps, &c.kv_in, &dk, grads)?;
        dkv.add_assign(&self.wv.backward(ps, &c.kv_in, &dv, grads)?)?;
        Ok((dq_in, dkv))
    }
}
