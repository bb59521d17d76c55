//! Seeded "weather-like" trajectories.
//!
//! A geopotential-like field is a sum of Gaussian blobs. Each step rotates it
//! about the grid centre (semi-Lagrangian, bilinear, periodic) and then applies
//! one explicit periodic diffusion step. Every sample draws a hidden rotation
//! sense; it is only visible through the oracle annotations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AtmosphericState, Dataset, GridSpec, Sequence};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Radians per step.
    pub rotation_rate: f64,
    /// Explicit diffusion coefficient in cells² per step (stable below 0.25).
    pub diffusivity: f64,
    /// Temperature = coupling · Φ + meridional term.
    pub temperature_coupling: f64,
    pub meridional_gradient: f64,
    pub max_extra_blobs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rotation_rate: 0.25,
            diffusivity: 0.05,
            temperature_coupling: 0.8,
            meridional_gradient: 1.5,
            max_extra_blobs: 2,
        }
    }
}

/// Ground truth for one blob at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobTruth {
    pub variable: String,
    pub row: usize,
    pub col: usize,
    pub amplitude: f64,
    /// Rotation sense of the sample: +1 counterclockwise, -1 clockwise.
    pub sign: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleAnnotation {
    pub sample_id: String,
    pub time_index: i64,
    /// Dominant blob first.
    pub blobs: Vec<BlobTruth>,
}

impl OracleAnnotation {
    pub fn rotation_sign(&self) -> Option<i8> {
        self.blobs.first().map(|b| b.sign)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// One entry per state, in dataset order.
    pub annotations: Vec<OracleAnnotation>,
}

impl SyntheticData {
    pub fn annotation(&self, sample_id: &str, time_index: i64) -> Option<&OracleAnnotation> {
        self.annotations
            .iter()
            .find(|a| a.sample_id == sample_id && a.time_index == time_index)
    }
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    row: f64,
    col: f64,
    amplitude: f64,
    sigma: f64,
}

pub fn gen_synthetic(seed: u64, n_samples: usize, spec: &GridSpec, horizon_steps: usize) -> Result<SyntheticData> {
    gen_synthetic_with(&SynthConfig::default(), seed, n_samples, spec, horizon_steps)
}

pub fn gen_synthetic_with(
    cfg: &SynthConfig,
    seed: u64,
    n_samples: usize,
    spec: &GridSpec,
    horizon_steps: usize,
) -> Result<SyntheticData> {
    spec.validate()?;
    if horizon_steps == 0 {
        return Err(Error::Contract("horizon_steps must be at least 1".into()));
    }
    if spec.num_vars() != 4 {
        return Err(Error::Contract(format!(
            "the synthetic generator fills 4 variables (geopotential, temperature, u, v); grid has {}",
            spec.num_vars()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height, spec.width);
    let centre = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let reach = (h.min(w) as f64 / 2.0 - 2.0).max(1.0);
    let mut sequences = Vec::with_capacity(n_samples);
    let mut annotations = Vec::with_capacity(n_samples * (horizon_steps + 1));
    for idx in 0..n_samples {
        let sample_id = format!("s{seed}-{idx:05}");
        let sign: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
        let omega = f64::from(sign) * cfg.rotation_rate;
        let blobs = draw_blobs(&mut rng, cfg, centre, reach);
        let mut phi = render_blobs(&blobs, h, w);
        let mut states = Vec::with_capacity(horizon_steps + 1);
        for k in 0..=horizon_steps {
            if k > 0 {
                phi = diffuse_periodic(&rotate_field(&phi, omega, centre), cfg.diffusivity);
            }
            states.push(AtmosphericState {
                sample_id: sample_id.clone(),
                time_index: k as i64,
                fields: derived_fields(&phi, spec, cfg),
            });
            annotations.push(OracleAnnotation {
                sample_id: sample_id.clone(),
                time_index: k as i64,
                blobs: blobs
                    .iter()
                    .map(|b| blob_truth(b, k, omega, sign, centre, cfg.diffusivity, h, w))
                    .collect(),
            });
        }
        sequences.push(Sequence { sample_id, states });
    }
    Ok(SyntheticData {
        dataset: Dataset {
            spec: spec.clone(),
            sequences,
        },
        annotations,
    })
}

fn draw_blobs(rng: &mut ChaCha8Rng, cfg: &SynthConfig, centre: (f64, f64), reach: f64) -> Vec<Blob> {
    let place = |rng: &mut ChaCha8Rng, r_lo: f64| {
        let radius = rng.random_range(r_lo..reach);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        (
            (centre.0 - radius * angle.sin()).round(),
            (centre.1 + radius * angle.cos()).round(),
        )
    };
    let (row, col) = place(rng, (reach * 0.4).min(reach - 0.5));
    let mut blobs = vec![Blob {
        row,
        col,
        amplitude: rng.random_range(1.5..3.0),
        sigma: rng.random_range(1.6..2.4),
    }];
    let extra = rng.random_range(0..=cfg.max_extra_blobs);
    for _ in 0..extra {
        let (row, col) = place(rng, 0.0);
        let mag = rng.random_range(0.3..0.9);
        blobs.push(Blob {
            row,
            col,
            amplitude: if rng.random_bool(0.5) { mag } else { -mag },
            sigma: rng.random_range(1.5..3.0),
        });
    }
    blobs
}

fn wrap_delta(d: f64, n: usize) -> f64 {
    let n = n as f64;
    d - n * (d / n).round()
}

fn render_blobs(blobs: &[Blob], h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            let v = blobs.iter().fold(0.0, |acc, b| {
                let dr = wrap_delta(i as f64 - b.row, h);
                let dc = wrap_delta(j as f64 - b.col, w);
                acc + b.amplitude * (-(dr * dr + dc * dc) / (2.0 * b.sigma * b.sigma)).exp()
            });
            out.set(i, j, v);
        }
    }
    out
}

/// Rotates a grid point `(row, col)` by `theta` (counterclockwise on the map,
/// rows increasing southward).
fn rotate_point(row: f64, col: f64, theta: f64, centre: (f64, f64)) -> (f64, f64) {
    let (x, y) = (col - centre.1, centre.0 - row);
    let (s, c) = theta.sin_cos();
    let (xr, yr) = (x * c - y * s, x * s + y * c);
    (centre.0 - yr, centre.1 + xr)
}

fn sample_bilinear(f: &Tensor, row: f64, col: f64) -> f64 {
    let (h, w) = (f.rows() as isize, f.cols() as isize);
    let (r0, c0) = (row.floor(), col.floor());
    let (fr, fc) = (row - r0, col - c0);
    let at = |r: isize, c: isize| f.at(r.rem_euclid(h) as usize, c.rem_euclid(w) as usize);
    let (r0, c0) = (r0 as isize, c0 as isize);
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}

fn rotate_field(f: &Tensor, omega: f64, centre: (f64, f64)) -> Tensor {
    let (h, w) = (f.rows(), f.cols());
    let mut out = Tensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            let (r, c) = rotate_point(i as f64, j as f64, -omega, centre);
            out.set(i, j, sample_bilinear(f, r, c));
        }
    }
    out
}

/// One explicit five-point diffusion step with periodic boundaries. Conserves
/// the field sum up to rounding.
pub fn diffuse_periodic(f: &Tensor, kappa: f64) -> Tensor {
    let (h, w) = (f.rows(), f.cols());
    let mut out = f.clone();
    for i in 0..h {
        for j in 0..w {
            let c = f.at(i, j);
            let lap = f.at((i + h - 1) % h, j) + f.at((i + 1) % h, j) + f.at(i, (j + w - 1) % w)
                + f.at(i, (j + 1) % w)
                - 4.0 * c;
            out.set(i, j, c + kappa * lap);
        }
    }
    out
}

fn derived_fields(phi: &Tensor, spec: &GridSpec, cfg: &SynthConfig) -> Vec<Tensor> {
    let (h, w) = (spec.height, spec.width);
    let mut temp = phi.scale(cfg.temperature_coupling);
    for i in 0..h {
        let m = cfg.meridional_gradient * spec.latitudes[i].to_radians().cos();
        temp.row_mut(i).iter_mut().for_each(|v| *v += m);
    }
    let mut u = Tensor::zeros(&[h, w]);
    let mut v = Tensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            u.set(i, j, -(phi.at((i + 1) % h, j) - phi.at((i + h - 1) % h, j)) / 2.0);
            v.set(i, j, (phi.at(i, (j + 1) % w) - phi.at(i, (j + w - 1) % w)) / 2.0);
        }
    }
    vec![phi.clone(), temp, u, v]
}

#[allow(clippy::too_many_arguments)]
fn blob_truth(b: &Blob, k: usize, omega: f64, sign: i8, centre: (f64, f64), kappa: f64, h: usize, w: usize) -> BlobTruth {
    let (r, c) = rotate_point(b.row, b.col, omega * k as f64, centre);
    let s2 = b.sigma * b.sigma;
    BlobTruth {
        variable: "z".into(),
        row: (r.round() as isize).rem_euclid(h as isize) as usize,
        col: (c.round() as isize).rem_euclid(w as isize) as usize,
        amplitude: b.amplitude * s2 / (s2 + 2.0 * kappa * k as f64),
        sign,
    }
}
