//! Gridded multi-variable states, area weights, standardisation,
//! climatology, a seeded synthetic generator and the binary grid format.

mod gridfile;
mod stats;
mod synth;

use serde::{Deserialize, Serialize};

pub use gridfile::{decode_grid, encode_grid, read_grid_file, write_grid_file, GRID_MAGIC};
pub use stats::{compute_climatology, denormalize_state, normalize_state, ClimatologyTable, NormStats};
pub use synth::{diffuse_periodic, gen_synthetic, gen_synthetic_with, BlobTruth, OracleAnnotation, SynthConfig, SyntheticData};

use crate::error::{shape_err, Error, Result};
use crate::numcore::Tensor;

/// Geometry and variable list of an equiangular latitude/longitude grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    /// Degrees, strictly decreasing (north first).
    pub latitudes: Vec<f64>,
    /// Degrees in `[0, 360)`.
    pub longitudes: Vec<f64>,
    pub variables: Vec<String>,
}

impl GridSpec {
    /// Cell-centred equiangular grid: latitudes `90 - (i + 1/2)·180/H`.
    pub fn equiangular(height: usize, width: usize, variables: &[&str]) -> Result<Self> {
        let latitudes = (0..height)
            .map(|i| 90.0 - (i as f64 + 0.5) * 180.0 / height as f64)
            .collect();
        let longitudes = (0..width).map(|j| j as f64 * 360.0 / width as f64).collect();
        let spec = Self {
            height,
            width,
            latitudes,
            longitudes,
            variables: variables.iter().map(|s| s.to_string()).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 16×16 grid with variables `z, t, u, v`.
    pub fn desk_default() -> Self {
        Self::equiangular(16, 16, &["z", "t", "u", "v"]).expect("valid default grid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(shape_err("grid dimensions must be positive"));
        }
        if self.latitudes.len() != self.height || self.longitudes.len() != self.width {
            return Err(shape_err(format!(
                "grid {}x{} with {} latitudes and {} longitudes",
                self.height,
                self.width,
                self.latitudes.len(),
                self.longitudes.len()
            )));
        }
        if self.latitudes.iter().any(|l| l.abs() > 90.0) {
            return Err(Error::Contract("latitude outside [-90, 90]".into()));
        }
        if self.latitudes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Contract("latitudes must be strictly decreasing".into()));
        }
        if self.longitudes.iter().any(|l| !(0.0..360.0).contains(l)) {
            return Err(Error::Contract("longitude outside [0, 360)".into()));
        }
        if self.variables.is_empty() {
            return Err(Error::Contract("grid has no variables".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.variables {
            if v.is_empty() || v.contains([',', ' ', '\n']) || !seen.insert(v) {
                return Err(Error::Contract(format!("bad or duplicate variable name {v:?}")));
            }
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

/// One multi-variable snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct AtmosphericState {
    pub sample_id: String,
    /// Lead index in 6-hour units.
    pub time_index: i64,
    /// One `H × W` field per variable, in grid-spec order.
    pub fields: Vec<Tensor>,
}

impl AtmosphericState {
    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        if self.sample_id.is_empty() || self.sample_id.contains('\n') {
            return Err(Error::Contract("sample_id must be a nonempty single line".into()));
        }
        if self.fields.len() != spec.num_vars() {
            return Err(shape_err(format!(
                "state {} has {} fields, grid has {} variables",
                self.sample_id,
                self.fields.len(),
                spec.num_vars()
            )));
        }
        for (f, name) in self.fields.iter().zip(&spec.variables) {
            if f.shape() != [spec.height, spec.width] {
                return Err(shape_err(format!(
                    "field {name} of {} has shape {:?}",
                    self.sample_id,
                    f.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn field<'a>(&'a self, spec: &GridSpec, name: &str) -> Option<&'a Tensor> {
        spec.var_index(name).map(|i| &self.fields[i])
    }
}

/// A sample trajectory: consecutive states sharing one sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub sample_id: String,
    pub states: Vec<AtmosphericState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: GridSpec,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            sequences: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.sequences.iter().map(|s| s.states.len()).sum()
    }

    pub fn states(&self) -> impl Iterator<Item = &AtmosphericState> {
        self.sequences.iter().flat_map(|s| s.states.iter())
    }

    /// Splits off the first `n` sequences.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.sequences.len());
        (
            Dataset {
                spec: self.spec.clone(),
                sequences: self.sequences[..n].to_vec(),
            },
            Dataset {
                spec: self.spec.clone(),
                sequences: self.sequences[n..].to_vec(),
            },
        )
    }
}

/// Area weights `cos(lat) / mean(cos(lat))`, so their mean is one.
pub fn latitude_weights(spec: &GridSpec) -> Tensor {
    let cos: Vec<f64> = spec.latitudes.iter().map(|l| l.to_radians().cos()).collect();
    let mean = cos.iter().sum::<f64>() / cos.len() as f64;
    Tensor::new(&[cos.len()], cos.iter().map(|c| c / mean).collect()).expect("nonempty latitudes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_with_lats(lats: &[f64]) -> GridSpec {
        GridSpec {
            height: lats.len(),
            width: 1,
            latitudes: lats.to_vec(),
            longitudes: vec![0.0],
            variables: vec!["z".into()],
        }
    }

    #[test]
    fn default_grid_layout() {
        let s = GridSpec::desk_default();
        assert_eq!(s.latitudes[0], 84.375);
        assert_eq!(s.latitudes[15], -84.375);
        assert_eq!(s.variables, ["z", "t", "u", "v"]);
    }

    #[test]
    fn weight_examples() {
        let w = latitude_weights(&spec_with_lats(&[45.0, -45.0]));
        assert!(w.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let w = latitude_weights(&spec_with_lats(&[60.0, 0.0]));
        assert!((w.data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.data()[1] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weights_have_unit_mean() {
        for h in [1, 2, 5, 16, 33] {
            let s = GridSpec::equiangular(h, 4, &["a"]).unwrap();
            assert!((latitude_weights(&s).mean() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = GridSpec::desk_default();
        s.variables.push("z".into());
        assert!(s.validate().is_err());
        let mut s = GridSpec::desk_default();
        s.latitudes.reverse();
        assert!(s.validate().is_err());
    }
}
