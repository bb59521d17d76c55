use serde::{Deserialize, Serialize};

use super::{AtmosphericState, GridSpec};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const STD_FLOOR: f64 = 1e-6;

/// Per-variable mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub variables: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population statistics over every grid point of every state.
    pub fn fit<'a>(spec: &GridSpec, states: impl IntoIterator<Item = &'a AtmosphericState>) -> Result<Self> {
        let nv = spec.num_vars();
        let mut sum = vec![0.0; nv];
        let mut sq = vec![0.0; nv];
        let mut count = 0usize;
        for s in states {
            s.validate(spec)?;
            for (v, f) in s.fields.iter().enumerate() {
                for x in f.data() {
                    sum[v] += x;
                    sq[v] += x * x;
                }
            }
            count += spec.cells();
        }
        if count == 0 {
            return Err(Error::Contract("normalisation statistics need at least one state".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m).max(0.0)).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self {
            variables: spec.variables.clone(),
            mean,
            std,
        })
    }

    fn check_covers(&self, spec_vars: usize) -> Result<()> {
        if self.mean.len() < spec_vars || self.std.len() < spec_vars {
            return Err(Error::Contract(format!(
                "statistics cover {} variables, state has {spec_vars}",
                self.mean.len().min(self.std.len())
            )));
        }
        Ok(())
    }
}

pub fn normalize_state(state: &AtmosphericState, stats: &NormStats) -> Result<AtmosphericState> {
    stats.check_covers(state.fields.len())?;
    let fields = state
        .fields
        .iter()
        .enumerate()
        .map(|(v, f)| {
            let (m, s) = (stats.mean[v], stats.std[v].max(STD_FLOOR));
            f.map(|x| (x - m) / s)
        })
        .collect();
    Ok(AtmosphericState {
        sample_id: state.sample_id.clone(),
        time_index: state.time_index,
        fields,
    })
}

pub fn denormalize_state(state: &AtmosphericState, stats: &NormStats) -> Result<AtmosphericState> {
    stats.check_covers(state.fields.len())?;
    let fields = state
        .fields
        .iter()
        .enumerate()
        .map(|(v, f)| {
            let (m, s) = (stats.mean[v], stats.std[v].max(STD_FLOOR));
            f.map(|x| x * s + m)
        })
        .collect();
    Ok(AtmosphericState {
        sample_id: state.sample_id.clone(),
        time_index: state.time_index,
        fields,
    })
}

/// Per-variable, per-grid-point training means.
#[derive(Clone, Debug, PartialEq)]
pub struct ClimatologyTable {
    pub fields: Vec<Tensor>,
}

pub fn compute_climatology<'a>(
    spec: &GridSpec,
    states: impl IntoIterator<Item = &'a AtmosphericState>,
) -> Result<ClimatologyTable> {
    let mut acc: Vec<Tensor> = (0..spec.num_vars())
        .map(|_| Tensor::zeros(&[spec.height, spec.width]))
        .collect();
    let mut n = 0usize;
    for s in states {
        s.validate(spec)?;
        for (a, f) in acc.iter_mut().zip(&s.fields) {
            a.add_assign(f)?;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Contract("climatology of an empty dataset".into()));
    }
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|a| a.scale_in_place(inv));
    Ok(ClimatologyTable { fields: acc })
}
