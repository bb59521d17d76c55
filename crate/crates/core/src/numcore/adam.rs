use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every trainable parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected adaptive-moment update. Non-trainable entries are left alone.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let names: Vec<String> = params
        .iter()
        .filter(|(_, e)| e.trainable)
        .map(|(n, _)| n.clone())
        .collect();
    for name in &names {
        if params.entry(name).and_then(|e| e.grad.as_ref()).is_none() {
            return Err(Error::Contract(format!("missing gradient for {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for name in names {
        let entry = params.entry_mut(&name).expect("listed above");
        let grad = entry.grad.as_ref().expect("checked above");
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let v = state
            .second
            .entry(name)
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let md = m.data_mut();
        let vd = v.data_mut();
        let w = entry.value.data_mut();
        for (k, &g) in grad.data().iter().enumerate() {
            md[k] = cfg.beta1 * md[k] + (1.0 - cfg.beta1) * g;
            vd[k] = cfg.beta2 * vd[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = md[k] / bc1;
            let v_hat = vd[k] / bc2;
            w[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Grads;

    fn scalar_store(w: f64, trainable: bool) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::full(&[1], w), trainable).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut ps = scalar_store(1.25, true);
        ps.set_grads(&Grads::new()).unwrap();
        let mut st = AdamState::new();
        adam_step(&mut ps, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(ps.value("w").unwrap().data(), &[1.25]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = scalar_store(1.0, true);
        let mut g = Grads::new();
        g.accumulate("w", Tensor::full(&[1], 1.0));
        ps.set_grads(&g).unwrap();
        let mut st = AdamState::new();
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut ps, &mut st, &cfg).unwrap();
        assert!((ps.value("w").unwrap().data()[0] - 0.9).abs() < 1e-6);
        assert_eq!(st.step(), 1);
        adam_step(&mut ps, &mut st, &cfg).unwrap();
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn frozen_entries_untouched_and_missing_grad_rejected() {
        let mut ps = scalar_store(2.0, false);
        ps.insert("x", Tensor::full(&[1], 0.0), true).unwrap();
        let mut st = AdamState::new();
        assert!(matches!(
            adam_step(&mut ps, &mut st, &AdamConfig::default()),
            Err(Error::Contract(_))
        ));
        let mut g = Grads::new();
        g.accumulate("x", Tensor::full(&[1], 3.0));
        ps.set_grads(&g).unwrap();
        adam_step(&mut ps, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(ps.value("w").unwrap().data(), &[2.0]);
        assert!(ps.value("x").unwrap().data()[0] < 0.0);
    }
}
