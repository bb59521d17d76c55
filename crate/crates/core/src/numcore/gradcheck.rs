use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Grads, ParamStore};
use crate::error::{Error, Result};

/// Denominator floor for relative errors. Central differences at `eps = 1e-5`
/// carry rounding noise near `1e-11·|f|`, so gradients smaller than this are
/// effectively compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(analytic, numeric)` at the worst coordinate.
    pub worst_pair: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_err))
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn scalars_checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

/// Which scalar coordinates of each tensor get perturbed.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// Up to `per_tensor` seeded random coordinates of every tensor.
    Sampled { per_tensor: usize, seed: u64 },
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` gradients against central differences of `loss`.
///
/// Every trainable parameter is visited; `loss` must be deterministic.
pub fn grad_check<F>(
    params: &mut ParamStore,
    analytic: &Grads,
    eps: f64,
    tolerance: f64,
    coverage: Coverage,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("grad_check eps must be positive, got {eps}")));
    }
    let names: Vec<String> = params
        .iter()
        .filter(|(_, e)| e.trainable)
        .map(|(n, _)| n.clone())
        .collect();
    let mut report = GradCheckReport {
        params: Vec::with_capacity(names.len()),
        tolerance,
        passed: true,
    };
    for (idx, name) in names.iter().enumerate() {
        let n = params.value(name)?.len();
        let coords: Vec<usize> = match coverage {
            Coverage::All => (0..n).collect(),
            Coverage::Sampled { per_tensor, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
                let mut c = sample(&mut rng, n, per_tensor.min(n)).into_vec();
                c.sort_unstable();
                c
            }
        };
        let mut worst = 0.0f64;
        let mut worst_pair = (0.0, 0.0);
        for &k in &coords {
            let original = params.value(name)?.data()[k];
            let f_plus = perturbed(params, name, k, original + eps, &mut loss)?;
            let f_minus = perturbed(params, name, k, original - eps, &mut loss)?;
            restore(params, name, k, original);
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let exact = analytic.get(name).map_or(0.0, |g| g.data()[k]);
            let e = relative_error(exact, numeric);
            if e > worst {
                worst = e;
                worst_pair = (exact, numeric);
            }
        }
        if worst > tolerance {
            report.passed = false;
        }
        report.params.push(ParamCheck {
            name: name.clone(),
            checked: coords.len(),
            max_rel_err: worst,
            worst_pair,
        });
    }
    Ok(report)
}

fn perturbed<F>(params: &mut ParamStore, name: &str, k: usize, v: f64, loss: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    restore(params, name, k, v);
    let f = loss(params)?;
    if !f.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss while perturbing {name}[{k}]")));
    }
    Ok(f)
}

fn restore(params: &mut ParamStore, name: &str, k: usize, v: f64) {
    let entry = params.entry_mut(name).expect("name taken from the store");
    entry.value.data_mut()[k] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn store(w: f64) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::full(&[1], w), true).unwrap();
        ps
    }

    fn square(ps: &ParamStore) -> Result<f64> {
        let w = ps.value("w")?.data()[0];
        Ok(w * w)
    }

    #[test]
    fn quadratic_matches() {
        let mut ps = store(3.0);
        let mut g = Grads::new();
        g.accumulate("w", Tensor::full(&[1], 6.0));
        let r = grad_check(&mut ps, &g, 1e-5, 1e-4, Coverage::All, square).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_err() < 1e-8, "{}", r.max_rel_err());
        assert_eq!(ps.value("w").unwrap().data(), &[3.0]);
    }

    #[test]
    fn constant_loss_passes_with_zero_gradient() {
        let mut ps = store(-1.0);
        let r = grad_check(&mut ps, &Grads::new(), 1e-5, 1e-4, Coverage::All, |_| Ok(4.0)).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_rel_err(), 0.0);
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let mut ps = store(3.0);
        let mut g = Grads::new();
        g.accumulate("w", Tensor::full(&[1], 12.0));
        let r = grad_check(&mut ps, &g, 1e-5, 1e-4, Coverage::All, square).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst().unwrap().name, "w");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut ps = store(1.0);
        let res = grad_check(&mut ps, &Grads::new(), 1e-5, 1e-4, Coverage::All, |_| Ok(f64::NAN));
        assert!(matches!(res, Err(Error::Numeric(_))));
    }
}
