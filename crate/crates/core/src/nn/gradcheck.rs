use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::params::{Grads, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per parameter tensor (all of them when the
    /// tensor is smaller).
    pub samples_per_tensor: usize,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is essentially zero are compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            samples_per_tensor: 20,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// finite differences at a random sample of coordinates.
pub fn grad_check<F>(
    loss_fn: F,
    params: &ParamStore<f64>,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<(f64, Grads<f64>)>,
{
    let (_, analytic) = loss_fn(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };

    for idx in 0..params.len() {
        let len = params.tensor(idx).len();
        let coords: Vec<usize> = if len <= config.samples_per_tensor {
            (0..len).collect()
        } else {
            (0..config.samples_per_tensor)
                .map(|_| rng.gen_range(0..len))
                .collect()
        };
        for c in coords {
            let original = params.tensor(idx).data()[c];
            probe.tensor_mut(idx).data_mut()[c] = original + config.eps;
            let (plus, _) = loss_fn(&probe)?;
            probe.tensor_mut(idx).data_mut()[c] = original - config.eps;
            let (minus, _) = loss_fn(&probe)?;
            probe.tensor_mut(idx).data_mut()[c] = original;

            let numeric = (plus - minus) / (2.0 * config.eps);
            let a = analytic.get(idx).data()[c];
            let denom = a.abs().max(numeric.abs()).max(config.floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = rel;
                report.worst_param = params.name(idx).to_string();
                report.worst_index = c;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;
    use crate::nn::tensor::Tensor;

    #[test]
    fn quadratic_norm_at_ones() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::full(&[4], 1.0)).unwrap();
        let loss = |p: &ParamStore<f64>| {
            let mut tape = Tape::new(p);
            let w = tape.param(0);
            let sq = tape.mul(w, w)?;
            let l = tape.sum(sq)?;
            Ok((tape.scalar(l), tape.backward(l)?))
        };
        let (_, g) = loss(&p).unwrap();
        assert!(g.get(0).data().iter().all(|&v| v == 2.0));
        let report = grad_check(loss, &p, &GradCheckConfig::default()).unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }
}
