//! Central finite-difference verification of `Mlp::backward`.

use rand::Rng;
use serde::Serialize;

use super::mlp::{Mlp, OutputActivation};
use crate::error::Result;
use crate::rng;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Relative error with a small floor so that two near-zero values agree.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport { checked: 0, max_rel_error: 0.0, worst: String::new() }
    }

    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_error {
            self.max_rel_error = e;
            self.worst = format!("{}: analytic {analytic:e} vs numeric {numeric:e}", what());
        }
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Scalar probe `Σ_k c_k · out_k(x)` evaluated with forward passes only.
fn probe(net: &Mlp, x: &[f64], c: &[f64]) -> Result<f64> {
    Ok(net.predict_one(x)?.iter().zip(c).map(|(o, w)| o * w).sum())
}

/// Compare parameter and input gradients of `Σ c_k out_k` at `x`.
pub fn check_at(net: &Mlp, x: &[f64], c: &[f64], step: f64) -> Result<GradCheckReport> {
    let (_, trace) = net.forward_one(x)?;
    let d_out = ndarray::Array2::from_shape_vec((1, c.len()), c.to_vec()).expect("shape");
    let (grads, d_in) = net.backward(&trace, d_out.view())?;
    let mut report = GradCheckReport::empty();

    let analytic: Vec<Vec<f64>> = grads.tensors().map(|t| t.to_vec()).collect();
    let mut probe_net = net.clone();
    for (t, tensor) in analytic.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let original = probe_net.params().nth(t).unwrap()[i];
            probe_net.params_mut().nth(t).unwrap()[i] = original + step;
            let up = probe(&probe_net, x, c)?;
            probe_net.params_mut().nth(t).unwrap()[i] = original - step;
            let dn = probe(&probe_net, x, c)?;
            probe_net.params_mut().nth(t).unwrap()[i] = original;
            report.record(a, (up - dn) / (2.0 * step), || format!("tensor {t} index {i}"));
        }
    }

    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + step;
        let up = probe(net, &xp, c)?;
        xp[j] = x[j] - step;
        let dn = probe(net, &xp, c)?;
        xp[j] = x[j];
        report.record(d_in[[0, j]], (up - dn) / (2.0 * step), || format!("input {j}"));
    }
    Ok(report)
}

/// Random small networks (2–4 weight layers, widths ≤ 10) probed at random inputs.
pub fn random_suite(seed: u64, networks: usize, inputs_per_net: usize, step: f64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::empty();
    for k in 0..networks {
        let mut r = rng::substream(seed, k as u64);
        let layers = r.random_range(2..=4usize);
        let sizes: Vec<usize> = (0..=layers).map(|_| r.random_range(1..=10usize)).collect();
        let output = if r.random::<bool>() { OutputActivation::Identity } else { OutputActivation::Sigmoid };
        let net = Mlp::init_xavier(&sizes, output, &mut r)?;
        for _ in 0..inputs_per_net {
            let x: Vec<f64> = (0..sizes[0]).map(|_| r.random::<f64>()).collect();
            let c: Vec<f64> = (0..net.output_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
            report.merge(check_at(&net, &x, &c, step)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_correct_backward() {
        let r = random_suite(42, 5, 3, DEFAULT_STEP).unwrap();
        assert!(r.checked > 0);
        assert!(r.passes(DEFAULT_TOLERANCE), "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, -1e-12) < 1e-5);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
