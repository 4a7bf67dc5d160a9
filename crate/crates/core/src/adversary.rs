//! Generator of adversarial type profiles.
//!
//! The generator maps uniform noise in `[0,1]ⁿ` to a profile through a ReLU
//! network with a sigmoid output layer. It is trained to widen the spread of
//! `Σ_i h(θ_{-i}) / S(θ)` over a batch, which drags samples toward the
//! extremes of the ratio: budget violations at the bottom, the worst
//! efficiency at the top. Gradients reach the generator through the frozen
//! `h`, its feature map, the sort, and `S(θ)`.

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses;
use crate::mechanism::{first_best, ratio_stats, RedistributionFn, TypeProfile};
use crate::nn::{AdamState, Mlp, OutputActivation};

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: Mlp,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        Generator::from_net(Mlp::init_xavier(sizes, OutputActivation::Sigmoid, rng)?)
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.input_dim() != net.output_dim() {
            return Err(Error::InvalidNetwork(format!(
                "generator must map n → n, got {} → {}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        if net.output_activation() != OutputActivation::Sigmoid {
            return Err(Error::InvalidNetwork("generator output must be sigmoid".into()));
        }
        Ok(Generator { net })
    }

    pub fn n(&self) -> usize {
        self.net.input_dim()
    }

    fn noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((batch, self.n()), || rng.random::<f64>())
    }

    fn to_profiles(out: &Array2<f64>) -> Result<Vec<TypeProfile>> {
        out.rows().into_iter().map(|r| TypeProfile::new(r.to_vec())).collect()
    }

    pub fn generate_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<TypeProfile>> {
        let z = self.noise(batch, rng);
        let out = self.net.predict(z.view())?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generator output".into()));
        }
        Generator::to_profiles(&out)
    }
}

/// `Σ_i h(θ_{-i}) / S(θ)` and its gradient with respect to `θ`, for an `h`
/// that exposes input gradients. At `Σθ = 1` the sum branch of `S` is used.
pub fn ratio_stat_grad<H: RedistributionFn + ?Sized>(h: &H, profile: &TypeProfile) -> Result<(f64, Vec<f64>)> {
    let n = profile.n();
    if h.n_agents() != n {
        return Err(Error::DimensionMismatch { expected: h.n_agents(), got: n });
    }
    let theta = profile.values();
    let mut rows = Array2::zeros((n, n - 1));
    let mut order: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        // stable: ties keep ascending agent index, i.e. the first one leads
        idx.sort_by(|&a, &b| theta[b].total_cmp(&theta[a]));
        for (k, &j) in idx.iter().enumerate() {
            rows[[i, k]] = theta[j];
        }
        order.push(idx);
    }
    let (vals, grads) = h
        .eval_sorted_batch_grad(rows.view())
        .ok_or_else(|| Error::Domain("redistribution function has no input gradient".into()))?;
    let sum_h: f64 = vals.iter().sum();
    let mut d_sum = vec![0.0; n];
    for (i, idx) in order.iter().enumerate() {
        for (k, &j) in idx.iter().enumerate() {
            d_sum[j] += grads[[i, k]];
        }
    }
    let total = profile.sum();
    let s = first_best(profile);
    let ratio = sum_h / s;
    let ds = if total >= 1.0 { 1.0 } else { 0.0 };
    let grad = d_sum.iter().map(|g| g / s - ratio / s * ds).collect();
    Ok((ratio, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdversaryStats {
    pub loss: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// One Adam update of the generator against the frozen `h`.
pub fn adversary_step<H: RedistributionFn + ?Sized, R: Rng + ?Sized>(
    gen: &mut Generator,
    h: &H,
    batch: usize,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<AdversaryStats> {
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    let z = gen.noise(batch, rng);
    let (out, trace) = gen.net.forward(z.view())?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("generator output".into()));
    }
    let profiles = Generator::to_profiles(&out)?;
    let ratios = ratio_stats(h, &profiles)?;
    let (lo, hi) = losses::extremes(&ratios)?;
    let loss = ratios[lo] - ratios[hi];
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("adversary loss at generator step {}", adam.step_count())));
    }

    let mut d_out = Array2::zeros(out.dim());
    if lo != hi {
        let (_, g_lo) = ratio_stat_grad(h, &profiles[lo])?;
        let (_, g_hi) = ratio_stat_grad(h, &profiles[hi])?;
        for j in 0..gen.n() {
            d_out[[lo, j]] += g_lo[j];
            d_out[[hi, j]] -= g_hi[j];
        }
    }
    let (grads, _) = gen.net.backward(&trace, d_out.view())?;
    adam.step(&mut gen.net, &grads)?;
    Ok(AdversaryStats { loss, min_ratio: ratios[lo], max_ratio: ratios[hi] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureCombo, FeatureMap};
    use crate::nn::{LrSchedule, NeuralH};
    use crate::reference::{ConstantShare, FallbackMax};
    use crate::rng;

    fn gen(n: usize, seed: u64) -> Generator {
        Generator::new(&[n, 16, 16, n], &mut rng::substream(seed, 0)).unwrap()
    }

    #[test]
    fn batches_are_valid_profiles_and_reproducible() {
        let g = gen(4, 1);
        let a = g.generate_batch(64, &mut rng::substream(2, 0)).unwrap();
        let b = g.generate_batch(64, &mut rng::substream(2, 0)).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.n() == 4 && p.values().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn zero_generator_emits_sigmoid_of_bias() {
        let mut net = Mlp::zeros(&[3, 5, 3], OutputActivation::Sigmoid).unwrap();
        net.params_mut().last().unwrap().copy_from_slice(&[0.0, 1.0, -2.0]);
        let g = Generator::from_net(net).unwrap();
        for p in g.generate_batch(8, &mut rng::substream(0, 0)).unwrap() {
            assert_eq!(p.values(), &[0.5, crate::nn::sigmoid(1.0), crate::nn::sigmoid(-2.0)]);
        }
    }

    #[test]
    fn ratio_gradient_matches_finite_differences() {
        let n = 5;
        let map = FeatureMap::single(FeatureCombo::C8);
        let net = Mlp::init_xavier(&[3, 12, 12, 1], OutputActivation::Identity, &mut rng::substream(3, 0)).unwrap();
        let h = NeuralH::new(net, map, n).unwrap();
        for theta in [vec![0.9, 0.12, 0.55, 0.31, 0.74], vec![0.05, 0.1, 0.2, 0.15, 0.3]] {
            let p = TypeProfile::new(theta.clone()).unwrap();
            let (r, g) = ratio_stat_grad(&h, &p).unwrap();
            for j in 0..n {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += 1e-6;
                dn[j] -= 1e-6;
                let ru = ratio_stats(&h, &[TypeProfile::new(up).unwrap()]).unwrap()[0];
                let rd = ratio_stats(&h, &[TypeProfile::new(dn).unwrap()]).unwrap()[0];
                assert!(((ru - rd) / 2e-6 - g[j]).abs() < 1e-5, "j{j}");
            }
            assert!((r - ratio_stats(&h, &[p]).unwrap()[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn step_against_constant_h_is_finite() {
        let mut g = gen(3, 4);
        let mut adam = AdamState::new(&g.net, LrSchedule::default());
        let stats = adversary_step(&mut g, &ConstantShare::new(3), 32, &mut adam, &mut rng::substream(5, 0)).unwrap();
        assert!(stats.loss.is_finite() && stats.loss <= 0.0);
        assert!(g.net.is_finite());
    }

    #[test]
    fn step_leaves_h_untouched_and_widens_spread() {
        let n = 4;
        let map = FeatureMap::single(FeatureCombo::RawSorted);
        let net = Mlp::init_xavier(&[3, 10, 1], OutputActivation::Identity, &mut rng::substream(6, 0)).unwrap();
        let h = NeuralH::new(net, map, n).unwrap();
        let frozen = h.clone();
        let mut g = gen(n, 7);
        let mut adam = AdamState::new(&g.net, LrSchedule::default());
        let mut r = rng::substream(8, 0);
        let mut spreads = Vec::new();
        for _ in 0..300 {
            let s = adversary_step(&mut g, &h, 64, &mut adam, &mut r).unwrap();
            spreads.push(-s.loss);
        }
        assert_eq!(h, frozen);
        let early: f64 = spreads[..50].iter().sum::<f64>() / 50.0;
        let late: f64 = spreads[250..].iter().sum::<f64>() / 50.0;
        assert!(late > early, "spread did not grow: {early} -> {late}");
    }

    #[test]
    fn fallback_gradient_uses_sum_branch() {
        let p = TypeProfile::new(vec![0.6, 0.5, 0.2]).unwrap();
        let (r, g) = ratio_stat_grad(&FallbackMax::new(3), &p).unwrap();
        // Σh = 2·Σθ, S = Σθ: ratio is constant 2 in this region
        assert!((r - 2.0).abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }
}
