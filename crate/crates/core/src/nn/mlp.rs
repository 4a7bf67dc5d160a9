use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

impl OutputActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::Sigmoid => sigmoid(z),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected network with ReLU hidden layers.
///
/// Layer `l` maps `sizes[l]` inputs to `sizes[l+1]` outputs as `x · W + b`,
/// so `weights[l]` has shape `(sizes[l], sizes[l+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    output: OutputActivation,
}

/// Inputs and pre-activations of every layer from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidNetwork(format!("need at least 2 layer sizes, got {}", sizes.len())));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidNetwork(format!("layer sizes must be positive: {sizes:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Xavier-normal weights, `N(0, 0.01²)` biases.
    pub fn init_xavier<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        check_sizes(sizes)?;
        let bias_dist = Normal::new(0.0, 0.01).expect("valid stddev");
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid stddev");
            weights.push(Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng)));
            biases.push(Array1::from_shape_simple_fn(fan_out, || bias_dist.sample(rng)));
        }
        Ok(Mlp { sizes: sizes.to_vec(), weights, biases, output })
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        check_sizes(sizes)?;
        let weights = sizes.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect();
        let biases = sizes.windows(2).map(|w| Array1::zeros(w[1])).collect();
        Ok(Mlp { sizes: sizes.to_vec(), weights, biases, output })
    }

    /// Build from explicit parameters, checking shapes and finiteness.
    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>, output: OutputActivation) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidNetwork(format!("{} weight matrices vs {} bias vectors", weights.len(), biases.len())));
        }
        let mut sizes = vec![weights[0].nrows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != *sizes.last().unwrap() || b.len() != w.ncols() {
                return Err(Error::InvalidNetwork(format!("layer {l} shapes do not chain")));
            }
            sizes.push(w.ncols());
        }
        check_sizes(&sizes)?;
        let net = Mlp { sizes, weights, biases, output };
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Every parameter tensor as a flat slice, weights then bias per layer.
    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_slice_mut().expect("standard layout"), b.as_slice_mut().expect("standard layout")])
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    /// Batched forward pass; one row per sample.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Trace)> {
        self.check_input(&x)?;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = a.dot(w) + b;
            let next = if l == last { z.mapv(|v| self.output.apply(v)) } else { z.mapv(|v| v.max(0.0)) };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok((a, Trace { inputs, pre }))
    }

    /// Forward pass without keeping a trace.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.weights.len() - 1;
        let mut a: Option<Array2<f64>> = None;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = match &a {
                None => x.dot(w),
                Some(prev) => prev.dot(w),
            };
            z += b;
            if l == last {
                z.mapv_inplace(|v| self.output.apply(v));
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = Some(z);
        }
        Ok(a.expect("at least one layer"))
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<(Vec<f64>, Trace)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        let (out, trace) = self.forward(view)?;
        Ok((out.into_raw_vec_and_offset().0, trace))
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse pass: gradients of `Σ_rows out · d_out` with respect to every
    /// parameter and to the input rows. ReLU'(0) is taken as 0.
    pub fn backward(&self, trace: &Trace, d_out: ArrayView2<'_, f64>) -> Result<(Gradients, Array2<f64>)> {
        let layers = self.weights.len();
        if trace.pre.len() != layers || trace.inputs.len() != layers {
            return Err(Error::InvalidNetwork(format!("trace has {} layers, network has {layers}", trace.pre.len())));
        }
        for (l, z) in trace.pre.iter().enumerate() {
            if z.ncols() != self.sizes[l + 1] || trace.inputs[l].ncols() != self.sizes[l] {
                return Err(Error::InvalidNetwork(format!("trace layer {l} does not match network shapes")));
            }
        }
        let last_pre = &trace.pre[layers - 1];
        if d_out.dim() != last_pre.dim() {
            return Err(Error::DimensionMismatch { expected: last_pre.len(), got: d_out.len() });
        }

        let mut delta = Array2::zeros(last_pre.dim());
        Zip::from(&mut delta)
            .and(&d_out)
            .and(last_pre)
            .for_each(|d, &g, &z| *d = g * self.output.derivative(z));

        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            gw[l] = trace.inputs[l].t().dot(&delta).as_standard_layout().into_owned();
            gb[l] = delta.sum_axis(Axis(0));
            let mut d_a = delta.dot(&self.weights[l].t());
            if l == 0 {
                return Ok((Gradients { weights: gw, biases: gb }, d_a));
            }
            Zip::from(&mut d_a).and(&trace.pre[l - 1]).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = d_a;
        }
        unreachable!("loop returns at layer 0")
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.weights.iter_mut().zip(&other.weights).for_each(|(a, b)| *a += b);
        self.biases.iter_mut().zip(&other.biases).for_each(|(a, b)| *a += b);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    #[test]
    fn parameter_count_of_h_network() {
        let sizes = [3, 100, 100, 100, 100, 100, 100, 1];
        let net = Mlp::init_xavier(&sizes, OutputActivation::Identity, &mut rng::substream(0, 0)).unwrap();
        assert_eq!(net.param_count(), 3 * 100 + 100 + 5 * (100 * 100 + 100) + 100 + 1);
        assert_eq!(net.param_count(), 51_001);
    }

    #[test]
    fn xavier_statistics() {
        let net = Mlp::init_xavier(&[100, 100, 100], OutputActivation::Identity, &mut rng::substream(1, 0)).unwrap();
        let w = &net.weights()[0];
        let mean = w.mean().unwrap();
        let var = w.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        assert!((var - 0.01).abs() < 0.002, "weight variance {var}");
        let b: Vec<f64> = net.biases().iter().flat_map(|b| b.iter().copied()).collect();
        let bm = b.iter().sum::<f64>() / b.len() as f64;
        let bsd = (b.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / b.len() as f64).sqrt();
        assert!((bsd - 0.01).abs() < 0.003, "bias sd {bsd}");
    }

    #[test]
    fn invalid_sizes() {
        assert!(Mlp::zeros(&[3], OutputActivation::Identity).is_err());
        assert!(Mlp::zeros(&[3, 0, 1], OutputActivation::Identity).is_err());
    }

    #[test]
    fn forward_trivial_cases() {
        let zero = Mlp::zeros(&[3, 5, 1], OutputActivation::Identity).unwrap();
        assert_eq!(zero.predict_one(&[0.3, 0.2, 0.9]).unwrap(), vec![0.0]);

        let affine = Mlp::from_parts(vec![array![[2.5]]], vec![array![-0.5]], OutputActivation::Identity).unwrap();
        assert_eq!(affine.predict_one(&[0.4]).unwrap(), vec![2.5 * 0.4 - 0.5]);

        let sig = Mlp::zeros(&[2, 1], OutputActivation::Sigmoid).unwrap();
        assert_eq!(sig.predict_one(&[0.7, 0.1]).unwrap(), vec![0.5]);

        assert!(matches!(zero.predict_one(&[0.1]), Err(Error::DimensionMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn predict_matches_forward() {
        let net = Mlp::init_xavier(&[4, 7, 7, 2], OutputActivation::Sigmoid, &mut rng::substream(2, 0)).unwrap();
        let x = array![[0.1, 0.5, 0.9, 0.3], [0.0, 1.0, 0.2, 0.2]];
        let (out, _) = net.forward(x.view()).unwrap();
        assert_eq!(out, net.predict(x.view()).unwrap());
    }

    #[test]
    fn backward_trivial_cases() {
        let net = Mlp::init_xavier(&[3, 6, 6, 1], OutputActivation::Identity, &mut rng::substream(3, 0)).unwrap();
        let x = array![[0.2, 0.4, 0.6]];
        let (_, trace) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&trace, array![[0.0]].view()).unwrap();
        assert!(g.tensors().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));

        let affine = Mlp::from_parts(vec![array![[1.7]]], vec![array![0.3]], OutputActivation::Identity).unwrap();
        let (_, trace) = affine.forward(array![[0.8]].view()).unwrap();
        let (g, dx) = affine.backward(&trace, array![[1.0]].view()).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 0.8);
        assert_eq!(g.biases[0][0], 1.0);
        assert_eq!(dx[[0, 0]], 1.7);
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let a = Mlp::zeros(&[2, 3, 1], OutputActivation::Identity).unwrap();
        let b = Mlp::zeros(&[2, 4, 4, 1], OutputActivation::Identity).unwrap();
        let (_, trace) = b.forward(array![[0.1, 0.2]].view()).unwrap();
        assert!(a.backward(&trace, array![[1.0]].view()).is_err());
        let (_, trace) = a.forward(array![[0.1, 0.2]].view()).unwrap();
        assert!(a.backward(&trace, array![[1.0, 1.0]].view()).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0).is_finite());
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
