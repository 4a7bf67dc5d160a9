use ndarray::{Array2, ArrayView2};

use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mechanism::RedistributionFn;

/// A redistribution function backed by a network over features of `θ_{-i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralH {
    pub net: Mlp,
    pub map: FeatureMap,
    n: usize,
}

impl NeuralH {
    pub fn new(net: Mlp, map: FeatureMap, n: usize) -> Result<Self> {
        let want = map.output_dim(n);
        if net.input_dim() != want {
            return Err(Error::DimensionMismatch { expected: want, got: net.input_dim() });
        }
        if net.output_dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: net.output_dim() });
        }
        Ok(NeuralH { net, map, n })
    }
}

impl RedistributionFn for NeuralH {
    fn n_agents(&self) -> usize {
        self.n
    }

    fn eval_sorted(&self, others: &[f64]) -> f64 {
        let feats = self.map.extract_sorted(others);
        self.net.predict_one(&feats).expect("feature width checked at construction")[0]
    }

    fn eval_sorted_batch(&self, rows: ArrayView2<'_, f64>) -> Vec<f64> {
        let feats = self.map.extract_rows(rows);
        self.net.predict(feats.view()).expect("feature width checked at construction").column(0).to_vec()
    }

    fn eval_sorted_batch_grad(&self, rows: ArrayView2<'_, f64>) -> Option<(Vec<f64>, Array2<f64>)> {
        let d = rows.ncols();
        let fdim = self.map.output_dim(self.n);
        let mut feats = Array2::zeros((rows.nrows(), fdim));
        let mut jacs = Vec::with_capacity(rows.nrows());
        for (src, mut dst) in rows.rows().into_iter().zip(feats.rows_mut()) {
            let (f, jac) = self.map.extract_sorted_with_jacobian(&src.to_vec());
            dst.as_slice_mut().expect("standard layout").copy_from_slice(&f);
            jacs.push(jac);
        }
        let (out, trace) = self.net.forward(feats.view()).ok()?;
        let ones = Array2::from_elem((rows.nrows(), 1), 1.0);
        let (_, d_feat) = self.net.backward(&trace, ones.view()).ok()?;
        let mut grad = Array2::zeros((rows.nrows(), d));
        for (r, jac) in jacs.iter().enumerate() {
            for (f, jrow) in jac.iter().enumerate() {
                let g = d_feat[[r, f]];
                for j in 0..d {
                    grad[[r, j]] += g * jrow[j];
                }
            }
        }
        Some((out.column(0).to_vec(), grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureCombo;
    use crate::nn::OutputActivation;
    use crate::rng;
    use ndarray::array;

    #[test]
    fn batch_and_single_agree_and_input_grad_matches_fd() {
        for combo in [FeatureCombo::RawSorted, FeatureCombo::C8, FeatureCombo::C3, FeatureCombo::C6] {
            let map = FeatureMap::single(combo);
            let n = 5;
            let net = Mlp::init_xavier(&[map.output_dim(n), 8, 8, 1], OutputActivation::Identity, &mut rng::substream(9, 0)).unwrap();
            let h = NeuralH::new(net, map, n).unwrap();
            let rows = array![[0.9, 0.7, 0.31, 0.1], [0.55, 0.52, 0.2, 0.02]];
            let batch = h.eval_sorted_batch(rows.view());
            let (vals, grad) = h.eval_sorted_batch_grad(rows.view()).unwrap();
            for r in 0..2 {
                let row = rows.row(r).to_vec();
                assert!((h.eval_sorted(&row) - batch[r]).abs() < 1e-12);
                assert!((vals[r] - batch[r]).abs() < 1e-12);
                for j in 0..4 {
                    let mut up = row.clone();
                    let mut dn = row.clone();
                    up[j] += 1e-6;
                    dn[j] -= 1e-6;
                    let fd = (h.eval_sorted(&up) - h.eval_sorted(&dn)) / 2e-6;
                    assert!((fd - grad[[r, j]]).abs() < 1e-6, "{combo} r{r} j{j}: {fd} vs {}", grad[[r, j]]);
                }
            }
        }
    }

    #[test]
    fn width_is_checked() {
        let net = Mlp::zeros(&[4, 3, 1], OutputActivation::Identity).unwrap();
        assert!(NeuralH::new(net, FeatureMap::single(FeatureCombo::C8), 5).is_err());
    }
}
