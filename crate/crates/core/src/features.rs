//! Dimension reduction of `θ_{-i}` into a handful of summary features.
//!
//! All feature maps operate on the sorted (nonincreasing) vector of the other
//! agents' types. The vocabulary is: the highest type `m` (or the `k` highest
//! when `top_k > 1`), the lowest type `l`, the sum of the remaining types
//! `s_rest` (everything except the highest), the population standard
//! deviation, and the largest jump between adjacent sorted types.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sort in place, nonincreasing. Ties keep their relative order.
pub fn sort_desc(v: &mut [f64]) {
    v.sort_by(|a, b| b.total_cmp(a));
}

/// Largest gap between adjacent values after sorting ascending.
pub fn largest_jump(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::Domain(format!("largest jump needs at least 2 values, got {}", v.len())));
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureCombo {
    /// The whole sorted vector, no reduction.
    #[serde(rename = "raw")]
    RawSorted,
    /// `(m, s_rest)`
    C1,
    /// `(m, m − l)`
    C2,
    /// `(m, sd(all))`
    C3,
    /// `(m, sd(rest))`
    C4,
    /// `(m, jump)`
    C5,
    /// `(m, l, jump)`
    C6,
    /// `(m, s_rest, jump)`
    C7,
    /// `(m, l, s_rest)`
    C8,
}

impl FeatureCombo {
    pub const ALL: [FeatureCombo; 9] = [
        FeatureCombo::RawSorted,
        FeatureCombo::C1,
        FeatureCombo::C2,
        FeatureCombo::C3,
        FeatureCombo::C4,
        FeatureCombo::C5,
        FeatureCombo::C6,
        FeatureCombo::C7,
        FeatureCombo::C8,
    ];

    /// Reduction is only worth it for larger `n`.
    pub fn default_for(n: usize) -> Self {
        if n >= 5 {
            FeatureCombo::C8
        } else {
            FeatureCombo::RawSorted
        }
    }
}

impl fmt::Display for FeatureCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureCombo::RawSorted => "raw",
            FeatureCombo::C1 => "c1",
            FeatureCombo::C2 => "c2",
            FeatureCombo::C3 => "c3",
            FeatureCombo::C4 => "c4",
            FeatureCombo::C5 => "c5",
            FeatureCombo::C6 => "c6",
            FeatureCombo::C7 => "c7",
            FeatureCombo::C8 => "c8",
        };
        f.write_str(s)
    }
}

impl FromStr for FeatureCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureCombo::ALL
            .into_iter()
            .find(|c| c.to_string() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::config("features", format!("expected raw or c1..c8, got `{s}`")))
    }
}

/// One scalar feature of a sorted vector.
#[derive(Debug, Clone, Copy)]
enum Feature {
    Top(usize),
    Lowest,
    SumRest,
    Range,
    StdAll,
    StdRest,
    Jump,
}

/// A feature combination together with the number of highest types kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub combo: FeatureCombo,
    pub top_k: usize,
}

impl FeatureMap {
    pub fn new(combo: FeatureCombo, top_k: usize, n: usize) -> Result<Self> {
        if n < 3 && combo != FeatureCombo::RawSorted {
            return Err(Error::config("features", format!("reduced features need n ≥ 3, got n = {n}")));
        }
        if top_k == 0 || (combo != FeatureCombo::RawSorted && top_k >= n - 1) {
            return Err(Error::config("top_k", format!("must be in 1..{} for n = {n}", n.saturating_sub(1))));
        }
        Ok(FeatureMap { combo, top_k })
    }

    pub fn single(combo: FeatureCombo) -> Self {
        FeatureMap { combo, top_k: 1 }
    }

    fn plan(&self) -> Vec<Feature> {
        use Feature::*;
        let mut f: Vec<Feature> = (0..self.top_k).map(Top).collect();
        let tail: &[Feature] = match self.combo {
            FeatureCombo::RawSorted => &[],
            FeatureCombo::C1 => &[SumRest],
            FeatureCombo::C2 => &[Range],
            FeatureCombo::C3 => &[StdAll],
            FeatureCombo::C4 => &[StdRest],
            FeatureCombo::C5 => &[Jump],
            FeatureCombo::C6 => &[Lowest, Jump],
            FeatureCombo::C7 => &[SumRest, Jump],
            FeatureCombo::C8 => &[Lowest, SumRest],
        };
        f.extend_from_slice(tail);
        f
    }

    /// Width of the feature vector for `n` agents.
    pub fn output_dim(&self, n: usize) -> usize {
        match self.combo {
            FeatureCombo::RawSorted => n - 1,
            _ => self.plan().len(),
        }
    }

    /// Features of an already sorted (nonincreasing) vector.
    pub fn extract_sorted(&self, x: &[f64]) -> Vec<f64> {
        if self.combo == FeatureCombo::RawSorted {
            return x.to_vec();
        }
        let k = self.top_k;
        self.plan()
            .into_iter()
            .map(|f| match f {
                Feature::Top(j) => x[j],
                Feature::Lowest => x[x.len() - 1],
                Feature::SumRest => x[k..].iter().sum(),
                Feature::Range => x[0] - x[x.len() - 1],
                Feature::StdAll => pop_std(x),
                Feature::StdRest => pop_std(&x[k..]),
                Feature::Jump => sorted_desc_jump(x).0,
            })
            .collect()
    }

    /// Features and their Jacobian with respect to the sorted input
    /// (`jac[f][j] = ∂feature_f/∂x_j`). Ties and kinks take a fixed
    /// subgradient: the first index in descending order, zero at `sd = 0`.
    pub fn extract_sorted_with_jacobian(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = x.len();
        if self.combo == FeatureCombo::RawSorted {
            let jac = (0..d).map(|f| (0..d).map(|j| if f == j { 1.0 } else { 0.0 }).collect()).collect();
            return (x.to_vec(), jac);
        }
        let k = self.top_k;
        let mut vals = Vec::new();
        let mut jac = Vec::new();
        for f in self.plan() {
            let mut row = vec![0.0; d];
            let v = match f {
                Feature::Top(j) => {
                    row[j] = 1.0;
                    x[j]
                }
                Feature::Lowest => {
                    row[d - 1] = 1.0;
                    x[d - 1]
                }
                Feature::SumRest => {
                    row[k..].iter_mut().for_each(|r| *r = 1.0);
                    x[k..].iter().sum()
                }
                Feature::Range => {
                    row[0] += 1.0;
                    row[d - 1] -= 1.0;
                    x[0] - x[d - 1]
                }
                Feature::StdAll => pop_std_grad(x, &mut row, 0),
                Feature::StdRest => pop_std_grad(&x[k..], &mut row, k),
                Feature::Jump => {
                    let (jump, at) = sorted_desc_jump(x);
                    row[at] = 1.0;
                    row[at + 1] = -1.0;
                    jump
                }
            };
            vals.push(v);
            jac.push(row);
        }
        (vals, jac)
    }

    /// Map a batch of sorted rows to feature rows.
    pub fn extract_rows(&self, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        if self.combo == FeatureCombo::RawSorted {
            return rows.to_owned();
        }
        let d = rows.ncols() + 1;
        let mut out = Array2::zeros((rows.nrows(), self.output_dim(d)));
        for (src, mut dst) in rows.rows().into_iter().zip(out.rows_mut()) {
            let feats = match src.as_slice() {
                Some(s) => self.extract_sorted(s),
                None => self.extract_sorted(&src.to_vec()),
            };
            dst.as_slice_mut().expect("standard layout").copy_from_slice(&feats);
        }
        out
    }
}

/// Features of `others` in any order; `others` must hold at least 2 values.
pub fn extract(combo: FeatureCombo, others: &[f64]) -> Result<Vec<f64>> {
    if others.len() < 2 {
        return Err(Error::Domain(format!("feature extraction needs n − 1 ≥ 2 values, got {}", others.len())));
    }
    let mut sorted = others.to_vec();
    sort_desc(&mut sorted);
    Ok(FeatureMap::single(combo).extract_sorted(&sorted))
}

fn pop_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn pop_std_grad(x: &[f64], row: &mut [f64], offset: usize) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = pop_std(x);
    if sd > 0.0 {
        for (j, v) in x.iter().enumerate() {
            row[offset + j] = (v - mean) / (n * sd);
        }
    }
    sd
}

/// Largest adjacent gap of a nonincreasing vector and the index `j` of the
/// pair `(x_j, x_{j+1})` that attains it.
fn sorted_desc_jump(x: &[f64]) -> (f64, usize) {
    let mut best = (x[0] - x[1], 0);
    for j in 1..x.len() - 1 {
        let g = x[j] - x[j + 1];
        if g > best.0 {
            best = (g, j);
        }
    }
    best
}
