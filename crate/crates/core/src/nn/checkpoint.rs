//! Versioned JSON checkpoints.
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "meta": { "role": "h" | "adversary", "n", "features", "top_k", "prior",
//!             "objective", "seed", "step" },
//!   "layer_sizes": [in, hidden.., out],
//!   "hidden_activation": "relu",
//!   "output_activation": "identity" | "sigmoid",
//!   "weights": [[fan_in × fan_out values, row-major], ..],
//!   "biases": [[fan_out values], ..]
//! }
//! ```
//!
//! Parameters are written with 17 significant digits so that loading yields
//! the exact same bits.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::mlp::{Mlp, OutputActivation};
use crate::config::Objective;
use crate::error::{Error, Result};
use crate::features::{FeatureCombo, FeatureMap};
use crate::priors::Prior;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    H,
    Adversary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub role: Role,
    pub n: usize,
    pub features: FeatureCombo,
    pub top_k: usize,
    pub prior: Prior,
    pub objective: Objective,
    pub seed: u64,
    pub step: u64,
}

impl CheckpointMeta {
    /// Expected `(input, output)` widths for a network in this role.
    pub fn expected_io(&self) -> Result<(usize, usize)> {
        Ok(match self.role {
            Role::H => (FeatureMap::new(self.features, self.top_k, self.n)?.output_dim(self.n), 1),
            Role::Adversary => (self.n, self.n),
        })
    }
}

#[derive(Serialize)]
struct FileOut<'a> {
    format_version: u32,
    meta: &'a CheckpointMeta,
    layer_sizes: &'a [usize],
    hidden_activation: &'static str,
    output_activation: OutputActivation,
    #[serde(serialize_with = "exact_matrix")]
    weights: Vec<&'a [f64]>,
    #[serde(serialize_with = "exact_matrix")]
    biases: Vec<&'a [f64]>,
}

#[derive(Deserialize)]
struct FileIn {
    meta: CheckpointMeta,
    layer_sizes: Vec<usize>,
    hidden_activation: String,
    output_activation: OutputActivation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct VersionOnly {
    format_version: u32,
}

fn exact_matrix<S: Serializer>(rows: &Vec<&[f64]>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut text = String::from("[");
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            text.push(',');
        }
        text.push('[');
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                text.push(',');
            }
            let _ = write!(text, "{v:.16e}");
        }
        text.push(']');
    }
    text.push(']');
    let raw = RawValue::from_string(text).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

pub fn to_json(net: &Mlp, meta: &CheckpointMeta) -> Result<String> {
    if !net.is_finite() {
        return Err(Error::NonFinite("network parameters".into()));
    }
    let file = FileOut {
        format_version: FORMAT_VERSION,
        meta,
        layer_sizes: net.sizes(),
        hidden_activation: "relu",
        output_activation: net.output_activation(),
        weights: net.weights().iter().map(|w| w.as_slice().expect("standard layout")).collect(),
        biases: net.biases().iter().map(|b| b.as_slice().expect("standard layout")).collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn from_json(text: &str, path: &Path) -> Result<(Mlp, CheckpointMeta)> {
    let corrupt = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
    let version: VersionOnly = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    if version.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version.format_version, supported: FORMAT_VERSION });
    }
    let file: FileIn = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    if file.hidden_activation != "relu" {
        return Err(corrupt(format!("unsupported hidden activation `{}`", file.hidden_activation)));
    }
    let sizes = &file.layer_sizes;
    if sizes.len() < 2 || file.weights.len() != sizes.len() - 1 || file.biases.len() != sizes.len() - 1 {
        return Err(corrupt("layer count does not match layer_sizes".into()));
    }
    let mut weights = Vec::with_capacity(file.weights.len());
    let mut biases = Vec::with_capacity(file.biases.len());
    for (l, (w, b)) in file.weights.into_iter().zip(file.biases).enumerate() {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = Array2::from_shape_vec((fan_in, fan_out), w)
            .map_err(|_| corrupt(format!("layer {l}: expected {fan_in}×{fan_out} weights")))?;
        if b.len() != fan_out {
            return Err(corrupt(format!("layer {l}: expected {fan_out} biases, found {}", b.len())));
        }
        weights.push(w);
        biases.push(Array1::from(b));
    }
    let net = Mlp::from_parts(weights, biases, file.output_activation).map_err(|e| corrupt(e.to_string()))?;
    let (want_in, want_out) = file.meta.expected_io().map_err(|e| corrupt(e.to_string()))?;
    if net.input_dim() != want_in || net.output_dim() != want_out {
        return Err(corrupt(format!(
            "network is {}→{} but metadata ({:?}, n = {}, features = {}) implies {want_in}→{want_out}",
            net.input_dim(),
            net.output_dim(),
            file.meta.role,
            file.meta.n,
            file.meta.features
        )));
    }
    Ok((net, file.meta))
}

pub fn save_checkpoint(path: &Path, net: &Mlp, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_json(net, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Mlp, CheckpointMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })?;
    from_json(&text, path)
}
