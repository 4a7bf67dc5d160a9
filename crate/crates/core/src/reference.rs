//! Closed-form redistribution functions.
//!
//! [`FallbackMax`] is weakly budget-balanced on every profile: when `Σθ = T ≥ 1`
//! each `h ≥ T − θ_i`, so `Σh ≥ (n−1)T`; otherwise each `h ≥ (n−1)/n`, so
//! `Σh ≥ n−1`. Its worst efficiency ratio is `1/n`, attained at `(1, 0, …, 0)`.
//!
//! [`ConstantShare`] only balances the budget when the project is not built and
//! exists as a known-infeasible fixture.
//!
//! The asymptotically optimal mechanism from the literature is not bundled; it
//! can be installed at runtime with [`install_ao_plugin`].

use std::fmt;
use std::sync::{Arc, OnceLock};

use ndarray::{Array2, ArrayView2};

use crate::config::WarmStart;
use crate::error::{Error, Result};
use crate::mechanism::RedistributionFn;

pub fn fallback_h(others: &[f64], n: usize) -> f64 {
    let share = (n as f64 - 1.0) / n as f64;
    others.iter().sum::<f64>().max(share)
}

pub fn constant_share_h(n: usize) -> f64 {
    (n as f64 - 1.0) / n as f64
}

/// `h(θ_{-i}) = max(Σ θ_{-i}, (n−1)/n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FallbackMax {
    n: usize,
}

impl FallbackMax {
    pub fn new(n: usize) -> Self {
        FallbackMax { n }
    }
}

impl RedistributionFn for FallbackMax {
    fn n_agents(&self) -> usize {
        self.n
    }

    fn eval_sorted(&self, others: &[f64]) -> f64 {
        fallback_h(others, self.n)
    }

    fn eval_sorted_batch_grad(&self, rows: ArrayView2<'_, f64>) -> Option<(Vec<f64>, Array2<f64>)> {
        let share = constant_share_h(self.n);
        let mut grad = Array2::zeros(rows.dim());
        let vals = rows
            .rows()
            .into_iter()
            .zip(grad.rows_mut())
            .map(|(r, mut g)| {
                let s = r.sum();
                if s >= share {
                    g.fill(1.0);
                }
                s.max(share)
            })
            .collect();
        Some((vals, grad))
    }
}

/// `h ≡ (n−1)/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantShare {
    n: usize,
}

impl ConstantShare {
    pub fn new(n: usize) -> Self {
        ConstantShare { n }
    }
}

impl RedistributionFn for ConstantShare {
    fn n_agents(&self) -> usize {
        self.n
    }

    fn eval_sorted(&self, _others: &[f64]) -> f64 {
        constant_share_h(self.n)
    }

    fn eval_sorted_batch_grad(&self, rows: ArrayView2<'_, f64>) -> Option<(Vec<f64>, Array2<f64>)> {
        Some((vec![constant_share_h(self.n); rows.nrows()], Array2::zeros(rows.dim())))
    }
}

/// Signature of an externally supplied `h`: `(sorted others, n) -> value`.
pub type PluginFn = Arc<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Plugin {
    pub name: String,
    n: usize,
    f: PluginFn,
}

impl Plugin {
    pub fn new(name: impl Into<String>, n: usize, f: PluginFn) -> Self {
        Plugin { name: name.into(), n, f }
    }
}

impl fmt::Debug for Plugin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Plugin").field("name", &self.name).field("n", &self.n).finish()
    }
}

impl RedistributionFn for Plugin {
    fn n_agents(&self) -> usize {
        self.n
    }

    fn eval_sorted(&self, others: &[f64]) -> f64 {
        (self.f)(others, self.n)
    }
}

static AO_PLUGIN: OnceLock<PluginFn> = OnceLock::new();

/// Register the asymptotically optimal `h` for this process. Returns false if
/// one was already installed.
pub fn install_ao_plugin(f: PluginFn) -> bool {
    AO_PLUGIN.set(f).is_ok()
}

pub fn ao_plugin_installed() -> bool {
    AO_PLUGIN.get().is_some()
}

fn ao_missing() -> Error {
    Error::PluginUnavailable(
        "the AO mechanism is not bundled and no plug-in is installed; use `warm_start = fallback`".into(),
    )
}

/// The AO redistribution value, if a plug-in is installed.
pub fn plugin_ao(others: &[f64], n: usize) -> Result<f64> {
    AO_PLUGIN.get().map(|f| f(others, n)).ok_or_else(ao_missing)
}

/// A manual mechanism usable as a supervised target.
#[derive(Debug, Clone)]
pub enum ManualMechanism {
    FallbackMax(FallbackMax),
    ConstantShare(ConstantShare),
    Plugin(Plugin),
}

impl ManualMechanism {
    /// Target for a warm-start choice; `None` for no warm start.
    pub fn for_warm_start(choice: WarmStart, n: usize) -> Result<Option<Self>> {
        Ok(match choice {
            WarmStart::None => None,
            WarmStart::Fallback => Some(ManualMechanism::FallbackMax(FallbackMax::new(n))),
            WarmStart::Ao => {
                let f = AO_PLUGIN.get().ok_or_else(ao_missing)?.clone();
                Some(ManualMechanism::Plugin(Plugin::new("ao", n, f)))
            }
        })
    }

    pub fn name(&self) -> &str {
        match self {
            ManualMechanism::FallbackMax(_) => "fallback",
            ManualMechanism::ConstantShare(_) => "constant-share",
            ManualMechanism::Plugin(p) => &p.name,
        }
    }

    fn inner(&self) -> &dyn RedistributionFn {
        match self {
            ManualMechanism::FallbackMax(h) => h,
            ManualMechanism::ConstantShare(h) => h,
            ManualMechanism::Plugin(h) => h,
        }
    }
}

impl RedistributionFn for ManualMechanism {
    fn n_agents(&self) -> usize {
        self.inner().n_agents()
    }
    fn eval_sorted(&self, others: &[f64]) -> f64 {
        self.inner().eval_sorted(others)
    }
    fn eval_sorted_batch_grad(&self, rows: ArrayView2<'_, f64>) -> Option<(Vec<f64>, Array2<f64>)> {
        self.inner().eval_sorted_batch_grad(rows)
    }
}
