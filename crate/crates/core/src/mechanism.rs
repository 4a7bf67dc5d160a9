//! The public project VCG redistribution mechanism.
//!
//! `n` agents decide whether to build a project of cost 1. Agent `i` reports
//! `θ_i ∈ [0, 1]`. The project is built iff `Σθ ≥ 1`. When built, agent `i`
//! receives `Σ_{j≠i} θ_j − h(θ_{-i})`; otherwise it receives
//! `(n−1)/n − h(θ_{-i})`. A mechanism is fully described by `h`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::sort_desc;

/// Reported valuations of all `n` agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TypeProfile(Vec<f64>);

impl TypeProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidProfile(format!(
                "need at least 2 agents, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidProfile(format!("θ[{i}] = {v} outside [0, 1]")));
        }
        Ok(TypeProfile(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// `θ_{-i}` in nonincreasing order.
    pub fn others_sorted(&self, i: usize) -> Vec<f64> {
        let mut others: Vec<f64> = self
            .0
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .collect();
        sort_desc(&mut others);
        others
    }
}

impl TryFrom<Vec<f64>> for TypeProfile {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        TypeProfile::new(values)
    }
}

impl From<TypeProfile> for Vec<f64> {
    fn from(p: TypeProfile) -> Self {
        p.0
    }
}

/// A redistribution function `h`, evaluated on the other agents' types.
///
/// Callers always pass inputs sorted in nonincreasing order, which makes the
/// mechanism anonymous regardless of the implementation.
pub trait RedistributionFn: Sync {
    /// Number of agents `n`; `h` takes `n − 1` inputs.
    fn n_agents(&self) -> usize;

    /// `h(others)` with `others` sorted descending.
    fn eval_sorted(&self, others: &[f64]) -> f64;

    /// One value per row; every row is a sorted `θ_{-i}`.
    fn eval_sorted_batch(&self, rows: ArrayView2<'_, f64>) -> Vec<f64> {
        rows.rows().into_iter().map(|r| self.eval_sorted(&r.to_vec())).collect()
    }

    /// Values and `∂h/∂(sorted input)` per row, for implementations that are
    /// differentiable in their inputs.
    fn eval_sorted_batch_grad(&self, _rows: ArrayView2<'_, f64>) -> Option<(Vec<f64>, Array2<f64>)> {
        None
    }
}

impl<T: RedistributionFn + ?Sized> RedistributionFn for &T {
    fn n_agents(&self) -> usize {
        (**self).n_agents()
    }
    fn eval_sorted(&self, others: &[f64]) -> f64 {
        (**self).eval_sorted(others)
    }
    fn eval_sorted_batch(&self, rows: ArrayView2<'_, f64>) -> Vec<f64> {
        (**self).eval_sorted_batch(rows)
    }
    fn eval_sorted_batch_grad(&self, rows: ArrayView2<'_, f64>) -> Option<(Vec<f64>, Array2<f64>)> {
        (**self).eval_sorted_batch_grad(rows)
    }
}

impl<T: RedistributionFn + ?Sized> RedistributionFn for Box<T> {
    fn n_agents(&self) -> usize {
        (**self).n_agents()
    }
    fn eval_sorted(&self, others: &[f64]) -> f64 {
        (**self).eval_sorted(others)
    }
    fn eval_sorted_batch(&self, rows: ArrayView2<'_, f64>) -> Vec<f64> {
        (**self).eval_sorted_batch(rows)
    }
    fn eval_sorted_batch_grad(&self, rows: ArrayView2<'_, f64>) -> Option<(Vec<f64>, Array2<f64>)> {
        (**self).eval_sorted_batch_grad(rows)
    }
}

/// `h(others)` for arbitrary input order.
pub fn redistribution<H: RedistributionFn + ?Sized>(h: &H, others: &[f64]) -> f64 {
    let mut sorted = others.to_vec();
    sort_desc(&mut sorted);
    h.eval_sorted(&sorted)
}

/// Everything the mechanism does on one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub build: bool,
    /// Net transfer to each agent; positive means the agent receives money.
    pub receipts: Vec<f64>,
    pub welfare: f64,
    pub first_best: f64,
    /// `Σ_i h(θ_{-i}) / S(θ)`.
    pub ratio_stat: f64,
}

/// Build iff `Σθ ≥ 1` (ties build).
pub fn builds(profile: &TypeProfile) -> bool {
    profile.sum() >= 1.0
}

/// First-best total utility `S(θ) = max(Σθ, 1)`.
pub fn first_best(profile: &TypeProfile) -> f64 {
    profile.sum().max(1.0)
}

fn check_arity<H: RedistributionFn + ?Sized>(profile: &TypeProfile, h: &H) -> Result<()> {
    if h.n_agents() != profile.n() {
        return Err(Error::DimensionMismatch { expected: h.n_agents(), got: profile.n() });
    }
    Ok(())
}

/// `h(θ_{-i})` for every agent.
pub fn h_values<H: RedistributionFn + ?Sized>(profile: &TypeProfile, h: &H) -> Result<Vec<f64>> {
    check_arity(profile, h)?;
    Ok((0..profile.n()).map(|i| h.eval_sorted(&profile.others_sorted(i))).collect())
}

pub fn outcome<H: RedistributionFn + ?Sized>(profile: &TypeProfile, h: &H) -> Result<MechanismOutcome> {
    let hs = h_values(profile, h)?;
    let n = profile.n();
    let nf = n as f64;
    let build = builds(profile);
    let total = profile.sum();
    let receipts = hs
        .iter()
        .zip(profile.values())
        .map(|(hi, &ti)| if build { (total - ti) - hi } else { (nf - 1.0) / nf - hi })
        .collect();
    let sum_h: f64 = hs.iter().sum();
    let s = first_best(profile);
    Ok(MechanismOutcome {
        build,
        receipts,
        welfare: nf * s - sum_h,
        first_best: s,
        ratio_stat: sum_h / s,
    })
}

/// Per-agent utilities summed directly from the decision and receipts, without
/// using the closed-form welfare identity.
pub fn direct_welfare(profile: &TypeProfile, outcome: &MechanismOutcome) -> f64 {
    let nf = profile.n() as f64;
    profile
        .values()
        .iter()
        .zip(&outcome.receipts)
        .map(|(&t, r)| if outcome.build { t + r } else { 1.0 / nf + r })
        .sum()
}

/// `r = n − Σh/S`, the achieved fraction of first-best welfare.
pub fn efficiency_ratio<H: RedistributionFn + ?Sized>(profile: &TypeProfile, h: &H) -> Result<f64> {
    let o = outcome(profile, h)?;
    Ok(profile.n() as f64 - o.ratio_stat)
}

/// `Σh/S − (n−1)`; nonnegative iff no deficit on this profile.
pub fn feasibility_gap<H: RedistributionFn + ?Sized>(profile: &TypeProfile, h: &H) -> Result<f64> {
    let o = outcome(profile, h)?;
    Ok(o.ratio_stat - (profile.n() as f64 - 1.0))
}

const BATCH_PROFILES: usize = 2048;

/// Sorted `θ_{-i}` rows for a slice of profiles: row `p·n + i` holds profile
/// `p` without agent `i`.
pub fn others_rows(profiles: &[TypeProfile], n: usize) -> Array2<f64> {
    let mut rows = Array2::<f64>::zeros((profiles.len() * n, n - 1));
    for (p, prof) in profiles.iter().enumerate() {
        for i in 0..n {
            let others = prof.others_sorted(i);
            rows.row_mut(p * n + i).as_slice_mut().expect("standard layout").copy_from_slice(&others);
        }
    }
    rows
}

/// `Σ_i h(θ_{-i}) / S(θ)` for many profiles at once.
pub fn ratio_stats<H: RedistributionFn + ?Sized>(h: &H, profiles: &[TypeProfile]) -> Result<Vec<f64>> {
    let n = h.n_agents();
    if let Some(bad) = profiles.iter().find(|p| p.n() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: bad.n() });
    }
    let mut out = Vec::with_capacity(profiles.len());
    for chunk in profiles.chunks(BATCH_PROFILES) {
        let rows = others_rows(chunk, n);
        let hs = h.eval_sorted_batch(rows.view());
        for (p, prof) in chunk.iter().enumerate() {
            let sum_h: f64 = hs[p * n..(p + 1) * n].iter().sum();
            out.push(sum_h / first_best(prof));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{ConstantShare, FallbackMax};
    use approx::assert_abs_diff_eq;

    fn p(v: &[f64]) -> TypeProfile {
        TypeProfile::new(v.to_vec()).unwrap()
    }

    #[test]
    fn first_best_examples() {
        assert_abs_diff_eq!(first_best(&p(&[0.2, 0.3, 0.1])), 1.0);
        assert_abs_diff_eq!(first_best(&p(&[0.5, 0.7, 0.4])), 1.6, epsilon = 1e-12);
        assert_eq!(first_best(&p(&[0.0, 0.0, 0.0])), 1.0);
    }

    #[test]
    fn profile_validation() {
        assert!(TypeProfile::new(vec![0.5]).is_err());
        assert!(TypeProfile::new(vec![0.5, 1.2]).is_err());
        assert!(TypeProfile::new(vec![0.5, -0.1]).is_err());
        assert!(TypeProfile::new(vec![0.5, f64::NAN]).is_err());
        assert!(TypeProfile::new(vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn build_tie_builds() {
        assert!(builds(&p(&[0.5, 0.5])));
        assert!(!builds(&p(&[0.5, 0.49])));
    }

    #[test]
    fn outcome_corner_profile_with_fallback() {
        let h = FallbackMax::new(3);
        let o = outcome(&p(&[1.0, 0.0, 0.0]), &h).unwrap();
        assert!(o.build);
        assert_abs_diff_eq!(o.receipts[0], -2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.receipts[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.receipts[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.welfare, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.ratio_stat, 8.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(direct_welfare(&p(&[1.0, 0.0, 0.0]), &o), o.welfare, epsilon = 1e-12);
    }

    #[test]
    fn outcome_no_build_with_fallback() {
        let prof = p(&[0.2, 0.3, 0.1]);
        let h = FallbackMax::new(3);
        assert!(h_values(&prof, &h).unwrap().iter().all(|&v| (v - 2.0 / 3.0).abs() < 1e-15));
        let o = outcome(&prof, &h).unwrap();
        assert!(!o.build);
        for r in &o.receipts {
            assert_abs_diff_eq!(*r, 0.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(o.welfare, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_share_is_exactly_balanced_without_build() {
        let h = ConstantShare::new(4);
        let prof = p(&[0.1, 0.2, 0.3, 0.1]);
        let o = outcome(&prof, &h).unwrap();
        assert_abs_diff_eq!(o.ratio_stat * o.first_best, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(efficiency_ratio(&prof, &h).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(feasibility_gap(&prof, &h).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ratio_and_gap_examples() {
        let h = FallbackMax::new(3);
        let prof = p(&[1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(efficiency_ratio(&prof, &h).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(feasibility_gap(&prof, &h).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
    }

    struct Zero(usize);
    impl RedistributionFn for Zero {
        fn n_agents(&self) -> usize {
            self.0
        }
        fn eval_sorted(&self, _: &[f64]) -> f64 {
            0.0
        }
    }

    #[test]
    fn zero_redistribution_gap_is_minus_n_minus_one() {
        for prof in [p(&[0.9, 0.9, 0.9]), p(&[0.0, 0.1, 0.2])] {
            assert_eq!(feasibility_gap(&prof, &Zero(3)).unwrap(), -2.0);
        }
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let err = outcome(&p(&[0.1, 0.2]), &FallbackMax::new(3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 2 }));
        assert!(ratio_stats(&FallbackMax::new(3), &[p(&[0.1, 0.2])]).is_err());
    }

    #[test]
    fn batch_ratio_stats_match_outcome() {
        let h = FallbackMax::new(4);
        let profs = vec![p(&[0.1, 0.9, 0.3, 0.0]), p(&[1.0, 1.0, 0.2, 0.5]), p(&[0.0; 4])];
        let batch = ratio_stats(&h, &profs).unwrap();
        for (prof, r) in profs.iter().zip(batch) {
            assert_eq!(outcome(prof, &h).unwrap().ratio_stat, r);
        }
    }
}
