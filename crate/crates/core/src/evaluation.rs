//! Auditing a redistribution function on test sets.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::Generator;
use crate::config::Objective;
use crate::error::{Error, Result};
use crate::mechanism::{ratio_stats, RedistributionFn, TypeProfile};
use crate::priors::{sample_profiles, Prior};

pub const HISTOGRAM_BINS: usize = 500;

/// Default test-set size for `n` agents. Sizes below 4 and above 10 agents
/// are clamped to the nearest tabulated value.
pub fn default_test_size(n: usize) -> usize {
    match n {
        0..=4 => 10_000,
        5..=7 => 20_000,
        8 | 9 => 50_000,
        _ => 100_000,
    }
}

/// `size` profiles: the first half from `generator` when given, the rest from
/// `prior`.
pub fn build_test_set<R: Rng + ?Sized>(
    n: usize,
    prior: &Prior,
    generator: Option<&Generator>,
    size: usize,
    rng: &mut R,
) -> Result<Vec<TypeProfile>> {
    if size < 2 {
        return Err(Error::Domain(format!("test set needs at least 2 profiles, got {size}")));
    }
    let mut set = Vec::with_capacity(size);
    if let Some(g) = generator {
        if g.n() != n {
            return Err(Error::DimensionMismatch { expected: n, got: g.n() });
        }
        set.extend(g.generate_batch(size / 2, rng)?);
    }
    set.extend(sample_profiles(prior, n, size - set.len(), rng)?);
    Ok(set)
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub left: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins spanning `[min, max]` of `values`; the maximum falls in
    /// the last bin.
    pub fn build(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; bins];
        if values.is_empty() {
            return Histogram { left: 0.0, width: 0.0, counts };
        }
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
            counts[b] += 1;
        }
        Histogram { left: lo, width, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_left,bin_right,count` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let l = self.left + i as f64 * self.width;
            let _ = writeln!(s, "{l:.17e},{:.17e},{c}", l + self.width);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub test_size: usize,
    /// `n − max_ratio_stat`.
    pub alpha_estimate: f64,
    /// Mean of `Σh/S` over the test set.
    pub expectation_estimate: f64,
    pub min_ratio_stat: f64,
    pub max_ratio_stat: f64,
    /// Relative tolerance; a profile violates when `Σh/S − (n−1) < −tolerance·(n−1)`.
    pub tolerance: f64,
    pub violation_count: usize,
    /// Largest deficit `(n−1) − Σh/S` seen, or 0.
    pub max_deficit: f64,
    /// Set when `violation_count > 0`; the reported α is then not valid.
    pub infeasible: bool,
    pub histogram: Histogram,
}

impl EvalReport {
    pub fn summary_line(&self) -> String {
        format!(
            "alpha={:.6} violations={} E={:.6}{}",
            self.alpha_estimate,
            self.violation_count,
            self.expectation_estimate,
            if self.infeasible { " INFEASIBLE" } else { "" }
        )
    }

    /// Flat `key,value` CSV of the scalar fields.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        let rows: [(&str, String); 10] = [
            ("n", self.n.to_string()),
            ("test_size", self.test_size.to_string()),
            ("alpha_estimate", format!("{:.17e}", self.alpha_estimate)),
            ("expectation_estimate", format!("{:.17e}", self.expectation_estimate)),
            ("min_ratio_stat", format!("{:.17e}", self.min_ratio_stat)),
            ("max_ratio_stat", format!("{:.17e}", self.max_ratio_stat)),
            ("tolerance", format!("{:e}", self.tolerance)),
            ("violation_count", self.violation_count.to_string()),
            ("max_deficit", format!("{:.17e}", self.max_deficit)),
            ("infeasible", self.infeasible.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}

/// Summary statistics of precomputed ratio statistics.
pub fn report_from_ratios(ratios: &[f64], n: usize, tolerance: f64) -> Result<EvalReport> {
    if ratios.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(bad) = ratios.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("ratio statistic of test profile {bad}")));
    }
    let target = n as f64 - 1.0;
    let threshold = -tolerance * target;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut violations = 0;
    for &r in ratios {
        min = min.min(r);
        max = max.max(r);
        if r - target < threshold {
            violations += 1;
        }
    }
    Ok(EvalReport {
        n,
        test_size: ratios.len(),
        alpha_estimate: n as f64 - max,
        expectation_estimate: compensated_sum(ratios) / ratios.len() as f64,
        min_ratio_stat: min,
        max_ratio_stat: max,
        tolerance,
        violation_count: violations,
        max_deficit: (target - min).max(0.0),
        infeasible: violations > 0,
        histogram: Histogram::build(ratios, HISTOGRAM_BINS),
    })
}

pub fn evaluate<H: RedistributionFn + ?Sized>(h: &H, test_set: &[TypeProfile], n: usize, tolerance: f64) -> Result<EvalReport> {
    if h.n_agents() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h.n_agents() });
    }
    report_from_ratios(&ratio_stats(h, test_set)?, n, tolerance)
}

/// Result of an exhaustive grid sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridAudit {
    pub n: usize,
    pub points_per_axis: usize,
    pub profiles: u64,
    /// Profiles with `Σh/S < (n − 1)(1 − tolerance)`.
    pub violations: u64,
    pub min_ratio_stat: f64,
    pub max_ratio_stat: f64,
    pub worst_profile: Vec<f64>,
}

impl GridAudit {
    pub fn alpha(&self) -> f64 {
        self.n as f64 - self.max_ratio_stat
    }
}

/// Evaluate `h` on every profile of the grid `{0, 1/k, …, 1}ⁿ` with `k + 1`
/// points per axis. Grid values are `i as f64 / k`, so `1.0` and `0.0` are exact.
/// A tolerance of a few ulps (e.g. `1e-12`) separates rounding from real deficits.
pub fn grid_audit<H: RedistributionFn + ?Sized>(h: &H, n: usize, k: usize, tolerance: f64) -> Result<GridAudit> {
    if k == 0 || n < 2 || h.n_agents() != n {
        return Err(Error::Domain(format!("grid audit needs k ≥ 1 and a matching h (n = {n}, k = {k})")));
    }
    let axis: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
    let mut idx = vec![0usize; n];
    let mut audit = GridAudit {
        n,
        points_per_axis: k + 1,
        profiles: 0,
        violations: 0,
        min_ratio_stat: f64::INFINITY,
        max_ratio_stat: f64::NEG_INFINITY,
        worst_profile: Vec::new(),
    };
    let target = (n as f64 - 1.0) * (1.0 - tolerance);
    let mut chunk = Vec::with_capacity(4096);
    let mut done = false;
    while !done {
        chunk.push(TypeProfile::new(idx.iter().map(|&i| axis[i]).collect())?);
        // odometer increment
        done = true;
        for d in idx.iter_mut().rev() {
            *d += 1;
            if *d <= k {
                done = false;
                break;
            }
            *d = 0;
        }
        if chunk.len() == 4096 || done {
            for (p, r) in chunk.iter().zip(ratio_stats(h, &chunk)?) {
                audit.profiles += 1;
                if r < target {
                    audit.violations += 1;
                }
                audit.min_ratio_stat = audit.min_ratio_stat.min(r);
                if r > audit.max_ratio_stat {
                    audit.max_ratio_stat = r;
                    audit.worst_profile = p.values().to_vec();
                }
            }
            chunk.clear();
        }
    }
    Ok(audit)
}

/// Worst-case ratios of earlier mechanisms and the conjectured upper bound,
/// as published. `None` marks entries reported as infeasible to compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorstCaseBaseline {
    pub n: usize,
    pub sbr: Option<f64>,
    pub abr: f64,
    pub amd: f64,
    pub ao: f64,
    pub gan_mlp: f64,
    pub upper_bound: f64,
}

/// Published worst-case ratio comparison, n = 4..=10.
pub const WORST_CASE_BASELINES: [WorstCaseBaseline; 7] = [
    WorstCaseBaseline { n: 4, sbr: Some(0.354), abr: 0.459, amd: 0.600, ao: 0.625, gan_mlp: 0.634, upper_bound: 0.666 },
    WorstCaseBaseline { n: 5, sbr: Some(0.360), abr: 0.402, amd: 0.545, ao: 0.600, gan_mlp: 0.622, upper_bound: 0.714 },
    WorstCaseBaseline { n: 6, sbr: Some(0.394), abr: 0.386, amd: 0.497, ao: 0.583, gan_mlp: 0.592, upper_bound: 0.868 },
    WorstCaseBaseline { n: 7, sbr: None, abr: 0.360, amd: 0.465, ao: 0.571, gan_mlp: 0.626, upper_bound: 0.748 },
    WorstCaseBaseline { n: 8, sbr: None, abr: 0.352, amd: 0.444, ao: 0.563, gan_mlp: 0.654, upper_bound: 0.755 },
    WorstCaseBaseline { n: 9, sbr: None, abr: 0.339, amd: 0.422, ao: 0.556, gan_mlp: 0.682, upper_bound: 0.772 },
    WorstCaseBaseline { n: 10, sbr: None, abr: 0.336, amd: 0.405, ao: 0.550, gan_mlp: 0.623, upper_bound: 0.882 },
];

/// Published expected `Σh/S` of the trained mechanism under each prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectationBaseline {
    pub n: usize,
    pub uniform: f64,
    pub normal: f64,
}

/// Published expectation results, n = 3..=10; the normal prior is N(0.5, 0.1).
pub const EXPECTATION_BASELINES: [ExpectationBaseline; 8] = [
    ExpectationBaseline { n: 3, uniform: 2.079, normal: 2.101 },
    ExpectationBaseline { n: 4, uniform: 3.071, normal: 3.111 },
    ExpectationBaseline { n: 5, uniform: 4.061, normal: 4.142 },
    ExpectationBaseline { n: 6, uniform: 5.027, normal: 5.034 },
    ExpectationBaseline { n: 7, uniform: 6.009, normal: 6.067 },
    ExpectationBaseline { n: 8, uniform: 7.008, normal: 7.023 },
    ExpectationBaseline { n: 9, uniform: 8.002, normal: 8.008 },
    ExpectationBaseline { n: 10, uniform: 9.003, normal: 9.023 },
];

pub fn worst_case_baseline(n: usize) -> Option<WorstCaseBaseline> {
    WORST_CASE_BASELINES.iter().copied().find(|b| b.n == n)
}

pub fn expectation_baseline(n: usize) -> Option<ExpectationBaseline> {
    EXPECTATION_BASELINES.iter().copied().find(|b| b.n == n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub n: usize,
    pub metric: String,
    pub rows: Vec<ComparisonRow>,
    pub notes: Vec<String>,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        let mut s = format!("n = {}, {}\n", self.n, self.metric);
        for r in &self.rows {
            let v = r.value.map_or_else(|| "n too large".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(s, "  {:<width$}  {v}", r.method);
        }
        for note in &self.notes {
            let _ = writeln!(s, "note: {note}");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,metric,method,value\n");
        for r in &self.rows {
            let v = r.value.map_or_else(String::new, |v| format!("{v}"));
            let _ = writeln!(s, "{},{},{},{v}", self.n, self.metric, r.method);
        }
        s
    }
}

/// Our estimate next to the published numbers for the same `n`.
pub fn compare_with_baselines(report: &EvalReport, objective: Objective, prior: &Prior) -> Comparison {
    let n = report.n;
    let row = |m: &str, v: Option<f64>| ComparisonRow { method: m.to_string(), value: v };
    let mut notes = Vec::new();
    let (metric, mut rows) = match objective {
        Objective::WorstCase => {
            let mut rows = Vec::new();
            match worst_case_baseline(n) {
                Some(b) => rows.extend([
                    row("SBR", b.sbr),
                    row("ABR", Some(b.abr)),
                    row("AMD", Some(b.amd)),
                    row("AO", Some(b.ao)),
                    row("GAN+MLP (published)", Some(b.gan_mlp)),
                    row("UB (conjectured)", Some(b.upper_bound)),
                ]),
                None => notes.push(format!("no published worst-case row for n = {n} (tabulated for 4..=10)")),
            }
            if report.infeasible {
                notes.push(format!("our estimate is INFEASIBLE: {} violations", report.violation_count));
            }
            ("worst-case ratio alpha".to_string(), rows)
        }
        Objective::Expectation => {
            let mut rows = Vec::new();
            match (expectation_baseline(n), prior) {
                (Some(b), Prior::Uniform01) => rows.push(row("MLP+FEED (published, uniform)", Some(b.uniform))),
                (Some(b), Prior::Normal { mean, stddev }) if *mean == 0.5 && *stddev == 0.1 => {
                    rows.push(row("MLP+FEED (published, normal:0.5:0.1)", Some(b.normal)))
                }
                (Some(_), p) => notes.push(format!("no published expectation value for prior {p}")),
                (None, _) => notes.push(format!("no published expectation row for n = {n} (tabulated for 3..=10)")),
            }
            ("expected sum h / S".to_string(), rows)
        }
    };
    let ours = match objective {
        Objective::WorstCase => report.alpha_estimate,
        Objective::Expectation => report.expectation_estimate,
    };
    rows.insert(0, row("ours", Some(ours)));
    Comparison { n, metric, rows, notes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{ConstantShare, FallbackMax};
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn default_sizes_follow_table() {
        let want = [(4, 10_000), (5, 20_000), (6, 20_000), (7, 20_000), (8, 50_000), (9, 50_000), (10, 100_000)];
        for (n, size) in want {
            assert_eq!(default_test_size(n), size);
        }
    }

    #[test]
    fn test_set_halves() {
        let g = Generator::new(&[4, 8, 4], &mut rng::substream(0, 0)).unwrap();
        let set = build_test_set(4, &Prior::Uniform01, Some(&g), 101, &mut rng::substream(1, 0)).unwrap();
        assert_eq!(set.len(), 101);
        let plain = build_test_set(4, &Prior::Uniform01, None, 10, &mut rng::substream(1, 0)).unwrap();
        assert_eq!(plain.len(), 10);
        assert!(build_test_set(4, &Prior::Uniform01, None, 1, &mut rng::substream(1, 0)).is_err());
    }

    #[test]
    fn constant_share_is_flagged() {
        let set = build_test_set(3, &Prior::Uniform01, None, 500, &mut rng::substream(2, 0)).unwrap();
        let r = evaluate(&ConstantShare::new(3), &set, 3, 1e-3).unwrap();
        assert!(r.violation_count > 0);
        assert!(r.infeasible);
        assert!(r.summary_line().ends_with("INFEASIBLE"));
    }

    #[test]
    fn fallback_witness_gives_one_over_n() {
        for n in 3..=6 {
            let mut set = build_test_set(n, &Prior::Uniform01, None, 200, &mut rng::substream(3, 0)).unwrap();
            let mut w = vec![0.0; n];
            w[0] = 1.0;
            set.push(TypeProfile::new(w).unwrap());
            let r = evaluate(&FallbackMax::new(n), &set, n, 1e-3).unwrap();
            assert!((r.alpha_estimate - 1.0 / n as f64).abs() < 1e-12);
            assert_eq!(r.alpha_estimate, n as f64 - r.max_ratio_stat);
            assert_eq!(r.violation_count, 0);
            assert_eq!(r.histogram.total(), 201);
        }
    }

    #[test]
    fn grid_audit_fallback_small() {
        let a = grid_audit(&FallbackMax::new(3), 3, 4, 1e-12).unwrap();
        assert_eq!(a.profiles, 125);
        assert_eq!(a.violations, 0);
        assert!((a.alpha() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn baselines_embed_published_values() {
        let b = worst_case_baseline(8).unwrap();
        assert_eq!((b.ao, b.gan_mlp), (0.563, 0.654));
        assert_eq!(expectation_baseline(5).unwrap().uniform, 4.061);
        assert_eq!(expectation_baseline(6).unwrap().normal, 5.034);
        assert!(worst_case_baseline(3).is_none());
        let set = build_test_set(4, &Prior::Uniform01, None, 50, &mut rng::substream(4, 0)).unwrap();
        let r = evaluate(&FallbackMax::new(4), &set, 4, 1e-3).unwrap();
        let c = compare_with_baselines(&r, Objective::WorstCase, &Prior::Uniform01);
        let text = c.to_text();
        for v in ["0.354", "0.459", "0.600", "0.625", "0.634", "0.666"] {
            assert!(text.contains(v), "{v} missing from\n{text}");
        }
        let c = compare_with_baselines(&r, Objective::Expectation, &Prior::normal(0.5, 0.1).unwrap());
        assert!(c.to_csv().contains("3.111"));
    }

    #[test]
    fn histogram_csv_has_header_and_all_bins() {
        let h = Histogram::build(&[1.0, 2.0, 3.0], 4);
        assert_eq!(h.counts, vec![1, 0, 1, 1]);
        let csv = h.to_csv();
        assert!(csv.starts_with("bin_left,bin_right,count\n"));
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(Histogram::build(&[2.0, 2.0], 3).counts, vec![2, 0, 0]);
    }

    proptest! {
        #[test]
        fn evaluate_is_order_invariant(seed in 0u64..1000) {
            let set = build_test_set(4, &Prior::Uniform01, None, 300, &mut rng::substream(seed, 0)).unwrap();
            let mut rev = set.clone();
            rev.reverse();
            let h = FallbackMax::new(4);
            let a = evaluate(&h, &set, 4, 1e-3).unwrap();
            let b = evaluate(&h, &rev, 4, 1e-3).unwrap();
            prop_assert_eq!(a.max_ratio_stat, b.max_ratio_stat);
            prop_assert_eq!(a.min_ratio_stat, b.min_ratio_stat);
            prop_assert_eq!(&a.histogram, &b.histogram);
            prop_assert!(((a.expectation_estimate - b.expectation_estimate) / a.expectation_estimate).abs() < 1e-10);
        }

        #[test]
        fn max_ratio_grows_with_the_set(seed in 0u64..1000, cut in 2usize..300) {
            let set = build_test_set(5, &Prior::Uniform01, None, 300, &mut rng::substream(seed, 1)).unwrap();
            let h = FallbackMax::new(5);
            let sub = evaluate(&h, &set[..cut], 5, 1e-3).unwrap();
            let full = evaluate(&h, &set, 5, 1e-3).unwrap();
            prop_assert!(full.max_ratio_stat >= sub.max_ratio_stat);
            prop_assert_eq!(full.histogram.total(), 300);
        }
    }
}
