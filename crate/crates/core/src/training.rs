//! The two training pipelines.
//!
//! Both start from an optional supervised warm start toward a manual
//! mechanism, then minimise a penalty loss on `Σ_i h(θ_{-i})` with Adam. The
//! worst-case pipeline alternates with generator updates and tightens its
//! target ratio on a curriculum; the expectation pipeline reweights samples by
//! the prior density of a resampled coordinate.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;

use crate::adversary::{adversary_step, AdversaryStats, Generator};
use crate::config::{Objective, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{build_test_set, default_test_size, evaluate, report_from_ratios, EvalReport};
use crate::losses::{self, LossWeights};
use crate::mechanism::{first_best, others_rows, ratio_stats, RedistributionFn, TypeProfile};
use crate::nn::{save_checkpoint, AdamState, CheckpointMeta, LrSchedule, Mlp, NeuralH, OutputActivation, Role};
use crate::priors::{feed_resample, sample_profiles};
use crate::reference::ManualMechanism;
use crate::rng::{self, Stream};

/// Outcome of the supervised phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WarmStartReport {
    /// Name of the supervising mechanism, or `None` when skipped.
    pub target: Option<String>,
    pub steps: u64,
    /// Mean squared error against the target on held-out profiles.
    pub validation_mse: Option<f64>,
    /// Whether the MSE fell below `warm_start_tol` before the step cap.
    pub converged: bool,
}

/// One row of the loss curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: u64,
    /// Mean training loss since the previous point.
    pub train_loss: f64,
    pub val_loss: f64,
    pub alpha_target: Option<f64>,
    pub violations: usize,
}

/// Statistics of `Σh/S` on the held-out validation set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Validation {
    /// Early-stopping metric; lower is better.
    pub metric: f64,
    pub mean_ratio: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub max_deficit: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub objective: Objective,
    pub n: usize,
    pub seed: u64,
    pub warm_start: WarmStartReport,
    /// Unsupervised steps taken.
    pub steps: u64,
    pub early_stopped: bool,
    /// Step whose weights were returned: the best feasible validation point,
    /// or the last step when no validation point was feasible.
    pub selected_step: u64,
    pub adversary_steps: u64,
    /// Constant added to the network output after training.
    pub calibration_shift: f64,
    pub curve: Vec<CurvePoint>,
    pub final_validation: Option<Validation>,
    pub alpha_target: Option<f64>,
    pub curriculum_raises: u32,
    /// Steps at which the target had not moved for `curriculum_stall_window` steps.
    pub curriculum_stalls: Vec<u64>,
    pub test: EvalReport,
    pub alpha_estimate: Option<f64>,
    pub expectation_estimate: Option<f64>,
    /// Checkpoint files written, relative to the run directory.
    pub checkpoints: Vec<String>,
}

impl TrainReport {
    /// `step,train_loss,val_loss,alpha_target,violations` rows.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("step,train_loss,val_loss,alpha_target,violations\n");
        for p in &self.curve {
            let a = p.alpha_target.map_or_else(String::new, |a| format!("{a}"));
            let _ = writeln!(s, "{},{:.17e},{:.17e},{a},{}", p.step, p.train_loss, p.val_loss, p.violations);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub h: NeuralH,
    pub generator: Option<Generator>,
    pub report: TrainReport,
}

/// Xavier-initialised redistribution network for `cfg`.
pub fn init_h(cfg: &TrainConfig) -> Result<NeuralH> {
    let net = Mlp::init_xavier(&cfg.h_layer_sizes(), OutputActivation::Identity, &mut rng::stream(cfg.seed, Stream::HInit))?;
    NeuralH::new(net, cfg.feature_map(), cfg.n)
}

pub fn checkpoint_meta(cfg: &TrainConfig, role: Role, step: u64) -> CheckpointMeta {
    CheckpointMeta {
        role,
        n: cfg.n,
        features: cfg.features,
        top_k: cfg.top_k,
        prior: cfg.prior,
        objective: cfg.objective,
        seed: cfg.seed,
        step,
    }
}

/// Loss of one profile and its derivative with respect to `Σh`.
type ProfileLoss<'a> = dyn Fn(f64, f64) -> (f64, f64) + 'a;

/// One Adam step on `Σ_p weight_p · loss(Σh_p, S_p) / batch`. Returns the mean
/// weighted loss.
fn penalty_step(
    h: &mut NeuralH,
    adam: &mut AdamState,
    profiles: &[TypeProfile],
    weights: &[f64],
    loss: &ProfileLoss<'_>,
) -> Result<f64> {
    let n = h.n_agents();
    let b = profiles.len();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let rows = others_rows(profiles, n);
    let feats = h.map.extract_rows(rows.view());
    let (out, trace) = h.net.forward(feats.view())?;
    let mut d_out = Array2::zeros((b * n, 1));
    let mut total = 0.0;
    for (p, prof) in profiles.iter().enumerate() {
        let sum_h: f64 = (0..n).map(|i| out[[p * n + i, 0]]).sum();
        let (l, dl) = loss(sum_h, first_best(prof));
        total += weights[p] * l;
        let g = weights[p] * dl / b as f64;
        for i in 0..n {
            d_out[[p * n + i, 0]] = g;
        }
    }
    let mean = total / b as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!("training loss at step {}", adam.step_count())));
    }
    let (grads, _) = h.net.backward(&trace, d_out.view())?;
    adam.step(&mut h.net, &grads)?;
    Ok(mean)
}

fn supervised_mse<T: RedistributionFn + ?Sized>(h: &NeuralH, target: &T, rows: &Array2<f64>) -> f64 {
    let got = h.eval_sorted_batch(rows.view());
    let want = target.eval_sorted_batch(rows.view());
    got.iter().zip(&want).map(|(a, b)| losses::supervised_loss(*a, *b)).sum::<f64>() / got.len() as f64
}

/// Supervise `h` toward the configured manual mechanism until the held-out
/// MSE drops below `warm_start_tol` or `warm_start_max_steps` is reached.
pub fn warm_start(cfg: &TrainConfig, h: &mut NeuralH) -> Result<WarmStartReport> {
    let Some(target) = ManualMechanism::for_warm_start(cfg.warm_start, cfg.n)? else {
        return Ok(WarmStartReport { target: None, steps: 0, validation_mse: None, converged: false });
    };
    warm_start_to(cfg, h, &target, target.name())
}

/// Warm start toward an arbitrary target.
pub fn warm_start_to<T: RedistributionFn + ?Sized>(
    cfg: &TrainConfig,
    h: &mut NeuralH,
    target: &T,
    name: &str,
) -> Result<WarmStartReport> {
    let n = cfg.n;
    let mut data = rng::stream(cfg.seed, Stream::WarmStart);
    let mut val_rng = rng::substream(cfg.seed, Stream::WarmStart as u64 + 100);
    let val_rows = others_rows(&sample_profiles(&cfg.prior, n, cfg.validation_size, &mut val_rng)?, n);
    let mut adam = AdamState::new(&h.net, cfg.schedule());
    let every = cfg.validation_every.max(1);
    let mut mse = supervised_mse(h, target, &val_rows);
    let mut steps = 0;
    while !(mse < cfg.warm_start_tol) && steps < cfg.warm_start_max_steps {
        let profiles = sample_profiles(&cfg.prior, n, cfg.batch_size, &mut data)?;
        let rows = others_rows(&profiles, n);
        let want = target.eval_sorted_batch(rows.view());
        let feats = h.map.extract_rows(rows.view());
        let (out, trace) = h.net.forward(feats.view())?;
        let m = out.nrows() as f64;
        let mut d_out = Array2::zeros(out.dim());
        for (r, w) in want.iter().enumerate() {
            d_out[[r, 0]] = 2.0 * (out[[r, 0]] - w) / m;
        }
        let (grads, _) = h.net.backward(&trace, d_out.view())?;
        adam.step(&mut h.net, &grads)?;
        steps += 1;
        if steps % every == 0 || steps == cfg.warm_start_max_steps {
            mse = supervised_mse(h, target, &val_rows);
            if !mse.is_finite() {
                return Err(Error::NonFinite(format!("warm-start loss at step {steps}")));
            }
        }
    }
    Ok(WarmStartReport { target: Some(name.to_string()), steps, validation_mse: Some(mse), converged: mse < cfg.warm_start_tol })
}

fn validation_stats(ratios: &[f64], n: usize, tolerance: f64, objective: Objective) -> Result<Validation> {
    let r = report_from_ratios(ratios, n, tolerance)?;
    let target = n as f64 - 1.0;
    let metric = match objective {
        Objective::Expectation => ratios.iter().map(|x| (x - target).abs()).sum::<f64>() / ratios.len() as f64,
        Objective::WorstCase => r.max_ratio_stat + 10.0 * r.max_deficit,
    };
    Ok(Validation {
        metric,
        mean_ratio: r.expectation_estimate,
        min_ratio: r.min_ratio_stat,
        max_ratio: r.max_ratio_stat,
        max_deficit: r.max_deficit,
        violations: r.violation_count,
    })
}

/// Tracks the best validation metric and decides when improvement has stalled.
struct EarlyStop {
    windows: usize,
    window_size: usize,
    delta: f64,
    best: f64,
    since: usize,
    acc: f64,
    count: usize,
}

impl EarlyStop {
    fn new(cfg: &TrainConfig) -> Self {
        EarlyStop {
            windows: cfg.early_stop_windows,
            window_size: cfg.early_stop_window_size,
            delta: cfg.early_stop_delta,
            best: f64::INFINITY,
            since: 0,
            acc: 0.0,
            count: 0,
        }
    }

    /// Record a validation metric; true when training should stop. Metrics
    /// are averaged over `window_size` passes before being compared.
    fn update(&mut self, metric: f64) -> bool {
        self.acc += metric;
        self.count += 1;
        if self.count < self.window_size {
            return false;
        }
        let mean = self.acc / self.count as f64;
        self.acc = 0.0;
        self.count = 0;
        if mean < self.best - self.delta {
            self.best = mean;
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.windows > 0 && self.since >= self.windows
    }

    /// Restart the patience count; used while a moving target keeps training productive.
    fn hold(&mut self) {
        self.since = 0;
    }
}

/// Margin below the reference mechanism's ratio for the first curriculum target.
const ALPHA_MARGIN: f64 = 0.02;

/// Empirical worst-case ratio `n − max Σh/S` of the warm-start reference (or of
/// `h` itself without one) on validation-style profiles plus every vertex of the
/// type cube, where simple mechanisms attain their worst case.
fn reference_alpha(cfg: &TrainConfig, h: &NeuralH, gen: &Generator) -> Result<f64> {
    let n = cfg.n;
    let mut set = sample_profiles(&cfg.prior, n, cfg.validation_size, &mut rng::substream(cfg.seed, Stream::Validation as u64 + 300))?;
    set.extend(gen.generate_batch(cfg.validation_size / 2, &mut rng::substream(cfg.seed, Stream::Validation as u64 + 301))?);
    for mask in 0u32..(1 << n) {
        set.push(TypeProfile::new((0..n).map(|i| f64::from((mask >> i) & 1)).collect())?);
    }
    let ratios = match ManualMechanism::for_warm_start(cfg.warm_start, n)? {
        Some(m) => ratio_stats(&m, &set)?,
        None => ratio_stats(h, &set)?,
    };
    Ok(n as f64 - ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Weights at the best validation point without violations.
#[derive(Default)]
struct BestSnapshot {
    metric: f64,
    step: u64,
    net: Option<Mlp>,
}

impl BestSnapshot {
    fn offer(&mut self, v: &Validation, step: u64, net: &Mlp) {
        if v.violations == 0 && (self.net.is_none() || v.metric < self.metric) {
            self.metric = v.metric;
            self.step = step;
            self.net = Some(net.clone());
        }
    }

    /// Swap the best weights into `h`; returns the step they came from.
    fn restore(self, h: &mut NeuralH, last_step: u64) -> u64 {
        match self.net {
            Some(net) => {
                h.net = net;
                self.step
            }
            None => last_step,
        }
    }
}

struct Checkpointer<'a> {
    dir: Option<&'a Path>,
    written: Vec<String>,
}

impl Checkpointer<'_> {
    fn save(&mut self, cfg: &TrainConfig, step: u64, h: &NeuralH, gen: Option<&Generator>) -> Result<()> {
        let Some(dir) = self.dir else { return Ok(()) };
        let rel = format!("checkpoints/h_step{step:07}.json");
        save_checkpoint(&dir.join(&rel), &h.net, &checkpoint_meta(cfg, Role::H, step))?;
        self.written.push(rel);
        if let Some(g) = gen {
            let rel = format!("checkpoints/adversary_step{step:07}.json");
            save_checkpoint(&dir.join(&rel), &g.net, &checkpoint_meta(cfg, Role::Adversary, step))?;
            self.written.push(rel);
        }
        Ok(())
    }
}

const CALIBRATION_SIZE: usize = 20_000;

/// Smallest `c ≥ 0` such that `h + c` has no budget deficit on `profiles`.
pub fn calibration_shift<H: RedistributionFn + ?Sized>(h: &H, profiles: &[TypeProfile]) -> Result<f64> {
    let n = h.n_agents();
    let target = n as f64 - 1.0;
    let ratios = ratio_stats(h, profiles)?;
    let worst = profiles
        .iter()
        .zip(&ratios)
        .map(|(p, r)| (target - r) * first_best(p))
        .fold(0.0, f64::max);
    Ok(worst / n as f64)
}

/// Raise every output of `h` by `c` through the output bias.
pub fn shift_output(h: &mut NeuralH, c: f64) -> Result<()> {
    let mut biases = h.net.biases().to_vec();
    let last = biases.last_mut().expect("at least one layer");
    last[0] += c;
    h.net = Mlp::from_parts(h.net.weights().to_vec(), biases, h.net.output_activation())?;
    Ok(())
}

/// Apply the configured post-training shift using an audit set disjoint from
/// validation and test data.
fn calibrate(cfg: &TrainConfig, h: &mut NeuralH, gen: Option<&Generator>) -> Result<f64> {
    if !cfg.calibrate {
        return Ok(0.0);
    }
    let mut r = rng::substream(cfg.seed, Stream::Audit as u64 + 200);
    let set = build_test_set(cfg.n, &cfg.prior, gen, CALIBRATION_SIZE, &mut r)?;
    let c = calibration_shift(h, &set)?;
    if c > 0.0 {
        shift_output(h, c)?;
    }
    Ok(c)
}

fn final_test(cfg: &TrainConfig, h: &NeuralH, gen: Option<&Generator>) -> Result<EvalReport> {
    let size = cfg.test_size.unwrap_or_else(|| default_test_size(cfg.n));
    let set = build_test_set(cfg.n, &cfg.prior, gen, size, &mut rng::stream(cfg.seed, Stream::Test))?;
    evaluate(h, &set, cfg.n, cfg.tolerance)
}

/// Run the pipeline selected by `cfg.objective`. When `run_dir` is given the
/// config snapshot, checkpoints, loss curve and report are written there.
pub fn train(cfg: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.to_text())?;
    }
    let outcome = match cfg.objective {
        Objective::WorstCase => train_worstcase(cfg, run_dir)?,
        Objective::Expectation => train_expectation(cfg, run_dir)?,
    };
    if let Some(dir) = run_dir {
        write_run_files(dir, cfg, &outcome)?;
        let log = format!(
            "seed = {}\nobjective = {}\nn = {}\nsteps = {}\nwall_clock_seconds = {:.3}\n",
            cfg.seed,
            cfg.objective,
            cfg.n,
            outcome.report.steps,
            started.elapsed().as_secs_f64()
        );
        fs::write(dir.join("run.log"), log)?;
    }
    Ok(outcome)
}

/// Final model, adversary, loss curve and report.
pub fn write_run_files(dir: &Path, cfg: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    let step = outcome.report.steps;
    save_checkpoint(&dir.join("model.json"), &outcome.h.net, &checkpoint_meta(cfg, Role::H, step))?;
    if let Some(g) = &outcome.generator {
        save_checkpoint(&dir.join("adversary.json"), &g.net, &checkpoint_meta(cfg, Role::Adversary, step))?;
    }
    fs::write(dir.join("loss.csv"), outcome.report.curve_csv())?;
    fs::write(dir.join("train_report.json"), serde_json::to_string_pretty(&outcome.report)?)?;
    Ok(())
}

fn new_report(cfg: &TrainConfig, warm: WarmStartReport, test: EvalReport) -> TrainReport {
    TrainReport {
        objective: cfg.objective,
        n: cfg.n,
        seed: cfg.seed,
        warm_start: warm,
        steps: 0,
        early_stopped: false,
        selected_step: 0,
        adversary_steps: 0,
        calibration_shift: 0.0,
        curve: Vec::new(),
        final_validation: None,
        alpha_target: None,
        curriculum_raises: 0,
        curriculum_stalls: Vec::new(),
        alpha_estimate: None,
        expectation_estimate: None,
        test,
        checkpoints: Vec::new(),
    }
}

/// Warm start, then alternate penalty steps on mixed batches with generator
/// steps, raising the target ratio whenever validation allows.
pub fn train_worstcase(cfg: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    if cfg.objective != Objective::WorstCase {
        return Err(Error::config("objective", "train_worstcase needs objective = worstcase"));
    }
    let n = cfg.n;
    let nf = n as f64;
    let mut h = init_h(cfg)?;
    let warm = warm_start(cfg, &mut h)?;
    let mut gen = Generator::new(&cfg.gen_layer_sizes(), &mut rng::stream(cfg.seed, Stream::GenInit))?;
    let mut h_adam = AdamState::new(&h.net, cfg.schedule());
    let gen_schedule = LrSchedule { every: cfg.lr_decay_every * cfg.adv_ratio.unwrap_or(1), ..cfg.schedule() };
    let mut gen_adam = AdamState::new(&gen.net, gen_schedule);
    let mut train_rng = rng::stream(cfg.seed, Stream::Train);
    let mut adv_rng = rng::stream(cfg.seed, Stream::Adversary);
    let mut ckpt = Checkpointer { dir: run_dir, written: Vec::new() };

    let adversarial = cfg.adv_ratio.is_some();
    let val_random = sample_profiles(
        &cfg.prior,
        n,
        cfg.validation_size - if adversarial { cfg.validation_size / 2 } else { 0 },
        &mut rng::stream(cfg.seed, Stream::Validation),
    )?;
    let validate = |h: &NeuralH, gen: &Generator| -> Result<Validation> {
        let mut set = val_random.clone();
        if adversarial {
            let mut noise = rng::substream(cfg.seed, Stream::Validation as u64 + 100);
            set.extend(gen.generate_batch(cfg.validation_size / 2, &mut noise)?);
        }
        validation_stats(&ratio_stats(h, &set)?, n, cfg.tolerance, Objective::WorstCase)
    };

    let initial = validate(&h, &gen)?;
    let mut alpha_t = match cfg.alpha_target_init {
        Some(a) => a,
        None => (reference_alpha(cfg, &h, &gen)? - ALPHA_MARGIN).clamp(0.01, 1.0),
    };
    let mut report_points = Vec::new();
    let mut early = EarlyStop::new(cfg);
    let mut last_val = initial;
    let mut raises = 0;
    let mut last_raise = 0u64;
    let mut stalls = Vec::new();
    let mut adv_steps = 0u64;
    let mut loss_acc = 0.0;
    let mut loss_cnt = 0u64;
    let mut step = 0u64;
    let mut early_stopped = false;

    while step < cfg.max_steps {
        if let Some(r) = cfg.adv_ratio {
            if step % r == 0 {
                let _: AdversaryStats = adversary_step(&mut gen, &h, cfg.batch_size, &mut gen_adam, &mut adv_rng)?;
                adv_steps += 1;
            }
        }
        let mut batch = Vec::with_capacity(cfg.batch_size);
        if adversarial {
            batch.extend(gen.generate_batch(cfg.batch_size / 2, &mut train_rng)?);
        }
        batch.extend(sample_profiles(&cfg.prior, n, cfg.batch_size - batch.len(), &mut train_rng)?);
        let w = LossWeights::new(cfg.epsilon, alpha_t)?;
        let loss = |sum_h: f64, s: f64| (losses::worstcase_loss(sum_h, s, n, &w), losses::worstcase_loss_grad(sum_h, s, n, &w));
        loss_acc += penalty_step(&mut h, &mut h_adam, &batch, &vec![1.0; batch.len()], &loss)?;
        loss_cnt += 1;
        step += 1;

        let at_val = step % cfg.validation_every == 0;
        let at_curr = cfg.curriculum_every > 0 && step % cfg.curriculum_every == 0;
        if at_val || at_curr {
            last_val = validate(&h, &gen)?;
        }
        if at_curr {
            if last_val.max_deficit < 1e-4 && nf - last_val.max_ratio > alpha_t {
                alpha_t = (alpha_t + cfg.alpha_target_step).min(1.0);
                raises += 1;
                last_raise = step;
                early.hold();
            } else if cfg.curriculum_stall_window > 0
                && step - last_raise >= cfg.curriculum_stall_window
                && stalls.last().is_none_or(|&s| step - s >= cfg.curriculum_stall_window)
            {
                stalls.push(step);
            }
        }
        if at_val {
            report_points.push(CurvePoint {
                step,
                train_loss: loss_acc / loss_cnt as f64,
                val_loss: last_val.metric,
                alpha_target: Some(alpha_t),
                violations: last_val.violations,
            });
            loss_acc = 0.0;
            loss_cnt = 0;
            if early.update(last_val.metric) {
                early_stopped = true;
            }
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            ckpt.save(cfg, step, &h, Some(&gen))?;
        }
        if early_stopped {
            break;
        }
    }

    let shift = calibrate(cfg, &mut h, adversarial.then_some(&gen))?;
    let test = final_test(cfg, &h, adversarial.then_some(&gen))?;
    let mut report = new_report(cfg, warm, test);
    report.steps = step;
    report.selected_step = step;
    report.calibration_shift = shift;
    report.early_stopped = early_stopped;
    report.adversary_steps = adv_steps;
    report.curve = report_points;
    report.final_validation = Some(validate(&h, &gen)?);
    report.alpha_target = Some(alpha_t);
    report.curriculum_raises = raises;
    report.curriculum_stalls = stalls;
    report.alpha_estimate = Some(report.test.alpha_estimate);
    report.expectation_estimate = Some(report.test.expectation_estimate);
    report.checkpoints = ckpt.written;
    Ok(TrainOutcome { h, generator: Some(gen), report })
}

/// Warm start, then penalty descent toward `Σh = (n−1)S` on prior samples,
/// optionally reweighted by the prior density of one resampled coordinate.
pub fn train_expectation(cfg: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    if cfg.objective != Objective::Expectation {
        return Err(Error::config("objective", "train_expectation needs objective = expectation"));
    }
    let n = cfg.n;
    let mut h = init_h(cfg)?;
    let warm = warm_start(cfg, &mut h)?;
    let mut adam = AdamState::new(&h.net, cfg.schedule());
    let mut train_rng = rng::stream(cfg.seed, Stream::Train);
    let mut ckpt = Checkpointer { dir: run_dir, written: Vec::new() };
    let val_set = sample_profiles(&cfg.prior, n, cfg.validation_size, &mut rng::stream(cfg.seed, Stream::Validation))?;
    let validate = |h: &NeuralH| validation_stats(&ratio_stats(h, &val_set)?, n, cfg.tolerance, Objective::Expectation);
    let w = LossWeights::new(cfg.epsilon, 1.0)?;
    let loss = |sum_h: f64, s: f64| (losses::expectation_loss(sum_h, s, n, &w), losses::expectation_loss_grad(sum_h, s, n, &w));

    let mut points = Vec::new();
    let mut early = EarlyStop::new(cfg);
    let mut best = BestSnapshot::default();
    let mut loss_acc = 0.0;
    let mut loss_cnt = 0u64;
    let mut step = 0u64;
    let mut early_stopped = false;
    while step < cfg.max_steps {
        let mut batch = sample_profiles(&cfg.prior, n, cfg.batch_size, &mut train_rng)?;
        let mut weights = vec![1.0; batch.len()];
        if cfg.feed {
            for (p, wt) in batch.iter_mut().zip(weights.iter_mut()) {
                let fs = feed_resample(p, &cfg.prior, cfg.pdf_base, &mut train_rng)?;
                *p = fs.profile;
                *wt = fs.weight;
            }
        }
        loss_acc += penalty_step(&mut h, &mut adam, &batch, &weights, &loss)?;
        loss_cnt += 1;
        step += 1;
        if step % cfg.validation_every == 0 {
            let v = validate(&h)?;
            points.push(CurvePoint {
                step,
                train_loss: loss_acc / loss_cnt as f64,
                val_loss: v.metric,
                alpha_target: None,
                violations: v.violations,
            });
            loss_acc = 0.0;
            loss_cnt = 0;
            early_stopped = early.update(v.metric);
            best.offer(&v, step, &h.net);
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            ckpt.save(cfg, step, &h, None)?;
        }
        if early_stopped {
            break;
        }
    }

    let selected = best.restore(&mut h, step);
    let shift = calibrate(cfg, &mut h, None)?;
    let test = final_test(cfg, &h, None)?;
    let mut report = new_report(cfg, warm, test);
    report.steps = step;
    report.selected_step = selected;
    report.calibration_shift = shift;
    report.early_stopped = early_stopped;
    report.curve = points;
    report.final_validation = Some(validate(&h)?);
    report.alpha_estimate = Some(report.test.alpha_estimate);
    report.expectation_estimate = Some(report.test.expectation_estimate);
    report.checkpoints = ckpt.written;
    Ok(TrainOutcome { h, generator: None, report })
}

/// Train a fresh generator against a frozen `h` for `steps` updates; used to
/// audit models that never saw an adversary.
pub fn train_adversary(cfg: &TrainConfig, h: &NeuralH, steps: u64) -> Result<(Generator, Vec<AdversaryStats>)> {
    let mut gen = Generator::new(&cfg.gen_layer_sizes(), &mut rng::stream(cfg.seed, Stream::Audit))?;
    let mut adam = AdamState::new(&gen.net, cfg.schedule());
    let mut r = rng::substream(cfg.seed, Stream::Audit as u64 + 100);
    let mut stats = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        stats.push(adversary_step(&mut gen, h, cfg.batch_size, &mut adam, &mut r)?);
    }
    Ok((gen, stats))
}

/// Spreads of `Σh/S` on a random-only set and on a half-adversarial set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReport {
    pub n: usize,
    pub train: TrainReport,
    pub audit_steps: u64,
    pub set_a: EvalReport,
    pub set_b: EvalReport,
}

impl ContrastReport {
    pub fn to_text(&self) -> String {
        format!(
            "set   size    min_ratio   max_ratio   alpha      violations\n\
             A     {:<7} {:<11.6} {:<11.6} {:<10.6} {}\n\
             B     {:<7} {:<11.6} {:<11.6} {:<10.6} {}\n",
            self.set_a.test_size,
            self.set_a.min_ratio_stat,
            self.set_a.max_ratio_stat,
            self.set_a.alpha_estimate,
            self.set_a.violation_count,
            self.set_b.test_size,
            self.set_b.min_ratio_stat,
            self.set_b.max_ratio_stat,
            self.set_b.alpha_estimate,
            self.set_b.violation_count,
        )
    }
}

/// Train on random profiles only (no adversary), then audit with a generator
/// trained against the frozen model: set A holds `size` random profiles, set B
/// `size / 2` adversarial plus `size / 2` random ones.
pub fn contrast(cfg: &TrainConfig, size: usize, run_dir: Option<&Path>) -> Result<(TrainOutcome, ContrastReport)> {
    let mut plain = cfg.clone();
    plain.adv_ratio = None;
    let outcome = train(&plain, run_dir)?;
    let (gen, _) = train_adversary(&plain, &outcome.h, cfg.audit_steps)?;
    let mut r = rng::stream(cfg.seed, Stream::Data);
    let set_a = build_test_set(cfg.n, &cfg.prior, None, size, &mut r)?;
    let set_b = build_test_set(cfg.n, &cfg.prior, Some(&gen), size, &mut r)?;
    let report = ContrastReport {
        n: cfg.n,
        train: outcome.report.clone(),
        audit_steps: cfg.audit_steps,
        set_a: evaluate(&outcome.h, &set_a, cfg.n, cfg.tolerance)?,
        set_b: evaluate(&outcome.h, &set_b, cfg.n, cfg.tolerance)?,
    };
    if let Some(dir) = run_dir {
        save_checkpoint(&dir.join("audit_adversary.json"), &gen.net, &checkpoint_meta(&plain, Role::Adversary, cfg.audit_steps))?;
        fs::write(dir.join("contrast.txt"), report.to_text())?;
        fs::write(dir.join("contrast_report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok((outcome, report))
}
