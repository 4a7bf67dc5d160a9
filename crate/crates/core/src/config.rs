//! Experiment configuration as flat `key = value` text.
//!
//! Lines starting with `#` (and anything after a `#`) are comments. Unknown
//! keys are rejected by name. `n`, `objective` and `prior` are required;
//! everything else has a default.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureCombo, FeatureMap};
use crate::nn::LrSchedule;
use crate::priors::{PdfBase, Prior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    WorstCase,
    Expectation,
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "worstcase" | "worst-case" | "worst_case" => Ok(Objective::WorstCase),
            "expectation" => Ok(Objective::Expectation),
            other => Err(Error::config("objective", format!("expected `worstcase` or `expectation`, got `{other}`"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::WorstCase => "worstcase",
            Objective::Expectation => "expectation",
        })
    }
}

/// Supervised warm-start target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmStart {
    Fallback,
    Ao,
    None,
}

impl FromStr for WarmStart {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fallback" => Ok(WarmStart::Fallback),
            "ao" => Ok(WarmStart::Ao),
            "none" => Ok(WarmStart::None),
            other => Err(Error::config("warm_start", format!("expected fallback, ao or none, got `{other}`"))),
        }
    }
}

impl fmt::Display for WarmStart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarmStart::Fallback => "fallback",
            WarmStart::Ao => "ao",
            WarmStart::None => "none",
        })
    }
}

/// Every knob of a training run. Identical configs give identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n: usize,
    pub objective: Objective,
    pub prior: Prior,
    pub features: FeatureCombo,
    pub top_k: usize,
    pub batch_size: usize,
    pub epsilon: f64,
    /// `None`: start from the warm-start reference's worst-case ratio minus 0.02.
    pub alpha_target_init: Option<f64>,
    pub alpha_target_step: f64,
    pub curriculum_every: u64,
    pub curriculum_stall_window: u64,
    /// h-steps per adversary step; `None` disables the adversary.
    pub adv_ratio: Option<u64>,
    pub warm_start: WarmStart,
    pub warm_start_max_steps: u64,
    pub warm_start_tol: f64,
    pub seed: u64,
    pub max_steps: u64,
    pub checkpoint_every: u64,
    pub validation_every: u64,
    pub validation_size: usize,
    pub early_stop_windows: usize,
    pub early_stop_window_size: usize,
    pub early_stop_delta: f64,
    pub feed: bool,
    pub calibrate: bool,
    pub pdf_base: PdfBase,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub gen_hidden_layers: usize,
    pub gen_hidden_width: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub tolerance: f64,
    pub test_size: Option<usize>,
    pub audit_steps: u64,
    pub workers: usize,
}

/// Keys accepted in config files, in snapshot order.
pub const KEYS: &[(&str, &str)] = &[
    ("n", "number of agents (required, ≥ 2)"),
    ("objective", "worstcase | expectation (required)"),
    ("prior", "uniform | normal:<mean>:<stddev> (required)"),
    ("features", "raw | c1 .. c8 (default: c8 for n ≥ 5, raw otherwise)"),
    ("top_k", "number of highest types kept by reduced features (default 1)"),
    ("batch_size", "profiles per step (default 64)"),
    ("epsilon", "objective-loss weight (default 0.01 worstcase, 1e-4 expectation)"),
    ("alpha_target_init", "initial worst-case target ratio, or `auto` (default auto)"),
    ("alpha_target_step", "curriculum increment (default 0.005)"),
    ("curriculum_every", "h-steps between curriculum checks (default 500)"),
    ("curriculum_stall_window", "h-steps without a target raise before a stall is reported (default 10000)"),
    ("adv_ratio", "h-steps per adversary step, or `inf` to disable (default 5)"),
    ("warm_start", "fallback | ao | none (default fallback)"),
    ("warm_start_max_steps", "supervised step cap (default 20000)"),
    ("warm_start_tol", "supervised MSE target (default 1e-5)"),
    ("seed", "root random seed (default 0)"),
    ("max_steps", "unsupervised h-step cap (default 50000)"),
    ("checkpoint_every", "h-steps between checkpoints, 0 for final only (default 5000)"),
    ("validation_every", "h-steps between validation passes (default 200)"),
    ("validation_size", "held-out profiles (default 2000)"),
    ("early_stop_windows", "validation windows without improvement before stopping, 0 disables (default 5)"),
    ("early_stop_window_size", "validation passes averaged into one early-stop window (default 3)"),
    ("early_stop_delta", "minimum improvement of the validation metric (default 1e-5)"),
    ("feed", "weight losses by the prior density of a resampled coordinate (default true)"),
    ("calibrate", "after training, raise h by the largest per-agent deficit seen on an audit set (default true)"),
    ("pdf_base", "e | 10, base used to exponentiate log-densities (default e)"),
    ("hidden_layers", "h-network hidden layers (default 6)"),
    ("hidden_width", "h-network hidden width (default 100)"),
    ("gen_hidden_layers", "generator hidden layers (default 4)"),
    ("gen_hidden_width", "generator hidden width (default 64)"),
    ("learning_rate", "initial Adam rate (default 0.001)"),
    ("lr_decay", "rate multiplier per decay period (default 0.98)"),
    ("lr_decay_every", "steps per decay period (default 100)"),
    ("tolerance", "relative violation tolerance (default 1e-3)"),
    ("test_size", "evaluation set size, or `auto` for the per-n default"),
    ("audit_steps", "adversary steps when auditing a frozen mechanism (default 2000)"),
    ("workers", "evaluation threads (default 1)"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| Error::config(key, format!("cannot parse `{}`", value.trim())))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(Error::config(key, format!("expected true or false, got `{other}`"))),
    }
}

/// Split config text into ordered `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = k.trim().to_string();
        if !KEYS.iter().any(|(name, _)| *name == key) {
            return Err(Error::config(&key, "unknown key"));
        }
        if pairs.iter().any(|(seen, _)| *seen == key) {
            return Err(Error::config(&key, "given more than once"));
        }
        pairs.push((key, v.trim().to_string()));
    }
    Ok(pairs)
}

/// Config under construction; required keys stay unset until given.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    n: Option<usize>,
    objective: Option<Objective>,
    prior: Option<Prior>,
    features: Option<FeatureCombo>,
    epsilon: Option<f64>,
    rest: Vec<(String, String)>,
}

impl ConfigBuilder {
    pub fn set(&mut self, key: &str, value: &str) -> Result<&mut Self> {
        match key {
            "n" => self.n = Some(parse(key, value)?),
            "objective" => self.objective = Some(value.parse()?),
            "prior" => self.prior = Some(value.parse()?),
            "features" => self.features = Some(value.parse()?),
            "epsilon" => self.epsilon = Some(parse(key, value)?),
            k if KEYS.iter().any(|(name, _)| *name == k) => {
                self.rest.retain(|(seen, _)| seen != k);
                self.rest.push((k.to_string(), value.to_string()));
            }
            k => return Err(Error::config(k, "unknown key")),
        }
        Ok(self)
    }

    pub fn build(&self) -> Result<TrainConfig> {
        let n = self.n.ok_or_else(|| Error::config("n", "missing required key"))?;
        let objective = self.objective.ok_or_else(|| Error::config("objective", "missing required key"))?;
        let prior = self.prior.ok_or_else(|| Error::config("prior", "missing required key"))?;
        let mut c = TrainConfig::defaults(n, objective, prior);
        if let Some(f) = self.features {
            c.features = f;
        }
        if let Some(e) = self.epsilon {
            c.epsilon = e;
        }
        for (k, v) in &self.rest {
            c.apply(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

impl TrainConfig {
    pub fn defaults(n: usize, objective: Objective, prior: Prior) -> Self {
        TrainConfig {
            n,
            objective,
            prior,
            features: FeatureCombo::default_for(n),
            top_k: 1,
            batch_size: 64,
            epsilon: match objective {
                Objective::WorstCase => 0.01,
                Objective::Expectation => 1e-4,
            },
            alpha_target_init: None,
            alpha_target_step: 0.005,
            curriculum_every: 500,
            curriculum_stall_window: 10_000,
            adv_ratio: Some(5),
            warm_start: WarmStart::Fallback,
            warm_start_max_steps: 20_000,
            warm_start_tol: 1e-5,
            seed: 0,
            max_steps: 50_000,
            checkpoint_every: 5_000,
            validation_every: 200,
            validation_size: 2_000,
            early_stop_windows: 5,
            early_stop_window_size: 3,
            early_stop_delta: 1e-5,
            feed: true,
            calibrate: true,
            pdf_base: PdfBase::E,
            hidden_layers: 6,
            hidden_width: 100,
            gen_hidden_layers: 4,
            gen_hidden_width: 64,
            learning_rate: 1e-3,
            lr_decay: 0.98,
            lr_decay_every: 100,
            tolerance: 1e-3,
            test_size: None,
            audit_steps: 2_000,
            workers: 1,
        }
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let auto = value.trim() == "auto";
        match key {
            "top_k" => self.top_k = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "alpha_target_init" => self.alpha_target_init = if auto { None } else { Some(parse(key, value)?) },
            "alpha_target_step" => self.alpha_target_step = parse(key, value)?,
            "curriculum_every" => self.curriculum_every = parse(key, value)?,
            "curriculum_stall_window" => self.curriculum_stall_window = parse(key, value)?,
            "adv_ratio" => {
                self.adv_ratio = match value.trim() {
                    "inf" | "none" | "off" | "0" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "warm_start" => self.warm_start = value.parse()?,
            "warm_start_max_steps" => self.warm_start_max_steps = parse(key, value)?,
            "warm_start_tol" => self.warm_start_tol = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "validation_every" => self.validation_every = parse(key, value)?,
            "validation_size" => self.validation_size = parse(key, value)?,
            "early_stop_windows" => self.early_stop_windows = parse(key, value)?,
            "early_stop_window_size" => self.early_stop_window_size = parse(key, value)?,
            "early_stop_delta" => self.early_stop_delta = parse(key, value)?,
            "feed" => self.feed = parse_bool(key, value)?,
            "calibrate" => self.calibrate = parse_bool(key, value)?,
            "pdf_base" => self.pdf_base = value.parse()?,
            "hidden_layers" => self.hidden_layers = parse(key, value)?,
            "hidden_width" => self.hidden_width = parse(key, value)?,
            "gen_hidden_layers" => self.gen_hidden_layers = parse(key, value)?,
            "gen_hidden_width" => self.gen_hidden_width = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, value)?,
            "tolerance" => self.tolerance = parse(key, value)?,
            "test_size" => self.test_size = if auto { None } else { Some(parse(key, value)?) },
            "audit_steps" => self.audit_steps = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "objective" => self.objective = value.parse()?,
            "prior" => self.prior = value.parse()?,
            "features" => self.features = value.parse()?,
            "epsilon" => self.epsilon = parse(key, value)?,
            k => return Err(Error::config(k, "unknown key")),
        }
        Ok(())
    }

    /// Override one key in an already built config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.apply(key, value)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(Error::config(k, why.to_string()));
        if self.n < 2 {
            return bad("n", "must be at least 2");
        }
        self.prior.validate()?;
        FeatureMap::new(self.features, self.top_k, self.n)?;
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if let Some(a) = self.alpha_target_init {
            if !(a > 0.0 && a <= 1.0) {
                return bad("alpha_target_init", "must lie in (0, 1]");
            }
        }
        if self.validation_every == 0 || self.validation_size == 0 {
            return bad("validation_every", "validation cadence and size must be positive");
        }
        if self.early_stop_window_size == 0 {
            return bad("early_stop_window_size", "must be at least 1");
        }
        if self.hidden_width == 0 || self.gen_hidden_width == 0 {
            return bad("hidden_width", "must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning_rate", "rate must be positive and decay in (0, 1]");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance", "must be nonnegative");
        }
        if self.workers == 0 {
            return bad("workers", "must be at least 1");
        }
        if self.test_size.is_some_and(|s| s < 2) {
            return bad("test_size", "must be at least 2");
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut b = ConfigBuilder::default();
        for (k, v) in parse_pairs(text)? {
            b.set(&k, &v)?;
        }
        b.build()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn feature_map(&self) -> FeatureMap {
        FeatureMap { combo: self.features, top_k: self.top_k }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { base: self.learning_rate, decay: self.lr_decay, every: self.lr_decay_every }
    }

    /// Layer sizes of the redistribution network.
    pub fn h_layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.feature_map().output_dim(self.n)];
        sizes.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        sizes.push(1);
        sizes
    }

    /// Layer sizes of the profile generator.
    pub fn gen_layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.n];
        sizes.extend(std::iter::repeat_n(self.gen_hidden_width, self.gen_hidden_layers));
        sizes.push(self.n);
        sizes
    }

    /// Fully resolved `key = value` text; parsing it yields this config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".to_string());
        for (key, _) in KEYS {
            let value = match *key {
                "n" => self.n.to_string(),
                "objective" => self.objective.to_string(),
                "prior" => self.prior.to_string(),
                "features" => self.features.to_string(),
                "top_k" => self.top_k.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "epsilon" => format!("{:e}", self.epsilon),
                "alpha_target_init" => opt(self.alpha_target_init.map(|a| a.to_string())),
                "alpha_target_step" => self.alpha_target_step.to_string(),
                "curriculum_every" => self.curriculum_every.to_string(),
                "curriculum_stall_window" => self.curriculum_stall_window.to_string(),
                "adv_ratio" => self.adv_ratio.map_or("inf".into(), |r| r.to_string()),
                "warm_start" => self.warm_start.to_string(),
                "warm_start_max_steps" => self.warm_start_max_steps.to_string(),
                "warm_start_tol" => format!("{:e}", self.warm_start_tol),
                "seed" => self.seed.to_string(),
                "max_steps" => self.max_steps.to_string(),
                "checkpoint_every" => self.checkpoint_every.to_string(),
                "validation_every" => self.validation_every.to_string(),
                "validation_size" => self.validation_size.to_string(),
                "early_stop_windows" => self.early_stop_windows.to_string(),
                "early_stop_window_size" => self.early_stop_window_size.to_string(),
                "early_stop_delta" => format!("{:e}", self.early_stop_delta),
                "feed" => self.feed.to_string(),
                "calibrate" => self.calibrate.to_string(),
                "pdf_base" => self.pdf_base.to_string(),
                "hidden_layers" => self.hidden_layers.to_string(),
                "hidden_width" => self.hidden_width.to_string(),
                "gen_hidden_layers" => self.gen_hidden_layers.to_string(),
                "gen_hidden_width" => self.gen_hidden_width.to_string(),
                "learning_rate" => format!("{:e}", self.learning_rate),
                "lr_decay" => self.lr_decay.to_string(),
                "lr_decay_every" => self.lr_decay_every.to_string(),
                "tolerance" => format!("{:e}", self.tolerance),
                "test_size" => opt(self.test_size.map(|t| t.to_string())),
                "audit_steps" => self.audit_steps.to_string(),
                "workers" => self.workers.to_string(),
                other => unreachable!("key {other} missing from snapshot"),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_and_defaults() {
        let c = TrainConfig::from_text("n = 4\nobjective = worstcase\nprior = uniform\n").unwrap();
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.epsilon, 0.01);
        assert_eq!(c.features, FeatureCombo::RawSorted);
        assert_eq!(c.adv_ratio, Some(5));
        assert_eq!(c.h_layer_sizes(), vec![3, 100, 100, 100, 100, 100, 100, 1]);
        assert_eq!(c.gen_layer_sizes(), vec![4, 64, 64, 64, 64, 4]);

        let e = TrainConfig::from_text("n=6\nobjective=expectation\nprior=normal:0.5:0.1").unwrap();
        assert_eq!(e.epsilon, 1e-4);
        assert_eq!(e.features, FeatureCombo::C8);
        assert_eq!(e.h_layer_sizes()[0], 3);
    }

    #[test]
    fn comments_and_overrides() {
        let text = "# experiment\nn = 5 # agents\nobjective = expectation\nprior = uniform\nfeatures = raw\nadv_ratio = inf\nseed = 9\n";
        let mut c = TrainConfig::from_text(text).unwrap();
        assert_eq!(c.features, FeatureCombo::RawSorted);
        assert_eq!(c.adv_ratio, None);
        assert_eq!(c.seed, 9);
        c.set("batch_size", "32").unwrap();
        assert_eq!(c.batch_size, 32);
        assert!(c.set("batch_size", "0").is_err());
    }

    #[test]
    fn errors_name_the_key() {
        let missing = TrainConfig::from_text("n = 3\nobjective = expectation\n").unwrap_err();
        assert!(matches!(&missing, Error::Config { key, .. } if key == "prior"), "{missing}");
        assert!(missing.to_string().contains("prior"));

        let unknown = TrainConfig::from_text("n = 3\nobjective = expectation\nprior = uniform\nbogus = 1\n").unwrap_err();
        assert!(matches!(&unknown, Error::Config { key, .. } if key == "bogus"));

        let bad = TrainConfig::from_text("n = x\nobjective = expectation\nprior = uniform\n").unwrap_err();
        assert!(matches!(&bad, Error::Config { key, .. } if key == "n"));

        let dup = TrainConfig::from_text("n = 3\nn = 4\nobjective = expectation\nprior = uniform\n").unwrap_err();
        assert!(matches!(&dup, Error::Config { key, .. } if key == "n"));

        let small = TrainConfig::from_text("n = 1\nobjective = expectation\nprior = uniform\n").unwrap_err();
        assert!(matches!(&small, Error::Config { key, .. } if key == "n"));
    }

    #[test]
    fn snapshot_round_trips() {
        let text = "n = 5\nobjective = worstcase\nprior = normal:0.5:0.1\nalpha_target_init = 0.4\nadv_ratio = 3\ntest_size = 777\nfeed = false\npdf_base = 10\n";
        let c = TrainConfig::from_text(text).unwrap();
        let again = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(c, again);
        for (key, _) in KEYS {
            assert!(c.to_text().contains(&format!("{key} = ")), "{key}");
        }
    }
}
