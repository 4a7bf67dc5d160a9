//! Type priors, their densities, and the coordinate-replacement resampler.
//!
//! Normal priors are truncated to `[0, 1]` by rejection. Their density is
//! reported without renormalization, i.e. the plain Gaussian density.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::TypeProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Prior {
    Uniform01,
    Normal { mean: f64, stddev: f64 },
}

/// How a log-density is turned back into a weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PdfBase {
    /// `exp(log_prob)`, the ordinary density.
    #[default]
    E,
    /// `10^log_prob`.
    Ten,
}

impl FromStr for PdfBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "e" => Ok(PdfBase::E),
            "10" => Ok(PdfBase::Ten),
            other => Err(Error::config("pdf_base", format!("expected `e` or `10`, got `{other}`"))),
        }
    }
}

impl fmt::Display for PdfBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PdfBase::E => "e",
            PdfBase::Ten => "10",
        })
    }
}

impl Prior {
    pub fn normal(mean: f64, stddev: f64) -> Result<Self> {
        let p = Prior::Normal { mean, stddev };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::Uniform01 => Ok(()),
            Prior::Normal { mean, stddev } => {
                if !mean.is_finite() || !stddev.is_finite() || stddev <= 0.0 {
                    return Err(Error::InvalidPrior(format!("normal({mean}, {stddev}) needs finite mean and stddev > 0")));
                }
                Ok(())
            }
        }
    }

    /// Natural log of the (untruncated) density at `x`.
    pub fn log_prob(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("density queried at {x}, outside [0, 1]")));
        }
        self.validate()?;
        Ok(match *self {
            Prior::Uniform01 => 0.0,
            Prior::Normal { mean, stddev } => {
                let z = (x - mean) / stddev;
                -0.5 * z * z - (stddev * (2.0 * std::f64::consts::PI).sqrt()).ln()
            }
        })
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        self.pdf_with_base(x, PdfBase::E)
    }

    pub fn pdf_with_base(&self, x: f64, base: PdfBase) -> Result<f64> {
        let lp = self.log_prob(x)?;
        Ok(match base {
            PdfBase::E => lp.exp(),
            PdfBase::Ten => 10f64.powf(lp),
        })
    }

    /// One draw in `[0, 1]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            Prior::Uniform01 => Ok(rng.random::<f64>()),
            Prior::Normal { mean, stddev } => {
                let dist = Normal::new(mean, stddev).map_err(|e| Error::InvalidPrior(e.to_string()))?;
                loop {
                    let x = dist.sample(rng);
                    if (0.0..=1.0).contains(&x) {
                        return Ok(x);
                    }
                }
            }
        }
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Uniform01 => f.write_str("uniform"),
            Prior::Normal { mean, stddev } => write!(f, "normal:{mean}:{stddev}"),
        }
    }
}

impl FromStr for Prior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform" {
            return Ok(Prior::Uniform01);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["normal", m, sd] => {
                let mean = m.parse::<f64>().map_err(|_| Error::config("prior", format!("bad mean `{m}`")))?;
                let stddev = sd.parse::<f64>().map_err(|_| Error::config("prior", format!("bad stddev `{sd}`")))?;
                Prior::normal(mean, stddev)
            }
            _ => Err(Error::config("prior", format!("expected `uniform` or `normal:<mean>:<stddev>`, got `{s}`"))),
        }
    }
}

impl TryFrom<String> for Prior {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Prior> for String {
    fn from(p: Prior) -> String {
        p.to_string()
    }
}

pub fn sample_profile<R: Rng + ?Sized>(prior: &Prior, n: usize, rng: &mut R) -> Result<TypeProfile> {
    if n < 2 {
        return Err(Error::InvalidProfile(format!("need at least 2 agents, got {n}")));
    }
    prior.validate()?;
    let values = (0..n).map(|_| prior.sample(rng)).collect::<Result<Vec<_>>>()?;
    TypeProfile::new(values)
}

pub fn sample_profiles<R: Rng + ?Sized>(prior: &Prior, n: usize, count: usize, rng: &mut R) -> Result<Vec<TypeProfile>> {
    (0..count).map(|_| sample_profile(prior, n, rng)).collect()
}

/// A profile with one coordinate redrawn uniformly, weighted by the prior
/// density of the new value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedSample {
    pub profile: TypeProfile,
    pub replaced_index: usize,
    pub replaced_value: f64,
    pub weight: f64,
}

/// Replace coordinate `index` by `value` and weight by the prior density there.
pub fn feed_replace(profile: &TypeProfile, prior: &Prior, index: usize, value: f64, base: PdfBase) -> Result<FeedSample> {
    if index >= profile.n() {
        return Err(Error::DimensionMismatch { expected: profile.n(), got: index + 1 });
    }
    let mut values = profile.values().to_vec();
    values[index] = value;
    Ok(FeedSample {
        profile: TypeProfile::new(values)?,
        replaced_index: index,
        replaced_value: value,
        weight: prior.pdf_with_base(value, base)?,
    })
}

pub fn feed_resample<R: Rng + ?Sized>(profile: &TypeProfile, prior: &Prior, base: PdfBase, rng: &mut R) -> Result<FeedSample> {
    let index = rng.random_range(0..profile.n());
    let value = rng.random::<f64>();
    feed_replace(profile, prior, index, value, base)
}
