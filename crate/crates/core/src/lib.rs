//! Neural redistribution mechanisms for the public project problem.

pub mod adversary;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod losses;
pub mod mechanism;
pub mod nn;
pub mod priors;
pub mod reference;
pub mod rng;
pub mod training;

pub use config::{Objective, TrainConfig, WarmStart};
pub use error::{Error, Result};
pub use features::{FeatureCombo, FeatureMap};
pub use mechanism::{MechanismOutcome, RedistributionFn, TypeProfile};
pub use nn::{Mlp, NeuralH};
pub use priors::{PdfBase, Prior};
pub use reference::{ConstantShare, FallbackMax, ManualMechanism};
pub use evaluation::EvalReport;
pub use training::{TrainOutcome, TrainReport};
