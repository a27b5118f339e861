pub mod config;
pub mod mc;
pub mod runner;
pub mod stats;

pub use config::{ExperimentKind, ExperimentSpec, JumpConfig, LawConfig, ModelConfig};
pub use runner::{run, RunReport};
pub use stats::{ks_statistic, ks_two_sample, tail_slope_fit, McEstimate, SlopeFit};
