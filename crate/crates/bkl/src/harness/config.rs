//! JSON experiment configuration. One flat spec drives every CLI subcommand:
//! `schema_version` and `kind` and `seed` are always required, the rest is
//! per-kind (the runner names exactly what is missing). Unknown keys are
//! rejected everywhere so a typo cannot silently fall back to a default.

use crate::branching_law::OffspringLaw;
use crate::error::{BklError, Result};
use crate::levy_models::{JumpComponent, JumpLaw, LevyModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Offspring law as written in configs: `{"p": [..], "beta": ..}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub p: Vec<f64>,
    pub beta: f64,
}

impl LawConfig {
    pub fn build(&self) -> Result<OffspringLaw> {
        OffspringLaw::new(self.p.clone(), self.beta)
    }
}

/// One jump component: `{"rate": .., "kind": "neg_exp", "mu": ..}` or
/// `{"rate": .., "kind": "two_point", "a": .., "b": .., "p_a": ..}`.
/// Field presence is checked against the kind, so a stray `mu` on a
/// two-point jump is an error rather than dead weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub rate: f64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_a: Option<f64>,
}

impl JumpConfig {
    pub fn build(&self) -> Result<JumpComponent> {
        let exp_mu = |mu: Option<f64>| {
            mu.ok_or_else(|| BklError::config(format!("jump kind {:?} needs \"mu\"", self.kind)))
        };
        let no_two_point = self.a.is_none() && self.b.is_none() && self.p_a.is_none();
        let law = match self.kind.as_str() {
            "neg_exp" => {
                if !no_two_point {
                    return Err(BklError::config("neg_exp jump takes only \"mu\""));
                }
                JumpLaw::NegExp { mu: exp_mu(self.mu)? }
            }
            "pos_exp" => {
                if !no_two_point {
                    return Err(BklError::config("pos_exp jump takes only \"mu\""));
                }
                JumpLaw::PosExp { mu: exp_mu(self.mu)? }
            }
            "two_point" => {
                if self.mu.is_some() {
                    return Err(BklError::config("two_point jump does not take \"mu\""));
                }
                match (self.a, self.b, self.p_a) {
                    (Some(a), Some(b), Some(p_a)) => JumpLaw::TwoPoint { a, b, p_a },
                    _ => {
                        return Err(BklError::config(
                            "two_point jump needs \"a\", \"b\" and \"p_a\"",
                        ))
                    }
                }
            }
            other => {
                return Err(BklError::config(format!(
                    "unknown jump kind {other:?}; expected neg_exp, pos_exp or two_point"
                )))
            }
        };
        Ok(JumpComponent { rate: self.rate, law })
    }
}

/// Spatial motion as written in configs:
/// `{"drift": .., "gaussian_var": .., "jumps": [..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub drift: f64,
    pub gaussian_var: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jumps: Vec<JumpConfig>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<LevyModel> {
        let jumps = self.jumps.iter().map(JumpConfig::build).collect::<Result<Vec<_>>>()?;
        LevyModel::new(self.drift, self.gaussian_var, jumps)
    }
}

/// Which experiment the spec describes; the CLI subcommand of the same name
/// must agree (the `run` subcommand takes whatever the spec says).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Law,
    Model,
    Scale,
    Exit,
    Renewal,
    Cond,
    Sim,
    Survival,
    MtTail,
    Alltime,
    Yaglom,
    Fk,
    Constants,
    Predict,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Law => "law",
            ExperimentKind::Model => "model",
            ExperimentKind::Scale => "scale",
            ExperimentKind::Exit => "exit",
            ExperimentKind::Renewal => "renewal",
            ExperimentKind::Cond => "cond",
            ExperimentKind::Sim => "sim",
            ExperimentKind::Survival => "survival",
            ExperimentKind::MtTail => "mt_tail",
            ExperimentKind::Alltime => "alltime",
            ExperimentKind::Yaglom => "yaglom",
            ExperimentKind::Fk => "fk",
            ExperimentKind::Constants => "constants",
            ExperimentKind::Predict => "predict",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = BklError;

    // Accepts both the config spelling (mt_tail) and the CLI one (mt-tail).
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| BklError::config(format!("unknown experiment kind {s:?}")))
    }
}

pub const SCHEMA_VERSION: u32 = 1;

/// One experiment: what to run, on which model/law, over which grids, with
/// how many replicas. Scalar fields double as per-kind arguments (`x` start
/// height, `t` snapshot time, `y` threshold, `q` discount rate); grid fields
/// hold the kind's sweep. `step` and `horizon` have per-kind defaults
/// (documented on the runner); everything else a kind needs must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<LawConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_conditioned: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl ExperimentSpec {
    /// Parse and validate a spec from a JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: ExperimentSpec = serde_json::from_str(&text)
            .map_err(|e| BklError::config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Structural checks shared by every kind; per-kind presence checks live
    /// in the runner where the requirements are known.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(BklError::config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (name, grid) in [
            ("t_grid", &self.t_grid),
            ("x_grid", &self.x_grid),
            ("y_grid", &self.y_grid),
            ("z_grid", &self.z_grid),
        ] {
            if let Some(g) = grid {
                if g.is_empty() {
                    return Err(BklError::config(format!("{name} must not be empty")));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(BklError::config(format!("{name} entries must be finite")));
                }
                if g.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(BklError::config(format!(
                        "{name} must be strictly increasing"
                    )));
                }
            }
        }
        if let Some(n) = self.n {
            if n < 100 {
                return Err(BklError::config(format!("n must be at least 100, got {n}")));
            }
        }
        if let Some(n) = self.n_conditioned {
            if n < 100 {
                return Err(BklError::config(format!(
                    "n_conditioned must be at least 100, got {n}"
                )));
            }
        }
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(BklError::config(format!("step must be positive, got {s}")));
            }
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(BklError::config(format!("horizon must be positive, got {h}")));
            }
        }
        Ok(())
    }

    /// Short content hash echoed on every CSV row. The output path is
    /// excluded so relocating results does not change identity; the seed is
    /// included because it determines the numbers.
    pub fn hash(&self) -> String {
        let mut stripped = self.clone();
        stripped.out = None;
        let canonical = serde_json::to_string(&stripped).expect("spec serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(12);
        for b in &digest[..6] {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(kind: &str) -> String {
        format!(r#"{{"schema_version": 1, "kind": "{kind}", "seed": 7}}"#)
    }

    #[test]
    fn law_and_model_schemas_parse() {
        let law: LawConfig = serde_json::from_str(r#"{"p": [0.6, 0, 0.4], "beta": 1.0}"#).unwrap();
        let built = law.build().unwrap();
        assert!((built.mean() - 0.8).abs() < 1e-15);
        let model: ModelConfig = serde_json::from_str(
            r#"{"drift": -0.5, "gaussian_var": 1.0,
                "jumps": [{"rate": 0.3, "kind": "neg_exp", "mu": 2.0}]}"#,
        )
        .unwrap();
        let m = model.build().unwrap();
        assert!((m.mean() - (-0.5 - 0.3 / 2.0)).abs() < 1e-12);
        let plain: ModelConfig =
            serde_json::from_str(r#"{"drift": 0.0, "gaussian_var": 1.0}"#).unwrap();
        assert!(plain.jumps.is_empty());
        assert!(plain.build().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<LawConfig>(r#"{"p": [1.0], "beta": 1, "betta": 2}"#)
            .is_err());
        assert!(serde_json::from_str::<ModelConfig>(
            r#"{"drift": 0, "gaussian_var": 1, "sigma": 1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<JumpConfig>(
            r#"{"rate": 1, "kind": "neg_exp", "mu": 1, "nu": 2}"#
        )
        .is_err());
        let spec = r#"{"schema_version": 1, "kind": "law", "seed": 1, "extra": true}"#;
        assert!(serde_json::from_str::<ExperimentSpec>(spec).is_err());
    }

    #[test]
    fn jump_kind_field_combinations_are_checked() {
        let build = |s: &str| serde_json::from_str::<JumpConfig>(s).unwrap().build();
        assert!(build(r#"{"rate": 1, "kind": "neg_exp", "mu": 2}"#).is_ok());
        assert!(build(r#"{"rate": 1, "kind": "neg_exp"}"#).is_err());
        assert!(build(r#"{"rate": 1, "kind": "neg_exp", "mu": 2, "a": 1}"#).is_err());
        assert!(build(r#"{"rate": 1, "kind": "two_point", "a": -1, "b": 1, "p_a": 0.5}"#).is_ok());
        assert!(build(r#"{"rate": 1, "kind": "two_point", "a": -1, "b": 1}"#).is_err());
        assert!(
            build(r#"{"rate": 1, "kind": "two_point", "a": -1, "b": 1, "p_a": 0.5, "mu": 1}"#)
                .is_err()
        );
        assert!(build(r#"{"rate": 1, "kind": "gauss", "mu": 1}"#).is_err());
    }

    #[test]
    fn spec_validation_catches_structural_errors() {
        let ok: ExperimentSpec = serde_json::from_str(&minimal("survival")).unwrap();
        assert!(ok.validate().is_ok());
        assert_eq!(ok.kind, ExperimentKind::Survival);

        let mut bad = ok.clone();
        bad.schema_version = 2;
        assert!(bad.validate().is_err());

        let mut bad = ok.clone();
        bad.t_grid = Some(vec![]);
        assert!(bad.validate().is_err());
        bad.t_grid = Some(vec![1.0, 1.0]);
        assert!(bad.validate().is_err());
        bad.t_grid = Some(vec![4.0, 2.0]);
        assert!(bad.validate().is_err());
        bad.t_grid = Some(vec![2.0, 4.0]);
        assert!(bad.validate().is_ok());

        let mut bad = ok.clone();
        bad.n = Some(99);
        assert!(bad.validate().is_err());
        bad.n = Some(100);
        assert!(bad.validate().is_ok());

        let mut bad = ok.clone();
        bad.step = Some(0.0);
        assert!(bad.validate().is_err());
        bad.step = Some(f64::INFINITY);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn kind_names_round_trip_including_cli_spelling() {
        for kind in [
            "law", "model", "scale", "exit", "renewal", "cond", "sim", "survival", "mt_tail",
            "alltime", "yaglom", "fk", "constants", "predict",
        ] {
            let parsed = ExperimentKind::from_str(kind).unwrap();
            assert_eq!(parsed.as_str(), kind);
        }
        assert_eq!(ExperimentKind::from_str("mt-tail").unwrap(), ExperimentKind::MtTail);
        assert!(ExperimentKind::from_str("nope").is_err());
    }

    #[test]
    fn hash_ignores_output_path_but_not_seed() {
        let base: ExperimentSpec = serde_json::from_str(&minimal("survival")).unwrap();
        let mut moved = base.clone();
        moved.out = Some("elsewhere".to_string());
        assert_eq!(base.hash(), moved.hash());
        assert_eq!(base.hash().len(), 12);

        let mut reseeded = base.clone();
        reseeded.seed = 8;
        assert_ne!(base.hash(), reseeded.hash());

        let mut regridded = base;
        regridded.t_grid = Some(vec![1.0, 2.0]);
        assert_ne!(regridded.hash(), reseeded.hash());
    }
}
