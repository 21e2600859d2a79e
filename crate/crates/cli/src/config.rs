//! Run configuration: built-in defaults, then an optional TOML file, then
//! `--set key=value` overrides, then dedicated flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use modspec::augment::AugmentPolicy;
use modspec::predictor::{PredictorConfig, TrainHyper};
use serde::Deserialize;
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; also seeds parameter initialization.
    pub seed: u64,
    pub model: PredictorConfig,
    pub train: TrainHyper,
    pub augment: AugmentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: PredictorConfig::default(),
            train: TrainHyper::default(),
            augment: AugmentSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub apply_probability: f64,
    pub snr_lo_db: f64,
    pub snr_hi_db: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let p = AugmentPolicy::default();
        Self {
            apply_probability: p.apply_probability,
            snr_lo_db: p.snr_lo_db,
            snr_hi_db: p.snr_hi_db,
        }
    }
}

impl AugmentSection {
    pub fn policy(&self, noise_ids: Vec<String>) -> AugmentPolicy {
        AugmentPolicy {
            apply_probability: self.apply_probability,
            snr_lo_db: self.snr_lo_db,
            snr_hi_db: self.snr_hi_db,
            noise_manifest: noise_ids,
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override `{assignment}` is not of the form key=value");
    };
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    let (last, parents) = path.split_last().expect("non-empty");
    let mut cursor = table;
    for part in parents {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = match entry {
            Value::Table(t) => t,
            _ => bail!("override key `{key}`: `{part}` is not a section"),
        };
    }
    cursor.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn load(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut table = match file {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?
            .parse::<Table>()
            .with_context(|| format!("parsing config {}", path.display()))?,
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut config: RunConfig = table.try_into().context("invalid configuration")?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.model.seed = config.seed;
    config.model.validate()?;
    config.train.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_input() {
        let c = load(None, &[], None).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model.model_dim, 256);
        assert_eq!(c.augment.apply_probability, 0.8);
    }

    #[test]
    fn precedence_file_then_set_then_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "seed = 3\n[model]\nmodel_dim = 64\nlayer_count = 2\n[train]\nsteps = 50\nlearning_rate = 0.001\n",
        )
        .unwrap();
        let c = load(Some(&path), &["train.steps=70".into(), "model.head_count=4".into()], None).unwrap();
        assert_eq!(c.model.model_dim, 64);
        assert_eq!(c.model.head_count, 4);
        assert_eq!(c.train.steps, 70);
        assert_eq!(c.train.learning_rate, 1e-3);
        assert_eq!(c.seed, 3);
        assert_eq!(c.model.seed, 3);
        let c = load(Some(&path), &["seed=4".into()], Some(9)).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.model.seed, 9);
    }

    #[test]
    fn string_values_and_nested_keys() {
        let c = load(None, &["train.loss_scope=utterance".into(), "train.features.lp_order=40".into()], None).unwrap();
        assert_eq!(c.train.loss_scope, modspec::predictor::LossScope::Utterance);
        assert_eq!(c.train.features.lp_order, 40);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(load(None, &["train.stepz=3".into()], None).is_err());
        assert!(load(None, &["no_equals".into()], None).is_err());
        assert!(load(None, &["model.head_count=7".into()], None).is_err());
        assert!(load(None, &["seed.x=1".into()], None).is_err());
    }
}
