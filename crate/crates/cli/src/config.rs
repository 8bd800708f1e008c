//! Flat `key = value` configuration file for `jdnet train`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Every key accepted in a training config file; unknown keys are rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub epochs: Option<u32>,
    pub base_lr: Option<f64>,
    pub milestones: Option<Vec<u32>>,
    pub lr_factor: Option<f64>,
    pub crop: Option<usize>,
    pub batch_size: Option<usize>,
    pub loss: Option<String>,
    pub seed: Option<u64>,
    pub units: Option<usize>,
    pub channels: Option<usize>,
    pub scales: Option<usize>,
    pub pool_rate: Option<usize>,
    pub ablation: Option<String>,
    pub stage_order: Option<Vec<String>>,
    pub footprint: Option<usize>,
    pub reduction: Option<usize>,
    pub share: Option<usize>,
    pub attention_normalize: Option<String>,
    pub eval_every: Option<u32>,
    pub eval_sample: Option<usize>,
    pub checkpoint_every: Option<u32>,
    pub data_root: Option<PathBuf>,
    pub pair_pattern: Option<String>,
    pub synth: Option<bool>,
    pub synth_count: Option<usize>,
    pub synth_size: Option<usize>,
    pub streaks: Option<String>,
    pub angle: Option<String>,
    pub length: Option<String>,
    pub width: Option<String>,
    pub intensity: Option<String>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    /// Parses `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data_root, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Parses `value` with `FromStr`, naming `key` on failure.
pub fn parse_key<T>(key: &str, value: &str) -> CliResult<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| CliError::Usage(format!("invalid value for `{key}`: {e}")))
}

/// Makes a path absolute against the working directory.
pub fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::Usage(format!("cannot resolve {}: {e}", p.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "epochs = 3\nlearning_rate = 1.0\n").unwrap();
        let err = FileConfig::load(&path).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "out = \"runs/a\"\nmilestones = [5, 8]\n").unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.out.unwrap(), dir.path().join("runs/a"));
        assert_eq!(cfg.milestones.unwrap(), vec![5, 8]);
    }
}
