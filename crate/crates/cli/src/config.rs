//! The run configuration file: one TOML document with a section per stage.
//! Every key is optional and unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::Utc;
use keynav_core::gkpn::GkpnConfig;
use keynav_core::trainer::{EvalConfig, TrainConfig};
use serde::{Deserialize, Serialize};

pub const ECHO_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Run directories are created under this path.
    pub root: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("runs"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: OutputConfig,
    pub model: GkpnConfig,
    /// Includes `train.loss` (weights and margins) and `train.scene`.
    pub train: TrainConfig,
    /// Includes `eval.nav`, `eval.robot` and `eval.loss`.
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.nav.validate()?;
        self.eval.robot.validate()?;
        self.eval.loss.weights.validate()?;
        Ok(())
    }

    /// Writes the effective config into a run directory.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// `<root>/<command>-<UTC timestamp>-seed<seed>`, suffixed `-2`, `-3`, … if
/// that already exists. An explicit directory is used as given.
pub fn create_run_dir(
    root: &Path,
    command: &str,
    seed: u64,
    explicit: Option<&Path>,
) -> Result<PathBuf> {
    let dir = match explicit {
        Some(d) => d.to_path_buf(),
        None => {
            let stamp = Utc::now().format("%Y%m%dT%H%M%SZ");
            let base = root.join(format!("{command}-{stamp}-seed{seed}"));
            let mut dir = base.clone();
            let mut k = 2;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{k}", base.display()));
                k += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating run directory {}", dir.display()))?;
    Ok(dir)
}
