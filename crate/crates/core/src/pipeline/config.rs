//! Run configuration: TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{ResidualKind, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::mvgp::MvgpOptions;
use crate::sim::SimConfig;
use crate::tr::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Paths {
    pub fn under(root: &Path) -> Self {
        Self { dataset: root.join("dataset"), models: root.join("models"), reports: root.join("reports") }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Self::under(Path::new("out"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Training replications.
    pub nominal: usize,
    /// Nominal replications kept out of training for model-fit scores.
    pub holdout: usize,
    /// End-effector deviations (cm) of the attacked cycles.
    pub severities: Vec<f64>,
    pub attacked_replications: usize,
    /// Defaults to mid-cycle.
    pub onset: Option<usize>,
    /// Defaults to one full cycle.
    pub replay_shift: Option<usize>,
    pub ramp_frames: usize,
    /// Also write each cycle's masks as a packed `.ten` stack.
    pub pack_tensors: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            nominal: 8,
            holdout: 4,
            severities: vec![0.2, 0.5, 1.0, 5.0],
            attacked_replications: 3,
            onset: None,
            replay_shift: None,
            ramp_frames: 10,
            pack_tensors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSettings {
    pub alpha: f64,
    pub mode: ResidualKind,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, mode: ResidualKind::Mvgp }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; it also replaces the seeds of the training sections.
    pub seed: u64,
    pub paths: Paths,
    pub sim: SimConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub mvgp: MvgpOptions,
    pub detector: DetectorSettings,
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub mode: Option<ResidualKind>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies overrides, propagates the master seed and validates.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.paths = Paths::under(out);
        }
        if let Some(alpha) = o.alpha {
            self.detector.alpha = alpha;
        }
        if let Some(mode) = o.mode {
            self.detector.mode = mode;
        }
        self.train.seed = self.seed;
        self.mvgp.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        let a = self.detector.alpha;
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {a}")));
        }
        if self.dataset.severities.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config(format!("severities must be non-negative, got {:?}", self.dataset.severities)));
        }
        if self.dataset.nominal == 0 {
            return Err(Error::Config("need at least one nominal replication".into()));
        }
        if !self.dataset.severities.is_empty() && self.dataset.attacked_replications == 0 {
            return Err(Error::Config("attacked_replications must be positive".into()));
        }
        let t = self.sim.frames;
        let onset = self.dataset.onset.unwrap_or(t / 2);
        if onset < 1 || onset > t {
            return Err(Error::Config(format!("attack onset {onset} outside [1, {t}]")));
        }
        if self.dataset.replay_shift.unwrap_or(t) > t + onset {
            return Err(Error::Config("replay shift reaches before the recorded cycle".into()));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration without its paths, hex encoded.
    pub fn hash(&self) -> String {
        let unrooted = Self { paths: Paths::under(Path::new("")), ..self.clone() };
        let text = serde_json::to_string(&unrooted).expect("configuration serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
