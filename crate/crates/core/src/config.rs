//! Run configuration: every stage's parameters in one TOML document.
//!
//! All sections are optional and fall back to their defaults; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::CouplingParams;
use crate::gng::GngParams;
use crate::gstate::UmkfParams;
use crate::imjpf::ImjpfConfig;
use crate::scene::{CropBox, SceneConfig};
use crate::tracking::{BridgeParams, TrackingConfig};
use crate::vocabulary::VocabularyParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub crop: CropBox,
    /// Points at or below this height are ground.
    pub ground_z: f64,
    /// A point needs this many neighbors within `denoise_radius` to survive.
    pub denoise_k: usize,
    pub denoise_radius: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            crop: CropBox::STREET,
            ground_z: -1.0,
            denoise_k: 2,
            denoise_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    /// Tracks with fewer samples are ignored for training and testing.
    pub min_track_samples: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self { min_track_samples: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub preprocess: PreprocessConfig,
    pub tracking: TrackingConfig,
    pub bridge: BridgeParams,
    pub gstate: UmkfParams,
    pub gng: GngParams,
    pub vocabulary: VocabularyParams,
    pub coupling: CouplingParams,
    pub imjpf: ImjpfConfig,
    pub learning: LearningConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(path.to_path_buf(), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.preprocess.crop.validate()?;
        if self.preprocess.denoise_radius <= 0.0 {
            return Err(Error::Config("preprocess: denoise_radius must be > 0".into()));
        }
        if self.tracking.cluster_radius <= 0.0 {
            return Err(Error::Config("tracking: cluster_radius must be > 0".into()));
        }
        self.tracking.jpda.validate()?;
        if self.bridge.gate_radius <= 0.0 || self.bridge.max_gap <= 0.0 {
            return Err(Error::Config("bridge: gate_radius and max_gap must be > 0".into()));
        }
        self.gstate.validate()?;
        self.gng.validate()?;
        self.vocabulary.validate()?;
        self.coupling.validate()?;
        self.imjpf.validate()?;
        if self.learning.min_track_samples < 2 {
            return Err(Error::Config("learning: min_track_samples must be >= 2".into()));
        }
        Ok(())
    }

    /// Replaces every seed in the configuration.
    pub fn override_seed(&mut self, seed: u64) {
        self.scene.rng_seed = seed;
        self.gng.rng_seed = seed;
        self.imjpf.rng_seed = seed;
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
