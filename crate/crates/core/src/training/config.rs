use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::losses::{McVariant, Objective};
use crate::reconstructor::ReconstructorConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SsAmplitude,
    SsIntensity,
    Supervised,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::SsAmplitude, Regime::SsIntensity, Regime::Supervised];

    pub fn name(self) -> &'static str {
        match self {
            Regime::SsAmplitude => "ss_amplitude",
            Regime::SsIntensity => "ss_intensity",
            Regime::Supervised => "supervised",
        }
    }

    pub fn needs_truth(self) -> bool {
        self == Regime::Supervised
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| invalid(format!("unknown regime '{s}' (expected ss_amplitude, ss_intensity or supervised)")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

/// Full description of one training run.
///
/// Defaults: Adam at 5e-5, 15 epochs, batch 5, a third of the training
/// images, `lambda = 1`, two shifts per image, 4-scale U-Net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub alpha: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dataset_fraction: f64,
    pub shifts_per_image: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub scales: usize,
    pub base_channels: usize,
    pub residual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::SsAmplitude,
            alpha: 0.5,
            lambda: 1.0,
            learning_rate: 5e-5,
            epochs: 15,
            batch_size: 5,
            dataset_fraction: 1.0 / 3.0,
            shifts_per_image: 2,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            scales: 4,
            base_channels: 32,
            residual: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.shifts_per_image == 0 {
            return Err(invalid("epochs, batch_size and shifts_per_image must be positive"));
        }
        if !(self.dataset_fraction > 0.0 && self.dataset_fraction <= 1.0) {
            return Err(invalid("dataset_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    /// The loss this regime optimizes.
    pub fn objective(&self) -> Objective {
        let total = |variant| Objective::Total { variant, lambda: self.lambda, shifts_per_image: self.shifts_per_image };
        match self.regime {
            Regime::SsAmplitude => total(McVariant::Amplitude),
            Regime::SsIntensity => total(McVariant::Intensity),
            Regime::Supervised => Objective::Supervised,
        }
    }

    pub fn model_config(&self, height: usize, width: usize) -> ReconstructorConfig {
        ReconstructorConfig {
            scales: self.scales,
            base_channels: self.base_channels,
            image_height: height,
            image_width: width,
            residual: self.residual,
            ..ReconstructorConfig::default()
        }
    }

    /// `m = round(alpha * n)`, at least 1.
    pub fn measurements_for(&self, n: usize) -> usize {
        ((self.alpha * n as f64).round() as usize).max(1)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        hex_sha256(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SplitMix64 finalizer over `seed ^ tag`; derives independent stream seeds.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = (seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
