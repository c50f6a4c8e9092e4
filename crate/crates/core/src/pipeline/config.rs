use crate::alignment::AlignConfig;
use crate::loopclosure::{FeatureMask, LoopConfig, Selection, VerifierModel};
use crate::odometry::{OdometryConfig, SensingConfig};
use crate::placerec::PlaceRecConfig;
use crate::posegraph::{CovarianceMode, CovarianceSpec, LmSettings};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeTrigger {
    #[default]
    AtEnd,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorSource {
    /// Motion-compensated peaks of the keyframe and its two odometry neighbours.
    #[default]
    Aggregated,
    /// The keyframe's raw polar sweep, area-downsampled.
    RawPolar,
}

/// Cumulative loop-detection variants; each adapts or replaces the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    /// Raw polar descriptor, appearance-only verification.
    T1,
    /// Aggregated peak-map descriptor.
    T2,
    /// Origin augmentation.
    T3,
    /// Alignment quality joins verification.
    T4,
    /// Odometry consistency joins verification.
    T5,
    /// Odometry consistency coupled into retrieval.
    T6,
    /// Alignment-only verification.
    T7,
    /// Three competing candidates, best verified one selected.
    T8,
}

impl Ablation {
    pub const ALL: [Ablation; 8] = [Self::T1, Self::T2, Self::T3, Self::T4, Self::T5, Self::T6, Self::T7, Self::T8];

    pub fn name(self) -> &'static str {
        ["T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8"][self as usize]
    }

    pub fn mask(self) -> FeatureMask {
        let (odom, sc, align) = match self {
            Self::T1 | Self::T2 | Self::T3 => (false, true, false),
            Self::T4 => (false, true, true),
            Self::T5 | Self::T6 | Self::T8 => (true, true, true),
            Self::T7 => (false, false, true),
        };
        FeatureMask { odom, sc, align }
    }

    /// Rewrites the strategy switches of `cfg` for this variant.
    pub fn apply(self, cfg: &mut PipelineConfig) {
        cfg.run.descriptor_source = if self == Self::T1 { DescriptorSource::RawPolar } else { DescriptorSource::Aggregated };
        cfg.placerec.augment = self >= Self::T3;
        cfg.placerec.coupled = self >= Self::T6;
        cfg.verifier.mask = self.mask();
        cfg.loops = if self == Self::T8 {
            LoopConfig { n_cand: 3, strategy: Selection::Best }
        } else {
            LoopConfig { n_cand: 1, strategy: Selection::First }
        };
        cfg.run.ablation = Some(self);
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s) || a.name()[1..] == *s)
            .ok_or_else(|| format!("unknown ablation {s:?}, expected T1..T8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub optimize: OptimizeTrigger,
    pub ablation: Option<Ablation>,
    pub descriptor_source: DescriptorSource,
    /// Pretrained alignment model; otherwise one is self-trained on the run's own odometry.
    pub align_model: Option<PathBuf>,
    pub verifier_model: Option<PathBuf>,
    /// Consecutive keyframe pairs used for self-training (evenly spread).
    pub align_training_pairs: usize,
    pub dump_descriptors: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            output: None,
            optimize: OptimizeTrigger::AtEnd,
            ablation: None,
            descriptor_source: DescriptorSource::Aggregated,
            align_model: None,
            verifier_model: None,
            align_training_pairs: 120,
            dump_descriptors: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub sensing: SensingConfig,
    pub odometry: OdometryConfig,
    pub placerec: PlaceRecConfig,
    pub alignment: AlignConfig,
    pub loops: LoopConfig,
    pub verifier: VerifierModel,
    pub covariance: CovarianceSpec,
    pub solver: LmSettings,
    pub run: RunConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.run.seed = seed;
        self.odometry.noise.seed = seed;
        self
    }

    pub fn with_covariance(mut self, mode: CovarianceMode) -> Self {
        self.covariance.mode = mode;
        self
    }

    pub fn with_ablation(mut self, a: Ablation) -> Self {
        a.apply(&mut self);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let s = &self.sensing;
        if s.k_strongest == 0 || !(s.cell_size > 0.0) || !(s.min_intensity >= 0.0) {
            return Err("sensing: k_strongest and cell_size must be positive".into());
        }
        let o = &self.odometry;
        if !(o.keyframe_spacing > 0.0) || o.n_keyframes == 0 || o.fixed_covariance.iter().any(|v| !(*v > 0.0)) {
            return Err("odometry: spacing, keyframe count and covariance must be positive".into());
        }
        let r = &o.registration;
        if !(r.huber_delta > 0.0 && r.correspondence_radius > 0.0 && r.tolerance > 0.0) || r.max_iterations == 0 {
            return Err("registration: delta, radius, tolerance and iterations must be positive".into());
        }
        if !(o.noise.sigma_xy >= 0.0 && o.noise.sigma_theta >= 0.0) {
            return Err("odometry noise must be non-negative".into());
        }
        self.placerec.validate().map_err(|e| format!("placerec: {e}"))?;
        self.alignment.validate().map_err(|e| format!("alignment: {e}"))?;
        self.verifier.validate().map_err(|e| format!("verifier: {e}"))?;
        self.covariance.validate().map_err(|e| format!("covariance: {e}"))?;
        if self.loops.n_cand == 0 {
            return Err("loops: n_cand must be at least 1".into());
        }
        if self.solver.max_iterations == 0 || !(self.solver.tolerance > 0.0) || !(self.solver.loop_huber_delta > 0.0) {
            return Err("solver: iterations, tolerance and huber delta must be positive".into());
        }
        Ok(())
    }
}
