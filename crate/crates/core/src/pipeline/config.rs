//! Pipeline configuration in TOML, one section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::DEFAULT_K;
use crate::difficulty::KalmanConfig;
use crate::error::{Error, Result};
use crate::evaluation::DifficultyBins;
use crate::features::FeatureConfig;
use crate::nn::AutoencoderConfig;
use crate::predictor::{Method, PredictorConfig};
use crate::scenario::{Archetype, SynthConfig, TimeConfig};
use crate::splits::Setting;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub per_archetype: usize,
    pub pedestrian_share: f64,
    pub cyclist_share: f64,
    /// External corpus to ingest instead of synthesizing one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            per_archetype: 40,
            pedestrian_share: 0.15,
            cyclist_share: 0.15,
            corpus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub k: usize,
    /// Fraction of latents held out of the k-means fit for the silhouette score.
    pub holdout_fraction: f64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            k: DEFAULT_K,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub setting: Setting,
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            setting: Setting::OpenWorld,
            test_fraction: 0.2,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub methods: Vec<Method>,
    /// Settings for the train-split autoencoders that feed the gating network.
    pub latent_autoencoder: AutoencoderConfig,
    pub predictor: PredictorConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            methods: Method::ALL.to_vec(),
            latent_autoencoder: AutoencoderConfig::default(),
            predictor: PredictorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub bins: DifficultyBins,
    /// Method whose seen metrics anchor every relative change.
    pub reference: Method,
    pub write_predictions: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            bins: DifficultyBins::default(),
            reference: Method::Baseline,
            write_predictions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub timing: TimeConfig,
    pub synth: SynthSection,
    pub features: FeatureConfig,
    pub autoencoder: AutoencoderConfig,
    pub cluster: ClusterSection,
    pub kalman: KalmanConfig,
    pub split: SplitSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        let c: PipelineConfig =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Validation(format!("config `{}`: {}", e.path(), e.inner())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.timing;
        if t.t_hist < 2 || t.t_fut < 1 || !(t.dt > 0.0) {
            return Err(Error::Validation("timing needs t_hist >= 2, t_fut >= 1, dt > 0".into()));
        }
        if self.synth.per_archetype == 0 {
            return Err(Error::Validation("synth.per_archetype must be positive".into()));
        }
        for (n, v) in [("pedestrian_share", self.synth.pedestrian_share), ("cyclist_share", self.synth.cyclist_share)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("synth.{n} must lie in [0, 1]")));
            }
        }
        if self.synth.pedestrian_share + self.synth.cyclist_share > 1.0 {
            return Err(Error::Validation("synth type shares sum above 1".into()));
        }
        self.features.validate()?;
        self.autoencoder.validate()?;
        self.train.latent_autoencoder.validate()?;
        if self.cluster.k < 2 {
            return Err(Error::Validation("cluster.k must be at least 2".into()));
        }
        if !(self.cluster.holdout_fraction > 0.0 && self.cluster.holdout_fraction < 1.0) {
            return Err(Error::Validation("cluster.holdout_fraction must lie in (0, 1)".into()));
        }
        self.kalman.validate(t)?;
        for (n, v) in [("test_fraction", self.split.test_fraction), ("val_fraction", self.split.val_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Validation(format!("split.{n} must lie in (0, 1)")));
            }
        }
        self.train.predictor.validate()?;
        if self.train.predictor.arch.t_fut != t.t_fut {
            return Err(Error::Validation("train.predictor.arch.t_fut must equal timing.t_fut".into()));
        }
        if self.train.predictor.arch.latent_dim != 2 * self.train.latent_autoencoder.latent {
            return Err(Error::Validation(
                "train.predictor.arch.latent_dim must be twice the latent autoencoder width".into(),
            ));
        }
        if self.train.methods.is_empty() {
            return Err(Error::Validation("train.methods must not be empty".into()));
        }
        if !self.train.methods.contains(&self.eval.reference) {
            return Err(Error::Validation("eval.reference must be one of train.methods".into()));
        }
        self.eval.bins.validate()?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            counts: Archetype::ALL.iter().map(|a| (*a, self.synth.per_archetype)).collect(),
            timing: self.timing,
            pedestrian_share: self.synth.pedestrian_share,
            cyclist_share: self.synth.cyclist_share,
        }
    }
}
