use serde::{Deserialize, Serialize};

use super::optim::OptimizerConfig;
use crate::backbone::{BackboneConfig, BackboneKind};
use crate::cia::CiaConfig;
use crate::dataset::{synthetic_split, AugmentationConfig, LabeledExample, Side};
use crate::episode::EpisodeSpec;
use crate::error::{Error, Result};

/// Bumped whenever a field is added, removed or changes meaning.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::InvalidConfig(format!("unknown profile {other:?}"))),
        }
    }
}

/// Parameters of the built-in synthetic pool used when no dataset is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPool {
    pub classes: usize,
    pub novel_classes: usize,
    pub per_class: usize,
    /// Kept apart from the training seed so seed sweeps share one pool.
    pub seed: u64,
}

impl Default for SyntheticPool {
    fn default() -> Self {
        // six base shapes and five novel ones, enough for 5-way testing
        Self {
            classes: 11,
            novel_classes: 5,
            per_class: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub profile: Profile,
    pub seed: u64,
    pub epochs: usize,
    pub train_episodes: usize,
    pub val_episodes: usize,
    pub test_episodes: usize,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    /// Points fed to the backbone per cloud.
    pub n_points: usize,
    pub folds: usize,
    /// Share of each base class held out for validation in single runs.
    pub val_fraction: f64,
    /// `false` builds a plain prototype network with no adaptation module.
    pub with_cia: bool,
    pub backbone: BackboneConfig,
    pub cia: CiaConfig,
    pub optimizer: OptimizerConfig,
    pub augmentation: AugmentationConfig,
    pub synthetic: SyntheticPool,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            profile: Profile::Paper,
            seed: 0,
            epochs: 80,
            train_episodes: 400,
            val_episodes: 600,
            test_episodes: 700,
            way: 5,
            shot: 1,
            query: 15,
            n_points: 512,
            folds: 5,
            val_fraction: 0.2,
            with_cia: true,
            backbone: BackboneConfig::default(),
            cia: CiaConfig::default(),
            optimizer: OptimizerConfig::default(),
            augmentation: AugmentationConfig::default(),
            synthetic: SyntheticPool::default(),
        }
    }

    /// Reduced schedule and backbone sized for a CPU in minutes.
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            epochs: 10,
            train_episodes: 100,
            val_episodes: 50,
            test_episodes: 200,
            n_points: 64,
            backbone: BackboneConfig {
                kind: BackboneKind::Dgcnn,
                layer_widths: vec![32, 32, 64, 128],
                k_neighbors: 10,
                embed_dim: 128,
                normalization: true,
            },
            ..Self::paper()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// The built-in synthetic pool at this config's point count, split into
    /// `(base, novel)` examples.
    pub fn synthetic_pool(&self) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
        let sp = &self.synthetic;
        let (pool, manifest) = synthetic_split(
            sp.classes,
            sp.novel_classes,
            sp.per_class,
            self.n_points,
            sp.seed,
        )?;
        Ok(pool
            .into_iter()
            .partition(|e| manifest.side_of(e.class_id) == Some(Side::Base)))
    }

    pub fn episode_spec(&self) -> Result<EpisodeSpec> {
        EpisodeSpec::new(self.way, self.shot, self.query)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let positive = [
            ("epochs", self.epochs),
            ("train_episodes", self.train_episodes),
            ("test_episodes", self.test_episodes),
            ("query", self.query),
            ("n_points", self.n_points),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig("folds must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(
                "val_fraction must lie in [0, 1)".into(),
            ));
        }
        self.episode_spec()?;
        self.backbone.validate()?;
        self.cia.validate()?;
        self.optimizer.validate()?;
        self.augmentation.validate()
    }
}
