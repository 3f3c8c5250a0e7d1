use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::data::{KittiSequence, SceneConfig, StereoSequence, SyntheticScene};
use crate::depthnet::DepthNetConfig;
use crate::error::{Error, Result};
use crate::geometry::WarpConvention;
use crate::inpaint::InpaintConfig;
use crate::losses::LossWeights;
use crate::pipeline::DEFAULT_MIN_DISPARITY;
use crate::tensor::BnMode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    Depth,
    Inpaint,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Kitti,
}

/// Where training and evaluation sequences come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Synthetic: training scenes use seeds `base_seed..base_seed + scenes`,
    /// held-out scenes the `held_out` seeds after them.
    pub scenes: usize,
    pub held_out: usize,
    pub base_seed: u64,
    pub scene: SceneConfig,
    /// KITTI: dataset root holding `sequences/` and `poses/`.
    pub root: Option<PathBuf>,
    pub train_sequences: Vec<u32>,
    pub test_sequences: Vec<u32>,
    /// Center crop `[height, width]` applied to KITTI frames.
    pub crop: Option<[usize; 2]>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            scenes: 20,
            held_out: 5,
            base_seed: 1000,
            scene: SceneConfig::default(),
            root: None,
            train_sequences: vec![0],
            test_sequences: vec![1],
            crop: Some([384, 528]),
        }
    }
}

pub type SequenceSet = Vec<Box<dyn StereoSequence>>;

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        match self.source {
            DataSource::Synthetic => {
                if self.scenes == 0 {
                    return Err(Error::Config("data.scenes must be positive".into()));
                }
                self.scene.validate()
            }
            DataSource::Kitti => {
                if self.root.is_none() {
                    return Err(Error::Config("data.root is required for KITTI data".into()));
                }
                Ok(())
            }
        }
    }

    fn synthetic(&self, seeds: std::ops::Range<u64>) -> Result<SequenceSet> {
        seeds
            .map(|s| {
                Ok(Box::new(SyntheticScene::generate(s, &self.scene)?) as Box<dyn StereoSequence>)
            })
            .collect()
    }

    fn kitti(&self, ids: &[u32]) -> Result<SequenceSet> {
        let root = self.root.as_deref().unwrap_or(Path::new("."));
        ids.iter()
            .map(|&id| {
                let mut seq = KittiSequence::open(root, id)?;
                if let Some([h, w]) = self.crop {
                    seq = seq.with_crop(h, w)?;
                }
                Ok(Box::new(seq) as Box<dyn StereoSequence>)
            })
            .collect()
    }

    pub fn train_set(&self) -> Result<SequenceSet> {
        self.validate()?;
        match self.source {
            DataSource::Synthetic => {
                self.synthetic(self.base_seed..self.base_seed + self.scenes as u64)
            }
            DataSource::Kitti => self.kitti(&self.train_sequences),
        }
    }

    pub fn test_set(&self) -> Result<SequenceSet> {
        self.validate()?;
        match self.source {
            DataSource::Synthetic => {
                let start = self.base_seed + self.scenes as u64;
                self.synthetic(start..start + self.held_out as u64)
            }
            DataSource::Kitti => self.kitti(&self.test_sequences),
        }
    }
}

/// Everything a training run needs. Loaded from TOML; every field has a
/// default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stage: Stage,
    /// Defaults to 200,000 for depth and 1,000,000 for inpainting.
    pub iterations: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    /// Log cadence in iterations.
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub warp_convention: WarpConvention,
    pub depth: DepthNetConfig,
    pub inpaint: InpaintConfig,
    pub data: DataConfig,
    /// Inpainting: reference spacing in frames.
    pub spacing: usize,
    /// Inpainting: warp with ground-truth depth instead of the depth network.
    pub gt_depth: bool,
    /// Batch-norm mode of the frozen depth network at inference.
    pub depth_inference: BnMode,
    pub min_disparity: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stage: Stage::Depth,
            iterations: None,
            batch_size: 1,
            seed: 0,
            log_every: 100,
            checkpoint_every: 1000,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            warp_convention: WarpConvention::default(),
            depth: DepthNetConfig::default(),
            inpaint: InpaintConfig::default(),
            data: DataConfig::default(),
            spacing: 1,
            gt_depth: false,
            depth_inference: BnMode::Train,
            min_disparity: DEFAULT_MIN_DISPARITY,
        }
    }
}

impl RunConfig {
    pub fn iterations(&self) -> usize {
        self.iterations.unwrap_or(match self.stage {
            Stage::Depth => 200_000,
            Stage::Inpaint => 1_000_000,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations() == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.batch_size == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config(
                "batch_size, log_every and checkpoint_every must be positive".into(),
            ));
        }
        if !(self.min_disparity > 0.0) {
            return Err(Error::Config("min_disparity must be positive".into()));
        }
        self.adam.validate()?;
        self.loss.validate()?;
        self.depth.validate()?;
        self.inpaint.validate()?;
        self.data.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_schedule() {
        let c = RunConfig::default();
        assert_eq!(c.adam.lr, 4e-4);
        assert_eq!(c.batch_size, 1);
        assert_eq!(c.iterations(), 200_000);
        assert_eq!(c.checkpoint_every, 1000);
        let i = RunConfig {
            stage: Stage::Inpaint,
            ..RunConfig::default()
        };
        assert_eq!(i.iterations(), 1_000_000);
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let c = RunConfig::from_toml(
            "stage = \"inpaint\"\niterations = 200000\nseed = 7\n[adam]\nlr = 0.001\n[depth]\ndisparities = 16\n[data.scene]\nframes = 7\n",
        )
        .unwrap();
        assert_eq!(c.stage, Stage::Inpaint);
        assert_eq!(c.iterations(), 200_000);
        assert_eq!(c.adam.lr, 1e-3);
        assert_eq!(c.adam.beta2, 0.999);
        assert_eq!(c.depth.disparities, 16);
        assert_eq!(c.data.scene.frames, 7);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("iterations = 0").is_err());
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[depth]\ndisparities = 20").is_err());
        assert!(RunConfig::from_toml("[data]\nsource = \"kitti\"").is_err());
    }
}
