use std::collections::HashMap;

use super::{draw, load_iter, save_iter, Adam, RunConfig};
use crate::checkpoint::Checkpoint;
use crate::data::{eligible_centers, StereoSequence};
use crate::depthnet::DepthNet;
use crate::error::{Error, Result};
use crate::inpaint::{stack_views, InpaintNet};
use crate::losses::inpaint_loss;
use crate::nn::{Module, NamedTensor};
use crate::pipeline::{warp_window, DepthSource};
use crate::tensor::{BnMode, Tensor};

const SAMPLE_SALT: u64 = 0x1A9A_1A7E;

/// Every `(sequence, center)` whose window fits at `spacing`.
pub fn windows(data: &[Box<dyn StereoSequence>], spacing: usize) -> Vec<(usize, usize)> {
    data.iter()
        .enumerate()
        .flat_map(|(s, seq)| eligible_centers(seq.len(), spacing).map(move |c| (s, c)))
        .collect()
}

/// Inpainting training state. Warped inputs depend only on frozen depth, so
/// they are computed once per window and cached.
pub struct InpaintTrainer {
    pub cfg: RunConfig,
    pub net: InpaintNet<f32>,
    pub opt: Adam<f32>,
    pub iter: usize,
    params: Vec<NamedTensor<f32>>,
    cache: HashMap<(usize, usize), (Tensor<f32>, Tensor<f32>)>,
}

impl InpaintTrainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let net = InpaintNet::new(cfg.inpaint.clone(), cfg.seed)?;
        let params = net.parameters();
        let opt = Adam::new(cfg.adam.clone(), &params);
        Ok(InpaintTrainer {
            cfg,
            net,
            opt,
            iter: 0,
            params,
            cache: HashMap::new(),
        })
    }

    pub fn resume(cfg: RunConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = InpaintTrainer::new(cfg)?;
        ck.load_into(t.cfg.inpaint.model_name(), &t.net)?;
        t.opt.load_from(ck)?;
        t.iter = load_iter(ck)?;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_module(self.cfg.inpaint.model_name(), &self.net);
        self.opt.save_into(&mut ck);
        save_iter(&mut ck, self.iter);
        ck
    }

    pub fn model_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_module(self.cfg.inpaint.model_name(), &self.net)
    }

    fn source<'a>(&self, depth: Option<&'a DepthNet<f32>>) -> Result<DepthSource<'a>> {
        if self.cfg.gt_depth {
            return Ok(DepthSource::GroundTruth);
        }
        let net = depth.ok_or_else(|| {
            Error::InvalidArgument("inpainting needs a depth network unless gt_depth is set".into())
        })?;
        Ok(DepthSource::Network {
            net,
            mode: self.cfg.depth_inference,
            min_disparity: self.cfg.min_disparity,
        })
    }

    fn inputs(
        &mut self,
        data: &[Box<dyn StereoSequence>],
        key: (usize, usize),
        depth: Option<&DepthNet<f32>>,
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if let Some(v) = self.cache.get(&key) {
            return Ok(v.clone());
        }
        let w = warp_window(
            data[key.0].as_ref(),
            key.1,
            self.cfg.spacing,
            self.source(depth)?,
        )?;
        let x = stack_views::<f32>(&w.views)?;
        let t = &w.target;
        let target = w
            .target
            .to_tensor::<f32>()
            .reshape(&[1, t.channels, t.height, t.width])?;
        self.cache.insert(key, (x.clone(), target.clone()));
        Ok((x, target))
    }

    /// One optimizer step over `batch_size` windows; returns the mean loss.
    /// `depth` is only read (never updated) and may be `None` with `gt_depth`.
    pub fn step(
        &mut self,
        data: &[Box<dyn StereoSequence>],
        depth: Option<&DepthNet<f32>>,
    ) -> Result<f64> {
        let all = windows(data, self.cfg.spacing);
        if all.is_empty() {
            return Err(Error::Empty(format!(
                "no window fits at spacing {}",
                self.cfg.spacing
            )));
        }
        let bs = self.cfg.batch_size;
        self.net.zero_grad();
        let mut sum = 0.0;
        for j in 0..bs {
            let key = all[draw(
                self.cfg.seed ^ SAMPLE_SALT,
                all.len(),
                (self.iter * bs + j) as u64,
            )];
            let (x, target) = self.inputs(data, key, depth)?;
            let pred = self.net.forward_train(&x, BnMode::Train)?;
            let loss = inpaint_loss(&pred, &target)?;
            let v = loss.item() as f64;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss(self.iter));
            }
            loss.mul_scalar(1.0 / bs as f64).backward()?;
            sum += v;
        }
        self.opt.step(&self.params)?;
        self.iter += 1;
        Ok(sum / bs as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SceneConfig, SyntheticScene};
    use crate::depthnet::DepthNetConfig;
    use crate::inpaint::InpaintConfig;
    use crate::trainer::Stage;

    fn cfg() -> RunConfig {
        RunConfig {
            stage: Stage::Inpaint,
            inpaint: InpaintConfig {
                base_channels: 4,
                tail_channels: 4,
                ..InpaintConfig::default()
            },
            ..RunConfig::default()
        }
    }

    fn data() -> Vec<Box<dyn StereoSequence>> {
        let sc = SceneConfig {
            height: 32,
            width: 32,
            ..SceneConfig::default()
        };
        vec![Box::new(SyntheticScene::generate(0, &sc).unwrap())]
    }

    #[test]
    fn depth_network_stays_frozen() {
        let depth = DepthNet::<f32>::new(
            DepthNetConfig {
                feature_channels: 2,
                residual_blocks: 1,
                filter_channels: 2,
                disparities: 16,
                d_max: 15.0,
                ..DepthNetConfig::default()
            },
            3,
        )
        .unwrap();
        let before = Checkpoint::from_module("d", &depth).to_bytes();
        let mut t = InpaintTrainer::new(cfg()).unwrap();
        let data = data();
        for _ in 0..2 {
            t.step(&data, Some(&depth)).unwrap();
        }
        assert_eq!(Checkpoint::from_module("d", &depth).to_bytes(), before);
        for p in depth.parameters() {
            assert!(
                p.tensor
                    .grad()
                    .map_or(true, |g| g.iter().all(|&v| v == 0.0)),
                "{}",
                p.name
            );
        }
    }

    #[test]
    fn ground_truth_mode_and_missing_depth() {
        let data = data();
        let mut t = InpaintTrainer::new(RunConfig {
            gt_depth: true,
            ..cfg()
        })
        .unwrap();
        assert!(t.step(&data, None).unwrap().is_finite());
        let mut t = InpaintTrainer::new(cfg()).unwrap();
        assert!(t.step(&data, None).is_err());
        let mut t = InpaintTrainer::new(RunConfig {
            spacing: 3,
            gt_depth: true,
            ..cfg()
        })
        .unwrap();
        assert!(matches!(t.step(&data, None), Err(Error::Empty(_))));
    }

    #[test]
    fn resume_reproduces_next_step_bitwise() {
        let data = data();
        let c = RunConfig {
            gt_depth: true,
            ..cfg()
        };
        let mut a = InpaintTrainer::new(c.clone()).unwrap();
        a.step(&data, None).unwrap();
        let mut b = InpaintTrainer::resume(c, &a.checkpoint()).unwrap();
        assert_eq!(
            a.step(&data, None).unwrap().to_bits(),
            b.step(&data, None).unwrap().to_bits()
        );
        assert_eq!(a.checkpoint(), b.checkpoint());
    }
}
