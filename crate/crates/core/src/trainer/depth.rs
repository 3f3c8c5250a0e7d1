use super::{draw, load_iter, save_iter, Adam, RunConfig};
use crate::checkpoint::Checkpoint;
use crate::data::StereoSequence;
use crate::depthnet::{DepthNet, MODEL_NAME};
use crate::error::{Error, Result};
use crate::losses::depth_objective;
use crate::nn::{Module, NamedTensor};
use crate::tensor::BnMode;

const SAMPLE_SALT: u64 = 0x5EED_D3F7;

/// Unsupervised depth training state: network, optimizer and iteration.
pub struct DepthTrainer {
    pub cfg: RunConfig,
    pub net: DepthNet<f32>,
    pub opt: Adam<f32>,
    pub iter: usize,
    params: Vec<NamedTensor<f32>>,
}

impl DepthTrainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let net = DepthNet::new(cfg.depth.clone(), cfg.seed)?;
        let params = net.parameters();
        let opt = Adam::new(cfg.adam.clone(), &params);
        Ok(DepthTrainer {
            cfg,
            net,
            opt,
            iter: 0,
            params,
        })
    }

    /// Restores network, optimizer and iteration counter.
    pub fn resume(cfg: RunConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = DepthTrainer::new(cfg)?;
        ck.load_into(MODEL_NAME, &t.net)?;
        t.opt.load_from(ck)?;
        t.iter = load_iter(ck)?;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_module(MODEL_NAME, &self.net);
        self.opt.save_into(&mut ck);
        save_iter(&mut ck, self.iter);
        ck
    }

    /// Network weights and buffers only, for inference.
    pub fn model_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_module(MODEL_NAME, &self.net)
    }

    /// One optimizer step over `batch_size` stereo pairs; returns the mean loss.
    pub fn step(&mut self, data: &[Box<dyn StereoSequence>]) -> Result<f64> {
        let sizes: Vec<usize> = data.iter().map(|s| s.len()).collect();
        let total: usize = sizes.iter().sum();
        if total == 0 {
            return Err(Error::Empty("no stereo pairs to train on".into()));
        }
        let bs = self.cfg.batch_size;
        self.net.zero_grad();
        let mut sum = 0.0;
        for j in 0..bs {
            let mut idx = draw(
                self.cfg.seed ^ SAMPLE_SALT,
                total,
                (self.iter * bs + j) as u64,
            );
            let mut s = 0;
            while idx >= sizes[s] {
                idx -= sizes[s];
                s += 1;
            }
            let (l, r) = (
                data[s].left(idx)?.to_tensor::<f32>(),
                data[s].right(idx)?.to_tensor::<f32>(),
            );
            let disp = self.net.predict(&l, &r, BnMode::Train)?;
            let (loss, _) =
                depth_objective(&l, &r, &disp, &self.cfg.loss, self.cfg.warp_convention)?;
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
