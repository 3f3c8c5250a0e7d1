use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{DepthTrainer, InpaintTrainer, RunConfig, SequenceSet, Stage};
use crate::checkpoint::Checkpoint;
use crate::depthnet::{DepthNet, MODEL_NAME};
use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "iter,loss,wall_ms";

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub start_iter: usize,
    pub iterations: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    /// Full training state at the end (weights, optimizer, iteration).
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub wall_seconds: f64,
}

trait Stepper {
    fn iter(&self) -> usize;
    fn step(&mut self) -> Result<f64>;
    fn checkpoint(&self) -> Checkpoint;
}

struct Depth<'a>(DepthTrainer, &'a SequenceSet);

impl Stepper for Depth<'_> {
    fn iter(&self) -> usize {
        self.0.iter
    }
    fn step(&mut self) -> Result<f64> {
        self.0.step(self.1)
    }
    fn checkpoint(&self) -> Checkpoint {
        self.0.checkpoint()
    }
}

struct Inpaint<'a>(InpaintTrainer, &'a SequenceSet, Option<DepthNet<f32>>);

impl Stepper for Inpaint<'_> {
    fn iter(&self) -> usize {
        self.0.iter
    }
    fn step(&mut self) -> Result<f64> {
        self.0.step(self.1, self.2.as_ref())
    }
    fn checkpoint(&self) -> Checkpoint {
        self.0.checkpoint()
    }
}

fn drive(
    s: &mut dyn Stepper,
    cfg: &RunConfig,
    out_dir: &Path,
    prefix: &str,
    progress: &mut dyn FnMut(&str),
) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log = out_dir.join(format!("{prefix}_train.log"));
    let fresh = !log.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log)
        .map_err(|e| Error::io(&log, e))?;
    if fresh {
        writeln!(file, "{LOG_HEADER}").map_err(|e| Error::io(&log, e))?;
    }
    let total = cfg.iterations();
    let start_iter = s.iter();
    let t0 = Instant::now();
    let (mut first, mut last) = (None, None);
    while s.iter() < total {
        let loss = match s.step() {
            Ok(l) => l,
            Err(e @ (Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_))) => {
                // The failed step was not applied; keep the state it started from.
                s.checkpoint()
                    .save(out_dir.join(format!("{prefix}_last_good.ck")))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        first.get_or_insert(loss);
        last = Some(loss);
        let it = s.iter();
        if it % cfg.log_every == 0 || it == total {
            let ms = t0.elapsed().as_millis();
            writeln!(file, "{it},{loss},{ms}").map_err(|e| Error::io(&log, e))?;
            progress(&format!(
                "{prefix} iter {it}/{total} loss {loss:.6} ({ms} ms)"
            ));
        }
        if it % cfg.checkpoint_every == 0 && it != total {
            s.checkpoint()
                .save(out_dir.join(format!("{prefix}_iter{it:07}.ck")))?;
        }
    }
    let checkpoint = out_dir.join(format!("{prefix}.ck"));
    s.checkpoint().save(&checkpoint)?;
    Ok(RunSummary {
        start_iter,
        iterations: s.iter() - start_iter,
        first_loss: first,
        final_loss: last,
        checkpoint,
        log,
        wall_seconds: t0.elapsed().as_secs_f64(),
    })
}

fn check_stage(cfg: &RunConfig, want: Stage) -> Result<()> {
    if cfg.stage != want {
        return Err(Error::Config(format!(
            "config is for the {:?} stage, expected {want:?}",
            cfg.stage
        )));
    }
    Ok(())
}

/// Trains the depth network, optionally resuming from a full checkpoint.
/// Writes `depth_train.log`, periodic `depth_iterNNNNNNN.ck` and `depth.ck`.
pub fn run_depth(
    cfg: &RunConfig,
    data: &SequenceSet,
    out_dir: &Path,
    resume: Option<&Checkpoint>,
    progress: &mut dyn FnMut(&str),
) -> Result<RunSummary> {
    check_stage(cfg, Stage::Depth)?;
    let t = match resume {
        Some(ck) => DepthTrainer::resume(cfg.clone(), ck)?,
        None => DepthTrainer::new(cfg.clone())?,
    };
    drive(&mut Depth(t, data), cfg, out_dir, "depth", progress)
}

/// Trains the inpainting network on windows warped with the frozen depth
/// checkpoint (or ground-truth depth when `gt_depth` is set).
pub fn run_inpaint(
    cfg: &RunConfig,
    data: &SequenceSet,
    depth: Option<&Checkpoint>,
    out_dir: &Path,
    resume: Option<&Checkpoint>,
    progress: &mut dyn FnMut(&str),
) -> Result<RunSummary> {
    check_stage(cfg, Stage::Inpaint)?;
    let depth_net = match (cfg.gt_depth, depth) {
        (true, _) => None,
        (false, Some(ck)) => {
            let net = DepthNet::new(cfg.depth.clone(), 0)?;
            ck.load_into(MODEL_NAME, &net)?;
            Some(net)
        }
        (false, None) => {
            return Err(Error::InvalidArgument(
                "inpainting needs a depth checkpoint unless gt_depth is set".into(),
            ))
        }
    };
    let t = match resume {
        Some(ck) => InpaintTrainer::resume(cfg.clone(), ck)?,
        None => InpaintTrainer::new(cfg.clone())?,
    };
    drive(
        &mut Inpaint(t, data, depth_net),
        cfg,
        out_dir,
        "inpaint",
        progress,
    )
}
