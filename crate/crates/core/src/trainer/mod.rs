//! Optimization and run orchestration for the two training stages.
//!
//! The depth network trains first on stereo pairs alone. The inpainting
//! network then trains on reference windows forward-mapped with the frozen
//! depth network (or ground-truth depth), never touching depth weights.
//!
//! Sample order is a pure function of the seed and the iteration counter, so
//! a run resumed from a checkpoint continues exactly as an uninterrupted one.

mod adam;
mod config;
mod depth;
mod inpaint;
mod run;

pub use adam::{Adam, AdamConfig};
pub use config::{DataConfig, DataSource, RunConfig, SequenceSet, Stage};
pub use depth::DepthTrainer;
pub use inpaint::InpaintTrainer;
pub use run::{run_depth, run_inpaint, RunSummary, LOG_HEADER};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

/// The `k`-th draw from `0..n`: each epoch of `n` draws is a fresh seeded
/// permutation, so every item is visited once per epoch.
pub fn draw(seed: u64, n: usize, k: u64) -> usize {
    let epoch = k / n as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm[(k % n as u64) as usize]
}

const ITER_ENTRY: &str = "trainer.iter";

fn save_iter(ck: &mut Checkpoint, iter: usize) {
    let v = iter as u64;
    ck.push(
        ITER_ENTRY,
        vec![2],
        vec![(v & 0xFF_FFFF) as f32, (v >> 24) as f32],
    );
}

fn load_iter(ck: &Checkpoint) -> Result<usize> {
    match ck.get(ITER_ENTRY).map(|e| e.values.as_slice()) {
        Some(&[lo, hi]) => Ok(lo as usize | (hi as usize) << 24),
        _ => Err(Error::Checkpoint(format!("missing `{ITER_ENTRY}` entry"))),
    }
}
