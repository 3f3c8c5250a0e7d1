use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{join, ConvUnit, Module, NamedTensor, NormOrder, TransposedUnit};
use crate::scalar::Scalar;
use crate::tensor::{BnMode, ConvSpec, Tensor};

/// 3D encoder-decoder over a feature volume.
///
/// Encoder `conv3d_1..8` (stride 2 at 3, 6 and 8), decoder `tr_conv3d_1..4`
/// each doubling every extent, with `conv3d_7`, `conv3d_5` and `conv3d_2`
/// concatenated onto the inputs of `tr_conv3d_2..4`. `output` maps to one
/// channel without activation.
#[derive(Clone, Debug)]
pub struct FilterNet<T: Scalar> {
    pub encoder: Vec<(String, ConvUnit<T>)>,
    pub decoder: Vec<(String, TransposedUnit<T>)>,
    pub output: ConvUnit<T>,
}

const ENCODER_STRIDES: [usize; 8] = [1, 1, 2, 1, 1, 2, 1, 2];

impl<T: Scalar> FilterNet<T> {
    pub fn new(in_channels: usize, width: usize, order: NormOrder, rng: &mut impl Rng) -> Self {
        let encoder = ENCODER_STRIDES
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let cin = if i == 0 { in_channels } else { width };
                let spec = ConvSpec::conv3d(cin, width, 3, s);
                (
                    format!("conv3d_{}", i + 1),
                    ConvUnit::new(spec, true, true, order, rng),
                )
            })
            .collect();
        let decoder = (0..4)
            .map(|i| {
                let cin = if i == 0 { width } else { 2 * width };
                let spec = ConvSpec::conv3d(cin, width, 3, 2);
                (
                    format!("tr_conv3d_{}", i + 1),
                    TransposedUnit::new(spec, true, true, order, rng),
                )
            })
            .collect();
        let output = ConvUnit::linear(ConvSpec::conv3d(width, 1, 3, 1), rng);
        FilterNet {
            encoder,
            decoder,
            output,
        }
    }

    /// `[1, C, L, h, w]` -> `[1, 1, 2L, 2h, 2w]`; `L`, `h`, `w` must be
    /// divisible by 8.
    pub fn forward(&self, v: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let s = v.shape();
        if s.len() != 5 || s[2..].iter().any(|&e| e == 0 || e % 8 != 0) {
            return Err(Error::shape(
                "filter_volume",
                format!("volume {s:?}: disparity, height and width extents must be divisible by 8"),
            ));
        }
        let mut acts = Vec::with_capacity(8);
        let mut h = v.clone();
        for (_, unit) in &self.encoder {
            h = unit.forward(&h, mode)?;
            acts.push(h.clone());
        }
        let dims = |t: &Tensor<T>| [t.shape()[2], t.shape()[3], t.shape()[4]];
        // Skip sources for tr_conv3d_2..4 (conv3d_7, conv3d_5, conv3d_2).
        let skips = [&acts[6], &acts[4], &acts[1]];
        let mut h = self.decoder[0].1.forward(&acts[7], dims(&acts[6]), mode)?;
        for (i, skip) in skips.iter().enumerate() {
            let x = Tensor::concat(&[*skip, &h], 1)?;
            let target = dims(skip).map(|e| 2 * e);
            h = self.decoder[i + 1].1.forward(&x, target, mode)?;
        }
        self.output.forward(&h, mode)
    }
}

impl<T: Scalar> Module<T> for FilterNet<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        self.encoder.collect_state(prefix, out);
        self.decoder.collect_state(prefix, out);
        self.output.collect_state(&join(prefix, "output"), out);
    }
}
