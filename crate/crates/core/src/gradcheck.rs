//! Central finite-difference checks of every differentiable operation, run
//! in 64-bit.
//!
//! Each suite builds a small case: leaf tensors plus a function of them. The
//! output is reduced to a scalar with fixed random weights, backpropagated
//! once, and compared element by element against
//! `(L(x + h) - L(x - h)) / 2h`. The error of one element is
//! `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
//!
//! Where `L` is smooth the central differences at `h` and `h / 2` agree to
//! `O(h^2)`. An element where they disagree by more than half the tolerance
//! has a kink (ReLU, abs, clamp) inside the stencil, where finite
//! differences say nothing about the derivative; it is counted as skipped
//! rather than compared. A suite where more than a tenth of the elements are
//! skipped fails.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::depthnet::{build_feature_volume, soft_argmin, DepthNet, DepthNetConfig};
use crate::error::Result;
use crate::geometry::{bilinear_sample, warp_stereo, StereoSide, WarpConvention};
use crate::inpaint::{InpaintConfig, InpaintNet};
use crate::losses::{
    depth_objective, dssim, inpaint_loss, lr_consistency_loss, photometric_loss, smoothness_loss,
    ssim, total_loss, LossParts, LossWeights,
};
use crate::nn::{Module, NormOrder, ResidualBlock};
use crate::tensor::{
    avg_pool2d, batch_norm, box_filter2d, conv2d, conv3d, conv_transpose3d, no_grad,
    upsample_nearest2d, BnMode, ConvSpec, RunningStats, Tensor,
};

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const PIPELINE_TOLERANCE: f64 = 1e-3;
pub const REL_FLOOR: f64 = 1e-5;
/// Elements checked per input tensor; larger tensors are subsampled.
pub const MAX_PER_INPUT: usize = 32;

type Eval = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

/// Leaves to perturb and the function under test.
pub struct Case {
    pub inputs: Vec<Tensor<f64>>,
    pub f: Eval,
}

impl Case {
    pub fn new(
        inputs: Vec<Tensor<f64>>,
        f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static,
    ) -> Self {
        Case {
            inputs,
            f: Box::new(f),
        }
    }
}

pub struct Suite {
    pub name: &'static str,
    pub tolerance: f64,
    pub build: fn(&mut ChaCha8Rng) -> Result<Case>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub millis: u128,
    /// `(input, element, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl CheckResult {
    /// One `key=value` line per suite.
    pub fn line(&self) -> String {
        format!(
            "gradcheck op={} status={} max_rel_err={:.3e} tol={:.0e} checked={} kinks={} ms={}{}",
            self.name,
            if self.passed { "pass" } else { "FAIL" },
            self.max_rel_error,
            self.tolerance,
            self.checked,
            self.skipped_kinks,
            self.millis,
            match self.worst {
                Some((i, j, a, n)) if !self.passed =>
                    format!(" worst_input={i} worst_index={j} analytic={a:.6e} numeric={n:.6e}"),
                _ => String::new(),
            }
        )
    }
}

fn scalarize(y: &Tensor<f64>, weights: &Tensor<f64>) -> Result<Tensor<f64>> {
    y.reshape(&[y.numel()])?.mul(weights).map(|t| t.sum())
}

/// Runs one case against finite differences.
pub fn check(name: &str, case: &Case, tolerance: f64, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let t0 = Instant::now();
    for x in &case.inputs {
        x.zero_grad();
    }
    let y = (case.f)(&case.inputs)?;
    let weights = Tensor::uniform(&[y.numel()], -1.0, 1.0, rng);
    scalarize(&y, &weights)?.backward()?;
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        no_grad(|| Ok(scalarize(&(case.f)(inputs)?, &weights)?.item()))
    };
    let (mut worst, mut checked, mut kinks, mut at) = (0.0f64, 0, 0, None);
    for (i, x) in case.inputs.iter().enumerate() {
        let n = x.numel();
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; n]);
        let picks: Vec<usize> = if n <= MAX_PER_INPUT {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, MAX_PER_INPUT).into_vec();
            v.sort_unstable();
            v
        };
        for j in picks {
            let orig = x.data()[j];
            let central = |h: f64| -> Result<f64> {
                x.data_mut()[j] = orig + h;
                let up = eval(&case.inputs);
                x.data_mut()[j] = orig - h;
                let down = eval(&case.inputs);
                x.data_mut()[j] = orig;
                Ok((up? - down?) / (2.0 * h))
            };
            let numeric = central(STEP)?;
            let half = central(STEP / 2.0)?;
            if (numeric - half).abs()
                > 0.5 * tolerance * numeric.abs().max(half.abs()).max(REL_FLOOR)
            {
                kinks += 1;
                continue;
            }
            let a = analytic[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            if err > worst || at.is_none() {
                worst = err;
                at = Some((i, j, a, numeric));
            }
            checked += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        checked,
        skipped_kinks: kinks,
        max_rel_error: worst,
        tolerance,
        // A case that is mostly kinks has not really been checked.
        passed: worst < tolerance && checked > 0 && kinks * 10 <= checked,
        millis: t0.elapsed().as_millis(),
        worst: at,
    })
}

pub fn run_suite(suite: &Suite, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = (suite.build)(&mut rng)?;
    check(suite.name, &case, suite.tolerance, &mut rng)
}

/// Runs every suite whose name contains `filter` (all when `None`).
pub fn run(
    filter: Option<&str>,
    seed: u64,
    progress: &mut dyn FnMut(&CheckResult),
) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for s in suites() {
        if filter.is_some_and(|f| !s.name.contains(f)) {
            continue;
        }
        let r = run_suite(&s, seed)?;
        progress(&r);
        out.push(r);
    }
    Ok(out)
}

fn leaf(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, rng).into_param()
}

fn image(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    leaf(&[c, h, w], 0.05, 0.95, rng)
}

/// A smooth random image, so that warps of it are well conditioned.
fn smooth_image(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let phase: Vec<[f64; 3]> = (0..c).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let mut data = Vec::with_capacity(c * h * w);
    for p in &phase {
        for y in 0..h {
            for x in 0..w {
                let (x, y) = (x as f64, y as f64);
                let v = (0.7 * x + 6.0 * p[0]).sin() * (0.5 * y + 6.0 * p[1]).cos()
                    + (0.3 * (x + y) + 6.0 * p[2]).sin();
                data.push(0.5 + 0.2 * v);
            }
        }
    }
    Tensor::param(&[c, h, w], data).expect("shape matches")
}

fn conv_case(spec: ConvSpec, input: &[usize], rng: &mut ChaCha8Rng) -> Case {
    let x = leaf(input, -1.0, 1.0, rng);
    let w = leaf(&spec.weight_shape(), -0.5, 0.5, rng);
    let b = leaf(&[spec.out_channels], -0.5, 0.5, rng);
    let is_2d = input.len() == 4;
    Case::new(vec![x, w, b], move |t| {
        if is_2d {
            conv2d(&t[0], &spec, &t[1], Some(&t[2]))
        } else {
            conv3d(&t[0], &spec, &t[1], Some(&t[2]))
        }
    })
}

fn bn_case(shape: &[usize], mode: BnMode, rng: &mut ChaCha8Rng) -> Case {
    let c = shape[1];
    let x = leaf(shape, -1.0, 2.0, rng);
    let gamma = leaf(&[c], 0.5, 1.5, rng);
    let beta = leaf(&[c], -0.5, 0.5, rng);
    let stats = RunningStats {
        mean: Tensor::uniform(&[c], -0.2, 0.2, rng),
        var: Tensor::uniform(&[c], 0.5, 1.5, rng),
    };
    Case::new(vec![x, gamma, beta], move |t| {
        batch_norm(&t[0], &t[1], &t[2], &stats, mode)
    })
}

/// Moves every parameter off its initial value by up to 30% of the tensor's
/// RMS (0.03 for all-zero tensors). Fresh layers have zero biases and unit
/// gains, which can park activations exactly on a ReLU kink.
fn randomize<M: Module<f64>>(m: &M, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    m.parameters()
        .into_iter()
        .map(|p| {
            let mut d = p.tensor.data_mut();
            let rms = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64)
                .sqrt()
                .max(0.1);
            d.iter_mut()
                .for_each(|v| *v += rms * rng.gen_range(-0.3..0.3));
            drop(d);
            p.tensor
        })
        .collect()
}

fn disparity(h: usize, w: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    leaf(&[1, h, w], lo, hi, rng)
}

fn tiny_depth_config() -> DepthNetConfig {
    DepthNetConfig {
        feature_channels: 2,
        residual_blocks: 1,
        filter_channels: 2,
        disparities: 16,
        d_min: 0.0,
        d_max: 6.0,
        ..DepthNetConfig::default()
    }
}

/// Every registered suite.
pub fn suites() -> Vec<Suite> {
    fn s(name: &'static str, build: fn(&mut ChaCha8Rng) -> Result<Case>) -> Suite {
        Suite {
            name,
            tolerance: OP_TOLERANCE,
            build,
        }
    }
    let mut all = vec![
        s("elementwise", |rng| {
            let a = leaf(&[2, 3, 4], -1.0, 1.0, rng);
            let b = leaf(&[2, 3, 4], 0.5, 1.5, rng);
            Ok(Case::new(vec![a, b], |t| {
                let (a, b) = (&t[0], &t[1]);
                let u = a.relu().add(&a.sigmoid())?.add(&a.exp().mul_scalar(0.3))?;
                let v = b.sqrt().mul(&a.square())?.sub(&a.abs().neg())?;
                Ok(u.add(&v)?
                    .div(b)?
                    .add(&a.clamp(-0.5, 0.5))?
                    .add_scalar(1.0)
                    .mul_scalar(0.7))
            }))
        }),
        s("reductions", |rng| {
            let a = leaf(&[2, 3, 4], -1.0, 1.0, rng);
            Ok(Case::new(vec![a], |t| {
                let a = &t[0];
                let m = a.mean_axis(1, true)?.expand(1, 3)?;
                let s = a.sum_axis(2, false)?.reshape(&[2, 3, 1])?.expand(2, 4)?;
                let total = a.sum().add(&a.mean())?;
                a.mul(&m)?
                    .add(&s)?
                    .reshape(&[24])?
                    .mul(&total.reshape(&[1])?.expand(0, 24)?)
            }))
        }),
        s("layout", |rng| {
            let a = leaf(&[2, 3, 5], -1.0, 1.0, rng);
            let b = leaf(&[2, 2, 5], -1.0, 1.0, rng);
            Ok(Case::new(vec![a, b], |t| {
                let c = Tensor::concat(&[&t[0], &t[1]], 1)?;
                let n = c.narrow(1, 1, 3)?;
                n.shift(2, 2)?.add(&n.shift(1, -1)?)?.mul(&n)
            }))
        }),
        s("pooling", |rng| {
            let a = leaf(&[1, 2, 6, 8], -1.0, 1.0, rng);
            Ok(Case::new(vec![a], |t| {
                let p = avg_pool2d(&t[0])?;
                let u = upsample_nearest2d(&p)?;
                let b = box_filter2d(&t[0].reshape(&[2, 6, 8])?, 3)?;
                Ok(u.mul(&t[0])?.sum().add(&b.square().sum())?)
            }))
        }),
        s("conv2d", |rng| {
            Ok(conv_case(ConvSpec::conv2d(2, 3, 3, 1), &[2, 2, 5, 6], rng))
        }),
        s("conv2d_stride2", |rng| {
            Ok(conv_case(ConvSpec::conv2d(2, 3, 5, 2), &[1, 2, 7, 8], rng))
        }),
        s("conv3d", |rng| {
            Ok(conv_case(
                ConvSpec::conv3d(2, 2, 3, 1),
                &[1, 2, 4, 5, 4],
                rng,
            ))
        }),
        s("conv3d_stride2", |rng| {
            Ok(conv_case(
                ConvSpec::conv3d(2, 3, 3, 2),
                &[1, 2, 5, 6, 4],
                rng,
            ))
        }),
        s("conv_transpose3d", |rng| {
            let spec = ConvSpec::conv3d(3, 2, 3, 2);
            let x = leaf(&[1, 3, 2, 3, 2], -1.0, 1.0, rng);
            let w = leaf(&spec.transposed_weight_shape(), -0.5, 0.5, rng);
            let b = leaf(&[2], -0.5, 0.5, rng);
            Ok(Case::new(vec![x, w, b], move |t| {
                conv_transpose3d(&t[0], &spec, &t[1], Some(&t[2]), [4, 6, 3])
            }))
        }),
        s("batch_norm_train", |rng| {
            Ok(bn_case(&[2, 3, 3, 4], BnMode::Train, rng))
        }),
        s("batch_norm_train_5d", |rng| {
            Ok(bn_case(&[1, 2, 3, 2, 4], BnMode::Train, rng))
        }),
        s("batch_norm_eval", |rng| {
            Ok(bn_case(&[2, 3, 3, 4], BnMode::Eval, rng))
        }),
        s("bilinear_sample", |rng| {
            let img = image(2, 5, 6, rng);
            // Some coordinates fall outside and exercise the clamped border.
            let grid = leaf(&[2, 4, 5], -0.7, 5.6, rng);
            Ok(Case::new(vec![img, grid], |t| {
                bilinear_sample(&t[0], &t[1])
            }))
        }),
        s("warp_stereo", |rng| {
            let other = smooth_image(3, 6, 10, rng);
            let d = disparity(6, 10, 0.2, 3.8, rng);
            Ok(Case::new(vec![other, d], |t| {
                let (l, _) = warp_stereo(
                    &t[0],
                    &t[1],
                    StereoSide::Left,
                    WarpConvention::RightIsPositiveX,
                )?;
                let (r, _) = warp_stereo(
                    &t[0],
                    &t[1],
                    StereoSide::Right,
                    WarpConvention::RightIsNegativeX,
                )?;
                l.add(&r)
            }))
        }),
        s("feature_volume", |rng| {
            let a = leaf(&[1, 2, 3, 6], -1.0, 1.0, rng);
            let b = leaf(&[1, 2, 3, 6], -1.0, 1.0, rng);
            Ok(Case::new(vec![a, b], |t| {
                let l = build_feature_volume(&t[0], &t[1], &[0, 1, 3], StereoSide::Left)?;
                let r = build_feature_volume(&t[1], &t[0], &[0, 2, 3], StereoSide::Right)?;
                l.mul(&r)
            }))
        }),
        s("soft_argmin", |rng| {
            let cost = leaf(&[1, 5, 3, 4], -2.0, 2.0, rng);
            Ok(Case::new(vec![cost], |t| {
                soft_argmin(&t[0], &[0.0, 1.0, 2.5, 3.0, 7.0])
            }))
        }),
        s("ssim", |rng| {
            let a = image(2, 9, 10, rng);
            let b = image(2, 9, 10, rng);
            Ok(Case::new(vec![a, b], |t| {
                let mut acc = ssim(&t[0], &t[1], 3)?.sum();
                for k in [5, 7] {
                    acc = acc.add(&ssim(&t[0], &t[1], k)?.sum())?;
                }
                Ok(acc)
            }))
        }),
        s("dssim_masked", |rng| {
            let a = image(3, 8, 9, rng);
            let b = image(3, 8, 9, rng);
            let mask: Vec<bool> = (0..72).map(|i| i % 7 != 3).collect();
            Ok(Case::new(vec![a, b], move |t| {
                dssim(&t[0], &t[1], 3, Some(&mask))
            }))
        }),
        s("photometric_loss", |rng| {
            let w = LossWeights::default();
            let ins: Vec<Tensor<f64>> = (0..4).map(|_| image(3, 8, 9, rng)).collect();
            let ml: Vec<bool> = (0..72).map(|i| i % 5 != 0).collect();
            let mr: Vec<bool> = (0..72).map(|i| i % 3 != 1).collect();
            Ok(Case::new(ins, move |t| {
                photometric_loss(&t[0], &t[1], &t[2], &t[3], Some((&ml, &mr)), &w)
            }))
        }),
        s("lr_consistency_loss", |rng| {
            let dl = disparity(6, 10, 0.3, 3.7, rng);
            let dr = disparity(6, 10, 0.3, 3.7, rng);
            Ok(Case::new(vec![dl, dr], |t| {
                lr_consistency_loss(&t[0], &t[1], WarpConvention::default(), true)
            }))
        }),
        s("smoothness_loss", |rng| {
            let d = disparity(6, 7, 0.0, 4.0, rng);
            let x = image(3, 6, 7, rng);
            Ok(Case::new(vec![d, x], |t| smoothness_loss(&t[0], &t[1])))
        }),
        s("total_loss", |rng| {
            let parts: Vec<Tensor<f64>> = (0..3).map(|_| leaf(&[], 0.0, 1.0, rng)).collect();
            Ok(Case::new(parts, |t| {
                let p = LossParts {
                    photometric: t[0].clone(),
                    lr: t[1].clone(),
                    smoothness: t[2].clone(),
                };
                total_loss(&p, &LossWeights::default())
            }))
        }),
        s("depth_objective", |rng| {
            let xl = smooth_image(3, 8, 12, rng);
            let xr = smooth_image(3, 8, 12, rng);
            let dl = disparity(8, 12, 0.3, 3.7, rng);
            let dr = disparity(8, 12, 0.3, 3.7, rng);
            Ok(Case::new(vec![xl, xr, dl, dr], |t| {
                let disp = crate::depthnet::Disparities {
                    left: t[2].clone(),
                    right: t[3].clone(),
                };
                let (loss, _) = depth_objective(
                    &t[0],
                    &t[1],
                    &disp,
                    &LossWeights::default(),
                    WarpConvention::default(),
                )?;
                Ok(loss)
            }))
        }),
        s("inpaint_loss", |rng| {
            let p = image(3, 5, 6, rng);
            let q = image(3, 5, 6, rng);
            Ok(Case::new(vec![p, q], |t| inpaint_loss(&t[0], &t[1])))
        }),
        s("residual_block", |rng| {
            let block = ResidualBlock::<f64>::new(3, true, NormOrder::ReluThenBn, rng);
            let x = leaf(&[1, 3, 5, 6], -1.0, 1.0, rng);
            let mut inputs = vec![x];
            inputs.extend(randomize(&block, rng));
            Ok(Case::new(inputs, move |t| {
                block.forward(&t[0], BnMode::Train)
            }))
        }),
        s("inpaint_net", |rng| {
            let cfg = InpaintConfig {
                base_channels: 4,
                tail_channels: 3,
                ..InpaintConfig::default()
            };
            let net = InpaintNet::<f64>::new(cfg, rng.gen())?;
            let x = leaf(&[1, 16, 8, 8], 0.0, 1.0, rng);
            let mut inputs = vec![x];
            inputs.extend(randomize(&net, rng));
            Ok(Case::new(inputs, move |t| {
                net.forward_train(&t[0], BnMode::Train)
            }))
        }),
    ];
    all.push(Suite {
        name: "tiny_pipeline",
        tolerance: PIPELINE_TOLERANCE,
        build: |rng| {
            let net = DepthNet::<f64>::new(tiny_depth_config(), rng.gen())?;
            let xl = smooth_image(3, 16, 16, rng);
            let xr = smooth_image(3, 16, 16, rng);
            let inputs = randomize(&net, rng);
            Ok(Case::new(inputs, move |_| {
                let disp = net.predict(&xl.detach(), &xr.detach(), BnMode::Train)?;
                let (loss, _) = depth_objective(
                    &xl,
                    &xr,
                    &disp,
                    &LossWeights::default(),
                    WarpConvention::default(),
                )?;
                Ok(loss)
            }))
        },
    });
    all
}

/// Harness self-test: `x^2` whose backward claims `x` instead of `2x`.
#[doc(hidden)]
pub fn corrupted_fixture() -> Suite {
    Suite {
        name: "corrupted_square",
        tolerance: OP_TOLERANCE,
        build: |rng| {
            let x = leaf(&[6], 0.5, 1.5, rng);
            Ok(Case::new(vec![x], |t| {
                let x = t[0].clone();
                let data = x.data().iter().map(|v| v * v).collect();
                Ok(Tensor::from_op(
                    "corrupted_square",
                    vec![6],
                    data,
                    vec![x.clone()],
                    Box::new(move |g, _, _| {
                        vec![Some(
                            g.iter().zip(x.data().iter()).map(|(g, v)| g * v).collect(),
                        )]
                    }),
                ))
            }))
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names: Vec<_> = suites().iter().map(|s| s.name).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn corrupted_op_is_caught_by_name() {
        let r = run_suite(&corrupted_fixture(), 0).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.1);
        assert!(
            r.line().contains("op=corrupted_square status=FAIL"),
            "{}",
            r.line()
        );
    }

    #[test]
    fn exact_op_passes() {
        let s = Suite {
            name: "square",
            tolerance: OP_TOLERANCE,
            build: |rng| {
                Ok(Case::new(vec![leaf(&[4], -1.0, 1.0, rng)], |t| {
                    Ok(t[0].square())
                }))
            },
        };
        let r = run_suite(&s, 1).unwrap();
        assert!(r.passed, "{}", r.line());
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn every_suite_passes() {
        let results = run(None, 0, &mut |r| println!("{}", r.line())).unwrap();
        let failed: Vec<String> = results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.line())
            .collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }
}
