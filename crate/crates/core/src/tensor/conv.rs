//! 2D/3D convolution and 3D transposed convolution.
//!
//! All variants share one GEMM-based kernel operating on `[C, D, H, W]`
//! samples; a 2D convolution is a 3D one with unit depth. Strided layers use
//! im2col, unit-stride layers run one GEMM per kernel tap on the padded input. The transposed
//! convolution is implemented as the exact adjoint of the forward kernel.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Geometry of one convolution layer. Spatial triples are ordered
/// (depth, height, width); 2D layers use depth 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Square 2D kernel with "same"-style padding `k / 2`.
    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            kernel: [1, kernel, kernel],
            stride: [1, stride, stride],
            padding: [0, kernel / 2, kernel / 2],
            in_channels,
            out_channels,
        }
    }

    /// Cubic 3D kernel with padding `k / 2`.
    pub fn conv3d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            kernel: [kernel; 3],
            stride: [stride; 3],
            padding: [kernel / 2; 3],
            in_channels,
            out_channels,
        }
    }

    pub fn is_2d(&self) -> bool {
        self.kernel[0] == 1 && self.stride[0] == 1 && self.padding[0] == 0
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// `[out, in, kd, kh, kw]` for 3D, `[out, in, kh, kw]` for 2D.
    pub fn weight_shape(&self) -> Vec<usize> {
        let [kd, kh, kw] = self.kernel;
        if self.is_2d() {
            vec![self.out_channels, self.in_channels, kh, kw]
        } else {
            vec![self.out_channels, self.in_channels, kd, kh, kw]
        }
    }

    /// Weight layout of the transposed layer: `[in, out, kd, kh, kw]`.
    pub fn transposed_weight_shape(&self) -> Vec<usize> {
        let [kd, kh, kw] = self.kernel;
        vec![self.in_channels, self.out_channels, kd, kh, kw]
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel_volume() + self.out_channels
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            out[i] = conv_output_extent(input[i], self.kernel[i], self.stride[i], self.padding[i])
                .ok_or_else(|| {
                    Error::shape(
                        "conv",
                        format!(
                            "input extent {} too small for kernel {} with padding {} (dims {input:?})",
                            input[i], self.kernel[i], self.padding[i]
                        ),
                    )
                })?;
        }
        Ok(out)
    }
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when no output position fits.
pub fn conv_output_extent(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 || n + 2 * p < k {
        return None;
    }
    Some((n + 2 * p - k) / s + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    cin: usize,
    cout: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
}

impl Geom {
    fn in_len(&self) -> usize {
        self.input.iter().product()
    }
    fn out_len(&self) -> usize {
        self.output.iter().product()
    }
    fn rows(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    /// Visits every (row, column, input offset) triple of the im2col matrix
    /// whose input position is inside the volume.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [id, ih, iw] = self.input;
        let [od, oh, ow] = self.output;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.padding;
        let p = od * oh * ow;
        let mut row = 0;
        for c in 0..self.cin {
            let cbase = c * id * ih * iw;
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let rbase = row * p;
                        for z in 0..od {
                            let zi = (z * sd + a) as isize - pd as isize;
                            if zi < 0 || zi >= id as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let yi = (y * sh + b) as isize - ph as isize;
                                if yi < 0 || yi >= ih as isize {
                                    continue;
                                }
                                let src_row = cbase + (zi as usize * ih + yi as usize) * iw;
                                let dst_row = rbase + (z * oh + y) * ow;
                                for x in 0..ow {
                                    let xi = (x * sw + e) as isize - pw as isize;
                                    if xi >= 0 && xi < iw as isize {
                                        f(dst_row + x, src_row + xi as usize);
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Fills every entry of `cols`, writing zeros for taps in the padding.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let [id, ih, iw] = self.input;
        let [od, oh, ow] = self.output;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.padding;
        let mut rows = cols.chunks_exact_mut(od * oh * ow);
        for c in 0..self.cin {
            let xc = &x[c * id * ih * iw..][..id * ih * iw];
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let row = rows.next().expect("cols sized for every tap");
                        for z in 0..od {
                            let zi = (z * sd + a) as isize - pd as isize;
                            for y in 0..oh {
                                let yi = (y * sh + b) as isize - ph as isize;
                                let dst = &mut row[(z * oh + y) * ow..][..ow];
                                if zi < 0 || zi >= id as isize || yi < 0 || yi >= ih as isize {
                                    dst.iter_mut().for_each(|v| *v = T::zero());
                                    continue;
                                }
                                let src = &xc[(zi as usize * ih + yi as usize) * iw..][..iw];
                                for (x, v) in dst.iter_mut().enumerate() {
                                    let xi = (x * sw + e) as isize - pw as isize;
                                    *v = if xi >= 0 && xi < iw as isize {
                                        src[xi as usize]
                                    } else {
                                        T::zero()
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        self.for_each_tap(|dst, src| x[src] = x[src] + cols[dst]);
    }

    fn unit_stride(&self) -> bool {
        self.stride == [1, 1, 1]
    }

    fn padded(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.input[i] + 2 * self.padding[i])
    }

    /// Length of the flat run of padded positions that covers every output
    /// position when outputs are laid out on the padded grid.
    fn span(&self) -> usize {
        let [_, ph, pw] = self.padded();
        let [od, oh, ow] = self.output;
        (od - 1) * ph * pw + (oh - 1) * pw + ow
    }

    /// Flat padded-grid offset of every kernel tap, in weight order.
    fn tap_offsets(&self) -> Vec<usize> {
        let [_, ph, pw] = self.padded();
        let [kd, kh, kw] = self.kernel;
        let mut out = Vec::with_capacity(kd * kh * kw);
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    out.push((a * ph + b) * pw + e);
                }
            }
        }
        out
    }

    /// Copies between a dense `[C, D, H, W]` block and the interior of its
    /// zero-padded counterpart. `to_padded` selects the direction.
    fn pad_copy<T: Scalar>(
        &self,
        dense: &mut [T],
        padded: &mut [T],
        channels: usize,
        to_padded: bool,
    ) {
        let [d, h, w] = self.input;
        let [pd, ph, pw] = self.padded();
        let [od, oh, ow] = self.padding;
        for c in 0..channels {
            for z in 0..d {
                for y in 0..h {
                    let src = ((c * d + z) * h + y) * w;
                    let dst = ((c * pd + z + od) * ph + y + oh) * pw + ow;
                    if to_padded {
                        padded[dst..dst + w].copy_from_slice(&dense[src..src + w]);
                    } else {
                        dense[src..src + w].copy_from_slice(&padded[dst..dst + w]);
                    }
                }
            }
        }
    }

    /// Copies between the dense output block and its padded-grid layout.
    fn out_copy<T: Scalar>(&self, dense: &mut [T], grid: &mut [T], to_grid: bool) {
        let [_, ph, pw] = self.padded();
        let [od, oh, ow] = self.output;
        let span = self.span();
        for c in 0..self.cout {
            for z in 0..od {
                for y in 0..oh {
                    let src = ((c * od + z) * oh + y) * ow;
                    let dst = c * span + (z * ph + y) * pw;
                    if to_grid {
                        grid[dst..dst + ow].copy_from_slice(&dense[src..src + ow]);
                    } else {
                        dense[src..src + ow].copy_from_slice(&grid[dst..dst + ow]);
                    }
                }
            }
        }
    }

    fn padded_len(&self) -> usize {
        self.padded().iter().product()
    }

    /// Stride-1 forward pass without im2col: one GEMM per kernel tap over a
    /// shifted view of the zero-padded input.
    fn forward_direct<T: Scalar>(&self, x: &[T], batch: usize, w: &[T]) -> Vec<T> {
        let (kv, plen, span) = (
            self.kernel.iter().product::<usize>(),
            self.padded_len(),
            self.span(),
        );
        let (il, ol) = (self.cin * self.in_len(), self.cout * self.out_len());
        let mut y = vec![T::zero(); batch * ol];
        let mut xp = vec![T::zero(); self.cin * plen];
        let mut grid = vec![T::zero(); self.cout * span];
        let mut xn = vec![T::zero(); il];
        for n in 0..batch {
            xn.copy_from_slice(&x[n * il..][..il]);
            self.pad_copy(&mut xn, &mut xp, self.cin, true);
            grid.iter_mut().for_each(|v| *v = T::zero());
            for (t, &off) in self.tap_offsets().iter().enumerate() {
                T::gemm(
                    self.cout,
                    self.cin,
                    span,
                    T::one(),
                    &w[t..],
                    (self.cin * kv) as isize,
                    kv as isize,
                    &xp[off..],
                    plen as isize,
                    1,
                    T::one(),
                    &mut grid,
                    span as isize,
                    1,
                );
            }
            self.out_copy(&mut y[n * ol..][..ol], &mut grid, false);
        }
        y
    }

    fn grad_input_direct<T: Scalar>(&self, gy: &[T], batch: usize, w: &[T]) -> Vec<T> {
        let (kv, plen, span) = (
            self.kernel.iter().product::<usize>(),
            self.padded_len(),
            self.span(),
        );
        let (il, ol) = (self.cin * self.in_len(), self.cout * self.out_len());
        let mut gx = vec![T::zero(); batch * il];
        let mut gxp = vec![T::zero(); self.cin * plen];
        let mut grid = vec![T::zero(); self.cout * span];
        let mut gyn = vec![T::zero(); ol];
        for n in 0..batch {
            gyn.copy_from_slice(&gy[n * ol..][..ol]);
            self.out_copy(&mut gyn, &mut grid, true);
            gxp.iter_mut().for_each(|v| *v = T::zero());
            for (t, &off) in self.tap_offsets().iter().enumerate() {
                T::gemm(
                    self.cin,
                    self.cout,
                    span,
                    T::one(),
                    &w[t..],
                    kv as isize,
                    (self.cin * kv) as isize,
                    &grid,
                    span as isize,
                    1,
                    T::one(),
                    &mut gxp[off..],
                    plen as isize,
                    1,
                );
            }
            self.pad_copy(&mut gx[n * il..][..il], &mut gxp, self.cin, false);
        }
        gx
    }

    fn grad_weight_direct<T: Scalar>(&self, x: &[T], gy: &[T], batch: usize) -> Vec<T> {
        let (kv, plen, span) = (
            self.kernel.iter().product::<usize>(),
            self.padded_len(),
            self.span(),
        );
        let (il, ol) = (self.cin * self.in_len(), self.cout * self.out_len());
        let mut gw = vec![T::zero(); self.cout * self.cin * kv];
        let mut xp = vec![T::zero(); self.cin * plen];
        let mut grid = vec![T::zero(); self.cout * span];
        let mut xn = vec![T::zero(); il];
        let mut gyn = vec![T::zero(); ol];
        for n in 0..batch {
            xn.copy_from_slice(&x[n * il..][..il]);
            self.pad_copy(&mut xn, &mut xp, self.cin, true);
            gyn.copy_from_slice(&gy[n * ol..][..ol]);
            self.out_copy(&mut gyn, &mut grid, true);
            for (t, &off) in self.tap_offsets().iter().enumerate() {
                T::gemm(
                    self.cout,
                    span,
                    self.cin,
                    T::one(),
                    &grid,
                    span as isize,
                    1,
                    &xp[off..],
                    1,
                    plen as isize,
                    T::one(),
                    &mut gw[t..],
                    (self.cin * kv) as isize,
                    kv as isize,
                );
            }
        }
        gw
    }

    /// `y[n, cout, P] = W[cout, K] * cols(x[n])`.
    fn forward<T: Scalar>(&self, x: &[T], batch: usize, w: &[T]) -> Vec<T> {
        if self.unit_stride() {
            return self.forward_direct(x, batch, w);
        }
        let (k, p) = (self.rows(), self.out_len());
        let mut cols = vec![T::zero(); k * p];
        let mut y = vec![T::zero(); batch * self.cout * p];
        for n in 0..batch {
            self.im2col(
                &x[n * self.cin * self.in_len()..][..self.cin * self.in_len()],
                &mut cols,
            );
            let out = &mut y[n * self.cout * p..][..self.cout * p];
            T::gemm(
                self.cout,
                k,
                p,
                T::one(),
                w,
                k as isize,
                1,
                &cols,
                p as isize,
                1,
                T::zero(),
                out,
                p as isize,
                1,
            );
        }
        y
    }

    /// `forward(x, w)` together with `grad_weight(x, gy)`, sharing one
    /// im2col per sample.
    fn forward_and_grad_weight<T: Scalar>(
        &self,
        x: &[T],
        batch: usize,
        w: &[T],
        gy: &[T],
    ) -> (Vec<T>, Vec<T>) {
        let (k, p) = (self.rows(), self.out_len());
        let mut cols = vec![T::zero(); k * p];
        let mut y = vec![T::zero(); batch * self.cout * p];
        let mut gw = vec![T::zero(); self.cout * k];
        for n in 0..batch {
            self.im2col(
                &x[n * self.cin * self.in_len()..][..self.cin * self.in_len()],
                &mut cols,
            );
            let out = &mut y[n * self.cout * p..][..self.cout * p];
            T::gemm(
                self.cout,
                k,
                p,
                T::one(),
                w,
                k as isize,
                1,
                &cols,
                p as isize,
                1,
                T::zero(),
                out,
                p as isize,
                1,
            );
            let g = &gy[n * self.cout * p..][..self.cout * p];
            T::gemm(
                self.cout,
                p,
                k,
                T::one(),
                g,
                p as isize,
                1,
                &cols,
                1,
                p as isize,
                T::one(),
                &mut gw,
                k as isize,
                1,
            );
        }
        (y, gw)
    }

    /// Adjoint of [`Geom::forward`] with respect to its input.
    fn grad_input<T: Scalar>(&self, gy: &[T], batch: usize, w: &[T]) -> Vec<T> {
        if self.unit_stride() {
            return self.grad_input_direct(gy, batch, w);
        }
        let (k, p) = (self.rows(), self.out_len());
        let mut gcols = vec![T::zero(); k * p];
        let mut gx = vec![T::zero(); batch * self.cin * self.in_len()];
        for n in 0..batch {
            let g = &gy[n * self.cout * p..][..self.cout * p];
            T::gemm(
                k,
                self.cout,
                p,
                T::one(),
                w,
                1,
                k as isize,
                g,
                p as isize,
                1,
                T::zero(),
                &mut gcols,
                p as isize,
                1,
            );
            self.col2im(
                &gcols,
                &mut gx[n * self.cin * self.in_len()..][..self.cin * self.in_len()],
            );
        }
        gx
    }

    /// Gradient of `<forward(x), gy>` with respect to the weights.
    fn grad_weight<T: Scalar>(&self, x: &[T], gy: &[T], batch: usize) -> Vec<T> {
        if self.unit_stride() {
            return self.grad_weight_direct(x, gy, batch);
        }
        let (k, p) = (self.rows(), self.out_len());
        let mut cols = vec![T::zero(); k * p];
        let mut gw = vec![T::zero(); self.cout * k];
        for n in 0..batch {
            self.im2col(
                &x[n * self.cin * self.in_len()..][..self.cin * self.in_len()],
                &mut cols,
            );
            let g = &gy[n * self.cout * p..][..self.cout * p];
            T::gemm(
                self.cout,
                p,
                k,
                T::one(),
                g,
                p as isize,
                1,
                &cols,
                1,
                p as isize,
                T::one(),
                &mut gw,
                k as isize,
                1,
            );
        }
        gw
    }
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], batch: usize, spatial: usize) {
    let c = bias.len();
    for n in 0..batch {
        for (ch, &b) in bias.iter().enumerate() {
            y[(n * c + ch) * spatial..][..spatial]
                .iter_mut()
                .for_each(|v| *v = *v + b);
        }
    }
}

fn bias_grad<T: Scalar>(g: &[T], channels: usize, batch: usize, spatial: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for n in 0..batch {
        for (ch, acc) in gb.iter_mut().enumerate() {
            *acc = g[(n * channels + ch) * spatial..][..spatial]
                .iter()
                .fold(*acc, |a, &v| a + v);
        }
    }
    gb
}

fn check_bias<T: Scalar>(b: Option<&Tensor<T>>, channels: usize, op: &'static str) -> Result<()> {
    if let Some(b) = b {
        if b.shape() != [channels] {
            return Err(Error::shape(
                op,
                format!("bias shape {:?}, expected [{channels}]", b.shape()),
            ));
        }
    }
    Ok(())
}

fn check_weight<T: Scalar>(w: &Tensor<T>, expected: &[usize], op: &'static str) -> Result<()> {
    if w.shape() != expected {
        return Err(Error::shape(
            op,
            format!("weight shape {:?}, expected {expected:?}", w.shape()),
        ));
    }
    Ok(())
}

fn conv_op<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    g: Geom,
    batch: usize,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    out_shape: Vec<usize>,
) -> Tensor<T> {
    let mut y = g.forward(&x.data(), batch, &w.data());
    if let Some(b) = b {
        add_bias(&mut y, &b.data(), batch, g.out_len());
    }
    let mut inputs = vec![x.clone(), w.clone()];
    inputs.extend(b.cloned());
    let (xc, wc) = (x.clone(), w.clone());
    Tensor::from_op(
        op,
        out_shape,
        y,
        inputs,
        Box::new(move |gy, _, needs| {
            let mut grads = Vec::with_capacity(3);
            grads.push(needs[0].then(|| g.grad_input(gy, batch, &wc.data())));
            grads.push(needs[1].then(|| g.grad_weight(&xc.data(), gy, batch)));
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(gy, g.cout, batch, g.out_len())));
            }
            grads
        }),
    )
}

/// 2D convolution of `[N, C, H, W]` input with `[Cout, Cin, KH, KW]` weights.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d";
    if !spec.is_2d() {
        return Err(Error::shape(
            OP,
            format!("spec {spec:?} is not two-dimensional"),
        ));
    }
    let &[n, c, h, w] = input.shape() else {
        return Err(Error::shape(
            OP,
            format!("input must be [N, C, H, W], got {:?}", input.shape()),
        ));
    };
    if c != spec.in_channels {
        return Err(Error::shape(
            OP,
            format!("input has {c} channels, layer expects {}", spec.in_channels),
        ));
    }
    check_weight(weight, &spec.weight_shape(), OP)?;
    check_bias(bias, spec.out_channels, OP)?;
    let output = spec.output_dims([1, h, w])?;
    let g = Geom {
        cin: c,
        cout: spec.out_channels,
        input: [1, h, w],
        output,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
    };
    Ok(conv_op(
        OP,
        input,
        g,
        n,
        weight,
        bias,
        vec![n, spec.out_channels, output[1], output[2]],
    ))
}

/// 3D convolution of `[N, C, D, H, W]` input with `[Cout, Cin, KD, KH, KW]` weights.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    const OP: &str = "conv3d";
    let &[n, c, d, h, w] = input.shape() else {
        return Err(Error::shape(
            OP,
            format!("input must be [N, C, D, H, W], got {:?}", input.shape()),
        ));
    };
    if c != spec.in_channels {
        return Err(Error::shape(
            OP,
            format!("input has {c} channels, layer expects {}", spec.in_channels),
        ));
    }
    let wshape = {
        let [kd, kh, kw] = spec.kernel;
        vec![spec.out_channels, spec.in_channels, kd, kh, kw]
    };
    check_weight(weight, &wshape, OP)?;
    check_bias(bias, spec.out_channels, OP)?;
    let output = spec.output_dims([d, h, w])?;
    let g = Geom {
        cin: c,
        cout: spec.out_channels,
        input: [d, h, w],
        output,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
    };
    let [od, oh, ow] = output;
    Ok(conv_op(
        OP,
        input,
        g,
        n,
        weight,
        bias,
        vec![n, spec.out_channels, od, oh, ow],
    ))
}

/// 3D transposed convolution: the adjoint of [`conv3d`] for the same kernel
/// geometry. `spec.in_channels`/`out_channels` refer to this layer's input
/// and output; weights are `[in, out, KD, KH, KW]`. Because several output
/// extents map onto the same input extent under striding, the output size is
/// given explicitly and must be consistent with the input.
pub fn conv_transpose3d<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    output_size: [usize; 3],
) -> Result<Tensor<T>> {
    const OP: &str = "conv_transpose3d";
    let &[n, c, d, h, w] = input.shape() else {
        return Err(Error::shape(
            OP,
            format!("input must be [N, C, D, H, W], got {:?}", input.shape()),
        ));
    };
    if c != spec.in_channels {
        return Err(Error::shape(
            OP,
            format!("input has {c} channels, layer expects {}", spec.in_channels),
        ));
    }
    check_weight(weight, &spec.transposed_weight_shape(), OP)?;
    check_bias(bias, spec.out_channels, OP)?;
    let implied = spec.output_dims(output_size)?;
    if implied != [d, h, w] {
        return Err(Error::shape(
            OP,
            format!(
                "target extents {output_size:?} reduce to {implied:?}, not to the input extents {:?}",
                [d, h, w]
            ),
        ));
    }
    // Geometry of the forward convolution this layer is the adjoint of.
    let g = Geom {
        cin: spec.out_channels,
        cout: spec.in_channels,
        input: output_size,
        output: [d, h, w],
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
    };
    let mut y = g.grad_input(&input.data(), n, &weight.data());
    if let Some(b) = bias {
        add_bias(&mut y, &b.data(), n, g.in_len());
    }
    let mut inputs = vec![input.clone(), weight.clone()];
    inputs.extend(bias.cloned());
    let (xc, wc) = (input.clone(), weight.clone());
    let [od, oh, ow] = output_size;
    Ok(Tensor::from_op(
        OP,
        vec![n, spec.out_channels, od, oh, ow],
        y,
        inputs,
        Box::new(move |gy, _, needs| {
            let mut grads = Vec::with_capacity(3);
            if needs[0] && needs[1] && !g.unit_stride() {
                let (gx, gw) = g.forward_and_grad_weight(gy, n, &wc.data(), &xc.data());
                grads.push(Some(gx));
                grads.push(Some(gw));
            } else {
                grads.push(needs[0].then(|| g.forward(gy, n, &wc.data())));
                grads.push(needs[1].then(|| g.grad_weight(gy, &xc.data(), n)));
            }
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(gy, g.cin, n, g.in_len())));
            }
            grads
        }),
    ))
}
