//! Forward and backward kernels on plain tensors. The tape composes these;
//! they are also usable directly for inference.

use super::{describe_mismatch, Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Upper bound on im2col buffer elements; large frames are processed in
/// bands of output rows.
const COLS_BUDGET: usize = 1 << 20;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape,
    pub cout: usize,
    pub stride: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn cin_per_group(&self) -> usize {
        self.input.c / self.groups
    }

    pub fn cout_per_group(&self) -> usize {
        self.cout / self.groups
    }

    /// Rows of the im2col matrix for one group.
    pub fn patch_len(&self) -> usize {
        self.cin_per_group() * TAPS
    }

    pub fn output(&self) -> Shape {
        let out = |x: usize| (x + 2 - KERNEL) / self.stride + 1;
        Shape::new(self.input.n, self.cout, out(self.input.h), out(self.input.w))
    }

    fn band_rows(&self) -> usize {
        let wo = self.output().w;
        (COLS_BUDGET / (self.patch_len() * wo)).max(1)
    }
}

/// Validates the operands of a 3×3, zero-padded convolution.
pub fn conv_geometry<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    groups: usize,
) -> Result<ConvGeometry> {
    let x = input.shape();
    let w = weight.shape();
    if stride != 1 && stride != 2 {
        return Err(Error::shape("conv2d", format!("stride must be 1 or 2, got {stride}")));
    }
    if groups == 0 || !x.c.is_multiple_of(groups) {
        return Err(Error::shape(
            "conv2d",
            format!("input channels C={} not divisible by groups={groups}", x.c),
        ));
    }
    if !w.n.is_multiple_of(groups) {
        return Err(Error::shape(
            "conv2d",
            format!("output channels Cout={} not divisible by groups={groups}", w.n),
        ));
    }
    if w.c != x.c / groups {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight input-channel dimension is {} but input C={} with groups={groups} needs {}",
                w.c,
                x.c,
                x.c / groups
            ),
        ));
    }
    if w.h != KERNEL || w.w != KERNEL {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be 3x3, got {}x{}", w.h, w.w),
        ));
    }
    if bias.shape() != Shape::new(1, w.n, 1, 1) {
        return Err(Error::shape(
            "conv2d",
            format!("bias must be 1x{}x1x1, got {}", w.n, bias.shape()),
        ));
    }
    Ok(ConvGeometry {
        input: x,
        cout: w.n,
        stride,
        groups,
    })
}

/// `dst[x] = src[x + kx - 1]` with zeros outside `src` (stride 1, equal widths).
#[inline]
fn gather_row_unit<T: Element>(src: &[T], dst: &mut [T], kx: usize) {
    let w = src.len();
    match kx {
        0 => {
            dst[0] = T::zero();
            dst[1..].copy_from_slice(&src[..w - 1]);
        }
        1 => dst.copy_from_slice(src),
        _ => {
            dst[..w - 1].copy_from_slice(&src[1..]);
            dst[w - 1] = T::zero();
        }
    }
}

/// Adjoint of [`gather_row_unit`].
#[inline]
fn scatter_row_unit<T: Element>(src: &[T], dst: &mut [T], kx: usize) {
    let w = src.len();
    let (d, s) = match kx {
        0 => (&mut dst[..w - 1], &src[1..]),
        1 => (&mut dst[..], src),
        _ => (&mut dst[1..], &src[..w - 1]),
    };
    d.iter_mut().zip(s).for_each(|(a, &b)| *a += b);
}

/// Gathers the 3×3 receptive fields of output rows `[r0, r1)` for the
/// input channels `[c0, c0 + cin)` of batch item `n`.
fn im2col<T: Element>(x: &[T], g: &ConvGeometry, n: usize, c0: usize, r0: usize, r1: usize, cols: &mut [T]) {
    let s = g.input;
    let out = g.output();
    let wo = out.w;
    let ncols = (r1 - r0) * wo;
    for ci in 0..g.cin_per_group() {
        let plane = &x[s.index(n, c0 + ci, 0, 0)..][..s.plane()];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((ci * KERNEL + ky) * KERNEL + kx) * ncols..][..ncols];
                for oy in r0..r1 {
                    let dst = &mut row[(oy - r0) * wo..][..wo];
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= s.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * s.w..][..s.w];
                    if g.stride == 1 {
                        gather_row_unit(src, dst, kx);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - 1;
                            *d = if ix < 0 || ix >= s.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds an im2col matrix back into input-gradient planes.
fn col2im<T: Element>(cols: &[T], g: &ConvGeometry, n: usize, c0: usize, r0: usize, r1: usize, dx: &mut [T]) {
    let s = g.input;
    let wo = g.output().w;
    let ncols = (r1 - r0) * wo;
    for ci in 0..g.cin_per_group() {
        let base = s.index(n, c0 + ci, 0, 0);
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((ci * KERNEL + ky) * KERNEL + kx) * ncols..][..ncols];
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst = &mut dx[base + iy as usize * s.w..][..s.w];
                    let src = &row[(oy - r0) * wo..][..wo];
                    if g.stride == 1 {
                        scatter_row_unit(src, dst, kx);
                    } else {
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - 1;
                            if ix >= 0 && ix < s.w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3×3 cross-correlation with zero padding 1, stride 1 or 2, grouped.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, bias, stride, groups)?;
    let out_shape = g.output();
    let (ho, wo) = (out_shape.h, out_shape.w);
    let hw = ho * wo;
    let k = g.patch_len();
    let cog = g.cout_per_group();

    let mut out = vec![T::zero(); out_shape.len()];
    for n in 0..out_shape.n {
        for co in 0..g.cout {
            let b = bias.data()[co];
            out[out_shape.index(n, co, 0, 0)..][..hw].fill(b);
        }
    }

    let band = g.band_rows();
    let mut cols = vec![T::zero(); k * band.min(ho) * wo];
    let x = input.data();
    let wdata = weight.data();
    for n in 0..out_shape.n {
        for grp in 0..g.groups {
            let mut r0 = 0;
            while r0 < ho {
                let r1 = (r0 + band).min(ho);
                let ncols = (r1 - r0) * wo;
                im2col(x, &g, n, grp * g.cin_per_group(), r0, r1, &mut cols[..k * ncols]);
                let c_off = out_shape.index(n, grp * cog, r0, 0);
                // SAFETY: A is cog×k inside the weight buffer, B is k×ncols inside
                // `cols`, C addresses cog rows of `out` with row stride hw.
                unsafe {
                    T::gemm(
                        cog,
                        k,
                        ncols,
                        T::one(),
                        wdata.as_ptr().add(grp * cog * k),
                        k as isize,
                        1,
                        cols.as_ptr(),
                        ncols as isize,
                        1,
                        T::one(),
                        out.as_mut_ptr().add(c_off),
                        hw as isize,
                        1,
                    );
                }
                r0 = r1;
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub struct ConvGrads<T: Element> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    groups: usize,
    grad_out: &[T],
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(input, weight, bias, stride, groups)?;
    let out_shape = g.output();
    if grad_out.len() != out_shape.len() {
        return Err(Error::shape("conv2d_backward", "upstream gradient length"));
    }
    let (ho, wo) = (out_shape.h, out_shape.w);
    let hw = ho * wo;
    let k = g.patch_len();
    let cog = g.cout_per_group();

    let mut dbias = vec![T::zero(); g.cout];
    for n in 0..out_shape.n {
        for (co, db) in dbias.iter_mut().enumerate() {
            *db += grad_out[out_shape.index(n, co, 0, 0)..][..hw]
                .iter()
                .copied()
                .sum::<T>();
        }
    }

    let mut dweight = vec![T::zero(); weight.len()];
    let mut dinput = want_input.then(|| vec![T::zero(); input.len()]);
    let band = g.band_rows();
    let mut cols = vec![T::zero(); k * band.min(ho) * wo];
    let mut dcols = if want_input {
        vec![T::zero(); k * band.min(ho) * wo]
    } else {
        Vec::new()
    };
    let x = input.data();
    let wdata = weight.data();
    for n in 0..out_shape.n {
        for grp in 0..g.groups {
            let c0 = grp * g.cin_per_group();
            let mut r0 = 0;
            while r0 < ho {
                let r1 = (r0 + band).min(ho);
                let ncols = (r1 - r0) * wo;
                im2col(x, &g, n, c0, r0, r1, &mut cols[..k * ncols]);
                let go = out_shape.index(n, grp * cog, r0, 0);
                // SAFETY: dOut band is cog×ncols with row stride hw; cols^T is
                // ncols×k (row stride 1, column stride ncols); dW block is cog×k.
                unsafe {
                    T::gemm(
                        cog,
                        ncols,
                        k,
                        T::one(),
                        grad_out.as_ptr().add(go),
                        hw as isize,
                        1,
                        cols.as_ptr(),
                        1,
                        ncols as isize,
                        T::one(),
                        dweight.as_mut_ptr().add(grp * cog * k),
                        k as isize,
                        1,
                    );
                }
                if let Some(dx) = dinput.as_mut() {
                    // SAFETY: W^T is k×cog (row stride 1, column stride k);
                    // dcols is k×ncols.
                    unsafe {
                        T::gemm(
                            k,
                            cog,
                            ncols,
                            T::one(),
                            wdata.as_ptr().add(grp * cog * k),
                            1,
                            k as isize,
                            grad_out.as_ptr().add(go),
                            hw as isize,
                            1,
                            T::zero(),
                            dcols.as_mut_ptr(),
                            ncols as isize,
                            1,
                        );
                    }
                    col2im(&dcols[..k * ncols], &g, n, c0, r0, r1, dx);
                }
                r0 = r1;
            }
        }
    }
    Ok(ConvGrads {
        input: dinput.map(|d| Tensor::from_vec(input.shape(), d)).transpose()?,
        weight: Tensor::from_vec(weight.shape(), dweight)?,
        bias: Tensor::from_vec(bias.shape(), dbias)?,
    })
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of relu, expressed through its output (`y > 0` iff `x > 0`).
pub fn relu_backward<T: Element>(output: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    output
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect()
}

pub fn leaky_relu<T: Element>(x: &Tensor<T>, alpha: f64) -> Tensor<T> {
    let a = T::from_f64(alpha);
    x.map(|v| if v >= T::zero() { v } else { a * v })
}

/// Slope 1 on `x > 0`, `alpha` on `x <= 0`.
pub fn leaky_relu_backward<T: Element>(input: &Tensor<T>, alpha: f64, grad_out: &[T]) -> Vec<T> {
    let a = T::from_f64(alpha);
    input
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > T::zero() { g } else { a * g })
        .collect()
}

/// `out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w]`.
pub fn pixel_shuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("channel count C={} not divisible by r^2={}", s.c, r * r),
        ));
    }
    let out = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    let src = x.data();
    let mut data = vec![T::zero(); out.len()];
    for n in 0..s.n {
        for c in 0..out.c {
            for i in 0..r {
                for j in 0..r {
                    let plane = &src[s.index(n, c * r * r + i * r + j, 0, 0)..][..s.plane()];
                    for h in 0..s.h {
                        let dst = out.index(n, c, h * r + i, 0);
                        for w in 0..s.w {
                            data[dst + w * r + j] = plane[h * s.w + w];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(out, data)
}

/// Exact inverse of [`pixel_shuffle`]; also its gradient.
pub fn pixel_unshuffle<T: Element>(y: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = y.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial size {}x{} not divisible by r={r}", s.h, s.w),
        ));
    }
    let out = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let src = y.data();
    let mut data = vec![T::zero(); out.len()];
    for n in 0..out.n {
        for c in 0..s.c {
            for i in 0..r {
                for j in 0..r {
                    let base = out.index(n, c * r * r + i * r + j, 0, 0);
                    for h in 0..out.h {
                        let row = s.index(n, c, h * r + i, 0);
                        for w in 0..out.w {
                            data[base + h * out.w + w] = src[row + w * r + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(out, data)
}

pub fn upsample_nearest_2x<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let out = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    let src = x.data();
    let mut data = Vec::with_capacity(out.len());
    for plane in src.chunks_exact(s.plane()) {
        for row in plane.chunks_exact(s.w) {
            let start = data.len();
            for &v in row {
                data.push(v);
                data.push(v);
            }
            data.extend_from_within(start..start + 2 * s.w);
        }
    }
    Tensor::from_vec(out, data).expect("upsample shape")
}

/// Sums each 2×2 block of the upstream gradient.
pub fn upsample_nearest_2x_backward<T: Element>(input: Shape, grad_out: &[T]) -> Vec<T> {
    let wo = input.w * 2;
    let mut dx = vec![T::zero(); input.len()];
    for (p, plane) in dx.chunks_exact_mut(input.plane()).enumerate() {
        let g = &grad_out[p * input.plane() * 4..][..input.plane() * 4];
        for h in 0..input.h {
            let r0 = &g[2 * h * wo..][..wo];
            let r1 = &g[(2 * h + 1) * wo..][..wo];
            for w in 0..input.w {
                plane[h * input.w + w] = r0[2 * w] + r0[2 * w + 1] + r1[2 * w] + r1[2 * w + 1];
            }
        }
    }
    dx
}

/// Stacks tensors along the channel axis in argument order.
pub fn concat_channels<T: Element>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Empty("concat of zero tensors".into()))?
        .shape();
    let mut c_total = 0;
    for t in inputs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape("concat_channels", describe_mismatch(first, s)));
        }
        c_total += s.c;
    }
    let out = Shape::new(first.n, c_total, first.h, first.w);
    let mut data = Vec::with_capacity(out.len());
    for n in 0..first.n {
        for t in inputs {
            let per = t.shape().c * first.plane();
            data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(out, data)
}

/// Splits a concatenated gradient back into per-input chunks.
pub fn split_channels<T: Element>(grad: &[T], out: Shape, channels: &[usize]) -> Vec<Vec<T>> {
    let plane = out.plane();
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(out.n * c * plane))
        .collect();
    let mut offset = 0;
    for _ in 0..out.n {
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad[offset..offset + c * plane]);
            offset += c * plane;
        }
    }
    parts
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.ensure_same_shape(b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Mean of squared differences, accumulated in a fixed sequential order.
pub fn mse<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    pred.ensure_same_shape(target, "mse_loss")?;
    let mut acc = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = (p - t).as_f64();
        acc += d * d;
    }
    Ok(T::from_f64(acc / pred.len() as f64))
}
