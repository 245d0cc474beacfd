//! 2-D cross-correlation (no kernel flip) with zero padding, lowered to GEMM
//! through a patch matrix. 1×1 stride-1 unpadded convolutions skip the patch
//! matrix and multiply the input planes directly.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new<E: Element>(input: &Tensor<E>, weight: &Tensor<E>, stride: usize, padding: usize) -> Result<Self> {
        let (n, cin, h, w) = input.dims4("conv2d")?;
        let (cout, wcin, kh, kw) = weight.dims4("conv2d")?;
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input has {cin} channels but weight expects {wcin} (weight shape {:?})",
                    weight.shape()
                ),
            ));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {kh}×{kw} larger than padded input {}×{}",
                    h + 2 * padding,
                    w + 2 * padding
                ),
            ));
        }
        Ok(ConvGeometry {
            batch: n,
            in_channels: cin,
            in_h: h,
            in_w: w,
            out_channels: cout,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    /// Rows of the patch matrix.
    fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_image(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    /// Output columns `[lo, hi)` whose input column `ow*stride + kj - pad` is in range.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let (s, p, w) = (self.stride, self.padding, self.in_w);
        let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
        let hi = if w + p > kj { (w + p - kj - 1) / s + 1 } else { 0 };
        (lo.min(self.out_w), hi.min(self.out_w))
    }

    fn im2col<E: Element>(&self, image: &[E], col: &mut [E]) {
        let (ow_n, oh_n) = (self.out_w, self.out_h);
        let plane = self.out_plane();
        let mut row = 0;
        for ci in 0..self.in_channels {
            let chan = &image[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut col[row * plane..(row + 1) * plane];
                    let (lo, hi) = self.valid_cols(kj);
                    for oh in 0..oh_n {
                        let seg = &mut dst[oh * ow_n..(oh + 1) * ow_n];
                        let ih = (oh * self.stride + ki) as isize - self.padding as isize;
                        if ih < 0 || ih as usize >= self.in_h || lo >= hi {
                            seg.fill(E::zero());
                            continue;
                        }
                        let src = &chan[ih as usize * self.in_w..(ih as usize + 1) * self.in_w];
                        seg[..lo].fill(E::zero());
                        seg[hi..].fill(E::zero());
                        let base = lo * self.stride + kj - self.padding;
                        if self.stride == 1 {
                            seg[lo..hi].copy_from_slice(&src[base..base + (hi - lo)]);
                        } else {
                            for (k, ow) in (lo..hi).enumerate() {
                                seg[ow] = src[base + k * self.stride];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im<E: Element>(&self, col: &[E], image: &mut [E]) {
        image.fill(E::zero());
        let ow_n = self.out_w;
        let plane = self.out_plane();
        let mut row = 0;
        for ci in 0..self.in_channels {
            let chan = &mut image[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &col[row * plane..(row + 1) * plane];
                    let (lo, hi) = self.valid_cols(kj);
                    row += 1;
                    if lo >= hi {
                        continue;
                    }
                    for oh in 0..self.out_h {
                        let ih = (oh * self.stride + ki) as isize - self.padding as isize;
                        if ih < 0 || ih as usize >= self.in_h {
                            continue;
                        }
                        let seg = &src[oh * ow_n..(oh + 1) * ow_n];
                        let dst = &mut chan[ih as usize * self.in_w..(ih as usize + 1) * self.in_w];
                        let base = lo * self.stride + kj - self.padding;
                        for (k, ow) in (lo..hi).enumerate() {
                            dst[base + k * self.stride] += seg[ow];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `weight` is Cout×Cin×kh×kw, `bias` (optional) has Cout entries.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let g = ConvGeometry::new(input, weight, stride, padding)?;
    if let Some(b) = bias {
        if b.numel() != g.out_channels {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} entries, expected {}", b.numel(), g.out_channels),
            ));
        }
    }
    let plane = g.out_plane();
    let k = g.patch_len();
    let out_image = g.out_channels * plane;
    let mut out = vec![E::zero(); g.batch * out_image];
    let x = input.data();
    let w = weight.data();
    par::for_each_chunk_mut(&mut out, out_image, |n, dst| {
        let image = &x[n * g.in_image()..(n + 1) * g.in_image()];
        if g.is_pointwise() {
            E::gemm(
                g.out_channels,
                k,
                plane,
                E::one(),
                w,
                false,
                image,
                false,
                E::zero(),
                dst,
            );
        } else {
            let mut col = vec![E::zero(); k * plane];
            g.im2col(image, &mut col);
            E::gemm(
                g.out_channels,
                k,
                plane,
                E::one(),
                w,
                false,
                &col,
                false,
                E::zero(),
                dst,
            );
        }
        if let Some(b) = bias {
            for (co, row) in dst.chunks_mut(plane).enumerate() {
                let bv = b.data()[co];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.batch, g.out_channels, g.out_h, g.out_w], out))
}

#[derive(Debug, Clone)]
pub struct ConvGrads<E: Element> {
    pub input: Option<Tensor<E>>,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

/// Gradients of a convolution given the upstream gradient of its output.
/// The input gradient is only computed when `need_input` is set.
pub fn conv2d_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<ConvGrads<E>> {
    let g = ConvGeometry::new(input, weight, stride, padding)?;
    let expected = [g.batch, g.out_channels, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream gradient {:?}, expected {expected:?}", grad_out.shape()),
        ));
    }
    let plane = g.out_plane();
    let k = g.patch_len();
    let wlen = g.out_channels * k;
    let x = input.data();
    let w = weight.data();
    let dy = grad_out.data();

    let mut grad_bias = vec![E::zero(); g.out_channels];
    for n in 0..g.batch {
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            let off = (n * g.out_channels + co) * plane;
            *gb += dy[off..off + plane].iter().copied().sum::<E>();
        }
    }

    // per-image weight gradients, summed afterwards in batch order
    let mut dw_all = vec![E::zero(); g.batch * wlen];
    let mut dx = if need_input {
        vec![E::zero(); g.batch * g.in_image()]
    } else {
        Vec::new()
    };
    let per_image = |n: usize, dw: &mut [E], dx_n: Option<&mut [E]>| {
        let image = &x[n * g.in_image()..(n + 1) * g.in_image()];
        let dy_n = &dy[n * g.out_channels * plane..(n + 1) * g.out_channels * plane];
        if g.is_pointwise() {
            E::gemm(
                g.out_channels,
                plane,
                k,
                E::one(),
                dy_n,
                false,
                image,
                true,
                E::zero(),
                dw,
            );
            if let Some(dx_n) = dx_n {
                E::gemm(
                    k,
                    g.out_channels,
                    plane,
                    E::one(),
                    w,
                    true,
                    dy_n,
                    false,
                    E::zero(),
                    dx_n,
                );
            }
        } else {
            let mut col = vec![E::zero(); k * plane];
            g.im2col(image, &mut col);
            E::gemm(
                g.out_channels,
                plane,
                k,
                E::one(),
                dy_n,
                false,
                &col,
                true,
                E::zero(),
                dw,
            );
            if let Some(dx_n) = dx_n {
                E::gemm(
                    k,
                    g.out_channels,
                    plane,
                    E::one(),
                    w,
                    true,
                    dy_n,
                    false,
                    E::zero(),
                    &mut col,
                );
                g.col2im(&col, dx_n);
            }
        }
    };
    if need_input {
        par::for_each_chunk_pair_mut(&mut dw_all, wlen, &mut dx, g.in_image(), |n, dw, dx_n| {
            per_image(n, dw, Some(dx_n))
        });
    } else {
        par::for_each_chunk_mut(&mut dw_all, wlen, |n, dw| per_image(n, dw, None));
    }
    let mut grad_w = vec![E::zero(); wlen];
    for chunk in dw_all.chunks(wlen) {
        for (a, &b) in grad_w.iter_mut().zip(chunk) {
            *a += b;
        }
    }

    Ok(ConvGrads {
        input: need_input.then(|| Tensor::from_parts(input.shape().to_vec(), dx)),
        weight: Tensor::from_parts(weight.shape().to_vec(), grad_w),
        bias: Tensor::from_parts(vec![g.out_channels], grad_bias),
    })
}
