//! Slow reference implementations used by the test suites and `selftest`.
//! They share no code with the kernels in [`crate::ops`].

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Direct-loop cross-correlation with zero padding. Accumulates in f64.
pub fn naive_conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let (n, cin, h, w) = input.dims4("naive_conv2d")?;
    let (cout, wc, kh, kw) = weight.dims4("naive_conv2d")?;
    if wc != cin || stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::shape("naive_conv2d", "incompatible configuration"));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = Vec::with_capacity(n * cout * oh * ow);
    for b in 0..n {
        for co in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.map_or(0.0, |t| t.data()[co].as_f64());
                    for ci in 0..cin {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let r = (i * stride + di) as isize - padding as isize;
                                let c = (j * stride + dj) as isize - padding as isize;
                                if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
                                    continue;
                                }
                                acc += input.at4(b, ci, r as usize, c as usize).as_f64()
                                    * weight.at4(co, ci, di, dj).as_f64();
                            }
                        }
                    }
                    out.push(E::from_f64(acc));
                }
            }
        }
    }
    Tensor::new([n, cout, oh, ow], out)
}
