use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Element, Tensor};

fn pooled_extent(op: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::invalid(format!("{op}: window and stride must be positive")));
    }
    if k > size + 2 * pad {
        return Err(Error::shape(
            op,
            format!("window {k} larger than input extent {size} (padding {pad})"),
        ));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

/// Max-pooling output together with the flat input index each output was taken from.
#[derive(Debug, Clone)]
pub struct MaxPoolOutput<E: Element> {
    pub output: Tensor<E>,
    pub argmax: Vec<usize>,
}

/// Max pooling over `k×k` windows. Padded positions never win. Ties resolve
/// to the first position in row-major window order.
pub fn maxpool2d<E: Element>(input: &Tensor<E>, k: usize, stride: usize, padding: usize) -> Result<MaxPoolOutput<E>> {
    let (n, c, h, w) = input.dims4("maxpool2d")?;
    if 2 * padding > k {
        return Err(Error::invalid(format!(
            "maxpool2d: padding {padding} exceeds half the window {k}"
        )));
    }
    let oh = pooled_extent("maxpool2d", h, k, stride, padding)?;
    let ow = pooled_extent("maxpool2d", w, k, stride, padding)?;
    let x = input.data();
    let out_plane = oh * ow;
    let mut out = vec![E::zero(); n * c * out_plane];
    let mut arg = vec![0usize; n * c * out_plane];
    par::for_each_chunk_pair_mut(&mut out, out_plane, &mut arg, out_plane, |p, dst, idx| {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = E::neg_infinity();
                let mut best_at = usize::MAX;
                for di in 0..k {
                    let r = (i * stride + di) as isize - padding as isize;
                    if r < 0 || r as usize >= h {
                        continue;
                    }
                    for dj in 0..k {
                        let col = (j * stride + dj) as isize - padding as isize;
                        if col < 0 || col as usize >= w {
                            continue;
                        }
                        let at = base + r as usize * w + col as usize;
                        if best_at == usize::MAX || x[at] > best {
                            best = x[at];
                            best_at = at;
                        }
                    }
                }
                dst[i * ow + j] = best;
                idx[i * ow + j] = best_at;
            }
        }
    });
    Ok(MaxPoolOutput {
        output: Tensor::from_parts(vec![n, c, oh, ow], out),
        argmax: arg,
    })
}

pub fn maxpool2d_backward<E: Element>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<E>) -> Tensor<E> {
    let mut dx = vec![E::zero(); input_shape.iter().product()];
    for (&at, &g) in argmax.iter().zip(grad_out.data()) {
        dx[at] += g;
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Mean over `k×k` windows without padding.
pub fn avgpool2d<E: Element>(input: &Tensor<E>, k: usize, stride: usize) -> Result<Tensor<E>> {
    let (n, c, h, w) = input.dims4("avgpool2d")?;
    let oh = pooled_extent("avgpool2d", h, k, stride, 0)?;
    let ow = pooled_extent("avgpool2d", w, k, stride, 0)?;
    let x = input.data();
    let scale = E::one() / E::from_f64((k * k) as f64);
    let mut out = vec![E::zero(); n * c * oh * ow];
    par::for_each_chunk_mut(&mut out, oh * ow, |p, dst| {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = E::zero();
                for di in 0..k {
                    let row = &plane[(i * stride + di) * w + j * stride..];
                    for &v in &row[..k] {
                        acc += v;
                    }
                }
                dst[i * ow + j] = acc * scale;
            }
        }
    });
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

pub fn avgpool2d_backward<E: Element>(
    input_shape: &[usize],
    k: usize,
    stride: usize,
    grad_out: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::shape("avgpool2d_backward", "expected rank-4 input")),
    };
    let (_, _, oh, ow) = grad_out.dims4("avgpool2d_backward")?;
    let scale = E::one() / E::from_f64((k * k) as f64);
    let dy = grad_out.data();
    let mut dx = vec![E::zero(); n * c * h * w];
    par::for_each_chunk_mut(&mut dx, h * w, |p, plane| {
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let v = g[i * ow + j] * scale;
                for di in 0..k {
                    let row = &mut plane[(i * stride + di) * w + j * stride..];
                    for x in &mut row[..k] {
                        *x += v;
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}

/// Averages each H×W plane, producing N×C×1×1.
pub fn global_avg_pool<E: Element>(input: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = input.dims4("global_avg_pool")?;
    let plane = h * w;
    let inv = E::one() / E::from_f64(plane as f64);
    let out = input
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<E>() * inv)
        .collect();
    Ok(Tensor::from_parts(vec![n, c, 1, 1], out))
}

pub fn global_avg_pool_backward<E: Element>(input_shape: &[usize], grad_out: &Tensor<E>) -> Tensor<E> {
    let plane: usize = input_shape[2..].iter().product();
    let inv = E::one() / E::from_f64(plane as f64);
    let mut dx = Vec::with_capacity(input_shape.iter().product());
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}
