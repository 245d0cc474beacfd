//! Forward kernels and their adjoints. Everything here is a pure function of
//! its tensor arguments; the autodiff tape composes them.

pub mod activation;
pub mod conv;
pub mod norm;
pub mod pool;

pub use activation::{activation, activation_backward, sigmoid, softplus, Activation};
pub use conv::{conv2d, conv2d_backward, ConvGeometry, ConvGrads};
pub use norm::{batchnorm2d, batchnorm2d_backward, BatchNormConfig, BatchNormGrads, BatchNormOutput, Mode};
pub use pool::{
    avgpool2d, avgpool2d_backward, global_avg_pool, global_avg_pool_backward, maxpool2d, maxpool2d_backward,
    MaxPoolOutput,
};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Concatenates N×Ci×H×W tensors along the channel axis, in argument order.
pub fn concat_channels<E: Element>(parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels: no parts"))?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut total = 0;
    for (i, p) in parts.iter().enumerate() {
        let (pn, pc, ph, pw) = p.dims4("concat_channels")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("part {i} is {pn}×{pc}×{ph}×{pw}, expected batch {n} and spatial {h}×{w}"),
            ));
        }
        total += pc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for p in parts {
            let len = p.shape()[1] * plane;
            out.extend_from_slice(&p.data()[b * len..(b + 1) * len]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total, h, w], out))
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn split_channels<E: Element>(grad: &Tensor<E>, channels: &[usize]) -> Result<Vec<Tensor<E>>> {
    let (n, c, h, w) = grad.dims4("split_channels")?;
    if channels.iter().sum::<usize>() != c {
        return Err(Error::shape(
            "split_channels",
            format!("part channels {channels:?} do not sum to {c}"),
        ));
    }
    let plane = h * w;
    let g = grad.data();
    let mut offset = 0;
    let mut parts = Vec::with_capacity(channels.len());
    for &pc in channels {
        let mut data = Vec::with_capacity(n * pc * plane);
        for b in 0..n {
            let start = (b * c + offset) * plane;
            data.extend_from_slice(&g[start..start + pc * plane]);
        }
        parts.push(Tensor::from_parts(vec![n, pc, h, w], data));
        offset += pc;
    }
    Ok(parts)
}

/// `output[n, k] = sum_f input[n, f] * weight[k, f] + bias[k]`.
pub fn linear<E: Element>(input: &Tensor<E>, weight: &Tensor<E>, bias: Option<&Tensor<E>>) -> Result<Tensor<E>> {
    let (n, f) = input.dims2("linear")?;
    let (k, wf) = weight.dims2("linear")?;
    if f != wf {
        return Err(Error::shape(
            "linear",
            format!("input has {f} features, weight is {k}×{wf}"),
        ));
    }
    let mut out = vec![E::zero(); n * k];
    if let Some(b) = bias {
        if b.numel() != k {
            return Err(Error::shape(
                "linear",
                format!("bias has {} entries, expected {k}", b.numel()),
            ));
        }
        for row in out.chunks_mut(k) {
            row.copy_from_slice(b.data());
        }
    }
    E::gemm(
        n,
        f,
        k,
        E::one(),
        input.data(),
        false,
        weight.data(),
        true,
        E::one(),
        &mut out,
    );
    Ok(Tensor::from_parts(vec![n, k], out))
}

#[derive(Debug, Clone)]
pub struct LinearGrads<E: Element> {
    pub input: Tensor<E>,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

pub fn linear_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> Result<LinearGrads<E>> {
    let (n, f) = input.dims2("linear_backward")?;
    let (k, _) = weight.dims2("linear_backward")?;
    if grad_out.shape() != [n, k] {
        return Err(Error::shape("linear_backward", "upstream gradient shape"));
    }
    let mut dx = vec![E::zero(); n * f];
    E::gemm(
        n,
        k,
        f,
        E::one(),
        grad_out.data(),
        false,
        weight.data(),
        false,
        E::zero(),
        &mut dx,
    );
    let mut dw = vec![E::zero(); k * f];
    E::gemm(
        k,
        n,
        f,
        E::one(),
        grad_out.data(),
        true,
        input.data(),
        false,
        E::zero(),
        &mut dw,
    );
    let mut db = vec![E::zero(); k];
    for row in grad_out.data().chunks(k) {
        for (a, &b) in db.iter_mut().zip(row) {
            *a += b;
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_parts(vec![n, f], dx),
        weight: Tensor::from_parts(vec![k, f], dw),
        bias: Tensor::from_parts(vec![k], db),
    })
}

/// Row-wise softmax of an N×K matrix, computed after subtracting the row max.
pub fn softmax<E: Element>(input: &Tensor<E>) -> Result<Tensor<E>> {
    let (_, k) = input.dims2("softmax")?;
    if k < 2 {
        return Err(Error::shape("softmax", "need at least two classes"));
    }
    let mut out = input.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(E::neg_infinity(), E::max);
        let mut total = E::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

/// Given softmax output `y` and upstream `dy`: `dx = y * (dy - <dy, y>)` per row.
pub fn softmax_backward<E: Element>(output: &Tensor<E>, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    let (_, k) = output.dims2("softmax_backward")?;
    let mut dx = vec![E::zero(); output.numel()];
    for ((d, y), g) in dx
        .chunks_mut(k)
        .zip(output.data().chunks(k))
        .zip(grad_out.data().chunks(k))
    {
        let dot: E = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
        for i in 0..k {
            d[i] = y[i] * (g[i] - dot);
        }
    }
    Ok(Tensor::from_parts(output.shape().to_vec(), dx))
}

/// Mean softmax cross-entropy; also returns the class probabilities.
pub fn cross_entropy<E: Element>(logits: &Tensor<E>, labels: &[usize]) -> Result<(E, Tensor<E>)> {
    let (n, k) = logits.dims2("cross_entropy")?;
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for a batch of {n}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "cross_entropy: label {bad} out of range for {k} classes"
        )));
    }
    let mut loss = 0.0f64;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(E::neg_infinity(), E::max).as_f64();
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        loss += lse - row[label].as_f64();
    }
    Ok((E::from_f64(loss / n as f64), softmax(logits)?))
}

pub fn cross_entropy_backward<E: Element>(probs: &Tensor<E>, labels: &[usize], upstream: E) -> Tensor<E> {
    let k = probs.shape()[1];
    let scale = upstream / E::from_f64(labels.len() as f64);
    let mut dx = probs.data().to_vec();
    for (row, &label) in dx.chunks_mut(k).zip(labels) {
        row[label] -= E::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Tensor::from_parts(probs.shape().to_vec(), dx)
}
