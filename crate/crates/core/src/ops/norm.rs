use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormOutput<E: Element> {
    pub output: Tensor<E>,
    /// Standardized input before the affine map; kept for the backward pass.
    pub normalized: Tensor<E>,
    pub inv_std: Vec<E>,
    /// Updated running statistics (train mode only).
    pub running_mean: Option<Tensor<E>>,
    pub running_var: Option<Tensor<E>>,
}

fn check_len<E: Element>(name: &str, t: &Tensor<E>, c: usize) -> Result<()> {
    if t.numel() != c {
        return Err(Error::shape(
            "batchnorm2d",
            format!("{name} has {} entries, input has {c} channels", t.numel()),
        ));
    }
    Ok(())
}

/// Per-channel batch normalization over N×H×W.
///
/// Train mode standardizes with the biased batch variance and blends the
/// unbiased variance into the running estimate with weight `momentum`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<E: Element>(
    input: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    mode: Mode,
    config: BatchNormConfig,
) -> Result<BatchNormOutput<E>> {
    let (n, c, h, w) = input.dims4("batchnorm2d")?;
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        check_len(name, t, c)?;
    }
    if config.epsilon.is_nan() || config.epsilon <= 0.0 {
        return Err(Error::invalid("batchnorm2d: epsilon must be positive"));
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();

    let (mean, var, new_stats) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::invalid(
                    "batchnorm2d: train mode needs a batch of at least 2 samples",
                ));
            }
            let stats = par::map_indices(c, |ch| {
                let mut sum = 0.0f64;
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    sum += x[off..off + plane].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    sq += x[off..off + plane]
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                (mean, sq / count as f64)
            });
            let m = config.momentum;
            let unbias = count as f64 / (count as f64 - 1.0);
            let rm = Tensor::from_parts(
                vec![c],
                stats
                    .iter()
                    .zip(running_mean.data())
                    .map(|(&(mu, _), &r)| E::from_f64((1.0 - m) * r.as_f64() + m * mu))
                    .collect(),
            );
            let rv = Tensor::from_parts(
                vec![c],
                stats
                    .iter()
                    .zip(running_var.data())
                    .map(|(&(_, v), &r)| E::from_f64((1.0 - m) * r.as_f64() + m * v * unbias))
                    .collect(),
            );
            let (mean, var) = stats.into_iter().unzip::<_, _, Vec<_>, Vec<_>>();
            (mean, var, Some((rm, rv)))
        }
        Mode::Eval => {
            if let Some(bad) = running_var.data().iter().position(|v| *v < E::zero()) {
                return Err(Error::invalid(format!(
                    "batchnorm2d: running variance of channel {bad} is negative"
                )));
            }
            (
                running_mean.data().iter().map(|v| v.as_f64()).collect(),
                running_var.data().iter().map(|v| v.as_f64()).collect(),
                None,
            )
        }
    };

    let inv_std: Vec<E> = var
        .iter()
        .map(|&v| E::from_f64(1.0 / (v + config.epsilon).sqrt()))
        .collect();
    let mean: Vec<E> = mean.into_iter().map(E::from_f64).collect();
    let mut out = vec![E::zero(); x.len()];
    let mut xhat = vec![E::zero(); x.len()];
    let (g, b) = (gamma.data(), beta.data());
    par::for_each_chunk_pair_mut(&mut out, plane, &mut xhat, plane, |p, dst, nrm| {
        let ch = p % c;
        let src = &x[p * plane..(p + 1) * plane];
        for ((o, z), &v) in dst.iter_mut().zip(nrm.iter_mut()).zip(src) {
            *z = (v - mean[ch]) * inv_std[ch];
            *o = g[ch] * *z + b[ch];
        }
    });
    let shape = input.shape().to_vec();
    let (running_mean, running_var) = match new_stats {
        Some((rm, rv)) => (Some(rm), Some(rv)),
        None => (None, None),
    };
    Ok(BatchNormOutput {
        output: Tensor::from_parts(shape.clone(), out),
        normalized: Tensor::from_parts(shape, xhat),
        inv_std,
        running_mean,
        running_var,
    })
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<E: Element> {
    pub input: Tensor<E>,
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
}

pub fn batchnorm2d_backward<E: Element>(
    grad_out: &Tensor<E>,
    normalized: &Tensor<E>,
    inv_std: &[E],
    gamma: &Tensor<E>,
    mode: Mode,
) -> Result<BatchNormGrads<E>> {
    let (n, c, h, w) = grad_out.dims4("batchnorm2d_backward")?;
    if normalized.shape() != grad_out.shape() {
        return Err(Error::shape(
            "batchnorm2d_backward",
            "gradient/activation shape mismatch",
        ));
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let dy = grad_out.data();
    let xh = normalized.data();
    let sums = par::map_indices(c, |ch| {
        let (mut sdy, mut sdyx) = (0.0f64, 0.0f64);
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let g = dy[i].as_f64();
                sdy += g;
                sdyx += g * xh[i].as_f64();
            }
        }
        (sdy, sdyx)
    });
    let gm = gamma.data();
    let mut dx = vec![E::zero(); dy.len()];
    par::for_each_chunk_mut(&mut dx, plane, |p, dst| {
        let ch = p % c;
        let off = p * plane;
        let scale = gm[ch] * inv_std[ch];
        match mode {
            Mode::Train => {
                let mean_dy = E::from_f64(sums[ch].0 / count);
                let mean_dyx = E::from_f64(sums[ch].1 / count);
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = scale * (dy[off + i] - mean_dy - xh[off + i] * mean_dyx);
                }
            }
            Mode::Eval => {
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = scale * dy[off + i];
                }
            }
        }
    });
    Ok(BatchNormGrads {
        input: Tensor::from_parts(grad_out.shape().to_vec(), dx),
        gamma: Tensor::from_parts(vec![c], sums.iter().map(|s| E::from_f64(s.1)).collect()),
        beta: Tensor::from_parts(vec![c], sums.iter().map(|s| E::from_f64(s.0)).collect()),
    })
}
