//! Central finite-difference checks of the tape's analytic gradients, run in f64.
//!
//! Each case builds a small graph, reduces its output to a scalar through a
//! fixed random projection, and compares every input coordinate's analytic
//! gradient with `(f(x+ε) - f(x-ε)) / 2ε`. The reported error is
//! `max |analytic - numeric| / max(1, |analytic|)`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NodeId, Tape};
use crate::error::Result;
use crate::ops::{Activation, BatchNormConfig, Mode};
use crate::tensor::Tensor;

pub const SMOOTH_TOLERANCE: f64 = 1e-5;
pub const KINKED_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Operation under test together with its input sizes.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckOp {
    Conv2d {
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        size: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        batch: usize,
        features: usize,
        outputs: usize,
    },
    BatchNorm {
        shape: [usize; 4],
        mode: Mode,
    },
    MaxPool {
        shape: [usize; 4],
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        shape: [usize; 4],
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool {
        shape: [usize; 4],
    },
    Concat {
        batch: usize,
        channels: Vec<usize>,
        size: usize,
    },
    Activation {
        kind: Activation,
        len: usize,
    },
    Softmax {
        batch: usize,
        classes: usize,
    },
    CrossEntropy {
        batch: usize,
        classes: usize,
    },
    Mul {
        len: usize,
    },
    /// BN → ReLU → 1×1 conv → BN → ReLU → 3×3 conv, concatenated with its input.
    DenseLayer {
        batch: usize,
        in_channels: usize,
        growth: usize,
        size: usize,
    },
}

impl CheckOp {
    /// Whether the op has derivative discontinuities (inputs are then kept away from them).
    pub fn is_kinked(&self) -> bool {
        match self {
            CheckOp::MaxPool { .. } | CheckOp::DenseLayer { .. } => true,
            CheckOp::Activation { kind, .. } => kind.is_kinked(),
            _ => false,
        }
    }

    pub fn tolerance(&self) -> f64 {
        if self.is_kinked() {
            KINKED_TOLERANCE
        } else {
            SMOOTH_TOLERANCE
        }
    }
}

impl fmt::Display for CheckOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckOp::Conv2d {
                batch,
                in_channels,
                out_channels,
                size,
                kernel,
                stride,
                padding,
            } => write!(
                f,
                "conv2d[{batch}x{in_channels}x{size}x{size} -> {out_channels}, k={kernel} s={stride} p={padding}]"
            ),
            CheckOp::Linear {
                batch,
                features,
                outputs,
            } => {
                write!(f, "linear[{batch}x{features} -> {outputs}]")
            }
            CheckOp::BatchNorm { shape, mode } => write!(f, "batchnorm2d[{shape:?} {mode:?}]"),
            CheckOp::MaxPool {
                shape,
                kernel,
                stride,
                padding,
            } => write!(f, "maxpool2d[{shape:?} k={kernel} s={stride} p={padding}]"),
            CheckOp::AvgPool { shape, kernel, stride } => {
                write!(f, "avgpool2d[{shape:?} k={kernel} s={stride}]")
            }
            CheckOp::GlobalAvgPool { shape } => write!(f, "global_avg_pool[{shape:?}]"),
            CheckOp::Concat { channels, .. } => write!(f, "concat{channels:?}"),
            CheckOp::Activation { kind, .. } => write!(f, "{kind}"),
            CheckOp::Softmax { batch, classes } => write!(f, "softmax[{batch}x{classes}]"),
            CheckOp::CrossEntropy { batch, classes } => write!(f, "cross_entropy[{batch}x{classes}]"),
            CheckOp::Mul { len } => write!(f, "mul[{len}]"),
            CheckOp::DenseLayer {
                in_channels, growth, ..
            } => write!(f, "dense_layer[{in_channels}+{growth}]"),
        }
    }
}

/// A built instance: inputs, a scalar-valued graph over them.
struct Case {
    inputs: Vec<Tensor<f64>>,
    op: CheckOp,
    labels: Vec<usize>,
    projection: Option<Tensor<f64>>,
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
}

/// Values bounded away from zero, for ReLU-family inputs.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let mag = rng.random_range(0.1..1.5);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
    .unwrap()
}

/// Distinct values on a grid with spacing 0.05, so no max-pool window has near ties.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals).unwrap()
}

impl Case {
    fn build(op: &CheckOp, seed: u64) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut labels = Vec::new();
        let inputs = match op {
            CheckOp::Conv2d {
                batch,
                in_channels,
                out_channels,
                size,
                kernel,
                ..
            } => vec![
                uniform(&[*batch, *in_channels, *size, *size], rng),
                uniform(&[*out_channels, *in_channels, *kernel, *kernel], rng),
                uniform(&[*out_channels], rng),
            ],
            CheckOp::Linear {
                batch,
                features,
                outputs,
            } => vec![
                uniform(&[*batch, *features], rng),
                uniform(&[*outputs, *features], rng),
                uniform(&[*outputs], rng),
            ],
            CheckOp::BatchNorm { shape, .. } => {
                let c = shape[1];
                let gamma = Tensor::from_fn([c], |_| rng.random_range(0.5..1.5)).unwrap();
                vec![uniform(shape, rng), gamma, uniform(&[c], rng)]
            }
            CheckOp::MaxPool { shape, .. } => vec![distinct(shape, rng)],
            CheckOp::AvgPool { shape, .. } | CheckOp::GlobalAvgPool { shape } => vec![uniform(shape, rng)],
            CheckOp::Concat { batch, channels, size } => channels
                .iter()
                .map(|&c| uniform(&[*batch, c, *size, *size], rng))
                .collect(),
            CheckOp::Activation { kind, len } => {
                if kind.is_kinked() || *kind == Activation::Elu(1.0) {
                    vec![away_from_zero(&[*len], rng)]
                } else {
                    vec![Tensor::from_fn([*len], |_| rng.random_range(-4.0..4.0)).unwrap()]
                }
            }
            CheckOp::Softmax { batch, classes } => vec![uniform(&[*batch, *classes], rng)],
            CheckOp::CrossEntropy { batch, classes } => {
                labels = (0..*batch).map(|_| rng.random_range(0..*classes)).collect();
                vec![Tensor::from_fn([*batch, *classes], |_| rng.random_range(-3.0..3.0)).unwrap()]
            }
            CheckOp::Mul { len } => vec![uniform(&[*len], rng), uniform(&[*len], rng)],
            CheckOp::DenseLayer {
                batch,
                in_channels,
                growth,
                size,
            } => {
                let mid = 4 * growth;
                vec![
                    uniform(&[*batch, *in_channels, *size, *size], rng),
                    Tensor::from_fn([*in_channels], |_| rng.random_range(0.5..1.5)).unwrap(),
                    uniform(&[*in_channels], rng),
                    uniform(&[mid, *in_channels, 1, 1], rng),
                    Tensor::from_fn([mid], |_| rng.random_range(0.5..1.5)).unwrap(),
                    uniform(&[mid], rng),
                    uniform(&[*growth, mid, 3, 3], rng),
                ]
            }
        };
        let mut case = Case {
            inputs,
            op: op.clone(),
            labels,
            projection: None,
        };
        if !matches!(op, CheckOp::CrossEntropy { .. }) {
            let mut tape = Tape::<f64>::new();
            let ids: Vec<NodeId> = case.inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let out = case.graph(&mut tape, &ids).expect("grad-check graph");
            let shape = tape.value(out).shape().to_vec();
            case.projection = Some(uniform(&shape, rng));
        }
        case
    }

    /// The op itself; returns its (possibly non-scalar) output node.
    fn graph(&self, tape: &mut Tape<f64>, ids: &[NodeId]) -> Result<NodeId> {
        let bn = BatchNormConfig::default();
        match &self.op {
            CheckOp::Conv2d { stride, padding, .. } => tape.conv2d(ids[0], ids[1], Some(ids[2]), *stride, *padding),
            CheckOp::Linear { .. } => tape.linear(ids[0], ids[1], Some(ids[2])),
            CheckOp::BatchNorm { shape, mode } => {
                let c = shape[1];
                let rm = Tensor::from_fn([c], |i| 0.1 * i as f64).unwrap();
                let rv = Tensor::from_fn([c], |i| 0.5 + 0.25 * i as f64).unwrap();
                Ok(tape.batchnorm2d(ids[0], ids[1], ids[2], &rm, &rv, *mode, bn)?.0)
            }
            CheckOp::MaxPool {
                kernel,
                stride,
                padding,
                ..
            } => tape.maxpool2d(ids[0], *kernel, *stride, *padding),
            CheckOp::AvgPool { kernel, stride, .. } => tape.avgpool2d(ids[0], *kernel, *stride),
            CheckOp::GlobalAvgPool { .. } => tape.global_avg_pool(ids[0]),
            CheckOp::Concat { .. } => tape.concat(ids),
            CheckOp::Activation { kind, .. } => tape.activation(*kind, ids[0]),
            CheckOp::Softmax { .. } => tape.softmax(ids[0]),
            CheckOp::CrossEntropy { .. } => tape.cross_entropy(ids[0], &self.labels),
            CheckOp::Mul { .. } => tape.mul(ids[0], ids[1]),
            CheckOp::DenseLayer { .. } => {
                let c = tape.value(ids[0]).shape()[1];
                let mid = tape.value(ids[3]).shape()[0];
                let zeros = |n| Tensor::<f64>::zeros([n]).unwrap();
                let ones = |n| Tensor::<f64>::full([n], 1.0).unwrap();
                let (h, _) = tape.batchnorm2d(ids[0], ids[1], ids[2], &zeros(c), &ones(c), Mode::Train, bn)?;
                let h = tape.relu(h)?;
                let h = tape.conv2d(h, ids[3], None, 1, 0)?;
                let (h, _) = tape.batchnorm2d(h, ids[4], ids[5], &zeros(mid), &ones(mid), Mode::Train, bn)?;
                let h = tape.relu(h)?;
                let h = tape.conv2d(h, ids[6], None, 1, 1)?;
                tape.concat(&[ids[0], h])
            }
        }
    }

    fn loss_node(&self, tape: &mut Tape<f64>, ids: &[NodeId]) -> Result<NodeId> {
        let out = self.graph(tape, ids)?;
        match &self.projection {
            Some(r) => {
                let r = tape.constant(r.clone());
                let weighted = tape.mul(out, r)?;
                Ok(tape.sum(weighted))
            }
            None => Ok(out),
        }
    }

    fn loss(&self, inputs: &[Tensor<f64>]) -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = self.loss_node(&mut tape, &ids)?;
        tape.value(loss).item()
    }

    fn analytic(&self) -> Result<Vec<Tensor<f64>>> {
        let mut tape = Tape::<f64>::new();
        let ids: Vec<NodeId> = self.inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = self.loss_node(&mut tape, &ids)?;
        let grads = tape.backward(loss)?;
        Ok(ids
            .iter()
            .zip(&self.inputs)
            .map(|(&id, t)| grads.get(id).cloned().unwrap_or_else(|| t.zeros_like()))
            .collect())
    }
}

/// Maximum relative error between analytic and central-difference gradients
/// over every coordinate of every input of `op`. Deterministic for a given seed.
pub fn grad_check(op: &CheckOp, epsilon: f64, seed: u64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(crate::error::Error::invalid("grad_check: epsilon must be positive"));
    }
    let case = Case::build(op, seed);
    let analytic = case.analytic()?;
    let mut worst = 0.0f64;
    let mut probe = case.inputs.clone();
    for (k, grad) in analytic.iter().enumerate() {
        for j in 0..probe[k].numel() {
            let orig = probe[k].data()[j];
            probe[k].data_mut()[j] = orig + epsilon;
            let up = case.loss(&probe)?;
            probe[k].data_mut()[j] = orig - epsilon;
            let down = case.loss(&probe)?;
            probe[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = grad.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct GradCheckResult {
    pub op: CheckOp,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// One case per differentiable operation on the tape.
pub fn standard_suite() -> Vec<CheckOp> {
    let mut ops = vec![
        CheckOp::Linear {
            batch: 3,
            features: 5,
            outputs: 4,
        },
        CheckOp::Conv2d {
            batch: 1,
            in_channels: 2,
            out_channels: 3,
            size: 5,
            kernel: 3,
            stride: 1,
            padding: 0,
        },
        CheckOp::Conv2d {
            batch: 2,
            in_channels: 3,
            out_channels: 2,
            size: 6,
            kernel: 3,
            stride: 2,
            padding: 1,
        },
        CheckOp::Conv2d {
            batch: 2,
            in_channels: 4,
            out_channels: 3,
            size: 3,
            kernel: 1,
            stride: 1,
            padding: 0,
        },
        CheckOp::BatchNorm {
            shape: [2, 3, 4, 4],
            mode: Mode::Train,
        },
        CheckOp::BatchNorm {
            shape: [2, 3, 4, 4],
            mode: Mode::Eval,
        },
        CheckOp::MaxPool {
            shape: [2, 2, 6, 6],
            kernel: 2,
            stride: 2,
            padding: 0,
        },
        CheckOp::MaxPool {
            shape: [1, 2, 7, 7],
            kernel: 3,
            stride: 2,
            padding: 1,
        },
        CheckOp::AvgPool {
            shape: [2, 2, 6, 6],
            kernel: 2,
            stride: 2,
        },
        CheckOp::GlobalAvgPool { shape: [2, 3, 4, 5] },
        CheckOp::Concat {
            batch: 2,
            channels: vec![2, 1, 3],
            size: 3,
        },
        CheckOp::Softmax { batch: 3, classes: 4 },
        CheckOp::CrossEntropy { batch: 4, classes: 2 },
        CheckOp::Mul { len: 6 },
        CheckOp::DenseLayer {
            batch: 2,
            in_channels: 3,
            growth: 2,
            size: 4,
        },
    ];
    for kind in [
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
        Activation::Swish,
        Activation::Mish,
        Activation::Softplus,
        Activation::Elu(1.0),
        Activation::Elu(0.5),
    ] {
        ops.push(CheckOp::Activation { kind, len: 32 });
    }
    ops
}

pub fn run_suite(seed: u64) -> Result<Vec<GradCheckResult>> {
    standard_suite()
        .into_iter()
        .map(|op| {
            let err = grad_check(&op, DEFAULT_EPSILON, seed)?;
            Ok(GradCheckResult {
                tolerance: op.tolerance(),
                op,
                max_rel_error: err,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_exact_up_to_rounding() {
        for seed in 0..3 {
            let op = CheckOp::Linear {
                batch: 2,
                features: 3,
                outputs: 2,
            };
            assert!(grad_check(&op, 1e-4, seed).unwrap() < 1e-7);
        }
    }

    #[test]
    fn conv_and_batchnorm_cases() {
        let conv = CheckOp::Conv2d {
            batch: 1,
            in_channels: 2,
            out_channels: 1,
            size: 5,
            kernel: 3,
            stride: 1,
            padding: 0,
        };
        assert!(grad_check(&conv, 1e-4, 7).unwrap() < 1e-5);
        let bn = CheckOp::BatchNorm {
            shape: [2, 3, 4, 4],
            mode: Mode::Train,
        };
        assert!(grad_check(&bn, 1e-4, 7).unwrap() < 1e-4);
    }

    #[test]
    fn deterministic_under_seed() {
        let op = CheckOp::Softmax { batch: 2, classes: 3 };
        assert_eq!(grad_check(&op, 1e-4, 4).unwrap(), grad_check(&op, 1e-4, 4).unwrap());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // perturbing ε far past the curvature scale must show up as error
        let op = CheckOp::Activation {
            kind: Activation::Tanh,
            len: 8,
        };
        assert!(grad_check(&op, 0.5, 1).unwrap() > 1e-3);
        assert!(grad_check(&op, 0.0, 1).is_err());
    }
}
