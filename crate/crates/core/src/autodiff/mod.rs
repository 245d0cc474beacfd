//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied during a forward pass, in
//! execution order, so it is topologically sorted by construction.
//! [`Tape::backward`] replays it in reverse, summing the gradient
//! contributions of every consumer of a node (the fan-out created by dense
//! concatenation relies on this).

pub mod gradcheck;

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::ops::{self, Activation, BatchNormConfig, Mode};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<E: Element> {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: NodeId,
        k: usize,
        stride: usize,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Tensor<E>,
        inv_std: Vec<E>,
        mode: Mode,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    },
    Activation {
        input: NodeId,
        kind: Activation,
    },
    Softmax {
        input: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor<E>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: E,
    },
    Sum {
        input: NodeId,
    },
    Select {
        input: NodeId,
        index: usize,
    },
}

impl<E: Element> Op<E> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "maxpool2d",
            Op::AvgPool { .. } => "avgpool2d",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Concat { .. } => "concat",
            Op::Linear { .. } => "linear",
            Op::Activation { .. } => "activation",
            Op::Softmax { .. } => "softmax",
            Op::Reshape { .. } => "reshape",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Select { .. } => "select",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<E: Element> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<E>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<E>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape<E: Element = f32> {
    nodes: Vec<Node<E>>,
}

/// Updated (running mean, running variance) of a train-mode batch norm.
pub type RunningStats<E> = (Tensor<E>, Tensor<E>);

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn op_kind(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.kind()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds an input or parameter. Gradients are only propagated towards
    /// leaves created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<E>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let out = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            &inputs,
        ))
    }

    pub fn maxpool2d(&mut self, input: NodeId, k: usize, stride: usize, padding: usize) -> Result<NodeId> {
        let out = ops::maxpool2d(self.value(input), k, stride, padding)?;
        Ok(self.push(
            out.output,
            Op::MaxPool {
                input,
                argmax: out.argmax,
            },
            &[input],
        ))
    }

    pub fn avgpool2d(&mut self, input: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let out = ops::avgpool2d(self.value(input), k, stride)?;
        Ok(self.push(out, Op::AvgPool { input, k, stride }, &[input]))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::global_avg_pool(self.value(input))?;
        Ok(self.push(out, Op::GlobalAvgPool { input }, &[input]))
    }

    /// Batch normalization. In train mode the updated running statistics
    /// are returned for the caller to commit.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Tensor<E>,
        running_var: &Tensor<E>,
        mode: Mode,
        config: BatchNormConfig,
    ) -> Result<(NodeId, Option<RunningStats<E>>)> {
        let out = ops::batchnorm2d(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            mode,
            config,
        )?;
        let stats = out.running_mean.zip(out.running_var);
        let id = self.push(
            out.output,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized: out.normalized,
                inv_std: out.inv_std,
                mode,
            },
            &[input, gamma, beta],
        );
        Ok((id, stats))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor<E>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }, parts))
    }

    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let out = ops::linear(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(out, Op::Linear { input, weight, bias }, &inputs))
    }

    pub fn activation(&mut self, kind: Activation, input: NodeId) -> Result<NodeId> {
        let out = ops::activation(kind, self.value(input))?;
        Ok(self.push(out, Op::Activation { input, kind }, &[input]))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.activation(Activation::Relu, input)
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::softmax(self.value(input))?;
        Ok(self.push(out, Op::Softmax { input }, &[input]))
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.value(input).reshape(shape)?;
        Ok(self.push(out, Op::Reshape { input }, &[input]))
    }

    /// Views N×... as N×(product of the rest).
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let shape = self.value(input).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(input, vec![n, rest])
    }

    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (loss, probs) = ops::cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, input: NodeId, factor: E) -> NodeId {
        let out = self.value(input).map(|x| x * factor);
        self.push(out, Op::Scale { input, factor }, &[input])
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::Sum { input }, &[input])
    }

    /// Picks one element (by flat index) as a scalar node.
    pub fn select(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(input);
        if index >= v.numel() {
            return Err(Error::shape(
                "select",
                format!("index {index} out of range for shape {:?}", v.shape()),
            ));
        }
        let out = Tensor::scalar(v.data()[index]);
        Ok(self.push(out, Op::Select { input, index }, &[input]))
    }

    /// Reverse pass from a scalar node. Gradients are kept for leaves only.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<E>> {
        self.backward_retaining(loss, &[])
    }

    /// Reverse pass that additionally keeps the gradients of `retain`.
    pub fn backward_retaining(&self, loss: NodeId, retain: &[NodeId]) -> Result<Gradients<E>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", root.value.shape()),
            ));
        }
        let retain: HashSet<usize> = retain.iter().map(|r| r.0).collect();
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_parts(root.value.shape().to_vec(), vec![E::one()]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                if retain.contains(&i) {
                    grads[i] = Some(g);
                }
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf) || retain.contains(&i) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<E>>], id: NodeId, g: Tensor<E>) {
        if !self.wants(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<E>, g: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let cg = ops::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    g,
                    *stride,
                    *padding,
                    self.wants(*input),
                )?;
                if let Some(dx) = cg.input {
                    self.accumulate(grads, *input, dx);
                }
                self.accumulate(grads, *weight, cg.weight);
                if let Some(b) = bias {
                    self.accumulate(grads, *b, cg.bias);
                }
            }
            Op::MaxPool { input, argmax } => {
                let dx = ops::maxpool2d_backward(self.value(*input).shape(), argmax, g);
                self.accumulate(grads, *input, dx);
            }
            Op::AvgPool { input, k, stride } => {
                let dx = ops::avgpool2d_backward(self.value(*input).shape(), *k, *stride, g)?;
                self.accumulate(grads, *input, dx);
            }
            Op::GlobalAvgPool { input } => {
                let dx = ops::global_avg_pool_backward(self.value(*input).shape(), g);
                self.accumulate(grads, *input, dx);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                mode,
            } => {
                let bg = ops::batchnorm2d_backward(g, normalized, inv_std, self.value(*gamma), *mode)?;
                self.accumulate(grads, *input, bg.input);
                self.accumulate(grads, *gamma, bg.gamma);
                self.accumulate(grads, *beta, bg.beta);
            }
            Op::Concat { parts } => {
                let channels: Vec<usize> = parts.iter().map(|p| self.value(*p).shape()[1]).collect();
                for (p, dg) in parts.iter().zip(ops::split_channels(g, &channels)?) {
                    self.accumulate(grads, *p, dg);
                }
            }
            Op::Linear { input, weight, bias } => {
                let lg = ops::linear_backward(self.value(*input), self.value(*weight), g)?;
                self.accumulate(grads, *input, lg.input);
                self.accumulate(grads, *weight, lg.weight);
                if let Some(b) = bias {
                    self.accumulate(grads, *b, lg.bias);
                }
            }
            Op::Activation { input, kind } => {
                let dx = ops::activation_backward(*kind, self.value(*input), g)?;
                self.accumulate(grads, *input, dx);
            }
            Op::Softmax { input } => {
                let dx = ops::softmax_backward(&node.value, g)?;
                self.accumulate(grads, *input, dx);
            }
            Op::Reshape { input } => {
                let dx = g.reshape(self.value(*input).shape().to_vec())?;
                self.accumulate(grads, *input, dx);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let dx = ops::cross_entropy_backward(probs, labels, g.item()?);
                self.accumulate(grads, *logits, dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul { a, b } => {
                let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                self.accumulate(grads, *input, g.map(|x| x * f));
            }
            Op::Sum { input } => {
                let v = g.item()?;
                let shape = self.value(*input).shape().to_vec();
                let n = shape.iter().product();
                self.accumulate(grads, *input, Tensor::from_parts(shape, vec![v; n]));
            }
            Op::Select { input, index } => {
                let mut dx = self.value(*input).zeros_like();
                dx.data_mut()[*index] = g.item()?;
                self.accumulate(grads, *input, dx);
            }
        }
        Ok(())
    }
}
