use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    /// `x * sigmoid(x)`
    Swish,
    /// `x * tanh(softplus(x))`
    Mish,
    /// `ln(1 + e^x)`
    Softplus,
    /// `x` for `x >= 0`, `alpha * (e^x - 1)` otherwise.
    Elu(f64),
}

impl Activation {
    pub fn validate(self) -> Result<Self> {
        match self {
            Activation::Elu(a) if a.is_nan() || a <= 0.0 => {
                Err(Error::invalid(format!("elu alpha must be positive, got {a}")))
            }
            other => Ok(other),
        }
    }

    /// Whether the derivative has a jump somewhere on the real line.
    pub fn is_kinked(self) -> bool {
        match self {
            Activation::Relu => true,
            Activation::Elu(a) => a != 1.0,
            _ => false,
        }
    }

    pub fn apply<E: Element>(self, x: E) -> E {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > E::zero() {
                    x
                } else {
                    E::zero()
                }
            }
            Activation::Swish => x * sigmoid(x),
            Activation::Mish => x * softplus(x).tanh(),
            Activation::Softplus => softplus(x),
            Activation::Elu(alpha) => {
                if x >= E::zero() {
                    x
                } else {
                    E::from_f64(alpha) * x.exp_m1()
                }
            }
        }
    }

    /// Derivative at `x`.
    pub fn derivative<E: Element>(self, x: E) -> E {
        let one = E::one();
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (one - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                one - t * t
            }
            Activation::Relu => {
                if x > E::zero() {
                    one
                } else {
                    E::zero()
                }
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (one - s)
            }
            Activation::Mish => {
                let t = softplus(x).tanh();
                t + x * (one - t * t) * sigmoid(x)
            }
            Activation::Softplus => sigmoid(x),
            Activation::Elu(alpha) => {
                if x >= E::zero() {
                    one
                } else {
                    E::from_f64(alpha) * x.exp()
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Relu => f.write_str("relu"),
            Activation::Swish => f.write_str("swish"),
            Activation::Mish => f.write_str("mish"),
            Activation::Softplus => f.write_str("softplus"),
            Activation::Elu(a) => write!(f, "elu({a})"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let act = match s {
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "swish" => Activation::Swish,
            "mish" => Activation::Mish,
            "softplus" => Activation::Softplus,
            "elu" => Activation::Elu(1.0),
            _ => {
                let alpha = s
                    .strip_prefix("elu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown activation `{s}`")))?;
                Activation::Elu(alpha)
            }
        };
        act.validate()
    }
}

/// Overflow-free logistic function.
pub fn sigmoid<E: Element>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

/// `max(x, 0) + ln(1 + e^{-|x|})`, which never overflows.
pub fn softplus<E: Element>(x: E) -> E {
    x.max(E::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn activation<E: Element>(kind: Activation, input: &Tensor<E>) -> Result<Tensor<E>> {
    let kind = kind.validate()?;
    Ok(input.map(|x| kind.apply(x)))
}

pub fn activation_backward<E: Element>(kind: Activation, input: &Tensor<E>, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    input.zip_map(grad_out, |x, g| g * kind.derivative(x))
}
