use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Element-wise activation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum Activation {
    Identity,
    #[default]
    Tanh,
    Sigmoid,
    Softplus,
    /// Slope `alpha` for negative inputs.
    LeakyRelu(f64),
}


impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => f.write_str("identity"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Softplus => f.write_str("softplus"),
            Activation::LeakyRelu(a) => write!(f, "leaky_relu({a})"),
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus_f64(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    /// `|φ'(z)| ≤ 1` everywhere (almost everywhere for the kink of leaky ReLU).
    pub fn is_contractive(&self) -> bool {
        match self {
            Activation::LeakyRelu(a) => a.abs() <= 1.0,
            _ => true,
        }
    }

    /// Upper bound on `|φ'|`.
    pub fn derivative_bound(&self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            Activation::LeakyRelu(a) => a.abs().max(1.0),
            _ => 1.0,
        }
    }

    pub fn apply<T: Scalar>(&self, z: T) -> T {
        match *self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
            Activation::Softplus => T::of(softplus_f64(z.as_f64())),
            Activation::LeakyRelu(a) => {
                if z >= T::zero() {
                    z
                } else {
                    T::of(a) * z
                }
            }
        }
    }

    /// `φ'(z)`. At the kink of leaky ReLU the right derivative is used, which
    /// is what a machine-epsilon perturbation of `z = 0` would see.
    pub fn derivative<T: Scalar>(&self, z: T) -> T {
        match *self {
            Activation::Identity => T::one(),
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::Sigmoid => {
                let s = T::one() / (T::one() + (-z).exp());
                s * (T::one() - s)
            }
            Activation::Softplus => T::one() / (T::one() + (-z).exp()),
            Activation::LeakyRelu(a) => {
                if z >= T::zero() {
                    T::one()
                } else {
                    T::of(a)
                }
            }
        }
    }

    /// `log2 |φ'(z)|`, evaluated in log space so saturating tails stay finite.
    /// Only an exactly-zero slope produces `-∞`.
    pub fn log2_abs_derivative(&self, z: f64) -> f64 {
        let ln = match *self {
            Activation::Identity => 0.0,
            // 1 - tanh² = sech² = (2 / (e^|z| + e^-|z|))²
            Activation::Tanh => {
                let a = z.abs();
                2.0 * (LN_2 - a - (-2.0 * a).exp().ln_1p())
            }
            // σ(z)(1 - σ(z)) = e^-|z| / (1 + e^-|z|)²
            Activation::Sigmoid => {
                let a = z.abs();
                -a - 2.0 * (-a).exp().ln_1p()
            }
            // φ' = σ(z), ln σ(z) = -softplus(-z)
            Activation::Softplus => -softplus_f64(-z),
            Activation::LeakyRelu(a) => {
                if z >= 0.0 {
                    0.0
                } else {
                    a.abs().ln()
                }
            }
        };
        ln / LN_2
    }
}

/// `log2 |det J_φ(z)|` for an element-wise activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianLogDet {
    Finite(f64),
    /// Some coordinate had `φ'(z_i) = 0` exactly; `index` is the first one.
    NegativeInfinity { index: usize },
}

impl JacobianLogDet {
    pub fn value(&self) -> f64 {
        match self {
            JacobianLogDet::Finite(v) => *v,
            JacobianLogDet::NegativeInfinity { .. } => f64::NEG_INFINITY,
        }
    }
}

/// Sum of `log2 |φ'(z_i)|`; the Jacobian of an element-wise map is diagonal.
pub fn jacobian_log_det(activation: &Activation, z: &[f64]) -> JacobianLogDet {
    let mut total = 0.0;
    for (index, &zi) in z.iter().enumerate() {
        let term = activation.log2_abs_derivative(zi);
        if term == f64::NEG_INFINITY {
            return JacobianLogDet::NegativeInfinity { index };
        }
        total += term;
    }
    JacobianLogDet::Finite(total)
}
