//! Adam and SGD-with-momentum over named parameter sets.
//!
//! Parameters and gradients live in `BTreeMap`s keyed by parameter name, so
//! update order is the lexicographic key order — fixed across runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use crate::tensor::Tensor;

/// Optimizer selection with hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    Sgd {
        lr: f64,
        momentum: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("optimizer: {what}")))
            }
        };
        match *self {
            Self::Adam {
                lr,
                beta1,
                beta2,
                epsilon,
            } => {
                check(lr.is_finite() && lr > 0.0, "lr must be positive")?;
                check((0.0..1.0).contains(&beta1), "beta1 must be in [0, 1)")?;
                check((0.0..1.0).contains(&beta2), "beta2 must be in [0, 1)")?;
                check(epsilon.is_finite() && epsilon > 0.0, "epsilon must be positive")
            }
            Self::Sgd { lr, momentum } => {
                check(lr.is_finite() && lr > 0.0, "lr must be positive")?;
                check((0.0..1.0).contains(&momentum), "momentum must be in [0, 1)")
            }
        }
    }
}

/// Stateful optimizer; `first` holds Adam's first moment or SGD's velocity,
/// `second` Adam's second moment.
#[derive(Clone, Debug)]
pub struct Optimizer<S> {
    kind: OptimizerKind,
    steps: u64,
    first: BTreeMap<String, Tensor<S>>,
    second: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Every gradient must name an existing parameter of
    /// the same shape; parameters without gradients stay untouched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<S>>,
        grads: &BTreeMap<String, Tensor<S>>,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| {
                Error::Shape(format!("gradient for unknown parameter {name}"))
            })?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?} but gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                epsilon,
            } => {
                let (lr, b1, b2, eps) =
                    (real::<S>(lr), real::<S>(beta1), real::<S>(beta2), real::<S>(epsilon));
                let one = S::one();
                let corr1 = one - real::<S>(beta1.to_real().powi(self.steps as i32));
                let corr2 = one - real::<S>(beta2.to_real().powi(self.steps as i32));
                for (name, g) in grads {
                    let p = params.get_mut(name).expect("checked above");
                    let m = self
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self
                        .second
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    for ((pi, mi), (vi, &gi)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(v.data_mut().iter_mut().zip(g.data()))
                    {
                        *mi = b1 * *mi + (one - b1) * gi;
                        *vi = b2 * *vi + (one - b2) * gi * gi;
                        let m_hat = *mi / corr1;
                        let v_hat = *vi / corr2;
                        *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Sgd { lr, momentum } => {
                let (lr, mu) = (real::<S>(lr), real::<S>(momentum));
                for (name, g) in grads {
                    let p = params.get_mut(name).expect("checked above");
                    let vel = self
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    for ((pi, vi), &gi) in
                        p.data_mut().iter_mut().zip(vel.data_mut()).zip(g.data())
                    {
                        *vi = mu * *vi + gi;
                        *pi = *pi - lr * *vi;
                    }
                }
            }
        }
        Ok(())
    }
}
