//! Adam and Adadelta parameter updates.

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use super::tensor::Real;
use super::NnError;

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    /// Zeiler's update; `lr` scales the RMS-ratio step (1.0 recovers the original rule).
    Adadelta { lr: f64, rho: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adadelta() -> Self {
        OptimizerKind::Adadelta {
            lr: 1.0,
            rho: 0.95,
            eps: 1e-6,
        }
    }
}

/// Per-parameter accumulators for one network.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    /// Adam: first moment. Adadelta: running mean of squared gradients.
    first: Vec<Vec<T>>,
    /// Adam: second moment. Adadelta: running mean of squared updates.
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, net: &Network<T>) -> Self {
        let zeros: Vec<Vec<T>> = net
            .params()
            .iter()
            .map(|p| vec![T::zero(); p.len()])
            .collect();
        Optimizer {
            kind,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        let mut params = net.params_mut();
        if params.len() != grads.params.len()
            || params.len() != self.first.len()
            || params
                .iter()
                .zip(&grads.params)
                .zip(&self.first)
                .any(|((p, g), s)| p.len() != g.len() || p.len() != s.len())
        {
            return Err(NnError::ShapeMismatch {
                expected: params.iter().map(|p| p.len()).collect(),
                found: grads.params.iter().map(|g| g.len()).collect(),
            });
        }
        if grads.params.iter().flatten().any(|g| !g.is_finite()) {
            return Err(NnError::NonFinite {
                context: "gradient passed to optimizer".into(),
            });
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.step as i32;
                let c1 = T::lit(1.0 - beta1.powi(t));
                let c2 = T::lit(1.0 - beta2.powi(t));
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let (lr, eps) = (T::lit(lr), T::lit(eps));
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(&grads.params)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = b1 * m[i] + (T::one() - b1) * gi;
                        v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adadelta { lr, rho, eps } => {
                let (rho, eps, lr) = (T::lit(rho), T::lit(eps), T::lit(lr));
                for (((p, g), eg2), edx2) in params
                    .iter_mut()
                    .zip(&grads.params)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for i in 0..p.len() {
                        let gi = g[i];
                        eg2[i] = rho * eg2[i] + (T::one() - rho) * gi * gi;
                        let dx = -((edx2[i] + eps).sqrt() / (eg2[i] + eps).sqrt()) * gi;
                        edx2[i] = rho * edx2[i] + (T::one() - rho) * dx * dx;
                        p[i] = p[i] + lr * dx;
                    }
                }
            }
        }
        Ok(())
    }
}
