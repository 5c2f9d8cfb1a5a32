use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::GradientBuffer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    /// Adam with decoupled weight decay.
    AdamW,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdamW => "adamw",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adamw" => Ok(OptimizerKind::AdamW),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (expected sgd or adamw)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state for one parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    AdamW { lr: f64, params: AdamWParams, m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, adamw: AdamWParams, num_parameters: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::AdamW => Optimizer::AdamW {
                lr,
                params: adamw,
                m: vec![0.0; num_parameters],
                v: vec![0.0; num_parameters],
                t: 0,
            },
        }
    }

    /// One descent step on `params` along `grad`.
    pub fn apply<G: GradientBuffer>(&mut self, params: &mut [f64], grad: &G) {
        match self {
            Optimizer::Sgd { lr } => grad.for_each_entry(|i, g| params[i] -= *lr * g),
            Optimizer::AdamW { lr, params: p, m, v, t } => {
                *t += 1;
                let mut g = vec![0.0; params.len()];
                grad.for_each_entry(|i, x| g[i] = x);
                let c1 = 1.0 - p.beta1.powf(*t as f64);
                let c2 = 1.0 - p.beta2.powf(*t as f64);
                for i in 0..params.len() {
                    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
                    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] -= *lr * (m_hat / (v_hat.sqrt() + p.eps) + p.weight_decay * params[i]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::DenseGradient;

    #[test]
    fn sgd_step() {
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.1, AdamWParams::default(), 2);
        let mut p = vec![1.0, 2.0];
        o.apply(&mut p, &DenseGradient(vec![1.0, -2.0]));
        assert_eq!(p, vec![0.9, 2.2]);
    }

    #[test]
    fn first_adamw_step_moves_by_lr() {
        // With bias correction the first step is lr * sign(g), plus decay.
        let mut o = Optimizer::new(
            OptimizerKind::AdamW,
            0.01,
            AdamWParams {
                weight_decay: 0.0,
                ..AdamWParams::default()
            },
            2,
        );
        let mut p = vec![0.0, 0.0];
        o.apply(&mut p, &DenseGradient(vec![3.0, -0.5]));
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adamw_minimizes_a_quadratic() {
        let mut o = Optimizer::new(OptimizerKind::AdamW, 0.05, AdamWParams::default(), 1);
        let mut p = vec![3.0];
        for _ in 0..500 {
            let g = DenseGradient(vec![2.0 * (p[0] - 1.0)]);
            o.apply(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 0.05, "{}", p[0]);
    }
}
