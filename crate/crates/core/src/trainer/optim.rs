//! First-order optimizers over a flat parameter vector.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{powf, sign, sqrt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
    Lion,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::Lion => "lion",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            "lion" => Ok(OptimizerKind::Lion),
            _ => Err(Error::UnknownOptimizer(s.to_string())),
        }
    }
}

impl TryFrom<String> for OptimizerKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OptimizerKind> for String {
    fn from(k: OptimizerKind) -> String {
        k.as_str().to_string()
    }
}

/// Task family selecting the default hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Vision,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: OptimizerKind,
    pub learning_rate: f64,
    /// SGD uses `betas.0` as its momentum coefficient.
    pub betas: (f64, f64),
    #[serde(default)]
    pub weight_decay: f64,
}

impl OptimizerConfig {
    /// Default hyperparameters per optimizer and task.
    ///
    /// | task   | sgd               | adam / adamw        | lion               |
    /// |--------|-------------------|---------------------|--------------------|
    /// | vision | 3e-2, (0.9,0.999) | 3e-4, (0.9,0.999)   | 3e-4, (0.9,0.99)   |
    /// | text   | 5e-4, (0.9,0.99)  | 3e-6, (0.9,0.99)    | 3e-6, (0.95,0.98)  |
    pub fn defaults(name: OptimizerKind, task: Task) -> Self {
        let (learning_rate, betas) = match (task, name) {
            (Task::Vision, OptimizerKind::Sgd) => (3e-2, (0.9, 0.999)),
            (Task::Vision, OptimizerKind::Adam | OptimizerKind::AdamW) => (3e-4, (0.9, 0.999)),
            (Task::Vision, OptimizerKind::Lion) => (3e-4, (0.9, 0.99)),
            (Task::Text, OptimizerKind::Sgd) => (5e-4, (0.9, 0.99)),
            (Task::Text, OptimizerKind::Adam | OptimizerKind::AdamW) => (3e-6, (0.9, 0.99)),
            (Task::Text, OptimizerKind::Lion) => (3e-6, (0.95, 0.98)),
        };
        let weight_decay = if name == OptimizerKind::AdamW { 0.01 } else { 0.0 };
        Self {
            name,
            learning_rate,
            betas,
            weight_decay,
        }
    }

    pub fn named(name: &str, task: Task) -> Result<Self> {
        Ok(Self::defaults(name.parse()?, task))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        let (b1, b2) = self.betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return Err(Error::InvalidConfig(format!("betas must lie in (0,1), got ({b1}, {b2})")));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

pub trait Optimizer: Send {
    /// Applies one update in place.
    fn step(&mut self, params: &mut [f64], grads: &[f64]);
}

pub fn make_optimizer(cfg: &OptimizerConfig) -> Result<Box<dyn Optimizer>> {
    cfg.validate()?;
    Ok(match cfg.name {
        OptimizerKind::Sgd => Box::new(Sgd {
            lr: cfg.learning_rate,
            momentum: cfg.betas.0,
            weight_decay: cfg.weight_decay,
            velocity: Vec::new(),
        }),
        OptimizerKind::Adam | OptimizerKind::AdamW => Box::new(Adam {
            lr: cfg.learning_rate,
            betas: cfg.betas,
            weight_decay: cfg.weight_decay,
            decoupled: cfg.name == OptimizerKind::AdamW,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }),
        OptimizerKind::Lion => Box::new(Lion {
            lr: cfg.learning_rate,
            betas: cfg.betas,
            weight_decay: cfg.weight_decay,
            m: Vec::new(),
        }),
    })
}

fn ensure(buf: &mut Vec<f64>, len: usize) {
    if buf.len() != len {
        *buf = vec![0.0; len];
    }
}

/// Heavy-ball SGD. The velocity starts at the first gradient, so the first
/// step is exactly `p -= lr * g`.
struct Sgd {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<f64>,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        let first = self.velocity.len() != params.len();
        ensure(&mut self.velocity, params.len());
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let g = g + self.weight_decay * *p;
            *v = if first { g } else { self.momentum * *v + g };
            *p -= self.lr * *v;
        }
    }
}

/// Adam with bias correction; `decoupled` switches weight decay from an L2
/// gradient term to AdamW's direct shrinkage.
struct Adam {
    lr: f64,
    betas: (f64, f64),
    weight_decay: f64,
    decoupled: bool,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        ensure(&mut self.m, params.len());
        ensure(&mut self.v, params.len());
        self.t += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - powf(b1, self.t as f64);
        let c2 = 1.0 - powf(b2, self.t as f64);
        for i in 0..params.len() {
            let mut g = grads[i];
            if self.decoupled {
                params[i] -= self.lr * self.weight_decay * params[i];
            } else {
                g += self.weight_decay * params[i];
            }
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (sqrt(v_hat) + self.eps);
        }
    }
}

/// Sign-momentum update: the step direction is the sign of an interpolation
/// between momentum and gradient; momentum is tracked with a second, slower
/// coefficient.
struct Lion {
    lr: f64,
    betas: (f64, f64),
    weight_decay: f64,
    m: Vec<f64>,
}

impl Optimizer for Lion {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        ensure(&mut self.m, params.len());
        let (b1, b2) = self.betas;
        for ((p, g), m) in params.iter_mut().zip(grads).zip(self.m.iter_mut()) {
            let interp = b1 * *m + (1.0 - b1) * g;
            *p -= self.lr * (sign(interp) + self.weight_decay * *p);
            *m = b2 * *m + (1.0 - b2) * g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(name: OptimizerKind, lr: f64, betas: (f64, f64)) -> OptimizerConfig {
        OptimizerConfig { name, learning_rate: lr, betas, weight_decay: 0.0 }
    }

    #[test]
    fn lion_scalar_step() {
        let mut lion = Lion { lr: 0.1, betas: (0.9, 0.99), weight_decay: 0.0, m: vec![0.0] };
        let mut p = [0.0];
        lion.step(&mut p, &[1.0]);
        assert!((p[0] + 0.1).abs() < 1e-15);
        assert!((lion.m[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn lion_zero_gradient_is_a_no_op() {
        let mut opt = make_optimizer(&cfg(OptimizerKind::Lion, 0.1, (0.9, 0.99))).unwrap();
        let mut p = [0.7, -0.2];
        opt.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, [0.7, -0.2]);
    }

    #[test]
    fn sgd_first_step_is_plain_gradient_descent() {
        let mut opt = make_optimizer(&cfg(OptimizerKind::Sgd, 0.03, (0.9, 0.999))).unwrap();
        let mut p = [1.0, -2.0];
        opt.step(&mut p, &[0.5, -1.0]);
        assert_eq!(p, [1.0 - 0.03 * 0.5, -2.0 + 0.03]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut opt = make_optimizer(&cfg(OptimizerKind::Adam, 1e-3, (0.9, 0.999))).unwrap();
        let mut p = [0.0];
        opt.step(&mut p, &[4.0]);
        assert!((p[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adamw_decays_weights_directly() {
        let mut c = cfg(OptimizerKind::AdamW, 0.1, (0.9, 0.999));
        c.weight_decay = 0.5;
        let mut opt = make_optimizer(&c).unwrap();
        let mut p = [2.0];
        opt.step(&mut p, &[0.0]);
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn names_and_defaults() {
        assert_eq!("AdamW".parse::<OptimizerKind>().unwrap(), OptimizerKind::AdamW);
        assert!(matches!("rmsprop".parse::<OptimizerKind>(), Err(Error::UnknownOptimizer(_))));
        assert!(matches!(OptimizerConfig::named("adagrad", Task::Vision), Err(Error::UnknownOptimizer(_))));
        let lion = OptimizerConfig::defaults(OptimizerKind::Lion, Task::Vision);
        assert_eq!((lion.learning_rate, lion.betas), (3e-4, (0.9, 0.99)));
        let sgd = OptimizerConfig::defaults(OptimizerKind::Sgd, Task::Vision);
        assert_eq!(sgd.learning_rate, 3e-2);
        let text = OptimizerConfig::defaults(OptimizerKind::Lion, Task::Text);
        assert_eq!((text.learning_rate, text.betas), (3e-6, (0.95, 0.98)));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(make_optimizer(&cfg(OptimizerKind::Adam, 0.0, (0.9, 0.999))).is_err());
        assert!(make_optimizer(&cfg(OptimizerKind::Adam, 1e-3, (1.0, 0.999))).is_err());
    }

    /// Every optimizer drives `f(p) = 0.5 * sum(a_i p_i^2)` down over ten
    /// steps after a one-step warm-up.
    #[test]
    fn all_optimizers_descend_a_convex_quadratic() {
        let a = [1.0, 3.0, 0.5];
        let f = |p: &[f64]| 0.5 * p.iter().zip(&a).map(|(x, ai)| ai * x * x).sum::<f64>();
        for (kind, lr) in [
            (OptimizerKind::Sgd, 0.005),
            (OptimizerKind::Adam, 0.05),
            (OptimizerKind::AdamW, 0.05),
            (OptimizerKind::Lion, 0.01),
        ] {
            let mut opt = make_optimizer(&cfg(kind, lr, OptimizerConfig::defaults(kind, Task::Vision).betas)).unwrap();
            let mut p = [1.0, -1.0, 2.0];
            let grad = |p: &[f64]| -> Vec<f64> { p.iter().zip(&a).map(|(x, ai)| ai * x).collect() };
            let g = grad(&p);
            opt.step(&mut p, &g);
            let mut prev = f(&p);
            for _ in 0..10 {
                let g = grad(&p);
                opt.step(&mut p, &g);
                let now = f(&p);
                assert!(now < prev, "{kind:?}: {now} >= {prev}");
                prev = now;
            }
        }
    }
}
