//! Adversarial query synthesis against the local piracy model.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{atanh, sign, sqrt, tanh};
use crate::nn::Differentiable;
use crate::rng;
use crate::simplex::{argmax, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Pgd,
    Cw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarialConfig {
    pub method: AttackMethod,
    /// L-infinity radius around the clean input.
    pub epsilon: f64,
    /// PGD step size.
    pub alpha: f64,
    /// PGD iterations.
    pub iterations: usize,
    /// CW confidence margin.
    pub kappa: f64,
    /// CW optimizer steps.
    pub steps: usize,
    /// CW Adam learning rate.
    pub step_size: f64,
    /// CW trade-off between distortion and misclassification.
    pub cw_const: f64,
    /// Start PGD from a uniform point in the epsilon-ball.
    pub random_init: bool,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            method: AttackMethod::Pgd,
            epsilon: 4.0 / 255.0,
            alpha: 2.0 / 255.0,
            iterations: 7,
            kappa: 40.0,
            steps: 50,
            step_size: 0.01,
            cw_const: 1.0,
            random_init: false,
        }
    }
}

impl AdversarialConfig {
    pub fn pgd(epsilon: f64, alpha: f64, iterations: usize) -> Self {
        Self {
            epsilon,
            alpha,
            iterations,
            ..Self::default()
        }
    }

    pub fn cw() -> Self {
        Self {
            method: AttackMethod::Cw,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        match self.method {
            AttackMethod::Pgd => {
                if self.iterations == 0 {
                    return Err(Error::InvalidConfig("PGD needs at least one iteration".into()));
                }
                if !(self.alpha > 0.0) {
                    return Err(Error::InvalidConfig("PGD step size must be positive".into()));
                }
            }
            AttackMethod::Cw => {
                if self.steps == 0 || !(self.step_size > 0.0) {
                    return Err(Error::InvalidConfig("CW needs positive steps and step size".into()));
                }
                if !(self.cw_const >= 0.0) || !(self.kappa >= 0.0) {
                    return Err(Error::InvalidConfig("CW constants must be non-negative".into()));
                }
            }
        }
        Ok(())
    }
}

fn check_inputs(inputs: &[f64]) -> Result<()> {
    match inputs.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(Error::NonContinuousInput {
            index,
            value: inputs[index],
        }),
        None => Ok(()),
    }
}

fn resolve_labels(model: &dyn Differentiable, inputs: &[f64], labels: Option<&[usize]>) -> Result<Vec<usize>> {
    let n = inputs.len() / model.input_len();
    match labels {
        Some(l) if l.len() != n => Err(Error::LengthMismatch { left: l.len(), right: n }),
        Some(l) => Ok(l.to_vec()),
        None => Ok(model.logits(inputs).chunks(model.classes()).map(argmax).collect()),
    }
}

fn project(x: &mut [f64], origin: &[f64], epsilon: f64) {
    for (v, o) in x.iter_mut().zip(origin) {
        *v = v.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
    }
}

/// Dispatches on `cfg.method`.
pub fn gen_adversarial(
    model: &dyn Differentiable,
    inputs: &[f64],
    labels: Option<&[usize]>,
    cfg: &AdversarialConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    match cfg.method {
        AttackMethod::Pgd => gen_adversarial_pgd(model, inputs, labels, cfg, seed),
        AttackMethod::Cw => gen_adversarial_cw(model, inputs, labels, cfg),
    }
}

/// Projected gradient ascent on cross-entropy under an L-infinity budget.
///
/// `labels` defaults to the model's own predictions. Output rows stay within
/// `epsilon` of their source and inside `[0, 1]`.
pub fn gen_adversarial_pgd(
    model: &dyn Differentiable,
    inputs: &[f64],
    labels: Option<&[usize]>,
    cfg: &AdversarialConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_inputs(inputs)?;
    let labels = resolve_labels(model, inputs, labels)?;
    let mut x = inputs.to_vec();
    if cfg.random_init {
        let mut rng = rng::seeded(seed);
        for v in x.iter_mut() {
            *v += rng.gen_range(-cfg.epsilon..=cfg.epsilon);
        }
        project(&mut x, inputs, cfg.epsilon);
    }
    for _ in 0..cfg.iterations {
        let grad = model.input_gradient(&x, &mut |i, z| {
            let mut g = softmax(z);
            g[labels[i]] -= 1.0;
            g
        });
        for (v, g) in x.iter_mut().zip(&grad) {
            *v += cfg.alpha * sign(*g);
        }
        project(&mut x, inputs, cfg.epsilon);
    }
    Ok(x)
}

/// Carlini-Wagner L2 attack in the tanh parameterization, optimized with
/// Adam, then clipped to the epsilon-ball. Returns the final iterate.
pub fn gen_adversarial_cw(
    model: &dyn Differentiable,
    inputs: &[f64],
    labels: Option<&[usize]>,
    cfg: &AdversarialConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_inputs(inputs)?;
    let labels = resolve_labels(model, inputs, labels)?;
    let m = model.classes();
    const EDGE: f64 = 1.0 - 1e-6;
    let mut w: Vec<f64> = inputs.iter().map(|v| atanh((2.0 * v - 1.0).clamp(-EDGE, EDGE))).collect();
    let mut mom = vec![0.0; w.len()];
    let mut vel = vec![0.0; w.len()];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let to_x = |w: &[f64]| -> Vec<f64> { w.iter().map(|v| (tanh(*v) + 1.0) / 2.0).collect() };

    for t in 1..=cfg.steps {
        let x = to_x(&w);
        let mut grad = model.input_gradient(&x, &mut |i, z| {
            let target = labels[i];
            let mut other = None;
            for j in 0..m {
                if j != target && other.map_or(true, |o: usize| z[j] > z[o]) {
                    other = Some(j);
                }
            }
            let mut g = vec![0.0; m];
            if let Some(o) = other {
                if z[target] - z[o] > -cfg.kappa {
                    g[target] = cfg.cw_const;
                    g[o] = -cfg.cw_const;
                }
            }
            g
        });
        for (g, (xv, x0)) in grad.iter_mut().zip(x.iter().zip(inputs)) {
            *g += 2.0 * (xv - x0);
        }
        let c1 = 1.0 - libm::pow(b1, t as f64);
        let c2 = 1.0 - libm::pow(b2, t as f64);
        for k in 0..w.len() {
            let th = tanh(w[k]);
            let g = grad[k] * (1.0 - th * th) / 2.0;
            mom[k] = b1 * mom[k] + (1.0 - b1) * g;
            vel[k] = b2 * vel[k] + (1.0 - b2) * g * g;
            w[k] -= cfg.step_size * (mom[k] / c1) / (sqrt(vel[k] / c2) + eps);
        }
    }
    let mut x = to_x(&w);
    project(&mut x, inputs, cfg.epsilon);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{InputShape, ModelSpec, Network};
    use proptest::prelude::*;

    /// Two-class model with logits `[w.x, -w.x]`.
    struct Antipodal(Vec<f64>);

    impl Differentiable for Antipodal {
        fn input_len(&self) -> usize {
            self.0.len()
        }
        fn classes(&self) -> usize {
            2
        }
        fn logits(&self, inputs: &[f64]) -> Vec<f64> {
            inputs
                .chunks(self.0.len())
                .flat_map(|x| {
                    let s: f64 = x.iter().zip(&self.0).map(|(a, b)| a * b).sum();
                    [s, -s]
                })
                .collect()
        }
        fn input_gradient(&self, inputs: &[f64], up: &mut dyn FnMut(usize, &[f64]) -> Vec<f64>) -> Vec<f64> {
            let z = self.logits(inputs);
            let mut out = Vec::new();
            for (i, zi) in z.chunks(2).enumerate() {
                let g = up(i, zi);
                out.extend(self.0.iter().map(|w| (g[0] - g[1]) * w));
            }
            out
        }
    }

    #[test]
    fn single_pgd_step_by_hand() {
        let model = Antipodal(vec![1.0, -1.0]);
        let cfg = AdversarialConfig::pgd(0.1, 0.1, 1);
        let x = gen_adversarial_pgd(&model, &[0.5, 0.5], None, &cfg, 0).unwrap();
        assert!((x[0] - 0.4).abs() < 1e-12 && (x[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_inputs() {
        let model = Antipodal(vec![1.0, -1.0]);
        let r = gen_adversarial_pgd(&model, &[0.5, 1.5], None, &AdversarialConfig::default(), 0);
        assert!(matches!(r, Err(Error::NonContinuousInput { index: 1, .. })));
    }

    #[test]
    fn invalid_config() {
        let model = Antipodal(vec![1.0]);
        let cfg = AdversarialConfig::pgd(0.0, 0.1, 1);
        assert!(gen_adversarial_pgd(&model, &[0.5], None, &cfg, 0).is_err());
        let cfg = AdversarialConfig::pgd(0.1, 0.1, 0);
        assert!(gen_adversarial_pgd(&model, &[0.5], None, &cfg, 0).is_err());
    }

    #[test]
    fn cw_pushes_toward_the_other_class() {
        let model = Antipodal(vec![1.0, -1.0]);
        let cfg = AdversarialConfig { epsilon: 0.2, ..AdversarialConfig::cw() };
        let x = gen_adversarial_cw(&model, &[0.6, 0.4], None, &cfg).unwrap();
        assert!(x[0] < 0.6 && x[1] > 0.4);
        assert!(x.iter().zip([0.6, 0.4]).all(|(a, b)| (a - b).abs() <= 0.2 + 1e-12));
    }

    #[test]
    fn pgd_raises_loss_on_a_network() {
        let spec = ModelSpec::new("mlp-8", InputShape::flat(6), 3);
        let net = Network::new(&spec, 3).unwrap();
        let x: Vec<f64> = (0..6).map(|i| 0.2 + 0.1 * i as f64).collect();
        let y = net.predict(&x);
        let ce = |v: &[f64]| -crate::math::ln(softmax(&net.logits(v))[y[0]]);
        let adv = gen_adversarial_pgd(&net, &x, None, &AdversarialConfig::pgd(0.05, 0.02, 5), 0).unwrap();
        assert!(ce(&adv) > ce(&x));
    }

    proptest! {
        #[test]
        fn pgd_stays_in_ball(seed in any::<u64>(), eps in 0.001f64..0.3, iters in 1usize..6, random_init in any::<bool>()) {
            let spec = ModelSpec::new("mlp-4", InputShape::flat(5), 3);
            let net = Network::new(&spec, seed).unwrap();
            let mut r = rng::seeded(seed ^ 1);
            let x: Vec<f64> = (0..10).map(|_| r.gen()).collect();
            let cfg = AdversarialConfig { random_init, ..AdversarialConfig::pgd(eps, eps / 2.0, iters) };
            let adv = gen_adversarial_pgd(&net, &x, None, &cfg, seed).unwrap();
            prop_assert_eq!(adv.len(), x.len());
            for (a, b) in adv.iter().zip(&x) {
                prop_assert!((a - b).abs() <= eps + 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }
    }
}
