use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{augment_with, AugmentConfig};
use super::loss::{consistency_loss, kd_loss};
use super::mixmatch::{mixmatch_round, MixMatchConfig};
use super::optim::{make_optimizer, Optimizer, OptimizerConfig};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng;
use crate::simplex::SIMPLEX_TOLERANCE;

/// Query-response pairs: flattened inputs with one target row per input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pairs {
    input_len: usize,
    classes: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Pairs {
    pub fn new(input_len: usize, classes: usize) -> Self {
        Self {
            input_len,
            classes,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push(&mut self, input: &[f64], target: &[f64]) -> Result<()> {
        if input.len() != self.input_len {
            return Err(Error::ShapeMismatch {
                expected: self.input_len,
                found: input.len(),
            });
        }
        if target.len() != self.classes {
            return Err(Error::ShapeMismatch {
                expected: self.classes,
                found: target.len(),
            });
        }
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.input_len == 0 {
            0
        } else {
            self.inputs.len() / self.input_len
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_len..(i + 1) * self.input_len]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.classes..(i + 1) * self.classes]
    }

    /// Every target must be a full simplex; degraded responses have to be
    /// lifted before training.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyPairs);
        }
        for (index, t) in self.targets.chunks(self.classes).enumerate() {
            let ok = t.iter().all(|v| (0.0..=1.0).contains(v))
                && (t.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE;
            if !ok {
                return Err(Error::DegradedLabels { index });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub augment: AugmentConfig,
}

fn default_batch() -> usize {
    64
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: default_batch(),
            augment: AugmentConfig::default(),
        }
    }
}

/// Owns one model and its optimizer state so training can resume across
/// attack rounds (warm start).
pub struct Trainer {
    model: Network,
    optimizer: Box<dyn Optimizer>,
    settings: TrainSettings,
    grads: Vec<f64>,
}

impl Trainer {
    pub fn new(model: Network, opt: &OptimizerConfig, settings: TrainSettings) -> Result<Self> {
        if settings.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        let optimizer = make_optimizer(opt)?;
        let grads = vec![0.0; model.param_count()];
        Ok(Self {
            model,
            optimizer,
            settings,
            grads,
        })
    }

    pub fn model(&self) -> &Network {
        &self.model
    }

    pub fn into_model(self) -> Network {
        self.model
    }

    fn check_pairs(&self, pairs: &Pairs) -> Result<()> {
        pairs.validate()?;
        if pairs.input_len != self.model.input_len() || pairs.classes != self.model.classes() {
            return Err(Error::LabelSpaceMismatch {
                expected: self.model.classes(),
                found: pairs.classes,
            });
        }
        Ok(())
    }

    /// Minimizes the soft-label cross-entropy over `pairs` for `epochs`
    /// passes. Returns the mean training loss of each epoch.
    pub fn fit_kd(&mut self, pairs: &Pairs, epochs: usize, seed: u64) -> Result<Vec<f64>> {
        self.fit_kd_observed(pairs, epochs, seed, |_, _, _| {})
    }

    /// [`fit_kd`](Self::fit_kd) calling `observe(epoch, loss, model)` after
    /// every epoch.
    pub fn fit_kd_observed(
        &mut self,
        pairs: &Pairs,
        epochs: usize,
        seed: u64,
        mut observe: impl FnMut(usize, f64, &Network),
    ) -> Result<Vec<f64>> {
        self.check_pairs(pairs)?;
        let d = self.model.input_len();
        let m = self.model.classes();
        let shape = self.model.spec().input;
        let n = pairs.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let mut rng = rng::seeded(rng::derive(seed, epoch as u64));
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(self.settings.batch_size) {
                let mut x = Vec::with_capacity(batch.len() * d);
                let mut t = Vec::with_capacity(batch.len() * m);
                for &i in batch {
                    x.extend(augment_with(pairs.input(i), shape, &self.settings.augment, &mut rng));
                    t.extend_from_slice(pairs.target(i));
                }
                let tape = self.model.forward(&x);
                let (loss, dlogits) = kd_loss(tape.logits(), &t, m);
                total += loss * batch.len() as f64;
                self.grads.iter_mut().for_each(|g| *g = 0.0);
                self.model.backward(&tape, &dlogits, &mut self.grads, false);
                self.optimizer.step(self.model.params_mut(), &self.grads);
            }
            trace.push(total / n as f64);
            observe(epoch, total / n as f64, &self.model);
        }
        Ok(trace)
    }

    /// MixMatch training. An epoch sweeps the unlabeled pool (flattened
    /// inputs) once in batches paired with equal-sized labeled batches; the
    /// labeled set is reshuffled and cycled as often as needed, and at
    /// least one full labeled pass happens per epoch. Returns the mean
    /// combined loss per epoch.
    pub fn fit_mixmatch(
        &mut self,
        pairs: &Pairs,
        unlabeled: &[f64],
        cfg: &MixMatchConfig,
        epochs: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        self.fit_mixmatch_observed(pairs, unlabeled, cfg, epochs, seed, |_, _, _| {})
    }

    /// [`fit_mixmatch`](Self::fit_mixmatch) with a per-epoch observer.
    pub fn fit_mixmatch_observed(
        &mut self,
        pairs: &Pairs,
        unlabeled: &[f64],
        cfg: &MixMatchConfig,
        epochs: usize,
        seed: u64,
        mut observe: impl FnMut(usize, f64, &Network),
    ) -> Result<Vec<f64>> {
        self.check_pairs(pairs)?;
        cfg.validate()?;
        let d = self.model.input_len();
        let m = self.model.classes();
        let n = pairs.len();
        let pool = unlabeled.len() / d;
        if pool == 0 {
            return self.fit_kd_observed(pairs, epochs, seed, observe);
        }
        let b = self.settings.batch_size.min(n).min(pool);
        let steps_per_epoch = n.max(pool).div_ceil(b);
        let total_steps = (steps_per_epoch * epochs).max(1);
        let mut step = 0usize;
        let mut order: Vec<usize> = (0..n).collect();
        let mut cursor = n;
        let mut pool_order: Vec<usize> = (0..pool).collect();
        let mut pool_cursor = pool;
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let mut rng = rng::seeded(rng::derive(seed, epoch as u64));
            let mut total = 0.0;
            for _ in 0..steps_per_epoch {
                let mut xl = Vec::with_capacity(b * d);
                let mut tl = Vec::with_capacity(b * m);
                let mut xu = Vec::with_capacity(b * d);
                for _ in 0..b {
                    if cursor == n {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    let i = order[cursor];
                    cursor += 1;
                    xl.extend_from_slice(pairs.input(i));
                    tl.extend_from_slice(pairs.target(i));
                    if pool_cursor == pool {
                        pool_order.shuffle(&mut rng);
                        pool_cursor = 0;
                    }
                    let j = pool_order[pool_cursor];
                    pool_cursor += 1;
                    xu.extend_from_slice(&unlabeled[j * d..(j + 1) * d]);
                }
                let mixed = mixmatch_round(
                    &xl,
                    &tl,
                    &xu,
                    &self.model,
                    &self.settings.augment,
                    cfg,
                    rng::derive(seed, (1u64 << 32) + step as u64),
                )?;
                let lambda_u = cfg.unlabeled_weight_at(step as f64 / total_steps as f64);
                self.grads.iter_mut().for_each(|g| *g = 0.0);
                let tape = self.model.forward(&mixed.x_inputs);
                let (lx, dx) = kd_loss(tape.logits(), &mixed.x_targets, m);
                self.model.backward(&tape, &dx, &mut self.grads, false);
                let tape = self.model.forward(&mixed.u_inputs);
                let (lu, mut du) = consistency_loss(tape.logits(), &mixed.u_targets, m);
                du.iter_mut().for_each(|g| *g *= lambda_u);
                self.model.backward(&tape, &du, &mut self.grads, false);
                self.optimizer.step(self.model.params_mut(), &self.grads);
                total += lx + lambda_u * lu;
                step += 1;
            }
            trace.push(total / steps_per_epoch as f64);
            observe(epoch, total / steps_per_epoch as f64, &self.model);
        }
        Ok(trace)
    }
}

/// One-shot distillation: trains `model` on `pairs` and returns it with the
/// per-epoch loss trace.
pub fn kd_train(
    pairs: &Pairs,
    model: Network,
    opt: &OptimizerConfig,
    epochs: usize,
    augment: &AugmentConfig,
    seed: u64,
) -> Result<(Network, Vec<f64>)> {
    let settings = TrainSettings {
        augment: augment.clone(),
        ..TrainSettings::default()
    };
    let mut trainer = Trainer::new(model, opt, settings)?;
    let trace = trainer.fit_kd(pairs, epochs, seed)?;
    Ok((trainer.into_model(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{InputShape, ModelSpec};
    use crate::trainer::optim::{OptimizerKind, Task};

    fn adam(lr: f64) -> OptimizerConfig {
        OptimizerConfig { learning_rate: lr, ..OptimizerConfig::defaults(OptimizerKind::Adam, Task::Vision) }
    }

    #[test]
    fn empty_and_degraded_pairs_rejected() {
        let spec = ModelSpec::new("linear", InputShape::flat(2), 2);
        let net = Network::new(&spec, 0).unwrap();
        let pairs = Pairs::new(2, 2);
        assert!(matches!(
            kd_train(&pairs, net.clone(), &adam(0.01), 1, &AugmentConfig::disabled(), 0),
            Err(Error::EmptyPairs)
        ));
        let mut pairs = Pairs::new(2, 2);
        pairs.push(&[0.1, 0.2], &[0.5, 0.5]).unwrap();
        pairs.push(&[0.3, 0.2], &[0.6, 0.6]).unwrap();
        assert!(matches!(
            kd_train(&pairs, net, &adam(0.01), 1, &AugmentConfig::disabled(), 0),
            Err(Error::DegradedLabels { index: 1 })
        ));
    }

    /// With a zero input the linear model reduces to its bias; the argmax of
    /// the learned bias must match the target.
    #[test]
    fn bias_only_model_learns_target_argmax() {
        let spec = ModelSpec::new("linear", InputShape::flat(3), 4);
        let net = Network::zeroed(&spec).unwrap();
        let mut pairs = Pairs::new(3, 4);
        pairs.push(&[0.0, 0.0, 0.0], &[0.1, 0.2, 0.6, 0.1]).unwrap();
        let (net, trace) = kd_train(&pairs, net, &adam(0.05), 200, &AugmentConfig::disabled(), 1).unwrap();
        assert_eq!(trace.len(), 200);
        assert_eq!(net.predict(&[0.0, 0.0, 0.0]), vec![2]);
        // Converges towards the target entropy.
        let target_entropy = crate::simplex::entropy(&[0.1, 0.2, 0.6, 0.1]);
        assert!((trace[199] - target_entropy).abs() < 1e-3, "{}", trace[199]);
    }

    #[test]
    fn fixed_seed_gives_bit_identical_trace() {
        let spec = ModelSpec::new("cnn-2", InputShape::image(1, 4, 4), 3);
        let mut pairs = Pairs::new(16, 3);
        for i in 0..20 {
            let x: Vec<f64> = (0..16).map(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0).collect();
            let mut t = [0.1, 0.1, 0.1];
            t[i % 3] = 0.8;
            pairs.push(&x, &t).unwrap();
        }
        let run = || {
            let net = Network::new(&spec, 4).unwrap();
            kd_train(&pairs, net, &adam(0.01), 5, &AugmentConfig::default(), 9).unwrap()
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(ta, tb);
        assert_eq!(a.params(), b.params());
        assert!(ta[4] < ta[0]);
    }

    #[test]
    fn mixmatch_training_runs_and_is_deterministic() {
        let spec = ModelSpec::new("mlp-4", InputShape::image(1, 3, 3), 2);
        let mut pairs = Pairs::new(9, 2);
        for i in 0..8 {
            let v = if i % 2 == 0 { 0.9 } else { 0.1 };
            pairs.push(&[v; 9], if i % 2 == 0 { &[0.9, 0.1] } else { &[0.2, 0.8] }).unwrap();
        }
        let unlabeled: Vec<f64> = (0..40 * 9).map(|i| ((i / 9) % 5) as f64 / 4.0).collect();
        let run = || {
            let mut t = Trainer::new(
                Network::new(&spec, 2).unwrap(),
                &adam(0.01),
                TrainSettings { batch_size: 4, augment: AugmentConfig::default() },
            )
            .unwrap();
            let trace = t.fit_mixmatch(&pairs, &unlabeled, &MixMatchConfig::default(), 3, 5).unwrap();
            (trace, t.into_model())
        };
        let (ta, a) = run();
        let (tb, b) = run();
        assert_eq!(ta.len(), 3);
        assert_eq!(ta, tb);
        assert_eq!(a.params(), b.params());
    }
}
