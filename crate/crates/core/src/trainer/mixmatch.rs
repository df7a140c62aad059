//! MixMatch batch construction: augmentation-averaged pseudo-labels,
//! temperature sharpening and mixup across the labeled and unlabeled sets.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::augment::{augment_with, AugmentConfig};
use crate::error::{Error, Result};
use crate::math::powf;
use crate::nn::Network;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixMatchConfig {
    /// Sharpening temperature, in `(0, 1]`.
    pub temperature: f64,
    /// Augmented views per unlabeled input.
    pub augmentations: usize,
    pub mixup_alpha: f64,
    /// Final weight of the unlabeled consistency term.
    pub unlabeled_weight: f64,
    /// Fraction of all training steps over which the unlabeled weight ramps
    /// linearly from 0 to `unlabeled_weight`.
    pub rampup_fraction: f64,
}

impl Default for MixMatchConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            augmentations: 2,
            mixup_alpha: 0.75,
            unlabeled_weight: 75.0,
            rampup_fraction: 1.0,
        }
    }
}

impl MixMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature <= 1.0) {
            return Err(Error::InvalidConfig("temperature must lie in (0,1]".into()));
        }
        if self.augmentations == 0 {
            return Err(Error::InvalidConfig("need at least one augmentation".into()));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::InvalidConfig("mixup alpha must be positive".into()));
        }
        if !(self.unlabeled_weight >= 0.0) || !(self.rampup_fraction >= 0.0) {
            return Err(Error::InvalidConfig("unlabeled weight schedule must be non-negative".into()));
        }
        Ok(())
    }

    /// Unlabeled-loss weight after `progress` (fraction of total steps).
    pub fn unlabeled_weight_at(&self, progress: f64) -> f64 {
        if self.rampup_fraction <= 0.0 {
            return self.unlabeled_weight;
        }
        self.unlabeled_weight * (progress / self.rampup_fraction).clamp(0.0, 1.0)
    }
}

/// `p^(1/T)`, renormalized.
pub fn sharpen(p: &[f64], temperature: f64) -> Vec<f64> {
    let powered: Vec<f64> = p.iter().map(|v| powf(*v, 1.0 / temperature)).collect();
    let total: f64 = powered.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return p.to_vec();
    }
    powered.into_iter().map(|v| v / total).collect()
}

/// Mixed training batch. `x_*` carry the labeled half (trained with
/// cross-entropy), `u_*` the pseudo-labeled half (trained with the
/// consistency loss). Targets are flattened `n x classes`.
#[derive(Debug, Clone)]
pub struct MixMatchBatch {
    pub x_inputs: Vec<f64>,
    pub x_targets: Vec<f64>,
    pub u_inputs: Vec<f64>,
    pub u_targets: Vec<f64>,
    /// Mixup coefficients actually applied, one per output row (labeled rows
    /// first).
    pub lambdas: Vec<f64>,
}

pub fn mixmatch_round(
    labeled_inputs: &[f64],
    labeled_targets: &[f64],
    unlabeled_inputs: &[f64],
    model: &Network,
    augment: &AugmentConfig,
    cfg: &MixMatchConfig,
    seed: u64,
) -> Result<MixMatchBatch> {
    cfg.validate()?;
    let d = model.input_len();
    let m = model.classes();
    let shape = model.spec().input;
    let n_l = labeled_inputs.len() / d;
    let n_u = unlabeled_inputs.len() / d;
    if n_l != n_u {
        return Err(Error::SizeMismatch {
            labeled: n_l,
            unlabeled: n_u,
        });
    }
    if labeled_targets.len() != n_l * m {
        return Err(Error::ShapeMismatch {
            expected: n_l * m,
            found: labeled_targets.len(),
        });
    }
    let mut rng = rng::seeded(seed);

    let mut x_hat = Vec::with_capacity(n_l * d);
    for x in labeled_inputs.chunks(d) {
        x_hat.extend(augment_with(x, shape, augment, &mut rng));
    }

    let k = cfg.augmentations;
    let mut u_hat = Vec::with_capacity(k * n_u * d);
    for _ in 0..k {
        for u in unlabeled_inputs.chunks(d) {
            u_hat.extend(augment_with(u, shape, augment, &mut rng));
        }
    }
    let probs = model.probabilities(&u_hat);
    let mut guesses = Vec::with_capacity(n_u * m);
    for i in 0..n_u {
        let mut avg = alloc::vec![0.0; m];
        for view in 0..k {
            for (a, p) in avg.iter_mut().zip(probs[view * n_u + i].scores()) {
                *a += p / k as f64;
            }
        }
        guesses.extend(sharpen(&avg, cfg.temperature));
    }

    // Pool of (input, target) rows: augmented labeled, then every unlabeled view.
    let rows = n_l + k * n_u;
    let target_of = |r: usize| -> &[f64] {
        if r < n_l {
            &labeled_targets[r * m..(r + 1) * m]
        } else {
            let i = (r - n_l) % n_u;
            &guesses[i * m..(i + 1) * m]
        }
    };
    let input_of = |r: usize| -> &[f64] {
        if r < n_l {
            &x_hat[r * d..(r + 1) * d]
        } else {
            &u_hat[(r - n_l) * d..(r - n_l + 1) * d]
        }
    };
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut rng);

    let beta = Beta::new(cfg.mixup_alpha, cfg.mixup_alpha)
        .map_err(|_| Error::InvalidConfig("mixup alpha".into()))?;
    let mut lambdas = Vec::with_capacity(rows);
    let mut mix = |r: usize, partner: usize, inputs: &mut Vec<f64>, targets: &mut Vec<f64>| {
        let lam: f64 = beta.sample(&mut rng);
        let lam = lam.max(1.0 - lam);
        lambdas.push(lam);
        for (a, b) in input_of(r).iter().zip(input_of(partner)) {
            inputs.push(lam * a + (1.0 - lam) * b);
        }
        for (a, b) in target_of(r).iter().zip(target_of(partner)) {
            targets.push(lam * a + (1.0 - lam) * b);
        }
    };

    let mut x_inputs = Vec::with_capacity(n_l * d);
    let mut x_targets = Vec::with_capacity(n_l * m);
    for r in 0..n_l {
        mix(r, order[r], &mut x_inputs, &mut x_targets);
    }
    let mut u_inputs = Vec::with_capacity(k * n_u * d);
    let mut u_targets = Vec::with_capacity(k * n_u * m);
    for r in n_l..rows {
        mix(r, order[r], &mut u_inputs, &mut u_targets);
    }

    Ok(MixMatchBatch {
        x_inputs,
        x_targets,
        u_inputs,
        u_targets,
        lambdas,
    })
}
