use alloc::vec::Vec;

use crate::math::ln;
use crate::simplex::{softmax_into, ProbabilityVector};

/// `-target . ln(prediction)`; zero-probability predictions under a
/// nonzero target give `+inf`.
pub fn cross_entropy(target: &ProbabilityVector, prediction: &ProbabilityVector) -> f64 {
    target
        .scores()
        .iter()
        .zip(prediction.scores())
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| -t * ln(*p))
        .sum()
}

/// Mean soft-label cross-entropy over a batch of logits (`n x m`) and
/// targets, with its gradient with respect to the logits.
pub fn kd_loss(logits: &[f64], targets: &[f64], classes: usize) -> (f64, Vec<f64>) {
    debug_assert_eq!(logits.len(), targets.len());
    let n = logits.len() / classes;
    let scale = 1.0 / n as f64;
    let mut grad = Vec::with_capacity(logits.len());
    let mut p = Vec::with_capacity(classes);
    let mut total = 0.0;
    for (z, t) in logits.chunks(classes).zip(targets.chunks(classes)) {
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + ln(z.iter().map(|v| crate::math::exp(v - max)).sum::<f64>());
        softmax_into(z, &mut p);
        let mass: f64 = t.iter().sum();
        for j in 0..classes {
            if t[j] > 0.0 {
                total -= t[j] * (z[j] - log_norm);
            }
            grad.push(scale * (p[j] * mass - t[j]));
        }
    }
    (total * scale, grad)
}

/// Mean squared error between softmax outputs and targets, averaged over
/// batch and classes, with its gradient with respect to the logits.
pub fn consistency_loss(logits: &[f64], targets: &[f64], classes: usize) -> (f64, Vec<f64>) {
    let n = logits.len() / classes;
    let scale = 1.0 / (n * classes) as f64;
    let mut grad = Vec::with_capacity(logits.len());
    let mut p = Vec::with_capacity(classes);
    let mut total = 0.0;
    for (z, q) in logits.chunks(classes).zip(targets.chunks(classes)) {
        softmax_into(z, &mut p);
        let g: Vec<f64> = p.iter().zip(q).map(|(pj, qj)| 2.0 * scale * (pj - qj)).collect();
        total += p.iter().zip(q).map(|(pj, qj)| (pj - qj) * (pj - qj)).sum::<f64>();
        let gp: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
        for k in 0..classes {
            grad.push(p[k] * (g[k] - gp));
        }
    }
    (total * scale, grad)
}
