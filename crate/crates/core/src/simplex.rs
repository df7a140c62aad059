//! Class-confidence vectors.

use alloc::vec::Vec;
use core::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Allowed deviation of `sum(scores)` from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// A point on the probability simplex: one confidence per class, each in
/// `[0,1]`, summing to 1 within [`SIMPLEX_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        validate(&scores)?;
        Ok(Self(scores))
    }

    /// Numerically stable softmax.
    pub fn from_logits(logits: &[f64]) -> Self {
        Self(softmax(logits))
    }

    /// Renormalizes non-negative weights onto the simplex. All-zero weights
    /// map to the uniform distribution.
    pub fn normalize(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidSimplex("no classes".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidSimplex("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            let u = 1.0 / weights.len() as f64;
            return Ok(Self(alloc::vec![u; weights.len()]));
        }
        Ok(Self(weights.iter().map(|w| w / total).collect()))
    }

    pub fn one_hot(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::InvalidSimplex("class index out of range".into()));
        }
        let mut v = alloc::vec![0.0; classes];
        v[class] = 1.0;
        Ok(Self(v))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(alloc::vec![1.0 / classes as f64; classes])
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn top(&self) -> (usize, f64) {
        let i = self.argmax();
        (i, self.0[i])
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        entropy(&self.0)
    }
}

impl Index<usize> for ProbabilityVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Vec<f64> {
        p.0
    }
}

fn validate(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidSimplex("no classes".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidSimplex(alloc::format!(
            "score {bad} outside [0,1]"
        )));
    }
    let total: f64 = scores.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::InvalidSimplex(alloc::format!(
            "scores sum to {total}"
        )));
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    softmax_into(logits, &mut out);
    out
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in logits {
        let e = math::exp(z - max);
        total += e;
        out.push(e);
    }
    for e in out.iter_mut() {
        *e /= total;
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * math::ln(*x))
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_bad_vectors() {
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![1.2, -0.2]).is_err());
        assert!(ProbabilityVector::new(vec![]).is_err());
        assert!(ProbabilityVector::new(vec![0.3, 0.7]).is_ok());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let p = ProbabilityVector::from_logits(&[0.0, 0.0]);
        assert_eq!(p.scores(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = ProbabilityVector::from_logits(&[1000.0, 0.0, -1000.0]);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(ProbabilityVector::new(p.into_inner()).is_ok());
    }

    #[test]
    fn serde_validates() {
        let p: core::result::Result<ProbabilityVector, _> =
            ProbabilityVector::try_from(vec![0.9, 0.9]);
        assert!(p.is_err());
    }
}
