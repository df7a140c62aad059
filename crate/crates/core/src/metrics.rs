//! Accuracy, fidelity, adversarial fidelity and cross-dataset matrices.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::strategies::{gen_adversarial, AdversarialConfig};

fn agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let hits = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(hits as f64 / a.len() as f64)
}

/// Fraction of predictions equal to the ground-truth labels.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    agreement(predictions, labels)
}

/// Fraction of inputs on which the piracy and victim models pick the same
/// class.
pub fn fidelity(piracy: &[usize], victim: &[usize]) -> Result<f64> {
    agreement(piracy, victim)
}

/// Translates victim class indices into the evaluation label space.
/// `map[v]` is the evaluation class for victim class `v`.
pub fn map_labels(predictions: &[usize], map: &[usize]) -> Result<Vec<usize>> {
    predictions
        .iter()
        .map(|&p| {
            map.get(p).copied().ok_or(Error::LabelSpaceMismatch {
                expected: map.len(),
                found: p + 1,
            })
        })
        .collect()
}

/// Agreement restricted to inputs the victim assigns to each class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBreakdown {
    pub class: usize,
    pub support: usize,
    pub fidelity: f64,
}

pub fn per_class_fidelity(piracy: &[usize], victim: &[usize], classes: usize) -> Result<Vec<ClassBreakdown>> {
    agreement(piracy, victim)?;
    let mut support = vec![0usize; classes];
    let mut hits = vec![0usize; classes];
    for (p, v) in piracy.iter().zip(victim) {
        if *v >= classes {
            return Err(Error::LabelSpaceMismatch { expected: classes, found: v + 1 });
        }
        support[*v] += 1;
        if p == v {
            hits[*v] += 1;
        }
    }
    Ok((0..classes)
        .filter(|c| support[*c] > 0)
        .map(|c| ClassBreakdown {
            class: c,
            support: support[c],
            fidelity: hits[c] as f64 / support[c] as f64,
        })
        .collect())
}

/// Original and perturbed inputs from one adversarial-fidelity evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvExampleSet {
    pub origin: Vec<f64>,
    pub adversarial: Vec<f64>,
    pub input_len: usize,
    pub config: AdversarialConfig,
}

impl AdvExampleSet {
    pub fn len(&self) -> usize {
        self.origin.len() / self.input_len.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    /// Largest per-feature distance between an example and its origin.
    pub fn max_linf(&self) -> f64 {
        self.origin
            .iter()
            .zip(&self.adversarial)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Generates adversarial examples against the piracy model and reports how
/// often the victim, queried through `victim`, agrees with the piracy model
/// on them.
pub fn adversarial_fidelity<E, F>(
    piracy: &Network,
    inputs: &[f64],
    cfg: &AdversarialConfig,
    seed: u64,
    mut victim: F,
) -> core::result::Result<(f64, AdvExampleSet), E>
where
    E: From<Error>,
    F: FnMut(&[f64]) -> core::result::Result<Vec<usize>, E>,
{
    if inputs.is_empty() {
        return Err(Error::EmptySet.into());
    }
    let adversarial = gen_adversarial(piracy, inputs, None, cfg, seed)?;
    let ours = piracy.predict(&adversarial);
    let theirs = victim(&adversarial)?;
    let score = fidelity(&ours, &theirs)?;
    Ok((
        score,
        AdvExampleSet {
            origin: inputs.to_vec(),
            adversarial,
            input_len: piracy.input_len(),
            config: cfg.clone(),
        },
    ))
}

/// Fidelity of each origin-trained model on each evaluation dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizabilityMatrix {
    pub origins: Vec<String>,
    pub evaluations: Vec<String>,
    /// `values[o][e]`.
    pub values: Vec<Vec<f64>>,
}

pub fn generalizability_matrix<E, F>(
    models: &[(String, &Network)],
    datasets: &[(String, &[f64])],
    classes: usize,
    mut victim: F,
) -> core::result::Result<GeneralizabilityMatrix, E>
where
    E: From<Error>,
    F: FnMut(&[f64]) -> core::result::Result<Vec<usize>, E>,
{
    for (_, m) in models {
        if m.classes() != classes {
            return Err(Error::LabelSpaceMismatch {
                expected: classes,
                found: m.classes(),
            }
            .into());
        }
    }
    let mut truth = Vec::with_capacity(datasets.len());
    for (_, d) in datasets {
        truth.push(victim(d)?);
    }
    let mut values = Vec::with_capacity(models.len());
    for (_, m) in models {
        let mut row = Vec::with_capacity(datasets.len());
        for ((_, d), v) in datasets.iter().zip(&truth) {
            row.push(fidelity(&m.predict(d), v)?);
        }
        values.push(row);
    }
    Ok(GeneralizabilityMatrix {
        origins: models.iter().map(|(n, _)| n.clone()).collect(),
        evaluations: datasets.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub fidelity: f64,
    pub adversarial_fidelity: Option<f64>,
    pub per_class: Vec<ClassBreakdown>,
    pub samples: usize,
    pub adversarial_samples: usize,
    pub config_fingerprint: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{InputShape, ModelSpec};
    use alloc::string::ToString;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn examples() {
        assert!((accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(fidelity(&[2, 2], &[2, 2]).unwrap(), 1.0);
        assert_eq!(fidelity(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(fidelity(&[], &[]), Err(Error::EmptySet));
        assert!(matches!(fidelity(&[1], &[1, 2]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn constant_piracy_scores_victim_frequency() {
        let victim = [0, 3, 3, 1, 3, 2];
        assert_eq!(fidelity(&[3; 6], &victim).unwrap(), 0.5);
    }

    #[test]
    fn per_class_support_sums_to_samples() {
        let b = per_class_fidelity(&[0, 1, 1, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(b.iter().map(|c| c.support).sum::<usize>(), 4);
        assert_eq!(b[2].fidelity, 0.5);
    }

    fn net(seed: u64) -> Network {
        Network::new(&ModelSpec::new("mlp-6", InputShape::flat(4), 3), seed).unwrap()
    }

    #[test]
    fn adversarial_fidelity_of_self_is_one() {
        let f = net(1);
        let mut r = crate::rng::seeded(2);
        let x: Vec<f64> = (0..40).map(|_| r.gen()).collect();
        let (score, set) = adversarial_fidelity::<Error, _>(&f, &x, &AdversarialConfig::default(), 0, |a| Ok(f.predict(a))).unwrap();
        assert_eq!(score, 1.0);
        assert_eq!(set.len(), 10);
        assert!(set.max_linf() <= 4.0 / 255.0 + 1e-12);
    }

    #[test]
    fn adversarial_fidelity_needs_inputs() {
        let f = net(1);
        let r = adversarial_fidelity::<Error, _>(&f, &[], &AdversarialConfig::default(), 0, |a| Ok(f.predict(a)));
        assert_eq!(r.unwrap_err(), Error::EmptySet);
    }

    #[test]
    fn matrix_diagonal_matches_fidelity() {
        let (a, b) = (net(1), net(2));
        let d1: Vec<f64> = (0..40).map(|i| (i % 7) as f64 / 7.0).collect();
        let d2: Vec<f64> = (0..40).map(|i| (i % 5) as f64 / 5.0).collect();
        let victim = net(3);
        let m = generalizability_matrix::<Error, _>(
            &[("one".to_string(), &a), ("two".to_string(), &b)],
            &[("one".to_string(), &d1), ("two".to_string(), &d2)],
            3,
            |x| Ok(victim.predict(x)),
        )
        .unwrap();
        assert_eq!(m.values[0][0], fidelity(&a.predict(&d1), &victim.predict(&d1)).unwrap());
        assert_eq!(m.values[1][1], fidelity(&b.predict(&d2), &victim.predict(&d2)).unwrap());
        let other = Network::new(&ModelSpec::new("linear", InputShape::flat(4), 2), 0).unwrap();
        let bad = generalizability_matrix::<Error, _>(&[("x".to_string(), &other)], &[], 3, |x| Ok(victim.predict(x)));
        assert!(matches!(bad, Err(Error::LabelSpaceMismatch { .. })));
    }

    #[test]
    fn label_map() {
        assert_eq!(map_labels(&[0, 2], &[1, 1, 0]).unwrap(), [1, 0]);
        assert!(map_labels(&[3], &[0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn identities(p in proptest::collection::vec(0usize..5, 1..50), seed in any::<u64>()) {
            let mut r = crate::rng::seeded(seed);
            let q: Vec<usize> = p.iter().map(|_| r.gen_range(0..5)).collect();
            prop_assert_eq!(fidelity(&p, &p).unwrap(), 1.0);
            prop_assert_eq!(fidelity(&p, &q).unwrap(), fidelity(&q, &p).unwrap());
            let mut perm: Vec<usize> = (0..p.len()).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut r);
            let pp: Vec<usize> = perm.iter().map(|&i| p[i]).collect();
            let qq: Vec<usize> = perm.iter().map(|&i| q[i]).collect();
            prop_assert_eq!(fidelity(&pp, &qq).unwrap(), fidelity(&p, &q).unwrap());
            prop_assert_eq!(accuracy(&pp, &qq).unwrap(), accuracy(&p, &q).unwrap());
        }
    }
}
