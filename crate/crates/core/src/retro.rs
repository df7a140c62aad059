//! Longitudinal analysis of historical API responses that only kept the
//! top-1 class and its confidence.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::ProbabilityVector;

/// One historical observation: which class an API ranked first for an
/// input in a given year, and with what confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalRecord {
    pub input_id: String,
    pub year_tag: String,
    pub top_class: usize,
    pub top_confidence: f64,
}

/// Rebuilds a full confidence vector from a lone top-1 score: the reported
/// class keeps its confidence and the remainder is spread evenly over the
/// other `classes - 1` classes, which is the maximum-entropy completion.
///
/// A confidence of exactly `1/classes` yields the uniform vector; anything
/// lower cannot be a softmax maximum and is rejected.
pub fn impute_full_simplex(
    top_class: usize,
    top_confidence: f64,
    classes: usize,
) -> Result<ProbabilityVector> {
    if classes < 2 {
        return Err(Error::InvalidConfig("imputation needs at least two classes".into()));
    }
    if top_class >= classes {
        return Err(Error::InvalidConfig("top class out of range".into()));
    }
    if !(top_confidence <= 1.0) || top_confidence < 1.0 / classes as f64 {
        return Err(Error::InconsistentConfidence {
            confidence: top_confidence,
            classes,
        });
    }
    let rest = (1.0 - top_confidence) / (classes - 1) as f64;
    let mut scores = alloc::vec![rest; classes];
    scores[top_class] = top_confidence;
    ProbabilityVector::new(scores)
}

/// Class agreement and confidence drift between two yearly snapshots,
/// computed over the ids both snapshots contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDiff {
    pub overlap: f64,
    pub mean_abs_conf_delta: f64,
    pub mean_conf_a: f64,
    pub mean_conf_b: f64,
    pub shared: usize,
    pub only_a: usize,
    pub only_b: usize,
}

impl SnapshotDiff {
    /// Fraction of the union of ids present in both snapshots.
    pub fn coverage(&self) -> f64 {
        let union = self.shared + self.only_a + self.only_b;
        if union == 0 {
            0.0
        } else {
            self.shared as f64 / union as f64
        }
    }
}

pub fn snapshot_diff(
    year_a: &[LongitudinalRecord],
    year_b: &[LongitudinalRecord],
) -> Result<SnapshotDiff> {
    let b_by_id: BTreeMap<&str, &LongitudinalRecord> =
        year_b.iter().map(|r| (r.input_id.as_str(), r)).collect();
    let a_ids: BTreeMap<&str, &LongitudinalRecord> =
        year_a.iter().map(|r| (r.input_id.as_str(), r)).collect();

    let mut shared = 0usize;
    let mut same_class = 0usize;
    let mut delta_sum = 0.0;
    let mut conf_a = 0.0;
    let mut conf_b = 0.0;
    for (id, a) in &a_ids {
        if let Some(b) = b_by_id.get(id) {
            shared += 1;
            if a.top_class == b.top_class {
                same_class += 1;
            }
            delta_sum += (a.top_confidence - b.top_confidence).abs();
            conf_a += a.top_confidence;
            conf_b += b.top_confidence;
        }
    }
    if shared == 0 {
        return Err(Error::NoOverlap);
    }
    let n = shared as f64;
    Ok(SnapshotDiff {
        overlap: same_class as f64 / n,
        mean_abs_conf_delta: delta_sum / n,
        mean_conf_a: conf_a / n,
        mean_conf_b: conf_b / n,
        shared,
        only_a: a_ids.len() - shared,
        only_b: b_by_id.len() - shared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn rec(id: &str, year: &str, class: usize, conf: f64) -> LongitudinalRecord {
        LongitudinalRecord {
            input_id: id.to_string(),
            year_tag: year.to_string(),
            top_class: class,
            top_confidence: conf,
        }
    }

    #[test]
    fn spreads_remainder_evenly() {
        let p = impute_full_simplex(3, 0.4, 7).unwrap();
        for (j, s) in p.scores().iter().enumerate() {
            if j == 3 {
                assert_eq!(*s, 0.4);
            } else {
                assert!((s - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn certain_prediction() {
        assert_eq!(impute_full_simplex(0, 1.0, 3).unwrap().scores(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn below_uniform_is_inconsistent() {
        assert!(matches!(
            impute_full_simplex(1, 0.2, 4),
            Err(Error::InconsistentConfidence { .. })
        ));
    }

    #[test]
    fn exactly_uniform_keeps_reported_class() {
        let p = impute_full_simplex(2, 0.25, 4).unwrap();
        assert_eq!(p.scores(), &[0.25; 4]);
    }

    #[test]
    fn binary_sentiment_expands_to_three_classes() {
        // positive/negative with the top score reported, expanded to a
        // positive/negative/mixed simplex.
        let p = impute_full_simplex(0, 0.8, 3).unwrap();
        assert_eq!(p.argmax(), 0);
        assert!((p.scores().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_snapshots() {
        let a = vec![rec("a", "2020", 1, 0.9), rec("b", "2020", 0, 0.6)];
        let d = snapshot_diff(&a, &a).unwrap();
        assert_eq!(d.overlap, 1.0);
        assert_eq!(d.mean_abs_conf_delta, 0.0);
        assert_eq!(d.coverage(), 1.0);
    }

    #[test]
    fn one_class_change_halves_overlap() {
        let a = vec![rec("a", "2020", 1, 0.9), rec("b", "2020", 0, 0.6)];
        let b = vec![rec("a", "2021", 1, 0.9), rec("b", "2021", 2, 0.6)];
        assert_eq!(snapshot_diff(&a, &b).unwrap().overlap, 0.5);
    }

    #[test]
    fn confidence_delta() {
        let a = vec![rec("a", "2020", 1, 0.5)];
        let b = vec![rec("a", "2021", 1, 0.4)];
        let d = snapshot_diff(&a, &b).unwrap();
        assert!((d.mean_abs_conf_delta - 0.1).abs() < 1e-12);
    }

    #[test]
    fn membership_drift_is_reported() {
        let a = vec![rec("a", "2020", 1, 0.5), rec("x", "2020", 1, 0.5)];
        let b = vec![rec("a", "2021", 1, 0.4), rec("y", "2021", 1, 0.5), rec("z", "2021", 0, 0.7)];
        let d = snapshot_diff(&a, &b).unwrap();
        assert_eq!((d.shared, d.only_a, d.only_b), (1, 1, 2));
        assert!((d.coverage() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn disjoint_snapshots() {
        let a = vec![rec("a", "2020", 1, 0.5)];
        let b = vec![rec("b", "2021", 1, 0.5)];
        assert_eq!(snapshot_diff(&a, &b), Err(Error::NoOverlap));
    }

    proptest! {
        #[test]
        fn impute_after_top1_is_idempotent(m in 2usize..9, class in 0usize..8, t in 0.0f64..1.0) {
            let class = class % m;
            let conf = 1.0 / m as f64 + t * (1.0 - 1.0 / m as f64);
            let p = impute_full_simplex(class, conf, m).unwrap();
            let (c2, s2) = (class, p[class]);
            let again = impute_full_simplex(c2, s2, m).unwrap();
            prop_assert_eq!(&again, &p);
            prop_assert!((p.scores().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.scores().iter().all(|s| *s <= conf));
        }
    }
}
