//! Response policies: how an API degrades the victim's confidence vector
//! before returning it.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retro::impute_full_simplex;
use crate::simplex::ProbabilityVector;

/// Names used by the default five-level descriptor policy.
pub const DEFAULT_DESCRIPTOR_NAMES: [&str; 5] =
    ["very_unlikely", "unlikely", "possible", "likely", "very_likely"];
pub const DEFAULT_DESCRIPTOR_THRESHOLDS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Bucket edges of the coarse preset: width-0.2 interior buckets aligned so
/// that `[0.5, 0.7)` is one of them, with half-width buckets at both ends.
pub const COARSE_BUCKET_EDGES: [f64; 7] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

/// A half-open interval `[lo, hi)`. The last bucket of a partition also
/// contains `1.0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
}

impl Bucket {
    pub fn midpoint(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResponsePolicy {
    Full,
    Top1,
    Quantized {
        buckets: Vec<Bucket>,
    },
    Descriptor {
        thresholds: Vec<f64>,
        names: Vec<String>,
    },
    LabelOnly,
}

impl Default for ResponsePolicy {
    fn default() -> Self {
        ResponsePolicy::Full
    }
}

impl ResponsePolicy {
    pub fn quantized(buckets: Vec<Bucket>) -> Result<Self> {
        let p = ResponsePolicy::Quantized { buckets };
        p.validate()?;
        Ok(p)
    }

    /// Quantization with buckets between consecutive `edges`, which must
    /// start at 0, end at 1 and ascend strictly.
    pub fn quantized_from_edges(edges: &[f64]) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidPolicy("need at least two bucket edges".into()));
        }
        let buckets = edges
            .windows(2)
            .map(|w| Bucket { lo: w[0], hi: w[1] })
            .collect();
        Self::quantized(buckets)
    }

    /// Uniform buckets of the given width (`1/width` must be an integer).
    pub fn uniform_quantized(width: f64) -> Result<Self> {
        let n = 1.0 / width;
        let count = libm::round(n) as usize;
        if !(width > 0.0 && width <= 1.0) || (n - count as f64).abs() > 1e-9 {
            return Err(Error::InvalidPolicy(format!(
                "bucket width {width} does not divide [0,1]"
            )));
        }
        let edges: Vec<f64> = (0..=count)
            .map(|i| if i == count { 1.0 } else { i as f64 / count as f64 })
            .collect();
        Self::quantized_from_edges(&edges)
    }

    /// Ten uniform buckets of width 0.1.
    pub fn default_quantized() -> Self {
        Self::uniform_quantized(0.1).expect("static preset")
    }

    /// Width-0.2 preset, see [`COARSE_BUCKET_EDGES`].
    pub fn coarse_quantized() -> Self {
        Self::quantized_from_edges(&COARSE_BUCKET_EDGES).expect("static preset")
    }

    pub fn default_descriptor() -> Self {
        ResponsePolicy::Descriptor {
            thresholds: DEFAULT_DESCRIPTOR_THRESHOLDS.to_vec(),
            names: DEFAULT_DESCRIPTOR_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ResponsePolicy::Full => "full",
            ResponsePolicy::Top1 => "top1",
            ResponsePolicy::Quantized { .. } => "quantized",
            ResponsePolicy::Descriptor { .. } => "descriptor",
            ResponsePolicy::LabelOnly => "label_only",
        }
    }

    /// Canonical identifier including parameters, e.g.
    /// `quantized:0,0.1,0.3,0.5,0.7,0.9,1`. Used as a cache and log key.
    pub fn identifier(&self) -> String {
        match self {
            ResponsePolicy::Quantized { buckets } => {
                let mut edges: Vec<String> = buckets.iter().map(|b| format!("{}", b.lo)).collect();
                if let Some(last) = buckets.last() {
                    edges.push(format!("{}", last.hi));
                }
                format!("quantized:{}", edges.join(","))
            }
            ResponsePolicy::Descriptor { thresholds, names } => {
                let t: Vec<String> = thresholds.iter().map(|t| format!("{t}")).collect();
                format!("descriptor:{}:{}", t.join(","), names.join(","))
            }
            other => other.kind().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ResponsePolicy::Quantized { buckets } => {
                let first = buckets
                    .first()
                    .ok_or_else(|| Error::InvalidPolicy("no buckets".into()))?;
                if first.lo != 0.0 {
                    return Err(Error::InvalidPolicy("buckets must start at 0".into()));
                }
                for b in buckets {
                    if !(b.lo < b.hi) {
                        return Err(Error::InvalidPolicy(format!(
                            "empty bucket [{}, {})",
                            b.lo, b.hi
                        )));
                    }
                }
                for w in buckets.windows(2) {
                    if w[0].hi != w[1].lo {
                        return Err(Error::InvalidPolicy(format!(
                            "gap or overlap between {} and {}",
                            w[0].hi, w[1].lo
                        )));
                    }
                }
                if buckets.last().map(|b| b.hi) != Some(1.0) {
                    return Err(Error::InvalidPolicy("buckets must end at 1".into()));
                }
                Ok(())
            }
            ResponsePolicy::Descriptor { thresholds, names } => {
                if names.len() != thresholds.len() + 1 {
                    return Err(Error::InvalidPolicy(format!(
                        "{} thresholds need {} names, got {}",
                        thresholds.len(),
                        thresholds.len() + 1,
                        names.len()
                    )));
                }
                if thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
                    return Err(Error::InvalidPolicy("thresholds must lie in (0,1)".into()));
                }
                if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::InvalidPolicy("thresholds must ascend strictly".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Degrades `scores` according to this policy.
    pub fn apply(&self, scores: &ProbabilityVector) -> DegradedResponse {
        match self {
            ResponsePolicy::Full => DegradedResponse::Full(scores.clone()),
            ResponsePolicy::Top1 => {
                let (class, score) = scores.top();
                DegradedResponse::Top1 {
                    class,
                    score,
                    classes: scores.len(),
                }
            }
            ResponsePolicy::Quantized { buckets } => DegradedResponse::Quantized(
                scores
                    .scores()
                    .iter()
                    .map(|s| buckets[bucket_index(buckets, *s)].midpoint())
                    .collect(),
            ),
            ResponsePolicy::Descriptor { thresholds, names } => DegradedResponse::Descriptor(
                scores
                    .scores()
                    .iter()
                    .map(|s| names[descriptor_index(thresholds, *s)].clone())
                    .collect(),
            ),
            ResponsePolicy::LabelOnly => DegradedResponse::LabelOnly {
                class: scores.argmax(),
                classes: scores.len(),
            },
        }
    }

    /// Lifts a degraded response back to a full simplex usable as a
    /// distillation target: top-1 by max-entropy imputation, label-only as
    /// one-hot, quantized midpoints and descriptor interval midpoints by
    /// renormalization.
    pub fn lift(&self, response: &DegradedResponse) -> Result<ProbabilityVector> {
        match (self, response) {
            (_, DegradedResponse::Full(p)) => Ok(p.clone()),
            (_, DegradedResponse::Top1 {
                class,
                score,
                classes,
            }) => impute_full_simplex(*class, *score, *classes),
            (_, DegradedResponse::LabelOnly { class, classes }) => {
                ProbabilityVector::one_hot(*class, *classes)
            }
            (_, DegradedResponse::Quantized(values)) => ProbabilityVector::normalize(values),
            (ResponsePolicy::Descriptor { thresholds, names }, DegradedResponse::Descriptor(d)) => {
                let weights = d
                    .iter()
                    .map(|name| {
                        let i = names.iter().position(|n| n == name).ok_or_else(|| {
                            Error::InvalidPolicy(format!("unknown descriptor `{name}`"))
                        })?;
                        let lo = if i == 0 { 0.0 } else { thresholds[i - 1] };
                        let hi = if i == thresholds.len() { 1.0 } else { thresholds[i] };
                        Ok((lo + hi) / 2.0)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                ProbabilityVector::normalize(&weights)
            }
            (_, DegradedResponse::Descriptor(_)) => Err(Error::InvalidPolicy(
                "descriptor response needs a descriptor policy to lift".into(),
            )),
        }
    }
}

fn bucket_index(buckets: &[Bucket], s: f64) -> usize {
    buckets
        .iter()
        .position(|b| s >= b.lo && s < b.hi)
        .unwrap_or(buckets.len() - 1)
}

fn descriptor_index(thresholds: &[f64], s: f64) -> usize {
    thresholds.iter().take_while(|t| s >= **t).count()
}

/// What the API actually returns for one input.
#[derive(Debug, Clone, PartialEq)]
pub enum DegradedResponse {
    Full(ProbabilityVector),
    Top1 {
        class: usize,
        score: f64,
        classes: usize,
    },
    /// Bucket midpoints; need not sum to 1.
    Quantized(Vec<f64>),
    Descriptor(Vec<String>),
    LabelOnly {
        class: usize,
        classes: usize,
    },
}

impl DegradedResponse {
    pub fn classes(&self) -> usize {
        match self {
            DegradedResponse::Full(p) => p.len(),
            DegradedResponse::Top1 { classes, .. } | DegradedResponse::LabelOnly { classes, .. } => {
                *classes
            }
            DegradedResponse::Quantized(v) => v.len(),
            DegradedResponse::Descriptor(v) => v.len(),
        }
    }

    /// The class the response ranks highest, ties to the lowest index.
    /// Descriptor responses rank by position in `names`.
    pub fn top_class(&self, policy: &ResponsePolicy) -> usize {
        match self {
            DegradedResponse::Full(p) => p.argmax(),
            DegradedResponse::Top1 { class, .. } | DegradedResponse::LabelOnly { class, .. } => {
                *class
            }
            DegradedResponse::Quantized(v) => crate::simplex::argmax(v),
            DegradedResponse::Descriptor(d) => {
                let rank = |name: &String| match policy {
                    ResponsePolicy::Descriptor { names, .. } => {
                        names.iter().position(|n| n == name).unwrap_or(0) as f64
                    }
                    _ => 0.0,
                };
                let ranks: Vec<f64> = d.iter().map(rank).collect();
                crate::simplex::argmax(&ranks)
            }
        }
    }
}

/// Free-function form of [`ResponsePolicy::apply`].
pub fn apply_policy(scores: &ProbabilityVector, policy: &ResponsePolicy) -> DegradedResponse {
    policy.apply(scores)
}
