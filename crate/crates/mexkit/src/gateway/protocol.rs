//! JSON wire format, version 1.
//!
//! `POST /v1/predict` with header `x-api-version: 1` and body
//!
//! ```json
//! {"key": "alice", "inputs": [[0.1, 0.5, ...], ...], "idempotency_token": "optional"}
//! ```
//!
//! A success (200) body:
//!
//! ```json
//! {
//!   "policy": {"kind": "full"},
//!   "classes": 3,
//!   "predictions": [[{"class": 0, "confidence": 0.7}, {"class": 1, "confidence": 0.2}, ...], ...],
//!   "records": [{"input_id": "9f..", "round": 0, "timestamp": 1, "cost": 1.0}, ...],
//!   "billing": {"cost": 1.0, "remaining": 127}
//! }
//! ```
//!
//! Each prediction lists `{class, confidence}` for every class under `full`
//! and `quantized`, only the top class under `top1`, `{class, descriptor}`
//! for every class under `descriptor`, and a bare `{class}` under
//! `label_only`.
//!
//! Errors carry `{"error": {"code": ..., "message": ...}}` with status 400
//! (`bad_request`, `invalid_input`), 401 (`unauthorized`), 402
//! (`budget_exhausted`), 429 (`rate_limited`, plus `retry_after` seconds and
//! a `Retry-After` header) or 503 (`model_not_loaded`).

use mexkit_core::{DegradedResponse, ProbabilityVector, ResponsePolicy};
use serde::{Deserialize, Serialize};

use crate::error::{MexError, Result};

pub const API_VERSION: &str = "1";
pub const VERSION_HEADER: &str = "x-api-version";
pub const ROUTE: &str = "/v1/predict";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub key: String,
    pub inputs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub input_id: String,
    pub round: u64,
    pub timestamp: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Billing {
    pub cost: f64,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub policy: ResponsePolicy,
    pub classes: usize,
    pub predictions: Vec<Vec<Prediction>>,
    pub records: Vec<RecordMeta>,
    pub billing: Billing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after: Option<f64>,
    /// Set with `budget_exhausted`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

pub fn to_predictions(r: &DegradedResponse) -> Vec<Prediction> {
    let scored = |v: &[f64]| {
        v.iter()
            .enumerate()
            .map(|(class, c)| Prediction {
                class,
                confidence: Some(*c),
                descriptor: None,
            })
            .collect()
    };
    match r {
        DegradedResponse::Full(p) => scored(p.scores()),
        DegradedResponse::Quantized(v) => scored(v),
        DegradedResponse::Top1 { class, score, .. } => vec![Prediction {
            class: *class,
            confidence: Some(*score),
            descriptor: None,
        }],
        DegradedResponse::Descriptor(names) => names
            .iter()
            .enumerate()
            .map(|(class, d)| Prediction {
                class,
                confidence: None,
                descriptor: Some(d.clone()),
            })
            .collect(),
        DegradedResponse::LabelOnly { class, .. } => vec![Prediction {
            class: *class,
            confidence: None,
            descriptor: None,
        }],
    }
}

pub fn from_predictions(p: &[Prediction], policy: &ResponsePolicy, classes: usize) -> Result<DegradedResponse> {
    let bad = || MexError::Transport(format!("malformed {} prediction", policy.kind()));
    let dense = |p: &[Prediction]| -> Result<Vec<f64>> {
        if p.len() != classes || p.iter().enumerate().any(|(i, e)| e.class != i) {
            return Err(bad());
        }
        p.iter().map(|e| e.confidence.ok_or_else(bad)).collect()
    };
    fn single(p: &[Prediction], classes: usize) -> Option<&Prediction> {
        match p {
            [one] if one.class < classes => Some(one),
            _ => None,
        }
    }
    Ok(match policy {
        ResponsePolicy::Full => DegradedResponse::Full(ProbabilityVector::new(dense(p)?)?),
        ResponsePolicy::Quantized { .. } => DegradedResponse::Quantized(dense(p)?),
        ResponsePolicy::Top1 => {
            let one = single(p, classes).ok_or_else(bad)?;
            DegradedResponse::Top1 {
                class: one.class,
                score: one.confidence.ok_or_else(bad)?,
                classes,
            }
        }
        ResponsePolicy::LabelOnly => DegradedResponse::LabelOnly {
            class: single(p, classes).ok_or_else(bad)?.class,
            classes,
        },
        ResponsePolicy::Descriptor { .. } => {
            if p.len() != classes {
                return Err(bad());
            }
            DegradedResponse::Descriptor(
                p.iter()
                    .map(|e| e.descriptor.clone().ok_or_else(bad))
                    .collect::<Result<_>>()?,
            )
        }
    })
}
