use mexkit_core::{DegradedResponse, ProbabilityVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{MexError, Result};

/// Which budget a query is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Meter {
    Attack,
    Evaluation,
}

/// Hex SHA-256 of the input's little-endian `f64` bytes.
pub fn input_id(input: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in input {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// JSON form of a response: numbers for `full` and `quantized`, a
/// length-`m` array that is null except at the top class for `top1`, names
/// for `descriptor`, and the class index as a string for `label_only`.
pub fn encode_response(r: &DegradedResponse) -> Value {
    match r {
        DegradedResponse::Full(p) => Value::from(p.scores().to_vec()),
        DegradedResponse::Quantized(v) => Value::from(v.clone()),
        DegradedResponse::Top1 { class, score, classes } => Value::Array(
            (0..*classes)
                .map(|j| if j == *class { Value::from(*score) } else { Value::Null })
                .collect(),
        ),
        DegradedResponse::Descriptor(names) => Value::from(names.clone()),
        DegradedResponse::LabelOnly { class, .. } => Value::String(class.to_string()),
    }
}

/// Inverse of [`encode_response`]. `policy_kind` is the policy identifier
/// (only its prefix matters); `classes` is needed for `label_only`.
pub fn decode_response(v: &Value, policy_kind: &str, classes: usize) -> Result<DegradedResponse> {
    let bad = || MexError::Config(format!("malformed {policy_kind} response: {v}"));
    let kind = policy_kind.split(':').next().unwrap_or_default();
    let numbers = || -> Result<Vec<f64>> {
        v.as_array()
            .ok_or_else(bad)?
            .iter()
            .map(|x| x.as_f64().ok_or_else(bad))
            .collect()
    };
    Ok(match kind {
        "full" => DegradedResponse::Full(ProbabilityVector::new(numbers()?)?),
        "quantized" => DegradedResponse::Quantized(numbers()?),
        "top1" => {
            let arr = v.as_array().ok_or_else(bad)?;
            let mut found = None;
            for (j, x) in arr.iter().enumerate() {
                if let Some(s) = x.as_f64() {
                    if found.is_some() {
                        return Err(bad());
                    }
                    found = Some((j, s));
                }
            }
            let (class, score) = found.ok_or_else(bad)?;
            DegradedResponse::Top1 {
                class,
                score,
                classes: arr.len(),
            }
        }
        "descriptor" => DegradedResponse::Descriptor(
            v.as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|x| x.as_str().map(str::to_string).ok_or_else(bad))
                .collect::<Result<_>>()?,
        ),
        "label_only" => DegradedResponse::LabelOnly {
            class: v.as_str().and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            classes,
        },
        _ => return Err(bad()),
    })
}

/// One billed (or cache-served) API interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub input_id: String,
    pub round: u64,
    pub policy_kind: String,
    pub response: DegradedResponse,
    /// Zero exactly when served from the cache.
    pub cost: f64,
    pub timestamp: u64,
    pub meter: Meter,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    input_id: String,
    round: u64,
    policy_kind: String,
    response: Value,
    classes: usize,
    cost: f64,
    timestamp: u64,
    meter: Meter,
}

impl QueryRecord {
    pub fn cached(&self) -> bool {
        self.cost == 0.0
    }

    /// One JSON line of the query log.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&RecordLine {
            input_id: self.input_id.clone(),
            round: self.round,
            policy_kind: self.policy_kind.clone(),
            response: encode_response(&self.response),
            classes: self.response.classes(),
            cost: self.cost,
            timestamp: self.timestamp,
            meter: self.meter,
        })
        .expect("records serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let r: RecordLine =
            serde_json::from_str(line).map_err(|e| MexError::Config(format!("bad log line: {e}")))?;
        Ok(Self {
            response: decode_response(&r.response, &r.policy_kind, r.classes)?,
            input_id: r.input_id,
            round: r.round,
            policy_kind: r.policy_kind,
            cost: r.cost,
            timestamp: r.timestamp,
            meter: r.meter,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mexkit_core::ResponsePolicy;

    fn roundtrip(policy: &ResponsePolicy, p: &[f64]) {
        let r = policy.apply(&ProbabilityVector::new(p.to_vec()).unwrap());
        let back = decode_response(&encode_response(&r), &policy.identifier(), p.len()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn every_policy_roundtrips() {
        let p = [0.55, 0.3, 0.15];
        for policy in [
            ResponsePolicy::Full,
            ResponsePolicy::Top1,
            ResponsePolicy::default_quantized(),
            ResponsePolicy::coarse_quantized(),
            ResponsePolicy::default_descriptor(),
            ResponsePolicy::LabelOnly,
        ] {
            roundtrip(&policy, &p);
        }
    }

    #[test]
    fn shapes() {
        let r = DegradedResponse::Top1 { class: 1, score: 0.6, classes: 3 };
        assert_eq!(encode_response(&r).to_string(), "[null,0.6,null]");
        let r = DegradedResponse::LabelOnly { class: 2, classes: 3 };
        assert_eq!(encode_response(&r).to_string(), "\"2\"");
    }

    #[test]
    fn ids_are_content_hashes() {
        assert_eq!(input_id(&[0.5, 0.25]), input_id(&[0.5, 0.25]));
        assert_ne!(input_id(&[0.5, 0.25]), input_id(&[0.25, 0.5]));
        assert_eq!(input_id(&[]).len(), 64);
    }

    #[test]
    fn log_line_roundtrip() {
        let rec = QueryRecord {
            input_id: input_id(&[0.1]),
            round: 3,
            policy_kind: "label_only".into(),
            response: DegradedResponse::LabelOnly { class: 4, classes: 7 },
            cost: 1.0,
            timestamp: 9,
            meter: Meter::Attack,
        };
        assert_eq!(QueryRecord::from_json_line(&rec.to_json_line()).unwrap(), rec);
    }
}
