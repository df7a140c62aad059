use std::time::Duration;

use mexkit_core::ResponsePolicy;
use reqwest::blocking::Client;
use reqwest::StatusCode;

use super::protocol::*;
use crate::error::{MexError, Result};
use crate::oracle::{Meter, QueryRecord};

/// Blocking client for the gateway; cheap to clone and safe to share
/// across threads.
#[derive(Debug, Clone)]
pub struct GatewayClient {
    http: Client,
    url: String,
    key: String,
}

/// Records plus the billing summary of one request.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteReply {
    pub policy: ResponsePolicy,
    pub records: Vec<QueryRecord>,
    pub billing: Billing,
}

impl GatewayClient {
    pub fn new(endpoint: &str, key: &str) -> Result<Self> {
        let http = Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| MexError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            url: format!("{}{ROUTE}", endpoint.trim_end_matches('/')),
            key: key.to_string(),
        })
    }

    /// Sends a flattened batch of `input_len`-wide rows.
    pub fn remote_query(&self, inputs: &[f64], input_len: usize, token: Option<&str>) -> Result<RemoteReply> {
        if input_len == 0 || inputs.len() % input_len != 0 {
            return Err(MexError::InvalidInput {
                index: 0,
                reason: format!("batch length {} is not a multiple of {input_len}", inputs.len()),
            });
        }
        let req = PredictRequest {
            key: self.key.clone(),
            inputs: inputs.chunks(input_len).map(<[f64]>::to_vec).collect(),
            idempotency_token: token.map(str::to_string),
        };
        let resp = self
            .http
            .post(&self.url)
            .header(VERSION_HEADER, API_VERSION)
            .json(&req)
            .send()
            .map_err(|e| MexError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| MexError::Transport(e.to_string()))?;
        if status != StatusCode::OK {
            let detail = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .map_err(|_| MexError::Transport(format!("HTTP {status}: {text}")))?;
            return Err(match status {
                StatusCode::UNAUTHORIZED => MexError::Unauthorized,
                StatusCode::TOO_MANY_REQUESTS => MexError::RateLimited {
                    retry_after: detail.retry_after.unwrap_or(1.0),
                },
                StatusCode::PAYMENT_REQUIRED => MexError::BudgetExhausted {
                    requested: detail.requested.unwrap_or(0),
                    remaining: detail.remaining.unwrap_or(0),
                },
                StatusCode::SERVICE_UNAVAILABLE => MexError::ModelNotLoaded,
                StatusCode::BAD_REQUEST if detail.code == "invalid_input" => MexError::InvalidInput {
                    index: 0,
                    reason: detail.message,
                },
                _ => MexError::Transport(format!("HTTP {status}: {}", detail.message)),
            });
        }
        let body: PredictResponse =
            serde_json::from_str(&text).map_err(|e| MexError::Transport(format!("bad response body: {e}")))?;
        if body.records.len() != body.predictions.len() {
            return Err(MexError::Transport("record count mismatch".into()));
        }
        let policy_kind = body.policy.identifier();
        let records = body
            .records
            .iter()
            .zip(&body.predictions)
            .map(|(meta, pred)| {
                Ok(QueryRecord {
                    input_id: meta.input_id.clone(),
                    round: meta.round,
                    policy_kind: policy_kind.clone(),
                    response: from_predictions(pred, &body.policy, body.classes)?,
                    cost: meta.cost,
                    timestamp: meta.timestamp,
                    meter: Meter::Attack,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RemoteReply {
            policy: body.policy,
            records,
            billing: body.billing,
        })
    }
}
