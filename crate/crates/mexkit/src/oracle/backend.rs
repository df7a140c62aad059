use mexkit_core::nn::Network;
use mexkit_core::ProbabilityVector;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// A model the oracle can put behind its metering.
pub trait VictimBackend: Send + Sync {
    fn num_classes(&self) -> usize;
    fn input_len(&self) -> usize;
    /// Identifies the weights; part of every cache key.
    fn version(&self) -> &str;
    /// Confidence vectors for `inputs.len() / input_len()` rows.
    fn predict_batch(&self, inputs: &[f64]) -> Result<Vec<ProbabilityVector>>;
}

/// A local network served as the victim.
#[derive(Debug, Clone)]
pub struct NetworkVictim {
    net: Network,
    version: String,
}

impl NetworkVictim {
    pub fn new(net: Network) -> Self {
        let mut h = Sha256::new();
        h.update(net.spec().architecture.as_bytes());
        for p in net.params() {
            h.update(p.to_le_bytes());
        }
        let version = format!("{}@{}", net.spec().architecture, &hex::encode(h.finalize())[..16]);
        Self { net, version }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }
}

impl VictimBackend for NetworkVictim {
    fn num_classes(&self) -> usize {
        self.net.classes()
    }

    fn input_len(&self) -> usize {
        self.net.input_len()
    }

    fn version(&self) -> &str {
        &self.version
    }

    fn predict_batch(&self, inputs: &[f64]) -> Result<Vec<ProbabilityVector>> {
        Ok(self.net.probabilities(inputs))
    }
}
