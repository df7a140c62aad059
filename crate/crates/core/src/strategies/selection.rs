use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng;

/// Draws `k` distinct pool indices outside `already_used`, uniformly and
/// reproducibly for a given `seed`.
pub fn random_select(
    pool_size: usize,
    k: usize,
    seed: u64,
    already_used: &BTreeSet<usize>,
) -> Result<Vec<usize>> {
    let available: Vec<usize> = (0..pool_size).filter(|i| !already_used.contains(i)).collect();
    if k > available.len() {
        return Err(Error::PoolExhausted {
            requested: k,
            available: available.len(),
        });
    }
    let mut rng = rng::seeded(seed);
    Ok(index::sample(&mut rng, available.len(), k)
        .into_iter()
        .map(|i| available[i])
        .collect())
}
