use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Adversarial-to-clean proportion within each query batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub adversarial: usize,
    pub clean: usize,
}

impl Ratio {
    pub fn new(adversarial: usize, clean: usize) -> Self {
        Self { adversarial, clean }
    }

    /// Splits `batch` into `(adversarial, clean)` counts. The batch must
    /// divide evenly by `adversarial + clean`.
    pub fn split(&self, batch: usize) -> Result<(usize, usize)> {
        let parts = self.adversarial + self.clean;
        if parts == 0 || batch % parts != 0 {
            return Err(Error::RatioIndivisible {
                batch,
                adversarial: self.adversarial,
                clean: self.clean,
            });
        }
        let unit = batch / parts;
        Ok((unit * self.adversarial, unit * self.clean))
    }
}

impl core::str::FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(alloc::format!("ratio '{s}' is not of the form A:C"));
        let (a, c) = s.split_once(':').ok_or_else(bad)?;
        Ok(Self::new(a.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
    }
}

/// Where a row of a mixed batch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixedItem {
    Adversarial(usize),
    Clean(usize),
}

/// Interleaves adversarial and clean rows in a seed-determined order.
pub fn mix_batch(adversarial: usize, clean: usize, seed: u64) -> Vec<MixedItem> {
    let mut items: Vec<MixedItem> = (0..adversarial)
        .map(MixedItem::Adversarial)
        .chain((0..clean).map(MixedItem::Clean))
        .collect();
    items.shuffle(&mut rng::seeded(seed));
    items
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits() {
        assert_eq!(Ratio::new(1, 1).split(64).unwrap(), (32, 32));
        assert_eq!(Ratio::new(3, 1).split(64).unwrap(), (48, 16));
        assert!(matches!(Ratio::new(1, 5).split(64), Err(Error::RatioIndivisible { .. })));
        assert!(Ratio::new(0, 0).split(64).is_err());
    }

    #[test]
    fn parses() {
        assert_eq!("3:1".parse::<Ratio>().unwrap(), Ratio::new(3, 1));
        assert!("3-1".parse::<Ratio>().is_err());
    }

    #[test]
    fn mix_keeps_every_item() {
        let m = mix_batch(3, 2, 9);
        assert_eq!(m.len(), 5);
        assert_eq!(m.iter().filter(|i| matches!(i, MixedItem::Adversarial(_))).count(), 3);
        assert_eq!(m, mix_batch(3, 2, 9));
    }
}
