use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::nn::InputShape;
use crate::rng::{self, Rng};

/// Random crop with zero padding followed by a random horizontal flip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Maximum shift in pixels along each axis.
    #[serde(default = "default_padding")]
    pub padding: usize,
    #[serde(default = "default_flip")]
    pub flip: bool,
}

fn default_padding() -> usize {
    2
}

fn default_flip() -> bool {
    true
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            padding: default_padding(),
            flip: default_flip(),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

pub fn augment(input: &[f64], shape: InputShape, cfg: &AugmentConfig, seed: u64) -> Vec<f64> {
    augment_with(input, shape, cfg, &mut rng::seeded(seed))
}

pub(crate) fn augment_with(
    input: &[f64],
    shape: InputShape,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Vec<f64> {
    if !cfg.enabled {
        return input.to_vec();
    }
    let InputShape { channels, height, width } = shape;
    let pad = cfg.padding as isize;
    let (dy, dx) = if pad > 0 {
        (rng.gen_range(-pad..=pad), rng.gen_range(-pad..=pad))
    } else {
        (0, 0)
    };
    let flip = cfg.flip && rng.gen_bool(0.5);
    let mut out = vec![0.0; input.len()];
    for c in 0..channels {
        for y in 0..height {
            let sy = y as isize + dy;
            if sy < 0 || sy >= height as isize {
                continue;
            }
            for x in 0..width {
                let tx = if flip { width - 1 - x } else { x };
                let sx = tx as isize + dx;
                if sx < 0 || sx >= width as isize {
                    continue;
                }
                out[(c * height + y) * width + x] =
                    input[(c * height + sy as usize) * width + sx as usize];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(shape: InputShape) -> Vec<f64> {
        (0..shape.len()).map(|i| (i % 17) as f64 / 16.0).collect()
    }

    #[test]
    fn disabled_is_identity() {
        let shape = InputShape::image(1, 4, 4);
        let x = ramp(shape);
        assert_eq!(augment(&x, shape, &AugmentConfig::disabled(), 3), x);
    }

    #[test]
    fn different_seeds_differ() {
        let shape = InputShape::image(1, 8, 8);
        let x = ramp(shape);
        let cfg = AugmentConfig::default();
        assert_ne!(augment(&x, shape, &cfg, 1), augment(&x, shape, &cfg, 2));
    }

    #[test]
    fn flip_only_mirrors_rows() {
        let shape = InputShape::image(1, 1, 3);
        let cfg = AugmentConfig { enabled: true, padding: 0, flip: true };
        let outs: Vec<Vec<f64>> = (0..16).map(|s| augment(&[0.1, 0.2, 0.3], shape, &cfg, s)).collect();
        assert!(outs.iter().all(|o| *o == [0.1, 0.2, 0.3] || *o == [0.3, 0.2, 0.1]));
        assert!(outs.iter().any(|o| *o == [0.3, 0.2, 0.1]));
    }

    proptest! {
        #[test]
        fn shape_and_range_preserved(seed in any::<u64>(), c in 1usize..3, h in 1usize..7, w in 1usize..7) {
            let shape = InputShape::image(c, h, w);
            let x = ramp(shape);
            let y = augment(&x, shape, &AugmentConfig::default(), seed);
            prop_assert_eq!(y.len(), x.len());
            prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
