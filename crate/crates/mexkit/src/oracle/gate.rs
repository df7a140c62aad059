use serde::{Deserialize, Serialize};

use mexkit_core::nn::InputShape;

/// Decides whether the API accepts an input. `Err` carries the reason.
pub trait ValidityGate: Send + Sync {
    fn check(&self, input: &[f64]) -> std::result::Result<(), String>;
}

impl<F> ValidityGate for F
where
    F: Fn(&[f64]) -> std::result::Result<(), String> + Send + Sync,
{
    fn check(&self, input: &[f64]) -> std::result::Result<(), String> {
        self(input)
    }
}

/// Default gate: rejects near-constant inputs (variance below a floor) and,
/// for images, inputs that look like independent per-pixel noise.
///
/// The noise test compares the mean squared difference between
/// horizontally and vertically adjacent pixels with twice the variance. For
/// spatially independent pixels that ratio is about 1; natural images sit
/// well below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceGate {
    pub variance_floor: f64,
    /// Roughness ratio at or above which an image counts as noise. `None`
    /// disables the test.
    pub max_roughness: Option<f64>,
    #[serde(skip)]
    pub shape: Option<InputShape>,
}

impl Default for VarianceGate {
    fn default() -> Self {
        Self {
            variance_floor: 1e-4,
            max_roughness: Some(0.8),
            shape: None,
        }
    }
}

impl VarianceGate {
    pub fn for_shape(shape: InputShape) -> Self {
        Self {
            shape: Some(shape),
            ..Self::default()
        }
    }
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Mean squared neighbour difference over `2 * variance`.
pub fn roughness(x: &[f64], shape: InputShape) -> f64 {
    let var = variance(x);
    if var == 0.0 {
        return 0.0;
    }
    let (h, w) = (shape.height, shape.width);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..shape.channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let v = plane[y * w + xx];
                if xx + 1 < w {
                    let d = v - plane[y * w + xx + 1];
                    total += d * d;
                    count += 1;
                }
                if y + 1 < h {
                    let d = v - plane[(y + 1) * w + xx];
                    total += d * d;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    total / count as f64 / (2.0 * var)
}

impl ValidityGate for VarianceGate {
    fn check(&self, input: &[f64]) -> std::result::Result<(), String> {
        if input.is_empty() {
            return Err("empty input".into());
        }
        let var = variance(input);
        if var < self.variance_floor {
            return Err(format!("feature variance {var:.3e} below floor {:.3e}", self.variance_floor));
        }
        if let (Some(limit), Some(shape)) = (self.max_roughness, self.shape) {
            if shape.height > 1 && shape.width > 1 && shape.len() == input.len() {
                let r = roughness(input, shape);
                if r >= limit {
                    return Err(format!("input looks like random noise (roughness {r:.2})"));
                }
            }
        }
        Ok(())
    }
}
