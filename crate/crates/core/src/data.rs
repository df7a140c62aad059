//! In-memory datasets, stratified splitting and a synthetic image task.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::InputShape;
use crate::rng;

/// Whether features are real-valued in `[0, 1]` (images) or discrete tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Discrete,
}

/// Row-major feature matrix with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub shape: InputShape,
    pub features: Vec<f64>,
    pub labels: Option<Vec<usize>>,
    pub classes: usize,
    pub kind: FeatureKind,
}

impl Dataset {
    pub fn new(
        shape: InputShape,
        features: Vec<f64>,
        labels: Option<Vec<usize>>,
        classes: usize,
    ) -> Result<Self> {
        let d = shape.len();
        if d == 0 || features.len() % d != 0 {
            return Err(Error::ShapeMismatch {
                expected: d,
                found: features.len(),
            });
        }
        let n = features.len() / d;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::LengthMismatch { left: l.len(), right: n });
            }
            if l.iter().any(|c| *c >= classes) {
                return Err(Error::InvalidConfig("label outside class range".into()));
            }
        }
        let kind = if features.iter().all(|v| (0.0..=1.0).contains(v)) {
            FeatureKind::Continuous
        } else {
            FeatureKind::Discrete
        };
        Ok(Self {
            shape,
            features,
            labels,
            classes,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features[i * d..(i + 1) * d]
    }

    /// Concatenated rows for `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            shape: self.shape,
            features: self.gather(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            classes: self.classes,
            kind: self.kind,
        }
    }
}

/// Result of [`split_dataset`]: the reference part used for queries and the
/// held-out test part, plus the source indices of each.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub reference: Dataset,
    pub test: Dataset,
    pub reference_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Disjoint, covering split with `fraction` of the rows in the reference part.
///
/// Labeled data is stratified: each class contributes its share, and the
/// rounding remainder is handed out by largest fractional part so the total
/// reference size is `round(fraction * n)`.
pub fn split_dataset(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig("split fraction must lie in (0,1)".into()));
    }
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    let mut rng = rng::seeded(seed);
    let groups: Vec<Vec<usize>> = match &dataset.labels {
        Some(labels) => {
            let mut g = vec![Vec::new(); dataset.classes];
            for (i, &c) in labels.iter().enumerate() {
                g[c].push(i);
            }
            g.retain(|v| !v.is_empty());
            if let Some(v) = g.iter().find(|v| v.len() < 2) {
                return Err(Error::TooSmall { class: labels[v[0]] });
            }
            g
        }
        None => vec![(0..n).collect()],
    };
    let target = libm::round(fraction * n as f64) as usize;
    let mut quotas: Vec<usize> = groups
        .iter()
        .map(|g| libm::floor(fraction * g.len() as f64) as usize)
        .collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let frac = |k: usize| fraction * groups[k].len() as f64 - quotas[k] as f64;
    order.sort_by(|&a, &b| frac(b).partial_cmp(&frac(a)).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut missing = target.saturating_sub(quotas.iter().sum());
    for k in order {
        if missing == 0 {
            break;
        }
        if quotas[k] < groups[k].len() {
            quotas[k] += 1;
            missing -= 1;
        }
    }

    let mut reference_indices = Vec::with_capacity(target);
    let mut test_indices = Vec::with_capacity(n - target);
    for (mut g, q) in groups.into_iter().zip(quotas) {
        g.shuffle(&mut rng);
        reference_indices.extend_from_slice(&g[..q]);
        test_indices.extend_from_slice(&g[q..]);
    }
    reference_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(Split {
        reference: dataset.subset(&reference_indices),
        test: dataset.subset(&test_indices),
        reference_indices,
        test_indices,
    })
}

/// Parameters of the synthetic "glyph" image task: each class is a fixed
/// left-right symmetric random pattern (so horizontal flips keep the
/// class), rendered at a jittered position and contrast over
/// a noisy background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlyphConfig {
    pub classes: usize,
    pub side: usize,
    pub glyph: usize,
    pub jitter: usize,
    pub noise: f64,
    /// Distinct patterns per class; each sample draws one.
    pub variants: usize,
    /// Seed for the class templates; samples use their own seed.
    pub template_seed: u64,
}

impl Default for GlyphConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            side: 12,
            glyph: 6,
            jitter: 2,
            noise: 0.12,
            variants: 1,
            template_seed: 0x61797068,
        }
    }
}

impl GlyphConfig {
    pub fn shape(&self) -> InputShape {
        InputShape::image(1, self.side, self.side)
    }

    fn templates(&self) -> Vec<Vec<f64>> {
        let mut rng = rng::seeded(self.template_seed);
        let g = self.glyph;
        (0..self.classes * self.variants.max(1))
            .map(|_| {
                let mut t = vec![0.0; g * g];
                for y in 0..g {
                    for x in 0..g.div_ceil(2) {
                        if rng.gen_bool(0.45) {
                            t[y * g + x] = 1.0;
                            t[y * g + g - 1 - x] = 1.0;
                        }
                    }
                }
                t
            })
            .collect()
    }

    /// `n` samples with balanced labels (`i % classes`).
    pub fn generate(&self, n: usize, seed: u64) -> Dataset {
        let templates = self.templates();
        let mut rng = rng::seeded(seed);
        let (s, g) = (self.side, self.glyph);
        let base = (s - g) / 2;
        let mut features = Vec::with_capacity(n * s * s);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.classes;
            let v = c * self.variants.max(1) + rng.gen_range(0..self.variants.max(1));
            let bg: f64 = rng.gen_range(0.0..0.3);
            let amp: f64 = rng.gen_range(0.5..0.7);
            let j = self.jitter as isize;
            let oy = base as isize + rng.gen_range(-j..=j);
            let ox = base as isize + rng.gen_range(-j..=j);
            let mut img = vec![bg; s * s];
            for y in 0..g {
                for x in 0..g {
                    let (py, px) = (oy + y as isize, ox + x as isize);
                    if py >= 0 && px >= 0 && (py as usize) < s && (px as usize) < s {
                        img[py as usize * s + px as usize] += amp * templates[v][y * g + x];
                    }
                }
            }
            for v in img.iter_mut() {
                *v = (*v + rng.gen_range(-self.noise..=self.noise)).clamp(0.0, 1.0);
            }
            features.extend(img);
            labels.push(c);
        }
        Dataset::new(self.shape(), features, Some(labels), self.classes)
            .expect("generator emits consistent shapes")
    }
}
