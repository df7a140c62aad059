//! Small feed-forward classifiers with hand-written backpropagation.
//!
//! Parameters live in one flat `Vec<f64>` so optimizers, checkpoints and
//! finite-difference checks all see the same layout. Every architecture
//! ends in a single dense layer producing one logit per class; the softmax
//! is applied by the loss or by [`Network::probabilities`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{axpy, dot, sqrt};
use crate::rng;
use crate::simplex::{argmax, ProbabilityVector};

/// Channel-major image shape. Flat feature vectors use `1 x 1 x len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn flat(len: usize) -> Self {
        Self { channels: 1, height: 1, width: len }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parsed architecture id.
///
/// * `linear`: one dense layer.
/// * `mlp-H1-H2...`: ReLU hidden layers, then the dense head.
/// * `cnn-C1-C2...`: per entry a 3x3 same-padded convolution, ReLU and
///   2x2 max-pool, then the dense head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    Mlp(Vec<usize>),
    Cnn(Vec<usize>),
}

impl Architecture {
    pub fn parse(id: &str) -> Result<Self> {
        let unknown = || Error::UnknownArchitecture(id.to_string());
        let mut parts = id.split('-');
        let family = parts.next().ok_or_else(unknown)?;
        let widths = parts
            .map(|p| p.parse::<usize>().ok().filter(|w| *w > 0).ok_or_else(unknown))
            .collect::<Result<Vec<_>>>()?;
        match family {
            "linear" if widths.is_empty() => Ok(Architecture::Linear),
            "mlp" if !widths.is_empty() => Ok(Architecture::Mlp(widths)),
            "cnn" if !widths.is_empty() => Ok(Architecture::Cnn(widths)),
            _ => Err(unknown()),
        }
    }
}

/// Where initial weights come from. Pretrained sources are resolved by the
/// caller (e.g. a checkpoint registry keyed by architecture id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    Scratch,
    Pretrained { source: String },
}

impl Default for Init {
    fn default() -> Self {
        Init::Scratch
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: String,
    pub input: InputShape,
    pub classes: usize,
    #[serde(default)]
    pub init: Init,
}

impl ModelSpec {
    pub fn new(architecture: &str, input: InputShape, classes: usize) -> Self {
        Self {
            architecture: architecture.to_string(),
            input,
            classes,
            init: Init::Scratch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    /// Weights stored input-major: `w[k * out + o]`.
    Dense { inp: usize, out: usize, w: usize, b: usize },
    /// 3x3, stride 1, zero padding 1. Weights `w[o * cin * 9 + q]`.
    Conv { cin: usize, cout: usize, h: usize, wd: usize, w: usize, b: usize },
    Relu { len: usize },
    MaxPool { c: usize, h: usize, wd: usize },
}

impl Layer {
    fn in_len(&self) -> usize {
        match *self {
            Layer::Dense { inp, .. } => inp,
            Layer::Conv { cin, h, wd, .. } => cin * h * wd,
            Layer::Relu { len } => len,
            Layer::MaxPool { c, h, wd } => c * h * wd,
        }
    }

    fn out_len(&self) -> usize {
        match *self {
            Layer::Dense { out, .. } => out,
            Layer::Conv { cout, h, wd, .. } => cout * h * wd,
            Layer::Relu { len } => len,
            Layer::MaxPool { c, h, wd } => c * (h / 2) * (wd / 2),
        }
    }
}

/// Activations recorded during a forward pass, consumed by
/// [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    n: usize,
    /// Input to each layer, batch-major.
    inputs: Vec<Vec<f64>>,
    /// im2col buffers for convolution layers.
    cols: Vec<Vec<f64>>,
    /// Winning input offsets for max-pool layers.
    pool: Vec<Vec<u32>>,
    logits: Vec<f64>,
}

impl Tape {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn batch(&self) -> usize {
        self.n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
    head: usize,
}

impl Network {
    /// Builds a network with He-normal weights and zero biases.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(spec)?;
        let mut rng = rng::seeded(seed);
        for layer in &net.layers {
            let (w, count, fan_in) = match *layer {
                Layer::Dense { inp, out, w, .. } => (w, inp * out, inp),
                Layer::Conv { cin, cout, w, .. } => (w, cout * cin * 9, cin * 9),
                _ => continue,
            };
            let normal = Normal::new(0.0, sqrt(2.0 / fan_in as f64)).expect("positive std");
            for p in &mut net.params[w..w + count] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(net)
    }

    /// Same layout as [`Network::new`] with every parameter zero.
    pub fn zeroed(spec: &ModelSpec) -> Result<Self> {
        if spec.classes < 2 {
            return Err(Error::InvalidConfig("a classifier needs at least two classes".into()));
        }
        if spec.input.is_empty() {
            return Err(Error::InvalidConfig("empty input shape".into()));
        }
        let arch = Architecture::parse(&spec.architecture)?;
        let mut layers = Vec::new();
        let mut offset = 0usize;
        let mut dense = |layers: &mut Vec<Layer>, inp: usize, out: usize| {
            layers.push(Layer::Dense { inp, out, w: offset, b: offset + inp * out });
            offset += inp * out + out;
        };
        let mut features = spec.input.len();
        match arch {
            Architecture::Linear => {}
            Architecture::Mlp(hidden) => {
                for h in hidden {
                    dense(&mut layers, features, h);
                    layers.push(Layer::Relu { len: h });
                    features = h;
                }
            }
            Architecture::Cnn(channels) => {
                let (mut c, mut h, mut w) = (spec.input.channels, spec.input.height, spec.input.width);
                let mut conv_offset = 0usize;
                for cout in channels {
                    if h < 2 || w < 2 {
                        return Err(Error::UnknownArchitecture(format!(
                            "{}: too many pooling stages for {}x{} input",
                            spec.architecture, spec.input.height, spec.input.width
                        )));
                    }
                    layers.push(Layer::Conv {
                        cin: c,
                        cout,
                        h,
                        wd: w,
                        w: conv_offset,
                        b: conv_offset + cout * c * 9,
                    });
                    conv_offset += cout * c * 9 + cout;
                    layers.push(Layer::Relu { len: cout * h * w });
                    layers.push(Layer::MaxPool { c: cout, h, wd: w });
                    c = cout;
                    h /= 2;
                    w /= 2;
                }
                // `dense` captured `offset` before the conv layers were known.
                let shift = conv_offset;
                features = c * h * w;
                layers.push(Layer::Dense {
                    inp: features,
                    out: spec.classes,
                    w: shift,
                    b: shift + features * spec.classes,
                });
                let total = shift + features * spec.classes + spec.classes;
                let head = layers.len() - 1;
                return Ok(Self {
                    spec: spec.clone(),
                    layers,
                    params: vec![0.0; total],
                    head,
                });
            }
        }
        dense(&mut layers, features, spec.classes);
        let head = layers.len() - 1;
        Ok(Self {
            spec: spec.clone(),
            layers,
            params: vec![0.0; offset],
            head,
        })
    }

    /// Rebuilds a network from a flat parameter blob.
    pub fn from_params(spec: &ModelSpec, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeroed(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch {
                expected: net.params.len(),
                found: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.len()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Width of the penultimate representation (input of the dense head).
    pub fn embedding_len(&self) -> usize {
        self.layers[self.head].in_len()
    }

    fn batch_of(&self, inputs: &[f64]) -> usize {
        let d = self.input_len();
        assert!(
            inputs.len() % d == 0,
            "input length {} is not a multiple of {}",
            inputs.len(),
            d
        );
        inputs.len() / d
    }

    /// Logits for a batch of flattened inputs, `n x classes`.
    pub fn logits(&self, inputs: &[f64]) -> Vec<f64> {
        let n = self.batch_of(inputs);
        let mut x = inputs.to_vec();
        for layer in &self.layers {
            x = self.layer_forward(layer, &x, n, None, None);
        }
        x
    }

    /// Penultimate activations, `n x embedding_len`.
    pub fn embed(&self, inputs: &[f64]) -> Vec<f64> {
        let n = self.batch_of(inputs);
        let mut x = inputs.to_vec();
        for layer in &self.layers[..self.head] {
            x = self.layer_forward(layer, &x, n, None, None);
        }
        x
    }

    pub fn probabilities(&self, inputs: &[f64]) -> Vec<ProbabilityVector> {
        self.logits(inputs)
            .chunks(self.classes())
            .map(ProbabilityVector::from_logits)
            .collect()
    }

    /// Predicted class per input, ties to the lowest index.
    pub fn predict(&self, inputs: &[f64]) -> Vec<usize> {
        self.logits(inputs).chunks(self.classes()).map(argmax).collect()
    }

    pub fn forward(&self, inputs: &[f64]) -> Tape {
        let n = self.batch_of(inputs);
        let mut tape = Tape {
            n,
            inputs: Vec::with_capacity(self.layers.len()),
            cols: Vec::new(),
            pool: Vec::new(),
            logits: Vec::new(),
        };
        let mut x = inputs.to_vec();
        for layer in &self.layers {
            let mut cols = None;
            let mut pool = None;
            let y = self.layer_forward(layer, &x, n, Some(&mut cols), Some(&mut pool));
            if let Some(c) = cols {
                tape.cols.push(c);
            }
            if let Some(p) = pool {
                tape.pool.push(p);
            }
            tape.inputs.push(x);
            x = y;
        }
        tape.logits = x;
        tape
    }

    /// Backpropagates `dlogits` (`n x classes`) through the recorded pass,
    /// accumulating parameter gradients into `grads`. Returns the gradient
    /// with respect to the inputs when `want_input` is set.
    pub fn backward(
        &self,
        tape: &Tape,
        dlogits: &[f64],
        grads: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        assert_eq!(grads.len(), self.params.len());
        assert_eq!(dlogits.len(), tape.n * self.classes());
        let n = tape.n;
        let mut dy = dlogits.to_vec();
        let mut conv_i = tape.cols.len();
        let mut pool_i = tape.pool.len();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[li];
            let need_dx = li > 0 || want_input;
            dy = match *layer {
                Layer::Dense { inp, out, w, b } => {
                    let weights = &self.params[w..w + inp * out];
                    let mut dx = if need_dx { vec![0.0; n * inp] } else { Vec::new() };
                    for i in 0..n {
                        let dyi = &dy[i * out..(i + 1) * out];
                        let xi = &x[i * inp..(i + 1) * inp];
                        {
                            let (gw, gb) = grads[w..b + out].split_at_mut(inp * out);
                            axpy(1.0, dyi, gb);
                            for (k, xk) in xi.iter().enumerate() {
                                if *xk != 0.0 {
                                    axpy(*xk, dyi, &mut gw[k * out..(k + 1) * out]);
                                }
                            }
                        }
                        if need_dx {
                            for k in 0..inp {
                                dx[i * inp + k] = dot(&weights[k * out..(k + 1) * out], dyi);
                            }
                        }
                    }
                    dx
                }
                Layer::Conv { cin, cout, h, wd, w, b } => {
                    conv_i -= 1;
                    let cols = &tape.cols[conv_i];
                    let hw = h * wd;
                    let ckk = cin * 9;
                    let weights = &self.params[w..w + cout * ckk];
                    let mut dx = if need_dx { vec![0.0; n * cin * hw] } else { Vec::new() };
                    let mut dcols = vec![0.0; ckk * hw];
                    for i in 0..n {
                        let dyi = &dy[i * cout * hw..(i + 1) * cout * hw];
                        let ci = &cols[i * ckk * hw..(i + 1) * ckk * hw];
                        {
                            let (gw, gb) = grads[w..b + cout].split_at_mut(cout * ckk);
                            for o in 0..cout {
                                let dyo = &dyi[o * hw..(o + 1) * hw];
                                gb[o] += dyo.iter().sum::<f64>();
                                for q in 0..ckk {
                                    gw[o * ckk + q] += dot(dyo, &ci[q * hw..(q + 1) * hw]);
                                }
                            }
                        }
                        if need_dx {
                            dcols.iter_mut().for_each(|v| *v = 0.0);
                            for o in 0..cout {
                                let dyo = &dyi[o * hw..(o + 1) * hw];
                                for q in 0..ckk {
                                    let wq = weights[o * ckk + q];
                                    if wq != 0.0 {
                                        axpy(wq, dyo, &mut dcols[q * hw..(q + 1) * hw]);
                                    }
                                }
                            }
                            col2im(&dcols, cin, h, wd, &mut dx[i * cin * hw..(i + 1) * cin * hw]);
                        }
                    }
                    dx
                }
                Layer::Relu { len } => {
                    let mut dx = dy;
                    for (d, xv) in dx.iter_mut().zip(x.iter()) {
                        if *xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    debug_assert_eq!(dx.len(), n * len);
                    dx
                }
                Layer::MaxPool { .. } => {
                    pool_i -= 1;
                    let idx = &tape.pool[pool_i];
                    let in_len = layer.in_len();
                    let out_len = layer.out_len();
                    let mut dx = vec![0.0; n * in_len];
                    for i in 0..n {
                        for j in 0..out_len {
                            dx[i * in_len + idx[i * out_len + j] as usize] += dy[i * out_len + j];
                        }
                    }
                    dx
                }
            };
            if !need_dx {
                return None;
            }
        }
        Some(dy)
    }

    fn layer_forward(
        &self,
        layer: &Layer,
        x: &[f64],
        n: usize,
        keep_cols: Option<&mut Option<Vec<f64>>>,
        keep_pool: Option<&mut Option<Vec<u32>>>,
    ) -> Vec<f64> {
        match *layer {
            Layer::Dense { inp, out, w, b } => {
                let weights = &self.params[w..w + inp * out];
                let bias = &self.params[b..b + out];
                let mut y = vec![0.0; n * out];
                for i in 0..n {
                    let yi = &mut y[i * out..(i + 1) * out];
                    yi.copy_from_slice(bias);
                    for (k, xk) in x[i * inp..(i + 1) * inp].iter().enumerate() {
                        if *xk != 0.0 {
                            axpy(*xk, &weights[k * out..(k + 1) * out], yi);
                        }
                    }
                }
                y
            }
            Layer::Conv { cin, cout, h, wd, w, b } => {
                let hw = h * wd;
                let ckk = cin * 9;
                let weights = &self.params[w..w + cout * ckk];
                let bias = &self.params[b..b + cout];
                let mut y = vec![0.0; n * cout * hw];
                let mut all_cols = if keep_cols.is_some() {
                    vec![0.0; n * ckk * hw]
                } else {
                    Vec::new()
                };
                let mut scratch = vec![0.0; ckk * hw];
                for i in 0..n {
                    let cols: &mut [f64] = if keep_cols.is_some() {
                        &mut all_cols[i * ckk * hw..(i + 1) * ckk * hw]
                    } else {
                        &mut scratch
                    };
                    im2col(&x[i * cin * hw..(i + 1) * cin * hw], cin, h, wd, cols);
                    let yi = &mut y[i * cout * hw..(i + 1) * cout * hw];
                    for o in 0..cout {
                        let yo = &mut yi[o * hw..(o + 1) * hw];
                        yo.iter_mut().for_each(|v| *v = bias[o]);
                        for q in 0..ckk {
                            let wq = weights[o * ckk + q];
                            if wq != 0.0 {
                                axpy(wq, &cols[q * hw..(q + 1) * hw], yo);
                            }
                        }
                    }
                }
                if let Some(slot) = keep_cols {
                    *slot = Some(all_cols);
                }
                y
            }
            Layer::Relu { .. } => x.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect(),
            Layer::MaxPool { c, h, wd } => {
                let (oh, ow) = (h / 2, wd / 2);
                let in_len = c * h * wd;
                let out_len = c * oh * ow;
                let mut y = vec![0.0; n * out_len];
                let mut idx = if keep_pool.is_some() { vec![0u32; n * out_len] } else { Vec::new() };
                for i in 0..n {
                    let xi = &x[i * in_len..(i + 1) * in_len];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = ch * h * wd + (2 * oy) * wd + 2 * ox;
                                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                    let cand = ch * h * wd + (2 * oy + dy) * wd + 2 * ox + dx;
                                    if xi[cand] > xi[best] {
                                        best = cand;
                                    }
                                }
                                let j = ch * oh * ow + oy * ow + ox;
                                y[i * out_len + j] = xi[best];
                                if !idx.is_empty() {
                                    idx[i * out_len + j] = best as u32;
                                }
                            }
                        }
                    }
                }
                if let Some(slot) = keep_pool {
                    *slot = Some(idx);
                }
                y
            }
        }
    }
}

/// Gradient-capable model view used by adversarial example generation.
pub trait Differentiable {
    fn input_len(&self) -> usize;
    fn classes(&self) -> usize;
    /// Logits for a batch, `n x classes`.
    fn logits(&self, inputs: &[f64]) -> Vec<f64>;
    /// Gradient of `sum_i objective_i` with respect to the inputs, where
    /// `upstream(i, logits_i)` returns `d objective_i / d logits_i`.
    fn input_gradient(
        &self,
        inputs: &[f64],
        upstream: &mut dyn FnMut(usize, &[f64]) -> Vec<f64>,
    ) -> Vec<f64>;
}

impl Differentiable for Network {
    fn input_len(&self) -> usize {
        Network::input_len(self)
    }

    fn classes(&self) -> usize {
        Network::classes(self)
    }

    fn logits(&self, inputs: &[f64]) -> Vec<f64> {
        Network::logits(self, inputs)
    }

    fn input_gradient(
        &self,
        inputs: &[f64],
        upstream: &mut dyn FnMut(usize, &[f64]) -> Vec<f64>,
    ) -> Vec<f64> {
        let tape = self.forward(inputs);
        let m = self.classes();
        let mut dlogits = Vec::with_capacity(tape.logits.len());
        for (i, z) in tape.logits.chunks(m).enumerate() {
            dlogits.extend(upstream(i, z));
        }
        let mut scratch = vec![0.0; self.params.len()];
        self.backward(&tape, &dlogits, &mut scratch, true)
            .expect("input gradient requested")
    }
}

fn im2col(x: &[f64], cin: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for c in 0..cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        row[y * w + xx] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            x[c * hw + sy as usize * w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for c in 0..cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dx[c * hw + sy as usize * w + sx as usize] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_inputs(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n * d).map(|_| r.gen::<f64>()).collect()
    }

    #[test]
    fn parses_architecture_ids() {
        assert_eq!(Architecture::parse("linear").unwrap(), Architecture::Linear);
        assert_eq!(Architecture::parse("mlp-64-32").unwrap(), Architecture::Mlp(vec![64, 32]));
        assert_eq!(Architecture::parse("cnn-8").unwrap(), Architecture::Cnn(vec![8]));
        for bad in ["", "mlp", "cnn-0", "resnet-50", "linear-3", "mlp-x"] {
            assert!(Architecture::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn parameter_counts() {
        let lin = Network::zeroed(&ModelSpec::new("linear", InputShape::flat(4), 3)).unwrap();
        assert_eq!(lin.param_count(), 4 * 3 + 3);
        let mlp = Network::zeroed(&ModelSpec::new("mlp-5", InputShape::flat(4), 3)).unwrap();
        assert_eq!(mlp.param_count(), 4 * 5 + 5 + 5 * 3 + 3);
        let cnn = Network::zeroed(&ModelSpec::new("cnn-2", InputShape::image(1, 4, 4), 3)).unwrap();
        assert_eq!(cnn.param_count(), 2 * 9 + 2 + 2 * 2 * 2 * 3 + 3);
        assert_eq!(cnn.embedding_len(), 8);
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let net = Network::zeroed(&ModelSpec::new("linear", InputShape::flat(2), 2)).unwrap();
        let p = net.probabilities(&[0.3, 0.9]);
        assert_eq!(p[0].scores(), &[0.5, 0.5]);
    }

    #[test]
    fn batched_and_single_forward_agree() {
        let spec = ModelSpec::new("cnn-3-4", InputShape::image(2, 6, 6), 5);
        let net = Network::new(&spec, 3).unwrap();
        let x = random_inputs(4, 72, 9);
        let batched = net.logits(&x);
        for i in 0..4 {
            let single = net.logits(&x[i * 72..(i + 1) * 72]);
            assert_eq!(&batched[i * 5..(i + 1) * 5], single.as_slice());
        }
        assert_eq!(net.forward(&x).logits(), batched.as_slice());
    }

    /// Central differences of a scalar objective `sum_i c_i . logits_i`.
    fn check_grads(arch: &str, shape: InputShape) {
        let spec = ModelSpec::new(arch, shape, 3);
        let mut net = Network::new(&spec, 11).unwrap();
        // Nonzero biases so ReLU kinks are unlikely to sit exactly at 0.
        let len = net.param_count();
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            *p += 0.01 * ((i * 7919 % 13) as f64 - 6.0) / 6.0;
        }
        let d = shape.len();
        let x = random_inputs(2, d, 5);
        let coeff = [0.3, -1.2, 0.7, 1.1, 0.2, -0.4];
        let objective = |net: &Network, x: &[f64]| -> f64 {
            net.logits(x).iter().zip(coeff.iter()).map(|(a, b)| a * b).sum()
        };
        let tape = net.forward(&x);
        let mut grads = vec![0.0; len];
        let dx = net.backward(&tape, &coeff, &mut grads, true).unwrap();
        let h = 1e-6;
        for j in (0..len).step_by(1 + len / 40) {
            let mut plus = net.clone();
            plus.params_mut()[j] += h;
            let mut minus = net.clone();
            minus.params_mut()[j] -= h;
            let numeric = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
            assert!((numeric - grads[j]).abs() < 1e-6 * (1.0 + numeric.abs()), "{arch} param {j}: {numeric} vs {}", grads[j]);
        }
        for j in 0..2 * d {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let numeric = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h);
            assert!((numeric - dx[j]).abs() < 1e-6 * (1.0 + numeric.abs()), "{arch} input {j}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_grads("linear", InputShape::flat(5));
        check_grads("mlp-6-4", InputShape::flat(5));
        check_grads("cnn-3-2", InputShape::image(2, 5, 4));
    }

    #[test]
    fn from_params_validates_length() {
        let spec = ModelSpec::new("linear", InputShape::flat(2), 2);
        assert!(Network::from_params(&spec, vec![0.0; 5]).is_err());
        let net = Network::from_params(&spec, vec![1.0, -1.0, -1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.predict(&[1.0, 0.0, 0.0, 1.0]), vec![0, 1]);
    }
}
