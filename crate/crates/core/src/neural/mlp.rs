use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::Stream;
use crate::error::{Error, Result};

/// Weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Zero-mean Gaussian with variance `2 / fan_in`.
    #[default]
    He,
    /// Zero-mean, unit-variance Gaussian.
    UnitGaussian,
}

/// Dense layer, `w` row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { inputs, outputs, w: vec![0.0; inputs * outputs], b: vec![0.0; outputs] }
    }

    pub(crate) fn random(inputs: usize, outputs: usize, init: Init, rng: &mut Stream) -> Self {
        let scale = match init {
            Init::He => (2.0 / inputs as f64).sqrt(),
            Init::UnitGaussian => 1.0,
        };
        let w = (0..inputs * outputs)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let b = match init {
            Init::He => vec![0.0; outputs],
            Init::UnitGaussian => (0..outputs).map(|_| StandardNormal.sample(rng)).collect(),
        };
        Layer { inputs, outputs, w, b }
    }

    pub fn params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Per-feature affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(width: usize) -> Self {
        Normalizer { mean: vec![0.0; width], std: vec![1.0; width] }
    }

    /// Statistics of `rows`; constant features get unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Result<Self> {
        let mut count = 0usize;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for r in rows {
            if r.len() != width {
                return Err(Error::invalid(format!("feature row has width {}, expected {width}", r.len())));
            }
            count += 1;
            for j in 0..width {
                let d = r[j] - mean[j];
                mean[j] += d / count as f64;
                m2[j] += d * (r[j] - mean[j]);
            }
        }
        if count == 0 {
            return Err(Error::invalid("cannot fit normalization on zero rows"));
        }
        let std = m2
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s > 1e-12 * 1f64.max(s) && s.is_finite() { s } else { 1.0 }
            })
            .collect();
        let norm = Normalizer { mean, std };
        norm.validate(width)?;
        Ok(norm)
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if self.mean.len() != width || self.std.len() != width {
            return Err(Error::invalid("normalization width does not match the input layer"));
        }
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite()) || self.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::invalid("normalization statistics must be finite with positive scale"));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Multilayer perceptron: ReLU hidden layers, identity output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub input_norm: Normalizer,
    pub init: Init,
}

/// Activations kept by a forward pass for backpropagation.
pub(crate) struct Trace {
    /// `acts[0]` is the normalized input, `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Random network with layer widths `sizes = [n0, n1, ..., nL]`.
    pub fn new(sizes: &[usize], init: Init, rng: &mut Stream) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes.windows(2).map(|w| Layer::random(w[0], w[1], init, rng)).collect();
        Ok(MlpModel { layers, input_norm: Normalizer::identity(sizes[0]), init })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(MlpModel { layers, input_norm: Normalizer::identity(sizes[0]), init: Init::He })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::params).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.len() != l.inputs * l.outputs || l.b.len() != l.outputs || l.inputs == 0 || l.outputs == 0 {
                return Err(Error::invalid(format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::invalid(format!("layer {i} does not chain with layer {}", i - 1)));
            }
        }
        self.input_norm.validate(self.input_width())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut count = 0;
        self.forward_counted(x, &mut count)
    }

    /// Forward pass that adds every scalar multiplication performed by the
    /// weight products to `mults`.
    pub fn forward_counted(&self, x: &[f64], mults: &mut u64) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::invalid(format!("input has width {}, network expects {}", x.len(), self.input_width())));
        }
        let mut a = self.input_norm.apply(x);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.b.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &l.w[o * l.inputs..(o + 1) * l.inputs];
                for (w, v) in row.iter().zip(&a) {
                    *zo += w * v;
                    *mults += 1;
                }
            }
            if i != last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    pub(crate) fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(self.input_norm.apply(x));
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let a = acts.last().unwrap();
            let mut z = l.b.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &l.w[o * l.inputs..(o + 1) * l.inputs];
                *zo += row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>();
            }
            if i != last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Trace { acts }
    }

    /// Accumulates `d loss / d params` into `grads` (same layout as
    /// `layers`) given `d loss / d output`.
    pub(crate) fn backward(&self, trace: &Trace, d_out: &[f64], grads: &mut [Layer]) {
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let input = &trace.acts[i];
            let g = &mut grads[i];
            for o in 0..l.outputs {
                g.b[o] += delta[o];
                let row = &mut g.w[o * l.inputs..(o + 1) * l.inputs];
                for (gw, v) in row.iter_mut().zip(input) {
                    *gw += delta[o] * v;
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                let row = &l.w[o * l.inputs..(o + 1) * l.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += delta[o] * w;
                }
            }
            // ReLU derivative of the previous layer's output
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub(crate) fn zero_grads(&self) -> Vec<Layer> {
        self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect()
    }

    /// Multiplications needed by one forward pass: `sum_l n_l n_{l+1}`.
    pub fn flop_count(&self) -> u64 {
        self.layers.iter().map(|l| (l.inputs * l.outputs) as u64).sum()
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::invalid(format!("layer sizes {sizes:?} need >= 2 positive entries")));
    }
    Ok(())
}

/// Random index permutation, Fisher-Yates.
pub(crate) fn shuffle(idx: &mut [usize], rng: &mut Stream) {
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
}
