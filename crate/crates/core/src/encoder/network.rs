//! Layer stack with exact reverse-mode gradients.
//!
//! Activations are stored channels-last (`h, w, c`). Convolutions are 3x3,
//! stride 1, zero padded, computed as im2col followed by a GEMM. All
//! arithmetic is `f64` whatever the storage precision of the parameters.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{derive, seeded};
use crate::types::{hex16, GrayImage};

/// Guard added to the normalization denominator for near-zero vectors.
pub const NORM_EPS: f64 = 1e-8;

/// Samples processed per gradient partial sum; fixed so the reduction
/// order does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Conv3x3 { in_ch: usize, out_ch: usize },
    Relu,
    MaxPool2,
    Dense { inputs: usize, outputs: usize },
    L2Normalize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Input height, width, channels.
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
}

impl Architecture {
    /// conv16-pool, conv32-pool, conv64-pool, dense 1024->128, L2 normalize.
    pub fn standard() -> Self {
        use Layer::*;
        Architecture {
            input: [32, 32, 1],
            layers: vec![
                Conv3x3 { in_ch: 1, out_ch: 16 },
                Relu,
                MaxPool2,
                Conv3x3 { in_ch: 16, out_ch: 32 },
                Relu,
                MaxPool2,
                Conv3x3 { in_ch: 32, out_ch: 64 },
                Relu,
                MaxPool2,
                Dense { inputs: 64 * 4 * 4, outputs: 128 },
                L2Normalize,
            ],
        }
    }

    /// The first two convolution blocks of [`standard`](Self::standard)
    /// feeding the embedding layer directly.
    pub fn truncated() -> Self {
        use Layer::*;
        Architecture {
            input: [32, 32, 1],
            layers: vec![
                Conv3x3 { in_ch: 1, out_ch: 16 },
                Relu,
                MaxPool2,
                Conv3x3 { in_ch: 16, out_ch: 32 },
                Relu,
                MaxPool2,
                Dense { inputs: 32 * 8 * 8, outputs: 128 },
                L2Normalize,
            ],
        }
    }

    /// `self` followed by a dense layer producing one logit per class.
    pub fn with_classifier_head(&self, classes: usize) -> Self {
        let mut arch = self.clone();
        let dim = arch.output_dim().expect("valid base architecture");
        arch.layers.push(Layer::Dense {
            inputs: dim,
            outputs: classes,
        });
        arch
    }

    /// Shape after each layer, validating the stack.
    pub fn shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let [h, w, c] = shape;
            shape = match *layer {
                Layer::Conv3x3 { in_ch, out_ch } => {
                    if in_ch != c {
                        return Err(Error::Shape(format!("layer {i}: conv expects {in_ch} channels, got {c}")));
                    }
                    [h, w, out_ch]
                }
                Layer::Relu | Layer::L2Normalize => shape,
                Layer::MaxPool2 => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::Shape(format!("layer {i}: pool over odd size {h}x{w}")));
                    }
                    [h / 2, w / 2, c]
                }
                Layer::Dense { inputs, outputs } => {
                    if inputs != h * w * c {
                        return Err(Error::Shape(format!(
                            "layer {i}: dense expects {inputs} inputs, got {}",
                            h * w * c
                        )));
                    }
                    [1, 1, outputs]
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    pub fn output_dim(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        let [h, w, c] = shapes.last().copied().unwrap_or(self.input);
        Ok(h * w * c)
    }

    /// Whether the final layer normalizes, i.e. outputs are embeddings.
    pub fn embeds(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::L2Normalize))
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let (mut conv, mut dense) = (0, 0);
        for layer in &self.layers {
            match *layer {
                Layer::Conv3x3 { in_ch, out_ch } => {
                    conv += 1;
                    specs.push((format!("conv{conv}.weight"), vec![out_ch, 3, 3, in_ch]));
                    specs.push((format!("conv{conv}.bias"), vec![out_ch]));
                }
                Layer::Dense { inputs, outputs } => {
                    dense += 1;
                    let name = if dense == 1 { "fc".to_string() } else { format!("fc{dense}") };
                    specs.push((format!("{name}.weight"), vec![outputs, inputs]));
                    specs.push((format!("{name}.bias"), vec![outputs]));
                }
                _ => {}
            }
        }
        specs
    }

    pub fn fingerprint(&self) -> String {
        let desc = serde_json::to_string(self).expect("architecture serializes");
        hex16(&Sha256::digest(desc.as_bytes()))
    }
}

/// Named parameter tensor in storage precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// All parameters of an encoder, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    arch: Architecture,
    tensors: Vec<Tensor>,
}

impl EncoderParams {
    /// He-uniform weights, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.shapes()?;
        let tensors = arch
            .tensor_specs()
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let mut rng = seeded(derive(seed, &[i as u64]));
                    (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
                };
                Tensor { name, shape, data }
            })
            .collect();
        Ok(EncoderParams {
            arch: arch.clone(),
            tensors,
        })
    }

    pub fn standard(seed: u64) -> Self {
        EncoderParams::init(&Architecture::standard(), seed).expect("standard architecture is valid")
    }

    pub(crate) fn from_parts(arch: Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        let specs = arch.tensor_specs();
        if specs.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "architecture has {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in specs.iter().zip(&tensors) {
            if name != &t.name || shape != &t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!("tensor {} does not match {name}{shape:?}", t.name)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("tensor {} has non-finite entries", t.name)));
            }
        }
        Ok(EncoderParams { arch, tensors })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Digest of architecture and every parameter bit.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.arch.fingerprint().as_bytes());
        for t in &self.tensors {
            h.update(t.name.as_bytes());
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex16(&h.finalize())
    }

    pub fn to_double(&self) -> DoubleParams {
        DoubleParams {
            arch: self.arch.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.data.iter().map(|&v| v as f64).collect())
                .collect(),
        }
    }

    /// Replaces the parameter values, rounding to storage precision.
    pub fn assign(&mut self, values: &DoubleParams) {
        for (t, v) in self.tensors.iter_mut().zip(&values.tensors) {
            for (d, s) in t.data.iter_mut().zip(v) {
                *d = *s as f32;
            }
        }
    }
}

/// Double-precision parameter (or gradient) tensors, in
/// [`Architecture::tensor_specs`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubleParams {
    pub arch: Architecture,
    pub tensors: Vec<Vec<f64>>,
}

impl DoubleParams {
    pub fn zeros_like(arch: &Architecture) -> Self {
        DoubleParams {
            arch: arch.clone(),
            tensors: arch
                .tensor_specs()
                .iter()
                .map(|(_, s)| vec![0.0; s.iter().product()])
                .collect(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    /// Flat view index -> (tensor, offset).
    pub fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (t, v) in self.tensors.iter().enumerate() {
            if flat < v.len() {
                return (t, flat);
            }
            flat -= v.len();
        }
        panic!("flat index out of range");
    }

    pub fn get_flat(&self, flat: usize) -> f64 {
        let (t, i) = self.locate(flat);
        self.tensors[t][i]
    }

    pub fn set_flat(&mut self, flat: usize, value: f64) {
        let (t, i) = self.locate(flat);
        self.tensors[t][i] = value;
    }

    fn add_assign(&mut self, other: &DoubleParams) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

enum LayerCache {
    Conv { cols: Vec<f64> },
    Relu { active: Vec<bool> },
    Pool { argmax: Vec<u32> },
    Dense { input: Vec<f64> },
    Norm { output: Vec<f64>, norm: f64 },
}

struct SampleCache {
    layers: Vec<LayerCache>,
}

/// Everything `backward` needs from the matching `forward` call.
pub struct ForwardCache {
    arch_fingerprint: String,
    samples: Vec<SampleCache>,
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Network outputs in double precision, one per batch element.
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Whether both passes took the same branch at every ReLU and pooling
    /// window, i.e. the network is the same linear piece at both points.
    pub fn same_activation_pattern(&self, other: &ForwardCache) -> bool {
        self.samples.len() == other.samples.len()
            && self.samples.iter().zip(&other.samples).all(|(a, b)| {
                a.layers.iter().zip(&b.layers).all(|pair| match pair {
                    (LayerCache::Relu { active: x }, LayerCache::Relu { active: y }) => x == y,
                    (LayerCache::Pool { argmax: x }, LayerCache::Pool { argmax: y }) => x == y,
                    _ => true,
                })
            })
    }
}

fn image_input(arch: &Architecture, image: &GrayImage) -> Result<Vec<f64>> {
    let [h, w, c] = arch.input;
    if image.width() != w || image.height() != h || c != 1 {
        return Err(Error::Shape(format!(
            "input must be {w}x{h}, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    // Ink is the signal: background maps to 0.
    Ok(image.pixels().iter().map(|&p| 1.0 - p as f64).collect())
}

/// Forward pass over a batch; samples run in parallel on the current rayon pool.
pub fn forward_double(params: &DoubleParams, batch: &[GrayImage]) -> Result<ForwardCache> {
    let shapes = params.arch.shapes()?;
    let inputs = batch
        .iter()
        .map(|img| image_input(&params.arch, img))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<(Vec<f64>, SampleCache)> = inputs
        .into_par_iter()
        .map(|x| forward_sample(params, &shapes, x))
        .collect();
    let (outputs, samples) = results.into_iter().unzip();
    Ok(ForwardCache {
        arch_fingerprint: params.arch.fingerprint(),
        samples,
        outputs,
    })
}

/// Forward pass that keeps no cache; used for inference.
pub fn infer_double(params: &DoubleParams, image: &GrayImage) -> Result<Vec<f64>> {
    let shapes = params.arch.shapes()?;
    let x = image_input(&params.arch, image)?;
    Ok(forward_sample(params, &shapes, x).0)
}

fn forward_sample(params: &DoubleParams, shapes: &[[usize; 3]], mut x: Vec<f64>) -> (Vec<f64>, SampleCache) {
    let arch = &params.arch;
    let mut caches = Vec::with_capacity(arch.layers.len());
    let mut shape = arch.input;
    let mut tensor = 0;
    for (layer, &out_shape) in arch.layers.iter().zip(shapes) {
        let [h, w, c] = shape;
        match *layer {
            Layer::Conv3x3 { in_ch, out_ch } => {
                let weight = &params.tensors[tensor];
                let bias = &params.tensors[tensor + 1];
                tensor += 2;
                let cols = im2col(&x, h, w, in_ch);
                let k = 9 * in_ch;
                let p = h * w;
                let mut out = vec![0.0; p * out_ch];
                unsafe {
                    matrixmultiply::dgemm(
                        p, k, out_ch, 1.0,
                        cols.as_ptr(), k as isize, 1,
                        weight.as_ptr(), 1, k as isize,
                        0.0, out.as_mut_ptr(), out_ch as isize, 1,
                    );
                }
                for row in out.chunks_exact_mut(out_ch) {
                    for (o, b) in row.iter_mut().zip(bias) {
                        *o += b;
                    }
                }
                caches.push(LayerCache::Conv { cols });
                x = out;
            }
            Layer::Relu => {
                let active: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
                for (v, &a) in x.iter_mut().zip(&active) {
                    if !a {
                        *v = 0.0;
                    }
                }
                caches.push(LayerCache::Relu { active });
            }
            Layer::MaxPool2 => {
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0; oh * ow * c];
                let mut argmax = vec![0u32; oh * ow * c];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut best = f64::NEG_INFINITY;
                            let mut at = 0;
                            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                let i = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                                if x[i] > best {
                                    best = x[i];
                                    at = i;
                                }
                            }
                            let o = (oy * ow + ox) * c + ch;
                            out[o] = best;
                            argmax[o] = at as u32;
                        }
                    }
                }
                caches.push(LayerCache::Pool { argmax });
                x = out;
            }
            Layer::Dense { inputs, outputs } => {
                let weight = &params.tensors[tensor];
                let bias = &params.tensors[tensor + 1];
                tensor += 2;
                let mut out = bias.clone();
                for (o, row) in out.iter_mut().zip(weight.chunks_exact(inputs)) {
                    *o += dot(row, &x);
                }
                debug_assert_eq!(out.len(), outputs);
                caches.push(LayerCache::Dense { input: x });
                x = out;
            }
            Layer::L2Normalize => {
                let norm = dot(&x, &x).sqrt();
                let denom = norm + if norm < NORM_EPS { NORM_EPS } else { 0.0 };
                for v in &mut x {
                    *v /= denom;
                }
                caches.push(LayerCache::Norm {
                    output: x.clone(),
                    norm,
                });
            }
        }
        shape = out_shape;
    }
    (x, SampleCache { layers: caches })
}

/// Gradients of `sum_i <upstream_i, output_i>` with respect to all
/// parameters.
pub fn backward_double(params: &DoubleParams, cache: &ForwardCache, upstream: &[Vec<f64>]) -> Result<DoubleParams> {
    if cache.arch_fingerprint != params.arch.fingerprint() {
        return Err(Error::Shape("cache was produced by a different architecture".into()));
    }
    if upstream.len() != cache.samples.len() {
        return Err(Error::Shape(format!(
            "{} upstream gradients for a batch of {}",
            upstream.len(),
            cache.samples.len()
        )));
    }
    let out_dim = params.arch.output_dim()?;
    if let Some(g) = upstream.iter().find(|g| g.len() != out_dim) {
        return Err(Error::Shape(format!("upstream gradient of length {}, expected {out_dim}", g.len())));
    }
    let shapes = params.arch.shapes()?;
    let indices: Vec<usize> = (0..upstream.len()).collect();
    let partials: Vec<DoubleParams> = indices
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = DoubleParams::zeros_like(&params.arch);
            for &i in chunk {
                backward_sample(params, &shapes, &cache.samples[i], &upstream[i], &mut grads);
            }
            grads
        })
        .collect();
    let mut total = DoubleParams::zeros_like(&params.arch);
    for p in &partials {
        total.add_assign(p);
    }
    Ok(total)
}

fn backward_sample(
    params: &DoubleParams,
    shapes: &[[usize; 3]],
    cache: &SampleCache,
    upstream: &[f64],
    grads: &mut DoubleParams,
) {
    let arch = &params.arch;
    let mut g = upstream.to_vec();
    let mut tensor = arch.tensor_specs().len();
    for (li, layer) in arch.layers.iter().enumerate().rev() {
        let in_shape = if li == 0 { arch.input } else { shapes[li - 1] };
        let [h, w, c] = in_shape;
        match (*layer, &cache.layers[li]) {
            (Layer::Conv3x3 { in_ch, out_ch }, LayerCache::Conv { cols }) => {
                tensor -= 2;
                let k = 9 * in_ch;
                let p = h * w;
                {
                    let (dw_slot, rest) = grads.tensors[tensor..].split_at_mut(1);
                    let dw = &mut dw_slot[0];
                    let db = &mut rest[0];
                    unsafe {
                        matrixmultiply::dgemm(
                            out_ch, p, k, 1.0,
                            g.as_ptr(), 1, out_ch as isize,
                            cols.as_ptr(), k as isize, 1,
                            1.0, dw.as_mut_ptr(), k as isize, 1,
                        );
                    }
                    for row in g.chunks_exact(out_ch) {
                        for (b, v) in db.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                }
                if li > 0 {
                    let weight = &params.tensors[tensor];
                    let mut dcols = vec![0.0; p * k];
                    unsafe {
                        matrixmultiply::dgemm(
                            p, out_ch, k, 1.0,
                            g.as_ptr(), out_ch as isize, 1,
                            weight.as_ptr(), k as isize, 1,
                            0.0, dcols.as_mut_ptr(), k as isize, 1,
                        );
                    }
                    g = col2im(&dcols, h, w, in_ch);
                }
            }
            (Layer::Relu, LayerCache::Relu { active }) => {
                for (v, &a) in g.iter_mut().zip(active) {
                    if !a {
                        *v = 0.0;
                    }
                }
            }
            (Layer::MaxPool2, LayerCache::Pool { argmax }) => {
                let mut dx = vec![0.0; h * w * c];
                for (v, &at) in g.iter().zip(argmax) {
                    dx[at as usize] += v;
                }
                g = dx;
            }
            (Layer::Dense { inputs, outputs }, LayerCache::Dense { input }) => {
                tensor -= 2;
                {
                    let (dw_slot, rest) = grads.tensors[tensor..].split_at_mut(1);
                    let dw = &mut dw_slot[0];
                    let db = &mut rest[0];
                    for (o, &go) in g.iter().enumerate() {
                        db[o] += go;
                        if go != 0.0 {
                            let row = &mut dw[o * inputs..(o + 1) * inputs];
                            for (r, xv) in row.iter_mut().zip(input) {
                                *r += go * xv;
                            }
                        }
                    }
                }
                if li > 0 {
                    let weight = &params.tensors[tensor];
                    let mut dx = vec![0.0; inputs];
                    for (o, row) in weight.chunks_exact(inputs).enumerate().take(outputs) {
                        let go = g[o];
                        if go != 0.0 {
                            for (d, wv) in dx.iter_mut().zip(row) {
                                *d += go * wv;
                            }
                        }
                    }
                    g = dx;
                }
            }
            (Layer::L2Normalize, LayerCache::Norm { output, norm }) => {
                let norm = *norm;
                if norm >= NORM_EPS {
                    let proj = dot(output, &g);
                    for (v, z) in g.iter_mut().zip(output) {
                        *v = (*v - z * proj) / norm;
                    }
                } else if norm > 0.0 {
                    // z = u / (n + eps): dz/du = I/(n+eps) - u u^T / (n (n+eps)^2)
                    let denom = norm + NORM_EPS;
                    let u: Vec<f64> = output.iter().map(|z| z * denom).collect();
                    let ug = dot(&u, &g);
                    for (v, uv) in g.iter_mut().zip(&u) {
                        *v = *v / denom - uv * ug / (norm * denom * denom);
                    }
                } else {
                    for v in &mut g {
                        *v /= NORM_EPS;
                    }
                }
            }
            _ => unreachable!("cache layout follows the architecture"),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn im2col(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let k = 9 * c;
    let mut cols = vec![0.0; h * w * k];
    for y in 0..h {
        for xx in 0..w {
            let row = &mut cols[(y * w + xx) * k..(y * w + xx + 1) * k];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * c;
                    let dst = (ky * 3 + kx) * c;
                    row[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let k = 9 * c;
    let mut x = vec![0.0; h * w * c];
    for y in 0..h {
        for xx in 0..w {
            let row = &cols[(y * w + xx) * k..(y * w + xx + 1) * k];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * c;
                    let src = (ky * 3 + kx) * c;
                    for ch in 0..c {
                        x[dst + ch] += row[src + ch];
                    }
                }
            }
        }
    }
    x
}
