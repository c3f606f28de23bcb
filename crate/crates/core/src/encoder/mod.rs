//! The glyph embedding network.
//!
//! [`EncoderParams`] holds `f32` tensors; [`forward`] and [`backward`] run
//! in `f64` on a [`DoubleParams`] copy. [`Encoder`] bundles both for
//! inference.

mod io;
mod network;

pub use io::{load_weights, load_weights_for, save_weights, weights_from_bytes, weights_to_bytes, WEIGHTS_VERSION};
pub use network::{
    backward_double, forward_double, infer_double, Architecture, DoubleParams, EncoderParams, ForwardCache, Layer,
    Tensor, NORM_EPS,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::GrayImage;

/// Embedding width of the standard architecture.
pub const EMBEDDING_DIM: usize = 128;

/// A unit-norm embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Normalizes `values`, which must have positive finite norm.
    pub fn normalized(values: &[f64]) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Shape("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(Embedding {
            values: values.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    /// Wraps network output that is already unit norm.
    pub(crate) fn from_unit(values: Vec<f32>) -> Self {
        Embedding { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot32(&self.values, &other.values)
    }
}

pub(crate) fn dot32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// He-uniform initialization of the standard architecture.
pub fn init(seed: u64) -> EncoderParams {
    EncoderParams::standard(seed)
}

/// Embeds a batch and keeps the cache needed by [`backward`].
pub fn forward(params: &EncoderParams, batch: &[GrayImage]) -> Result<(Vec<Embedding>, ForwardCache)> {
    if !params.architecture().embeds() {
        return Err(Error::Shape("architecture does not end in a normalization layer".into()));
    }
    let cache = forward_double(&params.to_double(), batch)?;
    let embeddings = cache
        .outputs()
        .iter()
        .map(|o| Embedding::from_unit(o.iter().map(|&v| v as f32).collect()))
        .collect();
    Ok((embeddings, cache))
}

/// Parameter gradients of `sum_i <grad_i, z_i>`.
pub fn backward(params: &EncoderParams, cache: &ForwardCache, grad_wrt_embeddings: &[Vec<f64>]) -> Result<DoubleParams> {
    backward_double(&params.to_double(), cache, grad_wrt_embeddings)
}

/// Trained parameters ready for inference.
#[derive(Clone, Debug)]
pub struct Encoder {
    params: EncoderParams,
    double: DoubleParams,
    fingerprint: String,
}

impl Encoder {
    pub fn new(params: EncoderParams) -> Self {
        Encoder {
            double: params.to_double(),
            fingerprint: params.fingerprint(),
            params,
        }
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dim(&self) -> usize {
        self.params.architecture().output_dim().expect("validated architecture")
    }

    /// Raw network outputs (embeddings or logits), in parallel on the
    /// current rayon pool.
    pub fn outputs(&self, batch: &[GrayImage]) -> Result<Vec<Vec<f64>>> {
        batch.par_iter().map(|img| infer_double(&self.double, img)).collect()
    }

    pub fn embed(&self, batch: &[GrayImage]) -> Result<Vec<Embedding>> {
        if !self.params.architecture().embeds() {
            return Err(Error::Shape("architecture does not end in a normalization layer".into()));
        }
        Ok(self
            .outputs(batch)?
            .into_iter()
            .map(|o| Embedding::from_unit(o.into_iter().map(|v| v as f32).collect()))
            .collect())
    }

    pub fn embed_one(&self, image: &GrayImage) -> Result<Embedding> {
        Ok(self.embed(std::slice::from_ref(image))?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::synth::FontSource;
    use rand::Rng;

    fn glyphs(labels: &[&str]) -> Vec<GrayImage> {
        let font = FontSource::builtin("sans").unwrap();
        labels.iter().map(|l| font.render_glyph(l, 32).unwrap()).collect()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init(3);
        assert_eq!(a, init(3));
        assert_ne!(a, init(4));
        for t in a.tensors() {
            assert!(t.data.iter().all(|v| v.is_finite()));
            if t.name.ends_with(".bias") {
                assert!(t.data.iter().all(|&v| v == 0.0));
            }
        }
        let shapes: Vec<_> = a.tensors().iter().map(|t| (t.name.as_str(), t.shape.clone())).collect();
        assert_eq!(
            shapes,
            vec![
                ("conv1.weight", vec![16, 3, 3, 1]),
                ("conv1.bias", vec![16]),
                ("conv2.weight", vec![32, 3, 3, 16]),
                ("conv2.bias", vec![32]),
                ("conv3.weight", vec![64, 3, 3, 32]),
                ("conv3.bias", vec![64]),
                ("fc.weight", vec![128, 1024]),
                ("fc.bias", vec![128]),
            ]
        );
    }

    #[test]
    fn he_uniform_bounds() {
        let p = init(11);
        for t in p.tensors().iter().filter(|t| t.name.ends_with(".weight")) {
            let fan_in: usize = t.shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            let max = t.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            assert!(max <= bound && max > 0.8 * bound, "{}: {max} vs {bound}", t.name);
        }
    }

    #[test]
    fn forward_emits_unit_embeddings() {
        let p = init(1);
        let images = glyphs(&["a", "a", "7"]);
        let (emb, cache) = forward(&p, &images).unwrap();
        assert_eq!(emb.len(), 3);
        assert_eq!(cache.len(), 3);
        for e in &emb {
            assert_eq!(e.dim(), EMBEDDING_DIM);
            assert!((e.norm() - 1.0).abs() < 1e-5);
        }
        assert_eq!(emb[0], emb[1]);
        assert_ne!(emb[0], emb[2]);
    }

    #[test]
    fn batch_and_single_inference_agree() {
        let p = init(1);
        let images = glyphs(&["q", "3"]);
        let (emb, _) = forward(&p, &images).unwrap();
        let enc = Encoder::new(p);
        assert_eq!(enc.embed(&images).unwrap(), emb);
        assert_eq!(enc.embed_one(&images[1]).unwrap(), emb[1]);
    }

    #[test]
    fn wrong_crop_size_is_shape_error() {
        let p = init(1);
        let img = GrayImage::filled(31, 32, 1.0).unwrap();
        assert!(matches!(forward(&p, &[img]), Err(Error::Shape(_))));
    }

    #[test]
    fn blank_crop_engages_normalization_guard() {
        let mut p = init(1);
        // White input is zero signal, so the output before normalization
        // equals the fc bias.
        let bias = &mut p.tensors_mut()[7];
        assert_eq!(bias.name, "fc.bias");
        bias.data[0] = 3e-9;
        let (emb, cache) = forward(&p, &[GrayImage::filled(32, 32, 1.0).unwrap()]).unwrap();
        let b = 3e-9f32 as f64;
        let expected = b / (b + NORM_EPS);
        assert!((cache.outputs()[0][0] - expected).abs() < 1e-12);
        assert!(emb[0].values().iter().all(|v| v.is_finite()));
        assert!(emb[0].norm() < 0.5);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = init(2);
        let images = glyphs(&["b", "x"]);
        let (_, cache) = forward(&p, &images).unwrap();
        let g = backward(&p, &cache, &vec![vec![0.0; 128]; 2]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn gradients_add_over_the_batch() {
        let p = init(2);
        let images = glyphs(&["b", "x"]);
        let mut rng = seeded(5);
        let up: Vec<Vec<f64>> = (0..2).map(|_| (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let (_, cache) = forward(&p, &images).unwrap();
        let both = backward(&p, &cache, &up).unwrap();
        let mut sum = DoubleParams::zeros_like(p.architecture());
        for i in 0..2 {
            let (_, c) = forward(&p, &images[i..=i]).unwrap();
            let g = backward(&p, &c, &up[i..=i]).unwrap();
            for (s, v) in sum.tensors.iter_mut().zip(&g.tensors) {
                for (a, b) in s.iter_mut().zip(v) {
                    *a += b;
                }
            }
        }
        for (a, b) in both.tensors.iter().flatten().zip(sum.tensors.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let p = init(2);
        let (_, cache) = forward(&p, &glyphs(&["b"])).unwrap();
        assert!(matches!(backward(&p, &cache, &[vec![0.0; 127]]), Err(Error::Shape(_))));
        assert!(matches!(backward(&p, &cache, &[]), Err(Error::Shape(_))));
    }

    /// Central differences of a random linear functional of the outputs,
    /// over parameters whose +-h perturbation stays on one linear piece.
    fn max_fd_error(arch: &Architecture, seed: u64, samples: usize) -> f64 {
        let params = EncoderParams::init(arch, seed).unwrap();
        let mut double = params.to_double();
        let mut rng = seeded(seed + 100);
        // Non-zero biases so every layer type carries gradient.
        for (t, (name, _)) in double.tensors.iter_mut().zip(arch.tensor_specs()) {
            if name.ends_with(".bias") {
                t.iter_mut().for_each(|v| *v = rng.gen_range(-0.05..0.05));
            }
        }
        let images = glyphs(&["a", "k"]);
        let dim = arch.output_dim().unwrap();
        let up: Vec<Vec<f64>> = (0..2).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let objective = |cache: &ForwardCache| -> f64 {
            cache
                .outputs()
                .iter()
                .zip(&up)
                .map(|(o, u)| o.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let base = forward_double(&double, &images).unwrap();
        let grads = backward_double(&double, &base, &up).unwrap();
        let h = 1e-3;
        let (mut worst, mut accepted, mut tried) = (0.0f64, 0, 0);
        while accepted < samples {
            tried += 1;
            assert!(tried < 20 * samples, "too many parameters sit near a kink");
            // Round-robin over tensors so every layer is probed.
            let t = tried % double.tensors.len();
            let offset: usize = double.tensors[..t].iter().map(Vec::len).sum();
            let flat = offset + rng.gen_range(0..double.tensors[t].len());
            let orig = double.get_flat(flat);
            double.set_flat(flat, orig + h);
            let plus = forward_double(&double, &images).unwrap();
            double.set_flat(flat, orig - h);
            let minus = forward_double(&double, &images).unwrap();
            double.set_flat(flat, orig);
            if !(plus.same_activation_pattern(&base) && minus.same_activation_pattern(&base)) {
                continue;
            }
            accepted += 1;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let analytic = grads.get_flat(flat);
            let err = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn finite_differences_match_truncated_encoder() {
        let err = max_fd_error(&Architecture::truncated(), 21, 50);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn finite_differences_match_full_encoder() {
        let err = max_fd_error(&Architecture::standard(), 22, 50);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let p = init(8);
        save_weights(&p, &path).unwrap();
        let q = load_weights(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.fingerprint(), q.fingerprint());
        assert!(load_weights_for(&path, &Architecture::standard()).is_ok());
        assert!(matches!(
            load_weights_for(&path, &Architecture::truncated()),
            Err(Error::IncompatibleModel(_))
        ));
    }

    #[test]
    fn altered_fingerprint_is_incompatible() {
        let bytes = weights_to_bytes(&init(8));
        let text = String::from_utf8_lossy(&bytes[8..]).into_owned();
        let fp = Architecture::standard().fingerprint();
        let pos = text.find(&fp).unwrap() + 8;
        let mut altered = bytes.clone();
        altered[pos] = if altered[pos] == b'0' { b'1' } else { b'0' };
        assert!(matches!(weights_from_bytes(&altered), Err(Error::IncompatibleModel(_))));
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = weights_to_bytes(&init(8));
        for cut in [0, 5, 40, bytes.len() - 1] {
            assert!(matches!(weights_from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn fingerprint_tracks_weights() {
        let mut p = init(8);
        let before = p.fingerprint();
        p.tensors_mut()[0].data[0] += 1.0;
        assert_ne!(before, p.fingerprint());
    }

    #[test]
    fn classifier_head_outputs_logits() {
        let arch = Architecture::standard().with_classifier_head(36);
        assert!(!arch.embeds());
        let p = EncoderParams::init(&arch, 1).unwrap();
        let enc = Encoder::new(p.clone());
        assert_eq!(enc.outputs(&glyphs(&["a"])).unwrap()[0].len(), 36);
        assert!(forward(&p, &glyphs(&["a"])).is_err());
    }
}
