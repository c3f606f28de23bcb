use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::types::GrayImage;

/// Randomized photometric and geometric perturbations. Color operations
/// are realized in grayscale: background level and intensity jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Maximum |shift| as a fraction of the image side.
    pub translate_frac: f64,
    pub scale_range: [f64; 2],
    pub jitter_strength: f64,
    pub invert_prob: f64,
    pub blur_sigma_range: [f64; 2],
    pub background_level_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            translate_frac: 0.15,
            scale_range: [0.8, 1.2],
            jitter_strength: 0.2,
            invert_prob: 0.1,
            blur_sigma_range: [0.0, 1.5],
            background_level_range: [0.7, 1.0],
        }
    }
}

impl AugmentConfig {
    /// Configuration under which `augment` returns its input unchanged.
    pub fn identity() -> Self {
        AugmentConfig {
            translate_frac: 0.0,
            scale_range: [1.0, 1.0],
            jitter_strength: 0.0,
            invert_prob: 0.0,
            blur_sigma_range: [0.0, 0.0],
            background_level_range: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, r: [f64; 2]| {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                Err(Error::Config(format!("augment.{name}: range {r:?} is not ordered")))
            } else {
                Ok(())
            }
        };
        ordered("scale_range", self.scale_range)?;
        ordered("blur_sigma_range", self.blur_sigma_range)?;
        ordered("background_level_range", self.background_level_range)?;
        if !(0.0..0.5).contains(&self.translate_frac) {
            return Err(Error::Config("augment.translate_frac must be in [0, 0.5)".into()));
        }
        if self.scale_range[0] <= 0.0 {
            return Err(Error::Config("augment.scale_range must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.jitter_strength) {
            return Err(Error::Config("augment.jitter_strength must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.invert_prob) {
            return Err(Error::Config("augment.invert_prob must be in [0, 1]".into()));
        }
        if self.blur_sigma_range[0] < 0.0 {
            return Err(Error::Config("augment.blur_sigma_range must be >= 0".into()));
        }
        let [b0, b1] = self.background_level_range;
        if b0 < 0.0 || b1 > 1.0 {
            return Err(Error::Config("augment.background_level_range must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Applies a random draw of `cfg` to `image`. Deterministic in
/// `(image, cfg, seed)`; the output has the input's dimensions and stays in
/// `[0, 1]`.
pub fn augment(image: &GrayImage, cfg: &AugmentConfig, seed: u64) -> GrayImage {
    let mut rng = seeded(seed);
    // All draws happen unconditionally so the stream layout is fixed.
    let t = cfg.translate_frac;
    let shift_x = uniform(&mut rng, -t, t) * image.width() as f64;
    let shift_y = uniform(&mut rng, -t, t) * image.height() as f64;
    let scale = uniform(&mut rng, cfg.scale_range[0], cfg.scale_range[1]);
    let j = cfg.jitter_strength;
    let contrast = uniform(&mut rng, -j, j);
    let brightness = uniform(&mut rng, -j, j) / 2.0;
    let invert = rng.gen::<f64>() < cfg.invert_prob;
    let sigma = uniform(&mut rng, cfg.blur_sigma_range[0], cfg.blur_sigma_range[1]);
    let background = uniform(
        &mut rng,
        cfg.background_level_range[0],
        cfg.background_level_range[1],
    );

    let (w, h) = (image.width(), image.height());
    let mut px: Vec<f32> = image.pixels().to_vec();

    if shift_x != 0.0 || shift_y != 0.0 || scale != 1.0 {
        let fill = image.border_level();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        for y in 0..h {
            for x in 0..w {
                let sx = (x as f64 + 0.5 - cx - shift_x) / scale + cx - 0.5;
                let sy = (y as f64 + 0.5 - cy - shift_y) / scale + cy - 0.5;
                px[y * w + x] = image.sample(sx, sy, fill);
            }
        }
    }
    if sigma > 0.0 {
        px = gaussian_blur(&px, w, h, sigma);
    }
    if background != 1.0 {
        let b = background as f32;
        for p in &mut px {
            *p *= b;
        }
    }
    if j > 0.0 {
        let (c, d) = (1.0 + contrast as f32, brightness as f32);
        for p in &mut px {
            *p = (*p - 0.5) * c + 0.5 + d;
        }
    }
    if invert {
        for p in &mut px {
            *p = 1.0 - p.clamp(0.0, 1.0);
        }
    }
    GrayImage::from_clamped(w, h, px).expect("dimensions preserved")
}

fn gaussian_blur(px: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f32> = {
        let raw: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.iter().map(|v| (v / sum) as f32).collect()
    };
    let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * px[y * w + clampi(x as i64 + k as i64 - radius, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[clampi(y as i64 + k as i64 - radius, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}
