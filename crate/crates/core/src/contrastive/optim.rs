use crate::encoder::{DoubleParams, EncoderParams};
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: DoubleParams,
    pub v: DoubleParams,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        AdamState {
            step: 0,
            m: DoubleParams::zeros_like(params.architecture()),
            v: DoubleParams::zeros_like(params.architecture()),
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay:
/// `w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w)`.
///
/// A non-finite gradient aborts the step with `params` and `state` untouched.
pub fn adamw_step(params: &mut EncoderParams, grads: &DoubleParams, state: &mut AdamState, cfg: &AdamWConfig) -> Result<()> {
    if grads.arch != *params.architecture() || state.m.arch != grads.arch {
        return Err(Error::Shape("gradients, state and parameters disagree on architecture".into()));
    }
    for (t, g) in params.tensors().iter().zip(&grads.tensors) {
        if g.len() != t.data.len() {
            return Err(Error::Shape(format!("gradient for {} has {} entries", t.name, g.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(t.name.clone()));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (ti, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let g = &grads.tensors[ti];
        let m = &mut state.m.tensors[ti];
        let v = &mut state.v.tensors[ti];
        for (i, w) in tensor.data.iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let wf = *w as f64;
            *w = (wf - cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * wf)) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Architecture, EncoderParams, Layer};

    /// A 1x1 input feeding a 1-output dense layer: two scalar parameters.
    fn scalar_params(w: f32) -> EncoderParams {
        let arch = Architecture {
            input: [1, 1, 1],
            layers: vec![Layer::Dense { inputs: 1, outputs: 1 }],
        };
        let mut p = EncoderParams::init(&arch, 0).unwrap();
        p.tensors_mut()[0].data[0] = w;
        p
    }

    fn step(p: &mut EncoderParams, s: &mut AdamState, g: f64, cfg: &AdamWConfig) -> Result<()> {
        let mut grads = DoubleParams::zeros_like(p.architecture());
        grads.tensors[0][0] = g;
        adamw_step(p, &grads, s, cfg)
    }

    const CFG: AdamWConfig = AdamWConfig {
        learning_rate: 0.1,
        weight_decay: 0.0,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut p = scalar_params(0.7);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        for _ in 0..3 {
            step(&mut p, &mut s, 0.0, &CFG).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1; step = 0.1 / (1 + 1e-8).
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(&p);
        step(&mut p, &mut s, 1.0, &CFG).unwrap();
        let expected = (1.0 - 0.1 / (1.0 + 1e-8)) as f32;
        assert_eq!(p.tensors()[0].data[0], expected);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn weight_decay_alone_shrinks_toward_zero() {
        for w0 in [2.0f32, -0.5, 1e-3] {
            let mut p = scalar_params(w0);
            let mut s = AdamState::new(&p);
            let cfg = AdamWConfig {
                weight_decay: 5e-4,
                ..CFG
            };
            step(&mut p, &mut s, 0.0, &cfg).unwrap();
            let w = p.tensors()[0].data[0];
            assert!(w.abs() < w0.abs() && w.signum() == w0.signum(), "{w0} -> {w}");
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar_params(1.0);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let err = step(&mut p, &mut s, f64::NAN, &CFG).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref name) if name == "fc.weight"));
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }
}
