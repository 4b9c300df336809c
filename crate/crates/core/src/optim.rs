//! AdamW with decoupled weight decay on the attention weight matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AttentionParams;
use crate::numerics::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps >= 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AdamW hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T: Scalar = f32> {
    pub step: u64,
    pub m: AttentionParams<T>,
    pub v: AttentionParams<T>,
    pub config: AdamWConfig,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(d_model: usize, config: AdamWConfig) -> Self {
        Self {
            step: 0,
            m: AttentionParams::zeros(d_model),
            v: AttentionParams::zeros(d_model),
            config,
        }
    }
}

/// One AdamW update of a flat tensor at step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    cfg: &AdamWConfig,
    t: u64,
    decay: bool,
) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..theta.len() {
        let g = grad[i].as_f64();
        let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
        let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
        let th = theta[i].as_f64();
        let step = (mi / c1) / ((vi / c2).sqrt() + cfg.eps) + wd * th;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        theta[i] = T::from_f64(th - cfg.lr * step);
    }
}

pub fn adamw_step<T: Scalar>(
    params: &mut AttentionParams<T>,
    grads: &AttentionParams<T>,
    state: &mut AdamWState<T>,
) -> Result<()> {
    if grads.d_model() != params.d_model() || state.m.d_model() != params.d_model() {
        return Err(Error::shape(
            "adamw_step",
            format!(
                "params d={}, grads d={}, state d={}",
                params.d_model(),
                grads.d_model(),
                state.m.d_model()
            ),
        ));
    }
    let t = state.step + 1;
    for (name, g) in grads.tensors() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged {
                step: t,
                detail: format!("gradient {name}[{i}] = {:?}", g[i]),
            });
        }
    }
    let cfg = state.config;
    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((name, theta), (_, g)), (_, m)), (_, v)) in
        params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs)
    {
        let decay = AttentionParams::<T>::is_weight(name);
        adamw_update(theta, g, m, v, &cfg, t, decay);
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamWConfig {
            lr: 1.0,
            eps: 0.0,
            weight_decay: 0.0,
            ..Default::default()
        };
        let (mut th, mut m, mut v) = ([0.0f64], [0.0f64], [0.0f64]);
        adamw_update(&mut th, &[1.0], &mut m, &mut v, &cfg, 1, true);
        assert!((th[0] + 1.0).abs() < 1e-12, "{}", th[0]);
    }

    #[test]
    fn zero_gradients_without_decay_are_a_no_op() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = AttentionParams::<f32>::zeros(3);
        p.wq.set(0, 1, 0.5);
        p.bk[2] = -0.25;
        let before = p.clone();
        let mut state = AdamWState::new(3, cfg);
        for _ in 0..3 {
            adamw_step(&mut p, &AttentionParams::zeros(3), &mut state).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn decay_skips_biases() {
        let mut p = AttentionParams::<f64>::zeros(2);
        p.wq.set(0, 0, 1.0);
        p.bq[0] = 1.0;
        let mut state = AdamWState::new(2, AdamWConfig::default());
        adamw_step(&mut p, &AttentionParams::zeros(2), &mut state).unwrap();
        assert!((p.wq.get(0, 0) - (1.0 - 3e-4 * 0.01)).abs() < 1e-15);
        assert_eq!(p.bq[0], 1.0);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = AttentionParams::<f32>::zeros(2);
        let mut g = AttentionParams::<f32>::zeros(2);
        g.bv[1] = f32::NAN;
        let mut state = AdamWState::new(2, AdamWConfig::default());
        let err = adamw_step(&mut p, &g, &mut state).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { step: 1, ref detail } if detail.contains("bv[1]")));
        assert_eq!(state.step, 0);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let target: Vec<f64> = (0..4).map(|i| i as f64 - 1.5).collect();
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        let (mut x, mut m, mut v) = (vec![5.0f64; 4], vec![0.0; 4], vec![0.0; 4]);
        let loss = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut prev = loss(&x);
        for t in 1..=100 {
            let g: Vec<f64> = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            adamw_update(&mut x, &g, &mut m, &mut v, &cfg, t, false);
            let cur = loss(&x);
            if t > 5 {
                assert!(cur < prev, "step {t}: {cur} >= {prev}");
            }
            prev = cur;
        }
    }
}
