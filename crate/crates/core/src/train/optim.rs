use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::nn::Tensor;
use crate::real::Real;

/// Cosine decay with linear warmup, indexed by completed optimizer steps.
///
/// `warmup = round(warmup_ratio * total)`, kept below `total` so the decay
/// phase has at least one step.
pub fn lr_at(step: usize, total_steps: usize, peak_lr: f64, warmup_ratio: f64) -> f64 {
    let total = total_steps.max(1);
    let step = step.min(total);
    let warmup = warmup_steps(total, warmup_ratio);
    if step < warmup {
        return peak_lr * step as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    peak_lr * 0.5 * (1.0 + (PI * progress).cos())
}

pub fn warmup_steps(total_steps: usize, warmup_ratio: f64) -> usize {
    let total = total_steps.max(1);
    ((warmup_ratio * total as f64).round() as usize).min(total - 1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per leaf.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .leaves()
            .iter()
            .map(|l| Tensor::zeros(l.value.rows(), l.value.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update, then gradients are zeroed.
///
/// A non-finite gradient anywhere aborts before any parameter changes.
pub fn adamw_step<T: Real>(params: &mut ModelParams<T>, state: &mut OptimState<T>, lr: f64, cfg: &AdamWConfig) -> Result<()> {
    for leaf in params.leaves() {
        if !leaf.grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", leaf.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let (inv_bc1, inv_bc2) = (T::lit(1.0 / bc1), T::lit(1.0 / bc2));
    let (lr_t, eps) = (T::lit(lr), T::lit(cfg.eps));
    let wd = T::lit(cfg.weight_decay);
    for ((leaf, m), v) in params.leaves_mut().into_iter().zip(&mut state.m).zip(&mut state.v) {
        let decay = leaf.decay;
        let grads = leaf.grad.data();
        let values = leaf.value.data_mut();
        for (((x, &g), mi), vi) in values.iter_mut().zip(grads).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + one_b1 * g;
            *vi = b2 * *vi + one_b2 * g * g;
            let mhat = *mi * inv_bc1;
            let vhat = *vi * inv_bc2;
            let mut upd = mhat / (vhat.sqrt() + eps);
            if decay {
                upd += wd * *x;
            }
            *x -= lr_t * upd;
        }
        leaf.zero_grad();
    }
    Ok(())
}

/// Global L2 norm of all gradients, accumulated in f64.
pub fn grad_norm<T: Real>(params: &ModelParams<T>) -> f64 {
    params.leaves().iter().map(|l| l.grad.sum_sq()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Real>(params: &mut ModelParams<T>, max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for leaf in params.leaves_mut() {
            leaf.grad.scale(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use proptest::prelude::*;

    fn tiny() -> ModelParams<f64> {
        let cfg = ModelConfig {
            vocab_size: 3,
            d_model: 2,
            n_heads: 1,
            n_layers: 1,
            ff_mult: 1,
            dropout: 0.0,
            max_seq_len: 2,
            variant: Variant::MlpBaseline,
            positional: false,
        };
        ModelParams::zeros(&cfg).unwrap()
    }

    #[test]
    fn schedule_endpoints() {
        let (total, peak) = (100, 1e-4);
        assert_eq!(warmup_steps(total, 0.2), 20);
        assert_eq!(lr_at(0, total, peak, 0.2), 0.0);
        assert_eq!(lr_at(10, total, peak, 0.2), 0.5e-4);
        assert_eq!(lr_at(20, total, peak, 0.2), peak);
        assert!(lr_at(100, total, peak, 0.2).abs() < 1e-20);
        // halfway through the decay: cos(pi/2) = 0
        assert!((lr_at(60, total, peak, 0.2) - peak / 2.0).abs() < 1e-18);
        assert_eq!(lr_at(0, 10, peak, 0.0), peak);
        // a single step never sits entirely in warmup
        assert_eq!(warmup_steps(1, 0.9), 0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = tiny();
        p.head.b2.grad.set(0, 0, 1.0);
        let mut st = OptimState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &mut st, 0.1, &cfg).unwrap();
        // m_hat = 1, v_hat = 1: update = 0.1 * 1 / (1 + 1e-8)
        let got = p.head.b2.value.get(0, 0);
        assert!((got + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{got}");
        assert_eq!(p.head.b2.grad.get(0, 0), 0.0);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_matches_recurrence_over_steps() {
        let grads = [0.5, -1.0, 2.0, 0.25];
        let mut p = tiny();
        let mut st = OptimState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            p.head.b2.grad.set(0, 0, *g);
            adamw_step(&mut p, &mut st, 0.01, &cfg).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let k = (t + 1) as i32;
            x -= 0.01 * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
        }
        assert!((p.head.b2.value.get(0, 0) - x).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters_or_decays() {
        let mut p = tiny();
        p.head.w1.value.set(0, 0, 2.0);
        p.head.b1.value.set(0, 0, 3.0);
        let mut st = OptimState::new(&p);
        let no_wd = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &mut st, 0.1, &no_wd).unwrap();
        assert_eq!(p.head.w1.value.get(0, 0), 2.0);

        let wd = AdamWConfig {
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &mut st, 0.1, &wd).unwrap();
        assert!((p.head.w1.value.get(0, 0) - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        // biases carry no decay
        assert_eq!(p.head.b1.value.get(0, 0), 3.0);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = tiny();
        p.head.w1.grad.set(0, 0, 1.0);
        p.head.b2.grad.set(0, 0, f64::NAN);
        let before = p.head.w1.value.clone();
        let mut st = OptimState::new(&p);
        assert!(matches!(adamw_step(&mut p, &mut st, 0.1, &AdamWConfig::default()), Err(Error::NonFinite(_))));
        assert_eq!(p.head.w1.value, before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping() {
        let mut p = tiny();
        p.head.w2.grad.set(0, 0, 3.0);
        p.head.b2.grad.set(0, 0, 4.0);
        assert_eq!(grad_norm(&p), 5.0);
        assert_eq!(clip_gradients(&mut p, 10.0), 5.0);
        assert_eq!(p.head.b2.grad.get(0, 0), 4.0);

        assert_eq!(clip_gradients(&mut p, 1.0), 5.0);
        assert!((grad_norm(&p) - 1.0).abs() < 1e-6);

        let mut q = tiny();
        q.head.b2.grad.set(0, 0, 0.5);
        assert_eq!(clip_gradients(&mut q, 1.0), 0.5);
        assert_eq!(q.head.b2.grad.get(0, 0), 0.5);
    }

    proptest! {
        #[test]
        fn schedule_is_continuous_and_bounded(total in 1usize..500, ratio in 0.0f64..0.95) {
            let peak = 1e-3;
            let w = warmup_steps(total, ratio);
            let mut bound = std::f64::consts::PI / (total - w) as f64;
            if w > 0 {
                bound = bound.max(1.0 / w as f64);
            }
            for s in 0..total {
                let (a, b) = (lr_at(s, total, peak, ratio), lr_at(s + 1, total, peak, ratio));
                prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&a));
                prop_assert!((a - b).abs() <= peak * bound * (1.0 + 1e-9));
            }
        }
    }
}
