use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Matrix, ParamStore};
use crate::math;
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments per parameter tensor, plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Matrix::zeros(t.rows(), t.cols()))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One AdamW step with decoupled weight decay:
/// `p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// Nothing is modified when any gradient is non-finite; the error names the
/// offending tensor.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} gradients and {} optimizer slots for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (name, g) in params.names().iter().zip(grads) {
        if let Some(pos) = g.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of '{name}' at flat index {pos} is {}",
                g.as_slice()[pos]
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powi(BETA1, t);
    let bc2 = 1.0 - math::powi(BETA2, t);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].as_slice();
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        for (k, w) in p.as_mut_slice().iter_mut().enumerate() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *w = *w - lr * weight_decay * *w - lr * m_hat / (math::sqrt(v_hat) + EPSILON);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = math::sqrt(
        grads
            .iter()
            .flat_map(|g| g.as_slice())
            .map(|v| v * v)
            .sum::<f64>(),
    );
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.as_mut_slice() {
                *v *= k;
            }
        }
    }
    norm
}

/// Per-epoch learning rate: linear warmup from 0, then cosine decay to 0 at
/// the final epoch.
pub fn lr_schedule(epoch: usize, epochs: usize, warmup: usize, lr: f64) -> f64 {
    if epoch < warmup {
        return lr * epoch as f64 / warmup as f64;
    }
    let span = epochs.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return lr;
    }
    let progress = ((epoch - warmup) as f64 / span as f64).min(1.0);
    lr * 0.5 * (1.0 + math::cos(core::f64::consts::PI * progress))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("x", Matrix::scalar(x));
        s
    }

    #[test]
    fn schedule_endpoints() {
        let lr = 1e-3;
        assert_eq!(lr_schedule(0, 100, 5, lr), 0.0);
        assert_eq!(lr_schedule(5, 100, 5, lr), lr);
        assert!(lr_schedule(99, 100, 5, lr).abs() < 1e-18);
        // progress (e - 5) / 94 = 0.5 at e = 52
        assert!((lr_schedule(52, 100, 5, lr) - lr / 2.0).abs() < 1e-18);
        assert_eq!(lr_schedule(2, 100, 5, lr), lr * 2.0 / 5.0);
        assert_eq!(lr_schedule(0, 1, 0, lr), lr);
    }

    #[test]
    fn pure_decay_shrinks_by_lr_wd_p() {
        let mut s = scalar_store(2.0);
        let mut st = AdamState::new(&s);
        adamw_step(&mut s, &[Matrix::scalar(0.0)], &mut st, 0.1, 0.01).unwrap();
        assert_eq!(s.tensors()[0].as_slice()[0], 2.0 - 0.1 * 0.01 * 2.0);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        let err = adamw_step(&mut s, &[Matrix::scalar(f64::NAN)], &mut st, 0.1, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("'x'")));
        assert_eq!(s.tensors()[0].as_slice()[0], 1.0);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn quadratic_converges() {
        let mut s = scalar_store(3.0);
        let mut st = AdamState::new(&s);
        for _ in 0..2000 {
            let x = s.tensors()[0].as_slice()[0];
            let g = 2.0 * (x - 1.5);
            let lr = 0.05 * (1.0 - st.step as f64 / 2000.0);
            adamw_step(&mut s, &[Matrix::scalar(g)], &mut st, lr, 0.0).unwrap();
        }
        assert!((s.tensors()[0].as_slice()[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut g = vec![Matrix::row_vector(&[3.0, 4.0])];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((g[0].as_slice()[1] - 0.8).abs() < 1e-15);
    }
}
