use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.98;
pub const ADAM_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Checkpoint every this many steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            warmup_steps: 4000,
            total_steps: 5000,
            weight_decay: 1e-6,
            batch_size: 8,
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 {
            return Err(Error::InvalidArgument("warmup_steps must be at least 1".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::InvalidArgument("peak_lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    /// Linear warmup to `peak_lr`, then inverse-square-root decay.
    pub fn noam_lr(&self, step: u64) -> Result<f64> {
        noam_lr(step, self.peak_lr, self.warmup_steps)
    }
}

pub fn noam_lr(step: u64, peak_lr: f64, warmup_steps: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::InvalidArgument("learning-rate steps start at 1".into()));
    }
    if warmup_steps == 0 {
        return Err(Error::InvalidArgument("warmup_steps must be at least 1".into()));
    }
    let (s, w) = (step as f64, warmup_steps as f64);
    Ok(peak_lr * (s / w).min((w / s).sqrt()))
}

/// Adam first and second moments, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        let z: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self { m: z.clone(), v: z }
    }
}

/// One Adam update at `step` (1-based) followed by decoupled weight decay.
/// `grads[i] = None` means a zero gradient. Nothing is written unless every
/// updated value is finite.
pub fn optimizer_step(
    params: &mut [Tensor],
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    step: u64,
    schedule: &TrainingSchedule,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::DimensionMismatch {
            what: "optimizer tensors",
            expected: params.len(),
            got: grads.len(),
        });
    }
    let lr = schedule.noam_lr(step)?;
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    let decay = 1.0 - lr * schedule.weight_decay;

    let mut new_p = Vec::with_capacity(params.len());
    let mut new_m = Vec::with_capacity(params.len());
    let mut new_v = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        if let Some(g) = &grads[i] {
            if g.shape() != p.shape() {
                return Err(Error::DimensionMismatch {
                    what: "gradient elements",
                    expected: p.len(),
                    got: g.len(),
                });
            }
        }
        let mut p2 = p.clone();
        let mut m2 = state.m[i].clone();
        let mut v2 = state.v[i].clone();
        let g = grads[i].as_ref().map(Tensor::data);
        for k in 0..p2.len() {
            let gk = g.map_or(0.0, |g| g[k]);
            let m = ADAM_BETA1 * m2.data()[k] + (1.0 - ADAM_BETA1) * gk;
            let v = ADAM_BETA2 * v2.data()[k] + (1.0 - ADAM_BETA2) * gk * gk;
            let update = lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
            let x = (p2.data()[k] - update) * decay;
            m2.data_mut()[k] = m;
            v2.data_mut()[k] = v;
            p2.data_mut()[k] = x;
        }
        if !(p2.is_finite() && m2.is_finite() && v2.is_finite()) {
            return Err(Error::NonFinite(format!("optimizer update of tensor {i}")));
        }
        new_p.push(p2);
        new_m.push(m2);
        new_v.push(v2);
    }
    params.iter_mut().zip(new_p).for_each(|(p, n)| *p = n);
    state.m = new_m;
    state.v = new_v;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(wd: f64) -> TrainingSchedule {
        TrainingSchedule {
            weight_decay: wd,
            ..TrainingSchedule::default()
        }
    }

    #[test]
    fn noam_values() {
        let s = sched(0.0);
        assert!((s.noam_lr(2000).unwrap() - 5.0e-4).abs() <= 1e-12);
        assert!((s.noam_lr(4000).unwrap() - 1.0e-3).abs() <= 1e-12);
        assert!((s.noam_lr(16000).unwrap() - 5.0e-4).abs() <= 1e-12);
        assert!(s.noam_lr(0).is_err());
    }

    #[test]
    fn noam_shape() {
        let s = sched(0.0);
        let lr: Vec<f64> = (1..=12000).map(|k| s.noam_lr(k).unwrap()).collect();
        assert!(lr[..4000].windows(2).all(|w| w[1] > w[0]));
        assert!(lr[3999..].windows(2).all(|w| w[1] < w[0]));
        let left = s.noam_lr(3999).unwrap();
        let right = s.noam_lr(4001).unwrap();
        assert!((left - 1e-3).abs() < 1e-6 && (right - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut p = vec![Tensor::from_vec(1, 3, vec![0.5, -1.0, 2.0])];
        let before = p.clone();
        let mut st = AdamState::zeros_like(&p);
        optimizer_step(&mut p, &[None], &mut st, 10, &sched(0.0)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn one_step_closed_form() {
        let (x0, g, step) = (0.7_f64, 0.3_f64, 100_u64);
        let s = sched(1e-6);
        let mut p = vec![Tensor::scalar(x0)];
        let mut st = AdamState::zeros_like(&p);
        optimizer_step(&mut p, &[Some(Tensor::scalar(g))], &mut st, step, &s).unwrap();
        let lr = 1e-3 * 100.0 / 4000.0;
        let m_hat = 0.1 * g / (1.0 - 0.9f64.powi(100));
        let v_hat = 0.02 * g * g / (1.0 - 0.98f64.powi(100));
        let expected = (x0 - lr * m_hat / (v_hat.sqrt() + 1e-9)) * (1.0 - lr * 1e-6);
        assert!((p[0].item() - expected).abs() <= 1e-12);
        assert!((st.m[0].item() - 0.1 * g).abs() <= 1e-15);
    }

    #[test]
    fn decay_only_scales() {
        let s = sched(1e-6);
        let mut p = vec![Tensor::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.25])];
        let before = p[0].clone();
        let mut st = AdamState::zeros_like(&p);
        optimizer_step(&mut p, &[None], &mut st, 4000, &s).unwrap();
        let f = 1.0 - 1e-3 * 1e-6;
        for (a, b) in p[0].data().iter().zip(before.data()) {
            assert_eq!(*a, b * f);
        }
    }

    #[test]
    fn non_finite_update_is_rejected_atomically() {
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let before = p.clone();
        let mut st = AdamState::zeros_like(&p);
        let grads = [Some(Tensor::scalar(1.0)), Some(Tensor::scalar(f64::NAN))];
        assert!(optimizer_step(&mut p, &grads, &mut st, 1, &sched(0.0)).is_err());
        assert_eq!(p, before);
        assert_eq!(st, AdamState::zeros_like(&before));
    }
}
