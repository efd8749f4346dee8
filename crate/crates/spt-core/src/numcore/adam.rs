//! Adam optimizer with bias correction and a cosine learning-rate schedule.

use crate::error::{Result, SptError};
use crate::numcore::array::Array;
use crate::numcore::real::Real;

/// Learning rate as a function of the global step.
#[derive(Clone, Debug)]
pub enum LrSchedule {
    Constant(f64),
    /// Cosine decay from `base` to `min` over `total_steps`.
    Cosine {
        base: f64,
        min: f64,
        total_steps: usize,
    },
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Cosine {
                base,
                min,
                total_steps,
            } => {
                if total_steps <= 1 {
                    return base;
                }
                let t = (step.min(total_steps - 1)) as f64 / (total_steps - 1) as f64;
                min + 0.5 * (base - min) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Per-parameter moment accumulators plus the shared step counter.
pub struct AdamState<T: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: LrSchedule,
    step: usize,
    moments: Vec<Option<(Array<T>, Array<T>)>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(n_params: usize, schedule: LrSchedule) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            schedule,
            step: 0,
            moments: (0..n_params).map(|_| None).collect(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.at(self.step)
    }

    /// One bias-corrected update over all parameters. `grads[i] = None`
    /// means the parameter did not participate and receives a zero
    /// gradient (its moments still decay).
    pub fn step(&mut self, params: &mut [Array<T>], grads: &[Option<Array<T>>]) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != params.len() {
            return Err(SptError::invalid(format!(
                "adam_step: {} params, {} grads, {} states",
                params.len(),
                grads.len(),
                self.moments.len()
            )));
        }
        let lr = self.schedule.at(self.step);
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let eps = T::from_f64(self.epsilon);
        let scale = T::from_f64(lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);

        for ((param, grad), moment) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.moments.iter_mut())
        {
            let (m, v) = moment.get_or_insert_with(|| {
                (
                    Array::zeros(param.shape().to_vec()),
                    Array::zeros(param.shape().to_vec()),
                )
            });
            if m.shape() != param.shape() {
                return Err(SptError::ShapeMismatch {
                    op: "adam_step",
                    left: param.shape().to_vec(),
                    right: m.shape().to_vec(),
                });
            }
            let zeros;
            let g = match grad {
                Some(g) => {
                    if g.shape() != param.shape() {
                        return Err(SptError::ShapeMismatch {
                            op: "adam_step",
                            left: param.shape().to_vec(),
                            right: g.shape().to_vec(),
                        });
                    }
                    g
                }
                None => {
                    zeros = Array::zeros(param.shape().to_vec());
                    &zeros
                }
            };
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = param.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = b1 * md[i] + one_m_b1 * gi;
                vd[i] = b2 * vd[i] + one_m_b2 * gi * gi;
                let vhat = vd[i] * inv_bc2;
                pd[i] -= scale * md[i] / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut params = vec![Array::matrix(1, 3, vec![1.0f64, -2.0, 0.5]).unwrap()];
        let before = params[0].data().to_vec();
        let mut adam = AdamState::new(1, LrSchedule::Constant(1e-3));
        let grads = vec![Some(Array::zeros(vec![1, 3]))];
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].data(), &before[..]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let lr = 1e-2;
        let mut params = vec![Array::matrix(1, 2, vec![0.0f64, 0.0]).unwrap()];
        let mut adam = AdamState::new(1, LrSchedule::Constant(lr));
        let grads = vec![Some(Array::matrix(1, 2, vec![0.3, -4.0]).unwrap())];
        adam.step(&mut params, &grads).unwrap();
        // Bias correction at t=1 gives a step of magnitude ~lr in the
        // direction of -sign(g).
        for (&p, &g) in params[0].data().iter().zip([0.3f64, -4.0].iter()) {
            assert!((p + lr * g.signum()).abs() < lr * 1e-3);
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut params = vec![Array::matrix(1, 2, vec![1.0f32, 2.0]).unwrap()];
            let mut adam = AdamState::new(1, LrSchedule::Constant(1e-3));
            for _ in 0..2 {
                let grads = vec![Some(Array::matrix(1, 2, vec![0.1, -0.2]).unwrap())];
                adam.step(&mut params, &grads).unwrap();
            }
            params[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::Cosine {
            base: 1e-3,
            min: 1e-5,
            total_steps: 100,
        };
        assert!((s.at(0) - 1e-3).abs() < 1e-12);
        assert!((s.at(99) - 1e-5).abs() < 1e-12);
        assert!(s.at(50) < 1e-3 && s.at(50) > 1e-5);
    }
}
