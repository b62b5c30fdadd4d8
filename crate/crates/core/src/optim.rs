//! RAdam optimizer and the step-decay learning-rate schedule.
//!
//! RAdam tracks Adam's first/second moments but rectifies the adaptive term:
//! with `rho_inf = 2/(1-beta2) - 1` and
//! `rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t)`, steps where `rho_t > 4`
//! apply the variance-rectified adaptive update scaled by
//! `r = sqrt(((rho_t-4)(rho_t-2) rho_inf) / ((rho_inf-4)(rho_inf-2) rho_t))`;
//! earlier steps fall back to plain bias-corrected momentum (no
//! second-moment division). Under the default beta2 = 0.999 the momentum
//! branch covers exactly t <= 4.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RadamHyper {
    fn default() -> Self {
        RadamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct Radam<S: Scalar> {
    pub hyper: RadamHyper,
    step: u64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> Radam<S> {
    pub fn new(shapes: &[Vec<usize>], hyper: RadamHyper) -> Self {
        Radam {
            hyper,
            step: 0,
            first: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Restore a snapshot taken with [`Radam::moments`] (checkpoint resume).
    pub fn restore(
        shapes: &[Vec<usize>],
        hyper: RadamHyper,
        step: u64,
        first: Vec<Tensor<S>>,
        second: Vec<Tensor<S>>,
    ) -> Result<Self> {
        if first.len() != shapes.len() || second.len() != shapes.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer slot count {} does not match parameter count {}",
                first.len(),
                shapes.len()
            )));
        }
        for ((shape, m), v) in shapes.iter().zip(&first).zip(&second) {
            if m.shape() != shape.as_slice() || v.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(
                    "optimizer moment shape does not match parameter shape".to_string(),
                ));
            }
        }
        Ok(Radam { hyper, step, first, second })
    }

    pub fn moments(&self) -> (&[Tensor<S>], &[Tensor<S>]) {
        (&self.first, &self.second)
    }

    /// One update over all parameters. Rejects the whole step if any gradient
    /// is non-finite, leaving parameters and state untouched.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<S>)],
        grads: &[Tensor<S>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer expects {} parameter/gradient pairs, got {}/{}",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            p.same_shape(g, "radam_step")?;
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient { param: name.clone() });
            }
        }

        let t = (self.step + 1) as f64;
        let RadamHyper { beta1, beta2, eps } = self.hyper;
        let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
        let beta2_t = beta2.powf(t);
        let rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);
        let bias1 = 1.0 - beta1.powf(t);
        let bias2 = 1.0 - beta2_t;
        let rectified = rho_t > 4.0;
        let rect = if rectified {
            (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                .sqrt()
        } else {
            0.0
        };

        let b1 = S::from_f64(beta1);
        let nb1 = S::from_f64(1.0 - beta1);
        let b2 = S::from_f64(beta2);
        let nb2 = S::from_f64(1.0 - beta2);
        let inv_bias1 = S::from_f64(1.0 / bias1);
        let inv_bias2 = S::from_f64(1.0 / bias2);
        let eps_s = S::from_f64(eps);
        let lr_m = S::from_f64(lr);
        let lr_r = S::from_f64(lr * rect);

        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let pd = p.data_mut();
            for ((pv, &gv), (mv, vv)) in
                pd.iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = b1 * *mv + nb1 * gv;
                *vv = b2 * *vv + nb2 * gv * gv;
                let m_hat = *mv * inv_bias1;
                if rectified {
                    let denom = (*vv * inv_bias2).sqrt() + eps_s;
                    *pv = *pv - lr_r * m_hat / denom;
                } else {
                    *pv = *pv - lr_m * m_hat;
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Learning-rate schedule: the base rate is divided by ten every 100 epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// `base * 10^(-floor(epoch/100))`.
    StepEvery100,
    /// A single drop: `base` before epoch 100, `base/10` afterwards.
    SingleDropAt100,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::StepEvery100 => "step100",
            Schedule::SingleDropAt100 => "single-drop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "step100" => Some(Schedule::StepEvery100),
            "single-drop" => Some(Schedule::SingleDropAt100),
            _ => None,
        }
    }
}

pub fn lr_schedule(schedule: Schedule, epoch: usize, base_lr: f64) -> f64 {
    match schedule {
        Schedule::StepEvery100 => base_lr * 10f64.powi(-((epoch / 100) as i32)),
        Schedule::SingleDropAt100 => {
            if epoch < 100 {
                base_lr
            } else {
                base_lr / 10.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    fn step_scalar(opt: &mut Radam<f64>, p: &mut Tensor<f64>, g: f64, lr: f64) {
        let grads = vec![Tensor::scalar(g)];
        let mut params = vec![("p".to_string(), p)];
        opt.step(&mut params, &grads, lr).unwrap();
    }

    #[test]
    fn zero_gradient_never_moves_parameters() {
        let mut p = scalar_param(1.25);
        let mut opt = Radam::new(&[vec![1]], RadamHyper::default());
        for _ in 0..50 {
            step_scalar(&mut opt, &mut p, 0.0, 0.1);
        }
        assert_eq!(p.data()[0], 1.25);
    }

    #[test]
    fn first_step_is_plain_momentum() {
        // t=1: rho_1 = 1 <= 4, so theta_1 = -lr * m_hat = -0.1
        let mut p = scalar_param(0.0);
        let mut opt = Radam::new(&[vec![1]], RadamHyper::default());
        step_scalar(&mut opt, &mut p, 1.0, 0.1);
        assert!((p.data()[0] - -0.1).abs() < 1e-15);
    }

    #[test]
    fn momentum_branch_covers_first_four_steps() {
        let h = RadamHyper::default();
        let rho_inf = 2.0 / (1.0 - h.beta2) - 1.0;
        let rho = |t: f64| rho_inf - 2.0 * t * h.beta2.powf(t) / (1.0 - h.beta2.powf(t));
        for t in 1..=4 {
            assert!(rho(t as f64) <= 4.0, "t={t} should be un-adapted");
        }
        assert!(rho(5.0) > 4.0, "t=5 should be rectified");

        // through t<=4 the update ignores the second moment entirely:
        // constant gradient gives theta_t = -lr * t for bias-corrected momentum
        let mut p = scalar_param(0.0);
        let mut opt = Radam::new(&[vec![1]], h);
        for t in 1..=4 {
            step_scalar(&mut opt, &mut p, 1.0, 0.1);
            assert!(
                (p.data()[0] - -0.1 * t as f64).abs() < 1e-12,
                "momentum branch at t={t}"
            );
        }
        // the fifth step switches branch and moves by far less than lr
        let before = p.data()[0];
        step_scalar(&mut opt, &mut p, 1.0, 0.1);
        let delta = (p.data()[0] - before).abs();
        assert!(delta < 0.01, "rectified step should be damped, moved {delta}");
    }

    #[test]
    fn non_finite_gradient_rejects_step() {
        let mut p = scalar_param(1.0);
        let mut opt = Radam::new(&[vec![1]], RadamHyper::default());
        let grads = vec![Tensor::scalar(f64::NAN)];
        let mut params = vec![("p".to_string(), &mut p)];
        let err = opt.step(&mut params, &grads, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { .. }));
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn update_is_invariant_to_flattening_order() {
        // same scalars as one 4-vector vs four scalars
        let gvals = [0.3, -1.1, 0.02, 4.0];
        let mut flat = Tensor::<f64>::from_f64_slice(&[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut opt = Radam::new(&[vec![4]], RadamHyper::default());
        let grads = vec![Tensor::from_f64_slice(&[4], &gvals).unwrap()];
        let mut params = vec![("flat".to_string(), &mut flat)];
        opt.step(&mut params, &grads, 0.05).unwrap();

        let mut split: Vec<Tensor<f64>> =
            (0..4).map(|i| Tensor::scalar((i + 1) as f64)).collect();
        let shapes = vec![vec![1]; 4];
        let mut opt2 = Radam::new(&shapes, RadamHyper::default());
        let grads2: Vec<Tensor<f64>> = gvals.iter().map(|&g| Tensor::scalar(g)).collect();
        let mut params2: Vec<(String, &mut Tensor<f64>)> = split
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (format!("p{i}"), p))
            .collect();
        opt2.step(&mut params2, &grads2, 0.05).unwrap();

        for i in 0..4 {
            assert_eq!(flat.data()[i], split[i].data()[0]);
        }
    }

    #[test]
    fn deterministic_given_identical_state() {
        let run = || {
            let mut p = scalar_param(0.7);
            let mut opt = Radam::new(&[vec![1]], RadamHyper::default());
            for t in 0..20 {
                step_scalar(&mut opt, &mut p, (t as f64 * 0.37).sin(), 0.01);
            }
            p.data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn schedule_divides_by_ten_every_100_epochs() {
        assert_eq!(lr_schedule(Schedule::StepEvery100, 0, 1e-4), 1e-4);
        assert_eq!(lr_schedule(Schedule::StepEvery100, 99, 1e-4), 1e-4);
        assert_eq!(lr_schedule(Schedule::StepEvery100, 100, 1e-4), 1e-5);
        assert!((lr_schedule(Schedule::StepEvery100, 250, 1e-4) - 1e-6).abs() < 1e-20);
        assert_eq!(lr_schedule(Schedule::SingleDropAt100, 250, 1e-4), 1e-5);
        assert_eq!(lr_schedule(Schedule::SingleDropAt100, 99, 1e-4), 1e-4);
    }
}
