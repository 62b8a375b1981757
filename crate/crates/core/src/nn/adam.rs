use serde::{Deserialize, Serialize};

use super::{Mat, NnError, Params, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Linear warm-up followed by per-epoch exponential decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 8e-6,
            warmup_epochs: 5,
            decay: 0.97,
        }
    }
}

/// Learning rate for a zero-based epoch: `base * (e+1) / warmup` during warm-up, then
/// `base * decay^(e - warmup)`.
pub fn lr_at(epoch: usize, schedule: &LrSchedule) -> f64 {
    if epoch < schedule.warmup_epochs {
        schedule.base_lr * (epoch + 1) as f64 / schedule.warmup_epochs as f64
    } else {
        schedule.base_lr * schedule.decay.powi((epoch - schedule.warmup_epochs) as i32)
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor, in the order the
/// model's [`Params`] implementation visits them.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: Params<T>>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<(usize, usize)> = params.named_params().iter().map(|(_, m)| m.shape()).collect();
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    pub fn moments(&self) -> (&[Mat<T>], &[Mat<T>]) {
        (&self.m, &self.v)
    }

    pub fn update<P: Params<T>>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<(), NnError> {
        let g = grads.named_params();
        let p = params.params_mut();
        if g.len() != p.len() || p.len() != self.m.len() {
            return Err(NnError::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let b1 = T::c(self.config.beta1);
        let b2 = T::c(self.config.beta2);
        let eps = T::c(self.config.eps);
        let lr = T::c(lr);
        let corr1 = T::one() - T::c(self.config.beta1.powi(self.step as i32));
        let corr2 = T::one() - T::c(self.config.beta2.powi(self.step as i32));
        for (((param, (_, grad)), m), v) in p.into_iter().zip(g).zip(&mut self.m).zip(&mut self.v) {
            if param.shape() != grad.shape() || param.shape() != m.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "parameter {:?} vs gradient {:?}",
                    param.shape(),
                    grad.shape()
                )));
            }
            let it = param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gr), (mi, vi)) in it {
                *mi = b1 * *mi + (T::one() - b1) * gr;
                *vi = b2 * *vi + (T::one() - b2) * gr * gr;
                let mhat = *mi / corr1;
                let vhat = *vi / corr2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{join, Params};
    use approx::assert_abs_diff_eq;

    #[derive(Clone)]
    struct One(Mat<f64>);

    impl Params<f64> for One {
        fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<f64>)>) {
            out.push((join(prefix, "w"), &self.0));
        }
        fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<f64>)>) {
            out.push((join(prefix, "w"), &mut self.0));
        }
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::default();
        assert_abs_diff_eq!(lr_at(0, &s), 1.6e-6, epsilon = 1e-18);
        assert_abs_diff_eq!(lr_at(4, &s), 8e-6, epsilon = 1e-18);
        assert_abs_diff_eq!(lr_at(5, &s), 8e-6, epsilon = 1e-18);
        assert_abs_diff_eq!(lr_at(6, &s), 8e-6 * 0.97, epsilon = 1e-18);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = One(Mat::row_vector(vec![1.5, -2.0]));
        let g = One(Mat::zeros(1, 2));
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.update(&mut p, &g, 0.1).unwrap();
        assert_eq!(p.0.data(), &[1.5, -2.0]);
    }

    #[test]
    fn first_step_unit_gradient() {
        let mut p = One(Mat::row_vector(vec![0.0]));
        let g = One(Mat::row_vector(vec![1.0]));
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.update(&mut p, &g, 0.01).unwrap();
        assert_abs_diff_eq!(p.0.get(0, 0), -0.01 / (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn two_steps_match_scripted_rule() {
        // Reference: the published update written out longhand.
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8f64, 0.05f64, 0.3f64);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = One(Mat::row_vector(vec![1.0]));
        let gr = One(Mat::row_vector(vec![g]));
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.update(&mut p, &gr, lr).unwrap();
        opt.update(&mut p, &gr, lr).unwrap();
        assert_abs_diff_eq!(p.0.get(0, 0), w, epsilon = 1e-12);
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = One(Mat::zeros(1, 2));
        let g = One(Mat::zeros(2, 1));
        let mut opt = Adam::new(AdamConfig::default(), &p);
        assert!(opt.update(&mut p, &g, 0.1).is_err());
    }
}
