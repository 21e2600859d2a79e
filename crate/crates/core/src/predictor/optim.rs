use serde::{Deserialize, Serialize};

use crate::predictor::{Gradients, Params, Scalar};

/// Linear warmup to `peak`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRateSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
}

impl LearningRateSchedule {
    /// Warmup over the first `fraction` of `total_steps`.
    pub fn with_warmup_fraction(peak: f64, total_steps: u64, fraction: f64) -> Self {
        Self {
            peak,
            warmup_steps: (total_steps as f64 * fraction).ceil() as u64,
        }
    }

    /// Rate used for zero-based step `step`.
    pub fn rate(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.peak
        } else {
            self.peak * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub first: Params<T>,
    pub second: Params<T>,
    /// Updates applied so far.
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &Params<T>) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut Params<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = T::of(1.0 - self.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.step.min(i32::MAX as u64) as i32));
        let lr = T::of(lr);
        let eps = T::of(self.eps);
        let one = T::one();
        let grads = grads.params.trainable();
        let firsts = self.first.trainable_mut();
        let seconds = self.second.trainable_mut();
        for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in
            params.trainable_mut().into_iter().zip(grads).zip(firsts).zip(seconds)
        {
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}
