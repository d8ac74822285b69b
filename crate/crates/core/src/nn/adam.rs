use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state size");
        assert_eq!(grad.len(), self.m.len(), "gradient size");
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut opt = Adam::new(AdamConfig::default(), 2);
        let mut p = vec![1.0, -2.0];
        opt.step(&mut p, &[0.5, -1.0]);
        let after_one = p.clone();
        let (m0, v0) = (opt.m.clone(), opt.v.clone());
        opt.step(&mut p, &[0.0, 0.0]);
        for i in 0..2 {
            assert_abs_diff_eq!(opt.m[i], 0.9 * m0[i], epsilon = 1e-15);
            assert_abs_diff_eq!(opt.v[i], 0.999 * v0[i], epsilon = 1e-15);
        }
        // momentum keeps moving p; with a fresh optimizer zero grad is a no-op
        assert_ne!(p, after_one);
        let mut fresh = Adam::new(AdamConfig::default(), 2);
        let mut q = vec![1.0, -2.0];
        fresh.step(&mut q, &[0.0, 0.0]);
        assert_eq!(q, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut opt = Adam::new(cfg, 3);
        let g = [3.0, -0.2, 1e-3];
        let mut p = vec![0.0; 3];
        opt.step(&mut p, &g);
        for (pi, gi) in p.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert_abs_diff_eq!(*pi, expected, epsilon = 1e-15);
            assert_abs_diff_eq!(*pi, -0.01 * gi.signum(), epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_learning_rate_freezes() {
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut opt = Adam::new(cfg, 2);
        let mut p = vec![0.3, 0.7];
        for _ in 0..10 {
            opt.step(&mut p, &[1.0, -1.0]);
        }
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(x, y) = 2 (x - 1)^2 + 0.5 (y + 3)^2
        let f = |p: &[f64]| 2.0 * (p[0] - 1.0).powi(2) + 0.5 * (p[1] + 3.0).powi(2);
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut opt = Adam::new(cfg, 2);
        let mut p = vec![4.0, 2.0];
        let mut losses = vec![f(&p)];
        for _ in 0..100 {
            let g = [4.0 * (p[0] - 1.0), p[1] + 3.0];
            opt.step(&mut p, &g);
            losses.push(f(&p));
        }
        let warmup = 5;
        for w in losses[warmup..].windows(2) {
            assert!(w[1] < w[0], "loss rose: {} -> {}", w[0], w[1]);
        }
        assert!(losses[100] < 0.1 * losses[0]);
    }
}
