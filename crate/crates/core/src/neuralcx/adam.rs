//! Bias-corrected Adam over a list of flat parameter tensors.

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// First/second moment estimates; `t` counts completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    /// One update of every tensor in `params` with the matching gradient.
    pub fn step(&mut self, config: &AdamConfig, params: &mut [&mut [T]], grads: &[&[T]]) {
        assert_eq!(params.len(), self.m.len(), "tensor count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.t += 1;
        let b1 = T::of(config.beta1);
        let b2 = T::of(config.beta2);
        let one = T::one();
        let c1 = T::of(1.0 - config.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - config.beta2.powi(self.t as i32));
        let lr = T::of(config.learning_rate);
        let eps = T::of(config.epsilon);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0f64, -0.02, 1e3] {
            let cfg = AdamConfig::with_lr(0.01);
            let mut p = vec![1.0f64];
            let mut st = AdamState::zeros(&[1]);
            st.step(&cfg, &mut [&mut p], &[&[g]]);
            let expected = 0.01 * g.abs() / (g.abs() + 1e-8);
            assert!(((1.0 - p[0]).abs() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut p = vec![0.3f32, -2.0];
        let mut st = AdamState::zeros(&[2]);
        for _ in 0..50 {
            st.step(&cfg, &mut [&mut p], &[&[0.0, 0.0]]);
        }
        assert_eq!(p, vec![0.3, -2.0]);
    }

    /// f(x, y) = (x - 0.5)^2 + 4 (y + 0.25)^2, started at (1, 1).
    pub fn quadratic_bowl(steps: usize, lr: f64) -> [f64; 2] {
        let cfg = AdamConfig::with_lr(lr);
        let mut p = vec![1.0f64, 1.0];
        let mut st = AdamState::zeros(&[2]);
        for _ in 0..steps {
            let g = [2.0 * (p[0] - 0.5), 8.0 * (p[1] + 0.25)];
            st.step(&cfg, &mut [&mut p], &[&g]);
        }
        [p[0], p[1]]
    }

    #[test]
    fn converges_on_quadratic() {
        let [x, y] = quadratic_bowl(200, 0.05);
        assert!(
            (x - 0.5).abs() < 1e-2 && (y + 0.25).abs() < 1e-2,
            "({x}, {y})"
        );
    }
}
