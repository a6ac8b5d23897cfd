use serde::{Deserialize, Serialize};

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamW {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// `p -= lr * wd * p + lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * weight_decay * params[i] + lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_is_pure_decay() {
        let mut opt = AdamW::new(3, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        opt.update(&mut p, &[0.0; 3], 1e-2, 1e-3);
        for (a, b) in p.iter().zip(&before) {
            assert_eq!(*a, b - 1e-2 * 1e-3 * b);
            assert!((a - b * (1.0 - 1e-5)).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = AdamW::new(2, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0, 0.0];
        opt.update(&mut p, &[3.0, -0.01], 0.1, 0.0);
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert!((p[1] - 0.1).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn zero_moments_give_sign_descent(g in prop::collection::vec(-10.0f64..10.0, 1..20), lr in 1e-4f64..1.0) {
            let mut opt = AdamW::new(g.len(), 0.0, 0.0, 1e-8);
            let mut p = vec![0.0; g.len()];
            opt.update(&mut p, &g, lr, 0.0);
            for (pi, gi) in p.iter().zip(&g) {
                prop_assert!((pi / lr + gi / (gi.abs() + 1e-8)).abs() < 1e-9);
            }
        }
    }
}
