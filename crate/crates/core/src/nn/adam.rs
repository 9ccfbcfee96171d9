use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                what: "optimizer step",
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads[i])));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 3.0];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(3, 0.01);
        let mut p = vec![0.0; 3];
        let g = [2.5, -0.003, 40.0];
        opt.step(&mut p, &g).unwrap();
        // m_hat = g, v_hat = g^2  =>  delta = -lr * g / (|g| + eps)
        for (pi, gi) in p.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
            assert!((pi.abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let center = [1.5, -0.5, 2.0];
        let mut opt = Adam::new(3, 0.05);
        let mut p = vec![0.0; 3];
        let loss = |p: &[f64]| p.iter().zip(center).map(|(x, c)| (x - c).powi(2)).sum::<f64>();
        for i in 0..500 {
            if i == 250 {
                opt.lr = 0.005;
            }
            let g: Vec<f64> = p.iter().zip(center).map(|(x, c)| 2.0 * (x - c)).collect();
            opt.step(&mut p, &g).unwrap();
        }
        assert!(loss(&p) < 1e-6, "loss {}", loss(&p));
    }

    #[test]
    fn rejects_non_finite() {
        let mut opt = Adam::new(2, 0.01);
        let mut p = vec![0.0; 2];
        assert!(matches!(opt.step(&mut p, &[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
        assert!(opt.step(&mut p, &[0.0]).is_err());
    }
}
