//! Adam with bias correction, and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    config: AdamConfig,
    m: Vec<Matrix<F>>,
    v: Vec<Matrix<F>>,
    steps: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
            .unzip();
        Self { config, m, v, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter with learning rate `lr`.
    pub fn step<'p>(&mut self, params: impl IntoIterator<Item = &'p mut Matrix<F>>, grads: &[Matrix<F>], lr: f64) {
        self.steps += 1;
        let c = self.config;
        let b1 = F::lit(c.beta1);
        let b2 = F::lit(c.beta2);
        let one = F::one();
        let bc1 = F::lit(1.0 - c.beta1.powi(self.steps as i32));
        let bc2 = F::lit(1.0 - c.beta2.powi(self.steps as i32));
        let lr = F::lit(lr);
        let eps = F::lit(c.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// L2 norm over all gradient entries.
pub fn global_norm<F: Real>(grads: &[Matrix<F>]) -> f64 {
    grads.iter().map(Matrix::squared_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut [Matrix<F>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = F::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Matrix::from_vec(1, 2, vec![1.0f64, -1.0]).unwrap();
        let g = vec![Matrix::from_vec(1, 2, vec![0.5, -2.0]).unwrap()];
        let mut opt = Adam::new(AdamConfig::default(), [(1, 2)]);
        opt.step([&mut p], &g, 0.1);
        // bias-corrected first step is lr * sign(g) up to eps
        assert!((p.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((p.get(0, 1) + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Matrix::from_vec(1, 1, vec![3.0f64]).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), [(1, 1)]);
        for _ in 0..2000 {
            let g = vec![Matrix::from_vec(1, 1, vec![2.0 * p.get(0, 0)]).unwrap()];
            opt.step([&mut p], &g, 0.01);
        }
        assert!(p.get(0, 0).abs() < 1e-2);
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut g = vec![
            Matrix::from_vec(1, 2, vec![3.0f64, 0.0]).unwrap(),
            Matrix::from_vec(1, 1, vec![4.0]).unwrap(),
        ];
        let before: Vec<f64> = g.iter().flat_map(|m| m.data().to_vec()).collect();
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let after: Vec<f64> = g.iter().flat_map(|m| m.data().to_vec()).collect();
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        for (a, b) in before.iter().zip(&after) {
            assert!((a / 5.0 - b).abs() < 1e-12);
        }
        let mut small = vec![Matrix::from_vec(1, 1, vec![0.5f64]).unwrap()];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].get(0, 0), 0.5);
    }
}
