//! First-order optimizers over flat parameter slices.
//!
//! `params` and `grads` must list the same tensors in the same order on
//! every call; state is allocated lazily on the first step.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Momentum {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi - self.lr * gi;
                *pi += *vi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Step decay: `base * gamma^(epoch / every)`.
pub fn step_decay(base: f64, gamma: f64, every: usize, epoch: usize) -> f64 {
    base * gamma.powi((epoch / every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_minimize_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Momentum::new(0.05, 0.9);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(vec![&mut x], vec![&g]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-6));

        let mut y = vec![3.0, -2.0];
        let mut adam = Adam::new(0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
            adam.step(vec![&mut y], vec![&g]);
        }
        assert!(y.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn decay_schedule() {
        assert_eq!(step_decay(1.0, 0.5, 10, 9), 1.0);
        assert_eq!(step_decay(1.0, 0.5, 10, 10), 0.5);
        assert_eq!(step_decay(1.0, 0.5, 10, 25), 0.25);
    }
}
