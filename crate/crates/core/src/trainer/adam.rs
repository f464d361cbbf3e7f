//! Elementwise adaptive-moment gradient descent (bias-corrected first and
//! second moments). One instance per parameter block; the learning rate is
//! passed per call so blocks can share code but not step sizes.

use nalgebra::Vector3;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One descent step `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }

    /// [`step`](Self::step) over a slice of 3-vectors without flattening.
    pub fn step_vec3(&mut self, params: &mut [Vector3<f64>], grads: &[Vector3<f64>], lr: f64) {
        assert_eq!(params.len() * 3, self.m.len());
        assert_eq!(grads.len(), params.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            for c in 0..3 {
                let idx = 3 * i + c;
                let g = grads[i][c];
                self.m[idx] = self.beta1 * self.m[idx] + (1.0 - self.beta1) * g;
                self.v[idx] = self.beta2 * self.v[idx] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[idx] / c1;
                let v_hat = self.v[idx] / c2;
                params[i][c] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g, 0.01);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-4), "{p:?}");
    }

    #[test]
    fn zero_gradient_moves_nothing() {
        let mut p = vec![1.0, 2.0, 3.0];
        let mut opt = Adam::new(3);
        for _ in 0..10 {
            opt.step(&mut p, &[0.0, 0.0, 0.0], 0.1);
        }
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn vec3_and_flat_steps_agree() {
        let mut flat = vec![0.5, -0.3, 0.8, 1.2, 0.0, -0.7];
        let mut v3 = vec![Vector3::new(0.5, -0.3, 0.8), Vector3::new(1.2, 0.0, -0.7)];
        let gf = vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        let gv = vec![Vector3::new(0.1, -0.2, 0.3), Vector3::new(0.4, -0.5, 0.6)];
        let mut a = Adam::new(6);
        let mut b = Adam::new(6);
        for _ in 0..5 {
            a.step(&mut flat, &gf, 0.05);
            b.step_vec3(&mut v3, &gv, 0.05);
        }
        for i in 0..2 {
            for c in 0..3 {
                assert_eq!(flat[3 * i + c], v3[i][c]);
            }
        }
    }
}
