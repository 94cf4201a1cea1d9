use crate::tensor::ParamStore;

/// Adam with bias correction and a fixed learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored on `params`. Tensors
    /// without a gradient are treated as having a zero gradient.
    pub fn update(&mut self, params: &mut ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        let step_size = self.lr / bc1;
        for ((t, m), v) in params.tensors_mut().zip(&mut self.first).zip(&mut self.second) {
            let Some(grad) = t.grad().map(<[f64]>::to_vec) else {
                for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                    *mi *= self.beta1;
                    *vi *= self.beta2;
                }
                continue;
            };
            for (((w, g), mi), vi) in t.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                *w -= step_size * *mi / ((*vi / bc2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norms before and after.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> (f64, f64) {
    let norm = params.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for t in params.tensors_mut() {
            if t.grad().is_some() {
                t.grad_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
    }
    (norm, params.grad_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut ps = ParamStore::new();
        let id = ps.add("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        ps.get_mut(id).grad_mut().copy_from_slice(&[0.3, -4.0, 0.0]);
        let mut adam = Adam::new(&ps, 0.1, 0.9, 0.999, 1e-8);
        adam.update(&mut ps);
        let d = ps.get(id).data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] + 1.9).abs() < 1e-6);
        assert_eq!(d[2], 0.5);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut ps = ParamStore::new();
        let id = ps.add("w", Tensor::new(vec![2], vec![3.0, -5.0]).unwrap());
        let mut adam = Adam::new(&ps, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let w = ps.get(id).data().to_vec();
            ps.get_mut(id).grad_mut().copy_from_slice(&[2.0 * (w[0] - 1.0), 2.0 * (w[1] + 2.0)]);
            adam.update(&mut ps);
        }
        let w = ps.get(id).data();
        assert!((w[0] - 1.0).abs() < 1e-3 && (w[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut ps = ParamStore::new();
        let a = ps.add("a", Tensor::zeros(vec![2]));
        let b = ps.add("b", Tensor::zeros(vec![1]));
        ps.get_mut(a).grad_mut().copy_from_slice(&[3.0, 4.0]);
        ps.get_mut(b).grad_mut().copy_from_slice(&[12.0]);
        let (before, after) = clip_grad_norm(&mut ps, 5.0);
        assert_eq!(before, 13.0);
        assert!(after <= 5.0 + 1e-9);
        assert!((ps.get(b).grad().unwrap()[0] - 12.0 * 5.0 / 13.0).abs() < 1e-12);
        let (before, after) = clip_grad_norm(&mut ps, 100.0);
        assert_eq!(before, after);
    }
}
