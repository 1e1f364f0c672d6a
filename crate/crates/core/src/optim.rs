use crate::tensor::Tensor;

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    /// Moments `(0.0, 0.99)`, epsilon `1e-8`.
    pub fn new(lr: f32) -> Self {
        Self::with_moments(lr, 0.0, 0.99, 1e-8)
    }

    pub fn with_moments(lr: f32, beta1: f32, beta2: f32, eps: f32) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Forget accumulated moments.
    pub fn reset(&mut self) {
        self.t = 0;
        self.m.clear();
        self.v.clear();
    }

    /// Apply one update. `params[i]` and `grads[i]` must keep the same
    /// shapes across calls.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            debug_assert_eq!(p.shape(), g.shape());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Tensor::new([3], vec![1.0, 1.0, 1.0]).unwrap();
        let g = Tensor::new([3], vec![0.5, -2.0, 0.0]).unwrap();
        let mut opt = Adam::new(0.1);
        opt.step(vec![&mut p], &[g]);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] - 1.1).abs() < 1e-6);
        assert_eq!(p.data()[2], 1.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Tensor::new([2], vec![3.0, -4.0]).unwrap();
        let mut opt = Adam::with_moments(0.05, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            let g = p.map(|v| 2.0 * v);
            opt.step(vec![&mut p], &[g]);
        }
        assert!(p.data().iter().all(|v| v.abs() < 0.05), "{:?}", p.data());
    }
}
