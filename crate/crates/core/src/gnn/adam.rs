/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
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
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut a = Adam::new(3, 1e-3);
        let mut p = vec![1.0, -2.0, 0.5];
        a.step(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn moments_decay() {
        let mut a = Adam::new(1, 1e-3);
        let mut p = vec![0.0];
        a.step(&mut p, &[1.0]);
        let (m1, v1) = (a.first_moment()[0], a.second_moment()[0]);
        a.step(&mut p, &[0.0]);
        assert!((a.first_moment()[0] - 0.9 * m1).abs() < 1e-15);
        assert!((a.second_moment()[0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let lr = 1e-3;
        let mut a = Adam::new(4, lr);
        // With ε = 1e-8 the deviation is lr·ε/(|g|+ε), below 1e-6·lr once |g| > 1e-2.
        let g = [0.5, -2.0, 0.015, -40.0];
        let mut p = vec![0.0; 4];
        a.step(&mut p, &g);
        for (d, gi) in p.iter().zip(g) {
            assert!((d + lr * gi.signum()).abs() < 1e-6 * lr, "{d}");
        }
    }

    #[test]
    fn state_carries_between_steps() {
        // The second update depends on the first gradient through the moments.
        let (g1, g2) = ([0.3, -0.7], [-0.1, 0.2]);
        let mut a = Adam::new(2, 1e-3);
        let mut p = vec![0.0; 2];
        a.step(&mut p, &g1);
        let before = p.clone();
        a.step(&mut p, &g2);
        let stateful: Vec<f64> = p.iter().zip(&before).map(|(x, y)| x - y).collect();
        let mut b = Adam::new(2, 1e-3);
        let mut q = vec![0.0; 2];
        b.step(&mut q, &g2);
        assert_ne!(stateful, q);
        // Momentum keeps moving against the first gradient's sign.
        assert!(stateful[0] < 0.0 && stateful[1] > 0.0);
    }
}
