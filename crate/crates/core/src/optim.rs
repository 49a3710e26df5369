//! Adam with bias correction. Moments are kept in f64; parameters may live
//! anywhere, updates are handed out through a callback.

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-15, m: vec![0.0; len], v: vec![0.0; len], steps: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Advances one step and calls `apply(i, delta)` for every parameter.
    pub fn step_with(&mut self, grads: &[f64], mut apply: impl FnMut(usize, f64)) {
        assert_eq!(grads.len(), self.m.len(), "gradient length does not match optimizer state");
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, &g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            apply(i, -self.lr * m_hat / (v_hat.sqrt() + self.eps));
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
        self.step_with(grads, |i, delta| params[i] = (params[i] as f64 + delta) as f32);
    }
}
