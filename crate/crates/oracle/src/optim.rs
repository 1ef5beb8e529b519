//! Scalar Adam, written from the textbook update.

#[derive(Debug, Clone)]
pub struct ScalarAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        ScalarAdam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: 0.0,
            v: 0.0,
            t: 0,
        }
    }

    pub fn step(&mut self, x: f64, g: f64) -> f64 {
        self.t += 1;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g;
        let m_hat = self.m / (1.0 - self.beta1.powi(self.t));
        let v_hat = self.v / (1.0 - self.beta2.powi(self.t));
        x - self.lr * m_hat / (v_hat.sqrt() + self.eps)
    }
}
