use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0, cfg }
    }

    /// Bias-corrected Adam update at the configured learning rate.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let lr = self.cfg.lr;
        self.step_with_lr(params, grads, lr)
    }

    /// Same as [`AdamState::step`] with an overriding learning rate (for schedules).
    pub fn step_with_lr(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("state holds {} entries, params {}, grads {}", self.m.len(), params.len(), grads.len()),
            ));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam over a list of parameter tensors sharing one configuration.
#[derive(Clone, Debug)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(lens: &[usize], cfg: AdamConfig) -> Self {
        Adam { states: lens.iter().map(|&n| AdamState::new(n, cfg)).collect() }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} states, {} params, {} grads", self.states.len(), params.len(), grads.len()),
            ));
        }
        for ((s, p), g) in self.states.iter_mut().zip(params.iter_mut()).zip(grads) {
            s.step_with_lr(p, g, lr)?;
        }
        Ok(())
    }
}
