use serde::{Deserialize, Serialize};

/// `initial * factor^(number of milestones <= epoch)`.
pub fn scheduled_lr(initial: f64, epoch: usize, milestones: &[usize], factor: f64) -> f64 {
    let decays = milestones.iter().filter(|&&m| m <= epoch).count();
    initial * factor.powi(decays as i32)
}

/// Bias-corrected Adam over an ordered list of flat parameter tensors, with a
/// milestone learning-rate schedule driven by [`Adam::set_epoch`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub initial_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    epoch: usize,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(initial_lr: f64) -> Self {
        Self {
            initial_lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            milestones: Vec::new(),
            decay_factor: 0.1,
            epoch: 0,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_schedule(mut self, milestones: Vec<usize>, decay_factor: f64) -> Self {
        self.milestones = milestones;
        self.decay_factor = decay_factor;
        self
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Current scheduled learning rate.
    pub fn lr(&self) -> f64 {
        scheduled_lr(self.initial_lr, self.epoch, &self.milestones, self.decay_factor)
    }

    /// One update of every tensor; `params` and `grads` must list tensors in the same order
    /// on every call.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ in length");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "tensor list changed between Adam steps");
        self.step += 1;
        let lr = self.lr();
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let step_size = lr / bc1;
        let inv_root_bc2 = 1.0 / bc2.sqrt();
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            assert_eq!(p.len(), g.len());
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() * inv_root_bc2 + eps);
            }
        }
    }
}
