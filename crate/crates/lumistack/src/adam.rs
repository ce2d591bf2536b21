//! Plain Adam optimizer over a flat parameter vector.

/// Adam state. With `beta1 = 0` (the alignment default) it degenerates to
/// RMSProp-style normalized gradient steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Optional per-parameter step multipliers (normalized steps make plain
    /// gradient scaling a no-op, so block weighting has to act on the step).
    pub step_scales: Option<Vec<f64>>,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
            step_scales: None,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One update in place. Uses the bias-corrected step size
    /// `lr * sqrt(1 - beta2^t) / (1 - beta1^t)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        if let Some(s) = &self.step_scales {
            assert_eq!(s.len(), self.m.len());
        }
        self.t += 1;
        let t = self.t as f64;
        let lr_t = self.learning_rate * (1.0 - self.beta2.powf(t)).sqrt()
            / (1.0 - self.beta1.powf(t));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let scale = self.step_scales.as_ref().map_or(1.0, |s| s[i]);
            params[i] -= lr_t * scale * self.m[i] / (self.v[i].sqrt() + self.epsilon);
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
