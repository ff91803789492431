use serde::{Deserialize, Serialize};

use super::{Elem, Gradients, ParamStore};

/// Staircase exponential decay: `base · decay^⌊epoch / period⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base: f64,
    pub period_epochs: u32,
    pub decay: f64,
}

impl LrSchedule {
    /// Similarity-network schedule: 1e-5, ×0.95 every 100 epochs.
    pub const SIMNET_REFERENCE: LrSchedule = LrSchedule { base: 1e-5, period_epochs: 100, decay: 0.95 };
    /// Association-network schedule: 1e-6, ×0.95 every 20 epochs.
    pub const ASSOCNET_REFERENCE: LrSchedule = LrSchedule { base: 1e-6, period_epochs: 20, decay: 0.95 };

    pub fn rate(&self, epoch: u32) -> f64 {
        let steps = epoch / self.period_epochs.max(1);
        self.base * self.decay.powi(steps as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was NaN or infinite; parameters were left untouched.
    SkippedNonFinite,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(schedule: LrSchedule) -> Self {
        Self { schedule, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<T: Elem>(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, epoch: u32) -> StepOutcome {
        if !grads.all_finite() {
            log::warn!("skipping optimizer step {}: non-finite gradient", self.step);
            return StepOutcome::SkippedNonFinite;
        }
        if self.first.len() < params.len() {
            for id in params.ids().skip(self.first.len()) {
                let n = params.get(id).len();
                self.first.push(vec![0.0; n]);
                self.second.push(vec![0.0; n]);
            }
        }
        self.step += 1;
        let lr = self.schedule.rate(epoch);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, g) in grads.params() {
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let p = params.get_mut(id);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *pi = T::of(pi.f64() - update);
            }
        }
        StepOutcome::Applied
    }
}
