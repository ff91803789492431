//! Central finite-difference gradient checking.
//!
//! The check only ever evaluates the forward pass, so it stays independent of
//! the backward implementation it audits. Inputs that need checking should be
//! registered as parameters of the store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, TensorError, Var};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Entries sampled per parameter tensor (all entries if the tensor is smaller).
    pub probes: usize,
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { probes: 10, step: 1e-4, floor: 1e-6, seed: 7 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// Compares analytic gradients of `build`'s scalar output against central
/// differences for randomly probed entries of every parameter.
pub fn check<F>(store: &ParamStore<f64>, opts: &GradCheck, build: F) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, TensorError>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64, TensorError> {
        let mut tape = Tape::new(s);
        let out = build(&mut tape)?;
        Ok(tape.value(out).item())
    };
    let grads = {
        let mut tape = Tape::new(store);
        let out = build(&mut tape)?;
        tape.backward(out)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: String::new() };
    for id in store.ids() {
        let n = store.get(id).len();
        let picks: Vec<usize> = if n <= opts.probes {
            (0..n).collect()
        } else {
            (0..opts.probes).map(|_| rng.random_range(0..n)).collect()
        };
        for k in picks {
            let orig = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + opts.step;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - opts.step;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let analytic = grads.param(id).map(|g| g.data()[k]).unwrap_or(0.0);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
                report.worst = format!("{}[{k}]: analytic {analytic:.6e}, numeric {numeric:.6e}", store.name(id));
            }
        }
    }
    Ok(report)
}
