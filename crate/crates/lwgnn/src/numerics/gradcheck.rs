//! Central finite-difference checking of analytic gradients.
//!
//! The closure given to [`grad_check`] must run a full forward/backward pass:
//! read parameter values from the store, write gradients back, and return the
//! loss. `grad_check` calls it once to capture the analytic gradients, then
//! re-evaluates the loss under entrywise perturbations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::dense::DenseMatrix;
use crate::numerics::params::ParameterStore;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Parameters with more entries than this get a random sample of entries.
    pub sample_cap: usize,
    /// Seed for entry sampling.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            sample_cap: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckWorst {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub passed: bool,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    /// Entry with the largest relative error, pass or fail.
    pub worst: Option<GradCheckWorst>,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare analytic gradients against central finite differences for every
/// parameter in the store.
pub fn grad_check<F>(
    store: &mut ParameterStore,
    mut loss_and_grad: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParameterStore) -> Result<f64>,
{
    store.zero_gradients();
    let base_loss = loss_and_grad(store)?;
    if !base_loss.is_finite() {
        return Err(Error::NonFinite("gradient check base loss".into()));
    }

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let analytic: Vec<DenseMatrix> = names.iter().map(|n| store.gradient(n).clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries_checked = 0usize;
    let mut max_rel = 0.0f64;
    let mut worst: Option<GradCheckWorst> = None;

    for (name, grads) in names.iter().zip(&analytic) {
        let len = store.value(name).values().len();
        let indices: Vec<usize> = if len <= cfg.sample_cap {
            (0..len).collect()
        } else {
            let mut picked = rand::seq::index::sample(&mut rng, len, cfg.sample_cap).into_vec();
            picked.sort_unstable();
            picked
        };

        for idx in indices {
            let original = store.value(name).values()[idx];

            store.value_mut(name).values_mut()[idx] = original + cfg.step;
            store.zero_gradients();
            let loss_plus = loss_and_grad(store)?;

            store.value_mut(name).values_mut()[idx] = original - cfg.step;
            store.zero_gradients();
            let loss_minus = loss_and_grad(store)?;

            store.value_mut(name).values_mut()[idx] = original;

            if !loss_plus.is_finite() || !loss_minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient check loss at {name}[{idx}]"
                )));
            }

            let numeric = (loss_plus - loss_minus) / (2.0 * cfg.step);
            let a = grads.values()[idx];
            let err = rel_error(a, numeric);
            entries_checked += 1;
            if err > max_rel {
                max_rel = err;
                worst = Some(GradCheckWorst {
                    param: name.clone(),
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_error: err,
                });
            }
        }
    }

    // Leave the store with clean gradients.
    store.zero_gradients();

    Ok(GradCheckReport {
        passed: max_rel <= cfg.tolerance,
        entries_checked,
        max_rel_error: max_rel,
        worst,
    })
}
