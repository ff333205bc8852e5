//! Momentum, the running loss model, and the generic steepest-descent step.
//!
//! Buffers start at the first observation (`m₀ = g₀`, `v₀ = g₀²`, `f̃₀` equal
//! to the first linearization sample), so no bias correction is applied
//! anywhere. Unrolled, `m_t = βᵗ g₀ + Σ_{i=1..t} (1−β) β^{t−i} gᵢ`.

use crate::error::{Error, Result};
use crate::norms::{decompose, NormSpec};
use crate::tree::ParamTree;

/// Floor applied to `‖m‖_*` and `d²` before they divide anything.
pub const DIVISION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OptState {
    pub momentum: ParamTree,
    /// Elementwise second moment of the `θ` gradients.
    pub second_moment: Vec<f64>,
    pub f_tilde: f64,
    /// Last `F̃_t` returned by [`model_estimate_update`].
    pub model_estimate: f64,
    /// Per-matrix-slot duals from the previous step.
    pub stale_duals: Vec<f64>,
    pub stale_total: f64,
    pub step: usize,
    moments_started: bool,
    f_tilde_started: bool,
    stale_started: bool,
}

impl OptState {
    pub fn new(like: &ParamTree) -> Self {
        Self {
            momentum: like.zeros_like(),
            second_moment: vec![0.0; like.base.len()],
            f_tilde: 0.0,
            model_estimate: 0.0,
            stale_duals: vec![0.0; like.matrices.len()],
            stale_total: 0.0,
            step: 0,
            moments_started: false,
            f_tilde_started: false,
            stale_started: false,
        }
    }

    /// Whether a previous step has filled the stale dual cache.
    pub fn has_stale_cache(&self) -> bool {
        self.stale_started
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Step coefficient actually used for the matrix slots (`η`, or the Momo
    /// truncation when it is smaller).
    pub effective_step_matrix: f64,
    /// Same coefficient in units of the `θ` learning rate.
    pub effective_step_base: f64,
    pub model_estimate: f64,
    /// Aggregated dual norm of the momentum used for the step.
    pub dual_total: f64,
    pub clamp_active: bool,
}

impl StepReport {
    fn idle(model_estimate: f64) -> Self {
        Self {
            effective_step_matrix: 0.0,
            effective_step_base: 0.0,
            model_estimate,
            dual_total: 0.0,
            clamp_active: false,
        }
    }
}

fn check_beta(name: &str, beta: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1), got {beta}")))
    }
}

/// EMA of the gradients with one `β` for every slot.
pub fn momentum_update(state: &mut OptState, grads: &ParamTree, beta: f64, beta2: f64) -> Result<()> {
    momentum_update_split(state, grads, beta, beta, beta2)
}

/// EMA with separate factors for the matrix slots and for `θ`.
pub fn momentum_update_split(
    state: &mut OptState,
    grads: &ParamTree,
    beta_matrix: f64,
    beta_base: f64,
    beta2: f64,
) -> Result<()> {
    check_beta("beta", beta_matrix)?;
    check_beta("beta1", beta_base)?;
    check_beta("beta2", beta2)?;
    state.momentum.check_shape(grads)?;
    if !state.moments_started {
        state.momentum = grads.clone();
        state.second_moment = grads.base.iter().map(|g| g * g).collect();
        state.moments_started = true;
        return Ok(());
    }
    for (m, g) in state.momentum.matrices.iter_mut().zip(&grads.matrices) {
        for (mi, gi) in m.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *mi = beta_matrix * *mi + (1.0 - beta_matrix) * gi;
        }
    }
    for ((m, v), g) in state.momentum.base.iter_mut().zip(state.second_moment.iter_mut()).zip(&grads.base) {
        *m = beta_base * *m + (1.0 - beta_base) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
    }
    Ok(())
}

/// Updates `f̃_t = β f̃_{t−1} + (1−β)(F_t − ⟨g_t, w_t⟩)` and returns
/// `F̃_t = f̃_t + ⟨m_t, w_t⟩`. Call after [`momentum_update`] and before the
/// parameters move.
pub fn model_estimate_update(state: &mut OptState, loss: f64, grads: &ParamTree, w: &ParamTree, beta: f64) -> Result<f64> {
    check_beta("beta", beta)?;
    let sample = loss - grads.inner(w)?;
    state.f_tilde = if state.f_tilde_started { beta * state.f_tilde + (1.0 - beta) * sample } else { sample };
    state.f_tilde_started = true;
    state.model_estimate = state.f_tilde + state.momentum.inner(w)?;
    Ok(state.model_estimate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Descent {
    /// `W ← W + η·LMO(m)`
    Constrained,
    /// `W ← W + η·‖m‖_*·LMO(m)`
    Regularized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub descent: Descent,
    /// Lower bound `F*` for the truncated model; `None` disables truncation.
    pub f_star: Option<f64>,
    /// Aggregate with the previous step's matrix-slot duals.
    pub stale: bool,
}

impl StepRule {
    pub fn plain(descent: Descent) -> Self {
        Self { descent, f_star: None, stale: false }
    }
}

/// One step of the generic engine along the current momentum.
///
/// With truncation the coefficient is `min(η, (F̃−F*)₊/d)` (constrained) or
/// `min(η, (F̃−F*)₊/d²)` (regularized), reading `F̃` from
/// `state.model_estimate`.
pub fn apply_step(w: &mut ParamTree, state: &mut OptState, spec: &NormSpec, rule: &StepRule, eta: f64) -> Result<StepReport> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::Config(format!("step size must be positive and finite, got {eta}")));
    }
    w.check_shape(&state.momentum)?;
    let dec = decompose(spec, &state.momentum)?;
    let fresh = dec.duals.clone();
    let mut duals = dec.duals.clone();
    let n_mat = w.matrices.len();
    if rule.stale && state.stale_started {
        duals[..n_mat].copy_from_slice(&state.stale_duals);
    }
    let total = spec.aggregator.dual(&duals);
    let report = if state.momentum.is_zero() || total <= 0.0 {
        StepReport::idle(state.model_estimate)
    } else {
        let phi = spec.aggregator.coefficients(&duals);
        let (coefficient, clamp_active) = match rule.f_star {
            None => (eta, false),
            Some(f_star) => {
                let gap = (state.model_estimate - f_star).max(0.0);
                let denom = match rule.descent {
                    Descent::Constrained => total.max(DIVISION_FLOOR),
                    Descent::Regularized => (total * total).max(DIVISION_FLOOR),
                };
                let trunc = gap / denom;
                if trunc < eta {
                    (trunc, true)
                } else {
                    (eta, false)
                }
            }
        };
        let scale = match rule.descent {
            Descent::Constrained => coefficient,
            Descent::Regularized => coefficient * total,
        };
        let update = dec.assemble(w, &phi, scale);
        w.axpy(1.0, &update)?;
        StepReport {
            effective_step_matrix: coefficient,
            effective_step_base: coefficient,
            model_estimate: state.model_estimate,
            dual_total: total,
            clamp_active,
        }
    };
    if rule.stale {
        stale_cache_update(state, &fresh[..n_mat]);
    }
    state.step += 1;
    Ok(report)
}

/// Replaces the cached matrix-slot duals after they have been consumed.
pub fn stale_cache_update(state: &mut OptState, fresh_duals: &[f64]) {
    state.stale_duals = fresh_duals.to_vec();
    state.stale_total = fresh_duals.iter().sum();
    state.stale_started = true;
}

pub fn csd_step(w: &mut ParamTree, state: &mut OptState, spec: &NormSpec, eta: f64) -> Result<StepReport> {
    apply_step(w, state, spec, &StepRule::plain(Descent::Constrained), eta)
}

pub fn rsd_step(w: &mut ParamTree, state: &mut OptState, spec: &NormSpec, eta: f64) -> Result<StepReport> {
    apply_step(w, state, spec, &StepRule::plain(Descent::Regularized), eta)
}

pub fn momo_csd_step(w: &mut ParamTree, state: &mut OptState, spec: &NormSpec, eta: f64, f_star: f64) -> Result<StepReport> {
    let rule = StepRule { descent: Descent::Constrained, f_star: Some(f_star), stale: false };
    apply_step(w, state, spec, &rule, eta)
}

pub fn momo_rsd_step(w: &mut ParamTree, state: &mut OptState, spec: &NormSpec, eta: f64, f_star: f64) -> Result<StepReport> {
    let rule = StepRule { descent: Descent::Regularized, f_star: Some(f_star), stale: false };
    apply_step(w, state, spec, &rule, eta)
}
