//! Named optimizers as points of the (descent, outer norm, `θ` norm,
//! truncation) grid, the warmup-stable-decay schedule, and direct
//! implementations of MuonAdam, MuonMax-Momo and Adam that bypass the generic
//! engine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{
    apply_step, model_estimate_update, momentum_update, momentum_update_split, stale_cache_update, Descent, OptState,
    StepReport, StepRule, DIVISION_FLOOR,
};
use crate::error::{Error, Result};
use crate::linalg::{frob_inner, polar, PolarConfig};
use crate::norms::{AtomicNorm, NormSpec, ProductAggregator};
use crate::tree::ParamTree;

/// Stand-in for `|m| = 0` when building the `ada∞` scaling.
pub const ADA_INF_FLOOR: f64 = 1e-12;

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Config(format!(
                        "unknown {} {s:?}, expected one of: {}",
                        stringify!($name),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum!(SdType { Constrained => "constrained", Regularized => "regularized" });
string_enum!(ProductNorm { Inf => "inf", L2 => "l2", Hybrid => "hybrid" });
string_enum!(BackupNorm { Inf => "inf", AdaInf => "ada_inf", Ada2 => "ada_2" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub sd_type: SdType,
    pub product_norm: ProductNorm,
    pub backup_norm: BackupNorm,
    pub truncation: bool,
    pub stale: bool,
    pub eta_m: f64,
    pub eta_b: f64,
    /// Momentum for the matrix slots, and for everything under truncation.
    pub beta: f64,
    /// Momentum for `θ` when truncation is off; defaults to `beta`.
    pub beta1: Option<f64>,
    pub beta2: f64,
    pub epsilon: f64,
    pub f_star: f64,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            sd_type: SdType::Constrained,
            product_norm: ProductNorm::Inf,
            backup_norm: BackupNorm::AdaInf,
            truncation: false,
            stale: false,
            eta_m: 0.01,
            eta_b: 0.01,
            beta: 0.95,
            beta1: None,
            beta2: 0.95,
            epsilon: 1e-8,
            f_star: 0.0,
        }
    }
}

impl VariantConfig {
    pub fn new(sd_type: SdType, product_norm: ProductNorm, backup_norm: BackupNorm, truncation: bool) -> Self {
        Self { sd_type, product_norm, backup_norm, truncation, ..Self::default() }
    }

    pub fn muon_adam() -> Self {
        Self::new(SdType::Constrained, ProductNorm::Inf, BackupNorm::AdaInf, false)
    }

    pub fn scion() -> Self {
        Self::new(SdType::Constrained, ProductNorm::Inf, BackupNorm::Inf, false)
    }

    pub fn polar_grad() -> Self {
        Self::new(SdType::Regularized, ProductNorm::L2, BackupNorm::Ada2, false)
    }

    pub fn muon_max() -> Self {
        Self::new(SdType::Regularized, ProductNorm::Hybrid, BackupNorm::Ada2, false)
    }

    pub fn with_truncation(mut self, on: bool) -> Self {
        self.truncation = on;
        self
    }

    pub fn with_rates(mut self, eta_m: f64, eta_b: f64) -> Self {
        self.eta_m = eta_m;
        self.eta_b = eta_b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("variant.{name} must be positive and finite, got {x}")))
            }
        };
        positive("eta_m", self.eta_m)?;
        positive("eta_b", self.eta_b)?;
        positive("epsilon", self.epsilon)?;
        for (name, b) in [("beta", Some(self.beta)), ("beta1", self.beta1), ("beta2", Some(self.beta2))] {
            if let Some(b) = b {
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::Config(format!("variant.{name} must lie in [0, 1), got {b}")));
                }
            }
        }
        if !self.f_star.is_finite() {
            return Err(Error::Config("variant.f_star must be finite".into()));
        }
        Ok(())
    }

    /// `MuonAdam`, `Scion`, `PolarGrad` and `MuonMax` by name, otherwise the
    /// tuple; `-Momo` marks truncation and `-stale` the cached duals.
    pub fn name(&self) -> String {
        use BackupNorm as B;
        use ProductNorm as P;
        use SdType as S;
        let mut name = match (self.sd_type, self.product_norm, self.backup_norm) {
            (S::Constrained, P::Inf, B::AdaInf) => "MuonAdam".to_string(),
            (S::Constrained, P::Inf, B::Inf) => "Scion".to_string(),
            (S::Regularized, P::L2, B::Ada2) => "PolarGrad".to_string(),
            (S::Regularized, P::Hybrid, B::Ada2) => "MuonMax".to_string(),
            (sd, p, b) => format!("{sd}-{p}-{b}"),
        };
        if self.truncation {
            name.push_str("-Momo");
        }
        if self.stale {
            name.push_str("-stale");
        }
        name
    }

    /// All 36 combinations of descent type, outer norm, `θ` norm and
    /// truncation, sharing the remaining settings of `base`.
    pub fn grid(base: &VariantConfig) -> Vec<VariantConfig> {
        let mut out = Vec::with_capacity(36);
        for &sd_type in SdType::ALL {
            for &product_norm in ProductNorm::ALL {
                for &backup_norm in BackupNorm::ALL {
                    for truncation in [false, true] {
                        out.push(VariantConfig { sd_type, product_norm, backup_norm, truncation, ..base.clone() });
                    }
                }
            }
        }
        out
    }
}

/// Warmup-stable-decay schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub stable_frac: f64,
    pub final_frac: f64,
}

impl ScheduleConfig {
    pub fn new(total_steps: usize) -> Self {
        Self { total_steps, warmup_frac: 0.05, stable_frac: 0.5, final_frac: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.warmup_frac && self.warmup_frac <= self.stable_frac && self.stable_frac <= 1.0) {
            return Err(Error::Config(format!(
                "schedule needs 0 <= warmup_frac <= stable_frac <= 1, got {} and {}",
                self.warmup_frac, self.stable_frac
            )));
        }
        if !(self.final_frac > 0.0 && self.final_frac <= 1.0) {
            return Err(Error::Config(format!("schedule.final_frac must lie in (0, 1], got {}", self.final_frac)));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_frac * self.total_steps as f64).round() as usize
    }

    pub fn stable_end(&self) -> usize {
        ((self.stable_frac * self.total_steps as f64).round() as usize).max(self.warmup_steps())
    }
}

/// Learning rate at step `t` (1-based; `t = 0` gives 0 during warmup).
/// Linear warmup over `round(warmup_frac·T)` steps, constant until
/// `round(stable_frac·T)`, then linear decay to `final_frac·eta_peak` at `T`.
pub fn lr_schedule(t: usize, sched: &ScheduleConfig, eta_peak: f64) -> Result<f64> {
    sched.validate()?;
    let total = sched.total_steps;
    if t > total {
        return Err(Error::Config(format!("schedule step {t} is past the last step {total}")));
    }
    let warmup = sched.warmup_steps();
    let stable_end = sched.stable_end();
    let mult = if t <= warmup && warmup > 0 {
        t as f64 / warmup as f64
    } else if t <= stable_end || total == stable_end {
        1.0
    } else {
        let progress = (t - stable_end) as f64 / (total - stable_end) as f64;
        1.0 - (1.0 - sched.final_frac) * progress
    };
    Ok(mult * eta_peak)
}

/// `θ` norm for the current state. `ada∞` uses `diag = (√v+ε)/|m|`; where
/// `m = 0` the entry is replaced by `max(√v+ε, δ₀)/δ₀`, which keeps the
/// scaling full rank without affecting the oracle or the dual.
pub fn backup_norm(kind: BackupNorm, state: &OptState, epsilon: f64) -> Result<AtomicNorm> {
    let m = &state.momentum.base;
    let v = &state.second_moment;
    match kind {
        BackupNorm::Inf => Ok(AtomicNorm::MaxAbs),
        BackupNorm::AdaInf => {
            let diag = m
                .iter()
                .zip(v)
                .map(|(&mi, &vi)| {
                    let denom = vi.sqrt() + epsilon;
                    let d = if mi == 0.0 { denom.max(ADA_INF_FLOOR) / ADA_INF_FLOOR } else { denom / mi.abs() };
                    if d.is_finite() && d > 0.0 {
                        d
                    } else {
                        ADA_INF_FLOOR
                    }
                })
                .collect();
            AtomicNorm::scaled(diag, AtomicNorm::MaxAbs)
        }
        BackupNorm::Ada2 => {
            let diag = v.iter().map(|&vi| (vi.sqrt() + epsilon).sqrt().max(ADA_INF_FLOOR)).collect();
            AtomicNorm::scaled(diag, AtomicNorm::Euclid)
        }
    }
}

/// A built variant: the norm recipe plus its running state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: VariantConfig,
    polar: PolarConfig,
    state: Option<OptState>,
}

pub fn build_variant(cfg: &VariantConfig, polar: &PolarConfig) -> Result<Optimizer> {
    cfg.validate()?;
    polar.validate()?;
    Ok(Optimizer { cfg: cfg.clone(), polar: polar.clone(), state: None })
}

impl Optimizer {
    pub fn config(&self) -> &VariantConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&OptState> {
        self.state.as_ref()
    }

    pub fn name(&self) -> String {
        self.cfg.name()
    }

    /// Outer norm. `θ` is weighted so that its step equals `eta_b` whenever the
    /// matrices step by `eta_m`.
    pub fn aggregator(&self, matrix_slots: usize) -> ProductAggregator {
        let ratio = self.cfg.eta_m / self.cfg.eta_b;
        let weights = |theta_weight: f64| {
            let mut w = vec![1.0; matrix_slots];
            w.push(theta_weight);
            w
        };
        match self.cfg.product_norm {
            ProductNorm::Inf => ProductAggregator::Max { weights: weights(ratio) },
            ProductNorm::L2 => ProductAggregator::L2 { weights: weights(ratio.sqrt()) },
            ProductNorm::Hybrid => ProductAggregator::Hybrid { lambda: ratio },
        }
    }

    pub fn norm_spec(&self, state: &OptState) -> Result<NormSpec> {
        let l = state.momentum.matrices.len();
        let mut slot_norms = vec![AtomicNorm::Spectral; l];
        slot_norms.push(backup_norm(self.cfg.backup_norm, state, self.cfg.epsilon)?);
        Ok(NormSpec::new(slot_norms, self.aggregator(l)).with_polar(self.polar.clone()))
    }

    /// One optimizer step at learning rates `lr_mult·(eta_m, eta_b)`.
    pub fn step(&mut self, w: &mut ParamTree, loss: f64, grads: &ParamTree, lr_mult: f64) -> Result<StepReport> {
        if !(lr_mult.is_finite() && lr_mult > 0.0) {
            return Err(Error::Config(format!("learning-rate multiplier must be positive, got {lr_mult}")));
        }
        let cfg = &self.cfg;
        let state = self.state.get_or_insert_with(|| OptState::new(grads));
        let beta_base = if cfg.truncation { cfg.beta } else { cfg.beta1.unwrap_or(cfg.beta) };
        momentum_update_split(state, grads, cfg.beta, beta_base, cfg.beta2)?;
        if cfg.truncation {
            model_estimate_update(state, loss, grads, w, cfg.beta)?;
        }
        let state = self.state.as_ref().expect("state initialized above");
        let spec = self.norm_spec(state)?;
        let rule = StepRule {
            descent: match cfg.sd_type {
                SdType::Constrained => Descent::Constrained,
                SdType::Regularized => Descent::Regularized,
            },
            f_star: cfg.truncation.then_some(cfg.f_star),
            stale: cfg.stale,
        };
        let eta = cfg.eta_m * lr_mult;
        let ratio = cfg.eta_b / cfg.eta_m;
        let state = self.state.as_mut().expect("state initialized above");
        let mut report = apply_step(w, state, &spec, &rule, eta)?;
        report.effective_step_base = report.effective_step_matrix * ratio;
        Ok(report)
    }
}

fn adam_direction(m: f64, v: f64, epsilon: f64) -> f64 {
    if m == 0.0 {
        0.0
    } else {
        m / (v.sqrt() + epsilon)
    }
}

/// Matrices: `W ← W − η_m·polar(M)`; `θ`: Adam without bias correction.
#[allow(clippy::too_many_arguments)]
pub fn muonadam_step(
    w: &mut ParamTree,
    state: &mut OptState,
    grads: &ParamTree,
    eta_m: f64,
    eta_b: f64,
    beta: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    polar_cfg: &PolarConfig,
) -> Result<StepReport> {
    w.check_shape(grads)?;
    momentum_update_split(state, grads, beta, beta1, beta2)?;
    let mut nuclear = 0.0;
    for (wl, ml) in w.matrices.iter_mut().zip(&state.momentum.matrices) {
        if ml.is_zero() {
            continue;
        }
        let p = polar(ml, polar_cfg)?;
        nuclear += frob_inner(&p, ml)?;
        wl.axpy(-eta_m, &p)?;
    }
    let mut theta_dual = 0.0;
    for ((t, &m), &v) in w.base.iter_mut().zip(&state.momentum.base).zip(&state.second_moment) {
        let d = adam_direction(m, v, epsilon);
        theta_dual += m * d;
        *t -= eta_b * d;
    }
    state.step += 1;
    Ok(StepReport {
        effective_step_matrix: eta_m,
        effective_step_base: eta_b,
        model_estimate: state.model_estimate,
        dual_total: nuclear + theta_dual * eta_b / eta_m,
        clamp_active: false,
    })
}

/// Truncated MuonMax in closed form:
/// `d² = (Σ‖M^j‖_nuc)² + (η_b/η_m)‖m/√(√v+ε)‖²`, matrices move by
/// `min(η_m, (F̃−F*)/d²)·Σ‖M^j‖_nuc·polar(M^ℓ)` and `θ` by
/// `min(η_b, (η_b/η_m)(F̃−F*)/d²)·m/(√v+ε)`. With `cfg.stale` the nuclear
/// sum comes from the previous step.
pub fn muonmax_momo_step(
    w: &mut ParamTree,
    state: &mut OptState,
    loss: f64,
    grads: &ParamTree,
    cfg: &VariantConfig,
    polar_cfg: &PolarConfig,
    lr_mult: f64,
) -> Result<StepReport> {
    cfg.validate()?;
    w.check_shape(grads)?;
    momentum_update(state, grads, cfg.beta, cfg.beta2)?;
    let estimate = model_estimate_update(state, loss, grads, w, cfg.beta)?;

    let mut polars = Vec::with_capacity(w.matrices.len());
    let mut fresh = Vec::with_capacity(w.matrices.len());
    for ml in &state.momentum.matrices {
        if ml.is_zero() {
            polars.push(None);
            fresh.push(0.0);
        } else {
            let p = polar(ml, polar_cfg)?;
            fresh.push(frob_inner(&p, ml)?.max(0.0));
            polars.push(Some(p));
        }
    }
    let nuclear_sum: f64 =
        if cfg.stale && state.has_stale_cache() { state.stale_duals.iter().sum() } else { fresh.iter().sum() };
    let ratio = cfg.eta_b / cfg.eta_m;
    let theta_sq: f64 = state
        .momentum
        .base
        .iter()
        .zip(&state.second_moment)
        .map(|(&m, &v)| m * adam_direction(m, v, cfg.epsilon))
        .sum();
    let d_sq = nuclear_sum * nuclear_sum + ratio * theta_sq;
    let gap = (estimate - cfg.f_star).max(0.0);
    let trunc = gap / d_sq.max(DIVISION_FLOOR);
    let (eta_m, eta_b) = (cfg.eta_m * lr_mult, cfg.eta_b * lr_mult);
    let (coef_m, coef_b) = if d_sq > 0.0 { (eta_m.min(trunc), eta_b.min(ratio * trunc)) } else { (0.0, 0.0) };

    for (wl, p) in w.matrices.iter_mut().zip(&polars) {
        if let Some(p) = p {
            wl.axpy(-coef_m * nuclear_sum, p)?;
        }
    }
    for ((t, &m), &v) in w.base.iter_mut().zip(&state.momentum.base).zip(&state.second_moment) {
        *t -= coef_b * adam_direction(m, v, cfg.epsilon);
    }
    if cfg.stale {
        stale_cache_update(state, &fresh);
    }
    state.step += 1;
    Ok(StepReport {
        effective_step_matrix: coef_m,
        effective_step_base: coef_b,
        model_estimate: estimate,
        dual_total: d_sq.sqrt(),
        clamp_active: d_sq > 0.0 && trunc < eta_m,
    })
}

/// Moments for [`adam_step`].
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    started: bool,
}

/// `θ ← θ − η·m/(√v+ε)` with EMA moments started at the first gradient.
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    eta: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    if theta.len() != grad.len() {
        return Err(Error::Dimension(format!("adam: {} parameters, {} gradients", theta.len(), grad.len())));
    }
    if !state.started {
        state.m = grad.to_vec();
        state.v = grad.iter().map(|g| g * g).collect();
        state.started = true;
    } else {
        for ((m, v), g) in state.m.iter_mut().zip(state.v.iter_mut()).zip(grad) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
        }
    }
    for ((t, &m), &v) in theta.iter_mut().zip(&state.m).zip(&state.v) {
        *t -= eta * adam_direction(m, v, epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use std::collections::HashSet;

    #[test]
    fn schedule_examples() {
        let s = ScheduleConfig::new(1000);
        assert_eq!(lr_schedule(500, &s, 2.0).unwrap(), 2.0);
        assert!((lr_schedule(1000, &s, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((lr_schedule(750, &s, 1.0).unwrap() - 0.55).abs() < 1e-15);
        assert!((lr_schedule(1, &s, 1.0).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(lr_schedule(50, &s, 1.0).unwrap(), 1.0);
        assert!(lr_schedule(1001, &s, 1.0).is_err());
        let bad = ScheduleConfig { warmup_frac: 0.6, ..ScheduleConfig::new(10) };
        assert!(lr_schedule(1, &bad, 1.0).is_err());
    }

    #[test]
    fn schedule_without_warmup_starts_at_peak() {
        let s = ScheduleConfig { warmup_frac: 0.0, stable_frac: 1.0, ..ScheduleConfig::new(10) };
        assert_eq!(lr_schedule(1, &s, 1.0).unwrap(), 1.0);
        assert_eq!(lr_schedule(10, &s, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn names_and_grid() {
        assert_eq!(VariantConfig::muon_adam().name(), "MuonAdam");
        assert_eq!(VariantConfig::muon_max().with_truncation(true).name(), "MuonMax-Momo");
        assert_eq!(
            VariantConfig::new(SdType::Regularized, ProductNorm::Inf, BackupNorm::Inf, false).name(),
            "regularized-inf-inf"
        );
        let grid = VariantConfig::grid(&VariantConfig::default());
        assert_eq!(grid.len(), 36);
        let names: HashSet<String> = grid.iter().map(VariantConfig::name).collect();
        assert_eq!(names.len(), 36);
    }

    #[test]
    fn enum_parsing_names_the_allowed_values() {
        assert_eq!("ada_2".parse::<BackupNorm>().unwrap(), BackupNorm::Ada2);
        let err = "ada_3".parse::<BackupNorm>().unwrap_err().to_string();
        assert!(err.contains("ada_inf"), "{err}");
    }

    #[test]
    fn validation_rejects_bad_numbers() {
        assert!(VariantConfig { eta_m: 0.0, ..Default::default() }.validate().is_err());
        assert!(VariantConfig { beta: 1.0, ..Default::default() }.validate().is_err());
        assert!(VariantConfig { beta1: Some(-0.1), ..Default::default() }.validate().is_err());
        assert!(VariantConfig::default().validate().is_ok());
    }

    #[test]
    fn muonadam_direct_examples() {
        let g = ParamTree::new(vec![Matrix::from_diag(&[2.0, 1.0])], vec![2.0]);
        let mut w = g.zeros_like();
        let mut s = OptState::new(&w);
        muonadam_step(&mut w, &mut s, &g, 0.1, 0.3, 0.0, 0.0, 0.0, 0.0, &PolarConfig::default()).unwrap();
        assert!(w.matrices[0].sub(&Matrix::identity(2).scaled(-0.1)).unwrap().max_abs() < 1e-12);
        assert!((w.base[0] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn adam_direct_example() {
        let mut theta = vec![1.0];
        let mut s = AdamState::default();
        adam_step(&mut theta, &[2.0], &mut s, 0.1, 0.9, 0.9, 0.0).unwrap();
        assert!((theta[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn muonmax_momo_single_slot_hand_evaluation() {
        let g = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 3.0]]).unwrap();
        let tree = ParamTree::new(vec![g.clone()], vec![]);
        let cfg = VariantConfig { beta: 0.0, f_star: 0.0, ..VariantConfig::muon_max().with_truncation(true) }
            .with_rates(1.0, 1.0);
        let mut w = tree.zeros_like();
        let mut s = OptState::new(&w);
        let r = muonmax_momo_step(&mut w, &mut s, 2.0, &tree, &cfg, &PolarConfig::default(), 1.0).unwrap();
        let nuc: f64 = crate::linalg::svd_oracle(&g).unwrap().s.iter().sum();
        let coef = (2.0 / (nuc * nuc)).min(1.0);
        assert!((r.dual_total - nuc).abs() < 1e-9);
        assert!((r.effective_step_matrix - coef).abs() < 1e-9);
        let expect = crate::linalg::svd_oracle(&g).unwrap().polar_factor().scaled(-coef * nuc);
        assert!(w.matrices[0].sub(&expect).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn scion_generic_step_is_sign_on_theta() {
        let cfg = VariantConfig { beta: 0.0, ..VariantConfig::scion() }.with_rates(0.2, 0.05);
        let g = ParamTree::new(vec![Matrix::from_diag(&[3.0, 1.0])], vec![0.5, -2.0, 0.0]);
        let mut w = g.zeros_like();
        let mut opt = build_variant(&cfg, &PolarConfig::default()).unwrap();
        let r = opt.step(&mut w, 1.0, &g, 1.0).unwrap();
        assert!(w.matrices[0].sub(&Matrix::identity(2).scaled(-0.2)).unwrap().max_abs() < 1e-12);
        for (t, e) in w.base.iter().zip([-0.05, 0.05, 0.0]) {
            assert!((t - e).abs() < 1e-15);
        }
        assert_eq!(r.effective_step_matrix, 0.2);
        assert!((r.effective_step_base - 0.05).abs() < 1e-15);
    }

    #[test]
    fn lr_multiplier_must_be_positive() {
        let g = ParamTree::new(vec![Matrix::identity(2)], vec![1.0]);
        let mut w = g.clone();
        let mut opt = build_variant(&VariantConfig::muon_adam(), &PolarConfig::default()).unwrap();
        assert!(opt.step(&mut w, 0.0, &g, 0.0).is_err());
    }
}
