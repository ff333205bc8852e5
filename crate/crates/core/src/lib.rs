//! Steepest descent over per-parameter norms.
//!
//! Parameters are split into matrix slots and one flat vector `θ`
//! ([`ParamTree`]). Each slot gets an atomic norm and the slot norms are
//! combined by an outer norm ([`NormSpec`]). Optimizers such as Muon with Adam
//! on `θ`, Scion, PolarGrad and MuonMax are all instances of constrained or
//! regularized descent under a particular choice of norms, optionally with a
//! truncated (Momo) step size.

pub mod data;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod models;
pub mod norms;
pub mod presets;
pub mod tree;

pub use engine::{
    apply_step, csd_step, model_estimate_update, momentum_update, momentum_update_split, momo_csd_step, momo_rsd_step,
    rsd_step, stale_cache_update, Descent, OptState, StepReport, StepRule,
};
pub use data::{make_batches, make_dataset, read_cache, write_cache, Dataset, DatasetKind, DatasetSpec};
pub use error::{Error, Result};
pub use linalg::{frob_inner, nuclear_norm, polar, spectral_norm, svd_oracle, Matrix, PolarConfig, Svd};
pub use models::{finite_diff_check, Activation, Batch, LossKind, Mlp, ModelSpec, Targets};
pub use norms::{atomic_dual, atomic_lmo, product_dual, product_lmo, product_primal, AtomicNorm, NormSpec, ProductAggregator};
pub use presets::{
    adam_step, build_variant, lr_schedule, muonadam_step, muonmax_momo_step, AdamState, BackupNorm, Optimizer, ProductNorm,
    ScheduleConfig, SdType, VariantConfig,
};
pub use tree::ParamTree;
