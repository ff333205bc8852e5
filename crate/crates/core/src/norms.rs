//! Atomic norms with their linear minimization oracles and duals, and product
//! norms built by aggregating per-slot norms with an outer norm.
//!
//! Every element is handled as a [`Matrix`]; the `θ` slot is viewed as a
//! column. For a product norm `h = f(g₁(x¹), …, gₙ(xⁿ))` the oracle is
//! `LMO_h(V) = (φ₁ LMO_{g₁}(v¹), …)` with `φ = −LMO_f(g₁*(v¹), …)` and the dual
//! is `f*(g₁*(v¹), …)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_inner, polar, spectral_norm, svd_oracle, Matrix, PolarConfig, SVD_ORACLE_MAX_DIM};
use crate::tree::ParamTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AtomicNorm {
    /// `‖x‖₂` (Frobenius for matrices).
    Euclid,
    /// `‖x‖_∞` over entries.
    MaxAbs,
    /// Largest singular value.
    Spectral,
    /// `‖x‖_D = ‖D x‖_base` with `D = diag(diag)` acting entrywise.
    Scaled { diag: Vec<f64>, base: Box<AtomicNorm> },
}

impl AtomicNorm {
    pub fn scaled(diag: Vec<f64>, base: AtomicNorm) -> Result<Self> {
        let norm = AtomicNorm::Scaled { diag, base: Box::new(base) };
        norm.validate()?;
        Ok(norm)
    }

    pub fn validate(&self) -> Result<()> {
        if let AtomicNorm::Scaled { diag, base } = self {
            if let Some(bad) = diag.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
                return Err(Error::InvalidNorm(format!("scaling entries must be positive and finite, got {bad}")));
            }
            base.validate()?;
        }
        Ok(())
    }

    fn check_len(&self, v: &Matrix) -> Result<()> {
        if let AtomicNorm::Scaled { diag, base } = self {
            if diag.len() != v.len() {
                return Err(Error::Dimension(format!(
                    "scaled norm has {} entries, element has {}",
                    diag.len(),
                    v.len()
                )));
            }
            base.check_len(v)?;
        }
        Ok(())
    }

    /// `argmin_{‖u‖ ≤ 1} ⟨u, v⟩`. Errors on the zero element.
    pub fn lmo(&self, v: &Matrix, polar_cfg: &PolarConfig) -> Result<Matrix> {
        Ok(self.lmo_with_dual(v, polar_cfg)?.0)
    }

    /// Dual norm; zero for the zero element.
    pub fn dual(&self, v: &Matrix, polar_cfg: &PolarConfig) -> Result<f64> {
        self.check_len(v)?;
        if v.is_zero() {
            return Ok(0.0);
        }
        match self {
            AtomicNorm::Euclid => Ok(v.frob_norm()),
            AtomicNorm::MaxAbs => Ok(v.as_slice().iter().map(|x| x.abs()).sum()),
            AtomicNorm::Spectral => Ok(self.lmo_with_dual(v, polar_cfg)?.1),
            AtomicNorm::Scaled { diag, base } => base.dual(&unscale(v, diag), polar_cfg),
        }
    }

    /// The oracle together with the dual `⟨−LMO(v), v⟩`, sharing the work.
    pub fn lmo_with_dual(&self, v: &Matrix, polar_cfg: &PolarConfig) -> Result<(Matrix, f64)> {
        self.check_len(v)?;
        if v.is_zero() {
            return Err(Error::Degenerate("LMO of the zero element"));
        }
        match self {
            AtomicNorm::Euclid => {
                let n = v.frob_norm();
                Ok((v.scaled(-1.0 / n), n))
            }
            AtomicNorm::MaxAbs => {
                let mut u = v.clone();
                // sign(0) = 0
                u.as_mut_slice().iter_mut().for_each(|x| *x = -sign(*x));
                Ok((u, v.as_slice().iter().map(|x| x.abs()).sum()))
            }
            AtomicNorm::Spectral => {
                let p = polar(v, polar_cfg)?;
                let d = frob_inner(&p, v)?.max(0.0);
                Ok((p.scaled(-1.0), d))
            }
            AtomicNorm::Scaled { diag, base } => {
                let (mut u, d) = base.lmo_with_dual(&unscale(v, diag), polar_cfg)?;
                u.as_mut_slice().iter_mut().zip(diag).for_each(|(x, s)| *x /= s);
                Ok((u, d))
            }
        }
    }

    /// The norm itself. Spectral uses the exact SVD for small matrices and
    /// long power iteration otherwise.
    pub fn primal(&self, u: &Matrix) -> Result<f64> {
        self.check_len(u)?;
        match self {
            AtomicNorm::Euclid => Ok(u.frob_norm()),
            AtomicNorm::MaxAbs => Ok(u.max_abs()),
            AtomicNorm::Spectral => {
                if u.is_zero() {
                    Ok(0.0)
                } else if u.rows() == 1 || u.cols() == 1 {
                    Ok(u.frob_norm())
                } else if u.rows() <= SVD_ORACLE_MAX_DIM && u.cols() <= SVD_ORACLE_MAX_DIM {
                    Ok(svd_oracle(u)?.s[0])
                } else {
                    Ok(spectral_norm(u, 500))
                }
            }
            AtomicNorm::Scaled { diag, base } => {
                let mut du = u.clone();
                du.as_mut_slice().iter_mut().zip(diag).for_each(|(x, s)| *x *= s);
                base.primal(&du)
            }
        }
    }
}

// D⁻ᵀ v for diagonal D.
fn unscale(v: &Matrix, diag: &[f64]) -> Matrix {
    let mut w = v.clone();
    w.as_mut_slice().iter_mut().zip(diag).for_each(|(x, s)| *x /= s);
    w
}

#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn atomic_lmo(norm: &AtomicNorm, v: &Matrix, polar_cfg: &PolarConfig) -> Result<Matrix> {
    norm.lmo(v, polar_cfg)
}

pub fn atomic_dual(norm: &AtomicNorm, v: &Matrix, polar_cfg: &PolarConfig) -> Result<f64> {
    norm.dual(v, polar_cfg)
}

/// Outer norm `f` combining the per-slot norms `rᵢ = gᵢ(xⁱ)`.
///
/// `Max` is `max wᵢ rᵢ`, `L2` is `√Σ wᵢ² rᵢ²`; empty weights mean all ones.
/// `Hybrid` treats the last slot as `θ`: `√(max_{ℓ<n} r_ℓ² + λ r_n²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProductAggregator {
    Max { weights: Vec<f64> },
    L2 { weights: Vec<f64> },
    Hybrid { lambda: f64 },
}

impl ProductAggregator {
    pub fn max() -> Self {
        ProductAggregator::Max { weights: Vec::new() }
    }

    pub fn l2() -> Self {
        ProductAggregator::L2 { weights: Vec::new() }
    }

    pub fn validate(&self, slots: usize) -> Result<()> {
        match self {
            ProductAggregator::Max { weights } | ProductAggregator::L2 { weights } => {
                if !weights.is_empty() && weights.len() != slots {
                    return Err(Error::Dimension(format!("{} aggregator weights for {slots} slots", weights.len())));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::InvalidNorm("aggregator weights must be positive and finite".into()));
                }
            }
            ProductAggregator::Hybrid { lambda } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(Error::InvalidNorm(format!("hybrid lambda must be positive and finite, got {lambda}")));
                }
            }
        }
        Ok(())
    }

    fn weight(weights: &[f64], i: usize) -> f64 {
        weights.get(i).copied().unwrap_or(1.0)
    }

    pub fn primal(&self, r: &[f64]) -> f64 {
        match self {
            ProductAggregator::Max { weights } => {
                r.iter().enumerate().fold(0.0, |acc, (i, x)| acc.max(Self::weight(weights, i) * x))
            }
            ProductAggregator::L2 { weights } => {
                r.iter().enumerate().map(|(i, x)| (Self::weight(weights, i) * x).powi(2)).sum::<f64>().sqrt()
            }
            ProductAggregator::Hybrid { lambda } => {
                let (theta, mats) = split_last(r);
                let top = mats.iter().fold(0.0_f64, |a, x| a.max(*x));
                (top * top + lambda * theta * theta).sqrt()
            }
        }
    }

    /// `f*(s)` for nonnegative slot duals `s`.
    pub fn dual(&self, s: &[f64]) -> f64 {
        match self {
            ProductAggregator::Max { weights } => s.iter().enumerate().map(|(i, x)| x / Self::weight(weights, i)).sum(),
            ProductAggregator::L2 { weights } => {
                s.iter().enumerate().map(|(i, x)| (x / Self::weight(weights, i)).powi(2)).sum::<f64>().sqrt()
            }
            ProductAggregator::Hybrid { lambda } => {
                let (theta, mats) = split_last(s);
                let total: f64 = mats.iter().sum();
                (total * total + theta * theta / lambda).sqrt()
            }
        }
    }

    /// `φ = −LMO_f(s)`. Slots with zero dual get coefficient 0; an all-zero
    /// input gives all zeros.
    pub fn coefficients(&self, s: &[f64]) -> Vec<f64> {
        let total = self.dual(s);
        if total <= 0.0 {
            return vec![0.0; s.len()];
        }
        match self {
            ProductAggregator::Max { weights } => s
                .iter()
                .enumerate()
                .map(|(i, &x)| if x > 0.0 { 1.0 / Self::weight(weights, i) } else { 0.0 })
                .collect(),
            ProductAggregator::L2 { weights } => s
                .iter()
                .enumerate()
                .map(|(i, &x)| x / Self::weight(weights, i).powi(2) / total)
                .collect(),
            ProductAggregator::Hybrid { lambda } => {
                let (theta, mats) = split_last(s);
                let matrix_sum: f64 = mats.iter().sum();
                let mut phi: Vec<f64> = mats.iter().map(|&x| if x > 0.0 { matrix_sum / total } else { 0.0 }).collect();
                phi.push(theta / lambda / total);
                phi
            }
        }
    }
}

fn split_last(x: &[f64]) -> (f64, &[f64]) {
    match x.split_last() {
        Some((last, rest)) => (*last, rest),
        None => (0.0, &[]),
    }
}

/// One atomic norm per slot of a [`ParamTree`] plus the outer aggregator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub slot_norms: Vec<AtomicNorm>,
    pub aggregator: ProductAggregator,
    pub polar: PolarConfig,
}

impl NormSpec {
    pub fn new(slot_norms: Vec<AtomicNorm>, aggregator: ProductAggregator) -> Self {
        Self { slot_norms, aggregator, polar: PolarConfig::default() }
    }

    pub fn with_polar(mut self, polar: PolarConfig) -> Self {
        self.polar = polar;
        self
    }

    pub fn validate(&self, tree: &ParamTree) -> Result<()> {
        if self.slot_norms.len() != tree.slot_count() {
            return Err(Error::Dimension(format!(
                "norm spec has {} slots, tree has {}",
                self.slot_norms.len(),
                tree.slot_count()
            )));
        }
        self.slot_norms.iter().try_for_each(AtomicNorm::validate)?;
        self.aggregator.validate(self.slot_norms.len())
    }
}

/// Slot `i` of a tree as a matrix; `None` for an empty `θ`.
pub fn slot_element(tree: &ParamTree, i: usize) -> Option<Matrix> {
    if i < tree.matrices.len() {
        Some(tree.matrices[i].clone())
    } else if tree.base.is_empty() {
        None
    } else {
        Matrix::column(&tree.base).ok()
    }
}

/// Per-slot oracles and duals. Zero slots carry `None` and dual 0.
#[derive(Debug, Clone)]
pub struct SlotDecomposition {
    pub lmos: Vec<Option<Matrix>>,
    pub duals: Vec<f64>,
}

impl SlotDecomposition {
    /// `Σᵢ scale·φᵢ·LMOᵢ` laid out like `like`.
    pub fn assemble(&self, like: &ParamTree, phi: &[f64], scale: f64) -> ParamTree {
        let mut out = like.zeros_like();
        for (i, lmo) in self.lmos.iter().enumerate() {
            let Some(lmo) = lmo else { continue };
            let c = scale * phi[i];
            if i < out.matrices.len() {
                out.matrices[i] = lmo.scaled(c);
            } else {
                out.base.iter_mut().zip(lmo.as_slice()).for_each(|(o, x)| *o = c * x);
            }
        }
        out
    }
}

pub fn decompose(spec: &NormSpec, v: &ParamTree) -> Result<SlotDecomposition> {
    spec.validate(v)?;
    let mut lmos = Vec::with_capacity(v.slot_count());
    let mut duals = Vec::with_capacity(v.slot_count());
    for (i, norm) in spec.slot_norms.iter().enumerate() {
        match slot_element(v, i) {
            Some(el) if !el.is_zero() => {
                let (u, d) = norm.lmo_with_dual(&el, &spec.polar)?;
                lmos.push(Some(u));
                duals.push(d);
            }
            _ => {
                lmos.push(None);
                duals.push(0.0);
            }
        }
    }
    Ok(SlotDecomposition { lmos, duals })
}

pub fn product_lmo(spec: &NormSpec, v: &ParamTree) -> Result<ParamTree> {
    if v.is_zero() {
        return Err(Error::Degenerate("LMO of the all-zero tree"));
    }
    let dec = decompose(spec, v)?;
    let phi = spec.aggregator.coefficients(&dec.duals);
    Ok(dec.assemble(v, &phi, 1.0))
}

pub fn product_dual(spec: &NormSpec, v: &ParamTree) -> Result<f64> {
    spec.validate(v)?;
    let duals = spec
        .slot_norms
        .iter()
        .enumerate()
        .map(|(i, norm)| slot_element(v, i).map_or(Ok(0.0), |el| norm.dual(&el, &spec.polar)))
        .collect::<Result<Vec<_>>>()?;
    Ok(spec.aggregator.dual(&duals))
}

pub fn product_primal(spec: &NormSpec, u: &ParamTree) -> Result<f64> {
    spec.validate(u)?;
    let r = spec
        .slot_norms
        .iter()
        .enumerate()
        .map(|(i, norm)| slot_element(u, i).map_or(Ok(0.0), |el| norm.primal(&el)))
        .collect::<Result<Vec<_>>>()?;
    Ok(spec.aggregator.primal(&r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column(v).unwrap()
    }

    fn cfg() -> PolarConfig {
        PolarConfig::default()
    }

    #[test]
    fn atomic_examples() {
        let v = col(&[2.0, -3.0, 1.0]);
        assert_eq!(atomic_lmo(&AtomicNorm::MaxAbs, &v, &cfg()).unwrap(), col(&[-1.0, 1.0, -1.0]));
        assert_eq!(atomic_dual(&AtomicNorm::MaxAbs, &v, &cfg()).unwrap(), 6.0);

        let e = atomic_lmo(&AtomicNorm::Euclid, &col(&[3.0, 4.0]), &cfg()).unwrap();
        assert!(e.sub(&col(&[-0.6, -0.8])).unwrap().max_abs() < 1e-15);

        let d = atomic_dual(&AtomicNorm::Spectral, &Matrix::from_diag(&[3.0, 4.0]), &cfg()).unwrap();
        assert!((d - 7.0).abs() < 1e-12);

        let scaled = AtomicNorm::scaled(vec![2.0, 1.0], AtomicNorm::MaxAbs).unwrap();
        let v = col(&[2.0, 2.0]);
        assert_eq!(atomic_dual(&scaled, &v, &cfg()).unwrap(), 3.0);
        let u = atomic_lmo(&scaled, &v, &cfg()).unwrap();
        assert_eq!(-frob_inner(&u, &v).unwrap(), 3.0);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        let u = atomic_lmo(&AtomicNorm::MaxAbs, &col(&[0.0, -2.0]), &cfg()).unwrap();
        assert_eq!(u, col(&[0.0, 1.0]));
        assert_eq!(AtomicNorm::MaxAbs.primal(&u).unwrap(), 1.0);
    }

    #[test]
    fn zero_input_behaviour() {
        let z = col(&[0.0, 0.0]);
        assert!(matches!(atomic_lmo(&AtomicNorm::Euclid, &z, &cfg()), Err(Error::Degenerate(_))));
        assert_eq!(atomic_dual(&AtomicNorm::Spectral, &Matrix::zeros(2, 2), &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn scaled_norm_validation() {
        assert!(AtomicNorm::scaled(vec![1.0, 0.0], AtomicNorm::Euclid).is_err());
        assert!(AtomicNorm::scaled(vec![1.0, f64::NAN], AtomicNorm::Euclid).is_err());
        let n = AtomicNorm::scaled(vec![1.0, 2.0], AtomicNorm::Euclid).unwrap();
        assert!(matches!(n.dual(&col(&[1.0, 1.0, 1.0]), &cfg()), Err(Error::Dimension(_))));
    }

    #[test]
    fn product_examples() {
        let max_spec = NormSpec::new(vec![AtomicNorm::MaxAbs, AtomicNorm::MaxAbs], ProductAggregator::max());
        let tree = ParamTree::new(vec![Matrix::new(1, 2, vec![2.0, -3.0]).unwrap()], vec![1.0, 1.0]);
        let lmo = product_lmo(&max_spec, &tree).unwrap();
        assert_eq!(lmo.matrices[0].as_slice(), &[-1.0, 1.0]);
        assert_eq!(lmo.base, vec![-1.0, -1.0]);

        let l2_spec = NormSpec::new(vec![AtomicNorm::Euclid, AtomicNorm::Euclid], ProductAggregator::l2());
        let tree = ParamTree::new(vec![Matrix::new(1, 1, vec![3.0]).unwrap()], vec![4.0]);
        let lmo = product_lmo(&l2_spec, &tree).unwrap();
        assert!((lmo.matrices[0].get(0, 0) + 0.6).abs() < 1e-15);
        assert!((lmo.base[0] + 0.8).abs() < 1e-15);
        assert_eq!(product_dual(&l2_spec, &tree).unwrap(), 5.0);

        let spectral_max = NormSpec::new(vec![AtomicNorm::Spectral, AtomicNorm::MaxAbs], ProductAggregator::max());
        let tree = ParamTree::new(vec![Matrix::from_diag(&[3.0, 4.0])], vec![2.0, -1.0]);
        assert!((product_dual(&spectral_max, &tree).unwrap() - 10.0).abs() < 1e-12);

        let hybrid = NormSpec::new(vec![AtomicNorm::Spectral, AtomicNorm::Euclid], ProductAggregator::Hybrid { lambda: 1.0 });
        let tree = ParamTree::new(vec![Matrix::from_diag(&[1.0, 2.0])], vec![4.0, 0.0]);
        assert!((product_dual(&hybrid, &tree).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_slots_and_zero_tree() {
        let spec = NormSpec::new(vec![AtomicNorm::Spectral, AtomicNorm::Euclid], ProductAggregator::l2());
        let tree = ParamTree::new(vec![Matrix::zeros(2, 2)], vec![0.0, 2.0]);
        let lmo = product_lmo(&spec, &tree).unwrap();
        assert!(lmo.matrices[0].is_zero());
        assert_eq!(lmo.base, vec![0.0, -1.0]);
        assert!(matches!(product_lmo(&spec, &tree.zeros_like()), Err(Error::Degenerate(_))));
        assert_eq!(product_dual(&spec, &tree.zeros_like()).unwrap(), 0.0);

        let no_base = ParamTree::new(vec![Matrix::identity(2)], vec![]);
        assert!((product_dual(&spec, &no_base).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spec_slot_count_must_match() {
        let spec = NormSpec::new(vec![AtomicNorm::Euclid], ProductAggregator::max());
        let tree = ParamTree::new(vec![Matrix::identity(2)], vec![1.0]);
        assert!(matches!(product_dual(&spec, &tree), Err(Error::Dimension(_))));
    }

    fn atomic_strategy() -> impl Strategy<Value = AtomicNorm> {
        prop_oneof![
            Just(AtomicNorm::Euclid),
            Just(AtomicNorm::MaxAbs),
            Just(AtomicNorm::Spectral),
        ]
    }

    fn element(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-5.0..5.0f64, rows * cols)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
            .prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
    }

    proptest! {
        #[test]
        fn lmo_has_unit_norm_and_pairs_with_dual(
            norm in atomic_strategy(),
            scale in prop::collection::vec(0.1..10.0f64, 6),
            use_scale in any::<bool>(),
            v in element(2, 3),
        ) {
            let norm = if use_scale { AtomicNorm::scaled(scale, norm).unwrap() } else { norm };
            let u = norm.lmo(&v, &cfg()).unwrap();
            prop_assert!((norm.primal(&u).unwrap() - 1.0).abs() < 1e-6);
            let d = norm.dual(&v, &cfg()).unwrap();
            prop_assert!((-frob_inner(&u, &v).unwrap() - d).abs() < 1e-6 * d.max(1.0));
        }

        #[test]
        fn dual_and_lmo_are_homogeneous(norm in atomic_strategy(), v in element(3, 2), c in -20.0..20.0f64) {
            prop_assume!(c.abs() > 1e-3);
            let d = norm.dual(&v, &cfg()).unwrap();
            let dc = norm.dual(&v.scaled(c), &cfg()).unwrap();
            prop_assert!((dc - c.abs() * d).abs() < 1e-9 * dc.max(1.0));
            if c > 0.0 {
                let u = norm.lmo(&v, &cfg()).unwrap();
                let uc = norm.lmo(&v.scaled(c), &cfg()).unwrap();
                prop_assert!(uc.sub(&u).unwrap().max_abs() < 1e-6);
            }
        }

        #[test]
        fn product_lmo_pairs_with_product_dual(
            m in element(2, 2),
            theta in prop::collection::vec(-3.0..3.0f64, 3),
            weights in prop::collection::vec(0.2..5.0f64, 2),
            lambda in 0.1..10.0f64,
            which in 0usize..3,
        ) {
            let tree = ParamTree::new(vec![m], theta);
            let aggregator = match which {
                0 => ProductAggregator::Max { weights },
                1 => ProductAggregator::L2 { weights },
                _ => ProductAggregator::Hybrid { lambda },
            };
            let spec = NormSpec::new(vec![AtomicNorm::Spectral, AtomicNorm::MaxAbs], aggregator);
            let u = product_lmo(&spec, &tree).unwrap();
            let d = product_dual(&spec, &tree).unwrap();
            prop_assert!((-u.inner(&tree).unwrap() - d).abs() < 1e-6 * d.max(1.0));
            prop_assert!((product_primal(&spec, &u).unwrap() - 1.0).abs() < 1e-6);
        }
    }
}
