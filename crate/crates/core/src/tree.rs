use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Parameters (or gradients, momenta) split into matrix slots `W¹..Wᴸ` followed
/// by one flat vector `θ` holding everything else. `θ` may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTree {
    pub matrices: Vec<Matrix>,
    pub base: Vec<f64>,
}

impl ParamTree {
    pub fn new(matrices: Vec<Matrix>, base: Vec<f64>) -> Self {
        Self { matrices, base }
    }

    /// `L + 1`: one slot per matrix plus the trailing `θ` slot.
    pub fn slot_count(&self) -> usize {
        self.matrices.len() + 1
    }

    pub fn num_params(&self) -> usize {
        self.matrices.iter().map(Matrix::len).sum::<usize>() + self.base.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            matrices: self.matrices.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            base: vec![0.0; self.base.len()],
        }
    }

    pub fn same_shape(&self, other: &ParamTree) -> bool {
        self.matrices.len() == other.matrices.len()
            && self.base.len() == other.base.len()
            && self.matrices.iter().zip(&other.matrices).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn check_shape(&self, other: &ParamTree) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "parameter trees differ: {} vs {}",
                self.describe_shape(),
                other.describe_shape()
            )))
        }
    }

    fn describe_shape(&self) -> String {
        let mats: Vec<String> = self.matrices.iter().map(|m| format!("{}x{}", m.rows(), m.cols())).collect();
        format!("[{}] + θ[{}]", mats.join(", "), self.base.len())
    }

    pub fn inner(&self, other: &ParamTree) -> Result<f64> {
        self.check_shape(other)?;
        let mats: f64 = self.matrices.iter().zip(&other.matrices).map(|(a, b)| dot(a.as_slice(), b.as_slice())).sum();
        Ok(mats + dot(&self.base, &other.base))
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &ParamTree) -> Result<()> {
        self.check_shape(x)?;
        for (a, b) in self.matrices.iter_mut().zip(&x.matrices) {
            a.axpy(alpha, b)?;
        }
        for (a, b) in self.base.iter_mut().zip(&x.base) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.matrices.iter_mut().for_each(|m| m.scale(s));
        self.base.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_zero(&self) -> bool {
        self.matrices.iter().all(Matrix::is_zero) && self.base.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.matrices.iter().all(Matrix::is_finite) && self.base.iter().all(|x| x.is_finite())
    }

    pub fn frob_norm(&self) -> f64 {
        let mats: f64 = self.matrices.iter().map(|m| m.frob_norm().powi(2)).sum();
        (mats + dot(&self.base, &self.base)).sqrt()
    }

    /// `‖self − reference‖ / ‖reference‖` over the whole tree.
    pub fn rel_diff(&self, reference: &ParamTree) -> Result<f64> {
        let mut d = self.clone();
        d.axpy(-1.0, reference)?;
        Ok(d.frob_norm() / reference.frob_norm().max(f64::MIN_POSITIVE))
    }

    /// Flat coordinate access: matrices in order (row-major), then `θ`.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for m in &self.matrices {
            if index < m.len() {
                return m.as_slice()[index];
            }
            index -= m.len();
        }
        self.base[index]
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for m in &mut self.matrices {
            if index < m.len() {
                m.as_mut_slice()[index] = value;
                return;
            }
            index -= m.len();
        }
        self.base[index] = value;
    }
}
