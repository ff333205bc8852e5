//! Dense row-major matrices and the spectral kernels used by the optimizers.
//!
//! The polar factor `U Vᵀ` of `M = U Σ Vᵀ` is approximated by composing odd
//! quintic polynomials `p(X) = aX + b(XXᵀ)X + c(XXᵀ)²X`. The coefficient
//! schedule is data ([`PolarConfig`]), so alternative tables can be swapped in
//! without touching the iteration. [`svd_oracle`] is a slow one-sided Jacobi
//! SVD that exists only to check the fast paths.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("matrix shape {rows}x{cols} has a zero dimension")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    /// A `len x 1` column matrix.
    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { rows: rows.max(1), cols: cols.max(1), data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(shape_error("matmul", self, other));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * other`
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(shape_error("matmul_tn", self, other));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * otherᵀ`
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(shape_error("matmul_nt", self, other));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Matrix) -> Result<()> {
        if self.shape() != x.shape() {
            return Err(shape_error("axpy", self, x));
        }
        for (a, &b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn frob_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn shape_error(op: &str, a: &Matrix, b: &Matrix) -> Error {
    Error::Dimension(format!("{op}: {}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Trace inner product `Σᵢⱼ AᵢⱼBᵢⱼ`.
pub fn frob_inner(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_error("frob_inner", a, b));
    }
    Ok(dot(&a.data, &b.data))
}

/// Coefficient schedule for the odd-polynomial polar iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarConfig {
    pub iterations: usize,
    /// `(a, b, c)` per iteration; the last triple is reused once the table runs out.
    pub coefficients: Vec<(f64, f64, f64)>,
    /// Divide by an upper bound on the spectral norm before iterating.
    pub spectral_prescale: bool,
    /// Repeated squarings of the Gram matrix behind the prescale bound; each
    /// one halves the exponent of its worst-case looseness `k^(1/2^(j+1))`.
    pub gram_squarings: usize,
}

/// Five aggressive quintic steps tuned for singular values in roughly
/// `[1e-3, 1]`, followed by the quintic Newton-Schulz map `(15/8, -5/4, 3/8)`,
/// which fixes 1 with vanishing first and second derivatives.
pub const DEFAULT_POLAR_COEFFICIENTS: [(f64, f64, f64); 8] = [
    (8.287_212_018_145_63, -23.595_886_519_098_837, 17.300_387_312_530_933),
    (4.107_059_111_542_203, -2.947_849_916_737_910_6, 0.544_843_108_292_660_1),
    (3.948_690_853_482_294_6, -2.908_902_115_962_949, 0.551_819_139_437_013_7),
    (3.318_419_657_370_601_5, -2.488_488_024_314_874, 0.510_048_940_123_72),
    (2.300_652_019_954_817, -1.668_903_984_574_749_3, 0.418_807_311_952_567_3),
    (1.891_301_407_787_398, -1.267_995_827_194_586_8, 0.376_804_089_485_248_35),
    (1.875_001_480_853_447_9, -1.250_001_645_399_948_7, 0.375_000_164_547_424_8),
    (1.875, -1.25, 0.375),
];

impl Default for PolarConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            coefficients: DEFAULT_POLAR_COEFFICIENTS.to_vec(),
            spectral_prescale: true,
            gram_squarings: 4,
        }
    }
}

impl PolarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("polar.iterations must be at least 1".into()));
        }
        if self.coefficients.is_empty() {
            return Err(Error::Config("polar coefficient table is empty".into()));
        }
        if self.coefficients.iter().any(|&(a, b, c)| !(a.is_finite() && b.is_finite() && c.is_finite())) {
            return Err(Error::Config("polar coefficient table has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn step(&self, k: usize) -> (f64, f64, f64) {
        self.coefficients[k.min(self.coefficients.len() - 1)]
    }
}

/// Approximate polar factor `U Vᵀ` of a nonzero matrix.
pub fn polar(m: &Matrix, cfg: &PolarConfig) -> Result<Matrix> {
    cfg.validate()?;
    ensure_finite(m, "polar input")?;
    if m.is_zero() {
        return Err(Error::Degenerate("polar factor of the zero matrix"));
    }
    let mut x = m.clone();
    if cfg.spectral_prescale {
        x.scale(1.0 / spectral_upper_bound(m, cfg.gram_squarings)?);
    }
    // Gram matrix on the smaller side.
    let tall = m.rows() > m.cols();
    for k in 0..cfg.iterations {
        let (a, b, c) = cfg.step(k);
        let gram = if tall { x.matmul_tn(&x)? } else { x.matmul_nt(&x)? };
        let mut poly = gram.matmul(&gram)?;
        poly.scale(c);
        poly.axpy(b, &gram)?;
        let mut next = if tall { x.matmul(&poly)? } else { poly.matmul(&x)? };
        next.axpy(a, &x)?;
        if !next.is_finite() {
            return Err(Error::NumericInstability { iteration: k });
        }
        x = next;
    }
    Ok(x)
}

/// `‖M‖_nuc` computed as `⟨polar(M), M⟩`; zero for the zero matrix.
pub fn nuclear_norm(m: &Matrix, cfg: &PolarConfig) -> Result<f64> {
    if m.is_zero() {
        return Ok(0.0);
    }
    let p = polar(m, cfg)?;
    Ok(frob_inner(&p, m)?.max(0.0))
}

/// Power-iteration estimate of the largest singular value. Never exceeds the
/// true value (it is a Rayleigh quotient).
pub fn spectral_norm(m: &Matrix, iters: usize) -> f64 {
    if m.is_zero() {
        return 0.0;
    }
    let mut v = power_start(m);
    let mut u = vec![0.0; m.rows()];
    for _ in 0..iters.max(1) {
        mat_vec(m, &v, &mut u);
        let mut w = vec![0.0; m.cols()];
        mat_t_vec(m, &u, &mut w);
        let n = dot(&w, &w).sqrt();
        if n == 0.0 || !n.is_finite() {
            break;
        }
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / n);
    }
    mat_vec(m, &v, &mut u);
    dot(&u, &u).sqrt()
}

/// Guaranteed upper bound on `‖M‖₂`: `λ_max(G) ≤ ‖G^(2^j)‖_F^(1/2^j)` for the
/// Gram matrix `G`. Each power is renormalized, so nothing overflows.
pub fn spectral_upper_bound(m: &Matrix, squarings: usize) -> Result<f64> {
    let frob = m.frob_norm();
    if frob == 0.0 {
        return Ok(0.0);
    }
    let mut x = m.clone();
    x.scale(1.0 / frob);
    let mut g = if m.rows() > m.cols() { x.matmul_tn(&x)? } else { x.matmul_nt(&x)? };
    // log λ_max(G₀) ≤ Σ_j log‖G_j‖_F / 2^j with G_{j+1} = (G_j / ‖G_j‖_F)².
    let mut log_bound = 0.0;
    let mut weight = 1.0;
    for _ in 0..squarings {
        let c = g.frob_norm();
        log_bound += weight * c.ln();
        g.scale(1.0 / c);
        g = g.matmul(&g)?;
        weight *= 0.5;
    }
    log_bound += weight * g.frob_norm().ln();
    let bound = frob * (0.5 * log_bound).exp();
    Ok(bound.min(frob))
}

// Largest column plus a small deterministic perturbation, so the start is
// unlikely to be orthogonal to the top right singular vector.
fn power_start(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let col_norm = |j: usize| (0..rows).map(|i| m.get(i, j).powi(2)).sum::<f64>();
    let best = (0..cols).max_by(|&a, &b| col_norm(a).total_cmp(&col_norm(b))).unwrap_or(0);
    let mut v: Vec<f64> = (0..cols)
        .map(|j| 1e-3 * (((j as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5))
        .collect();
    v[best] += 1.0;
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn mat_vec(m: &Matrix, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(i), v);
    }
}

fn mat_t_vec(m: &Matrix, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, &ui) in u.iter().enumerate() {
        for (o, &mij) in out.iter_mut().zip(m.row(i)) {
            *o += ui * mij;
        }
    }
}

/// Reduced SVD `M = U diag(S) Vᵀ` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.s.iter().enumerate() {
                let x = us.get(i, j) * s;
                us.set(i, j, x);
            }
        }
        us.matmul_nt(&self.v).expect("svd factors are conformant")
    }

    /// `U Vᵀ`, the exact polar factor when `M` has full rank.
    pub fn polar_factor(&self) -> Matrix {
        self.u.matmul_nt(&self.v).expect("svd factors are conformant")
    }
}

pub const SVD_ORACLE_MAX_DIM: usize = 16;

/// One-sided Jacobi SVD. Slow, accurate to machine precision; test use only.
pub fn svd_oracle(m: &Matrix) -> Result<Svd> {
    let (rows, cols) = m.shape();
    if rows > SVD_ORACLE_MAX_DIM || cols > SVD_ORACLE_MAX_DIM {
        return Err(Error::OracleScope { rows, cols });
    }
    ensure_finite(m, "svd input")?;
    let transposed = rows < cols;
    let a = if transposed { m.transpose() } else { m.clone() };
    let (p, q) = a.shape();

    // Columns of `work` are rotated until mutually orthogonal; `v` accumulates
    // the rotations.
    let mut work = a;
    let mut v = Matrix::identity(q);
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..q {
            for j in (i + 1)..q {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..p {
                    let (x, y) = (work.get(k, i), work.get(k, j));
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut work, i, j, c, s);
                rotate_columns(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..q).map(|j| (0..p).map(|k| work.get(k, j).powi(2)).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let cutoff = s.first().copied().unwrap_or(0.0) * 1e-13;

    let mut u = Matrix::zeros(p, q);
    let mut v_sorted = Matrix::zeros(q, q);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..q {
            v_sorted.set(k, dst, v.get(k, src));
        }
        if norms[src] > cutoff && norms[src] > 0.0 {
            for k in 0..p {
                u.set(k, dst, work.get(k, src) / norms[src]);
            }
        }
    }
    complete_orthonormal_columns(&mut u, &s, cutoff);

    Ok(if transposed {
        Svd { u: v_sorted, s, v: u }
    } else {
        Svd { u, s, v: v_sorted }
    })
}

fn rotate_columns(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    for k in 0..m.rows() {
        let (x, y) = (m.get(k, i), m.get(k, j));
        m.set(k, i, c * x - s * y);
        m.set(k, j, s * x + c * y);
    }
}

// Columns belonging to (numerically) zero singular values are replaced by unit
// vectors orthogonal to the others.
fn complete_orthonormal_columns(u: &mut Matrix, s: &[f64], cutoff: f64) {
    let (p, q) = u.shape();
    for j in 0..q {
        if s[j] > cutoff && s[j] > 0.0 {
            continue;
        }
        for basis in 0..p {
            let mut cand = vec![0.0; p];
            cand[basis] = 1.0;
            for _ in 0..2 {
                for (other, &so) in s.iter().enumerate().take(q) {
                    if other == j || (other > j && !(so > cutoff && so > 0.0)) {
                        continue;
                    }
                    let proj: f64 = (0..p).map(|k| cand[k] * u.get(k, other)).sum();
                    for (k, c) in cand.iter_mut().enumerate() {
                        *c -= proj * u.get(k, other);
                    }
                }
            }
            let n = dot(&cand, &cand).sqrt();
            if n > 0.5 {
                for (k, c) in cand.iter().enumerate() {
                    u.set(k, j, c / n);
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        let d = a.sub(b).unwrap().frob_norm();
        assert!(d <= tol, "difference {d:e} exceeds {tol:e}\n{a:?}\n{b:?}");
    }

    #[test]
    fn frob_inner_examples() {
        let i2 = Matrix::identity(2);
        assert_eq!(frob_inner(&i2, &i2).unwrap(), 2.0);
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(frob_inner(&a, &Matrix::zeros(2, 2)).unwrap(), 0.0);
        assert_eq!(frob_inner(&a, &i2).unwrap(), 5.0);
        assert_eq!(frob_inner(&a, &i2).unwrap(), frob_inner(&i2, &a).unwrap());
        assert!(matches!(frob_inner(&a, &Matrix::zeros(2, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn matrix_shape_validation() {
        assert!(Matrix::new(0, 3, vec![]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn polar_of_identity_and_diagonal() {
        let cfg = PolarConfig::default();
        assert_close(&polar(&Matrix::identity(3), &cfg).unwrap(), &Matrix::identity(3), 1e-12);
        let d = Matrix::from_diag(&[3.0, -4.0]);
        assert_close(&polar(&d, &cfg).unwrap(), &Matrix::from_diag(&[1.0, -1.0]), 1e-12);
    }

    #[test]
    fn polar_of_rotated_diagonal_recovers_rotation() {
        let (c, s) = (0.3_f64.cos(), 0.3_f64.sin());
        let r = Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap();
        let m = r.matmul(&Matrix::from_diag(&[2.0, 5.0])).unwrap();
        let oracle = svd_oracle(&m).unwrap().polar_factor();
        assert_close(&oracle, &r, 1e-12);
        assert_close(&polar(&m, &PolarConfig::default()).unwrap(), &oracle, 1e-10);
    }

    #[test]
    fn polar_rejects_zero_and_reports_instability() {
        let cfg = PolarConfig::default();
        assert!(matches!(polar(&Matrix::zeros(2, 3), &cfg), Err(Error::Degenerate(_))));
        let blowup = PolarConfig {
            iterations: 12,
            coefficients: vec![(1e200, 1e200, 1e200)],
            ..PolarConfig::default()
        };
        let err = polar(&Matrix::identity(2), &blowup).unwrap_err();
        assert!(matches!(err, Error::NumericInstability { iteration } if iteration >= 1));
    }

    #[test]
    fn polar_handles_rectangular_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(r, c) in &[(5, 3), (3, 5), (1, 4), (4, 1)] {
            let m = Matrix::random_normal(r, c, &mut rng);
            let p = polar(&m, &PolarConfig::default()).unwrap();
            let oracle = svd_oracle(&m).unwrap().polar_factor();
            assert_close(&p, &oracle, 1e-8);
        }
    }

    #[test]
    fn nuclear_norm_examples() {
        let cfg = PolarConfig::default();
        assert!((nuclear_norm(&Matrix::from_diag(&[3.0, 4.0]), &cfg).unwrap() - 7.0).abs() < 1e-12);
        assert_eq!(nuclear_norm(&Matrix::zeros(3, 2), &cfg).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = Matrix::random_normal(3, 3, &mut rng);
        let sum: f64 = svd_oracle(&m).unwrap().s.iter().sum();
        assert!((nuclear_norm(&m, &cfg).unwrap() - sum).abs() < 1e-6);
    }

    #[test]
    fn spectral_norm_examples() {
        assert!((spectral_norm(&Matrix::from_diag(&[3.0, 4.0]), 50) - 4.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&Matrix::zeros(2, 2), 10), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Matrix::random_normal(4, 3, &mut rng);
        let top = svd_oracle(&m).unwrap().s[0];
        let est = spectral_norm(&m, 200);
        assert!((est - top).abs() < 1e-6, "{est} vs {top}");
        assert!(est <= top * (1.0 + 1e-12));
    }

    #[test]
    fn svd_oracle_examples() {
        let svd = svd_oracle(&Matrix::identity(2)).unwrap();
        assert_eq!(svd.s, vec![1.0, 1.0]);
        assert_close(&svd.reconstruct(), &Matrix::identity(2), 1e-14);

        let svd = svd_oracle(&Matrix::from_diag(&[0.0, 5.0])).unwrap();
        assert_eq!(svd.s, vec![5.0, 0.0]);
        let utu = svd.u.matmul_tn(&svd.u).unwrap();
        assert_close(&utu, &Matrix::identity(2), 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Matrix::random_normal(5, 3, &mut rng);
        let svd = svd_oracle(&m).unwrap();
        assert!(svd.reconstruct().sub(&m).unwrap().frob_norm() <= 1e-10 * m.frob_norm());
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));

        assert!(matches!(svd_oracle(&Matrix::zeros(17, 2)), Err(Error::OracleScope { .. })));
    }

    #[test]
    fn svd_oracle_wide_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Matrix::random_normal(3, 7, &mut rng);
        let svd = svd_oracle(&m).unwrap();
        assert_eq!(svd.u.shape(), (3, 3));
        assert_eq!(svd.v.shape(), (7, 3));
        assert!(svd.reconstruct().sub(&m).unwrap().frob_norm() <= 1e-12 * m.frob_norm());
    }

    #[test]
    fn polar_is_scale_invariant_with_prescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = PolarConfig::default();
        let m = Matrix::random_normal(4, 6, &mut rng);
        let p = polar(&m, &cfg).unwrap();
        for c in [1e-6, 0.37, 12.0, 1e5] {
            let pc = polar(&m.scaled(c), &cfg).unwrap();
            assert!(pc.sub(&p).unwrap().max_abs() <= 1e-6);
        }
    }

    #[test]
    fn prescale_bound_is_a_tight_upper_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..200 {
            let (r, c) = (1 + trial % 16, 1 + (trial * 7) % 16);
            let mut m = Matrix::random_normal(r, c, &mut rng);
            if trial % 3 == 0 {
                // nearly repeated top singular values slow power iteration down
                let svd = svd_oracle(&m).unwrap();
                let s: Vec<f64> = svd.s.iter().enumerate().map(|(i, _)| if i < 2 { 1.0 } else { 0.5 }).collect();
                m = svd.u.matmul(&Matrix::from_diag(&s)).unwrap().matmul_nt(&svd.v).unwrap();
            }
            let top = svd_oracle(&m).unwrap().s[0];
            let bound = spectral_upper_bound(&m, 4).unwrap();
            let k = r.min(c) as f64;
            assert!(bound >= top * (1.0 - 1e-12), "trial {trial}: {bound} < {top}");
            assert!(bound <= top * k.powf(1.0 / 32.0) * (1.0 + 1e-12));
            assert!(bound <= m.frob_norm());
        }
        assert_eq!(spectral_upper_bound(&Matrix::zeros(2, 2), 4).unwrap(), 0.0);
    }
}
