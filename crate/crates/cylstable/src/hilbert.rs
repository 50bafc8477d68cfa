//! Finite-dimensional truncation of the Hilbert spaces G and H and the
//! operator algebra on them: Hilbert-Schmidt operators G -> H stored as
//! dense `d_H x d_G` matrices, and contraction operators H -> H.
//!
//! All types are immutable after construction and safe to share across
//! threads.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CylError, Result};

/// Rejection tolerance on the operator norm of a contraction.
/// Inputs exceeding it are rejected, not renormalized.
pub const CONTRACTION_TOL: f64 = 1e-12;

/// Tolerance for the cached-singular-value and reconstruction invariants.
pub const SVD_TOL: f64 = 1e-10;

/// Dimensions of the truncated spaces: the first `d_g` basis vectors of G
/// and the first `d_h` of H are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub d_g: usize,
    pub d_h: usize,
}

impl TruncationConfig {
    pub fn new(d_g: usize, d_h: usize) -> Result<Self> {
        if d_g == 0 || d_h == 0 {
            return Err(CylError::config("truncation dimensions must be >= 1"));
        }
        Ok(Self { d_g, d_h })
    }
}

/// An element of the truncated H, in coordinates of the orthonormal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HVector {
    pub coords: Vec<f64>,
}

impl HVector {
    pub fn new(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        Self { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        stable_two_norm(&self.coords)
    }

    pub fn inner(&self, other: &HVector) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn add(&self, other: &HVector) -> HVector {
        assert_eq!(self.dim(), other.dim());
        HVector::new(
            self.coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &HVector) -> HVector {
        assert_eq!(self.dim(), other.dim());
        HVector::new(
            self.coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scale(&self, c: f64) -> HVector {
        HVector::new(self.coords.iter().map(|a| a * c).collect())
    }
}

/// Overflow-safe Euclidean norm.
fn stable_two_norm(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
}

/// A Hilbert-Schmidt operator from the truncated G to the truncated H,
/// stored as a `d_H x d_G` matrix over the chosen bases.
#[derive(Debug)]
pub struct HSOperator {
    matrix: DMatrix<f64>,
    singular_values: OnceLock<Vec<f64>>,
}

impl Clone for HSOperator {
    fn clone(&self) -> Self {
        let sv = OnceLock::new();
        if let Some(v) = self.singular_values.get() {
            let _ = sv.set(v.clone());
        }
        Self {
            matrix: self.matrix.clone(),
            singular_values: sv,
        }
    }
}

impl PartialEq for HSOperator {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl HSOperator {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(CylError::config("operator entries must be finite"));
        }
        Ok(Self {
            matrix,
            singular_values: OnceLock::new(),
        })
    }

    /// Build from rows, each row a coordinate of H.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(CylError::config("operator needs at least a 1x1 matrix"));
        }
        let d_g = rows[0].len();
        if rows.iter().any(|r| r.len() != d_g) {
            return Err(CylError::config("operator rows must have equal length"));
        }
        let d_h = rows.len();
        let matrix = DMatrix::from_fn(d_h, d_g, |i, j| rows[i][j]);
        Self::from_matrix(matrix)
    }

    pub fn zeros(d_h: usize, d_g: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(d_h, d_g),
            singular_values: OnceLock::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            singular_values: OnceLock::new(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// (d_H, d_G) = (rows, cols).
    pub fn dims(&self) -> (usize, usize) {
        (self.matrix.nrows(), self.matrix.ncols())
    }

    /// Frobenius norm, overflow-safe. Equals the square root of the sum of
    /// squared singular values.
    pub fn hs_norm(&self) -> f64 {
        stable_two_norm(self.matrix.as_slice())
    }

    /// The transpose, an operator H -> G with the same HS norm.
    pub fn adjoint(&self) -> HSOperator {
        Self {
            matrix: self.matrix.transpose(),
            singular_values: OnceLock::new(),
        }
    }

    /// Apply to a G-vector given by coordinates; returns the H-vector.
    pub fn apply(&self, g: &[f64]) -> HVector {
        assert_eq!(g.len(), self.matrix.ncols(), "dimension mismatch");
        let mut out = vec![0.0; self.matrix.nrows()];
        for j in 0..self.matrix.ncols() {
            let gj = g[j];
            if gj == 0.0 {
                continue;
            }
            for i in 0..self.matrix.nrows() {
                out[i] += self.matrix[(i, j)] * gj;
            }
        }
        HVector::new(out)
    }

    /// Apply the adjoint to an H-vector; returns G-coordinates.
    pub fn apply_adjoint(&self, h: &[f64]) -> Vec<f64> {
        assert_eq!(h.len(), self.matrix.nrows(), "dimension mismatch");
        (0..self.matrix.ncols())
            .map(|j| (0..self.matrix.nrows()).map(|i| self.matrix[(i, j)] * h[i]).sum())
            .collect()
    }

    pub fn linear_combination(&self, c_self: f64, other: &HSOperator, c_other: f64) -> HSOperator {
        assert_eq!(self.dims(), other.dims());
        Self {
            matrix: &self.matrix * c_self + &other.matrix * c_other,
            singular_values: OnceLock::new(),
        }
    }

    pub fn scale(&self, c: f64) -> HSOperator {
        Self {
            matrix: &self.matrix * c,
            singular_values: OnceLock::new(),
        }
    }

    /// JSON form with explicit dimensions: `{"d_h": _, "d_g": _, "rows": [[..]]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = (0..self.matrix.nrows())
            .map(|i| (0..self.matrix.ncols()).map(|j| self.matrix[(i, j)]).collect())
            .collect();
        serde_json::json!({
            "d_h": self.matrix.nrows(),
            "d_g": self.matrix.ncols(),
            "rows": rows,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let d_h = value["d_h"]
            .as_u64()
            .ok_or_else(|| CylError::config("operator JSON needs integer 'd_h'"))?
            as usize;
        let d_g = value["d_g"]
            .as_u64()
            .ok_or_else(|| CylError::config("operator JSON needs integer 'd_g'"))?
            as usize;
        let rows: Vec<Vec<f64>> = serde_json::from_value(value["rows"].clone())
            .map_err(|e| CylError::config(format!("operator JSON rows: {e}")))?;
        if rows.len() != d_h || rows.iter().any(|r| r.len() != d_g) {
            return Err(CylError::config(
                "operator JSON rows disagree with declared dimensions",
            ));
        }
        Self::from_rows(&rows)
    }

    /// Row-major CSV with a `d_h,d_g` header line.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.matrix.nrows(), self.matrix.ncols());
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = (0..self.matrix.ncols())
                .map(|j| format!("{}", self.matrix[(i, j)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CylError::config("empty operator CSV"))?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|x| x.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CylError::config(format!("operator CSV header: {e}")))?;
        if dims.len() != 2 {
            return Err(CylError::config("operator CSV header must be 'd_h,d_g'"));
        }
        let rows: Vec<Vec<f64>> = lines
            .map(|l| {
                l.split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| CylError::config(format!("operator CSV row: {e}")))
            })
            .collect::<Result<_>>()?;
        if rows.len() != dims[0] || rows.iter().any(|r| r.len() != dims[1]) {
            return Err(CylError::config(
                "operator CSV body disagrees with declared dimensions",
            ));
        }
        Self::from_rows(&rows)
    }

    /// Nonincreasing, nonnegative singular values (computed once, cached).
    ///
    /// Signed spectral coefficients are absorbed into the basis factors,
    /// which is loss-free here: every downstream quantity depends only on
    /// their squares or absolute values.
    pub fn singular_values(&self) -> &[f64] {
        self.singular_values.get_or_init(|| {
            let svd = self.matrix.clone().svd(false, false);
            let mut vals: Vec<f64> = svd.singular_values.iter().copied().collect();
            vals.sort_by(|a, b| b.total_cmp(a));
            vals
        })
    }

    /// Full singular decomposition `U diag(s) V^T` with orthonormal factors
    /// and nonincreasing values.
    pub fn singular_decomposition(&self) -> SingularDecomposition {
        let svd = self.matrix.clone().svd(true, true);
        let u = svd.u.expect("svd with u requested");
        let v_t = svd.v_t.expect("svd with v_t requested");
        let values: Vec<f64> = svd.singular_values.iter().copied().collect();
        // nalgebra already returns them sorted descending for `svd`, but we
        // do not rely on it.
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let sorted: Vec<f64> = idx.iter().map(|&k| values[k]).collect();
        let u_sorted = DMatrix::from_fn(u.nrows(), idx.len(), |i, j| u[(i, idx[j])]);
        let vt_sorted = DMatrix::from_fn(idx.len(), v_t.ncols(), |i, j| v_t[(idx[i], j)]);
        SingularDecomposition {
            left: u_sorted,
            values: sorted,
            right_t: vt_sorted,
        }
    }
}

/// Result of `HSOperator::singular_decomposition`.
#[derive(Debug, Clone)]
pub struct SingularDecomposition {
    /// Orthonormal columns spanning the image side (H).
    pub left: DMatrix<f64>,
    /// Nonincreasing, nonnegative singular values.
    pub values: Vec<f64>,
    /// Orthonormal rows spanning the source side (G).
    pub right_t: DMatrix<f64>,
}

impl SingularDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.values.clone()));
        &self.left * d * &self.right_t
    }
}

/// A bounded operator H -> H with operator norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionOperator {
    matrix: DMatrix<f64>,
}

impl ContractionOperator {
    /// Rejects matrices whose largest singular value exceeds `1 + 1e-12`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(CylError::config("contraction operator must be square"));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(CylError::config("operator entries must be finite"));
        }
        let top = matrix
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(0.0f64, |a, &b| a.max(b));
        if top > 1.0 + CONTRACTION_TOL {
            return Err(CylError::config(format!(
                "operator norm {top} exceeds 1 + {CONTRACTION_TOL}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let hs = HSOperator::from_rows(rows)?;
        Self::new(hs.matrix)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(dim, dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Compose with a Hilbert-Schmidt operator. By the ideal property the
    /// result is Hilbert-Schmidt with `hs_norm(gamma phi) <= hs_norm(phi)`.
    pub fn compose(&self, phi: &HSOperator) -> Result<HSOperator> {
        if self.matrix.ncols() != phi.matrix.nrows() {
            return Err(CylError::config(format!(
                "cannot compose {}x{} contraction with {}x{} operator",
                self.matrix.nrows(),
                self.matrix.ncols(),
                phi.matrix.nrows(),
                phi.matrix.ncols()
            )));
        }
        HSOperator::from_matrix(&self.matrix * &phi.matrix)
    }
}

/// Frobenius norm of an operator (spec-level alias).
pub fn hs_norm(phi: &HSOperator) -> f64 {
    phi.hs_norm()
}

/// Transpose (spec-level alias).
pub fn adjoint(phi: &HSOperator) -> HSOperator {
    phi.adjoint()
}

/// `gamma . phi` (spec-level alias).
pub fn compose(gamma: &ContractionOperator, phi: &HSOperator) -> Result<HSOperator> {
    gamma.compose(phi)
}

/// A Hilbert-Schmidt operator with independent N(0, scale^2) entries.
pub fn random_hs_operator(d_h: usize, d_g: usize, scale: f64, rng: &mut impl Rng) -> HSOperator {
    let matrix = DMatrix::from_fn(d_h, d_g, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        scale * z
    });
    HSOperator::from_matrix(matrix).expect("gaussian entries are finite")
}

/// A Haar-ish random rotation of H: the Q factor of a Gaussian matrix.
pub fn random_rotation(dim: usize, rng: &mut impl Rng) -> ContractionOperator {
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = m.qr().q();
    ContractionOperator::new(q).expect("orthogonal matrices are contractions")
}

/// A random contraction: rotation x diagonal in (0, 1] x rotation.
pub fn random_contraction(dim: usize, rng: &mut impl Rng) -> ContractionOperator {
    let q1 = random_rotation(dim, rng);
    let q2 = random_rotation(dim, rng);
    let d = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            rng.random_range(0.0..1.0f64)
        } else {
            0.0
        }
    });
    ContractionOperator::new(q1.matrix() * d * q2.matrix())
        .expect("product of contractions is a contraction")
}
