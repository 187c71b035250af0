//! Matrix operators used throughout the crate: half-vectorisation, the
//! duplication matrix, Kronecker quadratic forms and the Woodbury family of
//! identities that make the structured solves possible.
//!
//! `vech` stacks the lower triangle column by column:
//! `(1,1), (2,1), …, (d,1), (2,2), …, (d,d)`. Every vech-indexed block in
//! the crate uses this ordering.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for the symmetry check on construction.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Dense symmetric matrix.
///
/// Construction rejects inputs whose largest `|A - Aᵀ|` entry exceeds
/// [`SYMMETRY_TOLERANCE`]; accepted inputs are stored exactly symmetrised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::named(m, "matrix")
    }

    /// As [`SymMatrix::new`], labelling any error with `what`.
    pub fn named(m: DMatrix<f64>, what: &str) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                what: format!("{what} (square)"),
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidParameter(format!("{what}: dimension must be at least 1")));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{what}: non-finite entry")));
        }
        let asym = max_asymmetry(&m);
        if asym > SYMMETRY_TOLERANCE {
            return Err(Error::NotSymmetric {
                what: what.to_string(),
                max_asymmetry: asym,
                tolerance: SYMMETRY_TOLERANCE,
            });
        }
        Ok(Self(symmetrize(&m)))
    }

    /// Symmetrises `(A + Aᵀ)/2` without checking. For results of numerically
    /// sensitive products whose asymmetry is pure rounding.
    pub fn from_symmetrized(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "from_symmetrized needs a square matrix");
        Self(symmetrize(m))
    }

    pub fn from_row_slice(d: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::DimensionMismatch {
                what: "row-major entries".into(),
                expected: d * d,
                actual: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(d, d, entries))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn scaled_identity(d: usize, scale: f64) -> Self {
        Self(DMatrix::identity(d, d) * scale)
    }

    /// 1×1 matrix.
    pub fn scalar(value: f64) -> Self {
        Self(DMatrix::from_element(1, 1, value))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[(r, c)]
    }

    pub fn cholesky(&self, what: &str) -> Result<Cholesky<f64, Dyn>> {
        spd_cholesky(&self.0, what)
    }

    pub fn is_positive_definite(&self) -> bool {
        Cholesky::new(self.0.clone()).is_some()
    }

    pub fn inverse_spd(&self, what: &str) -> Result<SymMatrix> {
        let chol = self.cholesky(what)?;
        Ok(SymMatrix::from_symmetrized(&chol.inverse()))
    }

    pub fn scale(&self, factor: f64) -> SymMatrix {
        SymMatrix(&self.0 * factor)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidParameter(
                "symmetric matrix rows must all have length d".into(),
            ));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        SymMatrix::from_row_slice(d, &flat)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..m.ncols() {
        for r in (c + 1)..m.nrows() {
            worst = worst.max((m[(r, c)] - m[(c, r)]).abs());
        }
    }
    worst
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factorisation that reports the failing pivot on error.
pub fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        // nalgebra accepts zero pivots that only round to positive; reject
        // NaNs explicitly.
        if chol.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
            return Ok(chol);
        }
    }
    let (pivot_index, min_pivot) = failing_pivot(m);
    Err(Error::NotPositiveDefinite {
        what: what.to_string(),
        pivot_index,
        min_pivot,
    })
}

/// Runs an unpivoted LDLᵀ sweep and returns the first non-positive pivot (or
/// the smallest one if the sweep completes).
fn failing_pivot(m: &DMatrix<f64>) -> (usize, f64) {
    let d = m.nrows();
    let mut a = m.clone();
    let mut smallest = (0, f64::INFINITY);
    for k in 0..d {
        let pivot = a[(k, k)];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return (k, pivot);
        }
        if pivot < smallest.1 {
            smallest = (k, pivot);
        }
        for i in (k + 1)..d {
            let f = a[(i, k)] / pivot;
            for j in (k + 1)..d {
                a[(i, j)] -= f * a[(k, j)];
            }
        }
    }
    smallest
}

/// Ratio of extreme singular values; `inf` for exactly singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a general square matrix; fails when the reciprocal condition
/// number is below machine precision.
pub fn checked_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let cond = condition_number(m);
    if !cond.is_finite() || cond > 1.0 / f64::EPSILON {
        return Err(Error::Singular { what: what.to_string() });
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular { what: what.to_string() })
}

/// Position of `(r, s)`, `r >= s`, in the columnwise lower-triangle stacking.
pub fn vech_index(r: usize, s: usize, d: usize) -> usize {
    debug_assert!(r >= s && r < d);
    s * d - s * (s.saturating_sub(1)) / 2 - s + r
}

/// The `(row, col)` pairs of a `d×d` lower triangle in vech order.
pub fn vech_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(d * (d + 1) / 2);
    for s in 0..d {
        for r in s..d {
            pairs.push((r, s));
        }
    }
    pairs
}

/// `d(d+1)/2`.
pub fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

pub fn vech(a: &SymMatrix) -> DVector<f64> {
    let d = a.dim();
    DVector::from_iterator(vech_len(d), vech_pairs(d).into_iter().map(|(r, s)| a.get(r, s)))
}

/// Rebuilds a symmetric matrix from its half-vectorisation.
pub fn unvech(v: &DVector<f64>, d: usize) -> Result<SymMatrix> {
    if v.len() != vech_len(d) {
        return Err(Error::DimensionMismatch {
            what: "vech vector".into(),
            expected: vech_len(d),
            actual: v.len(),
        });
    }
    let mut m = DMatrix::zeros(d, d);
    for (k, (r, s)) in vech_pairs(d).into_iter().enumerate() {
        m[(r, s)] = v[k];
        m[(s, r)] = v[k];
    }
    SymMatrix::new(m)
}

/// Column-stacking vectorisation.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// The zero/one matrix `D_d` with `D_d vech(A) = vec(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DuplicationMatrix {
    d: usize,
    matrix: DMatrix<f64>,
}

impl DuplicationMatrix {
    pub fn new(d: usize) -> Self {
        assert!(d >= 1, "duplication matrix needs d >= 1");
        let mut matrix = DMatrix::zeros(d * d, vech_len(d));
        for (k, (r, s)) in vech_pairs(d).into_iter().enumerate() {
            matrix[(r + s * d, k)] = 1.0;
            matrix[(s + r * d, k)] = 1.0;
        }
        Self { d, matrix }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Moore–Penrose inverse `D_d⁺ = (D_dᵀD_d)⁻¹D_dᵀ`, built entrywise:
/// `D_dᵀD_d` is diagonal with 1 for diagonal positions and 2 otherwise.
pub fn duplication_pinv(d: usize) -> DMatrix<f64> {
    assert!(d >= 1, "duplication matrix needs d >= 1");
    let mut pinv = DMatrix::zeros(vech_len(d), d * d);
    for (k, (r, s)) in vech_pairs(d).into_iter().enumerate() {
        if r == s {
            pinv[(k, r + s * d)] = 1.0;
        } else {
            pinv[(k, r + s * d)] = 0.5;
            pinv[(k, s + r * d)] = 0.5;
        }
    }
    pinv
}

/// `D_dᵀ (A ⊗ A) D_d` assembled entry by entry without forming the
/// Kronecker product. With `(r,s)` the row position and `(t,u)` the column
/// position in vech order:
///
/// | case                 | entry                       |
/// |----------------------|-----------------------------|
/// | `r = s`, `t = u`     | `A_rt²`                     |
/// | `r = s`, `t ≠ u`     | `2 A_rt A_ru`               |
/// | `r ≠ s`, `t = u`     | `2 A_rt A_st`               |
/// | `r ≠ s`, `t ≠ u`     | `2 (A_rt A_su + A_ru A_st)` |
pub fn kron_sym_quadform(a: &SymMatrix) -> SymMatrix {
    let d = a.dim();
    let pairs = vech_pairs(d);
    let k = pairs.len();
    let mut b = DMatrix::zeros(k, k);
    for (i, &(r, s)) in pairs.iter().enumerate() {
        for (j, &(t, u)) in pairs.iter().enumerate() {
            let a_ = |x: usize, y: usize| a.get(x, y);
            b[(i, j)] = match (r == s, t == u) {
                (true, true) => a_(r, t) * a_(r, t),
                (true, false) => 2.0 * a_(r, t) * a_(r, u),
                (false, true) => 2.0 * a_(r, t) * a_(s, t),
                (false, false) => 2.0 * (a_(r, t) * a_(s, u) + a_(r, u) * a_(s, t)),
            };
        }
    }
    SymMatrix::from_symmetrized(&b)
}

/// `D_d⁺ (A ⊗ A) D_d⁺ᵀ`, entrywise. For `(r,s)` and `(t,u)` in vech order
/// the entry is `(A_rt A_su + A_ru A_st) / 2`.
pub fn pinv_kron_quadform(a: &SymMatrix) -> SymMatrix {
    let pairs = vech_pairs(a.dim());
    let k = pairs.len();
    let mut b = DMatrix::zeros(k, k);
    for (i, &(r, s)) in pairs.iter().enumerate() {
        for (j, &(t, u)) in pairs.iter().enumerate() {
            b[(i, j)] = 0.5 * (a.get(r, t) * a.get(s, u) + a.get(r, u) * a.get(s, t));
        }
    }
    SymMatrix::from_symmetrized(&b)
}

fn check_rows(x: &DMatrix<f64>, other: usize, what: &str) -> Result<()> {
    if x.nrows() != other {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected: x.nrows(),
            actual: other,
        });
    }
    Ok(())
}

fn check_inner_dims(x: &DMatrix<f64>, a: &SymMatrix) -> Result<()> {
    if x.ncols() != a.dim() {
        return Err(Error::DimensionMismatch {
            what: "columns of X vs dimension of A".into(),
            expected: a.dim(),
            actual: x.ncols(),
        });
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// `(X A Xᵀ + λI)⁻¹ · rhs` through the `d`-dimensional inner system
/// `(1/λ) rhs − (1/λ²) X (A⁻¹ + XᵀX/λ)⁻¹ Xᵀ rhs`. The `n×n` inverse is never
/// formed.
pub fn woodbury_inverse_apply(
    x: &DMatrix<f64>,
    a: &SymMatrix,
    lambda: f64,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_inner_dims(x, a)?;
    check_lambda(lambda)?;
    check_rows(x, rhs.nrows(), "rows of rhs")?;
    if x.nrows() == 0 {
        return Err(Error::InvalidParameter("X must have at least one row".into()));
    }
    let a_inv = a.cholesky("A")?.inverse();
    let inner = a_inv + x.transpose() * x / lambda;
    let inner_chol = Cholesky::new(symmetrize(&inner)).ok_or_else(|| Error::IllConditioned {
        what: "Woodbury inner matrix A⁻¹ + XᵀX/λ".into(),
        condition: condition_number(&inner),
    })?;
    let xt_rhs = x.transpose() * rhs;
    let correction = x * inner_chol.solve(&xt_rhs);
    Ok(rhs / lambda - correction / (lambda * lambda))
}

/// `{A + λ(XᵀX)⁻¹}` together with `(XᵀX)⁻¹`.
fn shifted_inner(x: &DMatrix<f64>, a: &SymMatrix, lambda: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_inner_dims(x, a)?;
    check_lambda(lambda)?;
    let xtx = x.transpose() * x;
    let xtx_inv = match Cholesky::new(xtx.clone()) {
        Some(c) if condition_number(&xtx) < 1.0 / f64::EPSILON => c.inverse(),
        _ => return Err(Error::RankDeficient { what: "XᵀX".into() }),
    };
    let shifted = a.as_matrix() + &xtx_inv * lambda;
    Ok((symmetrize(&shifted), xtx_inv))
}

/// `Xᵀ(X A Xᵀ + λI)⁻¹ X` evaluated as `{A + λ(XᵀX)⁻¹}⁻¹`.
pub fn corollary21c(x: &DMatrix<f64>, a: &SymMatrix, lambda: f64) -> Result<SymMatrix> {
    let (shifted, _) = shifted_inner(x, a, lambda)?;
    let inv = checked_inverse(&shifted, "A + λ(XᵀX)⁻¹")?;
    Ok(SymMatrix::from_symmetrized(&inv))
}

/// `Xᵀ(X A Xᵀ + λI)⁻² X` evaluated as
/// `{A + λ(XᵀX)⁻¹}⁻¹ (XᵀX)⁻¹ {A + λ(XᵀX)⁻¹}⁻¹`.
pub fn lemma3_squared_form(x: &DMatrix<f64>, a: &SymMatrix, lambda: f64) -> Result<SymMatrix> {
    let (shifted, xtx_inv) = shifted_inner(x, a, lambda)?;
    let inv = checked_inverse(&shifted, "A + λ(XᵀX)⁻¹")?;
    Ok(SymMatrix::from_symmetrized(&(&inv * xtx_inv * &inv)))
}

/// `[I; I]ᵀ [[A, B], [B, A]]⁻¹ [I; I]`, computed by solving the `2d` block
/// system. Equals `2(A + B)⁻¹`.
pub fn lemma4_block_identity(a: &SymMatrix, b: &SymMatrix) -> Result<SymMatrix> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "B".into(),
            expected: d,
            actual: b.dim(),
        });
    }
    let sum = a.as_matrix() + b.as_matrix();
    let cond = condition_number(&sum);
    if !cond.is_finite() || cond > 1.0 / f64::EPSILON {
        return Err(Error::Singular { what: "A + B".into() });
    }
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(a.as_matrix());
    block.view_mut((d, d), (d, d)).copy_from(a.as_matrix());
    block.view_mut((0, d), (d, d)).copy_from(b.as_matrix());
    block.view_mut((d, 0), (d, d)).copy_from(b.as_matrix());
    let mut stacked = DMatrix::zeros(2 * d, d);
    stacked.view_mut((0, 0), (d, d)).fill_with_identity();
    stacked.view_mut((d, 0), (d, d)).fill_with_identity();
    let solved = block.lu().solve(&stacked).ok_or_else(|| Error::Singular {
        what: "[[A, B], [B, A]]".into(),
    })?;
    let out = solved.rows(0, d) + solved.rows(d, d);
    Ok(SymMatrix::from_symmetrized(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sym(d: usize, v: &[f64]) -> SymMatrix {
        SymMatrix::from_row_slice(d, v).unwrap()
    }

    #[test]
    fn vech_orders_columnwise() {
        assert_eq!(vech(&sym(1, &[4.0])).as_slice(), &[4.0]);
        assert_eq!(vech(&sym(2, &[1.0, 2.0, 2.0, 3.0])).as_slice(), &[1.0, 2.0, 3.0]);
        let a = sym(3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        assert_eq!(vech(&a).as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        for (k, (r, s)) in vech_pairs(4).into_iter().enumerate() {
            assert_eq!(vech_index(r, s, 4), k);
        }
    }

    #[test]
    fn rejects_asymmetric_input() {
        let err = SymMatrix::from_row_slice(2, &[1.0, 2.0, 2.1, 3.0]).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric { .. }));
        // rounding-level asymmetry is accepted and removed
        let ok = SymMatrix::from_row_slice(2, &[1.0, 2.0, 2.0 + 1e-14, 3.0]).unwrap();
        assert_eq!(ok.get(0, 1), ok.get(1, 0));
    }

    #[test]
    fn duplication_pinv_small_cases() {
        assert_eq!(duplication_pinv(1), DMatrix::from_element(1, 1, 1.0));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let v = duplication_pinv(2) * vec(&a);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn pinv_times_duplication_is_identity() {
        let d3 = DuplicationMatrix::new(3);
        let product = duplication_pinv(3) * d3.matrix();
        assert_eq!(product, DMatrix::identity(6, 6));
        // explicit (DᵀD)⁻¹Dᵀ
        let dm = d3.matrix();
        let explicit = (dm.transpose() * dm).try_inverse().unwrap() * dm.transpose();
        assert!((explicit - duplication_pinv(3)).amax() < 1e-15);
    }

    #[test]
    fn duplication_rows_have_single_one() {
        for d in 1..=5 {
            let dm = DuplicationMatrix::new(d);
            for row in dm.matrix().row_iter() {
                assert_eq!(row.iter().filter(|v| **v == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn kron_quadform_scalar_and_identity() {
        let b = kron_sym_quadform(&SymMatrix::scalar(3.0));
        assert_eq!(b.get(0, 0), 9.0);
        let b2 = kron_sym_quadform(&SymMatrix::identity(2));
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 1.0]));
        assert_eq!(b2.as_matrix(), &expected);
    }

    #[test]
    fn woodbury_hand_example() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let rhs = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let out = woodbury_inverse_apply(&x, &SymMatrix::scalar(1.0), 1.0, &rhs).unwrap();
        assert_relative_eq!(out[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(out[(1, 0)], -1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn woodbury_lambda_dominated_limit() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -2.0, 1.0, 0.3, 0.7]);
        let rhs = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let out = woodbury_inverse_apply(&x, &SymMatrix::scaled_identity(2, 1e-12), 2.0, &rhs).unwrap();
        assert!((out - &rhs / 2.0).amax() < 1e-11);
    }

    #[test]
    fn woodbury_rejects_bad_lambda() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let rhs = DMatrix::from_element(2, 1, 1.0);
        assert!(woodbury_inverse_apply(&x, &SymMatrix::scalar(1.0), 0.0, &rhs).is_err());
    }

    #[test]
    fn corollary_and_lemma3_scalar_arithmetic() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let c = corollary21c(&x, &SymMatrix::scalar(1.0), 1.0).unwrap();
        assert_relative_eq!(c.get(0, 0), 0.8, epsilon = 1e-15);
        let l3 = lemma3_squared_form(&x, &SymMatrix::scalar(1.0), 1.0).unwrap();
        assert_relative_eq!(l3.get(0, 0), 0.16, epsilon = 1e-15);
    }

    #[test]
    fn corollary_small_lambda_limit() {
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let a = sym(2, &[2.0, 0.3, 0.3, 1.0]);
        let c = corollary21c(&x, &a, 1e-10).unwrap();
        let a_inv = a.inverse_spd("A").unwrap();
        assert!((c.as_matrix() - a_inv.as_matrix()).amax() < 1e-8);
    }

    #[test]
    fn lemma3_tiny_a_limit() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0]);
        let lambda = 0.5;
        let l3 = lemma3_squared_form(&x, &SymMatrix::scalar(1e-14), lambda).unwrap();
        assert_relative_eq!(l3.get(0, 0), 6.0 / (lambda * lambda), max_relative = 1e-10);
    }

    #[test]
    fn rank_deficient_x_is_reported() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let err = corollary21c(&x, &SymMatrix::identity(2), 1.0).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn lemma4_scalar_and_block_diagonal() {
        let r = lemma4_block_identity(&SymMatrix::scalar(2.0), &SymMatrix::scalar(1.0)).unwrap();
        assert_relative_eq!(r.get(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        let a = sym(2, &[2.0, 0.5, 0.5, 1.0]);
        let zero = SymMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        let r = lemma4_block_identity(&a, &zero).unwrap();
        let expected = a.inverse_spd("A").unwrap().into_inner() * 2.0;
        assert!((r.as_matrix() - expected).amax() < 1e-14);
    }

    #[test]
    fn lemma4_singular_sum() {
        let err = lemma4_block_identity(&SymMatrix::scalar(1.0), &SymMatrix::scalar(-1.0)).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn cholesky_failure_reports_pivot() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match spd_cholesky(&m, "test") {
            Err(Error::NotPositiveDefinite {
                pivot_index, min_pivot, ..
            }) => {
                assert_eq!(pivot_index, 1);
                assert_relative_eq!(min_pivot, -3.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serde_round_trip() {
        let a = sym(2, &[1.0, 0.25, 0.25, 2.0]);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "[[1.0,0.25],[0.25,2.0]]");
        let back: SymMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<SymMatrix>("[[1.0,0.2],[0.3,1.0]]").is_err());
    }
}
