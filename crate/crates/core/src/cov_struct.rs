//! The marginal covariance `V = Z G Zᵀ + σ²I` and its structured inverse.
//!
//! Write `G = ΛΛᵀ` with `Λ` the block-diagonal lower Cholesky factor and
//! `S = ZᵀZ`. The inner matrix `M = σ²I + ΛᵀSΛ` has every eigenvalue at
//! least `σ²` and never involves `G⁻¹`, so it stays well conditioned when `Σ`
//! or `Σ'` approach singularity. With `C⁻¹ = Λ M⁻¹ Λᵀ` (the inverse of the
//! classical capacitance `σ²G⁻¹ + S`),
//!
//! * `V⁻¹ b = (b − Z C⁻¹ Zᵀ b) / σ²`
//! * `log|V| = (n − q) log σ² + log|M|`
//! * `V⁻¹Z = Z W` with `W = (I − C⁻¹S)/σ²`, hence `ZᵀV⁻¹Z = S W` and
//!   `ZᵀV⁻²Z = Wᵀ S W`
//! * `tr V⁻¹ = (n − q)/σ² + tr W` and `tr V⁻² = (n − q)/σ⁴ + tr W²`
//!
//! Only `q×q` objects are factorised, `q = (m + m')d_A`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::matops::{spd_cholesky, symmetrize, SymMatrix};
use crate::model_data::{CrossedDataset, ModelParams};

/// Largest `n_••` for which [`build_v_dense`] will materialise `V`.
pub const DENSE_V_LIMIT: usize = 4000;

/// Capacitance condition estimate above which fits emit a warning.
pub const CONDITION_WARNING: f64 = 1e12;

/// Structured view of `V(Σ, Σ', σ²)` for one dataset.
#[derive(Debug, Clone)]
pub struct VOperator<'a> {
    data: &'a CrossedDataset,
    params: ModelParams,
    sigma_l: DMatrix<f64>,
    sigma_prime_l: DMatrix<f64>,
    inner: DMatrix<f64>,
    inner_chol: Cholesky<f64, Dyn>,
    cap_inv: DMatrix<f64>,
    w: DMatrix<f64>,
}

/// Quantities derived from one residual vector `r`.
#[derive(Debug, Clone)]
pub struct ResidualSolve {
    /// `Zᵀ r`.
    pub zt_r: DVector<f64>,
    /// `C⁻¹ Zᵀ r = G Zᵀ V⁻¹ r`, the BLUP of the random effects.
    pub blup: DVector<f64>,
    /// `Zᵀ V⁻¹ r`.
    pub zt_vinv_r: DVector<f64>,
    /// `V⁻¹ r`.
    pub vinv_r: DVector<f64>,
    /// `rᵀ V⁻¹ r`.
    pub quad: f64,
}

impl<'a> VOperator<'a> {
    pub fn new(data: &'a CrossedDataset, params: &ModelParams) -> Result<Self> {
        if params.d_a() != data.d_a() {
            return Err(Error::DimensionMismatch {
                what: "Sigma dimension vs d_A".into(),
                expected: data.d_a(),
                actual: params.d_a(),
            });
        }
        params.validate()?;
        let sigma_l = params.sigma.cholesky("Sigma")?.l();
        let sigma_prime_l = params.sigma_prime.cholesky("Sigma_prime")?.l();
        let mut op = Self {
            data,
            params: params.clone(),
            sigma_l,
            sigma_prime_l,
            inner: DMatrix::zeros(0, 0),
            inner_chol: Cholesky::new(DMatrix::identity(1, 1)).expect("identity"),
            cap_inv: DMatrix::zeros(0, 0),
            w: DMatrix::zeros(0, 0),
        };
        let q = data.q();
        let s2 = params.sigma2;
        // ΛᵀSΛ
        let s_lambda = op.lambda_mul_right(data.ztz());
        let t = op.lambda_t_mul(&s_lambda);
        let inner = symmetrize(&t) + DMatrix::identity(q, q) * s2;
        op.inner_chol = spd_cholesky(&inner, "inner matrix σ²I + ΛᵀZᵀZΛ")?;
        op.inner = inner;
        // C⁻¹ = Λ M⁻¹ Λᵀ
        let lt = op.lambda_t_mul(&DMatrix::identity(q, q));
        let cap_inv = op.lambda_mul(&op.inner_chol.solve(&lt));
        op.cap_inv = symmetrize(&cap_inv);
        op.w = (DMatrix::identity(q, q) - &op.cap_inv * data.ztz()) / s2;
        Ok(op)
    }

    pub fn data(&self) -> &CrossedDataset {
        self.data
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Replaces the fixed effects; `V` does not depend on them.
    pub fn set_beta(&mut self, beta: &DVector<f64>) {
        self.params.set_beta(beta);
    }

    fn lambda_blocks(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        let left = (0..self.data.m()).map(move |i| (self.data.left_index(i, 0), &self.sigma_l));
        let right = (0..self.data.m_prime()).map(move |j| (self.data.right_index(j, 0), &self.sigma_prime_l));
        left.chain(right)
    }

    /// `Λ A` for `A` with `q` rows.
    fn lambda_mul(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.data.d_a();
        let mut out = DMatrix::zeros(a.nrows(), a.ncols());
        for (k, l) in self.lambda_blocks() {
            out.rows_mut(k, d).copy_from(&(l * a.rows(k, d)));
        }
        out
    }

    /// `Λᵀ A` for `A` with `q` rows.
    fn lambda_t_mul(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.data.d_a();
        let mut out = DMatrix::zeros(a.nrows(), a.ncols());
        for (k, l) in self.lambda_blocks() {
            out.rows_mut(k, d).copy_from(&(l.transpose() * a.rows(k, d)));
        }
        out
    }

    /// `A Λ` for `A` with `q` columns.
    fn lambda_mul_right(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.data.d_a();
        let mut out = DMatrix::zeros(a.nrows(), a.ncols());
        for (k, l) in self.lambda_blocks() {
            out.columns_mut(k, d).copy_from(&(a.columns(k, d) * l));
        }
        out
    }

    /// The inner matrix `M = σ²I + ΛᵀZᵀZΛ`.
    pub fn inner_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    /// `C⁻¹ rhs = Λ M⁻¹ Λᵀ rhs`.
    pub fn capacitance_solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.lambda_mul(&self.inner_chol.solve(&self.lambda_t_mul(rhs)))
    }

    /// `C⁻¹ = (σ²G⁻¹ + ZᵀZ)⁻¹`.
    pub fn capacitance_inverse(&self) -> &DMatrix<f64> {
        &self.cap_inv
    }

    /// `W = (I − C⁻¹ZᵀZ)/σ²`, so that `V⁻¹Z = Z W`.
    pub fn weighted_inverse(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `V⁻¹ rhs` for stacked `rhs` (`n_••×k`).
    pub fn v_solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.data.n_total() {
            return Err(Error::DimensionMismatch {
                what: "rows of rhs".into(),
                expected: self.data.n_total(),
                actual: rhs.nrows(),
            });
        }
        let coef = self.capacitance_solve(&self.data.z_t_mul(rhs));
        Ok((rhs - self.data.z_mul(&coef)) / self.params.sigma2)
    }

    /// `log|V|`.
    pub fn v_logdet(&self) -> f64 {
        let n = self.data.n_total() as f64;
        let q = self.data.q() as f64;
        let logdet_m = 2.0 * self.inner_chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        (n - q) * self.params.sigma2.ln() + logdet_m
    }

    /// All residual-dependent products needed by the likelihood and score.
    pub fn solve_residual(&self, r: &DVector<f64>) -> ResidualSolve {
        let r_mat = DMatrix::from_column_slice(r.len(), 1, r.as_slice());
        let zt_r = self.data.z_t_mul(&r_mat);
        let blup = self.capacitance_solve(&zt_r);
        let zt_vinv_r = (&zt_r - self.data.ztz() * &blup) / self.params.sigma2;
        let vinv_r = (r_mat - self.data.z_mul(&blup)) / self.params.sigma2;
        let quad = r.dot(&vinv_r.column(0));
        ResidualSolve {
            zt_r: zt_r.column(0).into_owned(),
            blup: blup.column(0).into_owned(),
            zt_vinv_r: zt_vinv_r.column(0).into_owned(),
            vinv_r: vinv_r.column(0).into_owned(),
            quad,
        }
    }

    /// `rᵀ V⁻¹ r`.
    pub fn inv_quad(&self, r: &DVector<f64>) -> f64 {
        self.solve_residual(r).quad
    }

    /// `Xᵀ V⁻¹ X` for the stacked fixed-effect design `X = [X_A X_B]`.
    pub fn x_v_inv_x(&self) -> SymMatrix {
        let lzx = self.lambda_t_mul(self.data.zt_x());
        let inner = lzx.transpose() * self.inner_chol.solve(&lzx);
        SymMatrix::from_symmetrized(&((self.data.xtx() - inner) / self.params.sigma2))
    }

    /// `Xᵀ V⁻¹ v` for a stacked vector `v`.
    pub fn x_v_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        let v_mat = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        let coef = self.capacitance_solve(&self.data.z_t_mul(&v_mat));
        let correction = self.data.zt_x().transpose() * coef;
        (self.data.x_t_mul(v) - correction.column(0)) / self.params.sigma2
    }

    /// `K = Zᵀ V⁻¹ Z = S W`.
    pub fn z_v_inv_z(&self) -> SymMatrix {
        SymMatrix::from_symmetrized(&(self.data.ztz() * &self.w))
    }

    /// The `d_A×d_A` block of `K` at block offsets `(a, b)`.
    pub fn z_v_inv_z_block(&self, a: usize, b: usize) -> DMatrix<f64> {
        let d = self.data.d_a();
        let s_rows = self.data.ztz().rows(a, d);
        let block = s_rows * self.w.columns(b, d);
        if a == b {
            symmetrize(&block)
        } else {
            block
        }
    }

    /// `Zᵀ V⁻² Z = Wᵀ S W`.
    pub fn z_v_inv_sq_z(&self) -> SymMatrix {
        let sw = self.data.ztz() * &self.w;
        SymMatrix::from_symmetrized(&(self.w.transpose() * sw))
    }

    /// `tr V⁻¹`.
    pub fn trace_v_inv(&self) -> f64 {
        let n = self.data.n_total() as f64;
        let q = self.data.q() as f64;
        (n - q) / self.params.sigma2 + self.w.trace()
    }

    /// `tr V⁻²`.
    pub fn trace_v_inv_sq(&self) -> f64 {
        let n = self.data.n_total() as f64;
        let q = self.data.q() as f64;
        // tr(W²) = Σ_ij W_ij W_ji
        let tr_w2 = self.w.component_mul(&self.w.transpose()).sum();
        (n - q) / (self.params.sigma2 * self.params.sigma2) + tr_w2
    }

    /// Ratio of extreme eigenvalues of the classical capacitance
    /// `σ²G⁻¹ + ZᵀZ`, computed from `C⁻¹`. Large values flag random-effect
    /// covariances close to singular.
    pub fn condition_estimate(&self) -> f64 {
        let ev = self.cap_inv.clone().symmetric_eigenvalues();
        let (min, max) = (ev.min(), ev.max());
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// Dense `V`, assembled block by block from the two crossed terms plus
/// `σ²I`. Intended for tests and small problems.
pub fn build_v_dense(data: &CrossedDataset, params: &ModelParams) -> Result<SymMatrix> {
    let n = data.n_total();
    if n > DENSE_V_LIMIT {
        return Err(Error::Capacity {
            n,
            limit: DENSE_V_LIMIT,
        });
    }
    params.check_against(data)?;
    let mut v = DMatrix::identity(n, n) * params.sigma2;
    let cells: Vec<_> = data.iter_cells().collect();
    for &(i, j, s1, c1) in &cells {
        for &(i2, j2, s2, c2) in &cells {
            let mut block = DMatrix::zeros(c1.n_cell(), c2.n_cell());
            if i == i2 {
                block += c1.xa() * params.sigma.as_matrix() * c2.xa().transpose();
            }
            if j == j2 {
                block += c1.xa() * params.sigma_prime.as_matrix() * c2.xa().transpose();
            }
            let mut target = v.view_mut((s1, s2), (c1.n_cell(), c2.n_cell()));
            target += block;
        }
    }
    Ok(SymMatrix::from_symmetrized(&v))
}

/// Dense `G = blockdiag(I_m ⊗ Σ, I_m' ⊗ Σ')`.
pub fn build_g_dense(data: &CrossedDataset, params: &ModelParams) -> DMatrix<f64> {
    let d = data.d_a();
    let mut g = DMatrix::zeros(data.q(), data.q());
    for i in 0..data.m() {
        let k = data.left_index(i, 0);
        g.view_mut((k, k), (d, d)).copy_from(params.sigma.as_matrix());
    }
    for j in 0..data.m_prime() {
        let k = data.right_index(j, 0);
        g.view_mut((k, k), (d, d)).copy_from(params.sigma_prime.as_matrix());
    }
    g
}
