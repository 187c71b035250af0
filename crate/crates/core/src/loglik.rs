//! Log-likelihood, score vector and expected (Fisher) information.
//!
//! The parameter vector is ordered `(β_A, β_B, vech Σ, vech Σ', σ²)`.
//! Derivatives with respect to an off-diagonal `Σ_rs` treat `Σ_rs = Σ_sr`
//! as a single parameter, so `∂V/∂Σ_rs = Z E Zᵀ` with
//! `E = Σ_i (e_(i,r) e_(i,s)ᵀ + [r≠s] e_(i,s) e_(i,r)ᵀ)`. Every trace then
//! reduces to entries of `K = ZᵀV⁻¹Z` and `K₂ = ZᵀV⁻²Z`.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cov_struct::VOperator;
use crate::error::{Error, Result};
use crate::matops::{vech_len, vech_pairs, SymMatrix};
use crate::model_data::{CrossedDataset, ModelParams};

/// A named group of parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamBlock {
    BetaA,
    BetaB,
    Sigma,
    SigmaPrime,
    Sigma2,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 5] = [
        ParamBlock::BetaA,
        ParamBlock::BetaB,
        ParamBlock::Sigma,
        ParamBlock::SigmaPrime,
        ParamBlock::Sigma2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamBlock::BetaA => "beta_A",
            ParamBlock::BetaB => "beta_B",
            ParamBlock::Sigma => "Sigma",
            ParamBlock::SigmaPrime => "Sigma_prime",
            ParamBlock::Sigma2 => "sigma2",
        }
    }
}

/// Positions of each parameter block in the full parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub d_a: usize,
    pub d_b: usize,
}

impl ParamLayout {
    pub fn new(d_a: usize, d_b: usize) -> Self {
        Self { d_a, d_b }
    }

    pub fn for_data(data: &CrossedDataset) -> Self {
        Self::new(data.d_a(), data.d_b())
    }

    /// `d_A(d_A+1)/2`.
    pub fn n_vech(&self) -> usize {
        vech_len(self.d_a)
    }

    /// `d_A + d_B + d_A(d_A+1) + 1`.
    pub fn dim(&self) -> usize {
        self.d_a + self.d_b + 2 * self.n_vech() + 1
    }

    pub fn range(&self, block: ParamBlock) -> Range<usize> {
        let k = self.n_vech();
        let b = self.d_a + self.d_b;
        match block {
            ParamBlock::BetaA => 0..self.d_a,
            ParamBlock::BetaB => self.d_a..b,
            ParamBlock::Sigma => b..b + k,
            ParamBlock::SigmaPrime => b + k..b + 2 * k,
            ParamBlock::Sigma2 => b + 2 * k..b + 2 * k + 1,
        }
    }

    /// Human-readable names, e.g. `beta_A[0]`, `Sigma[1,0]`, `sigma2`.
    /// Indices are zero-based; covariance entries are listed in vech order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        names.extend((0..self.d_a).map(|k| format!("beta_A[{k}]")));
        names.extend((0..self.d_b).map(|k| format!("beta_B[{k}]")));
        for block in ["Sigma", "Sigma_prime"] {
            names.extend(
                vech_pairs(self.d_a)
                    .into_iter()
                    .map(|(r, s)| format!("{block}[{r},{s}]")),
            );
        }
        names.push("sigma2".into());
        names
    }

    /// Which block a full-vector position belongs to.
    pub fn block_of(&self, index: usize) -> ParamBlock {
        ParamBlock::ALL
            .into_iter()
            .find(|b| self.range(*b).contains(&index))
            .expect("index within layout")
    }

    /// Flattens parameters into `(β_A, β_B, vech Σ, vech Σ', σ²)`.
    pub fn pack(&self, params: &ModelParams) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v.rows_mut(0, self.d_a).copy_from(&params.beta_a);
        v.rows_mut(self.d_a, self.d_b).copy_from(&params.beta_b);
        let s = self.range(ParamBlock::Sigma).start;
        let sp = self.range(ParamBlock::SigmaPrime).start;
        for (k, (r, c)) in vech_pairs(self.d_a).into_iter().enumerate() {
            v[s + k] = params.sigma.get(r, c);
            v[sp + k] = params.sigma_prime.get(r, c);
        }
        v[self.dim() - 1] = params.sigma2;
        v
    }

    /// Inverse of [`ParamLayout::pack`]; validates positive definiteness.
    pub fn unpack(&self, v: &DVector<f64>) -> Result<ModelParams> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector".into(),
                expected: self.dim(),
                actual: v.len(),
            });
        }
        let sigma = crate::matops::unvech(&v.rows_range(self.range(ParamBlock::Sigma)).into_owned(), self.d_a)?;
        let sigma_prime =
            crate::matops::unvech(&v.rows_range(self.range(ParamBlock::SigmaPrime)).into_owned(), self.d_a)?;
        ModelParams::new(
            v.rows(0, self.d_a).into_owned(),
            v.rows(self.d_a, self.d_b).into_owned(),
            sigma,
            sigma_prime,
            v[self.dim() - 1],
        )
    }
}

/// Gradient of the log-likelihood, split by parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    #[serde(with = "crate::model_data::dvec_serde")]
    pub grad_beta_a: DVector<f64>,
    #[serde(with = "crate::model_data::dvec_serde")]
    pub grad_beta_b: DVector<f64>,
    #[serde(with = "crate::model_data::dvec_serde")]
    pub grad_vech_sigma: DVector<f64>,
    #[serde(with = "crate::model_data::dvec_serde")]
    pub grad_vech_sigma_prime: DVector<f64>,
    pub grad_sigma2: f64,
}

impl ScoreVector {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.grad_beta_a.len(), self.grad_beta_b.len())
    }

    /// The score as one vector in parameter order.
    pub fn to_vector(&self) -> DVector<f64> {
        let layout = self.layout();
        let mut v = DVector::zeros(layout.dim());
        let parts: [&DVector<f64>; 4] = [
            &self.grad_beta_a,
            &self.grad_beta_b,
            &self.grad_vech_sigma,
            &self.grad_vech_sigma_prime,
        ];
        for (block, part) in ParamBlock::ALL.into_iter().zip(parts) {
            v.rows_range_mut(layout.range(block)).copy_from(part);
        }
        v[layout.dim() - 1] = self.grad_sigma2;
        v
    }
}

/// Expected information in parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherMatrix {
    pub matrix: SymMatrix,
    pub layout: ParamLayout,
}

impl FisherMatrix {
    /// The `(a, b)` sub-block.
    pub fn block(&self, a: ParamBlock, b: ParamBlock) -> DMatrix<f64> {
        let (ra, rb) = (self.layout.range(a), self.layout.range(b));
        self.matrix
            .as_matrix()
            .view((ra.start, rb.start), (ra.len(), rb.len()))
            .into_owned()
    }

    /// Inverse via Cholesky.
    pub fn inverse(&self) -> Result<SymMatrix> {
        self.matrix.inverse_spd("Fisher information")
    }
}

/// `r = y − X_A β_A − X_B β_B`.
pub fn residual(data: &CrossedDataset, params: &ModelParams) -> DVector<f64> {
    data.y() - data.x_mul(&params.beta())
}

fn loglik_from(op: &VOperator<'_>, quad: f64) -> f64 {
    let n = op.data().n_total() as f64;
    -0.5 * n * (2.0 * PI).ln() - 0.5 * op.v_logdet() - 0.5 * quad
}

/// Gaussian log-likelihood `−(n/2) log 2π − ½ log|V| − ½ rᵀV⁻¹r`.
pub fn loglik(data: &CrossedDataset, params: &ModelParams) -> Result<f64> {
    params.check_against(data)?;
    let op = VOperator::new(data, params)?;
    let r = residual(data, params);
    Ok(loglik_from(&op, op.inv_quad(&r)))
}

/// Analytic score vector.
pub fn score(data: &CrossedDataset, params: &ModelParams) -> Result<ScoreVector> {
    Ok(loglik_and_score(data, params)?.1)
}

/// Log-likelihood and score from a single factorisation.
pub fn loglik_and_score(data: &CrossedDataset, params: &ModelParams) -> Result<(f64, ScoreVector)> {
    params.check_against(data)?;
    let op = VOperator::new(data, params)?;
    Ok(loglik_and_score_with(&op))
}

pub(crate) fn loglik_and_score_with(op: &VOperator<'_>) -> (f64, ScoreVector) {
    let data = op.data();
    let params = op.params();
    let r = residual(data, params);
    let solved = op.solve_residual(&r);
    let ll = loglik_from(op, solved.quad);

    let d_a = data.d_a();
    let x_vinv_r = data.x_t_mul(&solved.vinv_r);
    let grad_beta_a = x_vinv_r.rows(0, d_a).into_owned();
    let grad_beta_b = x_vinv_r.rows(d_a, data.d_b()).into_owned();

    let u = &solved.zt_vinv_r;
    let accumulate = |starts: Vec<usize>| {
        let mut acc = DMatrix::<f64>::zeros(d_a, d_a);
        for k in starts {
            let uk = u.rows(k, d_a);
            acc += uk * uk.transpose() - op.z_v_inv_z_block(k, k);
        }
        vech_gradient(&acc)
    };
    let grad_vech_sigma = accumulate((0..data.m()).map(|i| data.left_index(i, 0)).collect());
    let grad_vech_sigma_prime = accumulate((0..data.m_prime()).map(|j| data.right_index(j, 0)).collect());
    let grad_sigma2 = 0.5 * (solved.vinv_r.norm_squared() - op.trace_v_inv());

    (
        ll,
        ScoreVector {
            grad_beta_a,
            grad_beta_b,
            grad_vech_sigma,
            grad_vech_sigma_prime,
            grad_sigma2,
        },
    )
}

/// `½ (1 + [r≠s]) A_rs` in vech order.
fn vech_gradient(acc: &DMatrix<f64>) -> DVector<f64> {
    let pairs = vech_pairs(acc.nrows());
    DVector::from_iterator(
        pairs.len(),
        pairs.into_iter().map(|(r, s)| {
            let mult = if r == s { 0.5 } else { 1.0 };
            mult * 0.5 * (acc[(r, s)] + acc[(s, r)])
        }),
    )
}

/// Index pairs `(x, y)` such that `∂V/∂θ = Z (Σ e_x e_yᵀ) Zᵀ`.
fn derivative_pairs(data: &CrossedDataset, block: ParamBlock, r: usize, s: usize) -> Vec<(usize, usize)> {
    let starts: Vec<usize> = match block {
        ParamBlock::Sigma => (0..data.m()).map(|i| data.left_index(i, 0)).collect(),
        ParamBlock::SigmaPrime => (0..data.m_prime()).map(|j| data.right_index(j, 0)).collect(),
        _ => unreachable!("only covariance blocks have derivative pairs"),
    };
    let mut pairs = Vec::with_capacity(2 * starts.len());
    for k in starts {
        pairs.push((k + r, k + s));
        if r != s {
            pairs.push((k + s, k + r));
        }
    }
    pairs
}

/// Exact expected information at `params`.
pub fn fisher_exact(data: &CrossedDataset, params: &ModelParams) -> Result<FisherMatrix> {
    params.check_against(data)?;
    let op = VOperator::new(data, params)?;
    Ok(fisher_exact_with(&op))
}

pub(crate) fn fisher_exact_with(op: &VOperator<'_>) -> FisherMatrix {
    let data = op.data();
    let layout = ParamLayout::for_data(data);
    let mut f = DMatrix::zeros(layout.dim(), layout.dim());
    let p = data.p();
    f.view_mut((0, 0), (p, p)).copy_from(op.x_v_inv_x().as_matrix());

    let k = op.z_v_inv_z().into_inner();
    let k2 = op.z_v_inv_sq_z().into_inner();
    let mut cov_params: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for block in [ParamBlock::Sigma, ParamBlock::SigmaPrime] {
        let start = layout.range(block).start;
        for (idx, (r, s)) in vech_pairs(data.d_a()).into_iter().enumerate() {
            cov_params.push((start + idx, derivative_pairs(data, block, r, s)));
        }
    }
    let s2_index = layout.dim() - 1;
    for (a, (ia, pairs_a)) in cov_params.iter().enumerate() {
        for (ib, pairs_b) in cov_params.iter().skip(a) {
            // tr(K E_a K E_b) = Σ K[y, v] K[w, x] over (x,y) ∈ a, (v,w) ∈ b
            let mut t = 0.0;
            for &(x, y) in pairs_a {
                for &(v, w) in pairs_b {
                    t += k[(y, v)] * k[(w, x)];
                }
            }
            f[(*ia, *ib)] = 0.5 * t;
            f[(*ib, *ia)] = 0.5 * t;
        }
        let t2: f64 = pairs_a.iter().map(|&(x, y)| k2[(y, x)]).sum();
        f[(*ia, s2_index)] = 0.5 * t2;
        f[(s2_index, *ia)] = 0.5 * t2;
    }
    f[(s2_index, s2_index)] = 0.5 * op.trace_v_inv_sq();
    FisherMatrix {
        matrix: SymMatrix::from_symmetrized(&f),
        layout,
    }
}

/// GLS estimate `(XᵀV⁻¹X)⁻¹ XᵀV⁻¹y` for the covariance parameters held by
/// `op`.
pub fn gls_beta(op: &VOperator<'_>) -> Result<DVector<f64>> {
    let xvx = op.x_v_inv_x();
    let chol = xvx.cholesky("XᵀV⁻¹X").map_err(|_| Error::RankDeficient {
        what: "fixed-effect design [X_A X_B]".into(),
    })?;
    Ok(chol.solve(&op.x_v_inv(&op.data().y())))
}
