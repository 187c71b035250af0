//! Large-sample inference for the crossed model.
//!
//! The asymptotic covariance of the MLE is block diagonal:
//!
//! | block       | asymptotic covariance              |
//! |-------------|------------------------------------|
//! | `β_A`       | `Σ/m + Σ'/m'`                      |
//! | `β_B`       | `σ² C_βB / (m m' n)`               |
//! | `vech Σ`    | `2 D⁺(Σ⊗Σ)D⁺ᵀ / m`                 |
//! | `vech Σ'`   | `2 D⁺(Σ'⊗Σ')D⁺ᵀ / m'`              |
//! | `σ²`        | `2σ⁴ / (m m' n)`                   |
//!
//! where `n = n_••/(m m')` and `C_βB` is the lower-right `d_B×d_B` block of
//! the inverse second-moment matrix of `[X_A X_B]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design_power::{normal_cdf, normal_quantile, normal_sf};
use crate::error::{Error, Result};
use crate::loglik::{fisher_exact, ParamBlock, ParamLayout};
use crate::matops::{kron_sym_quadform, pinv_kron_quadform, SymMatrix};
use crate::mle::FitResult;
use crate::model_data::{CrossedDataset, ModelParams};

/// Plug-in second moments of the predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    /// `(1/n_••) Σ_rows x xᵀ` with `x = (x_A, x_B)`.
    pub second_moment_matrix: SymMatrix,
}

pub fn moment_estimates(data: &CrossedDataset) -> MomentEstimates {
    MomentEstimates {
        second_moment_matrix: SymMatrix::from_symmetrized(&(data.xtx() / data.n_total() as f64)),
    }
}

/// Lower-right `d_B×d_B` block of the inverse of a `(d_A+d_B)` second-moment
/// matrix.
pub fn c_beta_b_from_moments(moments: &SymMatrix, d_b: usize) -> Result<SymMatrix> {
    if d_b == 0 {
        return Err(Error::NotApplicable("C_beta_B needs at least one B-predictor".into()));
    }
    let d = moments.dim();
    let eig = moments.as_matrix().clone().symmetric_eigen();
    let (k_min, &min) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let max = eig.eigenvalues.amax();
    if !(min > 1e-12 * max) {
        return Err(Error::Collinear {
            null_direction: eig.eigenvectors.column(k_min).iter().copied().collect(),
        });
    }
    let inv = moments.inverse_spd("second-moment matrix")?;
    let start = d - d_b;
    Ok(SymMatrix::from_symmetrized(
        &inv.as_matrix().view((start, start), (d_b, d_b)).into_owned(),
    ))
}

/// `C_βB` estimated from the pooled sample second moments.
pub fn estimate_c_beta_b(data: &CrossedDataset) -> Result<SymMatrix> {
    c_beta_b_from_moments(&moment_estimates(data).second_moment_matrix, data.d_b())
}

/// Which form of `Asy.Cov(β̂_A)` to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `Σ/m + Σ'/m'`.
    #[default]
    Comparable,
    /// `m' ≪ m`: the row-level term is negligible and the covariance is
    /// `Σ'/m'`.
    FewColumnLevels,
}

/// The five diagonal blocks of the asymptotic covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Result1Blocks {
    pub beta_a: SymMatrix,
    /// Absent when the model has no B-predictors.
    pub beta_b: Option<SymMatrix>,
    pub vech_sigma: SymMatrix,
    pub vech_sigma_prime: SymMatrix,
    pub sigma2: f64,
}

impl Result1Blocks {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.beta_a.dim(), self.beta_b.as_ref().map_or(0, SymMatrix::dim))
    }
}

/// Asymptotic covariance blocks at `params` for `m` row levels, `m'` column
/// levels and average cell size `n_bar`.
pub fn result1_covariances(
    params: &ModelParams,
    m: f64,
    m_prime: f64,
    n_bar: f64,
    c_beta_b: Option<&SymMatrix>,
    regime: Regime,
) -> Result<Result1Blocks> {
    params.validate()?;
    for (name, v) in [("m", m), ("m_prime", m_prime), ("n", n_bar)] {
        if !(v >= 1.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be at least 1, got {v}")));
        }
    }
    let beta_b = match (params.d_b(), c_beta_b) {
        (0, _) => None,
        (d_b, Some(c)) if c.dim() == d_b => Some(c.scale(params.sigma2 / (m * m_prime * n_bar))),
        (d_b, Some(c)) => {
            return Err(Error::DimensionMismatch {
                what: "C_beta_B".into(),
                expected: d_b,
                actual: c.dim(),
            })
        }
        (_, None) => return Err(Error::InvalidParameter("C_beta_B is required when d_B > 0".into())),
    };
    let beta_a = match regime {
        Regime::Comparable => {
            SymMatrix::from_symmetrized(&(params.sigma.as_matrix() / m + params.sigma_prime.as_matrix() / m_prime))
        }
        Regime::FewColumnLevels => params.sigma_prime.scale(1.0 / m_prime),
    };
    Ok(Result1Blocks {
        beta_a,
        beta_b,
        vech_sigma: pinv_kron_quadform(&params.sigma).scale(2.0 / m),
        vech_sigma_prime: pinv_kron_quadform(&params.sigma_prime).scale(2.0 / m_prime),
        sigma2: 2.0 * params.sigma2 * params.sigma2 / (m * m_prime * n_bar),
    })
}

fn block_diagonal(layout: &ParamLayout, blocks: [(ParamBlock, Option<DMatrix<f64>>); 5]) -> SymMatrix {
    let mut out = DMatrix::zeros(layout.dim(), layout.dim());
    for (block, value) in blocks {
        if let Some(v) = value {
            let r = layout.range(block);
            out.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&v);
        }
    }
    SymMatrix::from_symmetrized(&out)
}

/// The full block-diagonal `I_∞⁻¹` in parameter order.
pub fn assemble_i_infinity_inv(blocks: &Result1Blocks) -> SymMatrix {
    block_diagonal(
        &blocks.layout(),
        [
            (ParamBlock::BetaA, Some(blocks.beta_a.as_matrix().clone())),
            (ParamBlock::BetaB, blocks.beta_b.as_ref().map(|b| b.as_matrix().clone())),
            (ParamBlock::Sigma, Some(blocks.vech_sigma.as_matrix().clone())),
            (
                ParamBlock::SigmaPrime,
                Some(blocks.vech_sigma_prime.as_matrix().clone()),
            ),
            (ParamBlock::Sigma2, Some(DMatrix::from_element(1, 1, blocks.sigma2))),
        ],
    )
}

/// `I_∞`, inverted block by block. The covariance blocks use
/// `{2D⁺(Σ⊗Σ)D⁺ᵀ/m}⁻¹ = (m/2) Dᵀ(Σ⁻¹⊗Σ⁻¹)D`.
pub fn assemble_i_infinity(params: &ModelParams, blocks: &Result1Blocks, m: f64, m_prime: f64) -> Result<SymMatrix> {
    let sigma_inv = params.sigma.inverse_spd("Sigma")?;
    let sigma_prime_inv = params.sigma_prime.inverse_spd("Sigma_prime")?;
    Ok(block_diagonal(
        &blocks.layout(),
        [
            (
                ParamBlock::BetaA,
                Some(blocks.beta_a.inverse_spd("Asy.Cov(beta_A)")?.into_inner()),
            ),
            (
                ParamBlock::BetaB,
                match &blocks.beta_b {
                    Some(b) => Some(b.inverse_spd("Asy.Cov(beta_B)")?.into_inner()),
                    None => None,
                },
            ),
            (
                ParamBlock::Sigma,
                Some(kron_sym_quadform(&sigma_inv).scale(m / 2.0).into_inner()),
            ),
            (
                ParamBlock::SigmaPrime,
                Some(kron_sym_quadform(&sigma_prime_inv).scale(m_prime / 2.0).into_inner()),
            ),
            (
                ParamBlock::Sigma2,
                Some(DMatrix::from_element(1, 1, 1.0 / blocks.sigma2)),
            ),
        ],
    ))
}

/// Source of the standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeMethod {
    /// Block-diagonal asymptotic covariance with plug-in estimates.
    #[default]
    Result1,
    /// Inverse of the exact expected information at the estimate.
    FisherExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub alpha: f64,
    pub se_method: SeMethod,
    pub regime: Regime,
    /// Null values for the Wald tests; zero for every parameter if absent.
    pub theta0: Option<Vec<f64>>,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            se_method: SeMethod::Result1,
            regime: Regime::Comparable,
            theta0: None,
        }
    }
}

/// Per-parameter Wald statistics and intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldColumns {
    pub z: Vec<f64>,
    /// Two-sided p-values.
    pub p: Vec<f64>,
    /// One-sided p-values for the alternative `θ > θ₀`.
    pub p_upper: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

/// `z = (θ̂ − θ₀)/SE`, two- and one-sided p-values and `θ̂ ± z_{1−α/2} SE`.
pub fn wald_and_ci(names: &[String], estimates: &[f64], se: &[f64], theta0: &[f64], alpha: f64) -> Result<WaldColumns> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let k = estimates.len();
    if se.len() != k || theta0.len() != k || names.len() != k {
        return Err(Error::DimensionMismatch {
            what: "Wald inputs".into(),
            expected: k,
            actual: se.len().min(theta0.len()).min(names.len()),
        });
    }
    let crit = normal_quantile(1.0 - alpha / 2.0)?;
    let mut cols = WaldColumns {
        z: Vec::with_capacity(k),
        p: Vec::with_capacity(k),
        p_upper: Vec::with_capacity(k),
        ci_low: Vec::with_capacity(k),
        ci_high: Vec::with_capacity(k),
    };
    for j in 0..k {
        if !(se[j] > 0.0) || !se[j].is_finite() {
            return Err(Error::DegenerateInference {
                parameter: names[j].clone(),
            });
        }
        let z = (estimates[j] - theta0[j]) / se[j];
        cols.z.push(z);
        cols.p.push((2.0 * normal_sf(z.abs())).min(1.0));
        cols.p_upper.push(normal_sf(z));
        cols.ci_low.push(estimates[j] - crit * se[j]);
        cols.ci_high.push(estimates[j] + crit * se[j]);
    }
    Ok(cols)
}

/// Full inference report for a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub theta0: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub p_upper: Vec<f64>,
    pub alpha: f64,
    pub se_method: SeMethod,
    pub regime: Regime,
    pub asy_cov_beta_a: SymMatrix,
    pub asy_cov_beta_b: Option<SymMatrix>,
    pub asy_cov_vech_sigma: SymMatrix,
    pub asy_cov_vech_sigma_prime: SymMatrix,
    pub asy_var_sigma2: f64,
    pub c_beta_b_hat: Option<SymMatrix>,
    /// Covariance matrix behind `se`, in parameter order.
    pub covariance: SymMatrix,
}

impl AsymptoticReport {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Standard errors, Wald tests and confidence intervals at the fitted
/// parameters.
pub fn infer(data: &CrossedDataset, fit: &FitResult, opts: &InferenceOptions) -> Result<AsymptoticReport> {
    let params = &fit.params_hat;
    params.check_against(data)?;
    let layout = ParamLayout::for_data(data);
    let c_beta_b_hat = if data.d_b() > 0 {
        Some(estimate_c_beta_b(data)?)
    } else {
        None
    };
    let (m, m_prime) = (data.m() as f64, data.m_prime() as f64);
    let blocks = result1_covariances(params, m, m_prime, data.n_bar(), c_beta_b_hat.as_ref(), opts.regime)?;
    let covariance = match opts.se_method {
        SeMethod::Result1 => assemble_i_infinity_inv(&blocks),
        SeMethod::FisherExact => fisher_exact(data, params)?.inverse()?,
    };
    let diag_block = |b: ParamBlock| {
        let r = layout.range(b);
        SymMatrix::from_symmetrized(
            &covariance
                .as_matrix()
                .view((r.start, r.start), (r.len(), r.len()))
                .into_owned(),
        )
    };
    let names = layout.names();
    let estimates: Vec<f64> = layout.pack(params).iter().copied().collect();
    let theta0 = match &opts.theta0 {
        Some(t) if t.len() == estimates.len() => t.clone(),
        Some(t) => {
            return Err(Error::DimensionMismatch {
                what: "theta0".into(),
                expected: estimates.len(),
                actual: t.len(),
            })
        }
        None => vec![0.0; estimates.len()],
    };
    let se: Vec<f64> = covariance
        .as_matrix()
        .diagonal()
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    let wald = wald_and_ci(&names, &estimates, &se, &theta0, opts.alpha)?;
    let s2 = layout.range(ParamBlock::Sigma2).start;
    Ok(AsymptoticReport {
        asy_cov_beta_a: diag_block(ParamBlock::BetaA),
        asy_cov_beta_b: (data.d_b() > 0).then(|| diag_block(ParamBlock::BetaB)),
        asy_cov_vech_sigma: diag_block(ParamBlock::Sigma),
        asy_cov_vech_sigma_prime: diag_block(ParamBlock::SigmaPrime),
        asy_var_sigma2: covariance.get(s2, s2),
        names,
        estimates,
        theta0,
        se,
        ci_low: wald.ci_low,
        ci_high: wald.ci_high,
        z: wald.z,
        p: wald.p,
        p_upper: wald.p_upper,
        alpha: opts.alpha,
        se_method: opts.se_method,
        regime: opts.regime,
        c_beta_b_hat,
        covariance,
    })
}

/// Point estimate with a confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Interval estimates for the standard deviations and correlation of a
/// `2×2` random-effect covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    /// `SE(log σ̂_j) = 1/√(2m)`.
    pub se_log_sd: f64,
    /// `SE(atanh ρ̂) = 1/√m`.
    pub se_atanh_rho: f64,
    pub sd: [IntervalEstimate; 2],
    pub rho: IntervalEstimate,
}

/// Log-scale intervals for `σ₁`, `σ₂` and Fisher-z intervals for `ρ`,
/// back-transformed. Defined for `d_A = 2` only.
pub fn delta_transforms(sigma_hat: &SymMatrix, m: usize, alpha: f64) -> Result<DeltaReport> {
    if sigma_hat.dim() != 2 {
        return Err(Error::NotApplicable(format!(
            "standard deviation / correlation intervals are defined for 2x2 matrices, got {}x{}; use the vech-scale intervals",
            sigma_hat.dim(),
            sigma_hat.dim()
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    sigma_hat.cholesky("Sigma_hat")?;
    let crit = normal_quantile(1.0 - alpha / 2.0)?;
    let m = m as f64;
    let se_log_sd = 1.0 / (2.0 * m).sqrt();
    let se_atanh_rho = 1.0 / m.sqrt();
    let sd_interval = |var: f64| {
        let sd = var.sqrt();
        IntervalEstimate {
            estimate: sd,
            ci_low: (sd.ln() - crit * se_log_sd).exp(),
            ci_high: (sd.ln() + crit * se_log_sd).exp(),
        }
    };
    let sd = [sd_interval(sigma_hat.get(0, 0)), sd_interval(sigma_hat.get(1, 1))];
    let rho = sigma_hat.get(1, 0) / (sd[0].estimate * sd[1].estimate);
    let fz = rho.atanh();
    Ok(DeltaReport {
        se_log_sd,
        se_atanh_rho,
        sd,
        rho: IntervalEstimate {
            estimate: rho,
            ci_low: (fz - crit * se_atanh_rho).tanh(),
            ci_high: (fz + crit * se_atanh_rho).tanh(),
        },
    })
}

/// Two-sided p-value from a z-statistic.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).min(1.0)
}

/// One-sided lower-tail p-value `Φ(z)`.
pub fn lower_p(z: f64) -> f64 {
    normal_cdf(z)
}

/// Vector of standard errors from the diagonal of a covariance matrix.
pub fn standard_errors(cov: &SymMatrix) -> DVector<f64> {
    cov.as_matrix().diagonal().map(|v| v.max(0.0).sqrt())
}
