//! Monte Carlo checks that the quadratic forms in `Q⁻¹`, with
//! `Q = V(M, M', λ)`, approach their large-`n` limits while `m` and `m'`
//! stay fixed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{generate_design, median, replicate_rng, BaseDist, PredictorDesign};
use crate::cov_struct::VOperator;
use crate::error::{Error, Result};
use crate::matops::{checked_inverse, SymMatrix};
use crate::model_data::ModelParams;

/// A decrease by this factor from the first to the last grid point counts
/// as convergence.
const REQUIRED_DECREASE: f64 = 2.0;

/// Design, covariance inputs and grid of a convergence check. `X` comes
/// from `design.a_columns` and `X̌` from `design.b_columns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaConfig {
    pub m: usize,
    pub m_prime: usize,
    pub design: PredictorDesign,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub big_m: SymMatrix,
    pub big_m_prime: SymMatrix,
    pub lambda: f64,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            m: 5,
            m_prime: 4,
            design: PredictorDesign {
                bases: vec![
                    BaseDist::Normal { mean: 0.0, sd: 1.0 },
                    BaseDist::Bernoulli { p: 0.5 },
                    BaseDist::Uniform { low: 0.0, high: 1.0 },
                ],
                a_columns: vec![vec![], vec![0]],
                b_columns: vec![vec![1], vec![2]],
            },
            n_grid: vec![5, 20, 80, 320],
            seeds: vec![1, 2, 3, 4, 5],
            big_m: SymMatrix::from_row_slice(2, &[1.0, 0.3, 0.3, 0.5]).expect("symmetric"),
            big_m_prime: SymMatrix::from_row_slice(2, &[0.8, -0.2, -0.2, 0.4]).expect("symmetric"),
            lambda: 1.0,
        }
    }
}

impl LemmaConfig {
    fn validate(&self, needs_b: bool) -> Result<()> {
        self.design.validate()?;
        let d = self.design.d_a();
        if self.big_m.dim() != d || self.big_m_prime.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "M and M' against the X columns".into(),
                expected: d,
                actual: self.big_m.dim(),
            });
        }
        if needs_b && self.design.d_b() == 0 {
            return Err(Error::InvalidParameter("this check needs at least one X̌ column".into()));
        }
        if self.n_grid.len() < 2 || self.n_grid.contains(&0) || self.seeds.is_empty() {
            return Err(Error::InvalidParameter(
                "need two or more positive grid points and a seed".into(),
            ));
        }
        if self.m == 0 || self.m_prime == 0 {
            return Err(Error::InvalidParameter("m and m_prime must be at least 1".into()));
        }
        Ok(())
    }

    fn params(&self) -> Result<ModelParams> {
        ModelParams::new(
            DVector::zeros(self.design.d_a()),
            DVector::zeros(self.design.d_b()),
            self.big_m.clone(),
            self.big_m_prime.clone(),
            self.lambda,
        )
    }
}

/// Median distance to the limit for one statistic along the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub statistic: String,
    pub distances: Vec<f64>,
    /// First distance over last distance.
    pub decrease: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub check: String,
    pub n_grid: Vec<usize>,
    pub rows: Vec<ConvergenceRow>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma5Limits {
    /// Limit of `XᵀQ⁻¹X`.
    pub xtqx: DMatrix<f64>,
    /// Limit of a diagonal block `X_iᵀQ⁻¹X_i`.
    pub diag_block: DMatrix<f64>,
    /// Limit of an off-diagonal block `X_iᵀQ⁻¹X_ĩ`, `i ≠ ĩ`.
    pub off_block: DMatrix<f64>,
    /// Limit of `tr(Q⁻²)/n••`.
    pub trace_ratio: f64,
}

pub fn lemma5_limits(
    m: usize,
    m_prime: usize,
    big_m: &SymMatrix,
    big_m_prime: &SymMatrix,
    lambda: f64,
) -> Result<Lemma5Limits> {
    let (mf, mpf) = (m as f64, m_prime as f64);
    let h = checked_inverse(&(big_m.as_matrix() / mf + big_m_prime.as_matrix() / mpf), "M/m + M'/m'")?;
    let m_inv = big_m.inverse_spd("M")?.into_inner();
    let off = -(&m_inv * big_m_prime.as_matrix() * &h) / (mf * mpf);
    Ok(Lemma5Limits {
        xtqx: h,
        diag_block: &m_inv + &off,
        off_block: off,
        trace_ratio: 1.0 / (lambda * lambda),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma6Limits {
    /// Limit of `X̌ᵀQ⁻¹X̌ / n••`.
    pub scaled_check_form: DMatrix<f64>,
    /// Limit of `XᵀQ⁻¹X̌`.
    pub cross_form: DMatrix<f64>,
}

/// Limits for the design's population moments `E(x xᵀ)` of `x = (x, x̌)`.
pub fn lemma6_limits(
    m: usize,
    m_prime: usize,
    big_m: &SymMatrix,
    big_m_prime: &SymMatrix,
    lambda: f64,
    second_moment: &SymMatrix,
    d: usize,
) -> Result<Lemma6Limits> {
    let e = second_moment.as_matrix();
    let p = e.nrows();
    let dc = p - d;
    let e_inv = checked_inverse(e, "E(x xᵀ)")?;
    let lower = e_inv.view((d, d), (dc, dc)).into_owned();
    let scaled_check_form = checked_inverse(&lower, "lower block of E(x xᵀ)⁻¹")? / lambda;
    let h = checked_inverse(
        &(big_m.as_matrix() / m as f64 + big_m_prime.as_matrix() / m_prime as f64),
        "M/m + M'/m'",
    )?;
    let e_xx_inv = checked_inverse(&e.view((0, 0), (d, d)).into_owned(), "E(X Xᵀ)")?;
    let cross_form = h * e_xx_inv * e.view((0, d), (d, dc));
    Ok(Lemma6Limits {
        scaled_check_form,
        cross_form,
    })
}

/// Runs `stats` on every (grid point, seed) pair and tabulates the median
/// distance of each statistic.
fn tabulate(
    check: &str,
    config: &LemmaConfig,
    names: &[&str],
    stats: impl Fn(&VOperator<'_>) -> Result<Vec<f64>>,
) -> Result<ConvergenceTable> {
    let params = config.params()?;
    let mut per_stat = vec![Vec::with_capacity(config.n_grid.len()); names.len()];
    for (g, &n) in config.n_grid.iter().enumerate() {
        let sizes = vec![n; config.m * config.m_prime];
        let mut samples = vec![Vec::with_capacity(config.seeds.len()); names.len()];
        for &seed in &config.seeds {
            let mut rng = replicate_rng(seed, g as u64);
            let data = generate_design(&config.design, config.m, config.m_prime, &sizes, &mut rng)?;
            let op = VOperator::new(&data, &params)?;
            for (k, v) in stats(&op)?.into_iter().enumerate() {
                samples[k].push(v);
            }
        }
        for (k, s) in samples.iter().enumerate() {
            per_stat[k].push(median(s));
        }
    }
    let rows: Vec<ConvergenceRow> = names
        .iter()
        .zip(per_stat)
        .map(|(name, distances)| {
            let decrease = distances[0] / distances[distances.len() - 1];
            ConvergenceRow {
                statistic: name.to_string(),
                passed: decrease >= REQUIRED_DECREASE,
                decrease,
                distances,
            }
        })
        .collect();
    Ok(ConvergenceTable {
        check: check.into(),
        n_grid: config.n_grid.clone(),
        passed: rows.iter().all(|r| r.passed),
        rows,
    })
}

/// Distances of `XᵀQ⁻¹X`, the diagonal and off-diagonal blocks of the left
/// part of `ZᵀQ⁻¹Z`, and `tr(Q⁻²)/n••` from their limits.
pub fn check_lemma5(config: &LemmaConfig) -> Result<ConvergenceTable> {
    config.validate(false)?;
    let lim = lemma5_limits(
        config.m,
        config.m_prime,
        &config.big_m,
        &config.big_m_prime,
        config.lambda,
    )?;
    let d = config.design.d_a();
    let with_off = config.m >= 2;
    let mut names = vec!["XtQinvX", "diagonal block", "tr(Qinv^2)/n"];
    if with_off {
        names.insert(2, "off-diagonal block");
    }
    tabulate("lemma5", config, &names, |op| {
        let xtqx = op.x_v_inv_x();
        let xtqx = xtqx.as_matrix().view((0, 0), (d, d));
        let diag = op.z_v_inv_z_block(0, 0);
        let mut out = vec![(xtqx - &lim.xtqx).norm(), (diag - &lim.diag_block).norm()];
        if with_off {
            let off = op.z_v_inv_z_block(0, d);
            out.push((off - &lim.off_block).norm());
        }
        let n_total = op.data().n_total() as f64;
        out.push((op.trace_v_inv_sq() / n_total - lim.trace_ratio).abs());
        Ok(out)
    })
}

/// Distances of `X̌ᵀQ⁻¹X̌/n••` and `XᵀQ⁻¹X̌` from their limits.
pub fn check_lemma6(config: &LemmaConfig) -> Result<ConvergenceTable> {
    config.validate(true)?;
    let d = config.design.d_a();
    let dc = config.design.d_b();
    let lim = lemma6_limits(
        config.m,
        config.m_prime,
        &config.big_m,
        &config.big_m_prime,
        config.lambda,
        &config.design.population_second_moment(),
        d,
    )?;
    tabulate("lemma6", config, &["XcheckQinvXcheck/n", "XtQinvXcheck"], |op| {
        let full = op.x_v_inv_x();
        let full = full.as_matrix();
        let n_total = op.data().n_total() as f64;
        let check = full.view((d, d), (dc, dc)) / n_total;
        let cross = full.view((0, d), (d, dc));
        Ok(vec![
            (check - &lim.scaled_check_form).norm(),
            (cross - &lim.cross_form).norm(),
        ])
    })
}
