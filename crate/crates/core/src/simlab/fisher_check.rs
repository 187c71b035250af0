//! Relative distance between blocks of the exact expected information and
//! their leading large-sample terms along a growing `(m, m', n)` grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{generate_design, median, replicate_rng, BaseDist, PredictorDesign};
use crate::asymptotics::c_beta_b_from_moments;
use crate::error::{Error, Result};
use crate::loglik::{fisher_exact, ParamBlock};
use crate::matops::{checked_inverse, kron_sym_quadform, SymMatrix};
use crate::model_data::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherCheckConfig {
    /// `(m, m', n)` triples, smallest first.
    pub grid: Vec<(usize, usize, usize)>,
    pub params: ModelParams,
    pub design: PredictorDesign,
    pub seeds: Vec<u64>,
}

impl Default for FisherCheckConfig {
    fn default() -> Self {
        Self {
            grid: vec![(6, 6, 4), (12, 12, 8), (24, 24, 16)],
            params: ModelParams::new(
                DVector::from_vec(vec![1.0, 0.5]),
                DVector::from_vec(vec![0.5]),
                SymMatrix::from_row_slice(2, &[1.0, 0.3, 0.3, 0.5]).expect("symmetric"),
                SymMatrix::from_row_slice(2, &[0.8, -0.2, -0.2, 0.4]).expect("symmetric"),
                1.0,
            )
            .expect("valid parameters"),
            design: PredictorDesign {
                bases: vec![BaseDist::Normal { mean: 0.0, sd: 1.0 }, BaseDist::Bernoulli { p: 0.5 }],
                a_columns: vec![vec![], vec![0]],
                b_columns: vec![vec![1]],
            },
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherBlockRow {
    pub block: String,
    /// Median relative Frobenius distance at each grid point.
    pub distances: Vec<f64>,
    pub decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherCheckTable {
    pub grid: Vec<(usize, usize, usize)>,
    pub rows: Vec<FisherBlockRow>,
    /// Largest absolute entry of the fixed-effect by covariance blocks.
    pub max_cross_block: f64,
    pub passed: bool,
}

fn rel_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Checks that each diagonal block of the exact information gets closer
/// (relative Frobenius norm, median over seeds) to its leading term at every
/// grid step, and that the fixed-effect by covariance blocks vanish.
pub fn check_fisher_blocks(config: &FisherCheckConfig) -> Result<FisherCheckTable> {
    config.design.validate()?;
    let params = &config.params;
    params.validate()?;
    if params.d_a() != config.design.d_a() || params.d_b() != config.design.d_b() {
        return Err(Error::InvalidParameter("parameters do not match the design".into()));
    }
    if config.grid.len() < 2 || config.seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "need two or more grid points and a seed".into(),
        ));
    }
    let d_b = params.d_b();
    let c_pop = if d_b > 0 {
        Some(c_beta_b_from_moments(&config.design.population_second_moment(), d_b)?)
    } else {
        None
    };
    let c_pop_inv = c_pop.map(|c| c.inverse_spd("C_beta_B")).transpose()?;
    let sigma_inv = params.sigma.inverse_spd("Sigma")?;
    let sigma_prime_inv = params.sigma_prime.inverse_spd("Sigma_prime")?;
    let s2 = params.sigma2;

    let mut blocks = vec![ParamBlock::BetaA];
    if d_b > 0 {
        blocks.push(ParamBlock::BetaB);
    }
    blocks.extend([ParamBlock::Sigma, ParamBlock::SigmaPrime, ParamBlock::Sigma2]);

    let mut per_block = vec![Vec::new(); blocks.len()];
    let mut max_cross: f64 = 0.0;
    for (g, &(m, m_prime, n)) in config.grid.iter().enumerate() {
        let (mf, mpf, nf) = (m as f64, m_prime as f64, n as f64);
        let leading = |b: ParamBlock| -> Result<DMatrix<f64>> {
            Ok(match b {
                ParamBlock::BetaA => checked_inverse(
                    &(params.sigma.as_matrix() / mf + params.sigma_prime.as_matrix() / mpf),
                    "Sigma/m + Sigma'/m'",
                )?,
                ParamBlock::BetaB => c_pop_inv.as_ref().expect("d_B > 0").as_matrix() * (mf * mpf * nf / s2),
                ParamBlock::Sigma => kron_sym_quadform(&sigma_inv).into_inner() * (mf / 2.0),
                ParamBlock::SigmaPrime => kron_sym_quadform(&sigma_prime_inv).into_inner() * (mpf / 2.0),
                ParamBlock::Sigma2 => DMatrix::from_element(1, 1, mf * mpf * nf / (2.0 * s2 * s2)),
            })
        };
        let mut samples = vec![Vec::with_capacity(config.seeds.len()); blocks.len()];
        for &seed in &config.seeds {
            let mut rng = replicate_rng(seed, g as u64);
            let data = generate_design(&config.design, m, m_prime, &vec![n; m * m_prime], &mut rng)?;
            let fisher = fisher_exact(&data, params)?;
            for (k, &b) in blocks.iter().enumerate() {
                samples[k].push(rel_distance(&fisher.block(b, b), &leading(b)?));
            }
            for fixed in [ParamBlock::BetaA, ParamBlock::BetaB] {
                for cov in [ParamBlock::Sigma, ParamBlock::SigmaPrime, ParamBlock::Sigma2] {
                    let cross = fisher.block(fixed, cov);
                    if !cross.is_empty() {
                        max_cross = max_cross.max(cross.amax());
                    }
                }
            }
        }
        for (k, s) in samples.iter().enumerate() {
            per_block[k].push(median(s));
        }
    }
    let rows: Vec<FisherBlockRow> = blocks
        .iter()
        .zip(per_block)
        .map(|(b, distances)| FisherBlockRow {
            block: b.name().into(),
            decreasing: distances.windows(2).all(|w| w[1] < w[0]),
            distances,
        })
        .collect();
    Ok(FisherCheckTable {
        grid: config.grid.clone(),
        passed: rows.iter().all(|r| r.decreasing) && max_cross == 0.0,
        max_cross_block: max_cross,
        rows,
    })
}
