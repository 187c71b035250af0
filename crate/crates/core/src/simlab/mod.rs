//! Simulation from the crossed model, the interaction power study, and
//! Monte Carlo checks of the large-sample approximations.
//!
//! Every replicate draws from its own ChaCha stream: the generator is seeded
//! with the base seed and the stream number is the replicate index, so
//! replicates are reproducible one at a time and in any execution order.

mod fisher_check;
mod lemmas;
mod power;

pub use fisher_check::{check_fisher_blocks, FisherBlockRow, FisherCheckConfig, FisherCheckTable};
pub use lemmas::{
    check_lemma5, check_lemma6, lemma5_limits, lemma6_limits, ConvergenceRow, ConvergenceTable, Lemma5Limits,
    Lemma6Limits, LemmaConfig,
};
pub use power::{
    binomial_wald_ci, eq8_config, power_study, power_study_with, Eq8Truth, PowerResult, PowerStudyOptions,
    ReplicateFailure,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::SymMatrix;
use crate::model_data::{CellBlock, CrossedDataset, ModelParams};

/// Random stream for one replicate.
pub fn replicate_rng(base_seed: u64, replicate_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replicate_index);
    rng
}

/// Distribution of one independent base variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum BaseDist {
    Constant { value: f64 },
    Bernoulli { p: f64 },
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
}

impl BaseDist {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BaseDist::Constant { value } => value.is_finite(),
            BaseDist::Bernoulli { p } => (0.0..=1.0).contains(&p),
            BaseDist::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            BaseDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid predictor distribution {self:?}"
            )))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            BaseDist::Constant { value } => value,
            BaseDist::Bernoulli { p } => {
                if Bernoulli::new(p).expect("validated").sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
            BaseDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            BaseDist::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }

    /// `E[X^k]`.
    pub fn raw_moment(&self, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        match *self {
            BaseDist::Constant { value } => value.powi(k as i32),
            BaseDist::Bernoulli { p } => p,
            BaseDist::Uniform { low, high } => {
                let k1 = (k + 1) as i32;
                (high.powi(k1) - low.powi(k1)) / ((k + 1) as f64 * (high - low))
            }
            BaseDist::Normal { mean, sd } => {
                // E[X^k] = μ E[X^{k-1}] + (k-1) σ² E[X^{k-2}]
                let (mut prev, mut cur) = (1.0, mean);
                for j in 2..=k {
                    let next = mean * cur + (j - 1) as f64 * sd * sd * prev;
                    prev = cur;
                    cur = next;
                }
                cur
            }
        }
    }
}

/// Predictor generator: each column is the product of the listed base
/// variables (an empty list is the constant one), drawn independently for
/// every observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorDesign {
    pub bases: Vec<BaseDist>,
    pub a_columns: Vec<Vec<usize>>,
    #[serde(default)]
    pub b_columns: Vec<Vec<usize>>,
}

impl PredictorDesign {
    /// Intercept in `X_A`; `B`, `X` and `B·X` in `X_B`, with
    /// `B ~ Bernoulli(p)` and `X ~ Uniform(0, √(12 var_x))`.
    pub fn interaction(p: f64, var_x: f64) -> Self {
        Self {
            bases: vec![
                BaseDist::Bernoulli { p },
                BaseDist::Uniform {
                    low: 0.0,
                    high: (12.0 * var_x).sqrt(),
                },
            ],
            a_columns: vec![vec![]],
            b_columns: vec![vec![0], vec![1], vec![0, 1]],
        }
    }

    pub fn d_a(&self) -> usize {
        self.a_columns.len()
    }

    pub fn d_b(&self) -> usize {
        self.b_columns.len()
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.bases {
            b.validate()?;
        }
        if self.a_columns.is_empty() {
            return Err(Error::InvalidParameter("design needs at least one A column".into()));
        }
        let n = self.bases.len();
        if self.a_columns.iter().chain(&self.b_columns).flatten().any(|&k| k >= n) {
            return Err(Error::InvalidParameter(
                "design column refers to a missing base variable".into(),
            ));
        }
        Ok(())
    }

    fn columns(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.a_columns.iter().chain(&self.b_columns)
    }

    /// One row `(x_A, x_B)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let base: Vec<f64> = self.bases.iter().map(|b| b.sample(rng)).collect();
        let col = |c: &Vec<usize>| c.iter().map(|&k| base[k]).product::<f64>();
        (
            self.a_columns.iter().map(col).collect(),
            self.b_columns.iter().map(col).collect(),
        )
    }

    /// Population `E(x xᵀ)` for `x = (x_A, x_B)`.
    pub fn population_second_moment(&self) -> SymMatrix {
        let cols: Vec<&Vec<usize>> = self.columns().collect();
        let p = cols.len();
        let mut m = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in 0..p {
                let mut power = vec![0u32; self.bases.len()];
                for &k in cols[a].iter().chain(cols[b]) {
                    power[k] += 1;
                }
                m[(a, b)] = power
                    .iter()
                    .zip(&self.bases)
                    .map(|(&k, dist)| dist.raw_moment(k))
                    .product();
            }
        }
        SymMatrix::from_symmetrized(&m)
    }
}

/// Observations per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellSizes {
    Constant(usize),
    /// `m` rows of `m'` counts.
    PerCell(Vec<Vec<usize>>),
}

impl CellSizes {
    fn resolve(&self, m: usize, m_prime: usize) -> Result<Vec<usize>> {
        match self {
            CellSizes::Constant(n) => {
                if *n == 0 {
                    return Err(Error::InvalidParameter("cell size must be at least 1".into()));
                }
                Ok(vec![*n; m * m_prime])
            }
            CellSizes::PerCell(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m_prime) {
                    return Err(Error::InvalidParameter(
                        "per-cell sizes must form an m x m' table".into(),
                    ));
                }
                let flat: Vec<usize> = rows.iter().flatten().copied().collect();
                if flat.contains(&0) {
                    return Err(Error::InvalidParameter(
                        "every cell needs at least one observation".into(),
                    ));
                }
                Ok(flat)
            }
        }
    }
}

/// Complete description of a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m: usize,
    pub m_prime: usize,
    pub cell_size: CellSizes,
    pub params: ModelParams,
    pub design: PredictorDesign,
    pub replications: usize,
    pub base_seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m_prime == 0 {
            return Err(Error::InvalidParameter("m and m_prime must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        self.design.validate()?;
        self.params.validate()?;
        if self.params.d_a() != self.design.d_a() || self.params.d_b() != self.design.d_b() {
            return Err(Error::InvalidParameter(format!(
                "parameters have (d_A, d_B) = ({}, {}) but the design has ({}, {})",
                self.params.d_a(),
                self.params.d_b(),
                self.design.d_a(),
                self.design.d_b()
            )));
        }
        self.cell_size.resolve(self.m, self.m_prime)?;
        Ok(())
    }
}

/// Realised random effects of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomEffects {
    pub u: Vec<DVector<f64>>,
    pub u_prime: Vec<DVector<f64>>,
}

fn draw_mvn<R: Rng + ?Sized>(l: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(l.nrows(), |_, _| StandardNormal.sample(rng));
    l * z
}

fn draw_effects<R: Rng + ?Sized>(params: &ModelParams, m: usize, m_prime: usize, rng: &mut R) -> Result<RandomEffects> {
    let l = params.sigma.cholesky("Sigma")?.l();
    let lp = params.sigma_prime.cholesky("Sigma_prime")?.l();
    Ok(RandomEffects {
        u: (0..m).map(|_| draw_mvn(&l, rng)).collect(),
        u_prime: (0..m_prime).map(|_| draw_mvn(&lp, rng)).collect(),
    })
}

/// Dataset and random effects for replicate `replicate_index`.
pub fn generate_with_effects(config: &SimConfig, replicate_index: u64) -> Result<(CrossedDataset, RandomEffects)> {
    config.validate()?;
    let mut rng = replicate_rng(config.base_seed, replicate_index);
    let sizes = config.cell_size.resolve(config.m, config.m_prime)?;
    let params = &config.params;
    let effects = draw_effects(params, config.m, config.m_prime, &mut rng)?;
    let sd = params.sigma2.sqrt();
    let (d_a, d_b) = (config.design.d_a(), config.design.d_b());
    let mut cells = Vec::with_capacity(sizes.len());
    for (k, &n) in sizes.iter().enumerate() {
        let (i, j) = (k / config.m_prime, k % config.m_prime);
        let coef = &params.beta_a + &effects.u[i] + &effects.u_prime[j];
        let mut xa = DMatrix::zeros(n, d_a);
        let mut xb = DMatrix::zeros(n, d_b);
        let mut y = DVector::zeros(n);
        for r in 0..n {
            let (a, b) = config.design.draw(&mut rng);
            let eps: f64 = StandardNormal.sample(&mut rng);
            let mean = a.iter().zip(coef.iter()).map(|(x, c)| x * c).sum::<f64>()
                + b.iter().zip(params.beta_b.iter()).map(|(x, c)| x * c).sum::<f64>();
            y[r] = mean + sd * eps;
            for (c, v) in a.into_iter().enumerate() {
                xa[(r, c)] = v;
            }
            for (c, v) in b.into_iter().enumerate() {
                xb[(r, c)] = v;
            }
        }
        cells.push(CellBlock::new(y, xa, xb)?);
    }
    Ok((CrossedDataset::new(config.m, config.m_prime, cells)?, effects))
}

/// Draws replicate `replicate_index`; identical inputs give identical data.
pub fn generate(config: &SimConfig, replicate_index: u64) -> Result<CrossedDataset> {
    Ok(generate_with_effects(config, replicate_index)?.0)
}

/// New responses for a fixed design: fresh random effects and errors under
/// `params`, predictors taken from `template`.
pub fn simulate_response(
    template: &CrossedDataset,
    params: &ModelParams,
    base_seed: u64,
    replicate_index: u64,
) -> Result<CrossedDataset> {
    params.check_against(template)?;
    let mut rng = replicate_rng(base_seed, replicate_index);
    let effects = draw_effects(params, template.m(), template.m_prime(), &mut rng)?;
    let sd = params.sigma2.sqrt();
    let mut y = DVector::zeros(template.n_total());
    for (i, j, start, c) in template.iter_cells() {
        let coef = &params.beta_a + &effects.u[i] + &effects.u_prime[j];
        let mean = c.xa() * coef + c.xb() * &params.beta_b;
        for r in 0..c.n_cell() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            y[start + r] = mean[r] + sd * eps;
        }
    }
    template.with_response(&y)
}

/// Predictors only (zero response) for `m × m'` cells of the given sizes.
pub(crate) fn generate_design<R: Rng + ?Sized>(
    design: &PredictorDesign,
    m: usize,
    m_prime: usize,
    sizes: &[usize],
    rng: &mut R,
) -> Result<CrossedDataset> {
    let (d_a, d_b) = (design.d_a(), design.d_b());
    let cells = sizes
        .iter()
        .map(|&n| {
            let mut xa = DMatrix::zeros(n, d_a);
            let mut xb = DMatrix::zeros(n, d_b);
            for r in 0..n {
                let (a, b) = design.draw(rng);
                xa.row_mut(r).copy_from_slice(&a);
                xb.row_mut(r).copy_from_slice(&b);
            }
            CellBlock::new(DVector::zeros(n), xa, xb)
        })
        .collect::<Result<Vec<_>>>()?;
    CrossedDataset::new(m, m_prime, cells)
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
