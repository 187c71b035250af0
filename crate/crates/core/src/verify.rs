//! Self-checks comparing the structured computations with dense reference
//! evaluations, plus the large-sample convergence checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cov_struct::{build_v_dense, VOperator};
use crate::error::{Error, Result};
use crate::matops::{
    corollary21c, duplication_pinv, kron_sym_quadform, lemma3_squared_form, lemma4_block_identity, pinv_kron_quadform,
    woodbury_inverse_apply, DuplicationMatrix, SymMatrix,
};
use crate::mle::{fit_mle, FitOptions};
use crate::model_data::ModelParams;
use crate::simlab::{
    check_fisher_blocks, check_lemma5, check_lemma6, generate, replicate_rng, CellSizes, ConvergenceTable,
    FisherCheckConfig, LemmaConfig, PredictorDesign, SimConfig,
};

pub const SUITES: [&str; 5] = ["identities", "lemma5", "lemma6", "fisher", "eigen"];

/// Relative tolerance of the algebraic identity checks.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;
const IDENTITY_INSTANCES: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: String,
    pub checks: Vec<VerifyCheck>,
    pub passed: bool,
}

impl VerifyReport {
    fn new(suite: &str, checks: Vec<VerifyCheck>) -> Self {
        Self {
            suite: suite.into(),
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> VerifyCheck {
    VerifyCheck {
        name: name.into(),
        passed: value <= threshold,
        value,
        threshold,
    }
}

fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> VerifyCheck {
    VerifyCheck {
        name: name.into(),
        passed: value >= threshold,
        value,
        threshold,
    }
}

/// Runs one named suite.
pub fn run_suite(name: &str, seed: u64) -> Result<VerifyReport> {
    match name {
        "identities" => identities(seed),
        "lemma5" => Ok(from_table(&check_lemma5(&seeded_lemma_config(seed))?)),
        "lemma6" => Ok(from_table(&check_lemma6(&seeded_lemma_config(seed))?)),
        "fisher" => fisher(seed),
        "eigen" => eigen(seed),
        other => Err(Error::UnknownSuite(other.into())),
    }
}

fn seeded_lemma_config(seed: u64) -> LemmaConfig {
    LemmaConfig {
        seeds: (0..5).map(|k| seed.wrapping_add(k)).collect(),
        ..LemmaConfig::default()
    }
}

fn from_table(table: &ConvergenceTable) -> VerifyReport {
    let checks = table
        .rows
        .iter()
        .map(|r| at_least(format!("{} decrease", r.statistic), r.decrease, 2.0))
        .collect();
    VerifyReport::new(&table.check, checks)
}

fn fisher(seed: u64) -> Result<VerifyReport> {
    let config = FisherCheckConfig {
        seeds: (0..5).map(|k| seed.wrapping_add(k)).collect(),
        ..FisherCheckConfig::default()
    };
    let table = check_fisher_blocks(&config)?;
    let mut checks: Vec<VerifyCheck> = table
        .rows
        .iter()
        .map(|r| {
            // value: last over first relative distance; must shrink monotonically
            let ratio = r.distances[r.distances.len() - 1] / r.distances[0];
            VerifyCheck {
                name: format!("{} relative distance ratio", r.block),
                value: ratio,
                threshold: 1.0,
                passed: r.decreasing,
            }
        })
        .collect();
    checks.push(at_most("beta x covariance blocks", table.max_cross_block, 0.0));
    Ok(VerifyReport::new("fisher", checks))
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `BBᵀ/d + shift·I`, well conditioned by construction.
pub(crate) fn random_spd<R: Rng + ?Sized>(d: usize, shift: f64, rng: &mut R) -> SymMatrix {
    let b = normal_matrix(d, d, rng);
    SymMatrix::from_symmetrized(&(&b * b.transpose() / d as f64 + DMatrix::identity(d, d) * shift))
}

fn rel_err(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).norm() / reference.norm()
}

fn identities(seed: u64) -> Result<VerifyReport> {
    let mut worst = [0.0f64; 6];
    for instance in 0..IDENTITY_INSTANCES {
        let mut rng = replicate_rng(seed, instance);
        let d = rng.random_range(1..=4);
        let n = rng.random_range(d + 2..=40);
        let lambda = rng.random_range(0.5..2.0);
        let x = normal_matrix(n, d, &mut rng);
        let a = random_spd(d, 0.5, &mut rng);
        let rhs = normal_matrix(n, 2, &mut rng);

        let dense = &x * a.as_matrix() * x.transpose() + DMatrix::identity(n, n) * lambda;
        let dense_inv = dense
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular { what: "dense V".into() })?
            .inverse();
        let errs = [
            rel_err(&woodbury_inverse_apply(&x, &a, lambda, &rhs)?, &(&dense_inv * &rhs)),
            rel_err(
                corollary21c(&x, &a, lambda)?.as_matrix(),
                &(x.transpose() * &dense_inv * &x),
            ),
            rel_err(
                lemma3_squared_form(&x, &a, lambda)?.as_matrix(),
                &(x.transpose() * &dense_inv * &dense_inv * &x),
            ),
            {
                let b = random_spd(d, 0.1, &mut rng).scale(0.5);
                let want = (a.as_matrix() + b.as_matrix())
                    .try_inverse()
                    .ok_or_else(|| Error::Singular { what: "A + B".into() })?
                    * 2.0;
                rel_err(lemma4_block_identity(&a, &b)?.as_matrix(), &want)
            },
            {
                let dm = DuplicationMatrix::new(d);
                let kron = a.as_matrix().kronecker(a.as_matrix());
                rel_err(
                    kron_sym_quadform(&a).as_matrix(),
                    &(dm.matrix().transpose() * &kron * dm.matrix()),
                )
            },
            {
                let dp = duplication_pinv(d);
                let kron = a.as_matrix().kronecker(a.as_matrix());
                rel_err(pinv_kron_quadform(&a).as_matrix(), &(&dp * kron * dp.transpose()))
            },
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    let names = [
        "Woodbury solve",
        "XᵀV⁻¹X closed form",
        "XᵀV⁻²X closed form",
        "two-block identity",
        "Dᵀ(A⊗A)D",
        "D⁺(A⊗A)D⁺ᵀ",
    ];
    let checks = names
        .iter()
        .zip(worst)
        .map(|(n, w)| at_most(format!("{n} max relative error"), w, IDENTITY_TOLERANCE))
        .collect();
    Ok(VerifyReport::new("identities", checks))
}

/// Balanced intercept-only design: the all-ones vector is an eigenvector of
/// `V`, and the GLS intercept is the grand mean.
fn eigen(seed: u64) -> Result<VerifyReport> {
    let (m, m_prime, n) = (4usize, 3usize, 5usize);
    let (sigma, sigma_prime, sigma2) = (0.7, 0.4, 1.3);
    let params = ModelParams::new(
        DVector::from_vec(vec![2.0]),
        DVector::zeros(0),
        SymMatrix::scalar(sigma),
        SymMatrix::scalar(sigma_prime),
        sigma2,
    )?;
    let config = SimConfig {
        m,
        m_prime,
        cell_size: CellSizes::Constant(n),
        params: params.clone(),
        design: PredictorDesign {
            bases: vec![],
            a_columns: vec![vec![]],
            b_columns: vec![],
        },
        replications: 1,
        base_seed: seed,
    };
    let data = generate(&config, 0)?;
    let n_total = data.n_total();
    let (mf, mpf, nf) = (m as f64, m_prime as f64, n as f64);
    let eigenvalue = nf * (mpf * sigma + mf * sigma_prime) + sigma2;

    let v = build_v_dense(&data, &params)?;
    let ones = DVector::from_element(n_total, 1.0);
    let eig_err = (v.as_matrix() * &ones - &ones * eigenvalue).amax() / eigenvalue;

    let op = VOperator::new(&data, &params)?;
    let gls_var = 1.0 / op.x_v_inv_x().get(0, 0);
    let want_var = sigma / mf + sigma_prime / mpf + sigma2 / (mf * mpf * nf);
    let var_err = (gls_var - want_var).abs() / want_var;

    let fit = fit_mle(&data, &FitOptions::default())?;
    let y_bar = data.y().mean();
    let mean_err = (fit.params_hat.beta_a[0] - y_bar).abs() / y_bar.abs().max(1.0);

    Ok(VerifyReport::new(
        "eigen",
        vec![
            at_most("V·1 = λ·1 relative error", eig_err, IDENTITY_TOLERANCE),
            at_most("1/(1ᵀV⁻¹1) relative error", var_err, IDENTITY_TOLERANCE),
            at_most("GLS intercept minus grand mean", mean_err, 1e-8),
        ],
    ))
}
