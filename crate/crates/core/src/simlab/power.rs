use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, CellSizes, PredictorDesign, SimConfig};
use crate::asymptotics::{infer, InferenceOptions, SeMethod};
use crate::design_power::{normal_quantile, DesignSpec};
use crate::error::{Error, Result};
use crate::matops::SymMatrix;
use crate::mle::{fit_mle, FitOptions};
use crate::model_data::ModelParams;

/// Parameters of the interaction model that the sample-size formula leaves
/// free: intercept, main effects and the random-intercept variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eq8Truth {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub sigma_u: f64,
    pub sigma_u_prime: f64,
}

impl Default for Eq8Truth {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            beta1: 0.5,
            beta2: 0.5,
            sigma_u: 0.25,
            sigma_u_prime: 0.1,
        }
    }
}

/// Simulation config for the interaction model of `spec` with `m` row
/// levels. The interaction slope is set to `slope` (use `spec.delta` for
/// power, `0` for size).
pub fn eq8_config(
    spec: &DesignSpec,
    m: usize,
    slope: f64,
    truth: &Eq8Truth,
    replications: usize,
    base_seed: u64,
) -> Result<SimConfig> {
    spec.validate()?;
    let params = ModelParams::new(
        DVector::from_vec(vec![truth.beta0]),
        DVector::from_vec(vec![truth.beta1, truth.beta2, slope]),
        SymMatrix::scalar(truth.sigma_u),
        SymMatrix::scalar(truth.sigma_u_prime),
        spec.sigma0 * spec.sigma0,
    )?;
    let config = SimConfig {
        m,
        m_prime: spec.m_prime as usize,
        cell_size: CellSizes::Constant(spec.n as usize),
        params,
        design: PredictorDesign::interaction(spec.p_bernoulli, spec.var_x),
        replications,
        base_seed,
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStudyOptions {
    /// Parameter tested, by layout name.
    pub target: String,
    pub se_method: SeMethod,
    pub fit: FitOptions,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
    /// Largest tolerated fraction of failed replicates.
    pub max_failure_rate: f64,
    /// Level of the interval around the empirical power.
    pub ci_level: f64,
}

impl Default for PowerStudyOptions {
    fn default() -> Self {
        Self {
            target: "beta_B[2]".into(),
            se_method: SeMethod::FisherExact,
            fit: FitOptions::default(),
            threads: None,
            max_failure_rate: 0.05,
            ci_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub rejections: usize,
    pub replications: usize,
    pub failures: usize,
    /// Rejections over successful replicates.
    pub empirical_power: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub base_seed: u64,
    pub alpha: f64,
    /// Upper-tail critical value `Φ⁻¹(1 − α)`.
    pub critical_value: f64,
    pub failure_log: Vec<ReplicateFailure>,
}

/// Wald interval `p̂ ± z √(p̂(1−p̂)/n)` clipped to `[0, 1]`.
pub fn binomial_wald_ci(successes: usize, trials: usize, level: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::InvalidParameter(
            "binomial interval needs at least one trial".into(),
        ));
    }
    let p = successes as f64 / trials as f64;
    let z = normal_quantile(0.5 + 0.5 * level)?;
    let half = z * (p * (1.0 - p) / trials as f64).sqrt();
    Ok(((p - half).max(0.0), (p + half).min(1.0)))
}

/// One-sided upper Wald test statistic of one replicate.
fn replicate_statistic(config: &SimConfig, index: u64, opts: &PowerStudyOptions) -> std::result::Result<f64, String> {
    let data = generate(config, index).map_err(|e| e.to_string())?;
    let mut fit_opts = opts.fit.clone();
    fit_opts.seed = config.base_seed.wrapping_add(index);
    let fit = fit_mle(&data, &fit_opts).map_err(|e| e.to_string())?;
    if !fit.converged {
        return Err(format!("no convergence (gradient {:e})", fit.gradient_norm));
    }
    let inference = InferenceOptions {
        se_method: opts.se_method,
        ..InferenceOptions::default()
    };
    let report = infer(&data, &fit, &inference).map_err(|e| e.to_string())?;
    let k = report
        .index_of(&opts.target)
        .ok_or_else(|| format!("unknown target parameter {}", opts.target))?;
    let z = report.z[k];
    if z.is_finite() {
        Ok(z)
    } else {
        Err(format!("degenerate standard error for {}", opts.target))
    }
}

/// Empirical rejection rate of the one-sided level-`alpha` test of
/// `beta_B[2] = 0` under `config`, with default options.
pub fn power_study(config: &SimConfig, alpha: f64) -> Result<PowerResult> {
    power_study_with(config, alpha, &PowerStudyOptions::default())
}

pub fn power_study_with(config: &SimConfig, alpha: f64, opts: &PowerStudyOptions) -> Result<PowerResult> {
    config.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let critical_value = normal_quantile(1.0 - alpha)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    // collect keeps replicate order, so the summary does not depend on scheduling
    let outcomes: Vec<std::result::Result<f64, String>> = pool.install(|| {
        (0..config.replications as u64)
            .into_par_iter()
            .map(|idx| replicate_statistic(config, idx, opts))
            .collect()
    });

    let mut rejections = 0;
    let mut failure_log = Vec::new();
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(z) if z > critical_value => rejections += 1,
            Ok(_) => {}
            Err(reason) => failure_log.push(ReplicateFailure {
                index: idx as u64,
                reason,
            }),
        }
    }
    let total = config.replications;
    let failures = failure_log.len();
    if failures as f64 > opts.max_failure_rate * total as f64 || failures == total {
        return Err(Error::StudyFailed { failures, total });
    }
    let effective = total - failures;
    let (ci_low, ci_high) = binomial_wald_ci(rejections, effective, opts.ci_level)?;
    Ok(PowerResult {
        rejections,
        replications: total,
        failures,
        empirical_power: rejections as f64 / effective as f64,
        ci_low,
        ci_high,
        base_seed: config.base_seed,
        alpha,
        critical_value,
        failure_log,
    })
}
