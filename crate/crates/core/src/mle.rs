//! Maximum likelihood fitting.
//!
//! Covariance parameters are optimised on an unconstrained scale: each of
//! `Σ`, `Σ'` through its lower Cholesky factor with log-transformed diagonal
//! (entries in vech order), and `σ²` through its logarithm. The fixed effects
//! are profiled out by generalised least squares at every iterate, so the
//! quasi-Newton iteration only sees `d_A(d_A+1) + 1` coordinates.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cov_struct::{VOperator, CONDITION_WARNING};
use crate::error::{Error, Result};
use crate::loglik::{fisher_exact_with, gls_beta, loglik_and_score_with, ParamLayout, ScoreVector};
use crate::matops::{vech_len, vech_pairs, SymMatrix};
use crate::model_data::{CrossedDataset, ModelParams};

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;
/// Largest move of any unconstrained coordinate in one step.
const MAX_STEP: f64 = 3.0;

/// How the optimiser is started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// OLS fixed effects, residual variance, and moment estimates of `Σ`,
    /// `Σ'` from per-level OLS slopes.
    #[default]
    Moments,
    /// Start from the covariance parameters of the given value.
    Given(ModelParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the unconstrained gradient.
    pub gradient_tolerance: f64,
    pub init: InitPolicy,
    /// Jittered restarts attempted when a run fails to converge.
    pub restarts: usize,
    /// Seed for the restart jitter.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            init: InitPolicy::Moments,
            restarts: 2,
            seed: 0,
        }
    }
}

/// Conditions worth reporting that do not prevent a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWarning {
    /// A Cholesky diagonal of `Σ̂` or `Σ̂'` fell below `1e-6 σ̂`.
    Boundary {
        parameter: String,
        min_cholesky_diagonal: f64,
    },
    /// `σ̂²` is negligible relative to the response variance.
    VarianceCollapse {
        sigma2: f64,
    },
    /// Capacitance condition estimate above the warning threshold.
    IllConditioned {
        condition: f64,
    },
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },
    Restarted {
        attempts: usize,
    },
}

impl std::fmt::Display for FitWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitWarning::Boundary {
                parameter,
                min_cholesky_diagonal,
            } => write!(
                f,
                "{parameter} is near the boundary (min Cholesky diagonal {min_cholesky_diagonal:e})"
            ),
            FitWarning::VarianceCollapse { sigma2 } => write!(f, "sigma2 collapsed to {sigma2:e}"),
            FitWarning::IllConditioned { condition } => {
                write!(f, "capacitance condition estimate {condition:e}")
            }
            FitWarning::NotConverged {
                iterations,
                gradient_norm,
            } => write!(
                f,
                "no convergence after {iterations} iterations (gradient {gradient_norm:e})"
            ),
            FitWarning::Restarted { attempts } => write!(f, "{attempts} jittered restarts used"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params_hat: ModelParams,
    pub loglik_at_optimum: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the unconstrained gradient at `params_hat`.
    pub gradient_norm: f64,
    pub warnings: Vec<FitWarning>,
    /// Log-likelihood after each accepted step, starting at the initial point.
    pub trace: Vec<f64>,
}

/// `(β, η_Σ, η_Σ', log σ²)` where `η` holds the log-Cholesky entries in
/// vech order.
pub fn unconstrained_map(params: &ModelParams) -> Result<DVector<f64>> {
    params.validate()?;
    let layout = ParamLayout::new(params.d_a(), params.d_b());
    let mut v = DVector::zeros(layout.dim());
    let p = params.d_a() + params.d_b();
    v.rows_mut(0, p).copy_from(&params.beta());
    let k = vech_len(params.d_a());
    v.rows_mut(p, k).copy_from(&log_cholesky(&params.sigma)?);
    v.rows_mut(p + k, k).copy_from(&log_cholesky(&params.sigma_prime)?);
    v[layout.dim() - 1] = params.sigma2.ln();
    Ok(v)
}

/// Inverse of [`unconstrained_map`]; any finite vector maps to valid
/// parameters.
pub fn inverse_map(layout: &ParamLayout, v: &DVector<f64>) -> Result<ModelParams> {
    if v.len() != layout.dim() {
        return Err(Error::DimensionMismatch {
            what: "unconstrained vector".into(),
            expected: layout.dim(),
            actual: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "unconstrained vector has non-finite entries".into(),
        ));
    }
    let p = layout.d_a + layout.d_b;
    let k = layout.n_vech();
    let sigma = from_log_cholesky(&v.rows(p, k).into_owned(), layout.d_a);
    let sigma_prime = from_log_cholesky(&v.rows(p + k, k).into_owned(), layout.d_a);
    ModelParams::new(
        v.rows(0, layout.d_a).into_owned(),
        v.rows(layout.d_a, layout.d_b).into_owned(),
        sigma,
        sigma_prime,
        v[layout.dim() - 1].exp(),
    )
}

fn log_cholesky(s: &SymMatrix) -> Result<DVector<f64>> {
    let l = s.cholesky("covariance")?.l();
    let pairs = vech_pairs(s.dim());
    Ok(DVector::from_iterator(
        pairs.len(),
        pairs
            .into_iter()
            .map(|(r, c)| if r == c { l[(r, r)].ln() } else { l[(r, c)] }),
    ))
}

fn cholesky_factor(eta: &DVector<f64>, d: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    for (k, (r, c)) in vech_pairs(d).into_iter().enumerate() {
        l[(r, c)] = if r == c { eta[k].exp() } else { eta[k] };
    }
    l
}

fn from_log_cholesky(eta: &DVector<f64>, d: usize) -> SymMatrix {
    let l = cholesky_factor(eta, d);
    SymMatrix::from_symmetrized(&(&l * l.transpose()))
}

/// `∂ vech(Σ) / ∂η` for the log-Cholesky coordinates `η`.
fn log_cholesky_jacobian(eta: &DVector<f64>, d: usize) -> DMatrix<f64> {
    let l = cholesky_factor(eta, d);
    let pairs = vech_pairs(d);
    let mut jac = DMatrix::zeros(pairs.len(), pairs.len());
    for (col, &(i, j)) in pairs.iter().enumerate() {
        let scale = if i == j { l[(i, i)] } else { 1.0 };
        // ∂Σ/∂L_ij = E_ij Lᵀ + L E_ji
        let mut e = DMatrix::zeros(d, d);
        e[(i, j)] = scale;
        let ds = &e * l.transpose() + &l * e.transpose();
        for (row, &(r, s)) in pairs.iter().enumerate() {
            jac[(row, col)] = ds[(r, s)];
        }
    }
    jac
}

/// Jacobian of the natural parameters `(β, vech Σ, vech Σ', σ²)` with
/// respect to the unconstrained coordinates.
pub fn unconstrained_jacobian(layout: &ParamLayout, v: &DVector<f64>) -> DMatrix<f64> {
    let p = layout.d_a + layout.d_b;
    let k = layout.n_vech();
    let mut jac = DMatrix::zeros(layout.dim(), layout.dim());
    jac.view_mut((0, 0), (p, p)).fill_with_identity();
    for start in [p, p + k] {
        let eta = v.rows(start, k).into_owned();
        jac.view_mut((start, start), (k, k))
            .copy_from(&log_cholesky_jacobian(&eta, layout.d_a));
    }
    let last = layout.dim() - 1;
    jac[(last, last)] = v[last].exp();
    jac
}

/// Chain rule: gradient of the log-likelihood in unconstrained coordinates.
pub fn unconstrained_gradient(params: &ModelParams, score: &ScoreVector) -> Result<DVector<f64>> {
    let layout = score.layout();
    let v = unconstrained_map(params)?;
    Ok(unconstrained_jacobian(&layout, &v).transpose() * score.to_vector())
}

/// Covariance-only part of the unconstrained vector.
struct CovCoords {
    layout: ParamLayout,
}

impl CovCoords {
    fn offset(&self) -> usize {
        self.layout.d_a + self.layout.d_b
    }

    fn len(&self) -> usize {
        self.layout.dim() - self.offset()
    }

    fn full(&self, beta: &DVector<f64>, cov: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.layout.dim());
        v.rows_mut(0, self.offset()).copy_from(beta);
        v.rows_mut(self.offset(), self.len()).copy_from(cov);
        v
    }
}

/// Profiled objective at one point.
struct Eval {
    params: ModelParams,
    loglik: f64,
    /// Full unconstrained gradient (β part included).
    grad: DVector<f64>,
}

fn evaluate(data: &CrossedDataset, coords: &CovCoords, cov: &DVector<f64>) -> Result<Eval> {
    let beta0 = DVector::zeros(coords.offset());
    let v = coords.full(&beta0, cov);
    let params = inverse_map(&coords.layout, &v)?;
    let mut op = VOperator::new(data, &params)?;
    let beta = gls_beta(&op)?;
    op.set_beta(&beta);
    let (loglik, score) = loglik_and_score_with(&op);
    if !loglik.is_finite() {
        return Err(Error::InvalidParameter("non-finite log-likelihood".into()));
    }
    let v = coords.full(&beta, cov);
    let grad = unconstrained_jacobian(&coords.layout, &v).transpose() * score.to_vector();
    Ok(Eval {
        params: op.params().clone(),
        loglik,
        grad,
    })
}

/// Inverse of the Fisher information in the covariance coordinates, used as
/// the starting inverse Hessian.
fn fisher_inverse_hessian(data: &CrossedDataset, coords: &CovCoords, eval: &Eval) -> DMatrix<f64> {
    let n = coords.len();
    let fallback = DMatrix::identity(n, n);
    let Ok(op) = VOperator::new(data, &eval.params) else {
        return fallback;
    };
    let fisher = fisher_exact_with(&op);
    let Ok(v) = unconstrained_map(&eval.params) else {
        return fallback;
    };
    let jac = unconstrained_jacobian(&coords.layout, &v);
    let o = coords.offset();
    let jc = jac.view((o, o), (n, n));
    let fc = fisher.matrix.as_matrix().view((o, o), (n, n));
    let h = jc.transpose() * fc * jc;
    match SymMatrix::from_symmetrized(&h).inverse_spd("Fisher Hessian") {
        Ok(inv) => inv.into_inner(),
        Err(_) => fallback,
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

struct RunOutcome {
    best: Eval,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn bfgs(data: &CrossedDataset, coords: &CovCoords, start: &DVector<f64>, opts: &FitOptions) -> Result<RunOutcome> {
    let o = coords.offset();
    let n = coords.len();
    let mut x = start.clone();
    let mut cur = evaluate(data, coords, &x)?;
    let mut trace = vec![cur.loglik];
    // minimise f = −ℓ; g is the gradient of f in the covariance coordinates
    let grad_of = |e: &Eval| -e.grad.rows(o, n).into_owned();
    let mut g = grad_of(&cur);
    let mut h = fisher_inverse_hessian(data, coords, &cur);
    let mut fresh_h = true;
    let mut iterations = 0;
    let mut converged = max_abs(&cur.grad) <= opts.gradient_tolerance;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = fisher_inverse_hessian(data, coords, &cur);
            fresh_h = true;
            d = -(&h * &g);
            slope = g.dot(&d);
            if !(slope < 0.0) {
                d = -g.clone();
                slope = g.dot(&d);
            }
        }
        let biggest = max_abs(&d);
        if biggest > MAX_STEP {
            d *= MAX_STEP / biggest;
            slope = g.dot(&d);
        }

        let f = -cur.loglik;
        let rounding = 1e-12 * (1.0 + f.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let x_new = &x + &d * t;
            if let Ok(e) = evaluate(data, coords, &x_new) {
                let f_new = -e.loglik;
                let armijo = f_new <= f + ARMIJO_C * t * slope;
                // Near the optimum the decrease drops below the rounding level
                // of f; accept when f is flat to rounding and the gradient
                // shrinks.
                let flat = f_new <= f + rounding && max_abs(&grad_of(&e)) < max_abs(&g);
                if armijo || flat {
                    accepted = Some((x_new, e));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, e)) = accepted else {
            if fresh_h {
                break;
            }
            h = fisher_inverse_hessian(data, coords, &cur);
            fresh_h = true;
            continue;
        };
        fresh_h = false;
        let g_new = grad_of(&e);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h = (&h + h.transpose()) * 0.5;
        }
        x = x_new;
        cur = e;
        g = g_new;
        trace.push(cur.loglik);
        converged = max_abs(&cur.grad) <= opts.gradient_tolerance;
    }
    Ok(RunOutcome {
        best: cur,
        iterations,
        converged,
        trace,
    })
}

/// Starting values: OLS fixed effects, residual variance, and per-level OLS
/// slope moments for `Σ` and `Σ'`, floored at `1e-4 σ² I`.
pub fn initial_params(data: &CrossedDataset) -> Result<ModelParams> {
    let xtx = SymMatrix::from_symmetrized(data.xtx());
    let y = data.y();
    let beta = xtx
        .cholesky("XᵀX")
        .map_err(|_| Error::RankDeficient {
            what: "fixed-effect design [X_A X_B]".into(),
        })?
        .solve(&data.x_t_mul(&y));
    let r = &y - data.x_mul(&beta);
    let dof = data.n_total().saturating_sub(data.p()).max(1);
    let sigma2 = (r.norm_squared() / dof as f64).max(1e-8 * (y.norm_squared() / data.n_total() as f64).max(1e-300));

    let d = data.d_a();
    let zt_r = data.z_t_mul(&DMatrix::from_column_slice(r.len(), 1, r.as_slice()));
    let slope_moment = |starts: Vec<usize>| {
        let mut acc = DMatrix::zeros(d, d);
        let mut count = 0usize;
        for k in starts {
            let gram = data.ztz().view((k, k), (d, d)).into_owned();
            if let Some(chol) = gram.cholesky() {
                let b = chol.solve(&zt_r.rows(k, d).into_owned());
                acc += &b * b.transpose();
                count += 1;
            }
        }
        if count < 2 {
            return DMatrix::identity(d, d) * (0.1 * sigma2);
        }
        floor_eigenvalues(&(acc / count as f64), 1e-4 * sigma2)
    };
    let sigma = slope_moment((0..data.m()).map(|i| data.left_index(i, 0)).collect());
    let sigma_prime = slope_moment((0..data.m_prime()).map(|j| data.right_index(j, 0)).collect());
    let mut params = ModelParams::new(
        DVector::zeros(d),
        DVector::zeros(data.d_b()),
        SymMatrix::from_symmetrized(&sigma),
        SymMatrix::from_symmetrized(&sigma_prime),
        sigma2,
    )?;
    params.set_beta(&beta);
    Ok(params)
}

fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Maximises the log-likelihood over `(β_A, β_B, Σ, Σ', σ²)`.
///
/// Non-convergence is not an error: the best iterate is returned with
/// `converged = false` and a warning.
pub fn fit_mle(data: &CrossedDataset, opts: &FitOptions) -> Result<FitResult> {
    if !(opts.gradient_tolerance > 0.0) {
        return Err(Error::InvalidParameter("gradient_tolerance must be positive".into()));
    }
    let layout = ParamLayout::for_data(data);
    let n_params = layout.dim();
    if data.n_total() < n_params {
        return Err(Error::InvalidData(format!(
            "{} observations for {n_params} parameters",
            data.n_total()
        )));
    }
    let coords = CovCoords { layout };
    let init = match &opts.init {
        InitPolicy::Moments => initial_params(data)?,
        InitPolicy::Given(p) => {
            p.check_against(data)?;
            p.clone()
        }
    };
    let start = unconstrained_map(&init)?
        .rows(coords.offset(), coords.len())
        .into_owned();

    let mut run = bfgs(data, &coords, &start, opts)?;
    let mut total_iterations = run.iterations;
    let mut attempts = 0;
    if !run.converged && opts.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let jitter = Normal::new(0.0, 0.5).expect("valid normal");
        for _ in 0..opts.restarts {
            attempts += 1;
            let perturbed = start.map(|v| v + jitter.sample(&mut rng));
            let Ok(candidate) = bfgs(data, &coords, &perturbed, opts) else {
                continue;
            };
            total_iterations += candidate.iterations;
            let better = (candidate.converged && !run.converged)
                || (candidate.converged == run.converged && candidate.best.loglik > run.best.loglik);
            if better {
                run = candidate;
            }
            if run.converged {
                break;
            }
        }
    }

    let params_hat = run.best.params.clone();
    let gradient_norm = max_abs(&run.best.grad);
    let mut warnings = Vec::new();
    if attempts > 0 {
        warnings.push(FitWarning::Restarted { attempts });
    }
    if !run.converged {
        warnings.push(FitWarning::NotConverged {
            iterations: total_iterations,
            gradient_norm,
        });
    }
    let sigma_hat = params_hat.sigma2.sqrt();
    for (name, m) in [("Sigma", &params_hat.sigma), ("Sigma_prime", &params_hat.sigma_prime)] {
        let min_diag = m
            .cholesky(name)?
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |a, v| a.min(*v));
        if min_diag < 1e-6 * sigma_hat {
            warnings.push(FitWarning::Boundary {
                parameter: name.into(),
                min_cholesky_diagonal: min_diag,
            });
        }
    }
    let y = data.y();
    let mean = y.mean();
    let var_y = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    if params_hat.sigma2 < 1e-8 * var_y {
        warnings.push(FitWarning::VarianceCollapse {
            sigma2: params_hat.sigma2,
        });
    }
    let condition = VOperator::new(data, &params_hat)?.condition_estimate();
    if condition > CONDITION_WARNING {
        warnings.push(FitWarning::IllConditioned { condition });
    }

    Ok(FitResult {
        params_hat,
        loglik_at_optimum: run.best.loglik,
        iterations: run.iterations,
        converged: run.converged,
        gradient_norm,
        warnings,
        trace: run.trace,
    })
}

/// Names of the unconstrained coordinates, aligned with
/// [`unconstrained_map`]: Cholesky diagonals appear as `log_L[r,r]`.
pub fn unconstrained_names(layout: &ParamLayout) -> Vec<String> {
    let mut names: Vec<String> = layout.names().into_iter().take(layout.d_a + layout.d_b).collect();
    for factor in ["L", "L_prime"] {
        for (r, s) in vech_pairs(layout.d_a) {
            names.push(if r == s {
                format!("log_{factor}[{r},{s}]")
            } else {
                format!("{factor}[{r},{s}]")
            });
        }
    }
    names.push("log_sigma2".into());
    names
}
