//! Maximum likelihood fitting and large-sample inference for linear mixed
//! models with two crossed random-effect factors,
//!
//! ```text
//! y_ii'j = x_Aᵀ(β_A + U_i + U'_i') + x_Bᵀβ_B + ε_ii'j,
//! U_i ~ N(0, Σ),  U'_i' ~ N(0, Σ'),  ε ~ N(0, σ²),
//! ```
//!
//! with a sample-size formula for interaction tests and a simulation lab for
//! checking the approximations.
//!
//! ```
//! use crosslmm::{fit_mle, generate, infer, CellSizes, FitOptions, InferenceOptions};
//! use crosslmm::{ModelParams, PredictorDesign, SimConfig, SymMatrix};
//! use nalgebra::DVector;
//!
//! let config = SimConfig {
//!     m: 8,
//!     m_prime: 6,
//!     cell_size: CellSizes::Constant(3),
//!     params: ModelParams::new(
//!         DVector::from_vec(vec![1.0]),
//!         DVector::from_vec(vec![0.5, 0.5, 0.25]),
//!         SymMatrix::scalar(0.25),
//!         SymMatrix::scalar(0.1),
//!         0.16,
//!     )?,
//!     design: PredictorDesign::interaction(0.5, 1.0 / 12.0),
//!     replications: 1,
//!     base_seed: 42,
//! };
//! let data = generate(&config, 0)?;
//! let fit = fit_mle(&data, &FitOptions::default())?;
//! assert!(fit.converged);
//! let report = infer(&data, &fit, &InferenceOptions::default())?;
//! assert_eq!(report.names[0], "beta_A[0]");
//! # Ok::<(), crosslmm::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cov_struct;
pub mod design_power;
pub mod error;
pub mod loglik;
pub mod matops;
pub mod mle;
pub mod model_data;
pub mod simlab;
pub mod verify;

pub use asymptotics::{infer, AsymptoticReport, InferenceOptions, Regime, SeMethod};
pub use cov_struct::VOperator;
pub use design_power::{power_at, sample_size, sample_size_exact, DesignSpec};
pub use error::{Error, Result};
pub use loglik::{fisher_exact, loglik, score, FisherMatrix, ParamBlock, ParamLayout, ScoreVector};
pub use matops::SymMatrix;
pub use mle::{fit_mle, FitOptions, FitResult, FitWarning, InitPolicy};
pub use model_data::{load_csv, read_csv, write_csv, CellBlock, ColumnSchema, CrossedDataset, ModelParams};
pub use simlab::{generate, power_study, CellSizes, PredictorDesign, SimConfig};
pub use verify::{run_suite, VerifyReport};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/design.md")]
    mod design {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
