mod common;

use common::*;
use crosslmm::asymptotics::{
    assemble_i_infinity, assemble_i_infinity_inv, c_beta_b_from_moments, estimate_c_beta_b, infer, result1_covariances,
    wald_and_ci, InferenceOptions, Regime, SeMethod,
};
use crosslmm::loglik::{fisher_exact, ParamBlock, ParamLayout};
use crosslmm::mle::{fit_mle, FitOptions};
use crosslmm::simlab::{generate, BaseDist, CellSizes, PredictorDesign, SimConfig};
use crosslmm::{Error, ModelParams, SymMatrix};
use nalgebra::{DMatrix, DVector};

fn two_by_two_params() -> ModelParams {
    ModelParams::new(
        DVector::from_vec(vec![1.0, 0.5]),
        DVector::from_vec(vec![0.5]),
        SymMatrix::from_row_slice(2, &[1.0, 0.3, 0.3, 0.5]).unwrap(),
        SymMatrix::from_row_slice(2, &[0.8, -0.2, -0.2, 0.4]).unwrap(),
        1.0,
    )
    .unwrap()
}

fn two_by_two_config(m: usize, m_prime: usize, n: usize) -> SimConfig {
    SimConfig {
        m,
        m_prime,
        cell_size: CellSizes::Constant(n),
        params: two_by_two_params(),
        design: PredictorDesign {
            bases: vec![BaseDist::Normal { mean: 0.0, sd: 1.0 }, BaseDist::Bernoulli { p: 0.5 }],
            a_columns: vec![vec![], vec![0]],
            b_columns: vec![vec![1]],
        },
        replications: 1,
        base_seed: 3,
    }
}

#[test]
fn c_beta_b_matches_dense_inverse() {
    for seed in 0..10 {
        let mut r = rng(40 + seed);
        let data = random_dataset(4, 5, 2, 2, 6, &mut r);
        let x = dense_x(&data);
        let moments = x.transpose() * &x / data.n_total() as f64;
        let inv = moments.try_inverse().unwrap();
        let want = inv.view((2, 2), (2, 2)).into_owned();
        let got = estimate_c_beta_b(&data).unwrap();
        assert!(rel_err(got.as_matrix(), &want) < 1e-12);
    }
}

#[test]
fn c_beta_b_for_intercept_and_one_slope_is_inverse_variance() {
    // E[x xᵀ] for x = (1, X) with E X = 2, Var X = 3
    let moments = SymMatrix::from_row_slice(2, &[1.0, 2.0, 2.0, 7.0]).unwrap();
    let c = c_beta_b_from_moments(&moments, 1).unwrap();
    assert!((c.get(0, 0) - 1.0 / 3.0).abs() < 1e-14);
}

#[test]
fn collinear_predictors_report_null_direction() {
    let moments = SymMatrix::from_row_slice(2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
    match c_beta_b_from_moments(&moments, 1) {
        Err(Error::Collinear { null_direction }) => {
            let ratio = null_direction[0] / null_direction[1];
            assert!((ratio + 1.0).abs() < 1e-10);
        }
        other => panic!("expected a collinearity error, got {other:?}"),
    }
}

#[test]
fn interaction_slope_variance_matches_sample_size_information() {
    // For (1, B, X, BX) with B ⟂ X the interaction entry of C_βB is
    // 1/(p(1-p)Var X); the β_B[2] variance is then σ²/(p(1-p)Var X m m' n).
    let (p, var_x, sigma2) = (0.5, 1.0, 0.16);
    let design = PredictorDesign::interaction(p, var_x);
    let c = c_beta_b_from_moments(&design.population_second_moment(), 3).unwrap();
    assert!((c.get(2, 2) - 1.0 / (p * (1.0 - p) * var_x)).abs() < 1e-10);
    let params = ModelParams::new(
        DVector::from_element(1, 1.0),
        DVector::from_vec(vec![0.5, 0.5, 0.0]),
        SymMatrix::scalar(0.25),
        SymMatrix::scalar(0.1),
        sigma2,
    )
    .unwrap();
    let blocks = result1_covariances(&params, 53.0, 20.0, 1.0, Some(&c), Regime::Comparable).unwrap();
    let want = sigma2 / (p * (1.0 - p) * var_x * 53.0 * 20.0);
    assert!((blocks.beta_b.unwrap().get(2, 2) - want).abs() < 1e-15);
}

#[test]
fn result1_reference_values() {
    let identity = ModelParams::new(
        DVector::zeros(2),
        DVector::zeros(0),
        SymMatrix::identity(2),
        SymMatrix::identity(2),
        1.0,
    )
    .unwrap();
    let b = result1_covariances(&identity, 10.0, 10.0, 1.0, None, Regime::Comparable).unwrap();
    assert!((b.beta_a.as_matrix() - DMatrix::identity(2, 2) * 0.2).amax() < 1e-15);

    let scalar = ModelParams::new(
        DVector::zeros(1),
        DVector::zeros(0),
        SymMatrix::scalar(1.0),
        SymMatrix::scalar(1.0),
        2.0,
    )
    .unwrap();
    let b = result1_covariances(&scalar, 50.0, 40.0, 3.0, None, Regime::Comparable).unwrap();
    assert!((b.vech_sigma.get(0, 0) - 0.04).abs() < 1e-15);
    assert!((b.sigma2 - 2.0 * 4.0 / (50.0 * 40.0 * 3.0)).abs() < 1e-15);
}

#[test]
fn asymptotic_covariance_shrinks_with_more_levels() {
    let params = two_by_two_params();
    let c = SymMatrix::scalar(2.0);
    let psd = |a: &DMatrix<f64>| a.clone().symmetric_eigen().eigenvalues.min() >= -1e-14;
    for (m, m_prime) in [(5.0, 5.0), (10.0, 3.0), (7.0, 20.0)] {
        let small = assemble_i_infinity_inv(
            &result1_covariances(&params, m, m_prime, 2.0, Some(&c), Regime::Comparable).unwrap(),
        );
        let bigger_m = assemble_i_infinity_inv(
            &result1_covariances(&params, 2.0 * m, m_prime, 2.0, Some(&c), Regime::Comparable).unwrap(),
        );
        let bigger_mp = assemble_i_infinity_inv(
            &result1_covariances(&params, m, 2.0 * m_prime, 2.0, Some(&c), Regime::Comparable).unwrap(),
        );
        assert!(psd(&(small.as_matrix() - bigger_m.as_matrix())));
        assert!(psd(&(small.as_matrix() - bigger_mp.as_matrix())));
    }
}

/// The exact information at the truth approaches `I_∞` as the grid grows:
/// block-wise relative distance of the inverses at (40, 40, 20) is smaller
/// than at (10, 10, 5).
#[test]
fn exact_inverse_information_approaches_limit() {
    let params = two_by_two_params();
    let layout = ParamLayout::new(2, 1);
    let distance = |m: usize, n: usize| -> Vec<f64> {
        let data = generate(&two_by_two_config(m, m, n), 0).unwrap();
        let exact = fisher_exact(&data, &params).unwrap().inverse().unwrap();
        // X_B is Bernoulli(½) next to (1, N(0,1)): C_βB = 1/(p(1-p)) = 4
        let limit = assemble_i_infinity_inv(
            &result1_covariances(
                &params,
                m as f64,
                m as f64,
                n as f64,
                Some(&SymMatrix::scalar(4.0)),
                Regime::Comparable,
            )
            .unwrap(),
        );
        [
            ParamBlock::BetaA,
            ParamBlock::BetaB,
            ParamBlock::Sigma,
            ParamBlock::SigmaPrime,
            ParamBlock::Sigma2,
        ]
        .iter()
        .map(|&b| {
            let r = layout.range(b);
            let e = exact
                .as_matrix()
                .view((r.start, r.start), (r.len(), r.len()))
                .into_owned();
            let l = limit
                .as_matrix()
                .view((r.start, r.start), (r.len(), r.len()))
                .into_owned();
            rel_err(&e, &l)
        })
        .collect()
    };
    let coarse = distance(10, 5);
    let fine = distance(40, 20);
    for (k, (c, f)) in coarse.iter().zip(&fine).enumerate() {
        assert!(f < c, "block {k}: {c} -> {f}");
    }
}

#[test]
fn i_infinity_is_the_inverse_of_its_inverse() {
    let params = two_by_two_params();
    let blocks = result1_covariances(
        &params,
        12.0,
        9.0,
        3.0,
        Some(&SymMatrix::scalar(1.5)),
        Regime::Comparable,
    )
    .unwrap();
    let inv = assemble_i_infinity_inv(&blocks);
    let full = assemble_i_infinity(&params, &blocks, 12.0, 9.0).unwrap();
    let prod = full.as_matrix() * inv.as_matrix();
    assert!((prod - DMatrix::identity(10, 10)).amax() < 1e-12);
}

#[test]
fn few_column_levels_drops_row_term() {
    let params = two_by_two_params();
    let c = SymMatrix::scalar(1.0);
    let b = result1_covariances(&params, 200.0, 4.0, 1.0, Some(&c), Regime::FewColumnLevels).unwrap();
    assert!((b.beta_a.as_matrix() - params.sigma_prime.as_matrix() / 4.0).amax() < 1e-15);
}

#[test]
fn wald_one_sided_and_two_sided() {
    let names = vec!["a".to_string(), "b".to_string()];
    let w = wald_and_ci(&names, &[0.0, 1.96], &[1.0, 1.0], &[0.0, 0.0], 0.05).unwrap();
    assert_eq!(w.z[0], 0.0);
    assert!((w.p[0] - 1.0).abs() < 1e-15);
    assert!((w.p[1] - 0.05).abs() < 1e-4);
    assert!((w.p_upper[1] - 0.025).abs() < 1e-4);
    assert!((w.ci_low[1] - 0.0).abs() < 1e-3 && (w.ci_high[1] - 3.92).abs() < 1e-3);
    assert!(matches!(
        wald_and_ci(&names, &[0.0, 1.0], &[1.0, 0.0], &[0.0, 0.0], 0.05),
        Err(Error::DegenerateInference { .. })
    ));
}

#[test]
fn infer_report_is_consistent_for_both_se_methods() {
    let config = two_by_two_config(8, 7, 3);
    let data = generate(&config, 0).unwrap();
    let fit = fit_mle(&data, &FitOptions::default()).unwrap();
    for se_method in [SeMethod::Result1, SeMethod::FisherExact] {
        let opts = InferenceOptions {
            se_method,
            ..InferenceOptions::default()
        };
        let report = infer(&data, &fit, &opts).unwrap();
        assert_eq!(report.names.len(), 10);
        assert_eq!(report.index_of("beta_B[0]"), Some(2));
        for k in 0..10 {
            assert!(report.se[k] > 0.0);
            assert!(report.ci_low[k] < report.estimates[k] && report.estimates[k] < report.ci_high[k]);
            assert!((report.z[k] - report.estimates[k] / report.se[k]).abs() < 1e-12 * report.z[k].abs().max(1.0));
        }
    }
}
