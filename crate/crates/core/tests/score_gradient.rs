mod common;

use common::*;
use crosslmm::loglik::{loglik, score, ParamLayout};
use crosslmm::mle::{inverse_map, unconstrained_gradient, unconstrained_map};
use rand::Rng;

const STEP: f64 = 1e-5;

/// Central differences of `loglik ∘ inverse_map` against the chain-ruled
/// analytic score. Components are compared relative to `max(|fd|, 1)` so
/// that near-zero entries are held to the same absolute standard.
#[test]
fn score_matches_central_differences_on_20_instances() {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut r = rng(500 + seed);
        let d_a = r.random_range(1..=2);
        let d_b = r.random_range(0..=2);
        let data = random_dataset(r.random_range(2..=5), r.random_range(2..=5), d_a, d_b, 10, &mut r);
        assert!(data.n_total() <= 300);
        let params = random_params(d_a, d_b, &mut r);
        let layout = ParamLayout::for_data(&data);

        let v = unconstrained_map(&params).unwrap();
        let analytic = unconstrained_gradient(&params, &score(&data, &params).unwrap()).unwrap();
        let f = |v: &nalgebra::DVector<f64>| loglik(&data, &inverse_map(&layout, v).unwrap()).unwrap();
        for k in 0..v.len() {
            let (mut plus, mut minus) = (v.clone(), v.clone());
            plus[k] += STEP;
            minus[k] -= STEP;
            let fd = (f(&plus) - f(&minus)) / (2.0 * STEP);
            let err = (analytic[k] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
            assert!(
                err <= 1e-6,
                "seed {seed}, component {k}: analytic {} vs fd {fd}",
                analytic[k]
            );
        }
    }
    eprintln!("worst relative gradient error {worst:e}");
}

/// The natural-parameter score, checked directly against differences in
/// β and σ² where no reparametrisation is involved.
#[test]
fn natural_score_entries_for_beta_and_sigma2() {
    let mut r = rng(9);
    let data = random_dataset(3, 4, 2, 1, 5, &mut r);
    let params = random_params(2, 1, &mut r);
    let s = score(&data, &params).unwrap();
    let h = 1e-6;
    for k in 0..2 {
        let (mut p, mut q) = (params.clone(), params.clone());
        p.beta_a[k] += h;
        q.beta_a[k] -= h;
        let fd = (loglik(&data, &p).unwrap() - loglik(&data, &q).unwrap()) / (2.0 * h);
        assert!((s.grad_beta_a[k] - fd).abs() < 1e-6 * fd.abs().max(1.0));
    }
    let (mut p, mut q) = (params.clone(), params.clone());
    p.sigma2 += h;
    q.sigma2 -= h;
    let fd = (loglik(&data, &p).unwrap() - loglik(&data, &q).unwrap()) / (2.0 * h);
    assert!((s.grad_sigma2 - fd).abs() < 1e-6 * fd.abs().max(1.0));
}
