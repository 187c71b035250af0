//! Dense reference computations and random instances shared by the
//! integration tests. Everything here works on explicit n×n matrices built
//! straight from the cell blocks, independently of the structured code.

#![allow(dead_code)]

use crosslmm::matops::SymMatrix;
use crosslmm::model_data::{CellBlock, CrossedDataset, ModelParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn random_spd(d: usize, shift: f64, rng: &mut ChaCha8Rng) -> SymMatrix {
    let b = normal_matrix(d, d, rng);
    SymMatrix::new(&b * b.transpose() / d as f64 + DMatrix::identity(d, d) * shift).unwrap()
}

/// Unbalanced random dataset; the first A column is an intercept.
pub fn random_dataset(
    m: usize,
    m_prime: usize,
    d_a: usize,
    d_b: usize,
    max_n: usize,
    rng: &mut ChaCha8Rng,
) -> CrossedDataset {
    let mut cells = Vec::new();
    for _ in 0..m * m_prime {
        let n = rng.random_range(1..=max_n);
        let mut xa = normal_matrix(n, d_a, rng);
        xa.column_mut(0).fill(1.0);
        let xb = normal_matrix(n, d_b, rng);
        let y = normal_matrix(n, 1, rng).column(0).into_owned() * 2.0;
        cells.push(CellBlock::new(y, xa, xb).unwrap());
    }
    CrossedDataset::new(m, m_prime, cells).unwrap()
}

pub fn random_params(d_a: usize, d_b: usize, rng: &mut ChaCha8Rng) -> ModelParams {
    ModelParams::new(
        normal_matrix(d_a, 1, rng).column(0).into_owned(),
        normal_matrix(d_b, 1, rng).column(0).into_owned(),
        random_spd(d_a, 0.3, rng),
        random_spd(d_a, 0.3, rng),
        rng.random_range(0.3..2.0),
    )
    .unwrap()
}

/// Row positions of each cell in the stacked order (i outer, i' inner).
fn cell_rows(data: &CrossedDataset) -> Vec<(usize, usize, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..data.m() {
        for j in 0..data.m_prime() {
            let n = data.cell(i, j).n_cell();
            out.push((i, j, start..start + n));
            start += n;
        }
    }
    out
}

pub fn dense_y(data: &CrossedDataset) -> DVector<f64> {
    let mut y = DVector::zeros(data.n_total());
    for (i, j, r) in cell_rows(data) {
        y.rows_mut(r.start, r.len()).copy_from(data.cell(i, j).y());
    }
    y
}

pub fn dense_x(data: &CrossedDataset) -> DMatrix<f64> {
    let (d_a, d_b) = (data.d_a(), data.d_b());
    let mut x = DMatrix::zeros(data.n_total(), d_a + d_b);
    for (i, j, r) in cell_rows(data) {
        let c = data.cell(i, j);
        x.view_mut((r.start, 0), (r.len(), d_a)).copy_from(c.xa());
        x.view_mut((r.start, d_a), (r.len(), d_b)).copy_from(c.xb());
    }
    x
}

/// `X_{A,i}` placed in the row-level block `i` and the column-level block
/// `m + i'`.
pub fn dense_z(data: &CrossedDataset) -> DMatrix<f64> {
    let d = data.d_a();
    let mut z = DMatrix::zeros(data.n_total(), (data.m() + data.m_prime()) * d);
    for (i, j, r) in cell_rows(data) {
        let xa = data.cell(i, j).xa();
        z.view_mut((r.start, i * d), (r.len(), d)).copy_from(xa);
        z.view_mut((r.start, (data.m() + j) * d), (r.len(), d)).copy_from(xa);
    }
    z
}

pub fn dense_g(data: &CrossedDataset, p: &ModelParams) -> DMatrix<f64> {
    let d = data.d_a();
    let q = (data.m() + data.m_prime()) * d;
    let mut g = DMatrix::zeros(q, q);
    for k in 0..data.m() + data.m_prime() {
        let block = if k < data.m() { &p.sigma } else { &p.sigma_prime };
        g.view_mut((k * d, k * d), (d, d)).copy_from(block.as_matrix());
    }
    g
}

pub fn dense_v(data: &CrossedDataset, p: &ModelParams) -> DMatrix<f64> {
    let z = dense_z(data);
    &z * dense_g(data, p) * z.transpose() + DMatrix::identity(data.n_total(), data.n_total()) * p.sigma2
}

pub fn dense_v_inv(data: &CrossedDataset, p: &ModelParams) -> DMatrix<f64> {
    dense_v(data, p).cholesky().expect("V is PD").inverse()
}

pub fn dense_logdet(data: &CrossedDataset, p: &ModelParams) -> f64 {
    let chol = dense_v(data, p).cholesky().expect("V is PD");
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn dense_loglik(data: &CrossedDataset, p: &ModelParams) -> f64 {
    let n = data.n_total() as f64;
    let r = dense_y(data) - dense_x(data) * p.beta();
    let v = dense_v(data, p);
    let quad = r.dot(&v.cholesky().unwrap().solve(&r));
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * dense_logdet(data, p) - 0.5 * quad
}

/// `∂V` for each covariance parameter in layout order: vech(Σ), vech(Σ'), σ².
pub fn dense_dv(data: &CrossedDataset) -> Vec<DMatrix<f64>> {
    let d = data.d_a();
    let z = dense_z(data);
    let q = z.ncols();
    let mut out = Vec::new();
    for (first, count) in [(0, data.m()), (data.m(), data.m_prime())] {
        for s in 0..d {
            for r in s..d {
                let mut e = DMatrix::zeros(q, q);
                for k in first..first + count {
                    e[(k * d + r, k * d + s)] = 1.0;
                    e[(k * d + s, k * d + r)] = 1.0;
                }
                out.push(&z * e * z.transpose());
            }
        }
    }
    out.push(DMatrix::identity(data.n_total(), data.n_total()));
    out
}

/// `½ tr(V⁻¹ ∂_a V V⁻¹ ∂_b V)` for the covariance parameters and `XᵀV⁻¹X`
/// for the fixed effects; zero cross blocks.
pub fn dense_fisher(data: &CrossedDataset, p: &ModelParams) -> DMatrix<f64> {
    let vinv = dense_v_inv(data, p);
    let x = dense_x(data);
    let pdim = x.ncols();
    let dvs = dense_dv(data);
    let k = dvs.len();
    let mut f = DMatrix::zeros(pdim + k, pdim + k);
    f.view_mut((0, 0), (pdim, pdim))
        .copy_from(&(x.transpose() * &vinv * &x));
    let products: Vec<DMatrix<f64>> = dvs.iter().map(|dv| &vinv * dv).collect();
    for a in 0..k {
        for b in 0..k {
            f[(pdim + a, pdim + b)] = 0.5 * (&products[a] * &products[b]).trace();
        }
    }
    f
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
