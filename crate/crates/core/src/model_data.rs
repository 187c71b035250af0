//! Crossed-design data containers, CSV ingestion and the stacked design
//! matrices `X_A`, `X_B` and `Z`.
//!
//! Rows are always ordered by row-factor level `i` (outer), column-factor
//! level `i'` (inner), and original order within a cell. Columns of `Z` are
//! ordered `[(i=0,r=0..d_A), …, (i=m-1,…), (i'=0,r=0..d_A), …]`, i.e. the
//! left block is `blockdiag_i(stack_i' X_Aii')` and the right block is
//! `stack_i(blockdiag_i' X_Aii')`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::SymMatrix;

/// Observations of a single `(i, i')` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBlock {
    y: DVector<f64>,
    xa: DMatrix<f64>,
    xb: DMatrix<f64>,
}

impl CellBlock {
    pub fn new(y: DVector<f64>, xa: DMatrix<f64>, xb: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidData("cells must contain at least one observation".into()));
        }
        for (what, rows) in [("X_A rows", xa.nrows()), ("X_B rows", xb.nrows())] {
            if rows != n {
                return Err(Error::DimensionMismatch {
                    what: what.into(),
                    expected: n,
                    actual: rows,
                });
            }
        }
        if y.iter().chain(xa.iter()).chain(xb.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite value in cell".into()));
        }
        Ok(Self { y, xa, xb })
    }

    pub fn n_cell(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn xa(&self) -> &DMatrix<f64> {
        &self.xa
    }

    pub fn xb(&self) -> &DMatrix<f64> {
        &self.xb
    }
}

/// Data-only products reused by every likelihood evaluation.
#[derive(Debug, Clone)]
struct DesignCache {
    /// `ZᵀZ`, `q×q`.
    ztz: DMatrix<f64>,
    /// `Zᵀ[X_A X_B]`, `q×p`.
    zt_x: DMatrix<f64>,
    /// `[X_A X_B]ᵀ[X_A X_B]`.
    xtx: DMatrix<f64>,
}

/// Complete `m × m'` grid of cells with shared predictor dimensions.
#[derive(Debug, Clone)]
pub struct CrossedDataset {
    m: usize,
    m_prime: usize,
    d_a: usize,
    d_b: usize,
    cells: Vec<CellBlock>,
    offsets: Vec<usize>,
    n_total: usize,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    cache: DesignCache,
}

impl CrossedDataset {
    /// Builds a dataset from cells listed with `i` outer and `i'` inner.
    /// Levels are labelled `1..=m` and `1..=m'`.
    pub fn new(m: usize, m_prime: usize, cells: Vec<CellBlock>) -> Result<Self> {
        let row_labels = (1..=m).map(|i| i.to_string()).collect();
        let col_labels = (1..=m_prime).map(|i| i.to_string()).collect();
        Self::with_labels(m, m_prime, cells, row_labels, col_labels)
    }

    pub fn with_labels(
        m: usize,
        m_prime: usize,
        cells: Vec<CellBlock>,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> Result<Self> {
        if m == 0 || m_prime == 0 {
            return Err(Error::InvalidData("both factors need at least one level".into()));
        }
        if cells.len() != m * m_prime {
            return Err(Error::DimensionMismatch {
                what: "number of cells".into(),
                expected: m * m_prime,
                actual: cells.len(),
            });
        }
        if row_labels.len() != m || col_labels.len() != m_prime {
            return Err(Error::InvalidData("label count does not match level count".into()));
        }
        let d_a = cells[0].xa.ncols();
        let d_b = cells[0].xb.ncols();
        if d_a == 0 {
            return Err(Error::InvalidData("X_A needs at least one column".into()));
        }
        if cells.iter().any(|c| c.xa.ncols() != d_a || c.xb.ncols() != d_b) {
            return Err(Error::Schema("cells disagree on predictor dimensions".into()));
        }
        let mut offsets = Vec::with_capacity(cells.len());
        let mut n_total = 0;
        for c in &cells {
            offsets.push(n_total);
            n_total += c.n_cell();
        }
        if n_total < d_a + d_b {
            return Err(Error::InvalidData(format!(
                "{n_total} observations cannot identify {} fixed effects",
                d_a + d_b
            )));
        }
        let cache = build_cache(m, m_prime, d_a, d_b, &cells);
        Ok(Self {
            m,
            m_prime,
            d_a,
            d_b,
            cells,
            offsets,
            n_total,
            row_labels,
            col_labels,
            cache,
        })
    }

    /// Builds a dataset from stacked arrays and per-cell sizes (`i` outer).
    pub fn from_stacked(
        m: usize,
        m_prime: usize,
        cell_sizes: &[usize],
        xa: &DMatrix<f64>,
        xb: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> Result<Self> {
        Self::new(m, m_prime, unstack(cell_sizes, xa, xb, y)?)
    }

    /// Same design with a new stacked response vector.
    pub fn with_response(&self, y: &DVector<f64>) -> Result<Self> {
        if y.len() != self.n_total {
            return Err(Error::DimensionMismatch {
                what: "response length".into(),
                expected: self.n_total,
                actual: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite response".into()));
        }
        let mut out = self.clone();
        for (cell, &start) in out.cells.iter_mut().zip(&self.offsets) {
            let n = cell.n_cell();
            cell.y.copy_from(&y.rows(start, n));
        }
        Ok(out)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn m_prime(&self) -> usize {
        self.m_prime
    }

    pub fn d_a(&self) -> usize {
        self.d_a
    }

    pub fn d_b(&self) -> usize {
        self.d_b
    }

    /// Number of fixed effects `d_A + d_B`.
    pub fn p(&self) -> usize {
        self.d_a + self.d_b
    }

    /// Number of random-effect columns `(m + m') d_A`.
    pub fn q(&self) -> usize {
        (self.m + self.m_prime) * self.d_a
    }

    /// `n_••`.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Average cell size `n_•• / (m m')`.
    pub fn n_bar(&self) -> f64 {
        self.n_total as f64 / (self.m * self.m_prime) as f64
    }

    pub fn cell(&self, i: usize, i_prime: usize) -> &CellBlock {
        &self.cells[i * self.m_prime + i_prime]
    }

    pub fn cells(&self) -> &[CellBlock] {
        &self.cells
    }

    pub fn cell_sizes(&self) -> Vec<usize> {
        self.cells.iter().map(CellBlock::n_cell).collect()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    /// Column of `Z` for row level `i`, predictor `r`.
    pub fn left_index(&self, i: usize, r: usize) -> usize {
        i * self.d_a + r
    }

    /// Column of `Z` for column level `i'`, predictor `r`.
    pub fn right_index(&self, i_prime: usize, r: usize) -> usize {
        (self.m + i_prime) * self.d_a + r
    }

    /// Iterates `(i, i', first stacked row, cell)`.
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, usize, usize, &CellBlock)> {
        self.cells
            .iter()
            .zip(&self.offsets)
            .enumerate()
            .map(move |(k, (c, &start))| (k / self.m_prime, k % self.m_prime, start, c))
    }

    /// Stacked response.
    pub fn y(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_total);
        for (_, _, start, c) in self.iter_cells() {
            y.rows_mut(start, c.n_cell()).copy_from(&c.y);
        }
        y
    }

    /// Stacked `[X_A X_B]`.
    pub fn x(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n_total, self.p());
        for (_, _, start, c) in self.iter_cells() {
            let n = c.n_cell();
            x.view_mut((start, 0), (n, self.d_a)).copy_from(&c.xa);
            x.view_mut((start, self.d_a), (n, self.d_b)).copy_from(&c.xb);
        }
        x
    }

    /// `[X_A X_B] β` for stacked `β`.
    pub fn x_mul(&self, beta: &DVector<f64>) -> DVector<f64> {
        assert_eq!(beta.len(), self.p(), "x_mul: beta has wrong length");
        let (ba, bb) = (beta.rows(0, self.d_a), beta.rows(self.d_a, self.d_b));
        let mut out = DVector::zeros(self.n_total);
        for (_, _, start, c) in self.iter_cells() {
            let fitted = &c.xa * ba + &c.xb * bb;
            out.rows_mut(start, c.n_cell()).copy_from(&fitted);
        }
        out
    }

    /// `[X_A X_B]ᵀ v` for a stacked vector `v`.
    pub fn x_t_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.n_total, "x_t_mul: vector has wrong length");
        let mut out = DVector::zeros(self.p());
        for (_, _, start, c) in self.iter_cells() {
            let rows = v.rows(start, c.n_cell());
            let mut a = out.rows_mut(0, self.d_a);
            a += c.xa.transpose() * rows;
            let mut b = out.rows_mut(self.d_a, self.d_b);
            b += c.xb.transpose() * rows;
        }
        out
    }

    /// `Zᵀ rhs` for stacked `rhs` (`n_••×k`), without forming `Z`.
    pub fn z_t_mul(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(rhs.nrows(), self.n_total, "z_t_mul: rhs has wrong row count");
        let d = self.d_a;
        let mut out = DMatrix::zeros(self.q(), rhs.ncols());
        for (i, j, start, c) in self.iter_cells() {
            let block = c.xa.transpose() * rhs.rows(start, c.n_cell());
            let mut left = out.rows_mut(self.left_index(i, 0), d);
            left += &block;
            let mut right = out.rows_mut(self.right_index(j, 0), d);
            right += &block;
        }
        out
    }

    /// `Z coef` for `coef` of shape `q×k`, without forming `Z`.
    pub fn z_mul(&self, coef: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(coef.nrows(), self.q(), "z_mul: coefficient has wrong row count");
        let d = self.d_a;
        let mut out = DMatrix::zeros(self.n_total, coef.ncols());
        for (i, j, start, c) in self.iter_cells() {
            let sum = coef.rows(self.left_index(i, 0), d) + coef.rows(self.right_index(j, 0), d);
            out.rows_mut(start, c.n_cell()).copy_from(&(&c.xa * sum));
        }
        out
    }

    /// `ZᵀZ`.
    pub fn ztz(&self) -> &DMatrix<f64> {
        &self.cache.ztz
    }

    /// `Zᵀ[X_A X_B]`.
    pub fn zt_x(&self) -> &DMatrix<f64> {
        &self.cache.zt_x
    }

    /// `[X_A X_B]ᵀ[X_A X_B]`.
    pub fn xtx(&self) -> &DMatrix<f64> {
        &self.cache.xtx
    }
}

fn build_cache(m: usize, m_prime: usize, d_a: usize, d_b: usize, cells: &[CellBlock]) -> DesignCache {
    let q = (m + m_prime) * d_a;
    let p = d_a + d_b;
    let mut ztz = DMatrix::zeros(q, q);
    let mut zt_x = DMatrix::zeros(q, p);
    let mut xtx = DMatrix::zeros(p, p);
    for (k, c) in cells.iter().enumerate() {
        let (i, j) = (k / m_prime, k % m_prime);
        let (li, rj) = (i * d_a, (m + j) * d_a);
        let mut x = DMatrix::zeros(c.n_cell(), p);
        x.columns_mut(0, d_a).copy_from(&c.xa);
        x.columns_mut(d_a, d_b).copy_from(&c.xb);
        let xa_x = c.xa.transpose() * &x;
        let gram = xa_x.columns(0, d_a).into_owned();
        for (a, b) in [(li, li), (rj, rj), (li, rj)] {
            let mut v = ztz.view_mut((a, b), (d_a, d_a));
            v += &gram;
        }
        let cross = ztz.view((li, rj), (d_a, d_a)).transpose();
        ztz.view_mut((rj, li), (d_a, d_a)).copy_from(&cross);
        for a in [li, rj] {
            let mut v = zt_x.rows_mut(a, d_a);
            v += &xa_x;
        }
        xtx += x.transpose() * &x;
    }
    DesignCache { ztz, zt_x, xtx }
}

/// Stacked `(X_A, X_B, y)` with rows ordered `i` outer, `i'` inner.
pub fn stack_designs(data: &CrossedDataset) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let x = data.x();
    let xa = x.columns(0, data.d_a()).into_owned();
    let xb = x.columns(data.d_a(), data.d_b()).into_owned();
    (xa, xb, data.y())
}

/// Splits stacked arrays back into cells of the given sizes.
pub fn unstack(cell_sizes: &[usize], xa: &DMatrix<f64>, xb: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<CellBlock>> {
    let total: usize = cell_sizes.iter().sum();
    for (what, rows) in [
        ("X_A rows", xa.nrows()),
        ("X_B rows", xb.nrows()),
        ("y length", y.len()),
    ] {
        if rows != total {
            return Err(Error::DimensionMismatch {
                what: what.into(),
                expected: total,
                actual: rows,
            });
        }
    }
    let mut start = 0;
    let mut cells = Vec::with_capacity(cell_sizes.len());
    for &n in cell_sizes {
        cells.push(CellBlock::new(
            y.rows(start, n).into_owned(),
            xa.rows(start, n).into_owned(),
            xb.rows(start, n).into_owned(),
        )?);
        start += n;
    }
    Ok(cells)
}

/// Dense `Z`, for tests and small problems.
pub fn build_z(data: &CrossedDataset) -> DMatrix<f64> {
    let d = data.d_a();
    let mut z = DMatrix::zeros(data.n_total(), data.q());
    for (i, j, start, c) in data.iter_cells() {
        let n = c.n_cell();
        z.view_mut((start, data.left_index(i, 0)), (n, d)).copy_from(&c.xa);
        z.view_mut((start, data.right_index(j, 0)), (n, d)).copy_from(&c.xa);
    }
    z
}

/// Fixed effects and covariance components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(rename = "beta_A", with = "dvec_serde")]
    pub beta_a: DVector<f64>,
    #[serde(rename = "beta_B", with = "dvec_serde", default = "empty_dvec")]
    pub beta_b: DVector<f64>,
    #[serde(rename = "Sigma")]
    pub sigma: SymMatrix,
    #[serde(rename = "Sigma_prime")]
    pub sigma_prime: SymMatrix,
    pub sigma2: f64,
}

fn empty_dvec() -> DVector<f64> {
    DVector::zeros(0)
}

impl ModelParams {
    pub fn new(
        beta_a: DVector<f64>,
        beta_b: DVector<f64>,
        sigma: SymMatrix,
        sigma_prime: SymMatrix,
        sigma2: f64,
    ) -> Result<Self> {
        let p = Self {
            beta_a,
            beta_b,
            sigma,
            sigma_prime,
            sigma2,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks dimensions and positive definiteness.
    pub fn validate(&self) -> Result<()> {
        let d = self.beta_a.len();
        if self.sigma.dim() != d || self.sigma_prime.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "Sigma / Sigma_prime dimension vs beta_A".into(),
                expected: d,
                actual: if self.sigma.dim() != d {
                    self.sigma.dim()
                } else {
                    self.sigma_prime.dim()
                },
            });
        }
        if self.beta_a.iter().chain(self.beta_b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite fixed effect".into()));
        }
        self.sigma.cholesky("Sigma")?;
        self.sigma_prime.cholesky("Sigma_prime")?;
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }

    /// Checks that the parameter dimensions match a dataset.
    pub fn check_against(&self, data: &CrossedDataset) -> Result<()> {
        if self.beta_a.len() != data.d_a() {
            return Err(Error::DimensionMismatch {
                what: "beta_A length".into(),
                expected: data.d_a(),
                actual: self.beta_a.len(),
            });
        }
        if self.beta_b.len() != data.d_b() {
            return Err(Error::DimensionMismatch {
                what: "beta_B length".into(),
                expected: data.d_b(),
                actual: self.beta_b.len(),
            });
        }
        self.validate()
    }

    pub fn d_a(&self) -> usize {
        self.beta_a.len()
    }

    pub fn d_b(&self) -> usize {
        self.beta_b.len()
    }

    /// Stacked `(β_A, β_B)`.
    pub fn beta(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.d_a() + self.d_b());
        b.rows_mut(0, self.d_a()).copy_from(&self.beta_a);
        b.rows_mut(self.d_a(), self.d_b()).copy_from(&self.beta_b);
        b
    }

    pub fn set_beta(&mut self, beta: &DVector<f64>) {
        let d_a = self.d_a();
        self.beta_a = beta.rows(0, d_a).into_owned();
        self.beta_b = beta.rows(d_a, beta.len() - d_a).into_owned();
    }
}

pub(crate) mod dvec_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Maps CSV header names to model roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub row_factor: String,
    pub col_factor: String,
    pub response: String,
    #[serde(rename = "xA", default)]
    pub xa: Vec<String>,
    #[serde(rename = "xB", default)]
    pub xb: Vec<String>,
    /// Prepend a column of ones to `X_A`.
    #[serde(rename = "add_intercept_A", default)]
    pub add_intercept_a: bool,
}

impl ColumnSchema {
    /// The column names used by [`write_csv`].
    pub fn default_for(d_a: usize, d_b: usize) -> Self {
        Self {
            row_factor: "row".into(),
            col_factor: "col".into(),
            response: "y".into(),
            xa: (1..=d_a).map(|k| format!("xa{k}")).collect(),
            xb: (1..=d_b).map(|k| format!("xb{k}")).collect(),
            add_intercept_a: false,
        }
    }
}

/// Reads a crossed dataset from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<CrossedDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

type Observation = (f64, Vec<f64>, Vec<f64>);

/// Reads a crossed dataset from any CSV source. Factor levels are indexed in
/// order of first appearance; parse errors report 1-based data-row numbers.
pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<CrossedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(map_csv_error)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let row_col = find(&schema.row_factor)?;
    let col_col = find(&schema.col_factor)?;
    let y_col = find(&schema.response)?;
    let xa_cols = schema.xa.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let xb_cols = schema.xb.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    if xa_cols.is_empty() && !schema.add_intercept_a {
        return Err(Error::Schema(
            "no X_A columns given and add_intercept_A is false".into(),
        ));
    }

    let mut row_levels = Levels::default();
    let mut col_levels = Levels::default();
    let mut obs: Vec<(usize, usize, Observation)> = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(map_csv_error)?;
        let parse = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: headers[col].to_string(),
                    value: raw.to_string(),
                })
        };
        let i = row_levels.index(record.get(row_col).unwrap_or("").trim());
        let j = col_levels.index(record.get(col_col).unwrap_or("").trim());
        let y = parse(y_col)?;
        let mut xa = Vec::with_capacity(xa_cols.len() + 1);
        if schema.add_intercept_a {
            xa.push(1.0);
        }
        for &c in &xa_cols {
            xa.push(parse(c)?);
        }
        let xb = xb_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        obs.push((i, j, (y, xa, xb)));
    }
    let (m, m_prime) = (row_levels.labels.len(), col_levels.labels.len());
    if m == 0 {
        return Err(Error::InvalidData("CSV contains no data rows".into()));
    }

    let mut grouped: Vec<Vec<Observation>> = vec![Vec::new(); m * m_prime];
    for (i, j, o) in obs {
        grouped[i * m_prime + j].push(o);
    }
    let missing: Vec<(String, String)> = grouped
        .iter()
        .enumerate()
        .filter(|(_, g)| g.is_empty())
        .map(|(k, _)| {
            (
                row_levels.labels[k / m_prime].clone(),
                col_levels.labels[k % m_prime].clone(),
            )
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid { missing });
    }

    let d_a = xa_cols.len() + usize::from(schema.add_intercept_a);
    let d_b = xb_cols.len();
    let cells = grouped
        .into_iter()
        .map(|g| {
            let n = g.len();
            let y = DVector::from_iterator(n, g.iter().map(|o| o.0));
            let xa = DMatrix::from_row_iterator(n, d_a, g.iter().flat_map(|o| o.1.iter().copied()));
            let xb = DMatrix::from_row_iterator(n, d_b, g.iter().flat_map(|o| o.2.iter().copied()));
            CellBlock::new(y, xa, xb)
        })
        .collect::<Result<Vec<_>>>()?;
    CrossedDataset::with_labels(m, m_prime, cells, row_levels.labels, col_levels.labels)
}

fn map_csv_error(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => Error::Schema(format!(
            "record {} has {len} fields, header has {expected_len}",
            pos.as_ref().map_or(0, |p| p.record())
        )),
        _ => Error::Csv(e),
    }
}

#[derive(Default)]
struct Levels {
    labels: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Levels {
    fn index(&mut self, label: &str) -> usize {
        if let Some(&k) = self.lookup.get(label) {
            return k;
        }
        let k = self.labels.len();
        self.labels.push(label.to_string());
        self.lookup.insert(label.to_string(), k);
        k
    }
}

/// Writes the dataset with the column names of [`ColumnSchema::default_for`]
/// and returns that schema. Values use the shortest round-trip decimal form,
/// so reading the file back reproduces every value bit for bit.
pub fn write_csv(data: &CrossedDataset, path: impl AsRef<Path>) -> Result<ColumnSchema> {
    let file = std::fs::File::create(path)?;
    write_csv_to(data, file)
}

pub fn write_csv_to<W: Write>(data: &CrossedDataset, writer: W) -> Result<ColumnSchema> {
    let schema = ColumnSchema::default_for(data.d_a(), data.d_b());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.row_factor.clone(),
        schema.col_factor.clone(),
        schema.response.clone(),
    ];
    header.extend(schema.xa.iter().cloned());
    header.extend(schema.xb.iter().cloned());
    wtr.write_record(&header)?;
    for (i, j, _, c) in data.iter_cells() {
        for k in 0..c.n_cell() {
            let mut rec = vec![
                data.row_labels[i].clone(),
                data.col_labels[j].clone(),
                c.y[k].to_string(),
            ];
            rec.extend(c.xa.row(k).iter().map(f64::to_string));
            rec.extend(c.xb.row(k).iter().map(f64::to_string));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(schema)
}
