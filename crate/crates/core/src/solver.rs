//! Weighted least squares through the normal equations, shared across KPIs.
//!
//! Estimation never materializes dense rows: one streaming pass accumulates
//! XᵀWX (packed, p² memory), XᵀWy per KPI, and yᵀWy, all with compensated
//! sums; a single Cholesky factorization then serves every KPI. The same
//! accumulator ingests raw rows or compressed groups, which is what makes
//! compression exactly transparent to the fit.
//!
//! Covariance estimators: `homoskedastic` σ̂²(XᵀWX)⁻¹, the `hc0`/`hc1`
//! sandwiches, and `clustered` with the usual G/(G−1)·(n−1)/(n−p) factor.
//! Weights are frequency weights: a row with weight w behaves exactly like w
//! copies of that row in every estimator.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::compress::CompressedDataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{packed_len, pidx, sandwich, Cholesky, SymMatrix};
use crate::sparse::{DesignRows, SparseDesignMatrix};
use crate::stats::Acc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    Homoskedastic,
    Hc0,
    Hc1,
    Clustered,
}

impl CovKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovKind::Homoskedastic => "homoskedastic",
            CovKind::Hc0 => "hc0",
            CovKind::Hc1 => "hc1",
            CovKind::Clustered => "clustered",
        }
    }
}

impl std::str::FromStr for CovKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homoskedastic" => Ok(CovKind::Homoskedastic),
            "hc0" => Ok(CovKind::Hc0),
            "hc1" => Ok(CovKind::Hc1),
            "clustered" => Ok(CovKind::Clustered),
            other => Err(Error::Invalid(format!(
                "unknown covariance kind `{other}` (expected homoskedastic, hc0, hc1, or clustered)"
            ))),
        }
    }
}

/// The sufficient statistics of a weighted least-squares problem.
#[derive(Debug, Clone)]
pub struct GramSystem {
    p: usize,
    m: usize,
    xtwx: SymMatrix,
    /// XᵀWy, KPI-major: KPI j occupies `j·p..(j+1)·p`.
    xtwy: Vec<f64>,
    ytwy: Vec<f64>,
    sum_weights: f64,
    n_rows: u64,
}

impl GramSystem {
    pub fn n_cols(&self) -> usize {
        self.p
    }

    pub fn n_kpis(&self) -> usize {
        self.m
    }

    pub fn xtwx(&self) -> &SymMatrix {
        &self.xtwx
    }

    pub fn xtwy(&self, kpi: usize) -> &[f64] {
        &self.xtwy[kpi * self.p..(kpi + 1) * self.p]
    }

    /// yᵀWy for one KPI.
    pub fn ytwy(&self, kpi: usize) -> f64 {
        self.ytwy[kpi]
    }

    pub fn sum_weights(&self) -> f64 {
        self.sum_weights
    }

    pub fn n_rows(&self) -> u64 {
        self.n_rows
    }
}

/// Compensated accumulator behind every Gram build. Chunk-local instances
/// merge in chunk order, so totals are independent of thread count.
struct GramAcc {
    p: usize,
    m: usize,
    xtwx: Vec<Acc>,
    xtwy: Vec<Acc>,
    ytwy: Vec<Acc>,
    sum_w: Acc,
    n_rows: u64,
}

impl GramAcc {
    fn new(p: usize, m: usize) -> Self {
        GramAcc {
            p,
            m,
            xtwx: vec![Acc::new(); packed_len(p)],
            xtwy: vec![Acc::new(); p * m],
            ytwy: vec![Acc::new(); m],
            sum_w: Acc::new(),
            n_rows: 0,
        }
    }

    /// Lower-triangle update XᵀWX += w·xxᵀ for one sparse pattern with
    /// ascending column indices.
    #[inline]
    fn add_xtwx(&mut self, cols: &[u32], vals: &[f64], w: f64) {
        for (a, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
            let base = pidx(ca as usize, 0);
            let wa = w * va;
            for (&cb, &vb) in cols[..=a].iter().zip(vals) {
                self.xtwx[base + cb as usize].add(wa * vb);
            }
        }
    }

    #[inline]
    fn add_row(&mut self, cols: &[u32], vals: &[f64], w: f64, kpis: &[&[f64]], i: usize) {
        self.add_xtwx(cols, vals, w);
        for (j, y) in kpis.iter().enumerate() {
            let yj = y[i];
            let wy = w * yj;
            self.ytwy[j].add(wy * yj);
            let base = j * self.p;
            for (&c, &v) in cols.iter().zip(vals) {
                self.xtwy[base + c as usize].add(v * wy);
            }
        }
        self.sum_w.add(w);
        self.n_rows += 1;
    }

    #[inline]
    fn add_group(&mut self, g: crate::compress::Group<'_>) {
        let w = g.count as f64;
        self.add_xtwx(g.cols, g.vals, w);
        for j in 0..self.m {
            self.ytwy[j].add(g.sum_y_sq[j]);
            let base = j * self.p;
            for (&c, &v) in g.cols.iter().zip(g.vals) {
                self.xtwy[base + c as usize].add(v * g.sum_y[j]);
            }
        }
        self.sum_w.add(w);
        self.n_rows += g.count;
    }

    fn merge(&mut self, other: GramAcc) {
        for (a, b) in self.xtwx.iter_mut().zip(other.xtwx) {
            a.merge(b);
        }
        for (a, b) in self.xtwy.iter_mut().zip(other.xtwy) {
            a.merge(b);
        }
        for (a, b) in self.ytwy.iter_mut().zip(other.ytwy) {
            a.merge(b);
        }
        self.sum_w.merge(other.sum_w);
        self.n_rows += other.n_rows;
    }

    fn finish(self) -> GramSystem {
        GramSystem {
            p: self.p,
            m: self.m,
            xtwx: SymMatrix::from_packed(self.p, self.xtwx.iter().map(Acc::value).collect()),
            xtwy: self.xtwy.iter().map(Acc::value).collect(),
            ytwy: self.ytwy.iter().map(Acc::value).collect(),
            sum_weights: self.sum_w.value(),
            n_rows: self.n_rows,
        }
    }
}

fn check_row_inputs(n: usize, kpis: &[&[f64]], weights: Option<&[f64]>) -> Result<()> {
    if kpis.is_empty() {
        return Err(Error::DimensionMismatch("no KPI columns".into()));
    }
    for (j, y) in kpis.iter().enumerate() {
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "KPI {j} has {} rows, design has {n}",
                y.len()
            )));
        }
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {n} rows",
                w.len()
            )));
        }
        if let Some(bad) = w.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Invalid(format!(
                "weight at row {bad} is negative or non-finite"
            )));
        }
    }
    Ok(())
}

/// Accumulates the normal equations from a column-oriented design matrix.
/// The matrix is transposed once; accumulation itself is row-streaming.
pub fn accumulate_gram(
    design: &SparseDesignMatrix,
    kpis: &[&[f64]],
    weights: Option<&[f64]>,
) -> Result<GramSystem> {
    check_row_inputs(design.n_rows(), kpis, weights)?;
    let rows = design.to_rows();
    gram_from_rows(&rows, kpis, weights)
}

/// Same accumulation from an already row-oriented design.
pub fn gram_from_rows(
    rows: &DesignRows,
    kpis: &[&[f64]],
    weights: Option<&[f64]>,
) -> Result<GramSystem> {
    check_row_inputs(rows.n_rows(), kpis, weights)?;
    let p = rows.n_cols();
    let m = kpis.len();
    let mut total = GramAcc::new(p, m);
    exec::reduce_chunks(
        rows.n_rows(),
        exec::ROW_CHUNK,
        |range| {
            let mut acc = GramAcc::new(p, m);
            for i in range {
                let (cols, vals) = rows.row(i);
                let w = weights.map_or(1.0, |w| w[i]);
                acc.add_row(cols, vals, w, kpis, i);
            }
            acc
        },
        |part| total.merge(part),
    );
    Ok(total.finish())
}

/// Accumulates the normal equations from a row-pattern generator without
/// ever materializing the design matrix. `fill` writes row `i`'s sparse
/// pattern into the scratch buffers, column indices ascending.
pub fn gram_from_pattern<F>(
    n_rows: usize,
    n_cols: usize,
    kpis: &[&[f64]],
    weights: Option<&[f64]>,
    fill: F,
) -> Result<GramSystem>
where
    F: Fn(usize, &mut Vec<u32>, &mut Vec<f64>) + Sync + Send,
{
    check_row_inputs(n_rows, kpis, weights)?;
    let m = kpis.len();
    let mut total = GramAcc::new(n_cols, m);
    exec::reduce_chunks(
        n_rows,
        exec::ROW_CHUNK,
        |range| {
            let mut acc = GramAcc::new(n_cols, m);
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for i in range {
                fill(i, &mut cols, &mut vals);
                let w = weights.map_or(1.0, |w| w[i]);
                acc.add_row(&cols, &vals, w, kpis, i);
            }
            acc
        },
        |part| total.merge(part),
    );
    Ok(total.finish())
}

/// Accumulates from a weighted subset of rows: row `subset[i]` enters with
/// weight `weights[i]`. Zero weights are skipped.
pub fn gram_from_row_subset(
    rows: &DesignRows,
    kpis: &[&[f64]],
    subset: &[usize],
    weights: &[f64],
) -> Result<GramSystem> {
    if subset.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} subset rows but {} weights",
            subset.len(),
            weights.len()
        )));
    }
    let p = rows.n_cols();
    let m = kpis.len();
    let mut total = GramAcc::new(p, m);
    exec::reduce_chunks(
        subset.len(),
        exec::ROW_CHUNK,
        |range| {
            let mut acc = GramAcc::new(p, m);
            for s in range {
                let w = weights[s];
                if w == 0.0 {
                    continue;
                }
                let i = subset[s];
                let (cols, vals) = rows.row(i);
                acc.add_row(cols, vals, w, kpis, i);
            }
            acc
        },
        |part| total.merge(part),
    );
    Ok(total.finish())
}

/// Accumulates from compressed groups; exactly equivalent to the raw pass.
pub fn gram_from_groups(cd: &CompressedDataset) -> GramSystem {
    let p = cd.n_design_cols();
    let m = cd.n_kpis();
    let mut total = GramAcc::new(p, m);
    exec::reduce_chunks(
        cd.n_groups(),
        exec::ROW_CHUNK,
        |range| {
            let mut acc = GramAcc::new(p, m);
            for g in range {
                acc.add_group(cd.group(g));
            }
            acc
        },
        |part| total.merge(part),
    );
    total.finish()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Adds `ridge` to every diagonal entry of XᵀWX before factoring; the
    /// escape hatch for deliberately collinear designs.
    pub ridge: Option<f64>,
}

/// Coefficients and factorization shared by all downstream inference.
#[derive(Debug, Clone)]
pub struct FitResult {
    term_names: Vec<String>,
    kpi_names: Vec<String>,
    /// β̂, KPI-major like [`GramSystem::xtwy`].
    beta: Vec<f64>,
    xtwx: SymMatrix,
    chol: Cholesky,
    /// (XᵀWX)⁻¹, only materialized once inference asks for it; a coefficient
    /// fit alone never pays the p³ inversion.
    xtwx_inv: OnceLock<SymMatrix>,
    sigma2: Vec<f64>,
    rss: Vec<f64>,
    sum_weights: f64,
    n_rows: u64,
    df_resid: f64,
    ridge: Option<f64>,
    cov: BTreeMap<CovKind, Vec<SymMatrix>>,
}

impl FitResult {
    pub fn n_cols(&self) -> usize {
        self.xtwx.order()
    }

    pub fn n_kpis(&self) -> usize {
        self.kpi_names.len()
    }

    pub fn term_names(&self) -> &[String] {
        &self.term_names
    }

    pub fn kpi_names(&self) -> &[String] {
        &self.kpi_names
    }

    pub fn kpi_index(&self, name: &str) -> Result<usize> {
        self.kpi_names
            .iter()
            .position(|k| k == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn beta(&self, kpi: usize) -> &[f64] {
        let p = self.n_cols();
        &self.beta[kpi * p..(kpi + 1) * p]
    }

    /// Residual variance estimate σ̂² per KPI; NaN when df_resid ≤ 0.
    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn rss(&self) -> &[f64] {
        &self.rss
    }

    pub fn sum_weights(&self) -> f64 {
        self.sum_weights
    }

    pub fn n_rows(&self) -> u64 {
        self.n_rows
    }

    pub fn df_resid(&self) -> f64 {
        self.df_resid
    }

    pub fn ridge(&self) -> Option<f64> {
        self.ridge
    }

    pub fn xtwx(&self) -> &SymMatrix {
        &self.xtwx
    }

    pub fn xtwx_inv(&self) -> &SymMatrix {
        self.xtwx_inv.get_or_init(|| self.chol.inverse())
    }

    pub fn has_covariance(&self, kind: CovKind) -> bool {
        self.cov.contains_key(&kind)
    }

    /// Coefficient covariance for one KPI; the kind must have been computed
    /// with [`covariance`] first.
    pub fn cov(&self, kind: CovKind, kpi: usize) -> Result<&SymMatrix> {
        self.cov
            .get(&kind)
            .map(|per_kpi| &per_kpi[kpi])
            .ok_or_else(|| Error::CovarianceUnavailable {
                kind: kind.as_str().to_string(),
            })
    }

    /// ŷ for one sparse pattern under KPI `kpi`.
    pub fn predict(&self, cols: &[u32], vals: &[f64], kpi: usize) -> f64 {
        let beta = self.beta(kpi);
        cols.iter()
            .zip(vals)
            .map(|(&c, &v)| v * beta[c as usize])
            .sum()
    }
}

/// Solves the normal equations for every KPI off one Cholesky factorization.
pub fn fit(
    gram: GramSystem,
    term_names: Vec<String>,
    kpi_names: Vec<String>,
    opts: FitOptions,
) -> Result<FitResult> {
    let p = gram.p;
    let m = gram.m;
    if term_names.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "{} term names for {p} design columns",
            term_names.len()
        )));
    }
    if kpi_names.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} KPI names for {m} KPI columns",
            kpi_names.len()
        )));
    }

    let mut lhs = gram.xtwx.clone();
    if let Some(r) = opts.ridge {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::Invalid(format!(
                "ridge must be finite and ≥ 0, got {r}"
            )));
        }
        lhs.add_diagonal(r);
    }
    let chol = Cholesky::factor(&lhs).map_err(|f| f.into_error(&term_names))?;

    let mut beta = gram.xtwy.clone();
    chol.solve_columns_in_place(&mut beta);

    let df_resid = gram.sum_weights - p as f64;
    let mut sigma2 = Vec::with_capacity(m);
    let mut rss = Vec::with_capacity(m);
    for j in 0..m {
        let b = &beta[j * p..(j + 1) * p];
        let xb = gram.xtwx.mul_vec(b);
        let fitted: f64 = b.iter().zip(&xb).map(|(a, c)| a * c).sum();
        let cross: f64 = b.iter().zip(gram.xtwy(j)).map(|(a, c)| a * c).sum();
        let r = (gram.ytwy[j] - 2.0 * cross + fitted).max(0.0);
        rss.push(r);
        sigma2.push(if df_resid > 0.0 {
            r / df_resid
        } else {
            f64::NAN
        });
    }

    Ok(FitResult {
        term_names,
        kpi_names,
        beta,
        xtwx: gram.xtwx,
        chol,
        xtwx_inv: OnceLock::new(),
        sigma2,
        rss,
        sum_weights: gram.sum_weights,
        n_rows: gram.n_rows,
        df_resid,
        ridge: opts.ridge,
        cov: BTreeMap::new(),
    })
}

/// Convenience: fit straight from a compressed dataset.
pub fn fit_compressed(cd: &CompressedDataset, opts: FitOptions) -> Result<FitResult> {
    fit(
        gram_from_groups(cd),
        cd.term_names().to_vec(),
        cd.kpi_names().to_vec(),
        opts,
    )
}

/// The observations a sandwich estimator re-reads to form its meat.
pub enum FitData<'a> {
    Rows {
        rows: &'a DesignRows,
        kpis: Vec<&'a [f64]>,
        weights: Option<&'a [f64]>,
        /// Cluster code per row; required for [`CovKind::Clustered`].
        clusters: Option<&'a [u32]>,
    },
    Groups(&'a CompressedDataset),
    /// Homoskedastic covariance needs no second pass.
    None,
}

/// Computes and stores the requested covariance for every KPI.
pub fn covariance(fit: &mut FitResult, kind: CovKind, data: &FitData) -> Result<()> {
    if fit.has_covariance(kind) {
        return Ok(());
    }
    let per_kpi = match kind {
        CovKind::Homoskedastic => {
            if fit.df_resid <= 0.0 {
                return Err(Error::NoResidualDf {
                    residual_df: fit.df_resid,
                });
            }
            fit.sigma2
                .iter()
                .map(|&s2| fit.xtwx_inv().scaled(s2))
                .collect()
        }
        CovKind::Hc0 | CovKind::Hc1 => {
            let meats = hc_meats(fit, data)?;
            let scale = if kind == CovKind::Hc1 {
                let n = fit.sum_weights;
                let p = fit.n_cols() as f64;
                if n - p <= 0.0 {
                    return Err(Error::NoResidualDf { residual_df: n - p });
                }
                n / (n - p)
            } else {
                1.0
            };
            meats
                .iter()
                .map(|meat| {
                    let mut s = sandwich(fit.xtwx_inv(), meat);
                    s.scale(scale);
                    s
                })
                .collect()
        }
        CovKind::Clustered => {
            let (meats, n_clusters) = clustered_meats(fit, data)?;
            let g = n_clusters as f64;
            let n = fit.sum_weights;
            let p = fit.n_cols() as f64;
            if n_clusters < 2 {
                return Err(Error::Invalid(format!(
                    "clustered covariance needs at least 2 clusters, found {n_clusters}"
                )));
            }
            if n - p <= 0.0 {
                return Err(Error::NoResidualDf { residual_df: n - p });
            }
            let scale = (g / (g - 1.0)) * ((n - 1.0) / (n - p));
            meats
                .iter()
                .map(|meat| {
                    let mut s = sandwich(fit.xtwx_inv(), meat);
                    s.scale(scale);
                    s
                })
                .collect()
        }
    };
    fit.cov.insert(kind, per_kpi);
    Ok(())
}

/// Packed per-KPI meat accumulators for one chunk of observations.
struct MeatAcc {
    p: usize,
    meat: Vec<Acc>,
}

impl MeatAcc {
    fn new(p: usize, m: usize) -> Self {
        MeatAcc {
            p,
            meat: vec![Acc::new(); packed_len(p) * m],
        }
    }

    /// meat_j += r·xxᵀ on the pattern's support.
    #[inline]
    fn add(&mut self, kpi: usize, cols: &[u32], vals: &[f64], r: f64) {
        let base = kpi * packed_len(self.p);
        for (a, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
            let row = base + pidx(ca as usize, 0);
            let ra = r * va;
            for (&cb, &vb) in cols[..=a].iter().zip(vals) {
                self.meat[row + cb as usize].add(ra * vb);
            }
        }
    }

    fn merge(&mut self, other: MeatAcc) {
        for (a, b) in self.meat.iter_mut().zip(other.meat) {
            a.merge(b);
        }
    }

    fn finish(self, m: usize) -> Vec<SymMatrix> {
        let pl = packed_len(self.p);
        (0..m)
            .map(|j| {
                SymMatrix::from_packed(
                    self.p,
                    self.meat[j * pl..(j + 1) * pl]
                        .iter()
                        .map(Acc::value)
                        .collect(),
                )
            })
            .collect()
    }
}

/// Σ wᵢeᵢ²xᵢxᵢᵀ per KPI. From groups, the within-group squared-residual sum
/// is recovered exactly as Σy² − 2ŷΣy + n_g ŷ².
fn hc_meats(fit: &FitResult, data: &FitData) -> Result<Vec<SymMatrix>> {
    let p = fit.n_cols();
    let m = fit.n_kpis();
    let mut total = MeatAcc::new(p, m);
    match data {
        FitData::Rows {
            rows,
            kpis,
            weights,
            ..
        } => {
            check_row_inputs(rows.n_rows(), kpis, *weights)?;
            if rows.n_cols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "covariance data has {} design columns, fit has {p}",
                    rows.n_cols()
                )));
            }
            exec::reduce_chunks(
                rows.n_rows(),
                exec::ROW_CHUNK,
                |range| {
                    let mut acc = MeatAcc::new(p, m);
                    for i in range {
                        let (cols, vals) = rows.row(i);
                        let w = weights.map_or(1.0, |w| w[i]);
                        if w == 0.0 {
                            continue;
                        }
                        for (j, y) in kpis.iter().enumerate() {
                            let e = y[i] - fit.predict(cols, vals, j);
                            acc.add(j, cols, vals, w * e * e);
                        }
                    }
                    acc
                },
                |part| total.merge(part),
            );
        }
        FitData::Groups(cd) => {
            if cd.n_design_cols() != p || cd.n_kpis() != m {
                return Err(Error::DimensionMismatch(
                    "compressed data does not match the fit".into(),
                ));
            }
            exec::reduce_chunks(
                cd.n_groups(),
                exec::ROW_CHUNK,
                |range| {
                    let mut acc = MeatAcc::new(p, m);
                    for gi in range {
                        let g = cd.group(gi);
                        for j in 0..m {
                            let yhat = fit.predict(g.cols, g.vals, j);
                            let r = g.sum_y_sq[j] - 2.0 * yhat * g.sum_y[j]
                                + g.count as f64 * yhat * yhat;
                            acc.add(j, g.cols, g.vals, r);
                        }
                    }
                    acc
                },
                |part| total.merge(part),
            );
        }
        FitData::None => {
            return Err(Error::Invalid(
                "robust covariance needs the fitting data; pass rows or groups".into(),
            ))
        }
    }
    Ok(total.finish(m))
}

/// Score-vector scatter buffer for one cluster, tracking its sparse support.
struct ClusterScore {
    score: Vec<f64>,
    support: Vec<usize>,
}

impl ClusterScore {
    fn new(p: usize, m: usize) -> Self {
        ClusterScore {
            score: vec![0.0; p * m],
            support: Vec::new(),
        }
    }

    #[inline]
    fn add(&mut self, p: usize, kpi: usize, cols: &[u32], vals: &[f64], r: f64) {
        let base = kpi * p;
        for (&c, &v) in cols.iter().zip(vals) {
            let at = base + c as usize;
            if kpi == 0 {
                // Support is per-column, identical across KPIs.
                if self.score[at] == 0.0 && !self.support.contains(&(c as usize)) {
                    self.support.push(c as usize);
                }
            }
            self.score[at] += v * r;
        }
    }

    fn flush_into(&mut self, p: usize, m: usize, acc: &mut MeatAcc) {
        self.support.sort_unstable();
        for j in 0..m {
            let base = j * p;
            let pl = packed_len(p);
            let mbase = j * pl;
            for (a, &ca) in self.support.iter().enumerate() {
                let sa = self.score[base + ca];
                for &cb in &self.support[..=a] {
                    acc.meat[mbase + pidx(ca, cb)].add(sa * self.score[base + cb]);
                }
            }
        }
        for &c in &self.support {
            for j in 0..m {
                self.score[j * p + c] = 0.0;
            }
        }
        self.support.clear();
    }
}

/// Σ_c s_c s_cᵀ per KPI with s_c = Σ_{i∈c} wᵢeᵢxᵢ, plus the cluster count.
/// From groups, the within-group residual sum is Σy − n_g ŷ.
fn clustered_meats(fit: &FitResult, data: &FitData) -> Result<(Vec<SymMatrix>, usize)> {
    let p = fit.n_cols();
    let m = fit.n_kpis();
    match data {
        FitData::Rows {
            rows,
            kpis,
            weights,
            clusters,
        } => {
            let clusters = clusters.ok_or(Error::MissingClusterIds)?;
            check_row_inputs(rows.n_rows(), kpis, *weights)?;
            if clusters.len() != rows.n_rows() {
                return Err(Error::DimensionMismatch(format!(
                    "{} cluster ids for {} rows",
                    clusters.len(),
                    rows.n_rows()
                )));
            }
            // Group rows by cluster: stable sort keeps row order within
            // clusters, so accumulation order is reproducible.
            let mut order: Vec<u32> = (0..rows.n_rows() as u32).collect();
            order.sort_by_key(|&i| clusters[i as usize]);
            let runs = cluster_runs(&order, |i| clusters[i]);
            let n_clusters = runs.len();

            let mut total = MeatAcc::new(p, m);
            exec::reduce_chunks(
                runs.len(),
                256,
                |range| {
                    let mut acc = MeatAcc::new(p, m);
                    let mut score = ClusterScore::new(p, m);
                    for run in &runs[range] {
                        for &i in &order[run.clone()] {
                            let i = i as usize;
                            let (cols, vals) = rows.row(i);
                            let w = weights.map_or(1.0, |w| w[i]);
                            for (j, y) in kpis.iter().enumerate() {
                                let e = y[i] - fit.predict(cols, vals, j);
                                score.add(p, j, cols, vals, w * e);
                            }
                        }
                        score.flush_into(p, m, &mut acc);
                    }
                    acc
                },
                |part| total.merge(part),
            );
            Ok((total.finish(m), n_clusters))
        }
        FitData::Groups(cd) => {
            if !cd.has_clusters() {
                return Err(Error::MissingClusterIds);
            }
            if cd.n_design_cols() != p || cd.n_kpis() != m {
                return Err(Error::DimensionMismatch(
                    "compressed data does not match the fit".into(),
                ));
            }
            // Groups are already ordered cluster-major.
            let order: Vec<u32> = (0..cd.n_groups() as u32).collect();
            let runs = cluster_runs(&order, |g| cd.group(g).cluster.expect("clustered dataset"));
            let n_clusters = runs.len();

            let mut total = MeatAcc::new(p, m);
            exec::reduce_chunks(
                runs.len(),
                256,
                |range| {
                    let mut acc = MeatAcc::new(p, m);
                    let mut score = ClusterScore::new(p, m);
                    for run in &runs[range] {
                        for gi in run.clone() {
                            let g = cd.group(gi);
                            for j in 0..m {
                                let yhat = fit.predict(g.cols, g.vals, j);
                                let r = g.sum_y[j] - g.count as f64 * yhat;
                                score.add(p, j, g.cols, g.vals, r);
                            }
                        }
                        score.flush_into(p, m, &mut acc);
                    }
                    acc
                },
                |part| total.merge(part),
            );
            Ok((total.finish(m), n_clusters))
        }
        FitData::None => Err(Error::MissingClusterIds),
    }
}

/// Splits `order` (indices sorted by cluster) into per-cluster ranges.
fn cluster_runs(order: &[u32], cluster_of: impl Fn(usize) -> u32) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let c = cluster_of(order[start] as usize);
        let mut end = start + 1;
        while end < order.len() && cluster_of(order[end] as usize) == c {
            end += 1;
        }
        runs.push(start..end);
        start = end;
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::compress;
    use crate::design::{build_design, build_design_rows, build_layout, DesignSpec};
    use crate::ingest::{load_table_from_reader, ColumnKind, ColumnSpec, EncodedTable, Schema};

    fn schema(cols: &[(&str, ColumnKind)]) -> Schema {
        Schema::new(
            cols.iter()
                .map(|(n, k)| ColumnSpec {
                    name: n.to_string(),
                    kind: *k,
                })
                .collect(),
        )
        .unwrap()
    }

    fn two_arm() -> (EncodedTable, crate::design::ColumnLayout) {
        let s = schema(&[("a", ColumnKind::Treatment), ("y", ColumnKind::Kpi)]);
        let t = load_table_from_reader("a,y\nctl,1\nctl,3\ntrt,2\ntrt,6\n".as_bytes(), &s, "t")
            .unwrap();
        let layout = build_layout(&t, &DesignSpec::main_effects("a")).unwrap();
        (t, layout)
    }

    fn fit_two_arm() -> FitResult {
        let (t, layout) = two_arm();
        let m = build_design(&t, &layout).unwrap();
        let gram = accumulate_gram(&m, &t.kpi_columns(), None).unwrap();
        fit(
            gram,
            layout.names().to_vec(),
            vec!["y".into()],
            FitOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn gram_matches_hand_computed_normal_equations() {
        let (t, layout) = two_arm();
        let m = build_design(&t, &layout).unwrap();
        let gram = accumulate_gram(&m, &t.kpi_columns(), None).unwrap();
        assert_eq!(gram.xtwx().get(0, 0), 4.0);
        assert_eq!(gram.xtwx().get(1, 0), 2.0);
        assert_eq!(gram.xtwx().get(1, 1), 2.0);
        assert_eq!(gram.xtwy(0), &[12.0, 8.0]);
        assert_eq!(gram.sum_weights(), 4.0);
        assert_eq!(gram.n_rows(), 4);
    }

    #[test]
    fn two_arm_fit_recovers_group_means() {
        let f = fit_two_arm();
        assert_eq!(f.beta(0), &[2.0, 2.0]);
        assert_eq!(f.rss()[0], 10.0);
        assert_eq!(f.sigma2()[0], 5.0);
        assert_eq!(f.df_resid(), 2.0);
    }

    #[test]
    fn homoskedastic_covariance_matches_closed_form() {
        let mut f = fit_two_arm();
        covariance(&mut f, CovKind::Homoskedastic, &FitData::None).unwrap();
        let cov = f.cov(CovKind::Homoskedastic, 0).unwrap();
        // σ̂²(XᵀX)⁻¹ = 5·[[0.5, −0.5], [−0.5, 1.0]]
        assert_eq!(cov.get(0, 0), 2.5);
        assert_eq!(cov.get(0, 1), -2.5);
        assert_eq!(cov.get(1, 1), 5.0);
    }

    #[test]
    fn hc0_covariance_matches_hand_sandwich() {
        let (t, layout) = two_arm();
        let rows = build_design_rows(&t, &layout).unwrap();
        let kpis = t.kpi_columns();
        let gram = gram_from_rows(&rows, &kpis, None).unwrap();
        let mut f = fit(
            gram,
            layout.names().to_vec(),
            vec!["y".into()],
            FitOptions::default(),
        )
        .unwrap();
        let data = FitData::Rows {
            rows: &rows,
            kpis: kpis.clone(),
            weights: None,
            clusters: None,
        };
        covariance(&mut f, CovKind::Hc0, &data).unwrap();
        let cov = f.cov(CovKind::Hc0, 0).unwrap();
        // meat = [[10, 8], [8, 8]]; inv·meat·inv = [[0.5, −0.5], [−0.5, 2.5]]
        assert_eq!(cov.get(0, 0), 0.5);
        assert_eq!(cov.get(1, 0), -0.5);
        assert_eq!(cov.get(1, 1), 2.5);

        covariance(&mut f, CovKind::Hc1, &data).unwrap();
        let hc1 = f.cov(CovKind::Hc1, 0).unwrap();
        assert_eq!(hc1.get(1, 1), 5.0); // × n/(n−p) = 4/2
    }

    #[test]
    fn compressed_fit_equals_raw_fit_exactly_on_dyadic_data() {
        let (t, layout) = two_arm();
        let m = build_design(&t, &layout).unwrap();
        let raw = fit(
            accumulate_gram(&m, &t.kpi_columns(), None).unwrap(),
            layout.names().to_vec(),
            vec!["y".into()],
            FitOptions::default(),
        )
        .unwrap();
        let cd = compress(&t, &layout).unwrap();
        let packed = fit_compressed(&cd, FitOptions::default()).unwrap();
        assert_eq!(raw.beta(0), packed.beta(0));
        assert_eq!(raw.sigma2()[0], packed.sigma2()[0]);
        assert_eq!(raw.sum_weights(), packed.sum_weights());
    }

    #[test]
    fn weight_two_equals_row_duplication() {
        let s = schema(&[
            ("a", ColumnKind::Treatment),
            ("x", ColumnKind::Numeric),
            ("y", ColumnKind::Kpi),
        ]);
        let spec = DesignSpec {
            treatment: "a".into(),
            covariates: vec!["x".into()],
            interact_treatment_covariates: false,
            interact_treatment_time: false,
        };
        let once = load_table_from_reader("a,x,y\nctl,1,1\ntrt,2,5\nctl,3,2\n".as_bytes(), &s, "t")
            .unwrap();
        let twice = load_table_from_reader(
            "a,x,y\nctl,1,1\nctl,1,1\ntrt,2,5\ntrt,2,5\nctl,3,2\nctl,3,2\n".as_bytes(),
            &s,
            "t",
        )
        .unwrap();
        let l1 = build_layout(&once, &spec).unwrap();
        let l2 = build_layout(&twice, &spec).unwrap();
        let g1 = accumulate_gram(
            &build_design(&once, &l1).unwrap(),
            &once.kpi_columns(),
            Some(&[2.0, 2.0, 2.0]),
        )
        .unwrap();
        let g2 = accumulate_gram(
            &build_design(&twice, &l2).unwrap(),
            &twice.kpi_columns(),
            None,
        )
        .unwrap();
        assert_eq!(g1.xtwx().packed(), g2.xtwx().packed());
        assert_eq!(g1.xtwy(0), g2.xtwy(0));
        assert_eq!(g1.sum_weights(), g2.sum_weights());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn clustered_covariance_matches_direct_score_outer_products() {
        let s = schema(&[
            ("a", ColumnKind::Treatment),
            ("site", ColumnKind::ClusterId),
            ("y", ColumnKind::Kpi),
        ]);
        let t = load_table_from_reader(
            "a,site,y\nctl,s1,1\ntrt,s1,4\nctl,s2,2\ntrt,s2,7\nctl,s3,0\ntrt,s3,5\n".as_bytes(),
            &s,
            "t",
        )
        .unwrap();
        let layout = build_layout(&t, &DesignSpec::main_effects("a")).unwrap();
        let rows = build_design_rows(&t, &layout).unwrap();
        let kpis = t.kpi_columns();
        let clusters = t.cluster().unwrap().codes.clone();
        let mut f = fit(
            gram_from_rows(&rows, &kpis, None).unwrap(),
            layout.names().to_vec(),
            vec!["y".into()],
            FitOptions::default(),
        )
        .unwrap();
        let data = FitData::Rows {
            rows: &rows,
            kpis: kpis.clone(),
            weights: None,
            clusters: Some(&clusters),
        };
        covariance(&mut f, CovKind::Clustered, &data).unwrap();
        let got = f.cov(CovKind::Clustered, 0).unwrap();

        // Direct dense recomputation.
        let p = 2;
        let beta = f.beta(0).to_vec();
        let mut meat = [0.0; 3];
        for c in 0..3u32 {
            let mut s = [0.0; 2];
            for i in 0..t.n_rows() {
                if clusters[i] != c {
                    continue;
                }
                let (cols, vals) = rows.row(i);
                let e = kpis[0][i]
                    - cols
                        .iter()
                        .zip(vals)
                        .map(|(&cc, &v)| v * beta[cc as usize])
                        .sum::<f64>();
                for (&cc, &v) in cols.iter().zip(vals) {
                    s[cc as usize] += v * e;
                }
            }
            meat[0] += s[0] * s[0];
            meat[1] += s[1] * s[0];
            meat[2] += s[1] * s[1];
        }
        let inv = f.xtwx_inv();
        let mut want = vec![vec![0.0; p]; p];
        let meat_at = |i: usize, j: usize| {
            let (i, j) = if i >= j { (i, j) } else { (j, i) };
            meat[i * (i + 1) / 2 + j]
        };
        let n = 6.0;
        let scale = (3.0 / 2.0) * ((n - 1.0) / (n - 2.0));
        for i in 0..p {
            for j in 0..p {
                let mut v = 0.0;
                for k in 0..p {
                    for l in 0..p {
                        v += inv.get(i, k) * meat_at(k, l) * inv.get(l, j);
                    }
                }
                want[i][j] = v * scale;
            }
        }
        for i in 0..p {
            for j in 0..p {
                assert!(
                    (got.get(i, j) - want[i][j]).abs() <= 1e-12,
                    "({i},{j}): {} vs {}",
                    got.get(i, j),
                    want[i][j]
                );
            }
        }

        // The compressed path must agree.
        let cd = compress(&t, &layout).unwrap();
        let mut fc = fit_compressed(&cd, FitOptions::default()).unwrap();
        covariance(&mut fc, CovKind::Clustered, &FitData::Groups(&cd)).unwrap();
        let gotc = fc.cov(CovKind::Clustered, 0).unwrap();
        for i in 0..p {
            for j in 0..p {
                assert!((gotc.get(i, j) - got.get(i, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rank_deficiency_error_names_the_involved_terms() {
        let s = schema(&[
            ("a", ColumnKind::Treatment),
            ("x1", ColumnKind::Numeric),
            ("x2", ColumnKind::Numeric),
            ("y", ColumnKind::Kpi),
        ]);
        let t = load_table_from_reader(
            "a,x1,x2,y\nctl,1,2,1\ntrt,2,4,2\nctl,3,6,3\ntrt,4,8,4\n".as_bytes(),
            &s,
            "t",
        )
        .unwrap();
        let layout = build_layout(
            &t,
            &DesignSpec {
                treatment: "a".into(),
                covariates: vec!["x1".into(), "x2".into()],
                interact_treatment_covariates: false,
                interact_treatment_time: false,
            },
        )
        .unwrap();
        let m = build_design(&t, &layout).unwrap();
        let gram = accumulate_gram(&m, &t.kpi_columns(), None).unwrap();
        let err = fit(
            gram.clone(),
            layout.names().to_vec(),
            vec!["y".into()],
            FitOptions::default(),
        )
        .unwrap_err();
        match err {
            Error::RankDeficient { columns } => {
                assert!(columns.contains(&"x1".to_string()));
                assert!(columns.contains(&"x2".to_string()));
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        // Ridge makes the same system solvable.
        assert!(fit(
            gram,
            layout.names().to_vec(),
            vec!["y".into()],
            FitOptions { ridge: Some(1e-6) },
        )
        .is_ok());
    }

    #[test]
    fn saturated_fit_keeps_beta_but_refuses_homoskedastic_inference() {
        let s = schema(&[("a", ColumnKind::Treatment), ("y", ColumnKind::Kpi)]);
        let t = load_table_from_reader("a,y\nctl,1\ntrt,5\n".as_bytes(), &s, "t").unwrap();
        let layout = build_layout(&t, &DesignSpec::main_effects("a")).unwrap();
        let m = build_design(&t, &layout).unwrap();
        let mut f = fit(
            accumulate_gram(&m, &t.kpi_columns(), None).unwrap(),
            layout.names().to_vec(),
            vec!["y".into()],
            FitOptions::default(),
        )
        .unwrap();
        assert!((f.beta(0)[0] - 1.0).abs() <= 1e-12);
        assert!((f.beta(0)[1] - 4.0).abs() <= 1e-12);
        assert!(f.sigma2()[0].is_nan());
        assert!(matches!(
            covariance(&mut f, CovKind::Homoskedastic, &FitData::None),
            Err(Error::NoResidualDf { .. })
        ));
    }

    #[test]
    fn multi_kpi_fit_equals_stacked_single_fits() {
        let s = schema(&[
            ("a", ColumnKind::Treatment),
            ("y1", ColumnKind::Kpi),
            ("y2", ColumnKind::Kpi),
        ]);
        let t = load_table_from_reader(
            "a,y1,y2\nctl,1,9\nctl,3,7\ntrt,2,1\ntrt,6,3\n".as_bytes(),
            &s,
            "t",
        )
        .unwrap();
        let layout = build_layout(&t, &DesignSpec::main_effects("a")).unwrap();
        let m = build_design(&t, &layout).unwrap();
        let kpis = t.kpi_columns();
        let joint = fit(
            accumulate_gram(&m, &kpis, None).unwrap(),
            layout.names().to_vec(),
            vec!["y1".into(), "y2".into()],
            FitOptions::default(),
        )
        .unwrap();
        for (j, y) in kpis.iter().enumerate() {
            let single = fit(
                accumulate_gram(&m, &[y], None).unwrap(),
                layout.names().to_vec(),
                vec![format!("y{}", j + 1)],
                FitOptions::default(),
            )
            .unwrap();
            assert_eq!(joint.beta(j), single.beta(0));
            assert_eq!(joint.sigma2()[j], single.sigma2()[0]);
        }
        assert_eq!(joint.beta(0), &[2.0, 2.0]);
        assert_eq!(joint.beta(1), &[8.0, -6.0]);
    }

    #[test]
    fn cov_lookup_before_computation_is_an_error() {
        let f = fit_two_arm();
        assert!(matches!(
            f.cov(CovKind::Hc0, 0),
            Err(Error::CovarianceUnavailable { .. })
        ));
    }

    #[test]
    fn subset_gram_matches_filtered_accumulation() {
        let (t, layout) = two_arm();
        let rows = build_design_rows(&t, &layout).unwrap();
        let kpis = t.kpi_columns();
        let sub = gram_from_row_subset(&rows, &kpis, &[1, 3], &[2.0, 1.0]).unwrap();
        // Row 1 (ctl, y=3) at weight 2; row 3 (trt, y=6) at weight 1.
        assert_eq!(sub.xtwx().get(0, 0), 3.0);
        assert_eq!(sub.xtwx().get(1, 1), 1.0);
        assert_eq!(sub.xtwy(0), &[12.0, 6.0]);
        assert_eq!(sub.n_rows(), 2);
    }
}
