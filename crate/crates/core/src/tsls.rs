//! Two-stage least squares for endogenous treatments.
//!
//! The first stage regresses each non-reference treatment indicator on
//! W = [1 | Z | X]; the second stage replaces the treatment block of
//! M = [1 | A | X] with its fitted values. Both stages are solved from a
//! single Gram matrix of the combined columns U = [1 | A | Z | X], streamed
//! straight from the table: with Â = WΓ̂, every block of M̂ᵀM̂ and M̂ᵀy is a
//! product of U-submatrices and the small dense Γ̂ (ÂᵀÂ = Γ̂ᵀWᵀWΓ̂,
//! Âᵀv = Γ̂ᵀWᵀv), so neither Â nor M̂ is ever written out row by row.
//! Residual variance comes from y − Mβ̂ with the *original* treatment
//! columns, the standard 2SLS correction.

use crate::design::Segment;
use crate::effects::{z_score, EffectEstimate};
use crate::error::{Error, Result};
use crate::ingest::{CatColumn, ColumnKind, EncodedTable};
use crate::linalg::{gauss_solve, Cholesky, SymMatrix};
use crate::solver::{gram_from_pattern, CovKind, GramSystem};
use crate::stats::Z_95;

/// First-stage F below this is reported as a weak instrument.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;

/// Row guard for the dense reference implementation.
pub const TSLS_ORACLE_MAX_ROWS: usize = 100_000;

/// Both stages of a 2SLS fit, for every KPI at once.
#[derive(Debug, Clone)]
pub struct TslsFit {
    /// Second-stage column names, ordered [intercept | A | X].
    term_names: Vec<String>,
    /// First-stage column names, ordered [intercept | Z | X].
    first_stage_names: Vec<String>,
    kpi_names: Vec<String>,
    treatment_name: String,
    /// All treatment levels; level 0 is the reference.
    treatment_levels: Vec<String>,
    /// KPI-major second-stage coefficients: KPI j occupies `j·p..(j+1)·p`.
    beta: Vec<f64>,
    /// Endogenous-column-major first-stage coefficients: the indicator for
    /// treatment level k occupies `(k−1)·q..k·q`.
    gamma: Vec<f64>,
    /// (M̂ᵀM̂)⁻¹.
    mhat_inv: SymMatrix,
    /// Per-KPI residual variance from the original-treatment residuals.
    sigma2: Vec<f64>,
    rss: Vec<f64>,
    /// Per non-reference treatment level: F for excluding the instruments
    /// from its first stage.
    first_stage_f: Vec<f64>,
    n_rows: u64,
}

impl TslsFit {
    pub fn n_cols(&self) -> usize {
        self.term_names.len()
    }

    pub fn n_first_stage_cols(&self) -> usize {
        self.first_stage_names.len()
    }

    pub fn n_kpis(&self) -> usize {
        self.kpi_names.len()
    }

    pub fn term_names(&self) -> &[String] {
        &self.term_names
    }

    pub fn first_stage_names(&self) -> &[String] {
        &self.first_stage_names
    }

    pub fn kpi_names(&self) -> &[String] {
        &self.kpi_names
    }

    pub fn treatment_name(&self) -> &str {
        &self.treatment_name
    }

    pub fn treatment_levels(&self) -> &[String] {
        &self.treatment_levels
    }

    pub fn beta(&self, kpi: usize) -> &[f64] {
        let p = self.n_cols();
        &self.beta[kpi * p..(kpi + 1) * p]
    }

    /// First-stage coefficients for the indicator of treatment level `k`
    /// (1-based; level 0 is the reference and has no first stage).
    pub fn gamma(&self, k: usize) -> &[f64] {
        assert!(k >= 1, "the reference level has no first stage");
        let q = self.n_first_stage_cols();
        &self.gamma[(k - 1) * q..k * q]
    }

    pub fn first_stage_f(&self) -> &[f64] {
        &self.first_stage_f
    }

    /// Non-reference levels whose first-stage F falls below
    /// [`WEAK_INSTRUMENT_F`], with the statistic. Advisory, never fatal.
    pub fn weak_first_stages(&self) -> Vec<(String, f64)> {
        self.first_stage_f
            .iter()
            .enumerate()
            .filter(|(_, f)| **f < WEAK_INSTRUMENT_F)
            .map(|(i, f)| (self.treatment_levels[i + 1].clone(), *f))
            .collect()
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn rss(&self) -> &[f64] {
        &self.rss
    }

    pub fn n_rows(&self) -> u64 {
        self.n_rows
    }

    pub fn df_resid(&self) -> f64 {
        self.n_rows as f64 - self.n_cols() as f64
    }

    pub fn mhat_inv(&self) -> &SymMatrix {
        &self.mhat_inv
    }

    /// σ̂²_kpi · (M̂ᵀM̂)⁻¹ for one coefficient.
    pub fn coef_variance(&self, col: usize, kpi: usize) -> f64 {
        self.sigma2[kpi] * self.mhat_inv.get(col, col)
    }

    /// The local average treatment effect per non-reference level and KPI:
    /// the coefficient on the instrumented treatment indicator.
    pub fn late_estimates(&self) -> Result<Vec<EffectEstimate>> {
        let df = self.df_resid();
        if df <= 0.0 {
            return Err(Error::NoResidualDf { residual_df: df });
        }
        let mut out = Vec::new();
        for k in 1..self.treatment_levels.len() {
            for (j, kpi) in self.kpi_names.iter().enumerate() {
                let point = self.beta(j)[k];
                let se = self.coef_variance(k, j).max(0.0).sqrt();
                out.push(EffectEstimate {
                    kpi: kpi.clone(),
                    treatment: self.treatment_levels[k].clone(),
                    segment: Segment::population().label(),
                    period: None,
                    point,
                    se,
                    z: z_score(point, se),
                    ci_lo: point - Z_95 * se,
                    ci_hi: point + Z_95 * se,
                    n: self.n_rows,
                    cov_kind: CovKind::Homoskedastic.as_str().to_string(),
                });
            }
        }
        Ok(out)
    }
}

/// One covariate column of W and M: either a numeric column or a one-hot
/// indicator for a non-reference level.
enum Slot<'a> {
    Numeric(&'a [f64]),
    Dummy { codes: &'a [u32], level: u32 },
}

impl Slot<'_> {
    #[inline]
    fn value(&self, i: usize) -> f64 {
        match self {
            Slot::Numeric(v) => v[i],
            Slot::Dummy { codes, level } => {
                if codes[i] == *level {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Validated column plan shared by the streaming fit and the dense oracle.
/// U-column order is [intercept | A (K−1) | Z | X-slots].
struct Plan<'a> {
    treatment: &'a CatColumn,
    treatment_name: String,
    z: Vec<(String, &'a [f64])>,
    x: Vec<(String, Slot<'a>)>,
    kpi_names: Vec<String>,
    kpis: Vec<&'a [f64]>,
}

impl<'a> Plan<'a> {
    fn new(table: &'a EncodedTable, instruments: &[String], covariates: &[String]) -> Result<Self> {
        if instruments.is_empty() {
            return Err(Error::NoInstruments);
        }
        let schema = table.schema();
        let mut z = Vec::with_capacity(instruments.len());
        for (i, name) in instruments.iter().enumerate() {
            if instruments[..i].contains(name) {
                return Err(Error::Invalid(format!("duplicate instrument `{name}`")));
            }
            if covariates.contains(name) {
                return Err(Error::Invalid(format!(
                    "column `{name}` cannot be both an instrument and a covariate"
                )));
            }
            match schema.kind_of(name) {
                None => return Err(Error::UnknownColumn(name.clone())),
                Some(ColumnKind::Instrument) => {}
                Some(other) => {
                    return Err(Error::Invalid(format!(
                        "column `{name}` has kind {}; declare it as an instrument to use it in \
                         the first stage",
                        other.as_str()
                    )))
                }
            }
            z.push((name.clone(), table.numeric(name)?));
        }

        let mut x = Vec::new();
        for (i, name) in covariates.iter().enumerate() {
            if covariates[..i].contains(name) {
                return Err(Error::Invalid(format!("duplicate covariate `{name}`")));
            }
            match schema.kind_of(name) {
                None => return Err(Error::UnknownColumn(name.clone())),
                Some(ColumnKind::Numeric) => {
                    x.push((name.clone(), Slot::Numeric(table.numeric(name)?)));
                }
                Some(ColumnKind::Categorical) => {
                    let cat = table.categorical(name)?;
                    for level in 1..cat.n_levels() as u32 {
                        x.push((
                            format!("{name}[{}]", cat.level(level)),
                            Slot::Dummy {
                                codes: &cat.codes,
                                level,
                            },
                        ));
                    }
                }
                Some(other) => {
                    return Err(Error::Invalid(format!(
                        "column `{name}` has kind {}, which cannot be a covariate",
                        other.as_str()
                    )))
                }
            }
        }

        let treatment = table.treatment();
        let treatment_name = schema.treatment_name().to_string();
        if treatment.n_levels() < 2 {
            return Err(Error::FewerThanTwoTreatmentLevels {
                column: treatment_name,
                found: treatment.n_levels(),
            });
        }
        Ok(Plan {
            treatment,
            treatment_name,
            z,
            x,
            kpi_names: table.kpi_names().iter().map(|s| s.to_string()).collect(),
            kpis: table.kpi_columns(),
        })
    }

    fn n_endog(&self) -> usize {
        self.treatment.n_levels() - 1
    }

    fn n_u_cols(&self) -> usize {
        1 + self.n_endog() + self.z.len() + self.x.len()
    }

    fn z_start(&self) -> usize {
        1 + self.n_endog()
    }

    fn x_start(&self) -> usize {
        self.z_start() + self.z.len()
    }

    /// U indices of W = [1 | Z | X].
    fn w_indices(&self) -> Vec<usize> {
        let mut idx = vec![0];
        idx.extend(self.z_start()..self.n_u_cols());
        idx
    }

    /// U indices of M = [1 | A | X].
    fn m_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..=self.n_endog()).collect();
        idx.extend(self.x_start()..self.n_u_cols());
        idx
    }

    /// U indices of the restricted first stage [1 | X].
    fn restricted_indices(&self) -> Vec<usize> {
        let mut idx = vec![0];
        idx.extend(self.x_start()..self.n_u_cols());
        idx
    }

    fn w_names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        names.extend(self.z.iter().map(|(n, _)| n.to_string()));
        names.extend(self.x.iter().map(|(n, _)| n.clone()));
        names
    }

    fn m_names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        for level in 1..self.treatment.n_levels() as u32 {
            names.push(format!(
                "{}[{}]",
                self.treatment_name,
                self.treatment.level(level)
            ));
        }
        names.extend(self.x.iter().map(|(n, _)| n.clone()));
        names
    }

    /// Sparse U row `i`, column indices ascending.
    #[inline]
    fn fill(&self, i: usize, cols: &mut Vec<u32>, vals: &mut Vec<f64>) {
        cols.clear();
        vals.clear();
        cols.push(0);
        vals.push(1.0);
        let code = self.treatment.codes[i];
        if code > 0 {
            cols.push(code);
            vals.push(1.0);
        }
        for (s, (_, col)) in self.z.iter().enumerate() {
            let v = col[i];
            if v != 0.0 {
                cols.push((self.z_start() + s) as u32);
                vals.push(v);
            }
        }
        for (s, (_, slot)) in self.x.iter().enumerate() {
            let v = slot.value(i);
            if v != 0.0 {
                cols.push((self.x_start() + s) as u32);
                vals.push(v);
            }
        }
    }

    /// Dense U row `i` written into `out` (length `n_u_cols`).
    fn fill_dense(&self, i: usize, out: &mut [f64]) {
        out.fill(0.0);
        out[0] = 1.0;
        let code = self.treatment.codes[i] as usize;
        if code > 0 {
            out[code] = 1.0;
        }
        for (s, (_, col)) in self.z.iter().enumerate() {
            out[self.z_start() + s] = col[i];
        }
        for (s, (_, slot)) in self.x.iter().enumerate() {
            out[self.x_start() + s] = slot.value(i);
        }
    }
}

/// Fits 2SLS for every KPI by Gram composition over U = [1 | A | Z | X].
pub fn fit_2sls(
    table: &EncodedTable,
    instruments: &[String],
    covariates: &[String],
) -> Result<TslsFit> {
    let plan = Plan::new(table, instruments, covariates)?;
    let gram = gram_from_pattern(
        table.n_rows(),
        plan.n_u_cols(),
        &plan.kpis,
        None,
        |i, cols, vals| plan.fill(i, cols, vals),
    )?;
    compose(&plan, &gram)
}

fn compose(plan: &Plan<'_>, gram: &GramSystem) -> Result<TslsFit> {
    let g = gram.xtwx();
    let n = gram.sum_weights();
    let k_endog = plan.n_endog();
    let w_idx = plan.w_indices();
    let m_idx = plan.m_indices();
    let q = w_idx.len();
    let p = m_idx.len();
    let m_kpis = plan.kpis.len();
    let w_names = plan.w_names();
    let m_names = plan.m_names();

    let www = g.submatrix(&w_idx);
    let chol_w = Cholesky::factor(&www).map_err(|rf| rf.into_error(&w_names))?;

    // First stage, one solve per endogenous indicator against the shared
    // factor. `wta[k]` keeps WᵀA_k around for the residual identities below.
    let mut gamma = Vec::with_capacity(k_endog * q);
    let mut wta = Vec::with_capacity(k_endog);
    for k in 1..=k_endog {
        let rhs: Vec<f64> = w_idx.iter().map(|&wi| g.get(wi, k)).collect();
        gamma.extend_from_slice(&chol_w.solve(&rhs));
        wta.push(rhs);
    }

    // M̂ᵀM̂ from U-blocks: non-endogenous entries carry over unchanged, and
    // every entry touching Â routes through Γ̂.
    let wtv: Vec<Vec<f64>> = m_idx
        .iter()
        .map(|&ui| w_idx.iter().map(|&wi| g.get(wi, ui)).collect())
        .collect();
    let wwg: Vec<Vec<f64>> = (0..k_endog)
        .map(|k| www.mul_vec(&gamma[k * q..(k + 1) * q]))
        .collect();
    let endog_of = |mi: usize| -> Option<usize> { (1..=k_endog).contains(&mi).then(|| mi - 1) };
    let mut mhat = SymMatrix::zeros(p);
    for i in 0..p {
        for j in 0..=i {
            let v = match (endog_of(i), endog_of(j)) {
                (None, None) => g.get(m_idx[i], m_idx[j]),
                (Some(k), None) => dot(&gamma[k * q..(k + 1) * q], &wtv[j]),
                (None, Some(l)) => dot(&gamma[l * q..(l + 1) * q], &wtv[i]),
                (Some(k), Some(l)) => dot(&gamma[k * q..(k + 1) * q], &wwg[l]),
            };
            mhat.set(i, j, v);
        }
    }
    let chol_m = Cholesky::factor(&mhat).map_err(|rf| rf.into_error(&m_names))?;
    let mhat_inv = chol_m.inverse();

    // Second stage per KPI, then residuals against the original columns.
    let mtm = g.submatrix(&m_idx);
    let df = n - p as f64;
    let mut beta = Vec::with_capacity(m_kpis * p);
    let mut rss = Vec::with_capacity(m_kpis);
    let mut sigma2 = Vec::with_capacity(m_kpis);
    for j in 0..m_kpis {
        let gy = gram.xtwy(j);
        let mut rhs: Vec<f64> = m_idx.iter().map(|&ui| gy[ui]).collect();
        let wty: Vec<f64> = w_idx.iter().map(|&wi| gy[wi]).collect();
        for k in 0..k_endog {
            rhs[1 + k] = dot(&gamma[k * q..(k + 1) * q], &wty);
        }
        let b = chol_m.solve(&rhs);
        let mty: Vec<f64> = m_idx.iter().map(|&ui| gy[ui]).collect();
        let fitted = dot(&b, &mtm.mul_vec(&b));
        let r = (gram.ytwy(j) - 2.0 * dot(&b, &mty) + fitted).max(0.0);
        rss.push(r);
        sigma2.push(if df > 0.0 { r / df } else { f64::NAN });
        beta.extend_from_slice(&b);
    }

    // First-stage F for excluding the instruments: restricted regression of
    // each indicator on [1 | X]. Normal equations give the residual sums
    // directly as aᵀa − γ̂ᵀWᵀa.
    let r_idx = plan.restricted_indices();
    let chol_r = Cholesky::factor(&g.submatrix(&r_idx)).map_err(|rf| {
        let names: Vec<String> = std::iter::once("intercept".to_string())
            .chain(plan.x.iter().map(|(n, _)| n.clone()))
            .collect();
        rf.into_error(&names)
    })?;
    let df1 = plan.z.len() as f64;
    let df2 = n - q as f64;
    let mut first_stage_f = Vec::with_capacity(k_endog);
    for k in 0..k_endog {
        let ata = g.get(1 + k, 1 + k);
        let rss_u = ata - dot(&gamma[k * q..(k + 1) * q], &wta[k]);
        let rta: Vec<f64> = r_idx.iter().map(|&ri| g.get(ri, 1 + k)).collect();
        let rss_r = ata - dot(&chol_r.solve(&rta), &rta);
        first_stage_f.push(f_statistic(rss_r, rss_u, ata, df1, df2));
    }

    Ok(TslsFit {
        term_names: m_names,
        first_stage_names: w_names,
        kpi_names: plan.kpi_names.clone(),
        treatment_name: plan.treatment_name.clone(),
        treatment_levels: plan.treatment.levels.clone(),
        beta,
        gamma,
        mhat_inv,
        sigma2,
        rss,
        first_stage_f,
        n_rows: gram.n_rows(),
    })
}

/// F for the instrument exclusion restriction. A perfectly predicted
/// indicator leaves zero unrestricted residual, so the denominator is
/// floored at machine precision relative to aᵀa to keep the statistic
/// finite; with no residual degrees of freedom the first stage is saturated
/// and reported as 0 (maximally weak) rather than undefined.
fn f_statistic(rss_r: f64, rss_u: f64, ata: f64, df1: f64, df2: f64) -> f64 {
    if df2 <= 0.0 {
        return 0.0;
    }
    let num = (rss_r - rss_u).max(0.0) / df1;
    let den = rss_u.max(f64::EPSILON * ata.max(1.0)) / df2;
    num / den
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Textbook dense reference: materializes W, Â, and M̂ row by row and solves
/// both stages with Gauss–Jordan elimination. Deliberately shares no linear
/// algebra with [`fit_2sls`] beyond the column plan.
pub fn dense_2sls_oracle(
    table: &EncodedTable,
    instruments: &[String],
    covariates: &[String],
) -> Result<TslsFit> {
    let n = table.n_rows();
    if n > TSLS_ORACLE_MAX_ROWS {
        return Err(Error::TooLargeForOracle {
            n,
            limit: TSLS_ORACLE_MAX_ROWS,
        });
    }
    let plan = Plan::new(table, instruments, covariates)?;
    let k_endog = plan.n_endog();
    let u_cols = plan.n_u_cols();
    let w_idx = plan.w_indices();
    let m_idx = plan.m_indices();
    let q = w_idx.len();
    let p = m_idx.len();
    let m_kpis = plan.kpis.len();

    let mut u = vec![0.0; n * u_cols];
    for i in 0..n {
        plan.fill_dense(i, &mut u[i * u_cols..(i + 1) * u_cols]);
    }
    let w = |i: usize, j: usize| u[i * u_cols + w_idx[j]];
    let m_orig = |i: usize, j: usize| u[i * u_cols + m_idx[j]];

    // First stage: γ̂ solving (WᵀW)Γ = WᵀA.
    let mut wtw = vec![0.0; q * q];
    for i in 0..n {
        for a in 0..q {
            for b in 0..q {
                wtw[a * q + b] += w(i, a) * w(i, b);
            }
        }
    }
    let mut wta = vec![0.0; q * k_endog];
    for i in 0..n {
        let code = plan.treatment.codes[i] as usize;
        if code > 0 {
            for a in 0..q {
                wta[(code - 1) * q + a] += w(i, a);
            }
        }
    }
    let mut gamma = wta.clone();
    gauss_solve(&mut wtw.clone(), q, &mut gamma, k_endog)?;

    // Explicit fitted treatments and the dense second-stage matrix.
    let mut mhat = vec![0.0; n * p];
    for i in 0..n {
        mhat[i * p] = 1.0;
        for k in 0..k_endog {
            let mut v = 0.0;
            for a in 0..q {
                v += w(i, a) * gamma[k * q + a];
            }
            mhat[i * p + 1 + k] = v;
        }
        for j in (1 + k_endog)..p {
            mhat[i * p + j] = m_orig(i, j);
        }
    }
    let mut mtm = vec![0.0; p * p];
    for i in 0..n {
        let row = &mhat[i * p..(i + 1) * p];
        for a in 0..p {
            for b in 0..p {
                mtm[a * p + b] += row[a] * row[b];
            }
        }
    }
    let mut mty = vec![0.0; p * m_kpis];
    for (j, y) in plan.kpis.iter().enumerate() {
        for i in 0..n {
            let row = &mhat[i * p..(i + 1) * p];
            for a in 0..p {
                mty[j * p + a] += row[a] * y[i];
            }
        }
    }
    let mut beta = mty.clone();
    gauss_solve(&mut mtm.clone(), p, &mut beta, m_kpis)?;

    let mut inv = vec![0.0; p * p];
    for a in 0..p {
        inv[a * p + a] = 1.0;
    }
    gauss_solve(&mut mtm.clone(), p, &mut inv, p)?;
    let mut mhat_inv = SymMatrix::zeros(p);
    for a in 0..p {
        for b in 0..=a {
            mhat_inv.set(a, b, 0.5 * (inv[b * p + a] + inv[a * p + b]));
        }
    }

    // Residuals against the original treatment columns.
    let df = n as f64 - p as f64;
    let mut rss = vec![0.0; m_kpis];
    for (j, y) in plan.kpis.iter().enumerate() {
        for i in 0..n {
            let mut fit = 0.0;
            for a in 0..p {
                fit += m_orig(i, a) * beta[j * p + a];
            }
            let e = y[i] - fit;
            rss[j] += e * e;
        }
    }
    let sigma2: Vec<f64> = rss
        .iter()
        .map(|r| if df > 0.0 { r / df } else { f64::NAN })
        .collect();

    // First-stage F from explicit restricted and unrestricted residuals.
    let r_cols = 1 + plan.x.len();
    let mut rtr = vec![0.0; r_cols * r_cols];
    let r_val = |i: usize, a: usize| {
        if a == 0 {
            1.0
        } else {
            plan.x[a - 1].1.value(i)
        }
    };
    for i in 0..n {
        for a in 0..r_cols {
            for b in 0..r_cols {
                rtr[a * r_cols + b] += r_val(i, a) * r_val(i, b);
            }
        }
    }
    let df1 = plan.z.len() as f64;
    let df2 = n as f64 - q as f64;
    let mut first_stage_f = Vec::with_capacity(k_endog);
    for k in 0..k_endog {
        let a_ind = |i: usize| (plan.treatment.codes[i] as usize == k + 1) as u64 as f64;
        let mut rta = vec![0.0; r_cols];
        let mut ata = 0.0;
        for i in 0..n {
            let ai = a_ind(i);
            ata += ai * ai;
            for (a, acc) in rta.iter_mut().enumerate() {
                *acc += r_val(i, a) * ai;
            }
        }
        let mut gr = rta.clone();
        gauss_solve(&mut rtr.clone(), r_cols, &mut gr, 1)?;
        let (mut rss_u, mut rss_r) = (0.0, 0.0);
        for i in 0..n {
            let mut fit_u = 0.0;
            for a in 0..q {
                fit_u += w(i, a) * gamma[k * q + a];
            }
            let mut fit_r = 0.0;
            for (a, &g) in gr.iter().enumerate() {
                fit_r += r_val(i, a) * g;
            }
            rss_u += (a_ind(i) - fit_u).powi(2);
            rss_r += (a_ind(i) - fit_r).powi(2);
        }
        first_stage_f.push(f_statistic(rss_r, rss_u, ata, df1, df2));
    }

    Ok(TslsFit {
        term_names: plan.m_names(),
        first_stage_names: plan.w_names(),
        kpi_names: plan.kpi_names.clone(),
        treatment_name: plan.treatment_name.clone(),
        treatment_levels: plan.treatment.levels.clone(),
        beta,
        gamma,
        mhat_inv,
        sigma2,
        rss,
        first_stage_f,
        n_rows: n as u64,
    })
}
