//! Seeded synthetic tables for tests and benchmarks.
//!
//! The generator draws every coefficient and every row from a single
//! ChaCha8 stream, so a `(config, seed)` pair names one exact dataset.
//! The outcome model mirrors what the engine fits — arm effects, segment
//! and numeric main effects, arm×covariate and arm×period interactions,
//! optional cluster random shifts — with no terms the design matrix
//! cannot represent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::design::DesignSpec;
use crate::error::Result;
use crate::ingest::{
    CatColumn, Column, ColumnKind, ColumnSpec, EncodedTable, PeriodColumn, Schema,
};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_rows: usize,
    /// Arms including the control; must be at least 2.
    pub n_treatments: usize,
    /// Levels of the categorical segment column; 0 drops the column.
    pub segment_levels: usize,
    /// Numeric covariates x0, x1, …
    pub n_numeric: usize,
    /// 0 draws numeric covariates continuously; otherwise values come from
    /// an evenly spaced grid with this many points, bounding the number of
    /// distinct design rows.
    pub numeric_distinct: usize,
    pub n_kpis: usize,
    /// Weekly periods 1..=n; fewer than 2 drops the time axis.
    pub n_periods: usize,
    /// Clusters with shared random shifts; 0 drops the column.
    pub n_clusters: usize,
    /// Scale of the i.i.d. noise on every KPI.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_rows: 1000,
            n_treatments: 2,
            segment_levels: 4,
            n_numeric: 2,
            numeric_distinct: 0,
            n_kpis: 1,
            n_periods: 0,
            n_clusters: 0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn has_segment(&self) -> bool {
        self.segment_levels > 0
    }

    pub fn has_periods(&self) -> bool {
        self.n_periods >= 2
    }

    pub fn has_clusters(&self) -> bool {
        self.n_clusters > 0
    }

    /// The model the generated table is meant to be fitted with: all
    /// covariates interacted with the treatment, plus treatment×period
    /// when the table has a time axis.
    pub fn design_spec(&self) -> DesignSpec {
        let mut covariates = Vec::new();
        if self.has_segment() {
            covariates.push("seg".to_string());
        }
        for j in 0..self.n_numeric {
            covariates.push(format!("x{j}"));
        }
        DesignSpec {
            treatment: "arm".into(),
            covariates,
            interact_treatment_covariates: true,
            interact_treatment_time: self.has_periods(),
        }
    }
}

/// Zero-padded labels ("s00".."s99") so lexicographic order matches the
/// numeric one and code i always means label i.
fn labels(prefix: &str, n: usize) -> Vec<String> {
    let width = (n.max(2) - 1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn synth_table(cfg: &SynthConfig) -> Result<EncodedTable> {
    assert!(cfg.n_treatments >= 2, "need a control and at least one arm");
    assert!(cfg.n_kpis >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_rows;
    let k = cfg.n_treatments;
    let s = cfg.segment_levels;
    let t = if cfg.has_periods() { cfg.n_periods } else { 0 };

    // Coefficients first, so they depend only on the seed and the shape.
    let m = cfg.n_kpis;
    let draw =
        |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> { (0..len).map(|_| normal(rng)).collect() };
    let intercepts = draw(&mut rng, m);
    let arm_effects = draw(&mut rng, m * k);
    let seg_effects = draw(&mut rng, m * s.max(1));
    let slopes = draw(&mut rng, m * cfg.n_numeric);
    let arm_seg = draw(&mut rng, m * k * s.max(1));
    let arm_slope = draw(&mut rng, m * k * cfg.n_numeric);
    let arm_period = draw(&mut rng, m * k * t.max(1));
    let cluster_shift: Vec<f64> = (0..cfg.n_clusters)
        .map(|_| 0.5 * normal(&mut rng))
        .collect();

    let mut arm_codes = Vec::with_capacity(n);
    let mut seg_codes = Vec::with_capacity(if s > 0 { n } else { 0 });
    let mut numeric: Vec<Vec<f64>> = vec![Vec::with_capacity(n); cfg.n_numeric];
    let mut period_codes = Vec::with_capacity(if t > 0 { n } else { 0 });
    let mut cluster_codes = Vec::with_capacity(if cfg.n_clusters > 0 { n } else { 0 });
    let mut kpis: Vec<Vec<f64>> = vec![Vec::with_capacity(n); m];

    for _ in 0..n {
        let arm = rng.random_range(0..k);
        arm_codes.push(arm as u32);
        let seg = if s > 0 {
            let v = rng.random_range(0..s);
            seg_codes.push(v as u32);
            v
        } else {
            0
        };
        let mut x = vec![0.0; cfg.n_numeric];
        for (j, slot) in x.iter_mut().enumerate() {
            let v = if cfg.numeric_distinct > 0 {
                let grid = cfg.numeric_distinct;
                let step = rng.random_range(0..grid);
                -1.0 + 2.0 * step as f64 / (grid - 1).max(1) as f64
            } else {
                rng.random_range(-1.0..1.0)
            };
            *slot = v;
            numeric[j].push(v);
        }
        let period = if t > 0 {
            let v = rng.random_range(0..t);
            period_codes.push(v as u32);
            v
        } else {
            0
        };
        let cluster = if cfg.n_clusters > 0 {
            let v = rng.random_range(0..cfg.n_clusters);
            cluster_codes.push(v as u32);
            v
        } else {
            0
        };

        for q in 0..m {
            let mut y = intercepts[q];
            if arm > 0 {
                y += arm_effects[q * k + arm];
            }
            if s > 0 {
                y += seg_effects[q * s + seg];
                if arm > 0 {
                    y += arm_seg[(q * k + arm) * s + seg];
                }
            }
            for (j, &v) in x.iter().enumerate() {
                y += slopes[q * cfg.n_numeric + j] * v;
                if arm > 0 {
                    y += arm_slope[(q * k + arm) * cfg.n_numeric + j] * v;
                }
            }
            if t > 0 && arm > 0 && period > 0 {
                y += arm_period[(q * k + arm) * t + period];
            }
            if cfg.n_clusters > 0 {
                y += cluster_shift[cluster];
            }
            y += cfg.noise * normal(&mut rng);
            kpis[q].push(y);
        }
    }

    let mut specs = vec![ColumnSpec {
        name: "arm".into(),
        kind: ColumnKind::Treatment,
    }];
    let mut columns = vec![Column::Categorical(CatColumn {
        codes: arm_codes,
        levels: labels("arm", k),
    })];
    if s > 0 {
        specs.push(ColumnSpec {
            name: "seg".into(),
            kind: ColumnKind::Categorical,
        });
        columns.push(Column::Categorical(CatColumn {
            codes: seg_codes,
            levels: labels("s", s),
        }));
    }
    for (j, v) in numeric.into_iter().enumerate() {
        specs.push(ColumnSpec {
            name: format!("x{j}"),
            kind: ColumnKind::Numeric,
        });
        columns.push(Column::Numeric(v));
    }
    if t > 0 {
        specs.push(ColumnSpec {
            name: "week".into(),
            kind: ColumnKind::TimePeriod,
        });
        columns.push(Column::Period(PeriodColumn {
            codes: period_codes,
            values: (1..=t).map(|w| w as f64).collect(),
        }));
    }
    if cfg.n_clusters > 0 {
        specs.push(ColumnSpec {
            name: "cluster".into(),
            kind: ColumnKind::ClusterId,
        });
        columns.push(Column::Categorical(CatColumn {
            codes: cluster_codes,
            levels: labels("c", cfg.n_clusters),
        }));
    }
    for (q, v) in kpis.into_iter().enumerate() {
        specs.push(ColumnSpec {
            name: format!("y{q}"),
            kind: ColumnKind::Kpi,
        });
        columns.push(Column::Numeric(v));
    }
    EncodedTable::from_columns(Schema::new(specs)?, columns)
}

#[derive(Debug, Clone)]
pub struct IvSynthConfig {
    pub n_rows: usize,
    /// Arms including the never-encouraged control.
    pub n_treatments: usize,
    /// Continuous instruments z0, z1, …; identification needs at least
    /// `n_treatments - 1`.
    pub n_instruments: usize,
    pub n_numeric: usize,
    pub n_kpis: usize,
    /// Strength of the unobserved confounder pushing on both the arm
    /// choice and every KPI; 0 makes the treatment exogenous.
    pub confounding: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for IvSynthConfig {
    fn default() -> Self {
        IvSynthConfig {
            n_rows: 2000,
            n_treatments: 2,
            n_instruments: 1,
            n_numeric: 1,
            n_kpis: 1,
            confounding: 1.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Endogenous-treatment table: a latent score per arm mixes the
/// instruments with an unobserved confounder, the row takes the argmax
/// arm, and the same confounder feeds every KPI.
pub fn synth_iv_table(cfg: &IvSynthConfig) -> Result<EncodedTable> {
    assert!(cfg.n_treatments >= 2);
    assert!(
        cfg.n_instruments >= cfg.n_treatments - 1,
        "under-identified"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_rows;
    let k = cfg.n_treatments;
    let m = cfg.n_kpis;

    let draw = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        (0..len).map(|_| StandardNormal.sample(rng)).collect()
    };
    // Strong diagonal loading so instrument j mainly encourages arm j+1.
    let mut loadings = vec![0.0; (k - 1) * cfg.n_instruments];
    for a in 0..k - 1 {
        for j in 0..cfg.n_instruments {
            loadings[a * cfg.n_instruments + j] = if a == j { 2.0 } else { 0.3 * normal(&mut rng) };
        }
    }
    let intercepts = draw(&mut rng, m);
    let arm_effects = draw(&mut rng, m * k);
    let slopes = draw(&mut rng, m * cfg.n_numeric);

    let mut arm_codes = Vec::with_capacity(n);
    let mut instruments: Vec<Vec<f64>> = vec![Vec::with_capacity(n); cfg.n_instruments];
    let mut numeric: Vec<Vec<f64>> = vec![Vec::with_capacity(n); cfg.n_numeric];
    let mut kpis: Vec<Vec<f64>> = vec![Vec::with_capacity(n); m];

    for _ in 0..n {
        let z: Vec<f64> = (0..cfg.n_instruments)
            .map(|j| {
                let v = rng.random_range(-1.0..1.0);
                instruments[j].push(v);
                v
            })
            .collect();
        let x: Vec<f64> = (0..cfg.n_numeric)
            .map(|j| {
                let v = rng.random_range(-1.0..1.0);
                numeric[j].push(v);
                v
            })
            .collect();
        let u = normal(&mut rng);

        let mut arm = 0usize;
        let mut best = 0.0;
        for a in 0..k - 1 {
            let mut score = cfg.confounding * u + normal(&mut rng) - 0.5;
            for (j, &zj) in z.iter().enumerate() {
                score += loadings[a * cfg.n_instruments + j] * zj;
            }
            if score > best {
                best = score;
                arm = a + 1;
            }
        }
        arm_codes.push(arm as u32);

        for q in 0..m {
            let mut y = intercepts[q] + cfg.confounding * u;
            if arm > 0 {
                y += arm_effects[q * k + arm];
            }
            for (j, &v) in x.iter().enumerate() {
                y += slopes[q * cfg.n_numeric + j] * v;
            }
            y += cfg.noise * normal(&mut rng);
            kpis[q].push(y);
        }
    }

    let mut specs = vec![ColumnSpec {
        name: "arm".into(),
        kind: ColumnKind::Treatment,
    }];
    let mut columns = vec![Column::Categorical(CatColumn {
        codes: arm_codes,
        levels: labels("arm", k),
    })];
    for (j, v) in instruments.into_iter().enumerate() {
        specs.push(ColumnSpec {
            name: format!("z{j}"),
            kind: ColumnKind::Instrument,
        });
        columns.push(Column::Numeric(v));
    }
    for (j, v) in numeric.into_iter().enumerate() {
        specs.push(ColumnSpec {
            name: format!("x{j}"),
            kind: ColumnKind::Numeric,
        });
        columns.push(Column::Numeric(v));
    }
    for (q, v) in kpis.into_iter().enumerate() {
        specs.push(ColumnSpec {
            name: format!("y{q}"),
            kind: ColumnKind::Kpi,
        });
        columns.push(Column::Numeric(v));
    }
    EncodedTable::from_columns(Schema::new(specs)?, columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, build_layout};
    use crate::solver::{accumulate_gram, fit, FitOptions};

    #[test]
    fn same_seed_same_table() {
        let cfg = SynthConfig {
            n_periods: 3,
            n_clusters: 5,
            ..SynthConfig::default()
        };
        let a = synth_table(&cfg).unwrap();
        let b = synth_table(&cfg).unwrap();
        assert_eq!(a.n_rows(), 1000);
        for name in ["y0", "x0", "x1"] {
            assert_eq!(a.numeric(name).unwrap(), b.numeric(name).unwrap());
        }
        assert_eq!(a.treatment().codes, b.treatment().codes);

        let c = synth_table(&SynthConfig {
            seed: 1,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(a.numeric("y0").unwrap(), c.numeric("y0").unwrap());
    }

    #[test]
    fn generated_tables_fit_their_own_design() {
        let cfg = SynthConfig {
            n_rows: 4000,
            n_treatments: 3,
            n_kpis: 2,
            n_periods: 4,
            noise: 0.1,
            seed: 7,
            ..SynthConfig::default()
        };
        let t = synth_table(&cfg).unwrap();
        let layout = build_layout(&t, &cfg.design_spec()).unwrap();
        let m = build_design(&t, &layout).unwrap();
        let f = fit(
            accumulate_gram(&m, &t.kpi_columns(), None).unwrap(),
            layout.names().to_vec(),
            t.kpi_names().iter().map(|s| s.to_string()).collect(),
            FitOptions::default(),
        )
        .unwrap();
        // Low noise → the fit recovers coefficients with small residual
        // variance on both KPIs.
        assert!(f.sigma2().iter().all(|&s2| s2 < 0.05), "{:?}", f.sigma2());
        assert_eq!(layout.n_cols(), f.n_cols());
    }

    #[test]
    fn grid_valued_covariates_bound_the_distinct_design_rows() {
        let cfg = SynthConfig {
            n_rows: 20_000,
            segment_levels: 0,
            n_numeric: 1,
            numeric_distinct: 5,
            seed: 3,
            ..SynthConfig::default()
        };
        let t = synth_table(&cfg).unwrap();
        let x = t.numeric("x0").unwrap();
        let mut distinct: Vec<f64> = x.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn iv_treatment_is_confounded_but_instrumented() {
        let cfg = IvSynthConfig {
            n_rows: 20_000,
            seed: 11,
            ..IvSynthConfig::default()
        };
        let t = synth_iv_table(&cfg).unwrap();
        let arm = &t.treatment().codes;
        let z = t.numeric("z0").unwrap();
        let n = t.n_rows() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let treated: Vec<f64> = arm.iter().map(|&a| a as f64).collect();
        let mz = mean(z);
        let mt = mean(&treated);
        let cov: f64 = z
            .iter()
            .zip(&treated)
            .map(|(a, b)| (a - mz) * (b - mt))
            .sum::<f64>()
            / n;
        // The instrument moves take-up.
        assert!(cov > 0.05, "cov(z, arm) = {cov}");
        // Both arms actually occur.
        assert!(treated.contains(&0.0));
        assert!(treated.contains(&1.0));
    }
}
