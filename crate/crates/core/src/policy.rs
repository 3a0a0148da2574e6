//! Greedy personalization and the summed-reward policy test.
//!
//! Per-user predicted effects come straight from the fitted coefficients:
//! for user j and action k, δ_j(k) = β_{A_k} + x_jᵀβ_{A_k×X} (+ the row's
//! period interaction), so no counterfactual rows are built. The greedy
//! policy takes the eligible argmax per user, and a policy pair (π, π₀) is
//! compared through T = cᵀβ̂ where c sums the per-row contrast differences —
//! linear in β̂, so the delta method gives the test directly, or the bag of
//! little bootstraps resamples it.

use serde::Serialize;

use crate::blb::{blb_estimate, BlbConfig, DistributionEstimate, StatError};
use crate::design::{build_design_rows, ColumnLayout};
use crate::effects::{slot_data, z_score, SlotData};
use crate::error::{Error, Result};
use crate::exec;
use crate::ingest::{ColumnKind, EncodedTable, PeriodColumn};
use crate::solver::{fit, gram_from_row_subset, CovKind, FitOptions, FitResult};
use crate::stats::{normal_cdf, Acc};

/// Per-user, per-action predicted effects versus the reference action,
/// with eligibility folded in. Column 0 is the reference: always zero,
/// always eligible.
#[derive(Debug, Clone)]
pub struct EffectMatrix {
    n_rows: usize,
    levels: Vec<String>,
    /// Row-major n×K.
    delta: Vec<f64>,
    /// Row-major n×K.
    eligible: Vec<bool>,
}

impl EffectMatrix {
    pub fn from_parts(
        levels: Vec<String>,
        delta: Vec<f64>,
        eligible: Vec<bool>,
    ) -> Result<EffectMatrix> {
        let k = levels.len();
        if k < 2 {
            return Err(Error::Invalid("need at least two actions".into()));
        }
        if !delta.len().is_multiple_of(k) || delta.len() != eligible.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} effects and {} eligibility flags for {k} actions",
                delta.len(),
                eligible.len()
            )));
        }
        let n_rows = delta.len() / k;
        for i in 0..n_rows {
            if delta[i * k] != 0.0 {
                return Err(Error::Invalid(format!(
                    "row {i}: the reference action must have effect 0"
                )));
            }
            if !eligible[i * k] {
                return Err(Error::Invalid(format!(
                    "row {i}: the reference action must stay eligible"
                )));
            }
        }
        Ok(EffectMatrix {
            n_rows,
            levels,
            delta,
            eligible,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_actions(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn delta(&self, row: usize, action: usize) -> f64 {
        self.delta[row * self.n_actions() + action]
    }

    pub fn is_eligible(&self, row: usize, action: usize) -> bool {
        self.eligible[row * self.n_actions() + action]
    }
}

/// A deterministic action per user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyAssignment {
    actions: Vec<u32>,
    n_actions: usize,
}

impl PolicyAssignment {
    pub fn from_actions(actions: Vec<u32>, n_actions: usize) -> Result<PolicyAssignment> {
        if let Some(bad) = actions.iter().position(|&a| a as usize >= n_actions) {
            return Err(Error::Invalid(format!(
                "row {bad}: action {} out of range for {n_actions} actions",
                actions[bad]
            )));
        }
        Ok(PolicyAssignment { actions, n_actions })
    }

    /// The same action for every user; `constant(n, 0)` is the all-control
    /// baseline.
    pub fn constant(n_rows: usize, action: u32, n_actions: usize) -> PolicyAssignment {
        assert!((action as usize) < n_actions);
        PolicyAssignment {
            actions: vec![action; n_rows],
            n_actions,
        }
    }

    pub fn actions(&self) -> &[u32] {
        &self.actions
    }

    pub fn n_rows(&self) -> usize {
        self.actions.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// The summed-reward test of π against π₀.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyEvalResult {
    pub kpi: String,
    /// T = Σ_j predicted reward difference, in KPI units.
    pub statistic: f64,
    pub se: f64,
    pub z: f64,
    /// One-sided p for H_A: T > 0.
    pub p_one_sided: f64,
    pub n_users: u64,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cov_kind: Option<String>,
}

/// Builds the n×K eligibility mask from 0/1 table columns. Each map entry
/// pairs a non-reference treatment level with an eligibility column;
/// unmapped levels stay eligible everywhere, and the reference action
/// cannot be restricted.
pub fn eligibility_mask(
    table: &EncodedTable,
    layout: &ColumnLayout,
    map: &[(String, String)],
) -> Result<Vec<bool>> {
    let n = table.n_rows();
    let k = layout.n_treatments();
    let mut mask = vec![true; n * k];
    for (level, column) in map {
        let code = layout.treatment_code(level)? as usize;
        if code == 0 {
            return Err(Error::Invalid(format!(
                "level `{level}` is the reference action and must stay eligible"
            )));
        }
        match table.schema().kind_of(column) {
            None => return Err(Error::UnknownColumn(column.clone())),
            Some(ColumnKind::Eligibility) => {}
            Some(other) => {
                return Err(Error::Invalid(format!(
                    "column `{column}` has kind {}; declare it as eligibility to use it as a mask",
                    other.as_str()
                )))
            }
        }
        let values = table.numeric(column)?;
        for (row, &v) in values.iter().enumerate() {
            if v == 1.0 {
                continue;
            } else if v == 0.0 {
                mask[row * k + code] = false;
            } else {
                return Err(Error::BadEligibilityValue {
                    column: column.clone(),
                    row: row + 1,
                    value: v,
                });
            }
        }
    }
    Ok(mask)
}

/// Validates that a table carries the period axis the layout was built
/// with, returning the per-row codes.
fn period_codes<'a>(table: &'a EncodedTable, layout: &ColumnLayout) -> Result<&'a PeriodColumn> {
    let period = table.period().ok_or(Error::NoTimeAxis)?;
    if period.values != layout.period_values() {
        return Err(Error::Invalid(format!(
            "table has periods {:?}, but the layout was built with {:?}",
            period.values,
            layout.period_values()
        )));
    }
    Ok(period)
}

/// Predicted effect of action `k` versus the reference for row `i`.
#[inline]
fn row_delta(
    beta: &[f64],
    layout: &ColumnLayout,
    slots: &[SlotData<'_>],
    periods: Option<&PeriodColumn>,
    i: usize,
    k: u32,
) -> f64 {
    let mut d = beta[layout.treatment_col(k)];
    if layout.has_cov_interactions() {
        for (s, slot) in slots.iter().enumerate() {
            if let Some(v) = slot.value(i) {
                d += v * beta[layout.interaction_col(k, s)];
            }
        }
    }
    if let Some(p) = periods {
        let t = p.codes[i];
        if t > 0 {
            d += beta[layout.period_col(k, t)];
        }
    }
    d
}

/// Queries the fit across all actions for every row of `table` (which may
/// be a fresh population, not the fitting data).
pub fn individual_effects(
    fit: &FitResult,
    layout: &ColumnLayout,
    table: &EncodedTable,
    kpi: usize,
    eligible: Option<Vec<bool>>,
) -> Result<EffectMatrix> {
    if fit.n_cols() != layout.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "fit has {} columns, layout has {}",
            fit.n_cols(),
            layout.n_cols()
        )));
    }
    let n = table.n_rows();
    let k = layout.n_treatments();
    let beta = fit.beta(kpi);
    let slots = slot_data(table, layout)?;
    let periods = if layout.has_time_interactions() {
        Some(period_codes(table, layout)?)
    } else {
        None
    };

    let chunks = exec::map_chunks(n, exec::ROW_CHUNK, |range| {
        let mut out = Vec::with_capacity(range.len() * k);
        for i in range {
            out.push(0.0);
            for a in 1..k as u32 {
                out.push(row_delta(beta, layout, &slots, periods, i, a));
            }
        }
        out
    });
    let mut delta = Vec::with_capacity(n * k);
    for c in chunks {
        delta.extend_from_slice(&c);
    }
    let eligible = match eligible {
        Some(e) => e,
        None => vec![true; n * k],
    };
    EffectMatrix::from_parts(layout.treatment_levels().to_vec(), delta, eligible)
}

/// Eligible argmax of the predicted effect per user; ties go to the lowest
/// action index, so the reference wins an all-zero row.
pub fn greedy_policy(effects: &EffectMatrix) -> Result<PolicyAssignment> {
    let k = effects.n_actions();
    let picks = exec::map_indexed(effects.n_rows(), |i| {
        let mut best: Option<(u32, f64)> = None;
        for a in 0..k {
            if !effects.is_eligible(i, a) {
                continue;
            }
            let d = effects.delta(i, a);
            match best {
                Some((_, bd)) if d <= bd => {}
                _ => best = Some((a as u32, d)),
            }
        }
        best.map(|(a, _)| a)
    });
    let mut actions = Vec::with_capacity(picks.len());
    for (i, pick) in picks.into_iter().enumerate() {
        actions.push(pick.ok_or(Error::NoEligibleAction(i))?);
    }
    Ok(PolicyAssignment {
        actions,
        n_actions: k,
    })
}

/// Σ_j [contrast(π_j) − contrast(π₀_j)] as a dense length-p vector.
fn contrast_sum(
    layout: &ColumnLayout,
    table: &EncodedTable,
    policy: &PolicyAssignment,
    baseline: &PolicyAssignment,
) -> Result<Vec<f64>> {
    let n = table.n_rows();
    for (label, pa) in [("policy", policy), ("baseline", baseline)] {
        if pa.n_rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{label} assigns {} users, table has {n} rows",
                pa.n_rows()
            )));
        }
        if pa.n_actions() != layout.n_treatments() {
            return Err(Error::DimensionMismatch(format!(
                "{label} was built for {} actions, layout has {}",
                pa.n_actions(),
                layout.n_treatments()
            )));
        }
    }
    let slots = slot_data(table, layout)?;
    let periods = if layout.has_time_interactions() {
        Some(period_codes(table, layout)?)
    } else {
        None
    };
    let p = layout.n_cols();

    let add_action = |acc: &mut [Acc], i: usize, action: u32, sign: f64| {
        if action == 0 {
            return;
        }
        acc[layout.treatment_col(action)].add(sign);
        if layout.has_cov_interactions() {
            for (s, slot) in slots.iter().enumerate() {
                if let Some(v) = slot.value(i) {
                    acc[layout.interaction_col(action, s)].add(sign * v);
                }
            }
        }
        if let Some(pc) = periods {
            let t = pc.codes[i];
            if t > 0 {
                acc[layout.period_col(action, t)].add(sign);
            }
        }
    };

    let mut total = vec![Acc::new(); p];
    exec::reduce_chunks(
        n,
        exec::ROW_CHUNK,
        |range| {
            let mut acc = vec![Acc::new(); p];
            for i in range {
                add_action(&mut acc, i, policy.actions()[i], 1.0);
                add_action(&mut acc, i, baseline.actions()[i], -1.0);
            }
            acc
        },
        |part| {
            for (a, b) in total.iter_mut().zip(part) {
                a.merge(b);
            }
        },
    );
    Ok(total.iter().map(Acc::value).collect())
}

fn dot_compensated(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = Acc::new();
    for (x, y) in a.iter().zip(b) {
        acc.add(x * y);
    }
    acc.value()
}

fn result_from(
    kpi: String,
    n_users: u64,
    t: f64,
    se: f64,
    method: &str,
    cov_kind: Option<String>,
) -> PolicyEvalResult {
    let z = z_score(t, se);
    PolicyEvalResult {
        kpi,
        statistic: t,
        se,
        z,
        p_one_sided: 1.0 - normal_cdf(z),
        n_users,
        method: method.to_string(),
        cov_kind,
    }
}

/// Delta-method test of π against π₋₀: T = cᵀβ̂, se = √(cᵀ cov c).
pub fn evaluate_policy(
    fit: &FitResult,
    layout: &ColumnLayout,
    table: &EncodedTable,
    kpi: usize,
    kind: CovKind,
    policy: &PolicyAssignment,
    baseline: &PolicyAssignment,
) -> Result<PolicyEvalResult> {
    let c = contrast_sum(layout, table, policy, baseline)?;
    let cov = fit.cov(kind, kpi)?;
    let t = dot_compensated(&c, fit.beta(kpi));
    let var = dot_compensated(&c, &cov.mul_vec(&c));
    Ok(result_from(
        fit.kpi_names()[kpi].clone(),
        table.n_rows() as u64,
        t,
        var.max(0.0).sqrt(),
        "delta",
        Some(kind.as_str().to_string()),
    ))
}

/// Same test with the bag of little bootstraps supplying the standard
/// error: every resample refits β̂ under multinomial weights and re-reads
/// T = cᵀβ̂ with the contrast vector held fixed.
pub fn evaluate_policy_blb(
    layout: &ColumnLayout,
    table: &EncodedTable,
    kpi: usize,
    policy: &PolicyAssignment,
    baseline: &PolicyAssignment,
    config: &BlbConfig,
) -> Result<(PolicyEvalResult, DistributionEstimate)> {
    let c = contrast_sum(layout, table, policy, baseline)?;
    let rows = build_design_rows(table, layout)?;
    let kpi_name = table.kpi_names()[kpi].to_string();
    let column = table.kpi_columns()[kpi];
    let kpis = [column];

    let statistic = |idx: &[usize], w: &[f64]| {
        let gram = gram_from_row_subset(&rows, &kpis, idx, w)
            .map_err(|e| StatError::Failed(e.to_string()))?;
        let f = fit(
            gram,
            layout.names().to_vec(),
            vec![kpi_name.clone()],
            FitOptions::default(),
        )
        .map_err(|e| match e {
            Error::RankDeficient { .. } => StatError::Degenerate(e.to_string()),
            other => StatError::Failed(other.to_string()),
        })?;
        Ok(dot_compensated(&c, f.beta(0)))
    };
    let est = blb_estimate(table.n_rows(), config, statistic)?;
    let result = result_from(
        kpi_name,
        table.n_rows() as u64,
        est.point,
        est.se,
        "blb",
        None,
    );
    Ok((result, est))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, build_layout, DesignSpec};
    use crate::ingest::{load_table_from_reader, ColumnSpec, Schema};
    use crate::solver::{accumulate_gram, covariance, FitData};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    fn fit_table(
        csv: &str,
        cols: &[(&str, ColumnKind)],
        spec: &DesignSpec,
    ) -> (EncodedTable, ColumnLayout, FitResult) {
        let t = load_table_from_reader(csv.as_bytes(), &schema(cols), "policy").unwrap();
        let layout = build_layout(&t, spec).unwrap();
        let m = build_design(&t, &layout).unwrap();
        let mut f = fit(
            accumulate_gram(&m, &t.kpi_columns(), None).unwrap(),
            layout.names().to_vec(),
            t.kpi_names().iter().map(|s| s.to_string()).collect(),
            FitOptions::default(),
        )
        .unwrap();
        covariance(&mut f, CovKind::Homoskedastic, &FitData::None).unwrap();
        (t, layout, f)
    }

    const AXY: &[(&str, ColumnKind)] = &[
        ("a", ColumnKind::Treatment),
        ("x", ColumnKind::Categorical),
        ("y", ColumnKind::Kpi),
    ];

    /// Two rows per (arm, x) cell; cell means make the effects 1 (x=a) and
    /// 3 (x=b), so there are residual degrees of freedom.
    fn saturated() -> (EncodedTable, ColumnLayout, FitResult) {
        fit_table(
            "a,x,y\nctl,a,0\nctl,a,0\nctl,b,0\nctl,b,0\ntrt,a,1\ntrt,a,1\ntrt,b,3\ntrt,b,3\n",
            AXY,
            &DesignSpec {
                treatment: "a".into(),
                covariates: vec!["x".into()],
                interact_treatment_covariates: true,
                interact_treatment_time: false,
            },
        )
    }

    #[test]
    fn effects_reproduce_cell_means() {
        let (t, layout, f) = saturated();
        let em = individual_effects(&f, &layout, &t, 0, None).unwrap();
        assert_eq!((em.n_rows(), em.n_actions()), (8, 2));
        for i in 0..8 {
            assert_eq!(em.delta(i, 0), 0.0);
            let want = if i == 2 || i == 3 || i == 6 || i == 7 {
                3.0
            } else {
                1.0
            };
            assert!((em.delta(i, 1) - want).abs() <= 1e-12, "row {i}");
        }
    }

    #[test]
    fn constant_effect_model_yields_a_constant_policy() {
        let (t, layout, f) = fit_table(
            "a,y\nctl,1\ntrt,2\nctl,3\ntrt,6\n",
            &[("a", ColumnKind::Treatment), ("y", ColumnKind::Kpi)],
            &DesignSpec::main_effects("a"),
        );
        let em = individual_effects(&f, &layout, &t, 0, None).unwrap();
        let pi = greedy_policy(&em).unwrap();
        // Every user sees the same δ = 2 > 0, so everyone is treated.
        assert_eq!(pi.actions(), &[1, 1, 1, 1]);
    }

    fn matrix(rows: &[[f64; 3]], masked: &[(usize, usize)]) -> EffectMatrix {
        let levels = vec!["c".to_string(), "t1".to_string(), "t2".to_string()];
        let delta: Vec<f64> = rows.iter().flatten().copied().collect();
        let mut eligible = vec![true; delta.len()];
        for &(i, a) in masked {
            eligible[i * 3 + a] = false;
        }
        EffectMatrix::from_parts(levels, delta, eligible).unwrap()
    }

    #[test]
    fn greedy_takes_the_eligible_argmax_with_low_index_ties() {
        let em = matrix(
            &[[0.0, 1.0, 3.0], [0.0, 0.0, 0.0], [0.0, 5.0, -2.0]],
            &[(2, 1)],
        );
        let pi = greedy_policy(&em).unwrap();
        // Row 0: argmax 3.0 → action 2; row 1: all ties → control;
        // row 2: best eligible is control (5.0 is masked, −2 < 0).
        assert_eq!(pi.actions(), &[2, 0, 0]);
    }

    #[test]
    fn reference_action_cannot_be_invalidated() {
        let levels = vec!["c".to_string(), "t".to_string()];
        assert!(matches!(
            EffectMatrix::from_parts(levels.clone(), vec![0.5, 1.0], vec![true, true]),
            Err(Error::Invalid(_))
        ));
        assert!(matches!(
            EffectMatrix::from_parts(levels, vec![0.0, 1.0], vec![false, true]),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn policy_against_itself_is_exactly_null() {
        let (t, layout, f) = saturated();
        let pi = PolicyAssignment::constant(8, 1, 2);
        let r = evaluate_policy(&f, &layout, &t, 0, CovKind::Homoskedastic, &pi, &pi).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.se, 0.0);
        assert_eq!(r.z, 0.0);
        assert_eq!(r.p_one_sided, 0.5);
    }

    #[test]
    fn treat_everyone_sums_the_profile_effects() {
        // Score a fresh two-user population (one per x profile) with the
        // saturated fit: T = 1 + 3 = 4.
        let (_, layout, f) = saturated();
        let eval =
            load_table_from_reader("a,x,y\nctl,a,0\ntrt,b,0\n".as_bytes(), &schema(AXY), "eval")
                .unwrap();
        let treat_all = PolicyAssignment::constant(2, 1, 2);
        let control_all = PolicyAssignment::constant(2, 0, 2);
        let r = evaluate_policy(
            &f,
            &layout,
            &eval,
            0,
            CovKind::Homoskedastic,
            &treat_all,
            &control_all,
        )
        .unwrap();
        assert!((r.statistic - 4.0).abs() <= 1e-12);
        assert_eq!(r.n_users, 2);
        // The saturated fit is exact, so se = 0 and the one-sided p hits 0.
        assert_eq!(r.se, 0.0);
        assert_eq!(r.p_one_sided, 0.0);

        // Anti-symmetry: swapping the roles flips T and keeps se.
        let rev = evaluate_policy(
            &f,
            &layout,
            &eval,
            0,
            CovKind::Homoskedastic,
            &control_all,
            &treat_all,
        )
        .unwrap();
        assert_eq!(rev.statistic, -r.statistic);
        assert_eq!(rev.se, r.se);
    }

    #[test]
    fn kpi_shifts_leave_effects_and_t_unchanged() {
        let base =
            "a,x,y\nctl,a,1\nctl,a,2\nctl,b,0\nctl,b,3\ntrt,a,2\ntrt,a,4\ntrt,b,5\ntrt,b,8\n";
        let shifted = "a,x,y\nctl,a,101\nctl,a,102\nctl,b,100\nctl,b,103\ntrt,a,102\ntrt,a,104\ntrt,b,105\ntrt,b,108\n";
        let spec = DesignSpec {
            treatment: "a".into(),
            covariates: vec!["x".into()],
            interact_treatment_covariates: true,
            interact_treatment_time: false,
        };
        let (t0, l0, f0) = fit_table(base, AXY, &spec);
        let (t1, l1, f1) = fit_table(shifted, AXY, &spec);
        let e0 = individual_effects(&f0, &l0, &t0, 0, None).unwrap();
        let e1 = individual_effects(&f1, &l1, &t1, 0, None).unwrap();
        for i in 0..8 {
            assert!((e0.delta(i, 1) - e1.delta(i, 1)).abs() <= 1e-9);
        }
        let pi = greedy_policy(&e0).unwrap();
        let base_pi = PolicyAssignment::constant(8, 0, 2);
        let r0 = evaluate_policy(&f0, &l0, &t0, 0, CovKind::Homoskedastic, &pi, &base_pi).unwrap();
        let r1 = evaluate_policy(&f1, &l1, &t1, 0, CovKind::Homoskedastic, &pi, &base_pi).unwrap();
        assert!((r0.statistic - r1.statistic).abs() <= 1e-9);
    }

    /// Exhaustively scores every eligibility-respecting assignment against
    /// the same fit and checks greedy attains the maximum T.
    #[test]
    fn greedy_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for instance in 0..10 {
            let n = 6;
            let mut csv = String::from("a,x,y\n");
            for i in 0..4 * n {
                let a = ["c", "t1", "t2"][i % 3];
                let x: f64 = rng.random_range(-2.0..2.0);
                let y: f64 = rng.random_range(-1.0..1.0)
                    + match a {
                        "t1" => 0.5 * x,
                        "t2" => -0.3 * x + 0.2,
                        _ => 0.0,
                    };
                csv.push_str(&format!("{a},{x},{y}\n"));
            }
            let (_, layout, f) = fit_table(
                &csv,
                &[
                    ("a", ColumnKind::Treatment),
                    ("x", ColumnKind::Numeric),
                    ("y", ColumnKind::Kpi),
                ],
                &DesignSpec {
                    treatment: "a".into(),
                    covariates: vec!["x".into()],
                    interact_treatment_covariates: true,
                    interact_treatment_time: false,
                },
            );
            // Evaluate policies over the first n rows as the user set.
            let eval = load_table_from_reader(
                csv.lines()
                    .take(n + 1)
                    .collect::<Vec<_>>()
                    .join("\n")
                    .as_bytes(),
                &schema(&[
                    ("a", ColumnKind::Treatment),
                    ("x", ColumnKind::Numeric),
                    ("y", ColumnKind::Kpi),
                ]),
                "eval",
            )
            .unwrap();
            let mut eligible = vec![true; n * 3];
            eligible[3 + 2] = false; // user 1 cannot receive t2
            eligible[5 * 3 + 1] = false; // user 5 cannot receive t1
            let em = individual_effects(&f, &layout, &eval, 0, Some(eligible.clone())).unwrap();
            let greedy = greedy_policy(&em).unwrap();
            let baseline = PolicyAssignment::constant(n, 0, 3);
            let t_of = |pa: &PolicyAssignment| {
                evaluate_policy(&f, &layout, &eval, 0, CovKind::Homoskedastic, pa, &baseline)
                    .unwrap()
                    .statistic
            };
            let greedy_t = t_of(&greedy);
            let mut best = f64::NEG_INFINITY;
            for code in 0..3usize.pow(n as u32) {
                let mut c = code;
                let actions: Vec<u32> = (0..n)
                    .map(|_| {
                        let a = (c % 3) as u32;
                        c /= 3;
                        a
                    })
                    .collect();
                if actions
                    .iter()
                    .enumerate()
                    .any(|(i, &a)| !eligible[i * 3 + a as usize])
                {
                    continue;
                }
                best = best.max(t_of(&PolicyAssignment::from_actions(actions, 3).unwrap()));
            }
            assert!(
                greedy_t >= best,
                "instance {instance}: greedy {greedy_t} < enumerated max {best}"
            );
        }
    }

    #[test]
    fn eligibility_mask_reads_zero_one_columns() {
        let cols = &[
            ("a", ColumnKind::Treatment),
            ("can_t", ColumnKind::Eligibility),
            ("y", ColumnKind::Kpi),
        ];
        let t = load_table_from_reader(
            "a,can_t,y\nctl,1,0\ntrt,0,1\nctl,1,2\ntrt,1,3\n".as_bytes(),
            &schema(cols),
            "m",
        )
        .unwrap();
        let layout = build_layout(&t, &DesignSpec::main_effects("a")).unwrap();
        let mask = eligibility_mask(&t, &layout, &[("trt".into(), "can_t".into())]).unwrap();
        assert_eq!(mask, vec![true, true, true, false, true, true, true, true]);

        assert!(matches!(
            eligibility_mask(&t, &layout, &[("ctl".into(), "can_t".into())]),
            Err(Error::Invalid(_))
        ));
        assert!(matches!(
            eligibility_mask(&t, &layout, &[("nope".into(), "can_t".into())]),
            Err(Error::UnknownLevel { .. })
        ));
        assert!(matches!(
            eligibility_mask(&t, &layout, &[("trt".into(), "y".into())]),
            Err(Error::Invalid(_))
        ));

        let bad = load_table_from_reader(
            "a,can_t,y\nctl,1,0\ntrt,0.5,1\n".as_bytes(),
            &schema(cols),
            "m",
        )
        .unwrap();
        let layout = build_layout(&bad, &DesignSpec::main_effects("a")).unwrap();
        match eligibility_mask(&bad, &layout, &[("trt".into(), "can_t".into())]) {
            Err(Error::BadEligibilityValue { row, value, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(value, 0.5);
            }
            other => panic!("expected eligibility error, got {other:?}"),
        }
    }

    #[test]
    fn blb_evaluation_matches_the_point_and_supplies_a_spread() {
        let mut csv = String::from("a,x,y\n");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in 0..400 {
            let a = if i % 2 == 0 { "ctl" } else { "trt" };
            let x: f64 = rng.random_range(-1.0..1.0);
            let bump = if a == "trt" { 1.0 + 0.5 * x } else { 0.0 };
            let y = x + bump + rng.random_range(-0.3..0.3f64);
            csv.push_str(&format!("{a},{x},{y}\n"));
        }
        let (t, layout, f) = fit_table(
            &csv,
            &[
                ("a", ColumnKind::Treatment),
                ("x", ColumnKind::Numeric),
                ("y", ColumnKind::Kpi),
            ],
            &DesignSpec {
                treatment: "a".into(),
                covariates: vec!["x".into()],
                interact_treatment_covariates: true,
                interact_treatment_time: false,
            },
        );
        let treat_all = PolicyAssignment::constant(400, 1, 2);
        let control_all = PolicyAssignment::constant(400, 0, 2);
        let delta = evaluate_policy(
            &f,
            &layout,
            &t,
            0,
            CovKind::Homoskedastic,
            &treat_all,
            &control_all,
        )
        .unwrap();
        let (blb, est) = evaluate_policy_blb(
            &layout,
            &t,
            0,
            &treat_all,
            &control_all,
            &BlbConfig {
                seed: 303,
                ..BlbConfig::default()
            },
        )
        .unwrap();
        assert!((blb.statistic - delta.statistic).abs() <= 1e-9);
        assert_eq!(blb.method, "blb");
        assert!(blb.se > 0.0);
        // Both spreads estimate the same sampling distribution.
        assert!(blb.se / delta.se < 2.0 && delta.se / blb.se < 2.0);
        assert!(est.ci_lo <= blb.statistic && blb.statistic <= est.ci_hi);
    }
}
