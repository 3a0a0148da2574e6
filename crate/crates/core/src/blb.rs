//! Bag of little bootstraps over weighted statistics.
//!
//! Rows are partitioned into `s = ⌈n/b⌉` subsets of size `b = ⌈n^γ⌉` by a
//! seeded shuffle. Within each subset, every resample is a multinomial
//! weight vector summing to the full `n` — never a row copy — so any
//! statistic written against `(row indices, weights)` plugs in directly,
//! including the weighted Gram fits. Subset-level standard errors and
//! percentile intervals of the centered resamples are averaged across
//! subsets.
//!
//! Every resample owns an RNG stream derived from `(seed, subset,
//! resample)`, so the estimate is a pure function of the configuration no
//! matter how the work is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::stats::{compensated_sum, mean_sd, sorted_quantile};

/// How per-subset standard errors and interval endpoints combine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlbConfig {
    /// Subset size exponent: b = ⌈n^gamma⌉.
    pub gamma: f64,
    /// Monte Carlo resamples per subset.
    pub resamples: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub aggregation: Aggregation,
}

impl Default for BlbConfig {
    fn default() -> Self {
        BlbConfig {
            gamma: 0.7,
            resamples: 100,
            seed: 0,
            ci_level: 0.95,
            aggregation: Aggregation::Mean,
        }
    }
}

impl BlbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.5 && self.gamma <= 1.0) {
            return Err(Error::BadBootstrapConfig(format!(
                "gamma must lie in [0.5, 1], got {}",
                self.gamma
            )));
        }
        if self.resamples < 2 {
            return Err(Error::BadBootstrapConfig(format!(
                "need at least 2 resamples per subset, got {}",
                self.resamples
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::BadBootstrapConfig(format!(
                "ci_level must lie strictly between 0 and 1, got {}",
                self.ci_level
            )));
        }
        Ok(())
    }
}

/// Why a single statistic evaluation did not produce a value.
#[derive(Debug, Clone)]
pub enum StatError {
    /// The weighted rows lack the variation the statistic needs (for
    /// example, a resample that zeroes out a treatment arm). The enclosing
    /// subset is skipped.
    Degenerate(String),
    /// Unexpected failure; aborts the whole estimate.
    Failed(String),
}

pub type StatResult = std::result::Result<f64, StatError>;

/// One subset's contribution, kept for diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct SubsetEstimate {
    pub rows: usize,
    /// Plug-in value at uniform weights n/b.
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistributionEstimate {
    /// Full-data plug-in value at unit weights.
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_rows: usize,
    pub subset_size: usize,
    pub n_subsets: usize,
    pub subsets: Vec<SubsetEstimate>,
    pub config: BlbConfig,
}

impl DistributionEstimate {
    /// Indices of subsets that were skipped as degenerate.
    pub fn skipped(&self) -> Vec<usize> {
        self.subsets
            .iter()
            .enumerate()
            .filter(|(_, s)| s.degenerate)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Multinomial counts over `b` cells summing exactly to `n`, drawn by the
/// conditional-binomial chain: cell i receives Binomial(remaining, 1/(b−i)).
pub fn multinomial_weights(b: usize, n: u64, rng: &mut impl Rng) -> Vec<u64> {
    assert!(b >= 1, "at least one cell required");
    let mut w = Vec::with_capacity(b);
    let mut remaining = n;
    for i in 0..b - 1 {
        let draw = if remaining == 0 {
            0
        } else {
            Binomial::new(remaining, 1.0 / (b - i) as f64)
                .expect("probability in (0, 1]")
                .sample(rng)
        };
        w.push(draw);
        remaining -= draw;
    }
    w.push(remaining);
    w
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Estimates the sampling distribution of `statistic`, a deterministic
/// function of `(row indices, frequency weights)` over a dataset with
/// `n_rows` rows that the closure captures.
pub fn blb_estimate<F>(
    n_rows: usize,
    config: &BlbConfig,
    statistic: F,
) -> Result<DistributionEstimate>
where
    F: Fn(&[usize], &[f64]) -> StatResult + Sync + Send,
{
    config.validate()?;
    if n_rows == 0 {
        return Err(Error::BadBootstrapConfig(
            "cannot resample an empty dataset".into(),
        ));
    }
    let n = n_rows;
    let b = ((n as f64).powf(config.gamma).ceil() as usize).clamp(1, n);
    let s = n.div_ceil(b);
    let r = config.resamples;

    // A statistic that cannot be evaluated on the full dataset is a request
    // problem, not a resampling artifact.
    let all: Vec<usize> = (0..n).collect();
    let point = match statistic(&all, &vec![1.0; n]) {
        Ok(v) => v,
        Err(StatError::Degenerate(m)) | Err(StatError::Failed(m)) => {
            return Err(Error::Invalid(format!(
                "statistic cannot be evaluated on the full dataset: {m}"
            )))
        }
    };

    // Stream 0 partitions; streams 1 + subset·r + resample draw weights.
    let mut order = all;
    partition_shuffle(&mut order, &mut stream_rng(config.seed, 0));
    let subset_rows = |si: usize| &order[si * b..((si + 1) * b).min(n)];

    let plug_ins: Vec<StatResult> = exec::map_indexed(s, |si| {
        let rows = subset_rows(si);
        statistic(rows, &vec![n as f64 / rows.len() as f64; rows.len()])
    });
    let draws: Vec<StatResult> = exec::map_indexed(s * r, |idx| {
        let rows = subset_rows(idx / r);
        let mut rng = stream_rng(config.seed, 1 + idx as u64);
        let w: Vec<f64> = multinomial_weights(rows.len(), n as u64, &mut rng)
            .into_iter()
            .map(|c| c as f64)
            .collect();
        statistic(rows, &w)
    });

    let (q_lo, q_hi) = ((1.0 - config.ci_level) / 2.0, (1.0 + config.ci_level) / 2.0);
    let mut subsets = Vec::with_capacity(s);
    let (mut ses, mut lo_devs, mut hi_devs) = (Vec::new(), Vec::new(), Vec::new());
    'subset: for si in 0..s {
        let rows = subset_rows(si).len();
        let sub_point = match &plug_ins[si] {
            Ok(v) => *v,
            Err(StatError::Degenerate(_)) => {
                subsets.push(degenerate_subset(rows));
                continue;
            }
            Err(StatError::Failed(m)) => {
                return Err(Error::StatisticFailed {
                    subset: si,
                    resample: 0,
                    message: format!("plug-in evaluation: {m}"),
                })
            }
        };
        let mut values = Vec::with_capacity(r);
        for rj in 0..r {
            match &draws[si * r + rj] {
                Ok(v) => values.push(*v),
                Err(StatError::Degenerate(_)) => {
                    subsets.push(degenerate_subset(rows));
                    continue 'subset;
                }
                Err(StatError::Failed(m)) => {
                    return Err(Error::StatisticFailed {
                        subset: si,
                        resample: rj,
                        message: m.clone(),
                    })
                }
            }
        }
        let (_, se) = mean_sd(&values);
        let mut devs: Vec<f64> = values.iter().map(|v| v - sub_point).collect();
        devs.sort_by(f64::total_cmp);
        let (d_lo, d_hi) = (sorted_quantile(&devs, q_lo), sorted_quantile(&devs, q_hi));
        ses.push(se);
        lo_devs.push(d_lo);
        hi_devs.push(d_hi);
        subsets.push(SubsetEstimate {
            rows,
            point: sub_point,
            se,
            ci_lo: sub_point + d_lo,
            ci_hi: sub_point + d_hi,
            degenerate: false,
        });
    }
    if ses.is_empty() {
        return Err(Error::AllSubsetsDegenerate(s));
    }

    let se = aggregate(&mut ses, config.aggregation);
    // Extreme skew can push both deviation quantiles to one side of zero;
    // widening to include the plug-in keeps ci_lo ≤ point ≤ ci_hi.
    let ci_lo = point + aggregate(&mut lo_devs, config.aggregation).min(0.0);
    let ci_hi = point + aggregate(&mut hi_devs, config.aggregation).max(0.0);

    Ok(DistributionEstimate {
        point,
        se,
        ci_lo,
        ci_hi,
        n_rows: n,
        subset_size: b,
        n_subsets: s,
        subsets,
        config: config.clone(),
    })
}

fn degenerate_subset(rows: usize) -> SubsetEstimate {
    SubsetEstimate {
        rows,
        point: f64::NAN,
        se: f64::NAN,
        ci_lo: f64::NAN,
        ci_hi: f64::NAN,
        degenerate: true,
    }
}

fn aggregate(values: &mut [f64], how: Aggregation) -> f64 {
    match how {
        Aggregation::Mean => compensated_sum(values) / values.len() as f64,
        Aggregation::Median => {
            values.sort_by(f64::total_cmp);
            sorted_quantile(values, 0.5)
        }
    }
}

/// Fisher–Yates over the index vector.
fn partition_shuffle(order: &mut [usize], rng: &mut impl Rng) {
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
}
