use serde::{Deserialize, Serialize};

use super::{simulate_grid_point, ExperimentConfig, MetricRow};
use crate::asymptotics::{
    berry_esseen_bound, corrected_quantile, normal_cdf, third_moment_sum_from_truth,
    BerryEsseenBound, EdgeworthInputs, StatisticKind,
};
use crate::bootstrap::SchemeTag;
use crate::error::{Error, Result};
use crate::estimators::TruthVariances;
use crate::model::subsample_sizes;

/// Points at which the quantile correction is checked.
pub const CHECK_POINTS: [f64; 2] = [-1.645, 1.645];

/// Empirical distribution of the normalized weighted mean at `x` and at the
/// corrected point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileCheck {
    pub x: f64,
    pub phi: f64,
    pub uncorrected_cdf: f64,
    pub corrected_point: f64,
    pub corrected_cdf: f64,
    pub uncorrected_error: f64,
    pub corrected_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub n_total: usize,
    pub sup_distance_average: f64,
    pub sup_distance_max: f64,
    /// `K^{1/2 + 2 alpha}`.
    pub scaling: f64,
    pub scaled_average: f64,
    pub scaled_max: f64,
    pub bound: BerryEsseenBound,
    pub within_bound: bool,
    /// Signed `sum_k (n_k/N)^3 E(mu_hat_k - mu)^3` under the truth.
    pub third_moment_sum: f64,
    /// Standard deviation `S_N` of the weighted mean.
    pub s_n: f64,
    pub quantile_checks: Vec<QuantileCheck>,
    /// Whether the corrected points bring the empirical distribution closer
    /// to `Phi`, summed over the check points.
    pub correction_improves: bool,
}

/// Scaled bootstrap error of the weighted population scheme along a `K` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub scheme: SchemeTag,
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn all_within_bound(&self) -> bool {
        self.rows.iter().all(|r| r.within_bound)
    }

    pub fn improved_points(&self) -> usize {
        self.rows.iter().filter(|r| r.correction_improves).count()
    }

    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let scheme = self.scheme.name();
        let mut rows = Vec::new();
        for r in &self.rows {
            let mut push = |metric: &str, value: f64| {
                rows.push(MetricRow::new(r.k, r.alpha, scheme, metric, value));
            };
            push("sup_distance", r.sup_distance_average);
            push("sup_distance_max", r.sup_distance_max);
            push("scaled_sup_distance", r.scaled_average);
            push("scaled_sup_distance_max", r.scaled_max);
            push("berry_esseen_bound", r.bound.scaled);
            push("berry_esseen_bound_per_k", r.bound.per_k);
            for q in &r.quantile_checks {
                push(
                    &format!("uncorrected_error_at_{}", q.x),
                    q.uncorrected_error,
                );
                push(&format!("corrected_error_at_{}", q.x), q.corrected_error);
            }
        }
        rows
    }
}

fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// Runs the weighted population bootstrap over the grid and scales the
/// bootstrap-versus-sampling sup distance by `K^{1/2 + 2 alpha}`.
///
/// The grid must hold at least three distinct `K` sharing `alpha` and `c`.
/// `config.schemes` is ignored.
pub fn rate_table(config: &ExperimentConfig) -> Result<RateTable> {
    config.validate()?;
    let mut ks: Vec<usize> = config.grid.iter().map(|d| d.k).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < 3 {
        return Err(Error::GridTooSmall { got: ks.len() });
    }
    let first = &config.grid[0];
    if config
        .grid
        .iter()
        .any(|d| d.alpha != first.alpha || d.c != first.c)
    {
        return Err(Error::InvalidDesign(
            "rate tables need a common alpha and c across the grid".into(),
        ));
    }
    if config.truth.gamma == 0.0 {
        return Err(Error::ZeroGamma);
    }
    let scheme = SchemeTag::B1Weighted;
    let mut rows = Vec::with_capacity(config.grid.len());
    for (g, design) in config.grid.iter().enumerate() {
        let bound = berry_esseen_bound(&config.truth, design, config.berry_esseen_c)?;
        let sizes = subsample_sizes(design)?;
        let (report, samples) = simulate_grid_point(config, g, design, &[scheme])?;
        let sup = report.schemes[0]
            .sup_distance
            .clone()
            .ok_or_else(|| Error::InvalidArgument("no defined pivots at this grid point".into()))?;
        let s_n = TruthVariances::compute(&config.truth, &sizes).s2_N.sqrt();
        let tms = third_moment_sum_from_truth(&config.truth, &sizes);
        let inputs = EdgeworthInputs::new(s_n, tms, StatisticKind::Normalized)?;
        let quantile_checks = CHECK_POINTS
            .iter()
            .map(|&x| {
                let phi = normal_cdf(x);
                let corrected_point = corrected_quantile(x, &inputs)?;
                let uncorrected_cdf = ecdf(&samples.z_n, x);
                let corrected_cdf = ecdf(&samples.z_n, corrected_point);
                Ok(QuantileCheck {
                    x,
                    phi,
                    uncorrected_cdf,
                    corrected_point,
                    corrected_cdf,
                    uncorrected_error: (uncorrected_cdf - phi).abs(),
                    corrected_error: (corrected_cdf - phi).abs(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let total = |f: fn(&QuantileCheck) -> f64| quantile_checks.iter().map(f).sum::<f64>();
        let correction_improves = total(|q| q.corrected_error) < total(|q| q.uncorrected_error);
        rows.push(RateRow {
            k: design.k,
            alpha: design.alpha,
            n_total: report.n_total,
            sup_distance_average: sup.average,
            sup_distance_max: sup.max_per_dataset,
            scaling: sup.scaling,
            scaled_average: sup.scaled_average,
            scaled_max: sup.scaled_max,
            within_bound: sup.scaled_average <= bound.scaled,
            bound,
            third_moment_sum: tms,
            s_n,
            quantile_checks,
            correction_improves,
        });
    }
    Ok(RateTable { scheme, rows })
}
