//! Replication engine.
//!
//! For every grid point `g` the engine draws `R` datasets (dataset `r` from the
//! seed `derive_seed(master_seed, [g, r])`), applies the estimators and every
//! requested bootstrap scheme (scheme `s` seeded by
//! `derive_seed(master_seed, [g, r, RESAMPLE, s])`), and aggregates in
//! replicate order. Identical configurations give bit-identical reports.
//!
//! Each scheme is assessed on its own pivot `(theta_hat - theta) / s_hat`:
//!
//! | scheme | `theta_hat` | `theta` | `s_hat^2` |
//! |--------|-------------|---------|-----------|
//! | B2     | `mu_hat_N`  | `sum_k (n_k/N) mu_k` (conditional on the populations) | `N^-2 sum n_k V_hat_k` |
//! | B1 uniform | `mu_hat'_K` | `mu` | `var_hat_mu_prime_K` |
//! | B1 weighted | `mu_hat_N` | `mu` | `var_hat_mu_N` |
//! | B3     | `mu_hat'_K` | `mu` | the scheme's own `Var* mu'*_K` |
//!
//! Bootstrap replicates are studentized as `(theta*_b - theta_hat) / scale_b`.

mod compare;
mod rates;

pub use compare::{
    exact_scheme_comparison, scheme_comparison, ExactComparisonRow, SchemeComparison,
    SchemeComparisonRow,
};
pub use rates::{rate_table, QuantileCheck, RateRow, RateTable};

use std::io::Write;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{ks_to_normal, ks_two_sample};
use crate::bootstrap::{
    confidence_interval, interval_variance, point_estimate, run_bootstrap, BootstrapOptions,
    IntervalKind, IntervalMethod, Replicate, SchemeTag, Statistic,
};
use crate::error::{Error, Result};
use crate::estimators::{
    between_mean_variance, decomposed_stats, design_constants, estimate_from_summary, summarize,
    EstimatorOptions, TruthVariances,
};
use crate::model::{generate_with_sizes, subsample_sizes, DesignParams, TruthParams};
use crate::numeric::{self, sort_floats, Moments};
use crate::rng::{derive_seed, domain};

fn default_level() -> f64 {
    0.95
}

fn default_schemes() -> Vec<SchemeTag> {
    SchemeTag::ALL.to_vec()
}

fn default_berry_esseen_c() -> f64 {
    crate::asymptotics::DEFAULT_BERRY_ESSEEN_C
}

/// A simulation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub truth: TruthParams,
    pub grid: Vec<DesignParams>,
    /// Datasets per grid point.
    #[serde(rename = "R")]
    pub replications: usize,
    /// Bootstrap replicates per dataset and scheme.
    #[serde(rename = "B")]
    pub bootstrap_replicates: usize,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<SchemeTag>,
    #[serde(default = "default_level")]
    pub level: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub printed_formulas: bool,
    #[serde(default)]
    pub truncate_gamma: bool,
    #[serde(default = "default_berry_esseen_c")]
    pub berry_esseen_c: f64,
}

impl ExperimentConfig {
    pub fn new(
        truth: TruthParams,
        grid: Vec<DesignParams>,
        replications: usize,
        bootstrap_replicates: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            truth,
            grid,
            replications,
            bootstrap_replicates,
            schemes: default_schemes(),
            level: default_level(),
            master_seed,
            printed_formulas: false,
            truncate_gamma: false,
            berry_esseen_c: default_berry_esseen_c(),
        }
    }

    pub fn with_schemes(mut self, schemes: &[SchemeTag]) -> Self {
        self.schemes = schemes.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        if self.grid.is_empty() {
            return Err(Error::InvalidDesign("the design grid is empty".into()));
        }
        for design in &self.grid {
            design.validate()?;
            if design.k < 2 {
                return Err(Error::DegenerateK { k: design.k });
            }
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("R must be at least 1".into()));
        }
        if self.bootstrap_replicates == 0 {
            return Err(Error::InvalidArgument("B must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "level {} outside (0, 1)",
                self.level
            )));
        }
        Ok(())
    }

    fn estimator_options(&self) -> EstimatorOptions {
        EstimatorOptions {
            printed_formulas: self.printed_formulas,
            truncate_nonneg: self.truncate_gamma,
        }
    }

    fn bootstrap_options(&self) -> BootstrapOptions {
        BootstrapOptions {
            printed_formulas: self.printed_formulas,
        }
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn positive_sqrt(v: f64) -> Option<f64> {
    (v > 0.0 && v.is_finite()).then(|| v.sqrt())
}

/// Monte Carlo mean of an estimator against its true value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub std_error: Option<f64>,
    pub bias: f64,
}

impl EstimatorSummary {
    fn new(name: &str, truth: f64, m: &Moments) -> Self {
        Self {
            name: name.to_string(),
            truth,
            mean: m.mean(),
            std_error: finite(m.std_error()),
            bias: m.mean() - truth,
        }
    }

    /// Bias in units of the Monte Carlo standard error.
    pub fn z_score(&self) -> Option<f64> {
        self.std_error
            .filter(|se| *se > 0.0)
            .map(|se| self.bias / se)
    }
}

/// Empirical variance of an estimator against the model variance, and the
/// mean of its variance estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub name: String,
    pub theoretical: f64,
    pub empirical: Option<f64>,
    pub ratio: Option<f64>,
    pub mean_estimate: f64,
    pub estimate_ratio: f64,
}

/// Sup distance of a statistic's Monte Carlo law to the standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityCheck {
    pub statistic: String,
    pub count: usize,
    pub ks_to_normal: Option<f64>,
}

/// Coverage and mean width of one interval method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub method: IntervalKind,
    /// Datasets on which the interval was defined.
    pub count: usize,
    pub coverage: Option<f64>,
    pub mean_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct CoverageAccumulator {
    covered: usize,
    width: Moments,
}

impl CoverageAccumulator {
    fn push(&mut self, hit: bool, width: f64) {
        self.covered += hit as usize;
        self.width.push(width);
    }

    fn summary(&self, method: IntervalKind) -> CoverageSummary {
        let n = self.width.count();
        CoverageSummary {
            method,
            count: n,
            coverage: (n > 0).then(|| self.covered as f64 / n as f64),
            mean_width: finite(self.width.mean()),
        }
    }
}

/// What a scheme's intervals are meant to cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageTarget {
    /// The superpopulation mean `mu`.
    Mu,
    /// `sum_k (n_k/N) mu_k`, the mean of the sampled populations.
    ConditionalMean,
}

impl CoverageTarget {
    pub fn of(scheme: SchemeTag) -> Self {
        match scheme {
            SchemeTag::B2Individuals => CoverageTarget::ConditionalMean,
            _ => CoverageTarget::Mu,
        }
    }
}

/// Bootstrap variance of `mu'*_K` against the plug-in `var_hat_mu_prime_K`,
/// averaged over datasets.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapVarianceSummary {
    pub mean_analytic_var_mu_star_prime_K: f64,
    pub mean_mc_var_mu_star_prime_K: Option<f64>,
    pub mean_target_var_mu_prime_K: f64,
    /// `mean_analytic / mean_target`.
    pub ratio_to_target: f64,
    /// Mean of `Var* mu'*_K - (K-1) K^-2 (K-1)^-1 sum (mu_hat_k - mu_hat'_K)^2`,
    /// the excess over the uniform population bootstrap.
    pub mean_excess_over_b1u: f64,
    /// Mean of `K^-2 sum V_hat_k / n_k`.
    pub mean_intra_mu_prime_K: f64,
}

/// Bootstrap law against sampling law of the scheme's pivot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupDistance {
    /// Two-sample distance between the sampling law and the average of the
    /// per-dataset bootstrap laws.
    pub average: f64,
    /// Largest distance between the sampling law and a single dataset's
    /// bootstrap law.
    pub max_per_dataset: f64,
    /// `K^{1/2 + 2 alpha}`.
    pub scaling: f64,
    pub scaled_average: f64,
    pub scaled_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: SchemeTag,
    pub statistic: Statistic,
    pub target: CoverageTarget,
    /// Datasets whose pivot was defined.
    pub datasets_used: usize,
    /// Datasets with a non-positive `s_hat^2`.
    pub degenerate_datasets: usize,
    /// Replicates with a non-positive or undefined studentizing variance.
    pub degenerate_replicates: usize,
    pub coverage: Vec<CoverageSummary>,
    pub bootstrap_variance: BootstrapVarianceSummary,
    pub sup_distance: Option<SupDistance>,
}

impl SchemeReport {
    pub fn coverage_of(&self, method: IntervalKind) -> Option<&CoverageSummary> {
        self.coverage.iter().find(|c| c.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub n_total: usize,
    pub n_star: f64,
    pub n_tilde: f64,
    #[serde(rename = "R")]
    pub replications: usize,
    pub estimators: Vec<EstimatorSummary>,
    pub variances: Vec<VarianceCheck>,
    pub normality: Vec<NormalityCheck>,
    /// Normal intervals from the plug-in variances, for `mu`.
    pub normal_coverage: Vec<(String, CoverageSummary)>,
    /// Datasets with a non-positive plug-in variance for either grand mean.
    pub degenerate_datasets: usize,
    pub schemes: Vec<SchemeReport>,
}

impl GridPointReport {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.name == name)
    }

    pub fn variance(&self, name: &str) -> Option<&VarianceCheck> {
        self.variances.iter().find(|v| v.name == name)
    }

    pub fn normality(&self, statistic: &str) -> Option<&NormalityCheck> {
        self.normality.iter().find(|n| n.statistic == statistic)
    }

    pub fn scheme(&self, scheme: SchemeTag) -> Option<&SchemeReport> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub grid: Vec<GridPointReport>,
    /// Wall-clock time; not serialized, so reports of identical runs are
    /// byte-identical.
    #[serde(skip)]
    pub elapsed: Duration,
}

/// One row of the plot-ready long format `K,alpha,scheme,metric,value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub scheme: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    fn new(k: usize, alpha: f64, scheme: &str, metric: impl Into<String>, value: f64) -> Self {
        Self {
            k,
            alpha,
            scheme: scheme.to_string(),
            metric: metric.into(),
            value,
        }
    }
}

/// Writes rows as CSV with header `K,alpha,scheme,metric,value`; rows with
/// non-finite values are skipped.
pub fn write_metric_csv<W: Write>(rows: &[MetricRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["K", "alpha", "scheme", "metric", "value"])
        .map_err(io)?;
    for r in rows.iter().filter(|r| r.value.is_finite()) {
        w.write_record([
            r.k.to_string(),
            r.alpha.to_string(),
            r.scheme.clone(),
            r.metric.clone(),
            r.value.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

impl ExperimentReport {
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for g in &self.grid {
            let row = |scheme: &str, metric: String, value: f64| {
                MetricRow::new(g.k, g.alpha, scheme, metric, value)
            };
            for e in &g.estimators {
                rows.push(row("none", format!("mean_{}", e.name), e.mean));
                rows.push(row("none", format!("bias_{}", e.name), e.bias));
            }
            for v in &g.variances {
                if let Some(r) = v.ratio {
                    rows.push(row("none", format!("variance_ratio_{}", v.name), r));
                }
            }
            for n in &g.normality {
                if let Some(d) = n.ks_to_normal {
                    rows.push(row("none", format!("ks_{}", n.statistic), d));
                }
            }
            for s in &g.schemes {
                let name = s.scheme.name();
                for c in &s.coverage {
                    let method = serde_json::to_value(c.method)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default();
                    if let Some(v) = c.coverage {
                        rows.push(row(name, format!("coverage_{method}"), v));
                    }
                    if let Some(v) = c.mean_width {
                        rows.push(row(name, format!("width_{method}"), v));
                    }
                }
                if let Some(d) = &s.sup_distance {
                    rows.push(row(name, "sup_distance".into(), d.average));
                    rows.push(row(name, "scaled_sup_distance".into(), d.scaled_average));
                    rows.push(row(name, "scaled_sup_distance_max".into(), d.scaled_max));
                }
            }
        }
        rows
    }
}

/// Per-dataset result for one scheme.
struct SchemeOutcome {
    pivot: Option<f64>,
    /// Ascending studentized replicates.
    t_star: Vec<f64>,
    degenerate_replicates: usize,
    bootstrap_t: Option<(bool, f64)>,
    percentile: Option<(bool, f64)>,
    normal: Option<(bool, f64)>,
    analytic_var_prime: f64,
    mc_var_prime: f64,
    target_var_prime: f64,
    excess_over_b1u: f64,
    intra_prime: f64,
}

/// Per-dataset result.
struct DatasetOutcome {
    mu_hat_n: f64,
    mu_hat_prime_k: f64,
    sigma2_hat: f64,
    gamma_hat: f64,
    v_hat: f64,
    var_hat_mu_n: f64,
    var_hat_mu_prime_k: f64,
    t_n: Option<f64>,
    t_prime_k: Option<f64>,
    t_intra: Option<f64>,
    t_inter: Option<f64>,
    normal_n: Option<(bool, f64)>,
    normal_prime_k: Option<(bool, f64)>,
    schemes: Vec<SchemeOutcome>,
}

/// Raw sampling statistics kept for downstream diagnostics.
pub(crate) struct GridSamples {
    /// Ascending `(mu_hat_N - mu) / S_N` with the model standard deviation.
    pub z_n: Vec<f64>,
}

fn interval_outcome(
    stats: &[Replicate],
    statistic: Statistic,
    point: f64,
    scale: f64,
    method: IntervalMethod,
    level: f64,
    target: f64,
) -> Option<(bool, f64)> {
    confidence_interval(stats, statistic, point, scale, method, level)
        .ok()
        .map(|ci| (ci.contains(target), ci.width()))
}

#[allow(clippy::too_many_arguments)]
fn scheme_outcome(
    config: &ExperimentConfig,
    data: &crate::model::ClusterDataset,
    summary: &crate::estimators::ClusterSummary,
    report: &crate::estimators::EstimateReport,
    conditional_mean: f64,
    scheme: SchemeTag,
    seed: u64,
) -> Result<SchemeOutcome> {
    let k = summary.k() as f64;
    let statistic = scheme.target();
    let run = run_bootstrap(
        data,
        scheme,
        config.bootstrap_replicates,
        seed,
        config.bootstrap_options(),
    )?;
    let between = between_mean_variance(summary)?;
    let target_var_prime = between / k;
    let analytic_var_prime = run.analytic_moments.var_mu_star_prime_K;
    let point = point_estimate(report, statistic);
    let variance = interval_variance(scheme, report, &run.analytic_moments);
    let target = match CoverageTarget::of(scheme) {
        CoverageTarget::Mu => config.truth.mu,
        CoverageTarget::ConditionalMean => conditional_mean,
    };
    let scale = positive_sqrt(variance);
    let valid: Vec<Replicate> = run
        .stats
        .iter()
        .copied()
        .filter(|r| r.scale > 0.0 && r.scale.is_finite())
        .collect();
    let mut t_star: Vec<f64> = valid
        .iter()
        .map(|r| (r.value(statistic) - point) / r.scale)
        .collect();
    sort_floats(&mut t_star);
    let level = config.level;
    let (bootstrap_t, normal) = match scale {
        Some(s) => (
            interval_outcome(
                &valid,
                statistic,
                point,
                s,
                IntervalMethod::BootstrapT,
                level,
                target,
            ),
            interval_outcome(
                &valid,
                statistic,
                point,
                s,
                IntervalMethod::Normal,
                level,
                target,
            ),
        ),
        None => (None, None),
    };
    let percentile = interval_outcome(
        &run.stats,
        statistic,
        point,
        1.0,
        IntervalMethod::Percentile,
        level,
        target,
    );
    Ok(SchemeOutcome {
        pivot: scale.map(|s| (point - target) / s),
        degenerate_replicates: run.stats.len() - valid.len(),
        t_star,
        bootstrap_t,
        percentile,
        normal,
        analytic_var_prime,
        mc_var_prime: run.monte_carlo_moments.var_mu_star_prime_K,
        target_var_prime,
        excess_over_b1u: analytic_var_prime - (k - 1.0) / (k * k) * between,
        intra_prime: report.var_intra_mu_prime_K,
    })
}

fn dataset_outcome(
    config: &ExperimentConfig,
    g: usize,
    r: usize,
    sizes: &[usize],
    schemes: &[SchemeTag],
) -> Result<DatasetOutcome> {
    let truth = &config.truth;
    let seed = derive_seed(config.master_seed, &[g as u64, r as u64]);
    let sample = generate_with_sizes(truth, sizes, seed);
    let summary = summarize(&sample.dataset)?;
    let report = estimate_from_summary(&summary, config.estimator_options())?;
    let z = crate::asymptotics::normal_quantile(0.5 + config.level / 2.0);
    let normal = |point: f64, variance: f64| {
        positive_sqrt(variance).map(|s| ((point - truth.mu).abs() <= z * s, 2.0 * z * s))
    };
    let studentized =
        |point: f64, variance: f64| positive_sqrt(variance).map(|s| (point - truth.mu) / s);
    let (t_intra, t_inter) = match decomposed_stats(
        &summary,
        report.gamma_hat,
        &sample.population_means,
        truth.mu,
    ) {
        Ok((a, b)) => (Some(a), Some(b)),
        Err(_) => (None, None),
    };
    let n_total = summary.n_total() as f64;
    let conditional_mean = numeric::sum(
        sizes
            .iter()
            .zip(&sample.population_means)
            .map(|(&n, &m)| n as f64 * m),
    ) / n_total;
    let schemes = schemes
        .iter()
        .map(|&scheme| {
            let seed = derive_seed(
                config.master_seed,
                &[g as u64, r as u64, domain::RESAMPLE, scheme.stream_id()],
            );
            scheme_outcome(
                config,
                &sample.dataset,
                &summary,
                &report,
                conditional_mean,
                scheme,
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetOutcome {
        mu_hat_n: report.mu_hat_N,
        mu_hat_prime_k: report.mu_hat_prime_K,
        sigma2_hat: report.sigma2_hat,
        gamma_hat: report.gamma_hat,
        v_hat: report.v_hat,
        var_hat_mu_n: report.var_hat_mu_N,
        var_hat_mu_prime_k: report.var_hat_mu_prime_K,
        t_n: studentized(report.mu_hat_N, report.var_hat_mu_N),
        t_prime_k: studentized(report.mu_hat_prime_K, report.var_hat_mu_prime_K),
        t_intra,
        t_inter,
        normal_n: normal(report.mu_hat_N, report.var_hat_mu_N),
        normal_prime_k: normal(report.mu_hat_prime_K, report.var_hat_mu_prime_K),
        schemes,
    })
}

fn normality(statistic: &str, mut values: Vec<f64>) -> NormalityCheck {
    sort_floats(&mut values);
    NormalityCheck {
        statistic: statistic.to_string(),
        count: values.len(),
        ks_to_normal: ks_to_normal(&values).ok(),
    }
}

fn moments_of<I: IntoIterator<Item = f64>>(values: I) -> Moments {
    let mut m = Moments::new();
    values.into_iter().for_each(|v| m.push(v));
    m
}

fn aggregate_scheme(
    scheme: SchemeTag,
    index: usize,
    outcomes: &[DatasetOutcome],
    scaling: f64,
) -> Result<SchemeReport> {
    let per: Vec<&SchemeOutcome> = outcomes.iter().map(|o| &o.schemes[index]).collect();
    let mut pivots: Vec<f64> = per.iter().filter_map(|o| o.pivot).collect();
    sort_floats(&mut pivots);
    let mut acc = [CoverageAccumulator::default(); 3];
    for o in &per {
        for (a, v) in acc.iter_mut().zip([o.bootstrap_t, o.percentile, o.normal]) {
            if let Some((hit, width)) = v {
                a.push(hit, width);
            }
        }
    }
    let sup_distance = if pivots.is_empty() {
        None
    } else {
        let mut max_per_dataset: f64 = 0.0;
        let mut pooled = Vec::with_capacity(per.iter().map(|o| o.t_star.len()).sum());
        for o in per
            .iter()
            .filter(|o| o.pivot.is_some() && !o.t_star.is_empty())
        {
            max_per_dataset = max_per_dataset.max(ks_two_sample(&pivots, &o.t_star)?);
            pooled.extend_from_slice(&o.t_star);
        }
        if pooled.is_empty() {
            None
        } else {
            sort_floats(&mut pooled);
            let average = ks_two_sample(&pivots, &pooled)?;
            Some(SupDistance {
                average,
                max_per_dataset,
                scaling,
                scaled_average: scaling * average,
                scaled_max: scaling * max_per_dataset,
            })
        }
    };
    let analytic = moments_of(per.iter().map(|o| o.analytic_var_prime));
    let target = moments_of(per.iter().map(|o| o.target_var_prime));
    Ok(SchemeReport {
        scheme,
        statistic: scheme.target(),
        target: CoverageTarget::of(scheme),
        datasets_used: pivots.len(),
        degenerate_datasets: per.len() - pivots.len(),
        degenerate_replicates: per.iter().map(|o| o.degenerate_replicates).sum(),
        coverage: vec![
            acc[0].summary(IntervalKind::BootstrapT),
            acc[1].summary(IntervalKind::Percentile),
            acc[2].summary(IntervalKind::Normal),
        ],
        bootstrap_variance: BootstrapVarianceSummary {
            mean_analytic_var_mu_star_prime_K: analytic.mean(),
            mean_mc_var_mu_star_prime_K: finite(
                moments_of(per.iter().map(|o| o.mc_var_prime).filter(|v| v.is_finite())).mean(),
            ),
            mean_target_var_mu_prime_K: target.mean(),
            ratio_to_target: analytic.mean() / target.mean(),
            mean_excess_over_b1u: moments_of(per.iter().map(|o| o.excess_over_b1u)).mean(),
            mean_intra_mu_prime_K: moments_of(per.iter().map(|o| o.intra_prime)).mean(),
        },
        sup_distance,
    })
}

/// Simulates one grid point.
pub(crate) fn simulate_grid_point(
    config: &ExperimentConfig,
    g: usize,
    design: &DesignParams,
    schemes: &[SchemeTag],
) -> Result<(GridPointReport, GridSamples)> {
    let truth = &config.truth;
    let sizes = subsample_sizes(design)?;
    let outcomes: Vec<DatasetOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|r| dataset_outcome(config, g, r, &sizes, schemes))
        .collect::<Result<_>>()?;

    let constants = design_constants(&sizes);
    let truth_var = TruthVariances::compute(truth, &sizes);
    let mu_n = moments_of(outcomes.iter().map(|o| o.mu_hat_n));
    let mu_prime = moments_of(outcomes.iter().map(|o| o.mu_hat_prime_k));
    let estimators = vec![
        EstimatorSummary::new("mu_hat_N", truth.mu, &mu_n),
        EstimatorSummary::new("mu_hat_prime_K", truth.mu, &mu_prime),
        EstimatorSummary::new(
            "sigma2_hat",
            truth.sigma2,
            &moments_of(outcomes.iter().map(|o| o.sigma2_hat)),
        ),
        EstimatorSummary::new(
            "gamma_hat",
            truth.gamma,
            &moments_of(outcomes.iter().map(|o| o.gamma_hat)),
        ),
        EstimatorSummary::new(
            "v_hat",
            truth.marginal_variance(),
            &moments_of(outcomes.iter().map(|o| o.v_hat)),
        ),
    ];
    let variance_check = |name: &str, theoretical: f64, m: &Moments, estimates: Moments| {
        let empirical = finite(m.variance());
        VarianceCheck {
            name: name.to_string(),
            theoretical,
            empirical,
            ratio: empirical.map(|e| e / theoretical),
            mean_estimate: estimates.mean(),
            estimate_ratio: estimates.mean() / theoretical,
        }
    };
    let variances = vec![
        variance_check(
            "mu_hat_N",
            truth_var.s2_N,
            &mu_n,
            moments_of(outcomes.iter().map(|o| o.var_hat_mu_n)),
        ),
        variance_check(
            "mu_hat_prime_K",
            truth_var.s2_prime_K,
            &mu_prime,
            moments_of(outcomes.iter().map(|o| o.var_hat_mu_prime_k)),
        ),
    ];

    let s_n = truth_var.s2_N.sqrt();
    let s_prime = truth_var.s2_prime_K.sqrt();
    let mut z_n: Vec<f64> = if s_n > 0.0 {
        outcomes
            .iter()
            .map(|o| (o.mu_hat_n - truth.mu) / s_n)
            .collect()
    } else {
        Vec::new()
    };
    let z_prime: Vec<f64> = if s_prime > 0.0 {
        outcomes
            .iter()
            .map(|o| (o.mu_hat_prime_k - truth.mu) / s_prime)
            .collect()
    } else {
        Vec::new()
    };
    let normality = vec![
        normality("t_N", outcomes.iter().filter_map(|o| o.t_n).collect()),
        normality(
            "t_prime_K",
            outcomes.iter().filter_map(|o| o.t_prime_k).collect(),
        ),
        normality("z_N", z_n.clone()),
        normality("z_prime_K", z_prime),
        normality(
            "t_intra",
            outcomes.iter().filter_map(|o| o.t_intra).collect(),
        ),
        normality(
            "t_inter",
            outcomes.iter().filter_map(|o| o.t_inter).collect(),
        ),
    ];
    sort_floats(&mut z_n);

    let mut cov_n = CoverageAccumulator::default();
    let mut cov_prime = CoverageAccumulator::default();
    for o in &outcomes {
        if let Some((hit, w)) = o.normal_n {
            cov_n.push(hit, w);
        }
        if let Some((hit, w)) = o.normal_prime_k {
            cov_prime.push(hit, w);
        }
    }
    let degenerate_datasets = outcomes
        .iter()
        .filter(|o| o.t_n.is_none() || o.t_prime_k.is_none())
        .count();

    let scaling = (design.k as f64).powf(0.5 + 2.0 * design.alpha);
    let scheme_reports = schemes
        .iter()
        .enumerate()
        .map(|(i, &s)| aggregate_scheme(s, i, &outcomes, scaling))
        .collect::<Result<Vec<_>>>()?;

    let report = GridPointReport {
        k: design.k,
        alpha: design.alpha,
        n_total: sizes.iter().sum(),
        n_star: constants.n_star,
        n_tilde: constants.n_tilde,
        replications: config.replications,
        estimators,
        variances,
        normality,
        normal_coverage: vec![
            ("mu_hat_N".to_string(), cov_n.summary(IntervalKind::Normal)),
            (
                "mu_hat_prime_K".to_string(),
                cov_prime.summary(IntervalKind::Normal),
            ),
        ],
        degenerate_datasets,
        schemes: scheme_reports,
    };
    Ok((report, GridSamples { z_n }))
}

/// Runs every grid point of `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = std::time::Instant::now();
    let grid = config
        .grid
        .iter()
        .enumerate()
        .map(|(g, design)| simulate_grid_point(config, g, design, &config.schemes).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: config.clone(),
        grid,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke() -> ExperimentConfig {
        ExperimentConfig::new(
            TruthParams::gaussian(0.0, 1.0, 1.0),
            vec![DesignParams::balanced(2, 0.3, 1.0)],
            2,
            2,
            17,
        )
    }

    #[test]
    fn smoke_report_is_finite_and_serializable() {
        let report = run_experiment(&smoke()).unwrap();
        let g = &report.grid[0];
        assert_eq!(g.schemes.len(), 4);
        assert!(g.estimator("mu_hat_N").unwrap().mean.is_finite());
        let json = serde_json::to_string(&report).unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.grid, report.grid);
        assert!(!json.contains("elapsed"));
    }

    #[test]
    fn deterministic_across_runs() {
        let mut cfg = smoke();
        cfg.replications = 20;
        cfg.bootstrap_replicates = 30;
        cfg.grid = vec![DesignParams::new(6, 0.3, vec![1.0, 2.0])];
        let a = serde_json::to_vec(&run_experiment(&cfg).unwrap()).unwrap();
        let b = serde_json::to_vec(&run_experiment(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coverage_and_distances_in_range() {
        let mut cfg = smoke();
        cfg.replications = 30;
        cfg.bootstrap_replicates = 400;
        cfg.grid = vec![DesignParams::new(8, 0.3, vec![1.0, 2.0])];
        let report = run_experiment(&cfg).unwrap();
        for s in &report.grid[0].schemes {
            for c in &s.coverage {
                if let Some(v) = c.coverage {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
            let d = s.sup_distance.as_ref().unwrap();
            assert!(d.average >= 0.0 && d.max_per_dataset >= 0.0);
            assert!(d.average <= 1.0 && d.max_per_dataset <= 1.0);
        }
        let b3 = report.grid[0].scheme(SchemeTag::B3Cluster).unwrap();
        let v = &b3.bootstrap_variance;
        assert!((v.mean_excess_over_b1u - v.mean_intra_mu_prime_K).abs() < 1e-12);
    }

    #[test]
    fn config_validation_and_json() {
        let mut cfg = smoke();
        cfg.replications = 0;
        assert!(run_experiment(&cfg).is_err());
        let json = r#"{"truth":{"mu":0,"gamma":1,"sigma2":1},
            "grid":[{"k":4,"alpha":0.3,"c":[1.0]}],"R":3,"B":5,"master_seed":1}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.schemes.len(), 4);
        assert_eq!(cfg.level, 0.95);
        let bad = r#"{"truth":{"mu":0,"gamma":1,"sigma2":1},"grid":[],"R":3,"B":5,"master_seed":1,"extra":1}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
    }

    #[test]
    fn metric_csv_header() {
        let report = run_experiment(&smoke()).unwrap();
        let mut buf = Vec::new();
        write_metric_csv(&report.metric_rows(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("K,alpha,scheme,metric,value\n"));
        assert!(text.lines().count() > 5);
    }
}
