use serde::{Deserialize, Serialize};

use super::{run_experiment, ExperimentConfig, MetricRow};
use crate::bootstrap::{enumerate_bootstrap, BootstrapOptions, IntervalKind, SchemeTag, Statistic};
use crate::error::Result;
use crate::estimators::{between_mean_variance, summarize};
use crate::model::ClusterDataset;
use crate::numeric;

/// One scheme at one grid point, averaged over datasets.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeComparisonRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub scheme: SchemeTag,
    pub bootstrap_var_mu_prime_K: f64,
    pub mc_bootstrap_var_mu_prime_K: Option<f64>,
    /// Plug-in `var_hat_mu_prime_K`.
    pub target_var_mu_prime_K: f64,
    pub ratio_to_target: f64,
    pub excess_over_b1u: f64,
    pub intra_mu_prime_K: f64,
    pub coverage_bootstrap_t: Option<f64>,
    pub coverage_percentile: Option<f64>,
    pub coverage_normal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeComparison {
    pub rows: Vec<SchemeComparisonRow>,
}

impl SchemeComparison {
    pub fn row(&self, k: usize, scheme: SchemeTag) -> Option<&SchemeComparisonRow> {
        self.rows.iter().find(|r| r.k == k && r.scheme == scheme)
    }

    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut out = Vec::new();
        for r in &self.rows {
            let mut push = |metric: &str, value: Option<f64>| {
                if let Some(v) = value {
                    out.push(MetricRow::new(r.k, r.alpha, r.scheme.name(), metric, v));
                }
            };
            push("bootstrap_var_mu_prime_K", Some(r.bootstrap_var_mu_prime_K));
            push("mc_bootstrap_var_mu_prime_K", r.mc_bootstrap_var_mu_prime_K);
            push("target_var_mu_prime_K", Some(r.target_var_mu_prime_K));
            push("ratio_to_target", Some(r.ratio_to_target));
            push("excess_over_b1u", Some(r.excess_over_b1u));
            push("intra_mu_prime_K", Some(r.intra_mu_prime_K));
            push("coverage_bootstrap_t", r.coverage_bootstrap_t);
            push("coverage_percentile", r.coverage_percentile);
            push("coverage_normal", r.coverage_normal);
        }
        out
    }
}

/// Runs all four schemes side by side; `config.schemes` is ignored.
pub fn scheme_comparison(config: &ExperimentConfig) -> Result<SchemeComparison> {
    let config = config.clone().with_schemes(&SchemeTag::ALL);
    let report = run_experiment(&config)?;
    let mut rows = Vec::new();
    for g in &report.grid {
        for s in &g.schemes {
            let v = &s.bootstrap_variance;
            let coverage = |m: IntervalKind| s.coverage_of(m).and_then(|c| c.coverage);
            rows.push(SchemeComparisonRow {
                k: g.k,
                alpha: g.alpha,
                scheme: s.scheme,
                bootstrap_var_mu_prime_K: v.mean_analytic_var_mu_star_prime_K,
                mc_bootstrap_var_mu_prime_K: v.mean_mc_var_mu_star_prime_K,
                target_var_mu_prime_K: v.mean_target_var_mu_prime_K,
                ratio_to_target: v.ratio_to_target,
                excess_over_b1u: v.mean_excess_over_b1u,
                intra_mu_prime_K: v.mean_intra_mu_prime_K,
                coverage_bootstrap_t: coverage(IntervalKind::BootstrapT),
                coverage_percentile: coverage(IntervalKind::Percentile),
                coverage_normal: coverage(IntervalKind::Normal),
            });
        }
    }
    Ok(SchemeComparison { rows })
}

/// Exact bootstrap variances of one tiny dataset, by enumeration.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactComparisonRow {
    pub scheme: SchemeTag,
    pub var_mu_star_prime_K: f64,
    pub var_mu_star_N: f64,
    /// `(K-1) K^-2 (K-1)^-1 sum (mu_hat_k - mu_hat'_K)^2`.
    pub b1u_target: f64,
    pub ratio_to_b1u_target: f64,
    pub excess_over_b1u: f64,
    /// `K^-2 sum V_hat_k / n_k`.
    pub intra_mu_prime_K: f64,
}

pub fn exact_scheme_comparison(
    data: &ClusterDataset,
    options: BootstrapOptions,
) -> Result<Vec<ExactComparisonRow>> {
    let summary = summarize(data)?;
    let k = summary.k() as f64;
    let b1u_target = (k - 1.0) / (k * k) * between_mean_variance(&summary)?;
    let intra = numeric::sum(
        summary
            .sizes
            .iter()
            .zip(&summary.variances)
            .map(|(&n, &v)| v / n as f64),
    ) / (k * k);
    SchemeTag::ALL
        .iter()
        .map(|&scheme| {
            let law = enumerate_bootstrap(data, scheme, options)?;
            let var_prime = law.variance(Statistic::MuPrimeK);
            Ok(ExactComparisonRow {
                scheme,
                var_mu_star_prime_K: var_prime,
                var_mu_star_N: law.variance(Statistic::MuN),
                b1u_target,
                ratio_to_b1u_target: var_prime / b1u_target,
                excess_over_b1u: var_prime - b1u_target,
                intra_mu_prime_K: intra,
            })
        })
        .collect()
}
