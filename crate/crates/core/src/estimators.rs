//! Point and variance estimators for two-stage cluster samples.
//!
//! Notation: `n_k` subsample sizes, `N = sum n_k`, `mu_hat_k` and `V_hat_k` the
//! within-population mean and unbiased variance, `n* = N^-2 sum n_k^2` and
//! `n~` the harmonic mean of the `n_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterDataset, TruthParams};
use crate::numeric::{self, sum};

/// Per-population means and unbiased variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub sizes: Vec<usize>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl ClusterSummary {
    /// Assembles a summary from known per-population quantities.
    pub fn new(sizes: Vec<usize>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::EmptyInput);
        }
        if sizes.len() != means.len() || sizes.len() != variances.len() {
            return Err(Error::InvalidArgument(
                "sizes, means and variances differ in length".into(),
            ));
        }
        if let Some(index) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::EmptyPopulation { index });
        }
        Ok(Self {
            sizes,
            means,
            variances,
        })
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn n_total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// Within-population means and unbiased variances. Every population needs at
/// least two observations.
pub fn summarize(data: &ClusterDataset) -> Result<ClusterSummary> {
    let mut sizes = Vec::with_capacity(data.k());
    let mut means = Vec::with_capacity(data.k());
    let mut variances = Vec::with_capacity(data.k());
    for (index, p) in data.populations().iter().enumerate() {
        match p.values.len() {
            0 => return Err(Error::EmptyPopulation { index }),
            1 => return Err(Error::SingletonPopulation { index }),
            n => {
                let m = numeric::mean(&p.values);
                sizes.push(n);
                means.push(m);
                variances.push(numeric::sum_sq_dev(&p.values, m) / (n - 1) as f64);
            }
        }
    }
    Ok(ClusterSummary {
        sizes,
        means,
        variances,
    })
}

/// `(mu_hat_N, mu_hat'_K)`: the size-weighted and the unweighted mean of the
/// population means.
pub fn grand_means(summary: &ClusterSummary) -> (f64, f64) {
    let n_total = summary.n_total() as f64;
    let weighted = sum(summary
        .sizes
        .iter()
        .zip(&summary.means)
        .map(|(&n, &m)| n as f64 * m))
        / n_total;
    let unweighted = numeric::mean(&summary.means);
    (weighted, unweighted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignConstants {
    pub n_star: f64,
    pub n_tilde: f64,
}

/// `n* = N^-2 sum n_k^2` and the harmonic mean `n~`.
pub fn design_constants(sizes: &[usize]) -> DesignConstants {
    let n_total = sizes.iter().sum::<usize>() as f64;
    let sum_sq = sum(sizes.iter().map(|&n| (n as f64) * (n as f64)));
    let inv = sum(sizes.iter().map(|&n| 1.0 / n as f64));
    DesignConstants {
        n_star: sum_sq / (n_total * n_total),
        n_tilde: sizes.len() as f64 / inv,
    }
}

/// Formula variants and post-processing switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Use the formulas exactly as typeset in the source (leading `K/(K-1)`
    /// and no `1/n_k` in the between-variance estimator, `sigma2/N^2` in the
    /// variance of the weighted mean, no `1/K` on the mean-of-means variance).
    pub printed_formulas: bool,
    /// Clamp a negative between-variance estimate at zero.
    pub truncate_nonneg: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2_hat: f64,
    pub gamma_hat: f64,
    pub v_hat: f64,
}

/// Sum of squared deviations of the population means from their average,
/// divided by `K - 1`.
pub fn between_mean_variance(summary: &ClusterSummary) -> Result<f64> {
    let k = summary.k();
    if k < 2 {
        return Err(Error::DegenerateK { k });
    }
    let (_, unweighted) = grand_means(summary);
    Ok(numeric::sum_sq_dev(&summary.means, unweighted) / (k - 1) as f64)
}

/// Within, between and total variance estimates.
///
/// The between-population variance is the moment estimator
/// `(K-1)^-1 sum (mu_hat_k - mu_hat'_K)^2 - K^-1 sum V_hat_k / n_k`, which is
/// unbiased for `gamma`. It may be negative.
pub fn variance_components(
    summary: &ClusterSummary,
    options: EstimatorOptions,
) -> Result<VarianceComponents> {
    let k = summary.k();
    if k < 2 {
        return Err(Error::DegenerateK { k });
    }
    let n_total = summary.n_total() as f64;
    let sigma2_hat = sum(summary
        .sizes
        .iter()
        .zip(&summary.variances)
        .map(|(&n, &v)| n as f64 * v))
        / n_total;
    let between = between_mean_variance(summary)?;
    let kf = k as f64;
    let mut gamma_hat = if options.printed_formulas {
        kf * between - sum(summary.variances.iter().copied()) / kf
    } else {
        between
            - sum(summary
                .sizes
                .iter()
                .zip(&summary.variances)
                .map(|(&n, &v)| v / n as f64))
                / kf
    };
    if options.truncate_nonneg {
        gamma_hat = gamma_hat.max(0.0);
    }
    Ok(VarianceComponents {
        sigma2_hat,
        gamma_hat,
        v_hat: gamma_hat + sigma2_hat,
    })
}

/// All point and variance estimates for one dataset.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub mu_hat_N: f64,
    pub mu_hat_prime_K: f64,
    pub sigma2_hat: f64,
    pub gamma_hat: f64,
    pub v_hat: f64,
    pub n_star: f64,
    pub n_tilde: f64,
    /// Estimated variance of `mu_hat'_K`.
    pub var_hat_mu_prime_K: f64,
    /// Estimated variance of `mu_hat_N`.
    pub var_hat_mu_N: f64,
    pub var_inter_mu_N: f64,
    pub var_intra_mu_N: f64,
    pub var_inter_mu_prime_K: f64,
    pub var_intra_mu_prime_K: f64,
}

/// Variance estimates for the two grand means and their within/between split.
///
/// `var_hat_mu_prime_K` is the between-mean variance divided by `K`, matching
/// `Var mu_hat'_K = K^-1 (gamma + sigma2 / n~)` in expectation; the printed
/// variant omits the `1/K`. `var_hat_mu_N = n* gamma_hat + sigma2_hat / N`;
/// the printed variant divides by `N^2`.
pub fn variance_estimates(
    summary: &ClusterSummary,
    components: &VarianceComponents,
    options: EstimatorOptions,
) -> Result<EstimateReport> {
    let k = summary.k();
    if k < 2 {
        return Err(Error::DegenerateK { k });
    }
    let kf = k as f64;
    let n_total = summary.n_total() as f64;
    let (mu_hat_n, mu_hat_prime_k) = grand_means(summary);
    let constants = design_constants(&summary.sizes);
    let between = between_mean_variance(summary)?;

    let var_hat_mu_prime_k = if options.printed_formulas {
        between
    } else {
        between / kf
    };
    let sigma_divisor = if options.printed_formulas {
        n_total * n_total
    } else {
        n_total
    };
    let var_hat_mu_n =
        constants.n_star * components.gamma_hat + components.sigma2_hat / sigma_divisor;

    let var_intra_mu_n = sum(summary
        .sizes
        .iter()
        .zip(&summary.variances)
        .map(|(&n, &v)| n as f64 * v))
        / (n_total * n_total);
    let var_intra_mu_prime_k = sum(summary
        .sizes
        .iter()
        .zip(&summary.variances)
        .map(|(&n, &v)| v / n as f64))
        / (kf * kf);

    Ok(EstimateReport {
        mu_hat_N: mu_hat_n,
        mu_hat_prime_K: mu_hat_prime_k,
        sigma2_hat: components.sigma2_hat,
        gamma_hat: components.gamma_hat,
        v_hat: components.v_hat,
        n_star: constants.n_star,
        n_tilde: constants.n_tilde,
        var_hat_mu_prime_K: var_hat_mu_prime_k,
        var_hat_mu_N: var_hat_mu_n,
        var_inter_mu_N: constants.n_star * components.gamma_hat,
        var_intra_mu_N: var_intra_mu_n,
        var_inter_mu_prime_K: components.gamma_hat / kf,
        var_intra_mu_prime_K: var_intra_mu_prime_k,
    })
}

/// Convenience wrapper: summary, components and report in one call.
pub fn estimate(data: &ClusterDataset, options: EstimatorOptions) -> Result<EstimateReport> {
    let summary = summarize(data)?;
    estimate_from_summary(&summary, options)
}

pub fn estimate_from_summary(
    summary: &ClusterSummary,
    options: EstimatorOptions,
) -> Result<EstimateReport> {
    let components = variance_components(summary, options)?;
    variance_estimates(summary, &components, options)
}

/// True variances of the two grand means under the model.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthVariances {
    /// `Var mu_hat_N = sigma2 / N + gamma n*`.
    pub s2_N: f64,
    /// `Var mu_hat'_K = K^-1 (gamma + sigma2 / n~)`.
    pub s2_prime_K: f64,
}

impl TruthVariances {
    pub fn compute(truth: &TruthParams, sizes: &[usize]) -> Self {
        let c = design_constants(sizes);
        let n_total = sizes.iter().sum::<usize>() as f64;
        let k = sizes.len() as f64;
        Self {
            s2_N: truth.sigma2 / n_total + truth.gamma * c.n_star,
            s2_prime_K: (truth.gamma + truth.sigma2 / c.n_tilde) / k,
        }
    }
}

fn studentize(centered: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::NonPositiveVariance { value: variance });
    }
    Ok(centered / variance.sqrt())
}

/// `(t_N, t'_K)`: both grand means centered at `mu` and divided by their
/// estimated standard errors.
pub fn studentized_stats(report: &EstimateReport, mu: f64) -> Result<(f64, f64)> {
    Ok((
        studentize(report.mu_hat_N - mu, report.var_hat_mu_N)?,
        studentize(report.mu_hat_prime_K - mu, report.var_hat_mu_prime_K)?,
    ))
}

/// `(t_intra, t_inter)`: the mean of means split around the average of the
/// latent population means `mu_bar_K`.
///
/// `t_intra = K^{1/2} (K^-1 sum V_hat_k / n_k)^{-1/2} (mu_hat'_K - mu_bar_K)` and
/// `t_inter = K^{1/2} gamma_hat^{-1/2} (mu_bar_K - mu)`.
pub fn decomposed_stats(
    summary: &ClusterSummary,
    gamma_hat: f64,
    population_means: &[f64],
    mu: f64,
) -> Result<(f64, f64)> {
    if population_means.len() != summary.k() {
        return Err(Error::InvalidArgument(
            "one latent mean per population is required".into(),
        ));
    }
    let k = summary.k() as f64;
    let (_, mu_hat_prime) = grand_means(summary);
    let mu_bar = numeric::mean(population_means);
    let intra = sum(summary
        .sizes
        .iter()
        .zip(&summary.variances)
        .map(|(&n, &v)| v / n as f64))
        / k;
    let t_intra = k.sqrt() * studentize(mu_hat_prime - mu_bar, intra)?;
    let t_inter = k.sqrt() * studentize(mu_bar - mu, gamma_hat)?;
    Ok((t_intra, t_inter))
}
