//! Bootstrap resampling for two-stage cluster samples.
//!
//! Four schemes are provided:
//!
//! * [`SchemeTag::B2Individuals`]: populations fixed, individuals resampled
//!   with replacement inside each population;
//! * [`SchemeTag::B1Uniform`]: `K` populations drawn uniformly with
//!   replacement, observed values carried verbatim;
//! * [`SchemeTag::B1Weighted`]: as above with population `l` drawn with
//!   probability `n_l / N`;
//! * [`SchemeTag::B3Cluster`]: populations drawn uniformly, then `n_l - 1`
//!   individuals drawn with replacement from the chosen population `l`.
//!
//! Replicate statistics use slot weights: if slot `k` of a replicate has mean
//! `m_k`, then `mu*_N = N^-1 sum_k n_k m_k` with the original `n_k` of slot
//! `k`, and `mu'*_K = K^-1 sum_k m_k`.

mod enumerate;
mod interval;
mod resample;

pub use enumerate::{enumerate_bootstrap, ExactLaw, ExactOutcome, ENUMERATION_LIMIT};
pub use interval::{
    confidence_interval, required_replicates, IntervalEstimate, IntervalKind, IntervalMethod,
};
pub use resample::{
    replicate_from_dataset, resample, resample_b1_uniform, resample_b1_weighted, resample_b2,
    resample_b3, Resampler, Scratch,
};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{design_constants, grand_means, summarize, ClusterSummary, EstimateReport};
use crate::model::ClusterDataset;
use crate::numeric::{self, sum, Moments};
use crate::rng::{domain, substream};

/// Default replicate count for interval construction.
pub const DEFAULT_INTERVAL_REPLICATES: usize = 999;
/// Default replicate count for moment checks.
pub const DEFAULT_MOMENT_REPLICATES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeTag {
    #[serde(rename = "B2_INDIVIDUALS", alias = "b2")]
    B2Individuals,
    #[serde(rename = "B1_UNIFORM", alias = "b1u")]
    B1Uniform,
    #[serde(rename = "B1_WEIGHTED", alias = "b1w")]
    B1Weighted,
    #[serde(rename = "B3_CLUSTER", alias = "b3")]
    B3Cluster,
}

impl SchemeTag {
    pub const ALL: [SchemeTag; 4] = [
        SchemeTag::B2Individuals,
        SchemeTag::B1Uniform,
        SchemeTag::B1Weighted,
        SchemeTag::B3Cluster,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeTag::B2Individuals => "B2_INDIVIDUALS",
            SchemeTag::B1Uniform => "B1_UNIFORM",
            SchemeTag::B1Weighted => "B1_WEIGHTED",
            SchemeTag::B3Cluster => "B3_CLUSTER",
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            SchemeTag::B2Individuals => "b2",
            SchemeTag::B1Uniform => "b1u",
            SchemeTag::B1Weighted => "b1w",
            SchemeTag::B3Cluster => "b3",
        }
    }

    /// Statistic whose studentizing scale each replicate records.
    pub fn target(&self) -> Statistic {
        match self {
            SchemeTag::B2Individuals | SchemeTag::B1Weighted => Statistic::MuN,
            SchemeTag::B1Uniform | SchemeTag::B3Cluster => Statistic::MuPrimeK,
        }
    }

    /// Whether the scheme supports inference on `mu_hat_N`. The two-stage
    /// scheme does not.
    pub fn supports(&self, statistic: Statistic) -> bool {
        statistic == self.target() || *self == SchemeTag::B2Individuals
    }

    fn index(&self) -> u64 {
        match self {
            SchemeTag::B2Individuals => 0,
            SchemeTag::B1Uniform => 1,
            SchemeTag::B1Weighted => 2,
            SchemeTag::B3Cluster => 3,
        }
    }

    /// Stable integer used in stream paths.
    pub fn stream_id(&self) -> u64 {
        self.index()
    }
}

impl fmt::Display for SchemeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeTag::ALL
            .into_iter()
            .find(|t| s.eq_ignore_ascii_case(t.name()) || s.eq_ignore_ascii_case(t.short_name()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme `{s}`")))
    }
}

/// The two grand means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Statistic {
    #[serde(rename = "mu_N")]
    MuN,
    #[serde(rename = "mu_prime_K")]
    MuPrimeK,
}

/// Switches for the bootstrap variance estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BootstrapOptions {
    /// Use `n*/(n* - 1) sum n_k (mu*_k - mu*_N)^2` for the weighted scheme's
    /// variance estimator instead of `n*/(1 - n*) N^-1 sum n_k (mu*_k - mu*_N)^2`.
    pub printed_formulas: bool,
}

/// Statistics of one bootstrap replicate.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub mu_star_N: f64,
    pub mu_star_prime_K: f64,
    /// Square root of the scheme's bootstrap variance estimator for its
    /// target statistic; NaN when that estimator is negative.
    pub scale: f64,
}

impl Replicate {
    pub fn value(&self, statistic: Statistic) -> f64 {
        match statistic {
            Statistic::MuN => self.mu_star_N,
            Statistic::MuPrimeK => self.mu_star_prime_K,
        }
    }
}

/// Closed-form bootstrap means and variances of the replicate statistics.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMoments {
    pub mean_mu_star_N: f64,
    /// `None` where no closed form is available (two-stage scheme).
    pub var_mu_star_N: Option<f64>,
    pub mean_mu_star_prime_K: f64,
    pub var_mu_star_prime_K: f64,
}

impl BootstrapMoments {
    pub fn mean(&self, statistic: Statistic) -> f64 {
        match statistic {
            Statistic::MuN => self.mean_mu_star_N,
            Statistic::MuPrimeK => self.mean_mu_star_prime_K,
        }
    }

    pub fn variance(&self, statistic: Statistic) -> Option<f64> {
        match statistic {
            Statistic::MuN => self.var_mu_star_N,
            Statistic::MuPrimeK => Some(self.var_mu_star_prime_K),
        }
    }
}

/// Exact bootstrap moments.
///
/// * B2: `Var* mu*_N = N^-2 sum (n_k - 1) V_k`, `Var* mu'*_K = K^-2 sum (n_k - 1) n_k^-2 V_k`.
/// * B1 uniform: both means `mu'_K`; `Var* mu'*_K = K^-2 sum (mu_k - mu'_K)^2`
///   and `Var* mu*_N = n* K^-1 sum (mu_k - mu'_K)^2`.
/// * B1 weighted: both means `mu_N`; with `tau^2 = N^-1 sum n_l (mu_l - mu_N)^2`,
///   `Var* mu*_N = n* tau^2` and `Var* mu'*_K = tau^2 / K`.
/// * B3: `Var* mu'*_K = K^-2 sum {(mu_k - mu'_K)^2 + V_k / n_k}`.
pub fn analytic_moments(summary: &ClusterSummary, scheme: SchemeTag) -> BootstrapMoments {
    let k = summary.k() as f64;
    let n_total = summary.n_total() as f64;
    let (mu_n, mu_prime) = grand_means(summary);
    let n_star = design_constants(&summary.sizes).n_star;
    let sizes = || summary.sizes.iter().map(|&n| n as f64);
    match scheme {
        SchemeTag::B2Individuals => BootstrapMoments {
            mean_mu_star_N: mu_n,
            var_mu_star_N: Some(
                sum(sizes().zip(&summary.variances).map(|(n, &v)| (n - 1.0) * v))
                    / (n_total * n_total),
            ),
            mean_mu_star_prime_K: mu_prime,
            var_mu_star_prime_K: sum(sizes()
                .zip(&summary.variances)
                .map(|(n, &v)| (n - 1.0) / (n * n) * v))
                / (k * k),
        },
        SchemeTag::B1Uniform => {
            let spread = numeric::sum_sq_dev(&summary.means, mu_prime);
            BootstrapMoments {
                mean_mu_star_N: mu_prime,
                var_mu_star_N: Some(n_star * spread / k),
                mean_mu_star_prime_K: mu_prime,
                var_mu_star_prime_K: spread / (k * k),
            }
        }
        SchemeTag::B1Weighted => {
            let tau2 = sum(sizes()
                .zip(&summary.means)
                .map(|(n, &m)| n * (m - mu_n) * (m - mu_n)))
                / n_total;
            BootstrapMoments {
                mean_mu_star_N: mu_n,
                var_mu_star_N: Some(n_star * tau2),
                mean_mu_star_prime_K: mu_n,
                var_mu_star_prime_K: tau2 / k,
            }
        }
        SchemeTag::B3Cluster => {
            let total = sum(summary
                .means
                .iter()
                .zip(sizes().zip(&summary.variances))
                .map(|(&m, (n, &v))| (m - mu_prime) * (m - mu_prime) + v / n));
            BootstrapMoments {
                mean_mu_star_N: mu_prime,
                var_mu_star_N: None,
                mean_mu_star_prime_K: mu_prime,
                var_mu_star_prime_K: total / (k * k),
            }
        }
    }
}

/// Observed value of a grand mean.
pub fn point_estimate(report: &EstimateReport, statistic: Statistic) -> f64 {
    match statistic {
        Statistic::MuN => report.mu_hat_N,
        Statistic::MuPrimeK => report.mu_hat_prime_K,
    }
}

/// Squared standard error paired with each scheme's target statistic when
/// building intervals: the within part `N^-2 sum n_k V_hat_k` for B2, the
/// plug-in variances of the grand means for the population schemes, and the
/// scheme's own `Var* mu'*_K` for B3.
pub fn interval_variance(
    scheme: SchemeTag,
    report: &EstimateReport,
    analytic: &BootstrapMoments,
) -> f64 {
    match scheme {
        SchemeTag::B2Individuals => report.var_intra_mu_N,
        SchemeTag::B1Uniform => report.var_hat_mu_prime_K,
        SchemeTag::B1Weighted => report.var_hat_mu_N,
        SchemeTag::B3Cluster => analytic.var_mu_star_prime_K,
    }
}

/// Within-population variance estimates `V*_k = n_k (n_k - 1)^-2 sum_i (X*_ki - mu*_k)^2`
/// of a B2 resample; unbiased for `V_hat_k` under the bootstrap law. NaN for
/// singleton populations.
pub fn b2_variance_estimates(resampled: &ClusterDataset) -> Vec<f64> {
    resampled
        .populations()
        .iter()
        .map(|p| {
            let n = p.values.len();
            if n < 2 {
                return f64::NAN;
            }
            let m = numeric::mean(&p.values);
            let nf = n as f64;
            nf / ((nf - 1.0) * (nf - 1.0)) * numeric::sum_sq_dev(&p.values, m)
        })
        .collect()
}

/// `S*_K^2 = (K - 1)^-1 sum (mu*_k - mu'*_K)^2` over the slot means.
pub fn s_star_k_squared(slot_means: &[f64]) -> Result<f64> {
    let k = slot_means.len();
    if k < 2 {
        return Err(Error::DegenerateK { k });
    }
    let m = numeric::mean(slot_means);
    Ok(numeric::sum_sq_dev(slot_means, m) / (k - 1) as f64)
}

/// Weighted-scheme variance estimator for `mu*_N`:
/// `n*/(1 - n*) N^-1 sum n_k (mu*_k - mu*_N)^2`, unbiased for `Var* mu*_N`.
/// With `printed` the factor is `n*/(n* - 1)` without `N^-1`, which is negative.
pub fn s_star_n_squared(slot_sizes: &[usize], slot_means: &[f64], printed: bool) -> Result<f64> {
    let k = slot_sizes.len();
    if k < 2 {
        return Err(Error::DegenerateK { k });
    }
    let n_total = slot_sizes.iter().sum::<usize>() as f64;
    let n_star = design_constants(slot_sizes).n_star;
    let mu_n = sum(slot_sizes
        .iter()
        .zip(slot_means)
        .map(|(&n, &m)| n as f64 * m))
        / n_total;
    let weighted_ss = sum(slot_sizes
        .iter()
        .zip(slot_means)
        .map(|(&n, &m)| n as f64 * (m - mu_n) * (m - mu_n)));
    Ok(if printed {
        n_star / (n_star - 1.0) * weighted_ss
    } else {
        n_star / (1.0 - n_star) * weighted_ss / n_total
    })
}

/// Two-stage scheme estimator `(K (K - 1))^-1 sum (mu*_k - mu'*_K)^2` of `Var* mu'*_K`.
pub fn b3_variance_estimate(slot_means: &[f64]) -> Result<f64> {
    Ok(s_star_k_squared(slot_means)? / slot_means.len() as f64)
}

/// Monte Carlo moments of the replicate statistics.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMoments {
    pub mean_mu_star_N: f64,
    pub var_mu_star_N: f64,
    pub mean_mu_star_prime_K: f64,
    pub var_mu_star_prime_K: f64,
}

impl ReplicateMoments {
    pub fn from_replicates(stats: &[Replicate]) -> Self {
        let mut n = Moments::new();
        let mut p = Moments::new();
        for r in stats {
            n.push(r.mu_star_N);
            p.push(r.mu_star_prime_K);
        }
        Self {
            mean_mu_star_N: n.mean(),
            var_mu_star_N: n.variance(),
            mean_mu_star_prime_K: p.mean(),
            var_mu_star_prime_K: p.variance(),
        }
    }
}

/// A completed bootstrap run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub scheme: SchemeTag,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub seed: u64,
    pub analytic_moments: BootstrapMoments,
    pub monte_carlo_moments: ReplicateMoments,
    #[serde(skip)]
    pub stats: Vec<Replicate>,
}

impl BootstrapRun {
    /// Interval for the scheme's target statistic.
    pub fn interval(
        &self,
        point: f64,
        scale: f64,
        method: IntervalMethod,
        level: f64,
    ) -> Result<IntervalEstimate> {
        confidence_interval(
            &self.stats,
            self.scheme.target(),
            point,
            scale,
            method,
            level,
        )
    }

    /// Writes `replicate,mu_star_N,mu_star_prime_K,scale`.
    pub fn write_replicates_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["replicate", "mu_star_N", "mu_star_prime_K", "scale"])
            .map_err(io)?;
        for (b, r) in self.stats.iter().enumerate() {
            w.write_record([
                b.to_string(),
                format!("{:.16e}", r.mu_star_N),
                format!("{:.16e}", r.mu_star_prime_K),
                format!("{:.16e}", r.scale),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `replicates` independent resamples; replicate `b` draws from the
/// stream `(seed, BOOTSTRAP, b)`, so the result does not depend on the thread
/// count.
pub fn run_bootstrap(
    data: &ClusterDataset,
    scheme: SchemeTag,
    replicates: usize,
    seed: u64,
    options: BootstrapOptions,
) -> Result<BootstrapRun> {
    if replicates == 0 {
        return Err(Error::InvalidArgument(
            "at least one replicate is required".into(),
        ));
    }
    let summary = summarize(data)?;
    if scheme != SchemeTag::B2Individuals && data.k() < 2 {
        return Err(Error::DegenerateK { k: data.k() });
    }
    let resampler = Resampler::new(data, scheme, options)?;
    let stats: Vec<Replicate> = (0..replicates)
        .into_par_iter()
        .with_min_len(64)
        .map_init(Scratch::default, |scratch, b| {
            let mut rng = substream(seed, &[domain::BOOTSTRAP, b as u64]);
            resampler.draw(&mut rng, scratch);
            resampler.statistics(scratch)
        })
        .collect();
    Ok(BootstrapRun {
        scheme,
        replicates,
        seed,
        analytic_moments: analytic_moments(&summary, scheme),
        monte_carlo_moments: ReplicateMoments::from_replicates(&stats),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d0() -> ClusterDataset {
        ClusterDataset::from_values(vec![vec![1.0, 3.0], vec![2.0, 6.0]]).unwrap()
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in SchemeTag::ALL {
            assert_eq!(s.name().parse::<SchemeTag>().unwrap(), s);
            assert_eq!(s.short_name().parse::<SchemeTag>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<SchemeTag>(&json).unwrap(), s);
        }
        assert!("b4".parse::<SchemeTag>().is_err());
        assert_eq!(
            serde_json::from_str::<SchemeTag>("\"b1w\"").unwrap(),
            SchemeTag::B1Weighted
        );
    }

    #[test]
    fn analytic_d0() {
        let s = summarize(&d0()).unwrap();
        let b2 = analytic_moments(&s, SchemeTag::B2Individuals);
        assert_eq!(b2.mean_mu_star_N, 3.0);
        assert_eq!(b2.var_mu_star_N, Some(0.625));
        let b1u = analytic_moments(&s, SchemeTag::B1Uniform);
        assert_eq!(b1u.mean_mu_star_prime_K, 3.0);
        assert_eq!(b1u.var_mu_star_prime_K, 0.5);
        let b1w = analytic_moments(&s, SchemeTag::B1Weighted);
        assert_eq!(b1w.var_mu_star_N, Some(0.5));
        assert_eq!(b1w.var_mu_star_prime_K * 2.0, 1.0);
        let b3 = analytic_moments(&s, SchemeTag::B3Cluster);
        assert_eq!(b3.var_mu_star_prime_K, 1.75);
        assert_eq!(b3.var_mu_star_N, None);
    }

    #[test]
    fn variance_estimators_on_constant_data() {
        let d = ClusterDataset::from_values(vec![vec![2.0; 3], vec![2.0; 2]]).unwrap();
        assert_eq!(b2_variance_estimates(&d), vec![0.0, 0.0]);
        assert_eq!(s_star_k_squared(&[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(s_star_n_squared(&[3, 2], &[2.0, 2.0], false).unwrap(), 0.0);
        assert_eq!(b3_variance_estimate(&[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(s_star_k_squared(&[1.0]), Err(Error::DegenerateK { k: 1 }));
    }

    #[test]
    fn printed_weighted_estimator_is_negative() {
        let v = s_star_n_squared(&[2, 3], &[1.0, 4.0], true).unwrap();
        assert!(v < 0.0);
        assert!(s_star_n_squared(&[2, 3], &[1.0, 4.0], false).unwrap() > 0.0);
    }

    #[test]
    fn run_is_deterministic() {
        for scheme in SchemeTag::ALL {
            let a = run_bootstrap(&d0(), scheme, 50, 11, BootstrapOptions::default()).unwrap();
            let b = run_bootstrap(&d0(), scheme, 50, 11, BootstrapOptions::default()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.stats.len(), 50);
            let one = run_bootstrap(&d0(), scheme, 1, 11, BootstrapOptions::default()).unwrap();
            assert_eq!(one.stats.len(), 1);
            assert_eq!(one.stats[0], a.stats[0]);
        }
    }

    #[test]
    fn run_rejects_bad_input() {
        assert!(run_bootstrap(&d0(), SchemeTag::B1Uniform, 0, 1, Default::default()).is_err());
        let single = ClusterDataset::from_values(vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(
            run_bootstrap(&single, SchemeTag::B1Uniform, 5, 1, Default::default()),
            Err(Error::DegenerateK { k: 1 })
        );
        assert!(run_bootstrap(&single, SchemeTag::B2Individuals, 5, 1, Default::default()).is_ok());
    }

    #[test]
    fn replicate_csv_layout() {
        let run = run_bootstrap(&d0(), SchemeTag::B2Individuals, 3, 1, Default::default()).unwrap();
        let mut buf = Vec::new();
        run.write_replicates_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("replicate,mu_star_N,mu_star_prime_K,scale")
        );
        assert_eq!(lines.count(), 3);
        let json = serde_json::to_value(&run).unwrap();
        assert_eq!(json["B"], 3);
        assert_eq!(json["scheme"], "B2_INDIVIDUALS");
    }
}
