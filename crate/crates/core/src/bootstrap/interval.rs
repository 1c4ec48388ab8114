use serde::{Deserialize, Serialize};

use super::{Replicate, Statistic};
use crate::asymptotics::{corrected_quantile, normal_quantile, EdgeworthInputs};
use crate::error::{Error, Result};
use crate::numeric::{quantile_sorted, sort_floats};

/// How an interval is built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalMethod {
    Percentile,
    BootstrapT,
    Normal,
    /// Normal interval with quantiles shifted by the one-term Edgeworth
    /// correction.
    EdgeworthCorrected(EdgeworthInputs),
}

impl IntervalMethod {
    pub fn kind(&self) -> IntervalKind {
        match self {
            IntervalMethod::Percentile => IntervalKind::Percentile,
            IntervalMethod::BootstrapT => IntervalKind::BootstrapT,
            IntervalMethod::Normal => IntervalKind::Normal,
            IntervalMethod::EdgeworthCorrected(_) => IntervalKind::EdgeworthCorrected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Percentile,
    BootstrapT,
    Normal,
    EdgeworthCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub method: IntervalKind,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalEstimate {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Smallest replicate count accepted by the quantile-based methods at `level`.
pub fn required_replicates(level: f64) -> usize {
    let alpha = 1.0 - level;
    (20.0 / alpha.min(1.0 - alpha) - 1e-9).ceil() as usize
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveScale { value: scale })
    }
}

/// Two-sided interval at `level` for the statistic `target`.
///
/// `point` is the observed estimate and `scale` its estimated standard error.
/// Bootstrap-t studentizes replicate `b` as `(theta*_b - point) / scale_b`
/// and returns `[point - scale q(1 - a/2), point - scale q(a/2)]`.
pub fn confidence_interval(
    stats: &[Replicate],
    target: Statistic,
    point: f64,
    scale: f64,
    method: IntervalMethod,
    level: f64,
) -> Result<IntervalEstimate> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "level {level} outside (0, 1)"
        )));
    }
    let alpha = 1.0 - level;
    if matches!(
        method,
        IntervalMethod::Percentile | IntervalMethod::BootstrapT
    ) {
        let required = required_replicates(level);
        if stats.len() < required {
            return Err(Error::InsufficientReplicates {
                replicates: stats.len(),
                level,
                required,
            });
        }
    }
    let (lower, upper) = match method {
        IntervalMethod::Percentile => {
            let mut values: Vec<f64> = stats.iter().map(|r| r.value(target)).collect();
            sort_floats(&mut values);
            (
                quantile_sorted(&values, alpha / 2.0),
                quantile_sorted(&values, 1.0 - alpha / 2.0),
            )
        }
        IntervalMethod::BootstrapT => {
            check_scale(scale)?;
            let mut t = Vec::with_capacity(stats.len());
            for r in stats {
                check_scale(r.scale)?;
                t.push((r.value(target) - point) / r.scale);
            }
            sort_floats(&mut t);
            (
                point - scale * quantile_sorted(&t, 1.0 - alpha / 2.0),
                point - scale * quantile_sorted(&t, alpha / 2.0),
            )
        }
        IntervalMethod::Normal => {
            check_scale(scale)?;
            let z = normal_quantile(1.0 - alpha / 2.0);
            (point - z * scale, point + z * scale)
        }
        IntervalMethod::EdgeworthCorrected(inputs) => {
            check_scale(scale)?;
            let z = normal_quantile(1.0 - alpha / 2.0);
            let hi = corrected_quantile(z, &inputs)?;
            let lo = corrected_quantile(-z, &inputs)?;
            let a = point - scale * hi;
            let b = point - scale * lo;
            (a.min(b), a.max(b))
        }
    };
    Ok(IntervalEstimate {
        method: method.kind(),
        level,
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::StatisticKind;

    fn constant(c: f64, b: usize) -> Vec<Replicate> {
        vec![
            Replicate {
                mu_star_N: c,
                mu_star_prime_K: c,
                scale: 1.0,
            };
            b
        ]
    }

    #[test]
    fn degenerate_percentile() {
        let ci = confidence_interval(
            &constant(2.5, 999),
            Statistic::MuN,
            0.0,
            1.0,
            IntervalMethod::Percentile,
            0.95,
        )
        .unwrap();
        assert_eq!((ci.lower, ci.upper), (2.5, 2.5));
    }

    #[test]
    fn normal_interval() {
        let ci = confidence_interval(&[], Statistic::MuN, 0.0, 1.0, IntervalMethod::Normal, 0.95)
            .unwrap();
        assert!((ci.upper - 1.959963984540054).abs() < 1e-12);
        assert_eq!(ci.lower, -ci.upper);
        assert!(ci.contains(0.0));
    }

    #[test]
    fn replicate_floor() {
        assert_eq!(required_replicates(0.95), 400);
        assert_eq!(required_replicates(0.9), 200);
        let err = confidence_interval(
            &constant(0.0, 5),
            Statistic::MuN,
            0.0,
            1.0,
            IntervalMethod::Percentile,
            0.95,
        );
        assert!(matches!(
            err,
            Err(Error::InsufficientReplicates { required: 400, .. })
        ));
    }

    #[test]
    fn bootstrap_t_needs_positive_scales() {
        let mut stats = constant(1.0, 400);
        stats[3].scale = 0.0;
        assert!(matches!(
            confidence_interval(
                &stats,
                Statistic::MuN,
                1.0,
                1.0,
                IntervalMethod::BootstrapT,
                0.95
            ),
            Err(Error::NonPositiveScale { .. })
        ));
    }

    #[test]
    fn bootstrap_t_reflects_quantiles() {
        let stats: Vec<Replicate> = (0..1001)
            .map(|i| Replicate {
                mu_star_N: i as f64 / 1000.0,
                mu_star_prime_K: 0.0,
                scale: 1.0,
            })
            .collect();
        let ci = confidence_interval(
            &stats,
            Statistic::MuN,
            0.0,
            2.0,
            IntervalMethod::BootstrapT,
            0.9,
        )
        .unwrap();
        assert!((ci.lower - -2.0 * 0.95).abs() < 1e-12);
        assert!((ci.upper - -2.0 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn edgeworth_without_skew_is_normal() {
        let inputs = EdgeworthInputs::new(1.0, 0.0, StatisticKind::Studentized).unwrap();
        let e = confidence_interval(
            &[],
            Statistic::MuN,
            1.0,
            0.5,
            IntervalMethod::EdgeworthCorrected(inputs),
            0.95,
        )
        .unwrap();
        let n = confidence_interval(&[], Statistic::MuN, 1.0, 0.5, IntervalMethod::Normal, 0.95)
            .unwrap();
        assert!((e.lower - n.lower).abs() < 1e-15 && (e.upper - n.upper).abs() < 1e-15);
        let skewed = EdgeworthInputs::new(1.0, 0.6, StatisticKind::Studentized).unwrap();
        let s = confidence_interval(
            &[],
            Statistic::MuN,
            1.0,
            0.5,
            IntervalMethod::EdgeworthCorrected(skewed),
            0.95,
        )
        .unwrap();
        assert!(s.lower <= s.upper);
        assert!(s.lower > n.lower && s.upper > n.upper);
    }
}
