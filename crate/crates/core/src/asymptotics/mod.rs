//! Normal and one-term Edgeworth approximations, the inverted-expansion
//! quantile correction, the Berry-Esseen bound for the weighted population
//! bootstrap, and Kolmogorov-Smirnov type sup distances.
//!
//! Conventions: with `kappa = third_moment_sum / (6 s^3)`,
//!
//! * normalized statistic: `P(T <= x) ~ Phi(x) + kappa (1 - x^2) phi(x)` and
//!   the corrected quantile is `x - (1 - x^2) kappa`;
//! * studentized statistic: `P(T <= x) ~ Phi(x) + kappa (2x^2 + 1) phi(x)` and
//!   the corrected quantile is `x - (1 + 2x^2) kappa`.
//!
//! In each case the corrected quantile is the formal inverse of the expansion.

pub mod quadrature;

use libm::{erfc, lgamma};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::model::{DesignParams, DistFamily, TruthParams, WithinVarianceLaw};

/// Default Berry-Esseen constant.
pub const DEFAULT_BERRY_ESSEEN_C: f64 = 0.56;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal quantile, `p` in `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return if p == 0.0 {
            f64::NEG_INFINITY
        } else if p == 1.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // Halley steps against the accurate distribution function.
    for _ in 0..2 {
        let e = if x < 0.0 {
            normal_cdf(x) - p
        } else {
            (1.0 - p) - normal_cdf(-x)
        };
        let u = e / normal_pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StatisticKind {
    /// Centered and divided by the true standard deviation.
    Normalized,
    /// Centered and divided by an estimated standard deviation.
    Studentized,
}

/// Inputs of the one-term expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeworthInputs {
    /// Standard deviation of the weighted mean.
    pub s: f64,
    /// `sum_k (n_k/N)^3 m3_k`, `m3_k` the third central moment of the
    /// population mean estimate.
    pub third_moment_sum: f64,
    pub kind: StatisticKind,
}

impl EdgeworthInputs {
    pub fn new(s: f64, third_moment_sum: f64, kind: StatisticKind) -> Result<Self> {
        let inputs = Self {
            s,
            third_moment_sum,
            kind,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::NonPositiveScale { value: self.s });
        }
        Ok(())
    }

    /// `third_moment_sum / (6 s^3)`.
    pub fn kappa(&self) -> f64 {
        self.third_moment_sum / (6.0 * self.s.powi(3))
    }

    fn cdf_polynomial(&self, x: f64) -> f64 {
        match self.kind {
            StatisticKind::Normalized => 1.0 - x * x,
            StatisticKind::Studentized => 2.0 * x * x + 1.0,
        }
    }
}

/// One-term Edgeworth approximation of the distribution function, clamped to `[0, 1]`.
pub fn edgeworth_cdf(x: f64, inputs: &EdgeworthInputs) -> Result<f64> {
    inputs.validate()?;
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    if x == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let value = normal_cdf(x) + inputs.kappa() * inputs.cdf_polynomial(x) * normal_pdf(x);
    Ok(value.clamp(0.0, 1.0))
}

/// Quantile correction obtained by inverting the one-term expansion: the
/// returned point `y` satisfies `P(T <= y) = Phi(x)` up to second order.
pub fn corrected_quantile(x: f64, inputs: &EdgeworthInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(x - inputs.cdf_polynomial(x) * inputs.kappa())
}

/// `E V^{3/2}` under the within-variance law.
fn mean_within_sd_cubed(truth: &TruthParams) -> f64 {
    match truth.within_variance {
        WithinVarianceLaw::Constant => truth.sigma2.powf(1.5),
        WithinVarianceLaw::Gamma { shape } => {
            let scale = truth.sigma2 / shape;
            (lgamma(shape + 1.5) - lgamma(shape)).exp() * scale.powf(1.5)
        }
    }
}

/// Signed `sum_k (n_k/N)^3 E(mu_hat_k - mu)^3` under the truth.
pub fn third_moment_sum_from_truth(truth: &TruthParams, sizes: &[usize]) -> f64 {
    let n_total: usize = sizes.iter().sum();
    let n_total = n_total as f64;
    let effect = truth.effect_dist.third_central_moment(truth.gamma);
    let noise = truth.noise_dist.skewness() * mean_within_sd_cubed(truth);
    crate::numeric::sum(sizes.iter().map(|&n| {
        let n = n as f64;
        let w = n / n_total;
        w * w * w * (effect + noise / (n * n))
    }))
}

/// Plug-in `sum_k (n_k/N)^3 (mu_hat_k - center)^3`; with `absolute` the cubes
/// are taken of absolute deviations.
pub fn empirical_third_moment_sum(
    sizes: &[usize],
    means: &[f64],
    center: f64,
    absolute: bool,
) -> f64 {
    let n_total = sizes.iter().sum::<usize>() as f64;
    crate::numeric::sum(sizes.iter().zip(means).map(|(&n, &m)| {
        let w = n as f64 / n_total;
        let d = m - center;
        let c = if absolute { d.abs().powi(3) } else { d.powi(3) };
        w * w * w * c
    }))
}

/// `E|X - mu|^3` for `X - mu = a + u`, closed form in the Gaussian case and
/// adaptive quadrature (relative tolerance 1e-9) otherwise.
pub fn abs_third_moment(truth: &TruthParams) -> Result<f64> {
    truth.validate()?;
    if truth.within_variance != WithinVarianceLaw::Constant && truth.sigma2 > 0.0 {
        return Err(Error::Unsupported(
            "absolute third moment needs a constant within variance".into(),
        ));
    }
    let (gamma, sigma2) = (truth.gamma, truth.sigma2);
    let gaussian_effect = truth.effect_dist == DistFamily::Gaussian || gamma == 0.0;
    let gaussian_noise = truth.noise_dist == DistFamily::Gaussian || sigma2 == 0.0;
    if gaussian_effect && gaussian_noise {
        return Ok(gaussian_abs_third_moment(gamma + sigma2));
    }
    if gamma == 0.0 {
        return abs_third_moment_shifted(truth.noise_dist, sigma2, 0.0, 1e-11);
    }
    if sigma2 == 0.0 {
        return abs_third_moment_shifted(truth.effect_dist, gamma, 0.0, 1e-11);
    }
    let effect = truth.effect_dist;
    let noise = truth.noise_dist;
    let inner =
        |a: f64| -> f64 { abs_third_moment_shifted(noise, sigma2, a, 1e-11).unwrap_or(f64::NAN) };
    let value = quadrature::integrate(
        |a| {
            let d = effect.pdf(a, gamma);
            if d == 0.0 {
                0.0
            } else {
                d * inner(a)
            }
        },
        effect.support_min(gamma),
        f64::INFINITY,
        1e-9,
    )?;
    if !value.is_finite() {
        return Err(Error::Unsupported("inner quadrature failed".into()));
    }
    Ok(value)
}

/// `E|Y|^3` for `Y ~ N(0, v)`: `2 sqrt(2/pi) v^{3/2}`.
pub fn gaussian_abs_third_moment(variance: f64) -> f64 {
    2.0 * (2.0 / std::f64::consts::PI).sqrt() * variance.powf(1.5)
}

/// `E|shift + U|^3` for `U` from `family` with the given variance.
fn abs_third_moment_shifted(
    family: DistFamily,
    variance: f64,
    shift: f64,
    rel_tol: f64,
) -> Result<f64> {
    if variance == 0.0 {
        return Ok(shift.abs().powi(3));
    }
    let lo = family.support_min(variance);
    let f = |u: f64| (shift + u).abs().powi(3) * family.pdf(u, variance);
    let kink = -shift;
    if kink > lo {
        Ok(quadrature::integrate(f, lo, kink, rel_tol)?
            + quadrature::integrate(f, kink, f64::INFINITY, rel_tol)?)
    } else {
        quadrature::integrate(f, lo, f64::INFINITY, rel_tol)
    }
}

/// Berry-Esseen bound for the weighted population bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenBound {
    pub constant: f64,
    pub abs_third_moment: f64,
    /// Bound on `K^{1/2 + 2 alpha} sup_x |P - P*|`: `4 C E|X - mu|^3 / gamma^{3/2}`.
    pub scaled: f64,
    /// `1/2 + 2 alpha`.
    pub exponent: f64,
    /// `scaled / K^{1/2 + 2 alpha}`.
    pub per_k: f64,
}

pub fn berry_esseen_bound(
    truth: &TruthParams,
    design: &DesignParams,
    constant: f64,
) -> Result<BerryEsseenBound> {
    design.validate()?;
    truth.validate()?;
    if truth.gamma == 0.0 {
        return Err(Error::ZeroGamma);
    }
    if !(constant > 0.0 && constant.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "Berry-Esseen constant must be positive, got {constant}"
        )));
    }
    let m3 = abs_third_moment(truth)?;
    let scaled = 4.0 * constant * m3 / truth.gamma.powf(1.5);
    let exponent = 0.5 + 2.0 * design.alpha;
    Ok(BerryEsseenBound {
        constant,
        abs_third_moment: m3,
        scaled,
        exponent,
        per_k: scaled / (design.k as f64).powf(exponent),
    })
}

/// Sup distance between the empirical distribution of `sorted` and `cdf`,
/// evaluated exactly over the jump points.
pub fn ks_to_cdf<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Two-sample sup distance between the empirical distribution functions of
/// two ascending samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Sup distance between the empirical distribution of `sorted` and the
/// standard normal.
pub fn ks_to_normal(sorted: &[f64]) -> Result<f64> {
    ks_to_cdf(sorted, normal_cdf)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series of erf, independent of the library implementation.
    fn series_cdf(x: f64) -> f64 {
        let z = x / std::f64::consts::SQRT_2;
        let mut term = z;
        let mut total = z;
        for n in 1..200 {
            term *= -z * z / n as f64;
            total += term / (2 * n + 1) as f64;
        }
        0.5 + total / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn normal_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
        for &x in &[-3.0, -1.2, -0.3, 0.4, 1.0, 1.96, 2.5, 3.0] {
            assert!((normal_cdf(x) - series_cdf(x)).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-6, 0.025, 0.3, 0.5, 0.8, 0.975] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-13);
        }
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn symmetric_case_reduces_to_normal() {
        for kind in [StatisticKind::Normalized, StatisticKind::Studentized] {
            let inp = EdgeworthInputs::new(0.7, 0.0, kind).unwrap();
            for &x in &[-2.0, -0.5, 0.0, 1.3] {
                assert_eq!(edgeworth_cdf(x, &inp).unwrap(), normal_cdf(x));
                assert_eq!(corrected_quantile(x, &inp).unwrap(), x);
            }
        }
    }

    #[test]
    fn edgeworth_clamped_and_limits() {
        let inp = EdgeworthInputs::new(0.1, 0.01, StatisticKind::Studentized).unwrap();
        assert_eq!(edgeworth_cdf(f64::INFINITY, &inp).unwrap(), 1.0);
        assert_eq!(edgeworth_cdf(f64::NEG_INFINITY, &inp).unwrap(), 0.0);
        for i in -100..=100 {
            let v = edgeworth_cdf(i as f64 * 0.1, &inp).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn normalized_quantile_fixed_at_unit_points() {
        let inp = EdgeworthInputs::new(0.2, 0.003, StatisticKind::Normalized).unwrap();
        assert_eq!(corrected_quantile(1.0, &inp).unwrap(), 1.0);
        assert_eq!(corrected_quantile(-1.0, &inp).unwrap(), -1.0);
    }

    #[test]
    fn non_positive_scale_rejected() {
        assert!(matches!(
            EdgeworthInputs::new(0.0, 1.0, StatisticKind::Normalized),
            Err(Error::NonPositiveScale { .. })
        ));
        let bad = EdgeworthInputs {
            s: -1.0,
            third_moment_sum: 0.0,
            kind: StatisticKind::Normalized,
        };
        assert!(edgeworth_cdf(0.0, &bad).is_err());
        assert!(corrected_quantile(0.0, &bad).is_err());
    }

    #[test]
    fn expansion_deviation_bounded_on_grid() {
        let max_poly_pdf = (0..=8000)
            .map(|i| {
                let x = -8.0 + i as f64 * 0.002;
                ((2.0 * x * x + 1.0) * normal_pdf(x)).abs()
            })
            .fold(0.0f64, f64::max);
        for kind in [StatisticKind::Normalized, StatisticKind::Studentized] {
            let inp = EdgeworthInputs::new(0.3, 0.002, kind).unwrap();
            let bound = inp.kappa().abs() * max_poly_pdf + 1e-15;
            for i in -400..=400 {
                let x = i as f64 * 0.02;
                let dev = (edgeworth_cdf(x, &inp).unwrap() - normal_cdf(x)).abs();
                assert!(dev <= bound, "{kind:?} x={x} dev={dev} bound={bound}");
            }
        }
    }

    #[test]
    fn corrected_quantile_inverts_expansion_to_second_order() {
        // Halving the skew term should quarter the residual.
        for kind in [StatisticKind::Normalized, StatisticKind::Studentized] {
            for &x in &[-1.645, -0.5, 0.3, 1.645, 2.2] {
                let residual = |tms: f64| {
                    let inp = EdgeworthInputs::new(1.0, tms, kind).unwrap();
                    let y = corrected_quantile(x, &inp).unwrap();
                    (edgeworth_cdf(y, &inp).unwrap() - normal_cdf(x)).abs()
                };
                let r1 = residual(0.01);
                let r2 = residual(0.005);
                let r3 = residual(0.0025);
                assert!(r1 < 2e-3, "{kind:?} {x} {r1}");
                assert!(r2 < 0.3 * r1 + 1e-15, "{kind:?} {x} {r1} {r2}");
                assert!(r3 < 0.3 * r2 + 1e-15, "{kind:?} {x} {r2} {r3}");
            }
        }
    }

    #[test]
    fn gaussian_abs_moment_matches_quadrature() {
        let v = 1.7;
        let q = quadrature::integrate(
            |x| x.abs().powi(3) * DistFamily::Gaussian.pdf(x, v),
            f64::NEG_INFINITY,
            f64::INFINITY,
            1e-12,
        )
        .unwrap();
        assert!((q - gaussian_abs_third_moment(v)).abs() < 1e-10);
    }

    #[test]
    fn berry_esseen_example() {
        let truth = TruthParams::gaussian(0.0, 1.0, 0.0);
        let design = DesignParams::balanced(100, 0.3, 1.0);
        let b = berry_esseen_bound(&truth, &design, 0.56).unwrap();
        let expected = 4.0 * 0.56 * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((b.scaled - expected).abs() < 1e-12);
        assert!((b.scaled - 3.574).abs() < 1e-3);
        assert!((b.per_k - expected / 100f64.powf(1.1)).abs() < 1e-12);
        let b2 = berry_esseen_bound(&truth, &design, 1.12).unwrap();
        assert!((b2.scaled - 2.0 * b.scaled).abs() < 1e-12);
        let zero = TruthParams::gaussian(0.0, 0.0, 1.0);
        assert_eq!(
            berry_esseen_bound(&zero, &design, 0.56),
            Err(Error::ZeroGamma)
        );
    }

    #[test]
    fn abs_moment_of_convolution_matches_monte_carlo_free_check() {
        // Gaussian effect + Gaussian noise via the generic path must agree
        // with the closed form for the summed variance.
        let v = abs_third_moment_shifted(DistFamily::Gaussian, 1.0, 0.0, 1e-12).unwrap();
        assert!((v - gaussian_abs_third_moment(1.0)).abs() < 1e-10);
        // Shifted exponential alone: sd^3 (12/e - 2).
        let truth = TruthParams {
            noise_dist: DistFamily::ShiftedExponential,
            ..TruthParams::gaussian(0.0, 0.0, 4.0)
        };
        let v = abs_third_moment(&truth).unwrap();
        assert!((v - 8.0 * (12.0 / std::f64::consts::E - 2.0)).abs() < 1e-8);
        // Generic nested quadrature for two Gaussians.
        let gen = quadrature::integrate(
            |a| {
                DistFamily::Gaussian.pdf(a, 1.0)
                    * abs_third_moment_shifted(DistFamily::Gaussian, 2.0, a, 1e-11).unwrap()
            },
            f64::NEG_INFINITY,
            f64::INFINITY,
            1e-10,
        )
        .unwrap();
        assert!((gen - gaussian_abs_third_moment(3.0)).abs() < 1e-8);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(
            ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            0.0
        );
        assert_eq!(ks_to_normal(&[0.0]).unwrap(), 0.5);
        assert_eq!(ks_two_sample(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(
            ks_two_sample(&[0.0, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
            0.0
        );
        assert!((ks_two_sample(&[0.0, 2.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(ks_to_normal(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn truth_third_moment_sum() {
        let truth = TruthParams {
            effect_dist: DistFamily::ShiftedExponential,
            noise_dist: DistFamily::ShiftedExponential,
            ..TruthParams::gaussian(0.0, 1.0, 4.0)
        };
        // Effects contribute 2 gamma^{3/2}, noise 2 sigma^3 / n_k^2.
        let sizes = [2usize, 4];
        let expected = (2.0f64 / 6.0).powi(3) * (2.0 + 16.0 / 4.0)
            + (4.0f64 / 6.0).powi(3) * (2.0 + 16.0 / 16.0);
        assert!((third_moment_sum_from_truth(&truth, &sizes) - expected).abs() < 1e-14);
        let gauss = TruthParams::gaussian(0.0, 1.0, 1.0);
        assert_eq!(third_moment_sum_from_truth(&gauss, &sizes), 0.0);
    }
}
