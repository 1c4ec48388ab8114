//! Two-stage cluster data and the nested random-effects generator.
//!
//! Observations follow `X_ki = mu + a_k + u_ki`: population effects `a_k` are
//! i.i.d. with mean 0 and variance `gamma`, and given population `k` the
//! errors `u_ki` are i.i.d. with mean 0 and variance `V_k`, where
//! `E V_k = sigma2`. The marginal variance of an observation is
//! `sigma2 + gamma` and two observations from the same population have
//! covariance `gamma`.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, substream, StreamRng};

/// One observed population (cluster).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub id: String,
    pub values: Vec<f64>,
}

/// The observed two-stage sample: `K` populations with `n_k` values each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDataset {
    populations: Vec<Population>,
}

impl ClusterDataset {
    pub fn new(populations: Vec<Population>) -> Result<Self> {
        if populations.is_empty() {
            return Err(Error::InvalidData("dataset has no populations".into()));
        }
        for (index, p) in populations.iter().enumerate() {
            if p.values.is_empty() {
                return Err(Error::EmptyPopulation { index });
            }
            if let Some(bad) = p.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "population {} contains non-finite value {bad}",
                    p.id
                )));
            }
        }
        Ok(Self { populations })
    }

    /// Builds a dataset with ids `1..=K`.
    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            values
                .into_iter()
                .enumerate()
                .map(|(k, values)| Population {
                    id: (k + 1).to_string(),
                    values,
                })
                .collect(),
        )
    }

    pub fn populations(&self) -> &[Population] {
        &self.populations
    }

    /// Number of populations `K`.
    pub fn k(&self) -> usize {
        self.populations.len()
    }

    /// Total number of observations `N`.
    pub fn n_total(&self) -> usize {
        self.populations.iter().map(|p| p.values.len()).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.populations.iter().map(|p| p.values.len()).collect()
    }

    pub fn values(&self, k: usize) -> &[f64] {
        &self.populations[k].values
    }

    /// Writes `population_id,value` CSV, populations contiguous, values with
    /// 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["population_id", "value"])
            .map_err(|e| Error::Io(e.to_string()))?;
        for p in &self.populations {
            for v in &p.values {
                w.write_record([p.id.as_str(), &format!("{v:.16e}")])
                    .map_err(|e| Error::Io(e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV layout written by [`ClusterDataset::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            None => {
                return Err(Error::Malformed {
                    line: 1,
                    message: "empty input, expected header `population_id,value`".into(),
                })
            }
            Some(r) => r.map_err(|e| csv_error(e, 1))?,
        };
        if header.len() != 2 || &header[0] != "population_id" || &header[1] != "value" {
            return Err(Error::Malformed {
                line: 1,
                message: "expected header `population_id,value`".into(),
            });
        }

        let mut populations: Vec<Population> = Vec::new();
        for (row, record) in records.enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| csv_error(e, line))?;
            if record.len() != 2 {
                return Err(Error::Malformed {
                    line,
                    message: format!("expected 2 fields, found {}", record.len()),
                });
            }
            let id = &record[0];
            if id.is_empty() {
                return Err(Error::Malformed {
                    line,
                    message: "empty population_id".into(),
                });
            }
            let value: f64 = record[1].parse().map_err(|_| Error::Malformed {
                line,
                message: format!("cannot parse value `{}`", &record[1]),
            })?;
            if !value.is_finite() {
                return Err(Error::Malformed {
                    line,
                    message: format!("non-finite value `{}`", &record[1]),
                });
            }
            match populations.last_mut() {
                Some(p) if p.id == id => p.values.push(value),
                _ => {
                    if populations.iter().any(|p| p.id == id) {
                        return Err(Error::Malformed {
                            line,
                            message: format!("rows of population `{id}` are not contiguous"),
                        });
                    }
                    populations.push(Population {
                        id: id.to_string(),
                        values: vec![value],
                    });
                }
            }
        }
        if populations.is_empty() {
            return Err(Error::Malformed {
                line: 2,
                message: "no observations after header".into(),
            });
        }
        Self::new(populations)
    }
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    Error::Malformed {
        line,
        message: e.to_string(),
    }
}

/// Standardized distribution family: every member is rescaled to mean 0 and
/// the requested variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistFamily {
    #[default]
    Gaussian,
    /// `sd * (E - 1)` with `E ~ Exp(1)`; skewness 2.
    ShiftedExponential,
    /// Standardized `exp(shape * Z)`.
    LogNormal { shape: f64 },
}

impl DistFamily {
    fn validate(&self) -> Result<()> {
        match *self {
            DistFamily::LogNormal { shape } if !(shape > 0.0 && shape.is_finite()) => Err(
                Error::InvalidTruth(format!("lognormal shape must be positive, got {shape}")),
            ),
            _ => Ok(()),
        }
    }

    fn lognormal_moments(shape: f64) -> (f64, f64) {
        let w = (shape * shape).exp();
        let mean = w.sqrt();
        let sd = ((w - 1.0) * w).sqrt();
        (mean, sd)
    }

    /// Draws one value with mean 0 and the given variance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, variance: f64) -> f64 {
        let sd = variance.sqrt();
        match *self {
            DistFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            DistFamily::ShiftedExponential => {
                let e: f64 = Exp1.sample(rng);
                sd * (e - 1.0)
            }
            DistFamily::LogNormal { shape } => {
                let z: f64 = StandardNormal.sample(rng);
                let (m, s) = Self::lognormal_moments(shape);
                sd * ((shape * z).exp() - m) / s
            }
        }
    }

    /// Skewness of the family.
    pub fn skewness(&self) -> f64 {
        match *self {
            DistFamily::Gaussian => 0.0,
            DistFamily::ShiftedExponential => 2.0,
            DistFamily::LogNormal { shape } => {
                let w = (shape * shape).exp();
                (w + 2.0) * (w - 1.0).sqrt()
            }
        }
    }

    /// Signed third central moment at the given variance.
    pub fn third_central_moment(&self, variance: f64) -> f64 {
        self.skewness() * variance.powf(1.5)
    }

    /// Lower end of the support at the given variance.
    pub fn support_min(&self, variance: f64) -> f64 {
        let sd = variance.sqrt();
        match *self {
            DistFamily::Gaussian => f64::NEG_INFINITY,
            DistFamily::ShiftedExponential => -sd,
            DistFamily::LogNormal { shape } => {
                let (m, s) = Self::lognormal_moments(shape);
                -sd * m / s
            }
        }
    }

    /// Density at `x` for a member with positive variance.
    pub fn pdf(&self, x: f64, variance: f64) -> f64 {
        let sd = variance.sqrt();
        match *self {
            DistFamily::Gaussian => {
                let z = x / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            DistFamily::ShiftedExponential => {
                let e = x / sd + 1.0;
                if e < 0.0 {
                    0.0
                } else {
                    (-e).exp() / sd
                }
            }
            DistFamily::LogNormal { shape } => {
                let (m, s) = Self::lognormal_moments(shape);
                let l = x * s / sd + m;
                if l <= 0.0 {
                    return 0.0;
                }
                let z = l.ln() / shape;
                let density_l =
                    (-0.5 * z * z).exp() / (l * shape * (2.0 * std::f64::consts::PI).sqrt());
                density_l * s / sd
            }
        }
    }
}

/// Law of the within-population variance `V_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum WithinVarianceLaw {
    /// `V_k = sigma2` for every population.
    #[default]
    Constant,
    /// `V_k ~ Gamma(shape, sigma2 / shape)`, mean `sigma2`.
    Gamma { shape: f64 },
}

impl WithinVarianceLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, sigma2: f64) -> f64 {
        match *self {
            WithinVarianceLaw::Constant => sigma2,
            WithinVarianceLaw::Gamma { shape } => {
                if sigma2 == 0.0 {
                    return 0.0;
                }
                Gamma::new(shape, sigma2 / shape)
                    .expect("validated gamma law")
                    .sample(rng)
            }
        }
    }
}

/// Parameters of the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthParams {
    pub mu: f64,
    pub gamma: f64,
    pub sigma2: f64,
    #[serde(default)]
    pub effect_dist: DistFamily,
    #[serde(default)]
    pub noise_dist: DistFamily,
    #[serde(default)]
    pub within_variance: WithinVarianceLaw,
}

impl TruthParams {
    /// Gaussian effects and noise with constant within variance.
    pub fn gaussian(mu: f64, gamma: f64, sigma2: f64) -> Self {
        Self {
            mu,
            gamma,
            sigma2,
            effect_dist: DistFamily::Gaussian,
            noise_dist: DistFamily::Gaussian,
            within_variance: WithinVarianceLaw::Constant,
        }
    }

    /// Marginal variance `V = sigma2 + gamma`.
    pub fn marginal_variance(&self) -> f64 {
        self.sigma2 + self.gamma
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::InvalidTruth(format!(
                "mu must be finite, got {}",
                self.mu
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidTruth(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidTruth(format!(
                "sigma2 must be finite and >= 0, got {}",
                self.sigma2
            )));
        }
        self.effect_dist.validate()?;
        self.noise_dist.validate()?;
        if let WithinVarianceLaw::Gamma { shape } = self.within_variance {
            if !(shape > 0.0 && shape.is_finite()) {
                return Err(Error::InvalidTruth(format!(
                    "within-variance gamma shape must be positive, got {shape}"
                )));
            }
        }
        Ok(())
    }
}

/// Subsample-size design `n_k = c_k K^alpha`.
///
/// `c` is cycled when shorter than `K`, so `[1.0]` is a balanced design and
/// `[1.0, 2.0]` alternates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub k: usize,
    pub alpha: f64,
    pub c: Vec<f64>,
}

impl DesignParams {
    pub fn new(k: usize, alpha: f64, c: Vec<f64>) -> Self {
        Self { k, alpha, c }
    }

    /// Same `c` for every population.
    pub fn balanced(k: usize, alpha: f64, c: f64) -> Self {
        Self::new(k, alpha, vec![c])
    }

    pub fn c_k(&self, k: usize) -> f64 {
        self.c[k % self.c.len()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidDesign("K must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidDesign(format!(
                "alpha must lie in (0, 1/2), got {}",
                self.alpha
            )));
        }
        if self.c.is_empty() {
            return Err(Error::InvalidDesign("c must not be empty".into()));
        }
        if let Some(bad) = self.c.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidDesign(format!(
                "c_k must be positive and finite, got {bad}"
            )));
        }
        Ok(())
    }
}

/// `n_k = max(2, round(c_k K^alpha))`.
pub fn subsample_sizes(design: &DesignParams) -> Result<Vec<usize>> {
    design.validate()?;
    let scale = (design.k as f64).powf(design.alpha);
    Ok((0..design.k)
        .map(|k| ((design.c_k(k) * scale).round() as usize).max(2))
        .collect())
}

/// A generated dataset together with its latent population means
/// `mu_k = mu + a_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub dataset: ClusterDataset,
    pub population_means: Vec<f64>,
}

/// Draws a dataset from the random-effects model. Population `k` uses the
/// stream `(seed, DATASET, k)`, so generation is order independent.
pub fn generate_dataset(
    truth: &TruthParams,
    design: &DesignParams,
    seed: u64,
) -> Result<ClusterDataset> {
    Ok(generate_sample(truth, design, seed)?.dataset)
}

pub fn generate_sample(
    truth: &TruthParams,
    design: &DesignParams,
    seed: u64,
) -> Result<GeneratedSample> {
    truth.validate()?;
    let sizes = subsample_sizes(design)?;
    Ok(generate_with_sizes(truth, &sizes, seed))
}

/// Generation for explicit sizes; `truth` must already be valid.
pub fn generate_with_sizes(truth: &TruthParams, sizes: &[usize], seed: u64) -> GeneratedSample {
    let mut population_means = Vec::with_capacity(sizes.len());
    let populations = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let mut rng: StreamRng = substream(seed, &[domain::DATASET, k as u64]);
            let mean_k = truth.mu + truth.effect_dist.sample(&mut rng, truth.gamma);
            let v_k = truth.within_variance.sample(&mut rng, truth.sigma2);
            population_means.push(mean_k);
            let values = (0..n)
                .map(|_| mean_k + truth.noise_dist.sample(&mut rng, v_k))
                .collect();
            Population {
                id: (k + 1).to_string(),
                values,
            }
        })
        .collect();
    GeneratedSample {
        dataset: ClusterDataset { populations },
        population_means,
    }
}
