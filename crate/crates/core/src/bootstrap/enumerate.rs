use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BootstrapOptions, SchemeTag, Statistic};
use crate::error::{Error, Result};
use crate::model::ClusterDataset;
use crate::numeric::CompensatedSum;

/// Largest outcome count [`enumerate_bootstrap`] accepts.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// One resample outcome with its probability under the bootstrap law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactOutcome {
    pub probability: f64,
    pub mu_star_n: f64,
    pub mu_star_prime_k: f64,
    /// The scheme's studentizing variance estimate for this outcome.
    pub variance_estimate: f64,
}

impl ExactOutcome {
    pub fn value(&self, statistic: Statistic) -> f64 {
        match statistic {
            Statistic::MuN => self.mu_star_n,
            Statistic::MuPrimeK => self.mu_star_prime_k,
        }
    }
}

/// Exact bootstrap law of the replicate statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactLaw {
    pub scheme: SchemeTag,
    pub outcomes: Vec<ExactOutcome>,
}

impl ExactLaw {
    pub fn total_probability(&self) -> f64 {
        self.outcomes
            .iter()
            .map(|o| o.probability)
            .collect::<CompensatedSum>()
            .value()
    }

    /// `E*` of a statistic.
    pub fn mean(&self, statistic: Statistic) -> f64 {
        self.expectation(|o| o.value(statistic))
    }

    /// `Var*` of a statistic.
    pub fn variance(&self, statistic: Statistic) -> f64 {
        let m = self.mean(statistic);
        self.expectation(|o| {
            let d = o.value(statistic) - m;
            d * d
        })
    }

    pub fn mean_var(&self, statistic: Statistic) -> (f64, f64) {
        (self.mean(statistic), self.variance(statistic))
    }

    /// `E*` of the studentizing variance estimate.
    pub fn mean_variance_estimate(&self) -> f64 {
        self.expectation(|o| o.variance_estimate)
    }

    pub fn expectation<F: Fn(&ExactOutcome) -> f64>(&self, f: F) -> f64 {
        self.outcomes
            .iter()
            .map(|o| o.probability * f(o))
            .collect::<CompensatedSum>()
            .value()
    }

    /// Law of `(mu*_N, mu'*_K)` with equal atoms merged, keyed by bit pattern.
    pub fn atoms(&self) -> BTreeMap<(u64, u64), f64> {
        let mut merged: BTreeMap<(u64, u64), CompensatedSum> = BTreeMap::new();
        for o in &self.outcomes {
            merged
                .entry((o.mu_star_n.to_bits(), o.mu_star_prime_k.to_bits()))
                .or_default()
                .add(o.probability);
        }
        merged.into_iter().map(|(k, v)| (k, v.value())).collect()
    }

    /// Total-variation distance between the laws of `(mu*_N, mu'*_K)`.
    pub fn total_variation(&self, other: &ExactLaw) -> f64 {
        let a = self.atoms();
        let b = other.atoms();
        let mut acc = CompensatedSum::new();
        for (key, &p) in &a {
            acc.add((p - b.get(key).copied().unwrap_or(0.0)).abs());
        }
        for (key, &q) in &b {
            if !a.contains_key(key) {
                acc.add(q);
            }
        }
        0.5 * acc.value()
    }
}

/// Possible contents of one slot: probability, mean and sum of squared
/// deviations of the drawn values.
#[derive(Debug, Clone, Copy)]
struct SlotOutcome {
    probability: f64,
    mean: f64,
    ss: f64,
}

/// Every ordered draw of `draws` values from `source`, each equally likely.
fn all_draws(source: &[f64], draws: usize, weight: f64, out: &mut Vec<SlotOutcome>) {
    let n = source.len();
    let count = n.pow(draws as u32);
    let p = weight / count as f64;
    let mut index = vec![0usize; draws];
    let mut picked = vec![0.0; draws];
    for _ in 0..count {
        for (slot, &i) in picked.iter_mut().zip(&index) {
            *slot = source[i];
        }
        let mean = picked.iter().sum::<f64>() / draws as f64;
        let ss = picked.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
        out.push(SlotOutcome {
            probability: p,
            mean,
            ss,
        });
        for digit in index.iter_mut().rev() {
            *digit += 1;
            if *digit < n {
                break;
            }
            *digit = 0;
        }
    }
}

fn too_large(outcomes: f64) -> Error {
    Error::TooLarge {
        outcomes,
        limit: ENUMERATION_LIMIT,
    }
}

/// Lists every resample of `data` under `scheme` with its exact probability.
///
/// Outcome counts: `prod n_k^n_k` for B2, `K^K` for B1, and
/// `(sum_l n_l^(n_l - 1))^K` for B3.
pub fn enumerate_bootstrap(
    data: &ClusterDataset,
    scheme: SchemeTag,
    options: BootstrapOptions,
) -> Result<ExactLaw> {
    let k = data.k();
    let sizes = data.sizes();
    if scheme != SchemeTag::B2Individuals && k < 2 {
        return Err(Error::DegenerateK { k });
    }
    if let Some(index) = sizes.iter().position(|&n| n < 2) {
        return Err(Error::SingletonPopulation { index });
    }
    let n_total = sizes.iter().sum::<usize>();
    let exact_mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let per_slot_count: Vec<f64> = match scheme {
        SchemeTag::B2Individuals => sizes.iter().map(|&n| (n as f64).powi(n as i32)).collect(),
        SchemeTag::B1Uniform | SchemeTag::B1Weighted => vec![k as f64; k],
        SchemeTag::B3Cluster => {
            let c = sizes.iter().map(|&n| (n as f64).powi(n as i32 - 1)).sum();
            vec![c; k]
        }
    };
    let total: f64 = per_slot_count.iter().product();
    if !(total <= ENUMERATION_LIMIT as f64) {
        return Err(too_large(total));
    }

    let slots: Vec<Vec<SlotOutcome>> = match scheme {
        SchemeTag::B2Individuals => (0..k)
            .map(|l| {
                let mut out = Vec::new();
                all_draws(data.values(l), sizes[l], 1.0, &mut out);
                out
            })
            .collect(),
        SchemeTag::B1Uniform | SchemeTag::B1Weighted => {
            let row: Vec<SlotOutcome> = (0..k)
                .map(|l| SlotOutcome {
                    probability: if scheme == SchemeTag::B1Uniform {
                        1.0 / k as f64
                    } else {
                        sizes[l] as f64 / n_total as f64
                    },
                    mean: exact_mean(data.values(l)),
                    ss: f64::NAN,
                })
                .collect();
            vec![row; k]
        }
        SchemeTag::B3Cluster => {
            let mut row = Vec::new();
            for l in 0..k {
                all_draws(data.values(l), sizes[l] - 1, 1.0 / k as f64, &mut row);
            }
            vec![row; k]
        }
    };

    let nf = n_total as f64;
    let kf = k as f64;
    let n_star = sizes.iter().map(|&n| (n * n) as f64).sum::<f64>() / (nf * nf);
    let mut outcomes = Vec::with_capacity(total as usize);
    let mut index = vec![0usize; k];
    let mut means = vec![0.0; k];
    loop {
        let mut probability = 1.0;
        let mut weighted = 0.0;
        for (slot, &i) in index.iter().enumerate() {
            let o = slots[slot][i];
            probability *= o.probability;
            means[slot] = o.mean;
            weighted += sizes[slot] as f64 * o.mean;
        }
        let mu_star_n = weighted / nf;
        let mu_star_prime_k = means.iter().sum::<f64>() / kf;
        let spread = || {
            means
                .iter()
                .map(|&m| (m - mu_star_prime_k) * (m - mu_star_prime_k))
                .sum::<f64>()
        };
        let variance_estimate = match scheme {
            SchemeTag::B2Individuals => {
                index
                    .iter()
                    .enumerate()
                    .map(|(slot, &i)| {
                        let n = sizes[slot] as f64;
                        n * slots[slot][i].ss / (n - 1.0)
                    })
                    .sum::<f64>()
                    / (nf * nf)
            }
            SchemeTag::B1Uniform | SchemeTag::B3Cluster => spread() / ((kf - 1.0) * kf),
            SchemeTag::B1Weighted => {
                let weighted_ss = means
                    .iter()
                    .zip(&sizes)
                    .map(|(&m, &n)| n as f64 * (m - mu_star_n) * (m - mu_star_n))
                    .sum::<f64>();
                if options.printed_formulas {
                    n_star / (n_star - 1.0) * weighted_ss
                } else {
                    n_star / (1.0 - n_star) * weighted_ss / nf
                }
            }
        };
        outcomes.push(ExactOutcome {
            probability,
            mu_star_n,
            mu_star_prime_k,
            variance_estimate,
        });

        let mut slot = k;
        loop {
            if slot == 0 {
                return Ok(ExactLaw { scheme, outcomes });
            }
            slot -= 1;
            index[slot] += 1;
            if index[slot] < slots[slot].len() {
                break;
            }
            index[slot] = 0;
        }
    }
}
