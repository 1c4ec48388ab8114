use rand::Rng;

use super::{s_star_k_squared, s_star_n_squared, BootstrapOptions, Replicate, SchemeTag};
use crate::error::{Error, Result};
use crate::model::{ClusterDataset, Population};
use crate::numeric::{self, CompensatedSum};

/// Reusable buffers for one replicate.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    /// Observed population feeding each slot.
    slots: Vec<usize>,
    /// Drawn individual values, contiguous per slot (B2 and B3 only).
    values: Vec<f64>,
    offsets: Vec<usize>,
}

/// Draws replicates for one dataset and scheme.
///
/// Draw order per replicate is fixed: B2 draws `n_k` indices per population
/// in population order; B1 draws one population per slot; B3 draws one
/// population per slot followed immediately by its `n_l - 1` individual
/// indices.
#[derive(Debug, Clone)]
pub struct Resampler<'a> {
    data: &'a ClusterDataset,
    scheme: SchemeTag,
    options: BootstrapOptions,
    sizes: Vec<usize>,
    means: Vec<f64>,
    n_total: usize,
    /// Observation index to population, for size-weighted draws.
    owner: Vec<u32>,
}

impl<'a> Resampler<'a> {
    pub fn new(
        data: &'a ClusterDataset,
        scheme: SchemeTag,
        options: BootstrapOptions,
    ) -> Result<Self> {
        let sizes = data.sizes();
        if scheme == SchemeTag::B3Cluster {
            if let Some(index) = sizes.iter().position(|&n| n < 2) {
                return Err(Error::SingletonPopulation { index });
            }
        }
        let means = data
            .populations()
            .iter()
            .map(|p| numeric::mean(&p.values))
            .collect();
        let owner = if scheme == SchemeTag::B1Weighted {
            sizes
                .iter()
                .enumerate()
                .flat_map(|(k, &n)| std::iter::repeat_n(k as u32, n))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            data,
            scheme,
            options,
            n_total: sizes.iter().sum(),
            sizes,
            means,
            owner,
        })
    }

    pub fn scheme(&self) -> SchemeTag {
        self.scheme
    }

    /// Fills `scratch` with one resample.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut Scratch) {
        let k = self.sizes.len();
        scratch.slots.clear();
        scratch.values.clear();
        scratch.offsets.clear();
        match self.scheme {
            SchemeTag::B2Individuals => {
                for (l, &n) in self.sizes.iter().enumerate() {
                    scratch.slots.push(l);
                    scratch.offsets.push(scratch.values.len());
                    let source = self.data.values(l);
                    for _ in 0..n {
                        scratch.values.push(source[rng.random_range(0..n)]);
                    }
                }
            }
            SchemeTag::B1Uniform => {
                for _ in 0..k {
                    scratch.slots.push(rng.random_range(0..k));
                }
            }
            SchemeTag::B1Weighted => {
                for _ in 0..k {
                    let u = rng.random_range(0..self.n_total);
                    scratch.slots.push(self.owner[u] as usize);
                }
            }
            SchemeTag::B3Cluster => {
                for _ in 0..k {
                    let l = rng.random_range(0..k);
                    scratch.slots.push(l);
                    scratch.offsets.push(scratch.values.len());
                    let n = self.sizes[l];
                    let source = self.data.values(l);
                    for _ in 0..n - 1 {
                        scratch.values.push(source[rng.random_range(0..n)]);
                    }
                }
            }
        }
        scratch.offsets.push(scratch.values.len());
    }

    fn slot_values<'s>(&self, scratch: &'s Scratch, k: usize) -> &'s [f64] {
        &scratch.values[scratch.offsets[k]..scratch.offsets[k + 1]]
    }

    fn slot_means(&self, scratch: &Scratch) -> Vec<f64> {
        match self.scheme {
            SchemeTag::B1Uniform | SchemeTag::B1Weighted => {
                scratch.slots.iter().map(|&l| self.means[l]).collect()
            }
            SchemeTag::B2Individuals | SchemeTag::B3Cluster => (0..scratch.slots.len())
                .map(|k| numeric::mean(self.slot_values(scratch, k)))
                .collect(),
        }
    }

    /// Replicate statistics of the resample held in `scratch`.
    pub fn statistics(&self, scratch: &Scratch) -> Replicate {
        let slot_means = self.slot_means(scratch);
        let variance = match self.scheme {
            SchemeTag::B2Individuals => {
                let n_total = self.n_total as f64;
                let mut acc = CompensatedSum::new();
                for (k, &m) in slot_means.iter().enumerate() {
                    let n = self.sizes[k];
                    if n > 1 {
                        // (n_k - 1) V*_k = n_k SS_k / (n_k - 1)
                        let ss = numeric::sum_sq_dev(self.slot_values(scratch, k), m);
                        acc.add(n as f64 * ss / (n - 1) as f64);
                    }
                }
                acc.value() / (n_total * n_total)
            }
            SchemeTag::B1Uniform => {
                s_star_k_squared(&slot_means).unwrap_or(f64::NAN) / slot_means.len() as f64
            }
            SchemeTag::B1Weighted => {
                s_star_n_squared(&self.sizes, &slot_means, self.options.printed_formulas)
                    .unwrap_or(f64::NAN)
            }
            SchemeTag::B3Cluster => {
                s_star_k_squared(&slot_means).unwrap_or(f64::NAN) / slot_means.len() as f64
            }
        };
        slot_statistics(&self.sizes, &slot_means, variance)
    }

    /// The resample as a dataset; slot `k` keeps the id of the population it
    /// was drawn from.
    pub fn materialize(&self, scratch: &Scratch) -> ClusterDataset {
        let populations = scratch
            .slots
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                let source = &self.data.populations()[l];
                let values = match self.scheme {
                    SchemeTag::B1Uniform | SchemeTag::B1Weighted => source.values.clone(),
                    _ => self.slot_values(scratch, k).to_vec(),
                };
                Population {
                    id: source.id.clone(),
                    values,
                }
            })
            .collect();
        ClusterDataset::new(populations).expect("resample of a valid dataset is valid")
    }
}

fn slot_statistics(slot_sizes: &[usize], slot_means: &[f64], variance: f64) -> Replicate {
    let n_total = slot_sizes.iter().sum::<usize>() as f64;
    let mu_star_n = numeric::sum(
        slot_sizes
            .iter()
            .zip(slot_means)
            .map(|(&n, &m)| n as f64 * m),
    ) / n_total;
    Replicate {
        mu_star_N: mu_star_n,
        mu_star_prime_K: numeric::mean(slot_means),
        scale: variance.sqrt(),
    }
}

/// Replicate statistics recomputed from a materialized resample, with the
/// original subsample sizes as slot weights.
pub fn replicate_from_dataset(
    original_sizes: &[usize],
    resampled: &ClusterDataset,
    scheme: SchemeTag,
    options: BootstrapOptions,
) -> Result<Replicate> {
    if resampled.k() != original_sizes.len() {
        return Err(Error::InvalidArgument(
            "resample and original differ in population count".into(),
        ));
    }
    let slot_means: Vec<f64> = resampled
        .populations()
        .iter()
        .map(|p| numeric::mean(&p.values))
        .collect();
    let k = slot_means.len() as f64;
    let variance = match scheme {
        SchemeTag::B2Individuals => {
            let n_total = original_sizes.iter().sum::<usize>() as f64;
            let v = super::b2_variance_estimates(resampled);
            numeric::sum(
                original_sizes
                    .iter()
                    .zip(v)
                    .filter(|(&n, _)| n > 1)
                    .map(|(&n, v)| (n - 1) as f64 * v),
            ) / (n_total * n_total)
        }
        SchemeTag::B1Uniform => s_star_k_squared(&slot_means).unwrap_or(f64::NAN) / k,
        SchemeTag::B1Weighted => {
            s_star_n_squared(original_sizes, &slot_means, options.printed_formulas)
                .unwrap_or(f64::NAN)
        }
        SchemeTag::B3Cluster => super::b3_variance_estimate(&slot_means).unwrap_or(f64::NAN),
    };
    Ok(slot_statistics(original_sizes, &slot_means, variance))
}

/// One resample under `scheme`.
pub fn resample<R: Rng + ?Sized>(
    data: &ClusterDataset,
    scheme: SchemeTag,
    rng: &mut R,
) -> Result<ClusterDataset> {
    let resampler = Resampler::new(data, scheme, BootstrapOptions::default())?;
    let mut scratch = Scratch::default();
    resampler.draw(rng, &mut scratch);
    Ok(resampler.materialize(&scratch))
}

/// Individuals resampled with replacement inside each population.
pub fn resample_b2<R: Rng + ?Sized>(data: &ClusterDataset, rng: &mut R) -> ClusterDataset {
    resample(data, SchemeTag::B2Individuals, rng).expect("B2 accepts any dataset")
}

/// `K` populations drawn uniformly with replacement, values carried verbatim.
pub fn resample_b1_uniform<R: Rng + ?Sized>(data: &ClusterDataset, rng: &mut R) -> ClusterDataset {
    resample(data, SchemeTag::B1Uniform, rng).expect("B1 accepts any dataset")
}

/// `K` populations drawn with probabilities `n_l / N`, values carried verbatim.
pub fn resample_b1_weighted<R: Rng + ?Sized>(data: &ClusterDataset, rng: &mut R) -> ClusterDataset {
    resample(data, SchemeTag::B1Weighted, rng).expect("B1 accepts any dataset")
}

/// Populations drawn uniformly, then `n_l - 1` individuals from the chosen
/// population `l`.
pub fn resample_b3<R: Rng + ?Sized>(data: &ClusterDataset, rng: &mut R) -> Result<ClusterDataset> {
    resample(data, SchemeTag::B3Cluster, rng)
}
