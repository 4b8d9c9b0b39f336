use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::MtsSample;
use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// Hides `round(delta · N_obs)` observed entries chosen uniformly without
/// replacement. The input is left untouched.
pub fn corrupt(sample: &MtsSample, delta: f64, seed: u64) -> Result<MtsSample> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid("delta", format!("{delta} is outside [0, 1]")));
    }
    let observed: Vec<usize> = (0..sample.mask.len()).filter(|&i| sample.mask[i]).collect();
    let n_drop = (delta * observed.len() as f64).round() as usize;
    let mut out = sample.clone();
    if n_drop == 0 {
        return Ok(out);
    }
    let mut rng = rng_for(seed, "corrupt");
    for pick in index::sample(&mut rng, observed.len(), n_drop) {
        let flat = observed[pick];
        out.set_missing(flat / sample.w, flat % sample.w);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, valid_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let fr = [train_frac, valid_frac, test_frac];
        if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "split",
                format!("fractions {fr:?} must be non-negative and sum to 1"),
            ));
        }
        Ok(Self {
            train_frac,
            valid_frac,
            test_frac,
            seed,
        })
    }

    /// The 70/10/20 split.
    pub fn standard(seed: u64) -> Self {
        Self {
            train_frac: 0.7,
            valid_frac: 0.1,
            test_frac: 0.2,
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<MtsSample>,
    pub valid: Vec<MtsSample>,
    pub test: Vec<MtsSample>,
}

/// Seeded shuffle followed by floor allocation; the remainder goes to train.
pub fn split(samples: &[MtsSample], spec: &SplitSpec) -> Result<Split> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(spec.seed, "split"));
    let n_valid = (spec.valid_frac * n as f64 + 1e-9).floor() as usize;
    let n_test = (spec.test_frac * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_valid - n_test;
    let pick = |range: std::ops::Range<usize>| -> Vec<MtsSample> {
        order[range].iter().map(|&i| samples[i].clone()).collect()
    };
    Ok(Split {
        train: pick(0..n_train),
        valid: pick(n_train..n_train + n_valid),
        test: pick(n_train + n_valid..n),
    })
}

/// Per-variable mean and standard deviation of observed entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics over the observed entries of `samples` (the train split).
    /// Variables never observed get mean 0 and std 1.
    pub fn from_samples(samples: &[MtsSample]) -> Result<Self> {
        let d = samples.first().ok_or(Error::EmptyDataset)?.dims();
        let mut sum = vec![0.0; d];
        let mut count = vec![0usize; d];
        for s in samples {
            for i in 0..d {
                for t in 0..s.len() {
                    if let Some(v) = s.value(i, t) {
                        sum[i] += v;
                        count[i] += 1;
                    }
                }
            }
        }
        let mean: Vec<f64> = (0..d)
            .map(|i| if count[i] > 0 { sum[i] / count[i] as f64 } else { 0.0 })
            .collect();
        let mut ss = vec![0.0; d];
        for s in samples {
            for (i, acc) in ss.iter_mut().enumerate() {
                for t in 0..s.len() {
                    if let Some(v) = s.value(i, t) {
                        *acc += (v - mean[i]).powi(2);
                    }
                }
            }
        }
        let std = (0..d)
            .map(|i| if count[i] > 0 { (ss[i] / count[i] as f64).sqrt() } else { 1.0 })
            .collect();
        Ok(Self { mean, std })
    }

    fn divisor(&self, i: usize) -> f64 {
        if self.std[i] > 0.0 {
            self.std[i]
        } else {
            1.0
        }
    }
}

/// z-scores observed entries; masked entries are left as placeholders.
pub fn normalize(samples: &[MtsSample], stats: &NormStats) -> Vec<MtsSample> {
    samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            for i in 0..s.dims() {
                for t in 0..s.len() {
                    if let Some(v) = s.value(i, t) {
                        out.set_observed(i, t, (v - stats.mean[i]) / stats.divisor(i));
                    }
                }
            }
            out
        })
        .collect()
}
