use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{corrupt, default_times, MtsSample};
use crate::error::{Error, Result};
use crate::generative::{check_simplex, draw_categorical, draw_emission_cluster};
use crate::seeding::{derive_seed, rng_for};

/// Parameters of the synthetic generator. The transition network is
/// replaced by a fixed first-order transition matrix so that recovered
/// parameters can be compared against known values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k: usize,
    pub d: usize,
    pub w: usize,
    pub n: usize,
    /// Emission precision; noise standard deviation is `sigma^-1/2`.
    pub sigma: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Fraction of observed entries dropped per sample after generation.
    pub missing: f64,
    /// Spread of the default means.
    pub mean_radius: f64,
    /// Probability of advancing to the next cluster (cyclically) under the
    /// default transition matrix; the remainder stays put.
    pub advance_prob: f64,
    pub means: Option<Vec<Vec<f64>>>,
    pub transition: Option<Vec<Vec<f64>>>,
    pub basis_probs: Option<Vec<f64>>,
    /// Forces `z_1` instead of drawing it uniformly.
    pub first_cluster: Option<usize>,
}

impl SynthConfig {
    pub fn new(k: usize, d: usize, w: usize, n: usize, sigma: f64, gamma: f64, seed: u64) -> Self {
        Self {
            k,
            d,
            w,
            n,
            sigma,
            gamma,
            seed,
            missing: 0.0,
            mean_radius: 2.0,
            advance_prob: 0.8,
            means: None,
            transition: None,
            basis_probs: None,
            first_cluster: None,
        }
    }

    /// Means spaced evenly on a circle of radius `mean_radius` (or a line
    /// when `d = 1`).
    pub fn default_means(&self) -> Vec<Vec<f64>> {
        let (k, d, r) = (self.k, self.d, self.mean_radius);
        (0..k)
            .map(|i| {
                if d == 1 {
                    let x = if k == 1 { 0.0 } else { 2.0 * i as f64 / (k - 1) as f64 - 1.0 };
                    vec![r * x]
                } else {
                    let theta = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                    (0..d)
                        .map(|j| r * (theta + std::f64::consts::FRAC_PI_2 * j as f64).cos())
                        .collect()
                }
            })
            .collect()
    }

    pub fn default_transition(&self) -> Vec<Vec<f64>> {
        let k = self.k;
        (0..k)
            .map(|i| {
                let mut row = vec![0.0; k];
                row[i] += 1.0 - self.advance_prob;
                row[(i + 1) % k] += self.advance_prob;
                row
            })
            .collect()
    }
}

/// Ground truth behind a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub means: Vec<Vec<f64>>,
    pub transition: Vec<Vec<f64>>,
    pub basis_probs: Vec<f64>,
    /// Transition-path clusters `z`, one row per sample.
    pub paths: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub samples: Vec<MtsSample>,
    pub truth: GroundTruth,
    /// Emission clusters `z̃`, one row per sample.
    pub emission_paths: Vec<Vec<usize>>,
}

/// Draws `n` series from the generative process driven by a fixed Markov
/// transition matrix, then optionally hides a fraction of entries.
pub fn synthesize(cfg: &SynthConfig) -> Result<SyntheticData> {
    let SynthConfig { k, d, w, n, sigma, gamma, .. } = *cfg;
    if k == 0 || d == 0 || w == 0 || n == 0 {
        return Err(Error::invalid("k/d/w/n", "must all be at least 1"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", format!("{sigma} is not a positive precision")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid("gamma", format!("{gamma} is outside [0, 1]")));
    }
    let means = cfg.means.clone().unwrap_or_else(|| cfg.default_means());
    if means.len() != k || means.iter().any(|m| m.len() != d) {
        return Err(Error::invalid("means", format!("need {k} rows of length {d}")));
    }
    let transition = cfg.transition.clone().unwrap_or_else(|| cfg.default_transition());
    if transition.len() != k {
        return Err(Error::invalid("transition", format!("need {k} rows")));
    }
    for row in &transition {
        check_simplex("transition", row, k)?;
    }
    let basis_probs = cfg.basis_probs.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
    check_simplex("basis_probs", &basis_probs, k)?;
    if let Some(z) = cfg.first_cluster {
        if z >= k {
            return Err(Error::invalid("first_cluster", format!("{z} ≥ k = {k}")));
        }
    }

    let noise = Normal::new(0.0, sigma.powf(-0.5)).expect("positive standard deviation");
    let uniform = vec![1.0 / k as f64; k];
    let mut samples = Vec::with_capacity(n);
    let mut paths = Vec::with_capacity(n);
    let mut emission_paths = Vec::with_capacity(n);
    for s in 0..n {
        let mut rng = rng_for(cfg.seed, &format!("synth/{s}"));
        let mut z = cfg.first_cluster.unwrap_or_else(|| draw_categorical(&mut rng, &uniform));
        let mut path = Vec::with_capacity(w);
        let mut emitted = Vec::with_capacity(w);
        let mut values = vec![0.0; d * w];
        for t in 0..w {
            if t > 0 {
                z = draw_categorical(&mut rng, &transition[z]);
            }
            let ze = draw_emission_cluster(&mut rng, z, gamma, &basis_probs);
            for i in 0..d {
                values[i * w + t] = means[ze][i] + noise.sample(&mut rng);
            }
            path.push(z);
            emitted.push(ze);
        }
        let mut sample = MtsSample::new(
            format!("s{s}"),
            d,
            w,
            values,
            vec![true; d * w],
            default_times(w),
        )?;
        if cfg.missing > 0.0 {
            sample = corrupt(&sample, cfg.missing, derive_seed(cfg.seed, &format!("synth-missing/{s}")))?;
        }
        samples.push(sample);
        paths.push(path);
        emission_paths.push(emitted);
    }
    Ok(SyntheticData {
        samples,
        truth: GroundTruth {
            means,
            transition,
            basis_probs,
            paths,
        },
        emission_paths,
    })
}
