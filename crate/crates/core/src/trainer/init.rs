use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use super::{ModelParams, TrainConfig};
use crate::dataset::MtsSample;
use crate::error::{Error, Result};
use crate::seeding::rng_for;

const LLOYD_ITERATIONS: usize = 10;

/// Every time step of `samples` as a point in `R^d`, missing coordinates
/// filled with the variable's observed mean.
fn step_points(samples: &[MtsSample]) -> Result<Vec<Vec<f64>>> {
    let d = samples.first().ok_or(Error::EmptyDataset)?.dims();
    let mut sum = vec![0.0; d];
    let mut count = vec![0usize; d];
    for s in samples {
        for var in 0..d {
            for t in 0..s.len() {
                if let Some(v) = s.value(var, t) {
                    sum[var] += v;
                    count[var] += 1;
                }
            }
        }
    }
    let fill: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let mut points = Vec::new();
    for s in samples {
        for t in 0..s.len() {
            let (x, mask) = s.column(t);
            if mask.iter().any(|&m| m) {
                points.push((0..d).map(|v| if mask[v] { x[v] } else { fill[v] }).collect());
            }
        }
    }
    if points.is_empty() {
        return Err(Error::invalid("data", "no observed entries to initialize from"));
    }
    Ok(points)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding followed by a few Lloyd iterations. Returns `k` centers.
pub fn kmeans_centers(samples: &[MtsSample], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let points = step_points(samples)?;
    let mut rng = rng_for(seed, "kmeans");
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(&mut rng),
            // Fewer distinct points than clusters.
            Err(_) => rng.random_range(0..points.len()),
        };
        centers.push(points[next].clone());
        let c = centers.last().expect("just pushed");
        for (n, p) in nearest.iter_mut().zip(&points) {
            *n = n.min(sq_dist(p, c));
        }
    }
    for _ in 0..LLOYD_ITERATIONS {
        let d = points[0].len();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for p in &points {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .expect("k ≥ 1");
            counts[best] += 1;
            for (s, v) in sums[best].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &n) in centers.iter_mut().zip(&sums).zip(&counts) {
            if n > 0 {
                *c = s.iter().map(|v| v / n as f64).collect();
            }
        }
    }
    Ok(centers)
}

/// The model `train` starts from: the seeded initialization with the
/// cluster means placed by k-means on the training steps.
pub fn initial_model(train: &[MtsSample], cfg: &TrainConfig) -> Result<ModelParams> {
    let first = train.first().ok_or(Error::EmptyDataset)?;
    let mut model = ModelParams::new(cfg.model_config(first.dims()), cfg.seed)?;
    for s in train {
        model.check_sample(s)?;
    }
    let centers = kmeans_centers(train, cfg.k, cfg.seed)?;
    let means = model.store.value_mut(model.gen.means).data_mut();
    for (dst, src) in means.iter_mut().zip(centers.iter().flatten()) {
        *dst = *src;
    }
    Ok(model)
}
