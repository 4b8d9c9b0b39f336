//! Sparse multivariate time-series samples and the data plumbing around them:
//! CSV interchange, corruption, splitting, normalization and synthetic data.

mod csvio;
mod prep;
mod synth;

pub use csvio::{load_long_csv, load_wide_csv, read_long_csv, read_wide_csv, write_long_csv};
pub use prep::{corrupt, normalize, split, NormStats, Split, SplitSpec};
pub use synth::{synthesize, GroundTruth, SynthConfig, SyntheticData};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value stored at unobserved entries. Never read by any computation.
pub const MISSING: f64 = f64::NAN;

/// One multivariate series of `d` variables over `w` steps with its
/// observation mask. Values are stored row-major, one row per variable.
#[derive(Clone, Debug)]
pub struct MtsSample {
    id: String,
    d: usize,
    w: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    ref_times: Vec<f64>,
}

impl PartialEq for MtsSample {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.d == other.d
            && self.w == other.w
            && self.mask == other.mask
            && self.ref_times == other.ref_times
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl MtsSample {
    /// Validates the invariants and rewrites every masked entry to
    /// [`MISSING`].
    pub fn new(
        id: impl Into<String>,
        d: usize,
        w: usize,
        mut values: Vec<f64>,
        mask: Vec<bool>,
        ref_times: Vec<f64>,
    ) -> Result<Self> {
        if d == 0 || w == 0 {
            return Err(Error::invalid("shape", format!("need d ≥ 1 and w ≥ 1, got {d}×{w}")));
        }
        if values.len() != d * w || mask.len() != d * w {
            return Err(Error::shape(
                "MtsSample",
                format!("values {} / mask {} for {d}×{w}", values.len(), mask.len()),
            ));
        }
        if ref_times.len() != w || ref_times.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::invalid(
                "ref_times",
                "need w strictly increasing time stamps",
            ));
        }
        for (v, &m) in values.iter_mut().zip(&mask) {
            if m {
                if !v.is_finite() {
                    return Err(Error::invalid("values", "observed entry is not finite"));
                }
            } else {
                *v = MISSING;
            }
        }
        Ok(Self {
            id: id.into(),
            d,
            w,
            values,
            mask,
            ref_times,
        })
    }

    /// Builds a sample on the integer grid `1..=w` from per-variable rows,
    /// `None` marking unobserved entries.
    pub fn from_rows(id: impl Into<String>, rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let d = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::shape("MtsSample", "ragged rows"));
        }
        let values = rows.iter().flatten().map(|v| v.unwrap_or(MISSING)).collect();
        let mask = rows.iter().flatten().map(Option::is_some).collect();
        Self::new(id, d, w, values, mask, default_times(w))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.w
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0
    }

    pub fn ref_times(&self) -> &[f64] {
        &self.ref_times
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Raw row-major storage, placeholders included.
    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_observed(&self, var: usize, t: usize) -> bool {
        self.mask[var * self.w + t]
    }

    pub fn value(&self, var: usize, t: usize) -> Option<f64> {
        let i = var * self.w + t;
        self.mask[i].then(|| self.values[i])
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Observed entries as stored, zero elsewhere.
    pub fn observed_or_zero(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect()
    }

    /// Mask row of variable `var`.
    pub fn mask_row(&self, var: usize) -> &[bool] {
        &self.mask[var * self.w..(var + 1) * self.w]
    }

    /// Observed values of step `t` (zero where masked) and the step's mask.
    pub fn column(&self, t: usize) -> (Vec<f64>, Vec<bool>) {
        (0..self.d)
            .map(|i| {
                let k = i * self.w + t;
                if self.mask[k] {
                    (self.values[k], true)
                } else {
                    (0.0, false)
                }
            })
            .unzip()
    }

    /// Steps `start..end` as a new sample with the same id.
    pub fn slice_steps(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.w {
            return Err(Error::invalid(
                "range",
                format!("steps {start}..{end} of a length-{} sample", self.w),
            ));
        }
        let len = end - start;
        let mut values = Vec::with_capacity(self.d * len);
        let mut mask = Vec::with_capacity(self.d * len);
        for i in 0..self.d {
            values.extend_from_slice(&self.values[i * self.w + start..i * self.w + end]);
            mask.extend_from_slice(&self.mask[i * self.w + start..i * self.w + end]);
        }
        Self::new(
            self.id.clone(),
            self.d,
            len,
            values,
            mask,
            self.ref_times[start..end].to_vec(),
        )
    }

    pub(crate) fn set_missing(&mut self, var: usize, t: usize) {
        let i = var * self.w + t;
        self.mask[i] = false;
        self.values[i] = MISSING;
    }

    pub(crate) fn set_observed(&mut self, var: usize, t: usize, value: f64) {
        debug_assert!(value.is_finite());
        let i = var * self.w + t;
        self.mask[i] = true;
        self.values[i] = value;
    }

    /// Overwrites the payload at masked entries. Only useful to demonstrate
    /// that nothing reads it.
    pub fn with_placeholder(&self, payload: f64) -> Self {
        let mut out = self.clone();
        for (v, &m) in out.values.iter_mut().zip(&out.mask) {
            if !m {
                *v = payload;
            }
        }
        out
    }
}

pub(crate) fn default_times(w: usize) -> Vec<f64> {
    (1..=w).map(|t| t as f64).collect()
}

/// Observed prefix length `window` followed by `horizon` steps to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastTask {
    pub window: usize,
    pub horizon: usize,
}

impl ForecastTask {
    pub fn new(window: usize, horizon: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("window", "must be at least 1"));
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        Ok(Self { window, horizon })
    }

    pub fn check(&self, sample: &MtsSample) -> Result<()> {
        if self.window + self.horizon > sample.len() {
            return Err(Error::invalid(
                "window",
                format!(
                    "window {} + horizon {} exceeds sample `{}` of length {}",
                    self.window,
                    self.horizon,
                    sample.id(),
                    sample.len()
                ),
            ));
        }
        Ok(())
    }

    /// Splits `sample` into the observed prefix and the target steps.
    pub fn split(&self, sample: &MtsSample) -> Result<(MtsSample, MtsSample)> {
        self.check(sample)?;
        Ok((
            sample.slice_steps(0, self.window)?,
            sample.slice_steps(self.window, self.window + self.horizon)?,
        ))
    }
}
