//! Predictive moments, empirical credible intervals and classification reports
//! assembled from posterior output samples.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Symmetric empirical credible band at a given level.
#[derive(Debug, Clone, PartialEq)]
pub struct CredibleBand {
    pub level: f64,
    pub lower: Tensor,
    pub upper: Tensor,
}

/// Per-test-point predictive mean and variance, `[n_points, n_outputs]`.
///
/// `variance` includes the observation noise for regression. The optional
/// credible band is computed from the raw output samples, so it describes
/// the network output rather than a noisy observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub mean: Tensor,
    pub variance: Tensor,
    pub interval: Option<CredibleBand>,
    pub n_samples: usize,
}

impl PredictiveSummary {
    pub fn std(&self) -> Tensor {
        self.variance.map(|v| v.max(0.0).sqrt())
    }

    pub fn n_points(&self) -> usize {
        self.mean.rows()
    }

    /// `mean ± k·std` for the first output dimension.
    pub fn gaussian_band(&self, k: f64) -> Vec<(f64, f64)> {
        let d = self.mean.row_len();
        (0..self.n_points())
            .map(|i| {
                let m = self.mean.data()[i * d];
                let s = self.variance.data()[i * d].max(0.0).sqrt();
                (m - k * s, m + k * s)
            })
            .collect()
    }
}

/// Smallest sample count accepted for a credible interval at `level`:
/// `⌈2.5 / (1 − level)⌉`, i.e. 50 samples for a 95% interval.
pub fn min_samples_for_level(level: f64) -> usize {
    (2.5 / (1.0 - level) - 1e-9).ceil() as usize
}

/// Linear-interpolation quantile (order statistic `(n−1)·q`) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    s
}

/// Empirical quantiles at `(1−β)/2` and `1 − (1−β)/2`.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("credible level {level} outside (0, 1)")));
    }
    let needed = min_samples_for_level(level);
    if samples.len() < needed {
        return Err(Error::TooFewSamples {
            needed,
            got: samples.len(),
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("credible interval samples".into()));
    }
    let s = sorted_copy(samples);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail)))
}

/// Predictive mean and variance from `T` output samples of shape `[n, d]`.
///
/// mean = (1/T) Σ fₜ; variance = σ² + (1/T) Σ fₜ² − mean² (population
/// convention, evaluated in two passes). `noise_std` is `Some` only for
/// regression. A credible band at `level` is attached when `T` is large
/// enough for it.
pub fn predictive_moments(samples: &[Tensor], noise_std: Option<f64>, level: f64) -> Result<PredictiveSummary> {
    let t = samples.len();
    if t < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: t });
    }
    let shape = samples[0].shape().to_vec();
    if samples.iter().any(|s| s.shape() != shape.as_slice()) {
        return Err(Error::InvalidShape("output samples differ in shape".into()));
    }
    let shape = if shape.len() == 1 { vec![shape[0], 1] } else { shape };
    let len = samples[0].len();
    let mut mean = vec![0.0; len];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let noise = noise_std.map_or(0.0, |s| s * s);
    let mut var = vec![0.0; len];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.data()).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v = noise + *v / t as f64);

    let interval = if t >= min_samples_for_level(level) && level > 0.0 && level < 1.0 {
        let mut lower = vec![0.0; len];
        let mut upper = vec![0.0; len];
        let mut column = vec![0.0; t];
        for j in 0..len {
            for (c, s) in column.iter_mut().zip(samples) {
                *c = s.data()[j];
            }
            let (lo, hi) = credible_interval(&column, level)?;
            lower[j] = lo;
            upper[j] = hi;
        }
        Some(CredibleBand {
            level,
            lower: Tensor::new(shape.clone(), lower)?,
            upper: Tensor::new(shape.clone(), upper)?,
        })
    } else {
        None
    };
    Ok(PredictiveSummary {
        mean: Tensor::new(shape.clone(), mean)?,
        variance: Tensor::new(shape, var)?,
        interval,
        n_samples: t,
    })
}

/// One test example in a classification report.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub index: usize,
    pub target: usize,
    pub predicted: usize,
    /// Predictive mean probability of the predicted class.
    pub confidence: f64,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub rows: Vec<ClassRow>,
}

impl ClassificationReport {
    /// The `k` rows with the lowest predictive confidence, least confident first.
    pub fn lowest_confidence(&self, k: usize) -> Vec<&ClassRow> {
        let mut rows: Vec<&ClassRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            a.confidence
                .partial_cmp(&b.confidence)
                .unwrap_or(Ordering::Equal)
                .then(a.index.cmp(&b.index))
        });
        rows.truncate(k);
        rows
    }
}

/// Top-1 accuracy of the predictive mean plus per-example class tables.
pub fn classification_report(summary: &PredictiveSummary, targets: &[usize]) -> Result<ClassificationReport> {
    let n = summary.n_points();
    if targets.len() != n {
        return Err(Error::InvalidShape(format!("{n} predictions for {} targets", targets.len())));
    }
    if n == 0 {
        return Err(Error::invalid("empty classification summary"));
    }
    let k = summary.mean.row_len();
    let mut correct = 0usize;
    let mut rows = Vec::with_capacity(n);
    for (i, &target) in targets.iter().enumerate() {
        let mean = summary.mean.row(i).to_vec();
        let (predicted, &confidence) = mean
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)))
            .expect("at least one class");
        if predicted == target {
            correct += 1;
        }
        let (lower, upper) = match &summary.interval {
            Some(b) => (b.lower.row(i).to_vec(), b.upper.row(i).to_vec()),
            None => (vec![f64::NAN; k], vec![f64::NAN; k]),
        };
        rows.push(ClassRow {
            index: i,
            target,
            predicted,
            confidence,
            mean,
            lower,
            upper,
        });
    }
    Ok(ClassificationReport {
        accuracy: correct as f64 / n as f64,
        rows,
    })
}
