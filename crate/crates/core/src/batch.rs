//! Batch-means standard errors for correlated steady-state series.

use serde::{Deserialize, Serialize};

/// Default number of batches for steady-state standard errors.
pub const DEFAULT_BATCHES: usize = 20;

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub est: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(est: f64, stderr: f64) -> Self {
        Self { est, stderr }
    }

    /// True when `target` lies within `k` standard errors of the estimate.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.est - target).abs() <= k * self.stderr
    }
}

/// Mean and standard error from a set of batch means treated as i.i.d.
pub fn from_batch_means(means: &[f64]) -> Estimate {
    let k = means.len();
    if k == 0 {
        return Estimate::default();
    }
    let mean = means.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return Estimate::new(mean, 0.0);
    }
    let ss: f64 = means.iter().map(|m| (m - mean) * (m - mean)).sum();
    Estimate::new(mean, (ss / ((k - 1) * k) as f64).sqrt())
}

/// Splits `values` (in time order) into `n_batches` contiguous equal batches,
/// dropping the tail that does not fill a batch.
pub fn batch_means(values: &[f64], n_batches: usize) -> Estimate {
    let k = n_batches.clamp(1, values.len().max(1));
    let len = values.len() / k;
    if len == 0 {
        return Estimate::default();
    }
    let means: Vec<f64> = values
        .chunks_exact(len)
        .take(k)
        .map(|c| c.iter().sum::<f64>() / len as f64)
        .collect();
    from_batch_means(&means)
}
