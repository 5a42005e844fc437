//! Decomposition of queue vectors along the all-ones direction.
//!
//! `x_par = (sum(x) / N) 1` is the projection of `x` on the line spanned by
//! the all-ones vector and `x_perp = x - x_par` is what is left over. State
//! space collapse is measured through moments of `||q_perp||`.

use crate::batch::{from_batch_means, Estimate, DEFAULT_BATCHES};
use crate::error::{param, Error, Result};

/// Exponent above which `x^r` moments are accumulated in log space.
pub const LOG_SPACE_ORDER: u32 = 4;
/// Largest natural log that still fits in an `f64`.
const MAX_LN: f64 = 709.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub parallel: Vec<f64>,
    pub perp: Vec<f64>,
}

pub fn decompose(x: &[f64]) -> Result<Decomposition> {
    if x.is_empty() {
        return Err(param("x", "cannot decompose an empty vector"));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    Ok(Decomposition {
        parallel: vec![mean; x.len()],
        perp: x.iter().map(|v| v - mean).collect(),
    })
}

/// The `p`-norm; pass `f64::INFINITY` for the max norm.
pub fn p_norm(x: &[f64], p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(param("p", format!("{p} is below 1")));
    }
    Ok(if p.is_infinite() {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        x.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    } else {
        x.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    })
}

/// `||q_perp||` for an integer queue vector, computed from the exact integer
/// identity `N ||q_perp||^2 = N sum(q^2) - sum(q)^2`.
pub fn perp_norm(q: &[u64]) -> f64 {
    if q.is_empty() {
        return 0.0;
    }
    let n = q.len() as u128;
    let (sum, sum_sq) = q.iter().fold((0u128, 0u128), |(s, ss), &v| {
        let v = v as u128;
        (s + v, ss + v * v)
    });
    let scaled = n * sum_sq - sum * sum;
    (scaled as f64 / n as f64).sqrt()
}

/// Steady-state estimate of `E ||q_perp||^r` from sampled queue vectors.
pub fn perp_moment_estimate(samples: &[Vec<u64>], r: u32) -> Result<Estimate> {
    if samples.is_empty() {
        return Err(param("samples", "need at least one sample"));
    }
    let norms: Vec<f64> = samples.iter().map(|q| perp_norm(q)).collect();
    norm_moment(&norms, r, DEFAULT_BATCHES)
}

/// Batch-means estimate of `E[x^r]` over a time-ordered series of norms.
pub fn norm_moment(norms: &[f64], r: u32, n_batches: usize) -> Result<Estimate> {
    if r == 0 {
        return Err(param("r", "moment order must be at least 1"));
    }
    if norms.is_empty() {
        return Err(param("samples", "need at least one sample"));
    }
    if norms.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Domain("norms must be nonnegative".into()));
    }
    let k = n_batches.clamp(1, norms.len());
    let len = norms.len() / k;
    let batches = norms.chunks_exact(len).take(k);

    if r < LOG_SPACE_ORDER {
        let means: Vec<f64> = batches
            .map(|c| c.iter().map(|x| x.powi(r as i32)).sum::<f64>() / len as f64)
            .collect();
        return Ok(from_batch_means(&means));
    }

    // log of each batch mean via log-sum-exp
    let log_means: Vec<f64> = batches
        .map(|c| {
            let logs: Vec<f64> = c.iter().map(|x| r as f64 * x.ln()).collect();
            log_sum_exp(&logs) - (len as f64).ln()
        })
        .collect();
    let shift = log_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Ok(Estimate::default());
    }
    let scaled: Vec<f64> = log_means.iter().map(|l| (l - shift).exp()).collect();
    let e = from_batch_means(&scaled);
    if shift + e.est.ln() > MAX_LN {
        return Err(Error::Overflow(format!(
            "E[||q_perp||^{r}] is about e^{:.1}",
            shift + e.est.ln()
        )));
    }
    let factor = shift.exp();
    Ok(Estimate::new(e.est * factor, e.stderr * factor))
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}
