//! Verification mathematics: distance to the exponential law, empirical
//! MGFs, the closed-form Wasserstein bound and scaling-law regressions.

use std::collections::BTreeMap;
use std::f64::consts::E;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{batch_means, DEFAULT_BATCHES};
use crate::error::{param, Error, Result};

/// `theta * x` above this is treated as overflowing `exp`.
pub const MGF_SATURATION: f64 = 700.0;

/// Targets the heavy-traffic limit predicts for one `(N, alpha)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryTargets {
    /// Mean of the limiting exponential, `(sigma_a^2 + sigma_s^2) / 2`.
    pub limit_mean: f64,
    /// Slack capacity `N^(1 - alpha)`.
    pub drift: f64,
    pub stein_rhs: f64,
    /// `K(r)` for each requested moment order.
    pub k_r: BTreeMap<u32, f64>,
}

impl TheoryTargets {
    /// `achieved_sigma_a_sq` must be the variance the arrival law really
    /// has, divided by `N`.
    pub fn new(
        n: usize,
        alpha: f64,
        achieved_sigma_a_sq: f64,
        sigma_s_sq: f64,
        s_max: u64,
        c: f64,
        orders: &[u32],
    ) -> Self {
        let sigma_sum = achieved_sigma_a_sq + sigma_s_sq;
        let nf = n as f64;
        Self {
            limit_mean: limit_mean(achieved_sigma_a_sq, sigma_s_sq),
            drift: nf.powf(1.0 - alpha),
            stein_rhs: stein_bound_rhs(nf, alpha, sigma_sum, s_max as f64, c),
            k_r: orders.iter().map(|&r| (r, k_of_r(c, r))).collect(),
        }
    }
}

pub fn limit_mean(sigma_a_sq: f64, sigma_s_sq: f64) -> f64 {
    (sigma_a_sq + sigma_s_sq) / 2.0
}

/// `K(r) = C^r r^(r + 1/2) e^(1 - r)`, the moment constant of the
/// `||q_perp||` bound.
pub fn k_of_r(c: f64, r: u32) -> f64 {
    let r = r as f64;
    c.powf(r) * r.powf(r + 0.5) * (1.0 - r).exp()
}

/// Right-hand side of the Wasserstein bound between the rescaled total
/// queue length and `Exp(1)`:
///
/// ```text
/// (5 s_max N^(1-a) + N^(1-2a) + 2 C s_max e^(1/(2e)+1) ceil(a-1) N^(2-a) ceil(ln N)) / sigma_sum
/// ```
pub fn stein_bound_rhs(n: f64, alpha: f64, sigma_sum_sq: f64, s_max: f64, c: f64) -> f64 {
    let c_bar = c * s_max * (1.0 / (2.0 * E) + 1.0).exp();
    let first = 5.0 * s_max * n.powf(1.0 - alpha);
    let second = n.powf(1.0 - 2.0 * alpha);
    let third = 2.0 * c_bar * (alpha - 1.0).ceil() * n.powf(2.0 - alpha) * n.ln().ceil();
    (first + second + third) / sigma_sum_sq
}

/// Wasserstein-1 distance between the empirical law of `samples / mean` and
/// `Exp(1)`.
///
/// Integrates `|F_n(t) - (1 - e^-t)|` exactly: `F_n` is constant between
/// order statistics and each piece is split at the crossing point
/// `t = -ln(1 - k/n)` when it falls inside.
pub fn wasserstein1_to_exp(samples: &[f64], mean: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(param("samples", "need at least one sample"));
    }
    if !(mean.is_finite() && mean > 0.0) {
        return Err(param("mean", format!("{mean} must be positive")));
    }
    if samples.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain("samples must be finite and nonnegative".into()));
    }
    let mut x: Vec<f64> = samples.iter().map(|v| v / mean).collect();
    x.sort_by(f64::total_cmp);
    let n = x.len();

    let mut total = 0.0;
    let mut lo = 0.0;
    for k in 0..=n {
        let hi = if k < n { x[k] } else { f64::INFINITY };
        if hi > lo {
            total += piece((n - k) as f64 / n as f64, lo, hi);
        }
        lo = hi;
    }
    Ok(total)
}

/// `∫_lo^hi |e^-t - level| dt`.
fn piece(level: f64, lo: f64, hi: f64) -> f64 {
    // ∫ e^-t over [a, b], stable for short pieces.
    let exp_mass = |a: f64, b: f64| {
        if b.is_infinite() {
            (-a).exp()
        } else {
            -(-a).exp() * (-(b - a)).exp_m1()
        }
    };
    if level <= 0.0 {
        return exp_mass(lo, hi);
    }
    let cross = -level.ln();
    if cross <= lo {
        level * (hi - lo) - exp_mass(lo, hi)
    } else if cross >= hi {
        exp_mass(lo, hi) - level * (hi - lo)
    } else {
        (exp_mass(lo, cross) - level * (cross - lo)) + (level * (hi - cross) - exp_mass(cross, hi))
    }
}

/// [`wasserstein1_to_exp`] after rescaling `samples` to unit sample mean,
/// so only the shape of the law is compared.
pub fn wasserstein1_unit_mean(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(param("samples", "need at least one sample"));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    if mean == 0.0 {
        return Err(Error::Domain("unit-mean rescaling of an all-zero sample".into()));
    }
    wasserstein1_to_exp(samples, mean)
}

/// Bootstrap standard error of [`wasserstein1_to_exp`] at a fixed `mean`, or
/// of [`wasserstein1_unit_mean`] when `mean` is `None`.
///
/// `groups` are independent blocks (one per replication); whole blocks are
/// resampled so within-run correlation is preserved. A single block falls
/// back to resampling individual points.
pub fn bootstrap_w1_stderr<R: Rng + ?Sized>(
    groups: &[Vec<f64>],
    mean: Option<f64>,
    resamples: usize,
    rng: &mut R,
) -> Result<f64> {
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    if pooled.is_empty() {
        return Err(param("samples", "need at least one sample"));
    }
    if resamples < 2 {
        return Ok(0.0);
    }
    let mut draws = Vec::with_capacity(resamples);
    let mut buf = Vec::with_capacity(pooled.len());
    for _ in 0..resamples {
        buf.clear();
        if groups.len() > 1 {
            for _ in 0..groups.len() {
                buf.extend_from_slice(&groups[rng.random_range(0..groups.len())]);
            }
        } else {
            buf.extend((0..pooled.len()).map(|_| pooled[rng.random_range(0..pooled.len())]));
        }
        if buf.is_empty() {
            continue;
        }
        draws.push(match mean {
            Some(m) => wasserstein1_to_exp(&buf, m)?,
            None => wasserstein1_unit_mean(&buf)?,
        });
    }
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (draws.len() - 1) as f64;
    Ok(var.sqrt())
}

/// One point of an empirical MGF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfPoint {
    pub theta: f64,
    pub est: f64,
    pub stderr: f64,
    /// `theta * max(sample)` overflowed; `est` and `stderr` are meaningless.
    pub saturated: bool,
}

impl MgfPoint {
    /// MGF of `Exp(1)`, `1 / (1 - theta)`.
    pub fn target(&self) -> f64 {
        1.0 / (1.0 - self.theta)
    }
}

/// 21 equally spaced points on `[-0.5, 0.5]`.
pub fn default_theta_grid() -> Vec<f64> {
    (0..=20).map(|i| -0.5 + 0.05 * i as f64).collect()
}

/// Empirical MGF of the samples rescaled to unit mean, with batch-means
/// standard errors over sample order.
pub fn empirical_mgf(samples: &[f64], theta_grid: &[f64]) -> Result<Vec<MgfPoint>> {
    if samples.is_empty() {
        return Err(param("samples", "need at least one sample"));
    }
    if let Some(t) = theta_grid.iter().find(|&&t| !(t < 1.0)) {
        return Err(param("theta_grid", format!("theta = {t} must be below 1")));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    if !(mean.is_finite() && mean > 0.0) {
        return Err(Error::Domain(format!("sample mean {mean} cannot be rescaled to 1")));
    }
    let x: Vec<f64> = samples.iter().map(|v| v / mean).collect();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);

    Ok(theta_grid
        .iter()
        .map(|&theta| {
            let extreme = if theta >= 0.0 { theta * max } else { theta * min };
            if extreme > MGF_SATURATION {
                return MgfPoint {
                    theta,
                    est: f64::NAN,
                    stderr: f64::NAN,
                    saturated: true,
                };
            }
            let values: Vec<f64> = x.iter().map(|v| (theta * v).exp()).collect();
            let e = batch_means(&values, DEFAULT_BATCHES);
            MgfPoint {
                theta,
                est: e.est,
                stderr: e.stderr,
                saturated: false,
            }
        })
        .collect())
}

/// Least-squares line through `(ln N, ln value)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 3 {
        return Err(param("points", format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(&(n, v)) = points.iter().find(|&&(n, v)| !(n > 0.0 && v > 0.0)) {
        return Err(Error::Domain(format!("log-log fit needs positive data, got ({n}, {v})")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = points.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("all N values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if ss_res <= f64::EPSILON * syy.max(1.0) {
        1.0
    } else {
        1.0 - ss_res / syy
    };
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Exponential QQ pairs `(-ln(1 - (k - 1/2)/n) * mean, x_(k))`, with `mean`
/// the sample mean.
pub fn exp_qq_data(samples: &[f64]) -> Vec<(f64, f64)> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let p = (i as f64 + 0.5) / n;
            (-(1.0 - p).ln() * mean, v)
        })
        .collect()
}
