//! Steady-state Monte Carlo estimation.
//!
//! A replication starts from empty queues, discards a warm-up period and
//! then records thinned samples of the queue vector together with the unused
//! service of every post-warm-up slot. Standard errors come from batch means
//! within a replication and from the spread of replication means once
//! several replications are merged.

mod oracle;

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

pub use self::oracle::{oracle_stationary, OracleResult, ORACLE_MAX_STATES, ORACLE_TOL};
use crate::batch::{batch_means, from_batch_means, Estimate, DEFAULT_BATCHES};
use crate::error::{param, Error, Result};
use crate::model::{SimConfig, Simulator};
use crate::projection::{norm_moment, perp_norm};
use crate::rng::replication_rng;

/// Warm-up length in relaxation times.
pub const WARMUP_RELAXATIONS: f64 = 10.0;
/// Horizon length in relaxation times.
pub const HORIZON_RELAXATIONS: f64 = 100.0;
/// Runs shorter than this many relaxation times trigger a mixing warning.
pub const MIXING_WARN_RELAXATIONS: f64 = 20.0;
/// Retained samples per relaxation time.
pub const SAMPLES_PER_RELAXATION: f64 = 100.0;
pub const MIN_HORIZON: u64 = 20_000;
pub const MIN_WARMUP: u64 = 1_000;
pub const DEFAULT_RETAIN_CAP: usize = 100_000;

/// Heuristic mixing time of the total queue length: per-slot variance over
/// squared drift, `N (sigma_a^2 + sigma_s^2) / drift^2`.
pub fn relaxation_time(n_servers: usize, sigma_sum_sq: f64, drift: f64) -> f64 {
    n_servers as f64 * sigma_sum_sq / (drift * drift)
}

/// Run lengths derived from the relaxation time of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub relaxation: f64,
    pub warmup: u64,
    pub horizon: u64,
    pub sample_every: u64,
}

impl Schedule {
    /// Schedule for `cfg` with the horizon stretched to `horizon_relaxations`
    /// relaxation times. Uses the achieved arrival variance.
    pub fn for_config(cfg: &SimConfig, horizon_relaxations: f64) -> Result<Self> {
        let arr = cfg.arrival_dist()?;
        let achieved = arr.variance() / cfg.n_servers as f64;
        let relaxation = relaxation_time(cfg.n_servers, achieved + cfg.sigma_s_sq, cfg.drift());
        let warmup = ((WARMUP_RELAXATIONS * relaxation).ceil() as u64).max(MIN_WARMUP);
        let horizon = ((horizon_relaxations * relaxation).ceil() as u64).max(MIN_HORIZON).max(warmup + 1);
        let sample_every = ((relaxation / SAMPLES_PER_RELAXATION).floor() as u64).max(1);
        Ok(Self {
            relaxation,
            warmup,
            horizon,
            sample_every,
        })
    }

    /// Copies warm-up and horizon into `cfg`.
    pub fn apply(&self, cfg: &mut SimConfig) {
        cfg.warmup = self.warmup;
        cfg.horizon = self.horizon;
    }
}

/// How a replication turns a sample path into estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub warmup: u64,
    /// Thinning interval between recorded queue samples.
    pub sample_every: u64,
    pub n_batches: usize,
    pub retain_scaled_totals: bool,
    pub retain_cap: usize,
    /// Orders `r` of the `E ||q_perp||^r` moments to estimate.
    pub perp_orders: Vec<u32>,
}

impl EstimatorSpec {
    /// Defaults for `cfg`: its own warm-up and a thinning interval of one
    /// hundredth of the relaxation time.
    pub fn for_config(cfg: &SimConfig) -> Result<Self> {
        let schedule = Schedule::for_config(cfg, HORIZON_RELAXATIONS)?;
        Ok(Self {
            warmup: cfg.warmup,
            sample_every: schedule.sample_every,
            n_batches: DEFAULT_BATCHES,
            retain_scaled_totals: true,
            retain_cap: DEFAULT_RETAIN_CAP,
            perp_orders: vec![1, 2],
        })
    }
}

/// Steady-state estimates from one replication or a merged set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `E[sum q]`.
    pub mean_total_q: Estimate,
    /// `E[sum u]` per slot, averaged over every post-warm-up slot.
    pub mean_total_u_per_slot: Estimate,
    /// `N^-alpha E[sum q]`.
    pub scaled_mean: Estimate,
    pub perp_moments: BTreeMap<u32, Estimate>,
    /// `N^-alpha sum q` at (a thinned subset of) the sample epochs.
    pub scaled_samples: Vec<f64>,
    /// Arrival variance actually realized, divided by `N`.
    pub achieved_sigma_a_sq: f64,
    pub config_echo: SimConfig,
    pub n_samples: u64,
    pub n_slots: u64,
    pub replications: usize,
}

/// Simulates replication `rep_index` of `cfg`.
pub fn run_replication(cfg: &SimConfig, spec: &EstimatorSpec, rep_index: u64) -> Result<RunSummary> {
    cfg.validate()?;
    if spec.sample_every == 0 {
        return Err(param("sample_every", "must be positive"));
    }
    if spec.n_batches < 2 {
        return Err(param("n_batches", "need at least 2 batches"));
    }
    if spec.warmup >= cfg.horizon {
        return Err(param("warmup", "must be below the horizon"));
    }
    let arrivals = cfg.arrival_dist()?;
    let service = cfg.service_dist()?;
    let achieved_sigma_a_sq = arrivals.variance() / cfg.n_servers as f64;

    let relaxation = relaxation_time(cfg.n_servers, achieved_sigma_a_sq + cfg.sigma_s_sq, cfg.drift());
    if (cfg.horizon as f64) < MIXING_WARN_RELAXATIONS * relaxation {
        warn!(
            "horizon {} is under {MIXING_WARN_RELAXATIONS} relaxation times ({relaxation:.0} slots each) for N = {}",
            cfg.horizon, cfg.n_servers
        );
    }

    let k = spec.n_batches as u64;
    let slots_per_batch = (cfg.horizon - spec.warmup) / k;
    let used_slots = slots_per_batch * k;
    let offered = used_slots.div_ceil(spec.sample_every);
    let used_samples = offered - offered % k;
    if used_samples == 0 {
        return Err(param(
            "sample_every",
            format!("post-warm-up window yields fewer than {k} samples"),
        ));
    }
    let retain_stride = if spec.retain_scaled_totals {
        (used_samples as usize).div_ceil(spec.retain_cap.max(1)) as u64
    } else {
        0
    };

    let scale = cfg.scale();
    let mut rng = replication_rng(cfg.seed, rep_index);
    let mut sim = Simulator::new(cfg.n_servers, arrivals, service, cfg.policy)?;
    let mut totals = Vec::with_capacity(used_samples as usize);
    let mut norms = Vec::with_capacity(used_samples as usize);
    let mut scaled_samples = Vec::new();
    let mut unused = vec![0u64; spec.n_batches];

    for _ in 0..spec.warmup {
        sim.step(&mut rng);
    }
    for offset in 0..used_slots {
        if offset % spec.sample_every == 0 {
            let j = offset / spec.sample_every;
            if j < used_samples {
                let q = &sim.state().q;
                let total = q.iter().sum::<u64>() as f64;
                totals.push(total);
                norms.push(perp_norm(q));
                if retain_stride > 0 && j.is_multiple_of(retain_stride) {
                    scaled_samples.push(scale * total);
                }
            }
        }
        let rec = sim.step(&mut rng);
        unused[(offset / slots_per_batch) as usize] += rec.total_unused();
    }

    let mean_total_q = batch_means(&totals, spec.n_batches);
    let unused_means: Vec<f64> = unused.iter().map(|&u| u as f64 / slots_per_batch as f64).collect();
    let perp_moments = spec
        .perp_orders
        .iter()
        .map(|&r| Ok((r, norm_moment(&norms, r, spec.n_batches)?)))
        .collect::<Result<_>>()?;

    Ok(RunSummary {
        mean_total_q,
        mean_total_u_per_slot: from_batch_means(&unused_means),
        scaled_mean: Estimate::new(mean_total_q.est * scale, mean_total_q.stderr * scale),
        perp_moments,
        scaled_samples,
        achieved_sigma_a_sq,
        config_echo: cfg.clone(),
        n_samples: used_samples,
        n_slots: used_slots,
        replications: 1,
    })
}

/// Runs replications `0..cfg.replications` one after another.
pub fn run_replications(cfg: &SimConfig, spec: &EstimatorSpec) -> Result<Vec<RunSummary>> {
    (0..cfg.replications as u64)
        .map(|rep| run_replication(cfg, spec, rep))
        .collect()
}

/// Pools replication summaries. Means are weighted by sample (or slot)
/// counts; standard errors come from the spread of the replication means.
/// A single summary is returned unchanged apart from sample capping.
pub fn merge_replications(parts: &[RunSummary], retain_cap: usize) -> Result<RunSummary> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Merge("no summaries to merge".into()))?;
    if let Some(bad) = parts.iter().find(|p| p.config_echo != first.config_echo) {
        return Err(Error::Merge(format!(
            "configuration mismatch: N = {} vs N = {}, seed {} vs {}",
            first.config_echo.n_servers, bad.config_echo.n_servers, first.config_echo.seed, bad.config_echo.seed
        )));
    }
    let groups: Vec<&[f64]> = parts.iter().map(|p| p.scaled_samples.as_slice()).collect();
    let scaled_samples = thin_groups(&groups, retain_cap).concat();
    if parts.len() == 1 {
        return Ok(RunSummary {
            scaled_samples,
            ..first.clone()
        });
    }

    let sample_w: Vec<f64> = parts.iter().map(|p| p.n_samples as f64).collect();
    let slot_w: Vec<f64> = parts.iter().map(|p| p.n_slots as f64).collect();
    let pool = |weights: &[f64], f: &dyn Fn(&RunSummary) -> f64| {
        let values: Vec<f64> = parts.iter().map(f).collect();
        pooled(&values, weights)
    };

    let mut perp_moments = BTreeMap::new();
    for &r in first.perp_moments.keys() {
        if parts.iter().any(|p| !p.perp_moments.contains_key(&r)) {
            return Err(Error::Merge(format!("moment order {r} missing from some summaries")));
        }
        perp_moments.insert(r, pool(&sample_w, &|p| p.perp_moments[&r].est));
    }

    Ok(RunSummary {
        mean_total_q: pool(&sample_w, &|p| p.mean_total_q.est),
        mean_total_u_per_slot: pool(&slot_w, &|p| p.mean_total_u_per_slot.est),
        scaled_mean: pool(&sample_w, &|p| p.scaled_mean.est),
        perp_moments,
        scaled_samples,
        achieved_sigma_a_sq: first.achieved_sigma_a_sq,
        config_echo: first.config_echo.clone(),
        n_samples: parts.iter().map(|p| p.n_samples).sum(),
        n_slots: parts.iter().map(|p| p.n_slots).sum(),
        replications: parts.iter().map(|p| p.replications).sum(),
    })
}

/// Weighted mean of replication means with standard error
/// `sqrt(R/(R-1) * sum w_r^2 (m_r - m)^2) / sum w_r`.
pub fn pooled(means: &[f64], weights: &[f64]) -> Estimate {
    let total: f64 = weights.iter().sum();
    let r = means.len() as f64;
    let mean = means.iter().zip(weights).map(|(m, w)| m * w).sum::<f64>() / total;
    if means.len() < 2 {
        return Estimate::new(mean, 0.0);
    }
    let ss: f64 = means
        .iter()
        .zip(weights)
        .map(|(m, w)| w * w * (m - mean) * (m - mean))
        .sum();
    Estimate::new(mean, (ss * r / (r - 1.0)).sqrt() / total)
}

/// Thins every group with one common stride so the total stays within `cap`.
pub fn thin_groups(groups: &[&[f64]], cap: usize) -> Vec<Vec<f64>> {
    let cap = cap.max(1);
    let kept = |stride: usize| groups.iter().map(|g| g.len().div_ceil(stride)).sum::<usize>();
    let total: usize = groups.iter().map(|g| g.len()).sum();
    let mut stride = total.div_ceil(cap).max(1);
    while kept(stride) > cap {
        stride += 1;
    }
    groups
        .iter()
        .map(|g| g.iter().step_by(stride).copied().collect())
        .collect()
}
