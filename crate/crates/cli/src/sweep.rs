//! Runs every `(N, alpha, policy)` cell of a sweep.
//!
//! Cells run one after another; the replications of a cell run on a bounded
//! worker pool and are merged in replication order, so results do not depend
//! on the number of workers.

use std::ops::ControlFlow;
use std::time::Instant;

use anyhow::Context;
use jsq_core::estimate::thin_groups;
use jsq_core::rng::auxiliary_rng;
use jsq_core::stats::{
    bootstrap_w1_stderr, default_theta_grid, empirical_mgf, exp_qq_data, wasserstein1_unit_mean,
};
use jsq_core::{
    merge_replications, run_replication, EstimatorSpec, Policy, RunSummary, Schedule, SimConfig, TheoryTargets,
};
use log::{info, warn};
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::config::SweepConfig;
use crate::report::{CellOutput, PlotData, ReportRow, ReportWriter};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// Position in sweep order; also selects the bootstrap stream.
    pub index: usize,
    pub n: usize,
    pub alpha: f64,
    pub policy: Policy,
}

/// Cells in sweep order: policy, then alpha, then N.
pub fn cells(cfg: &SweepConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &policy in &cfg.policies {
        for &alpha in &cfg.alpha_list {
            for &n in &cfg.n_list {
                out.push(Cell {
                    index: out.len(),
                    n,
                    alpha,
                    policy,
                });
            }
        }
    }
    out
}

pub fn worker_pool(workers: usize) -> anyhow::Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("cannot start the worker pool")
}

/// Worker count when neither the flag nor the config sets one.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Resolved simulation parameters of one cell.
pub fn cell_plan(cfg: &SweepConfig, cell: &Cell) -> jsq_core::Result<(SimConfig, EstimatorSpec)> {
    let mut sim = cfg.cell_config(cell.n, cell.alpha, cell.policy);
    let schedule = Schedule::for_config(&sim, cfg.horizon_relaxations)?;
    sim.horizon = cfg.horizon.unwrap_or(schedule.horizon);
    sim.warmup = cfg.warmup.unwrap_or(schedule.warmup);
    sim.validate()?;
    let mut spec = EstimatorSpec::for_config(&sim)?;
    spec.sample_every = cfg.sample_every.unwrap_or(schedule.sample_every);
    spec.n_batches = cfg.n_batches;
    spec.retain_scaled_totals = cfg.retain_samples;
    spec.retain_cap = cfg.retain_cap;
    Ok((sim, spec))
}

/// All replications of `sim`, in replication order.
pub fn run_parallel(sim: &SimConfig, spec: &EstimatorSpec, pool: &ThreadPool) -> jsq_core::Result<Vec<RunSummary>> {
    pool.install(|| {
        (0..sim.replications as u64)
            .into_par_iter()
            .map(|rep| run_replication(sim, spec, rep))
            .collect()
    })
}

pub fn run_cell(cfg: &SweepConfig, cell: &Cell, pool: &ThreadPool) -> CellOutput {
    let start = Instant::now();
    let sim = cfg.cell_config(cell.n, cell.alpha, cell.policy);
    let arrivals = sim.arrival_dist().expect("arrival laws are checked by config validation");
    let service = sim.service_dist().expect("service law is checked by config validation");
    let achieved = arrivals.variance() / cell.n as f64;
    let targets = TheoryTargets::new(
        cell.n,
        cell.alpha,
        achieved,
        cfg.base.sigma_s_sq,
        service.max_value(),
        cfg.stein_c,
        &[1],
    );
    let mut row = ReportRow {
        n: cell.n,
        alpha: cell.alpha,
        policy: cell.policy,
        lambda: sim.lambda(),
        drift_target: targets.drift,
        u_rate_est: None,
        u_rate_se: None,
        mean_total_q_est: None,
        mean_total_q_se: None,
        scaled_mean_est: None,
        scaled_mean_se: None,
        limit_mean: targets.limit_mean,
        achieved_sigma_a_sq: achieved,
        w1_est: None,
        w1_se: None,
        stein_rhs: targets.stein_rhs,
        perp_norm_est: None,
        perp_norm_se: None,
        horizon: 0,
        warmup: 0,
        sample_every: 0,
        replications: cfg.replications_per_cell,
        n_samples: None,
        runtime_seconds: 0.0,
        seed: cfg.seed(),
        status: "ok".into(),
    };

    let plot = match fill_estimates(cfg, cell, pool, &mut row) {
        Ok(plot) => plot,
        Err(e) => {
            warn!("cell N = {} alpha = {} {} failed: {e:#}", cell.n, cell.alpha, cell.policy);
            row.status = format!("error: {e:#}");
            None
        }
    };
    row.runtime_seconds = start.elapsed().as_secs_f64();
    CellOutput { row, plot }
}

fn fill_estimates(
    cfg: &SweepConfig,
    cell: &Cell,
    pool: &ThreadPool,
    row: &mut ReportRow,
) -> anyhow::Result<Option<PlotData>> {
    let (sim, spec) = cell_plan(cfg, cell)?;
    row.horizon = sim.horizon;
    row.warmup = sim.warmup;
    row.sample_every = spec.sample_every;

    let parts = run_parallel(&sim, &spec, pool)?;
    let merged = merge_replications(&parts, cfg.retain_cap)?;
    row.u_rate_est = Some(merged.mean_total_u_per_slot.est);
    row.u_rate_se = Some(merged.mean_total_u_per_slot.stderr);
    row.mean_total_q_est = Some(merged.mean_total_q.est);
    row.mean_total_q_se = Some(merged.mean_total_q.stderr);
    row.scaled_mean_est = Some(merged.scaled_mean.est);
    row.scaled_mean_se = Some(merged.scaled_mean.stderr);
    if let Some(perp) = merged.perp_moments.get(&1) {
        row.perp_norm_est = Some(perp.est);
        row.perp_norm_se = Some(perp.stderr);
    }
    row.n_samples = Some(merged.n_samples);

    let samples = &merged.scaled_samples;
    if !cfg.retain_samples || samples.is_empty() {
        return Ok(None);
    }
    match wasserstein1_unit_mean(samples) {
        Ok(w1) => {
            let groups: Vec<&[f64]> = parts.iter().map(|p| p.scaled_samples.as_slice()).collect();
            let groups = thin_groups(&groups, cfg.retain_cap);
            let mut rng = auxiliary_rng(cfg.seed(), cell.index as u64);
            row.w1_est = Some(w1);
            row.w1_se = Some(bootstrap_w1_stderr(&groups, None, cfg.bootstrap_resamples, &mut rng)?);
        }
        Err(e) => warn!("no W1 for N = {} alpha = {}: {e}", cell.n, cell.alpha),
    }
    Ok(Some(PlotData {
        qq: exp_qq_data(samples),
        mgf: empirical_mgf(samples, &default_theta_grid())?,
    }))
}

/// Runs the sweep, writing each cell to `writer` as soon as it completes.
/// `on_cell` sees every finished cell and may stop the sweep early.
pub fn run_sweep_with(
    cfg: &SweepConfig,
    workers: usize,
    writer: &mut ReportWriter,
    mut on_cell: impl FnMut(&CellOutput) -> ControlFlow<()>,
) -> anyhow::Result<Vec<CellOutput>> {
    let pool = worker_pool(workers)?;
    let all = cells(cfg);
    let mut out = Vec::with_capacity(all.len());
    for cell in &all {
        info!(
            "cell {}/{}: N = {}, alpha = {}, {} ({} replications)",
            cell.index + 1,
            all.len(),
            cell.n,
            cell.alpha,
            cell.policy,
            cfg.replications_per_cell
        );
        let result = run_cell(cfg, cell, &pool);
        writer
            .push(&result)
            .with_context(|| format!("writing results for cell {}", cell.index + 1))?;
        info!(
            "cell {}/{} done in {:.1}s: {}",
            cell.index + 1,
            all.len(),
            result.row.runtime_seconds,
            result.row.status
        );
        let flow = on_cell(&result);
        out.push(result);
        if flow.is_break() {
            break;
        }
    }
    Ok(out)
}

/// Runs the whole sweep into `cfg.output_dir`.
pub fn run_sweep(cfg: &SweepConfig, workers: usize) -> anyhow::Result<Vec<CellOutput>> {
    let mut writer = ReportWriter::create(&cfg.output_dir, &cfg.formats)
        .with_context(|| format!("output directory {} is not writable", cfg.output_dir.display()))?;
    run_sweep_with(cfg, workers, &mut writer, |_| ControlFlow::Continue(()))
}
