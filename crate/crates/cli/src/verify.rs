//! The acceptance suite behind `jsq verify`.
//!
//! Ten numbered criteria, each reported with its measured value and target.
//! Statistical tolerances come from [`Tolerances`]; the quick plan loosens
//! only those, never the structural checks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{bail, Context};
use jsq_core::estimate::oracle_stationary;
use jsq_core::model::check_step;
use jsq_core::rng::replication_rng;
use jsq_core::stats::{loglog_slope, stein_bound_rhs};
use jsq_core::{merge_replications, Atom, EstimatorSpec, Load, Policy, SimConfig, Simulator};

use crate::config::SweepConfig;
use crate::report::{CellOutput, ReportRow};
use crate::sweep::{self, Cell};

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    /// Multiplier on standard errors for identities that hold exactly.
    pub sigma: f64,
    /// Allowed relative error of the largest-N scaled mean.
    pub scaled_mean_rel: f64,
    /// Upper bound on W1 at the largest cell.
    pub w1_max: f64,
    /// Absolute floor on the MGF tolerance.
    pub mgf_floor: f64,
    /// Accepted band for the `E ||q_perp||` growth exponent.
    pub perp_slope: (f64, f64),
    /// Allowed distance of the bound's terminal slope from `2 - alpha`.
    pub bound_slope: f64,
}

impl Tolerances {
    pub fn full() -> Self {
        Self {
            sigma: 3.0,
            scaled_mean_rel: 0.2,
            w1_max: 0.15,
            mgf_floor: 0.05,
            perp_slope: (0.5, 1.3),
            bound_slope: 0.2,
        }
    }

    pub fn quick() -> Self {
        Self {
            sigma: 4.0,
            scaled_mean_rel: 0.5,
            w1_max: 0.3,
            mgf_floor: 0.2,
            ..Self::full()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyPlan {
    /// The main sweep; JSQ cells of it feed criteria 1, 3, 4, 5, 6 and 10.
    pub sweep: SweepConfig,
    pub tol: Tolerances,
    /// Length of the per-slot invariant run.
    pub debug_slots: u64,
    pub oracle_horizon: u64,
    pub oracle_replications: usize,
}

/// Replications per cell in the full plan. Standard errors come from the
/// spread of replication means, so their accuracy grows with this count.
pub const FULL_REPLICATIONS: usize = 32;

impl VerifyPlan {
    /// Desk-scale plan: `N in {4, 8, 16}`, `alpha in {2.2, 2.5}`, JSQ.
    pub fn full(seed: u64) -> Self {
        let mut sweep = SweepConfig::default();
        sweep.base.seed = seed;
        sweep.replications_per_cell = FULL_REPLICATIONS;
        sweep.output_dir = "verify_out".into();
        Self::from_sweep(sweep, false)
    }

    /// Reduced plan: `N in {4, 8}` and 8 replications.
    pub fn quick(seed: u64) -> Self {
        let mut sweep = SweepConfig {
            n_list: vec![4, 8],
            replications_per_cell: 8,
            ..SweepConfig::default()
        };
        sweep.base.seed = seed;
        sweep.output_dir = "verify_out".into();
        Self::from_sweep(sweep, true)
    }

    /// Plan around a user sweep; only its JSQ cells are used.
    pub fn from_sweep(mut sweep: SweepConfig, quick: bool) -> Self {
        sweep.policies = vec![Policy::Jsq];
        sweep.base.replications = sweep.replications_per_cell;
        Self {
            sweep,
            tol: if quick { Tolerances::quick() } else { Tolerances::full() },
            debug_slots: 100_000,
            oracle_horizon: if quick { 100_000 } else { 400_000 },
            oracle_replications: if quick { 8 } else { 16 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub measured: String,
    pub target: String,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{:>2}] {}: measured {}; target {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.measured,
            self.target
        )
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub criteria: Vec<Criterion>,
    pub outputs: Vec<CellOutput>,
}

impl VerifyOutcome {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

/// Runs every criterion. `on_result` sees each criterion as it is decided.
/// Errors are infrastructure failures, not failed criteria.
pub fn run_verify(
    plan: &VerifyPlan,
    workers: usize,
    mut on_result: impl FnMut(&Criterion),
) -> anyhow::Result<VerifyOutcome> {
    let mut criteria = Vec::new();
    let mut record = |c: Criterion| {
        on_result(&c);
        criteria.push(c);
    };

    record(bound_shape(&plan.tol));
    record(step_invariants(plan.debug_slots, plan.sweep.seed())?);
    for c in oracle_equivalence(plan, workers)? {
        record(c);
    }

    let outputs = sweep::run_sweep(&plan.sweep, workers)?;
    if let Some(bad) = outputs.iter().find(|o| !o.row.is_ok()) {
        bail!("sweep cell N = {} alpha = {} failed: {}", bad.row.n, bad.row.alpha, bad.row.status);
    }
    let rows: Vec<&ReportRow> = outputs.iter().map(|o| &o.row).collect();
    record(unused_service_criterion(&rows, plan.tol.sigma));
    record(scaled_mean_trend(&rows, plan.tol.scaled_mean_rel));
    let largest = largest_cell(&outputs);
    record(w1_decay(&rows, largest, plan.tol.w1_max));
    record(mgf_match(largest, plan.tol.sigma, plan.tol.mgf_floor));
    record(perp_scaling(&rows, plan.tol.perp_slope)?);
    record(jsq_dominance(plan, workers)?);
    record(determinism(plan, workers)?);

    criteria.sort_by_key(|c| c.id);
    Ok(VerifyOutcome { criteria, outputs })
}

fn z_score(est: f64, target: f64, se: f64) -> f64 {
    if se > 0.0 {
        (est - target) / se
    } else if est == target {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Rows grouped by alpha, each group sorted by N.
fn by_alpha<'a>(rows: &[&'a ReportRow]) -> BTreeMap<String, Vec<&'a ReportRow>> {
    let mut groups: BTreeMap<String, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.alpha.to_string()).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.n);
    }
    groups
}

/// The cell with the longest relaxation time: largest N, then largest alpha.
fn largest_cell(outputs: &[CellOutput]) -> &CellOutput {
    outputs
        .iter()
        .max_by(|a, b| (a.row.n, a.row.alpha).partial_cmp(&(b.row.n, b.row.alpha)).expect("finite alpha"))
        .expect("sweep has cells")
}

fn combined(a: Option<f64>, b: Option<f64>) -> f64 {
    (a.unwrap_or(0.0).powi(2) + b.unwrap_or(0.0).powi(2)).sqrt()
}

fn unused_service_criterion(rows: &[&ReportRow], k: f64) -> Criterion {
    let zs: Vec<(f64, &ReportRow)> = rows
        .iter()
        .map(|r| {
            let z = z_score(r.u_rate_est.unwrap_or(f64::NAN), r.drift_target, r.u_rate_se.unwrap_or(0.0));
            (z, *r)
        })
        .collect();
    let (worst, at) = zs
        .iter()
        .max_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
        .map(|(z, r)| (*z, *r))
        .expect("rows");
    Criterion {
        id: 1,
        title: "unused-service rate equals N^(1-alpha)",
        passed: zs.iter().all(|(z, _)| z.abs() <= k),
        measured: format!(
            "max |z| = {:.2} over {} cells (N = {}, alpha = {}: {:.5} vs {:.5})",
            worst.abs(),
            zs.len(),
            at.n,
            at.alpha,
            at.u_rate_est.unwrap_or(f64::NAN),
            at.drift_target
        ),
        target: format!("|z| <= {k} in every cell"),
    }
}

fn scaled_mean_trend(rows: &[&ReportRow], rel_tol: f64) -> Criterion {
    let mut passed = true;
    let mut parts = Vec::new();
    for (alpha, group) in by_alpha(rows) {
        let err = |r: &ReportRow| (r.scaled_mean_est.unwrap_or(f64::NAN) - r.limit_mean).abs();
        let monotone = group
            .windows(2)
            .all(|w| err(w[1]) <= err(w[0]) + combined(w[0].scaled_mean_se, w[1].scaled_mean_se));
        let last = group.last().expect("nonempty group");
        let rel = err(last) / last.limit_mean;
        passed &= monotone && rel <= rel_tol;
        let errs: Vec<String> = group.iter().map(|r| format!("{:.3}", err(r))).collect();
        parts.push(format!(
            "alpha = {alpha}: |error| by N [{}]{}, N = {} relative error {:.1}%",
            errs.join(", "),
            if monotone { "" } else { " (increases)" },
            last.n,
            100.0 * rel
        ));
    }
    Criterion {
        id: 3,
        title: "scaled mean approaches (sigma_a^2 + sigma_s^2)/2",
        passed,
        measured: parts.join("; "),
        target: format!(
            "largest-N relative error <= {:.0}% and |error| non-increasing in N within 1 se",
            100.0 * rel_tol
        ),
    }
}

fn w1_decay(rows: &[&ReportRow], largest: &CellOutput, w1_max: f64) -> Criterion {
    let mut passed = true;
    let mut parts = Vec::new();
    for (alpha, group) in by_alpha(rows) {
        let w = |r: &ReportRow| r.w1_est.unwrap_or(f64::NAN);
        let decreasing = group
            .windows(2)
            .all(|p| w(p[1]) - w(p[0]) < combined(p[0].w1_se, p[1].w1_se));
        passed &= decreasing;
        let ws: Vec<String> = group
            .iter()
            .map(|r| format!("{:.4}±{:.4}", w(r), r.w1_se.unwrap_or(f64::NAN)))
            .collect();
        parts.push(format!(
            "alpha = {alpha}: W1 by N [{}]{}",
            ws.join(", "),
            if decreasing { "" } else { " (not decreasing)" }
        ));
    }
    let top = largest.row.w1_est.unwrap_or(f64::NAN);
    passed &= top < w1_max;
    parts.push(format!("N = {}, alpha = {}: {top:.4}", largest.row.n, largest.row.alpha));
    Criterion {
        id: 4,
        title: "W1 to Exp(1) decays",
        passed,
        measured: parts.join("; "),
        target: format!("decreasing in N within 1 bootstrap se; < {w1_max} at the largest cell"),
    }
}

fn mgf_match(largest: &CellOutput, k: f64, floor: f64) -> Criterion {
    let points = largest.plot.as_ref().map(|p| p.mgf.as_slice()).unwrap_or_default();
    let live: Vec<_> = points.iter().filter(|p| !p.saturated).collect();
    let excess = |p: &&jsq_core::MgfPoint| (p.est - p.target()).abs() - (k * p.stderr).max(floor);
    let worst = live.iter().max_by(|a, b| excess(a).total_cmp(&excess(b)));
    let measured = match worst {
        Some(p) => format!(
            "N = {}, alpha = {}: {} points, worst theta = {}: {:.4} ± {:.4} vs {:.4}",
            largest.row.n,
            largest.row.alpha,
            live.len(),
            p.theta,
            p.est,
            p.stderr,
            p.target()
        ),
        None => "no unsaturated MGF points".into(),
    };
    Criterion {
        id: 5,
        title: "empirical MGF matches 1/(1-theta)",
        passed: !live.is_empty() && live.iter().all(|p| excess(p) <= 0.0),
        measured,
        target: format!("|est - target| <= max({k} se, {floor}) at every unsaturated point"),
    }
}

fn perp_scaling(rows: &[&ReportRow], band: (f64, f64)) -> anyhow::Result<Criterion> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.n as f64, r.perp_norm_est.unwrap_or(f64::NAN)))
        .collect();
    let distinct_n = rows.iter().map(|r| r.n).collect::<std::collections::BTreeSet<_>>().len();
    if distinct_n < 2 || points.len() < 3 {
        return Ok(Criterion {
            id: 6,
            title: "E||q_perp|| grows at most linearly in N",
            passed: false,
            measured: "too few cells for a slope".into(),
            target: format!("slope in [{}, {}]", band.0, band.1),
        });
    }
    let fit = loglog_slope(&points).context("fitting E||q_perp|| against N")?;
    let values: Vec<String> = points.iter().map(|(n, v)| format!("{n}: {v:.2}")).collect();
    Ok(Criterion {
        id: 6,
        title: "E||q_perp|| grows at most linearly in N",
        passed: fit.slope >= band.0 && fit.slope <= band.1,
        measured: format!("slope {:.3} (r^2 {:.3}) from [{}]", fit.slope, fit.r_squared, values.join(", ")),
        target: format!("slope in [{}, {}]", band.0, band.1),
    })
}

fn bound_shape(tol: &Tolerances) -> Criterion {
    let alpha = 2.5;
    let grid: Vec<f64> = (2..=6).map(|k| 10f64.powi(k)).collect();
    let values: Vec<f64> = grid.iter().map(|&n| stein_bound_rhs(n, alpha, 1.0, 2.0, 1.0)).collect();
    let tail = &values[values.len() / 2..];
    let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    let m = values.len();
    let slope = (values[m - 1] / values[m - 2]).ln() / (grid[m - 1] / grid[m - 2]).ln();
    let expected = 2.0 - alpha;
    let shown: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    Criterion {
        id: 7,
        title: "Stein bound decays like N^(2-alpha)",
        passed: decreasing && (slope - expected).abs() <= tol.bound_slope,
        measured: format!(
            "alpha = {alpha}, N = 1e2..1e6: [{}], terminal slope {slope:.3}{}",
            shown.join(", "),
            if decreasing { "" } else { ", tail not decreasing" }
        ),
        target: format!("decreasing tail, slope within {} of {expected}", tol.bound_slope),
    }
}

fn step_invariants(slots: u64, seed: u64) -> anyhow::Result<Criterion> {
    let (n, alpha) = (8, 2.2);
    let arrivals = jsq_core::make_arrival_dist(n, &Load::Alpha(alpha), 0.5)?;
    let service = jsq_core::make_service_dist(0.5)?;
    let mut sim = Simulator::new(n, arrivals.clone(), service.clone(), Policy::Jsq)?;
    let mut rng = replication_rng(seed, 0);
    let mut violations = 0usize;
    let mut first = None;
    let mut before = vec![0u64; n];
    for slot in 0..slots {
        before.copy_from_slice(&sim.state().q);
        let rec = sim.step(&mut rng);
        let bad = check_step(&before, rec, &arrivals, &service, Policy::Jsq);
        if !bad.is_empty() && first.is_none() {
            first = Some(format!(" (first at slot {slot}: {})", bad[0]));
        }
        violations += bad.len();
    }
    Ok(Criterion {
        id: 8,
        title: "per-slot identities hold",
        passed: violations == 0,
        measured: format!(
            "{violations} violations in {slots} slots at N = {n}, alpha = {alpha}{}",
            first.unwrap_or_default()
        ),
        target: "0 violations".into(),
    })
}

fn oracle_equivalence(plan: &VerifyPlan, workers: usize) -> anyhow::Result<Vec<Criterion>> {
    let pool = sweep::worker_pool(workers)?;
    let fixtures = [
        (1usize, vec![Atom::new(0, 0.6), Atom::new(1, 0.4)], 0.0, 50u64),
        (2usize, vec![Atom::new(0, 0.3), Atom::new(1, 0.7)], 0.5, 40u64),
    ];
    let k = plan.tol.sigma;
    let mut passed = true;
    let mut parts = Vec::new();
    for (n, atoms, sigma_s_sq, q_cap) in fixtures {
        let cfg = SimConfig {
            n_servers: n,
            load: Load::Atoms(atoms),
            sigma_a_sq: 0.0,
            sigma_s_sq,
            policy: Policy::Jsq,
            horizon: plan.oracle_horizon,
            warmup: 1_000,
            seed: plan.sweep.seed(),
            replications: plan.oracle_replications,
        };
        let exact = oracle_stationary(&cfg.arrival_dist()?, &cfg.service_dist()?, n, q_cap)?;
        let spec = EstimatorSpec {
            sample_every: 1,
            ..EstimatorSpec::for_config(&cfg)?
        };
        let merged = merge_replications(&sweep::run_parallel(&cfg, &spec, &pool)?, spec.retain_cap)?;
        let close = |est: f64, se: f64, exact: f64| (est - exact).abs() <= k * se + 1e-9;
        let q = merged.mean_total_q;
        let u = merged.mean_total_u_per_slot;
        passed &= close(q.est, q.stderr, exact.mean_total_q) && close(u.est, u.stderr, exact.mean_total_u);
        parts.push(format!(
            "N = {n}: E[sum q] {:.4} ± {:.4} vs {:.4}, E[sum u] {:.4} ± {:.4} vs {:.4}",
            q.est, q.stderr, exact.mean_total_q, u.est, u.stderr, exact.mean_total_u
        ));
    }
    Ok(vec![Criterion {
        id: 2,
        title: "simulator agrees with the exact small chains",
        passed,
        measured: parts.join("; "),
        target: format!("within {k} se of power iteration"),
    }])
}

fn jsq_dominance(plan: &VerifyPlan, workers: usize) -> anyhow::Result<Criterion> {
    let pool = sweep::worker_pool(workers)?;
    let (n, alpha) = (8, 2.2);
    let mean = |policy| -> anyhow::Result<(f64, f64)> {
        let cell = Cell {
            index: 0,
            n,
            alpha,
            policy,
        };
        let mut cfg = plan.sweep.clone();
        cfg.retain_samples = false;
        let out = sweep::run_cell(&cfg, &cell, &pool);
        match (out.row.mean_total_q_est, out.row.mean_total_q_se) {
            (Some(est), Some(se)) => Ok((est, se)),
            _ => bail!("dominance cell {policy} failed: {}", out.row.status),
        }
    };
    let (jsq, jsq_se) = mean(Policy::Jsq)?;
    let (random, random_se) = mean(Policy::Random)?;
    let se = (jsq_se * jsq_se + random_se * random_se).sqrt();
    let k = plan.tol.sigma;
    Ok(Criterion {
        id: 9,
        title: "JSQ beats random routing",
        passed: random - jsq > k * se,
        measured: format!(
            "N = {n}, alpha = {alpha}: E[sum q] JSQ {jsq:.2} ± {jsq_se:.2}, random {random:.2} ± {random_se:.2}"
        ),
        target: format!("random - JSQ > {k} pooled se"),
    })
}

fn determinism(plan: &VerifyPlan, workers: usize) -> anyhow::Result<Criterion> {
    let first = plan.sweep.output_dir.join("results.csv");
    let mut again = plan.sweep.clone();
    again.output_dir = plan.sweep.output_dir.join("rerun");
    let other_workers = if workers > 1 { 1 } else { 2 };
    sweep::run_sweep(&again, other_workers)?;
    let second = again.output_dir.join("results.csv");
    let same = read(&first)? == read(&second)?;
    Ok(Criterion {
        id: 10,
        title: "results.csv is reproducible",
        passed: same,
        measured: format!(
            "rerun with {other_workers} workers (first used {workers}): {}",
            if same { "byte-identical" } else { "differs" }
        ),
        target: "byte-identical".into(),
    })
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}
