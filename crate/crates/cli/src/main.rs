use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use jsq_cli::config::{load_config, SweepConfig};
use jsq_cli::sweep::{default_workers, run_sweep};
use jsq_cli::verify::{run_verify, VerifyPlan};
use jsq_core::estimate::oracle_stationary;
use jsq_core::stats::stein_bound_rhs;
use jsq_core::{make_arrival_dist, make_service_dist, Atom, Load};

/// Join-the-shortest-queue heavy-traffic simulator and verification suite.
#[derive(Parser)]
#[command(name = "jsq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Sweep configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for replications.
    #[arg(long, value_name = "K", env = "JSQ_WORKERS")]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write results.csv, results.json and plot data.
    Run(Common),
    /// Run the acceptance suite; exit 0 iff every criterion passes.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Reduced sweep with looser statistical tolerances.
        #[arg(long)]
        quick: bool,
    },
    /// Exact stationary quantities of a small JSQ chain.
    Oracle(OracleArgs),
    /// Evaluate the Stein bound over a geometric grid of N.
    Bound(BoundArgs),
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Heavy-traffic exponent of the arrival rate.
    #[arg(long, conflicts_with_all = ["lambda", "arrivals"])]
    alpha: Option<f64>,
    /// Explicit arrival rate.
    #[arg(long, conflicts_with = "arrivals")]
    lambda: Option<f64>,
    /// Explicit arrival law as `value:prob,...`.
    #[arg(long, value_name = "ATOMS")]
    arrivals: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    sigma_a_sq: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma_s_sq: f64,
    /// Queue length at which arrivals are clipped.
    #[arg(long, default_value_t = 40)]
    q_cap: u64,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, value_delimiter = ',', default_value = "2.5")]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 100.0)]
    n_min: f64,
    #[arg(long, default_value_t = 1e6)]
    n_max: f64,
    #[arg(long, default_value_t = 1)]
    per_decade: u32,
    /// `sigma_a^2 + sigma_s^2`.
    #[arg(long, default_value_t = 1.0)]
    sigma_sum_sq: f64,
    #[arg(long, default_value_t = 2.0)]
    s_max: f64,
    /// The unknown moment constant.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(common) => cmd_run(&common).map(|()| ExitCode::SUCCESS),
        Command::Verify { common, quick } => cmd_verify(&common, quick),
        Command::Oracle(args) => cmd_oracle(&args).map(|()| ExitCode::SUCCESS),
        Command::Bound(args) => cmd_bound(&args).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}

fn sweep_config(common: &Common) -> anyhow::Result<Option<SweepConfig>> {
    let Some(path) = &common.config else {
        return Ok(None);
    };
    let mut cfg = load_config(path).with_context(|| format!("loading {}", path.display()))?;
    apply_overrides(&mut cfg, common);
    Ok(Some(cfg))
}

fn apply_overrides(cfg: &mut SweepConfig, common: &Common) {
    if let Some(seed) = common.seed {
        cfg.base.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
}

fn workers(common: &Common, cfg: &SweepConfig) -> usize {
    common.workers.or(cfg.workers).unwrap_or_else(default_workers)
}

fn cmd_run(common: &Common) -> anyhow::Result<()> {
    let cfg = match sweep_config(common)? {
        Some(cfg) => cfg,
        None => {
            let mut cfg = SweepConfig::default();
            apply_overrides(&mut cfg, common);
            cfg
        }
    };
    let outputs = run_sweep(&cfg, workers(common, &cfg))?;
    println!(
        "{:>4} {:>5} {:>8} {:>20} {:>20} {:>8} {:>16} {:>10}  status",
        "N", "alpha", "policy", "u rate (target)", "scaled mean (limit)", "", "W1", "stein rhs"
    );
    for o in &outputs {
        let r = &o.row;
        let pm = |e: Option<f64>, s: Option<f64>| match (e, s) {
            (Some(e), Some(s)) => format!("{e:.4}±{s:.4}"),
            _ => "-".into(),
        };
        println!(
            "{:>4} {:>5} {:>8} {:>20} {:>20} {:>8} {:>16} {:>10.4}  {}",
            r.n,
            r.alpha,
            r.policy.to_string(),
            format!("{} ({:.4})", pm(r.u_rate_est, r.u_rate_se), r.drift_target),
            pm(r.scaled_mean_est, r.scaled_mean_se),
            format!("({:.4})", r.limit_mean),
            pm(r.w1_est, r.w1_se),
            r.stein_rhs,
            r.status
        );
    }
    println!("results written to {}", cfg.output_dir.display());
    if outputs.iter().any(|o| !o.row.is_ok()) {
        bail!("some cells failed; see the status column");
    }
    Ok(())
}

fn cmd_verify(common: &Common, quick: bool) -> anyhow::Result<ExitCode> {
    let seed = common.seed.unwrap_or(1);
    let mut plan = match sweep_config(common)? {
        Some(cfg) => VerifyPlan::from_sweep(cfg, quick),
        None if quick => VerifyPlan::quick(seed),
        None => VerifyPlan::full(seed),
    };
    if let Some(out) = &common.out {
        plan.sweep.output_dir = out.clone();
    }
    let workers = workers(common, &plan.sweep);
    println!(
        "verify: N = {:?}, alpha = {:?}, {} replications per cell, seed {}, {} workers",
        plan.sweep.n_list,
        plan.sweep.alpha_list,
        plan.sweep.replications_per_cell,
        plan.sweep.seed(),
        workers
    );
    let outcome = run_verify(&plan, workers, |c| log::info!("{c}"))?;
    for c in &outcome.criteria {
        println!("{c}");
    }
    let failed = outcome.criteria.iter().filter(|c| !c.passed).count();
    println!(
        "{} of {} criteria passed; results in {}",
        outcome.criteria.len() - failed,
        outcome.criteria.len(),
        plan.sweep.output_dir.display()
    );
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn parse_atoms(text: &str) -> anyhow::Result<Vec<Atom>> {
    text.split(',')
        .map(|pair| {
            let (v, p) = pair
                .split_once(':')
                .with_context(|| format!("atom `{pair}` is not value:prob"))?;
            Ok(Atom::new(v.trim().parse()?, p.trim().parse()?))
        })
        .collect()
}

fn cmd_oracle(args: &OracleArgs) -> anyhow::Result<()> {
    let load = match (&args.arrivals, args.lambda, args.alpha) {
        (Some(atoms), _, _) => Load::Atoms(parse_atoms(atoms)?),
        (None, Some(l), _) => Load::Lambda(l),
        (None, None, Some(a)) => Load::Alpha(a),
        (None, None, None) => bail!("give one of --alpha, --lambda or --arrivals"),
    };
    let arrivals = make_arrival_dist(args.n, &load, args.sigma_a_sq)?;
    let service = make_service_dist(args.sigma_s_sq)?;
    let r = oracle_stationary(&arrivals, &service, args.n, args.q_cap)?;
    println!("N = {}, lambda = {}, q_cap = {}", args.n, arrivals.mean(), args.q_cap);
    println!("E[sum q] = {:.12}", r.mean_total_q);
    println!("E[sum u] = {:.12} (N - lambda = {:.12})", r.mean_total_u, args.n as f64 - arrivals.mean());
    println!("boundary mass = {:e}, iterations = {}", r.boundary_mass, r.iterations);
    println!("total,probability");
    for (j, p) in r.total_q_dist.iter().enumerate().filter(|(_, p)| **p >= 1e-12) {
        println!("{j},{p:e}");
    }
    Ok(())
}

fn cmd_bound(args: &BoundArgs) -> anyhow::Result<()> {
    if !(args.n_min >= 1.0 && args.n_max >= args.n_min && args.per_decade >= 1) {
        bail!("need 1 <= n_min <= n_max and per_decade >= 1");
    }
    let steps = ((args.n_max / args.n_min).log10() * args.per_decade as f64).round() as i32;
    println!("n,alpha,stein_rhs,local_slope,power_slope");
    for &alpha in &args.alpha {
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=steps {
            let n = (args.n_min * 10f64.powf(k as f64 / args.per_decade as f64)).round();
            let rhs = stein_bound_rhs(n, alpha, args.sigma_sum_sq, args.s_max, args.c);
            let slope = prev.map_or(String::new(), |(pn, pr)| format!("{}", (rhs / pr).ln() / (n / pn).ln()));
            println!("{n},{alpha},{rhs},{slope},{}", 2.0 - alpha);
            prev = Some((n, rhs));
        }
    }
    Ok(())
}
