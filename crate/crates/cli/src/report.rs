//! Result rows and their on-disk forms.
//!
//! `results.csv` is the reproducibility artifact: it holds no wall-clock
//! fields, so identical `(config, seed)` give identical bytes. Timing lives
//! only in `results.json`.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use jsq_core::{MgfPoint, Policy};
use serde::{Deserialize, Serialize};

use crate::config::Format;

/// Column order of `results.csv`.
pub const CSV_COLUMNS: &[&str] = &[
    "n",
    "alpha",
    "policy",
    "lambda",
    "drift_target",
    "u_rate_est",
    "u_rate_se",
    "mean_total_q_est",
    "mean_total_q_se",
    "scaled_mean_est",
    "scaled_mean_se",
    "limit_mean",
    "achieved_sigma_a_sq",
    "w1_est",
    "w1_se",
    "stein_rhs",
    "perp_norm_est",
    "perp_norm_se",
    "horizon",
    "warmup",
    "sample_every",
    "replications",
    "n_samples",
    "seed",
    "status",
];

/// One sweep cell. Estimates are `None` when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    pub alpha: f64,
    pub policy: Policy,
    pub lambda: f64,
    /// `N^(1 - alpha)`, the exact stationary rate of unused service.
    pub drift_target: f64,
    pub u_rate_est: Option<f64>,
    pub u_rate_se: Option<f64>,
    pub mean_total_q_est: Option<f64>,
    pub mean_total_q_se: Option<f64>,
    pub scaled_mean_est: Option<f64>,
    pub scaled_mean_se: Option<f64>,
    /// `(sigma_a_hat^2 + sigma_s^2) / 2` with the achieved arrival variance.
    pub limit_mean: f64,
    pub achieved_sigma_a_sq: f64,
    /// W1 between the unit-mean scaled samples and `Exp(1)`.
    pub w1_est: Option<f64>,
    /// Replication-bootstrap standard error of `w1_est`.
    pub w1_se: Option<f64>,
    pub stein_rhs: f64,
    /// `E ||q_perp||`.
    pub perp_norm_est: Option<f64>,
    pub perp_norm_se: Option<f64>,
    pub horizon: u64,
    pub warmup: u64,
    pub sample_every: u64,
    pub replications: usize,
    pub n_samples: Option<u64>,
    pub runtime_seconds: f64,
    pub seed: u64,
    /// `ok`, or the error that stopped the cell.
    pub status: String,
}

impl ReportRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Fields in [`CSV_COLUMNS`] order.
    pub fn csv_record(&self) -> Vec<String> {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(T::to_string).unwrap_or_default()
        }
        vec![
            self.n.to_string(),
            self.alpha.to_string(),
            self.policy.to_string(),
            self.lambda.to_string(),
            self.drift_target.to_string(),
            opt(&self.u_rate_est),
            opt(&self.u_rate_se),
            opt(&self.mean_total_q_est),
            opt(&self.mean_total_q_se),
            opt(&self.scaled_mean_est),
            opt(&self.scaled_mean_se),
            self.limit_mean.to_string(),
            self.achieved_sigma_a_sq.to_string(),
            opt(&self.w1_est),
            opt(&self.w1_se),
            self.stein_rhs.to_string(),
            opt(&self.perp_norm_est),
            opt(&self.perp_norm_se),
            self.horizon.to_string(),
            self.warmup.to_string(),
            self.sample_every.to_string(),
            self.replications.to_string(),
            opt(&self.n_samples),
            self.seed.to_string(),
            self.status.clone(),
        ]
    }
}

/// Retained-sample diagnostics for one cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotData {
    /// `(Exp quantile at the sample mean, order statistic)`.
    pub qq: Vec<(f64, f64)>,
    pub mgf: Vec<MgfPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutput {
    pub row: ReportRow,
    pub plot: Option<PlotData>,
}

/// `<prefix>_<N>_<alpha>.csv`, with the policy appended unless it is JSQ.
pub fn plot_file_name(prefix: &str, n: usize, alpha: f64, policy: Policy) -> String {
    let suffix = match policy {
        Policy::Jsq => String::new(),
        Policy::JsqD(d) => format!("_jsqd{d}"),
        Policy::Random => "_random".into(),
    };
    format!("{prefix}_{n}_{alpha}{suffix}.csv")
}

/// Creates `dir` if needed and proves a file can be written in it.
pub fn check_writable(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-check");
    File::create(&probe)?.write_all(b"ok")?;
    fs::remove_file(probe)
}

/// Writes outputs as cells complete. Every push leaves complete, parseable
/// files on disk.
pub struct ReportWriter {
    dir: PathBuf,
    formats: BTreeSet<Format>,
    csv: Option<csv::Writer<File>>,
    rows: Vec<ReportRow>,
}

impl ReportWriter {
    pub fn create(dir: &Path, formats: &BTreeSet<Format>) -> io::Result<Self> {
        check_writable(dir)?;
        let csv = if formats.contains(&Format::Csv) {
            let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
            w.write_record(CSV_COLUMNS)?;
            w.flush()?;
            Some(w)
        } else {
            None
        };
        let writer = Self {
            dir: dir.to_owned(),
            formats: formats.clone(),
            csv,
            rows: Vec::new(),
        };
        writer.write_json()?;
        Ok(writer)
    }

    pub fn push(&mut self, out: &CellOutput) -> io::Result<()> {
        if let Some(plot) = &out.plot {
            let row = &out.row;
            write_qq(&self.dir.join(plot_file_name("qq", row.n, row.alpha, row.policy)), &plot.qq)?;
            write_mgf(&self.dir.join(plot_file_name("mgf", row.n, row.alpha, row.policy)), &plot.mgf)?;
        }
        self.rows.push(out.row.clone());
        if let Some(w) = &mut self.csv {
            w.write_record(out.row.csv_record())?;
            w.flush()?;
        }
        self.write_json()
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    fn write_json(&self) -> io::Result<()> {
        if !self.formats.contains(&Format::Json) {
            return Ok(());
        }
        let tmp = self.dir.join("results.json.tmp");
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer_pretty(&mut w, &self.rows)?;
        w.write_all(b"\n")?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(tmp, self.dir.join("results.json"))
    }
}

/// Writes every output in one go.
pub fn emit_report(outputs: &[CellOutput], formats: &BTreeSet<Format>, dir: &Path) -> io::Result<()> {
    if outputs.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "no rows to report"));
    }
    let mut w = ReportWriter::create(dir, formats)?;
    outputs.iter().try_for_each(|o| w.push(o))
}

pub fn read_json_rows(path: &Path) -> io::Result<Vec<ReportRow>> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_qq(path: &Path, qq: &[(f64, f64)]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["theoretical", "empirical"])?;
    for (t, e) in qq {
        w.write_record([t.to_string(), e.to_string()])?;
    }
    w.flush()
}

fn write_mgf(path: &Path, mgf: &[MgfPoint]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["theta", "est", "se", "target"])?;
    for p in mgf {
        let (est, se) = if p.saturated {
            (String::new(), String::new())
        } else {
            (p.est.to_string(), p.stderr.to_string())
        };
        w.write_record([p.theta.to_string(), est, se, p.target().to_string()])?;
    }
    w.flush()
}
