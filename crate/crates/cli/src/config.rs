//! Sweep configuration: a flat TOML file with a strict schema.
//!
//! Every key is optional; see `docs/config.md` for types and defaults.
//! Unknown keys are rejected with a spelling suggestion.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use jsq_core::estimate::HORIZON_RELAXATIONS;
use jsq_core::{make_arrival_dist, make_service_dist, Load, Policy, SimConfig};
use log::warn;
use serde::{Deserialize, Serialize};

/// Keys accepted in a config file, in documentation order.
pub const KNOWN_KEYS: &[&str] = &[
    "n_list",
    "n_servers",
    "alpha_list",
    "alpha",
    "policies",
    "replications_per_cell",
    "seed",
    "sigma_a_sq",
    "sigma_s_sq",
    "horizon_relaxations",
    "horizon",
    "warmup",
    "sample_every",
    "n_batches",
    "retain_samples",
    "retain_cap",
    "bootstrap_resamples",
    "stein_c",
    "output_dir",
    "formats",
    "workers",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("line {line}: unknown key `{key}`{}", suggestion.as_ref().map(|s| format!(", did you mean `{s}`?")).unwrap_or_default())]
    UnknownKey {
        key: String,
        line: usize,
        suggestion: Option<String>,
    },
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

/// A validated, fully defaulted sweep over `N x alpha x policy` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Shared cell parameters; `n_servers`, `load` and `policy` are set per
    /// cell, `horizon` and `warmup` are zero when derived per cell.
    pub base: SimConfig,
    pub n_list: Vec<usize>,
    pub alpha_list: Vec<f64>,
    pub policies: Vec<Policy>,
    pub replications_per_cell: usize,
    /// Horizon in relaxation times when `horizon` is not fixed.
    pub horizon_relaxations: f64,
    pub horizon: Option<u64>,
    pub warmup: Option<u64>,
    pub sample_every: Option<u64>,
    pub n_batches: usize,
    pub retain_samples: bool,
    pub retain_cap: usize,
    pub bootstrap_resamples: usize,
    pub stein_c: f64,
    pub output_dir: PathBuf,
    pub formats: BTreeSet<Format>,
    pub workers: Option<usize>,
    /// Non-fatal findings from validation, also logged.
    pub warnings: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n_list: Option<Vec<usize>>,
    n_servers: Option<usize>,
    alpha_list: Option<Vec<f64>>,
    alpha: Option<f64>,
    policies: Option<Vec<String>>,
    replications_per_cell: Option<usize>,
    seed: Option<u64>,
    sigma_a_sq: Option<f64>,
    sigma_s_sq: Option<f64>,
    horizon_relaxations: Option<f64>,
    horizon: Option<u64>,
    warmup: Option<u64>,
    sample_every: Option<u64>,
    n_batches: Option<usize>,
    retain_samples: Option<bool>,
    retain_cap: Option<usize>,
    bootstrap_resamples: Option<usize>,
    stein_c: Option<f64>,
    output_dir: Option<PathBuf>,
    formats: Option<Vec<Format>>,
    workers: Option<usize>,
}

impl Default for SweepConfig {
    /// The desk-scale sweep: `N in {4, 8, 16}`, `alpha in {2.2, 2.5}`, JSQ.
    fn default() -> Self {
        Self::from_raw(RawConfig::default()).expect("defaults are valid")
    }
}

impl SweepConfig {
    /// Parameters of one cell; horizon and warm-up are still unresolved when
    /// they are derived from the relaxation time.
    pub fn cell_config(&self, n_servers: usize, alpha: f64, policy: Policy) -> SimConfig {
        SimConfig {
            n_servers,
            load: Load::Alpha(alpha),
            policy,
            ..self.base.clone()
        }
    }

    pub fn seed(&self) -> u64 {
        self.base.seed
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let n_list = match (raw.n_list, raw.n_servers) {
            (Some(_), Some(_)) => return Err(invalid("n_servers", "give either n_servers or n_list")),
            (list, single) => list.or(single.map(|n| vec![n])),
        };
        let alpha_list = match (raw.alpha_list, raw.alpha) {
            (Some(_), Some(_)) => return Err(invalid("alpha", "give either alpha or alpha_list")),
            (list, single) => list.or(single.map(|a| vec![a])),
        };
        let policies = raw
            .policies
            .unwrap_or_else(|| vec!["jsq".into()])
            .iter()
            .map(|p| p.parse::<Policy>().map_err(|e| invalid("policies", e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = Self {
            base: SimConfig {
                n_servers: 1,
                load: Load::Alpha(2.0),
                sigma_a_sq: raw.sigma_a_sq.unwrap_or(0.5),
                sigma_s_sq: raw.sigma_s_sq.unwrap_or(0.5),
                policy: Policy::Jsq,
                horizon: raw.horizon.unwrap_or(0),
                warmup: raw.warmup.unwrap_or(0),
                seed: raw.seed.unwrap_or(1),
                replications: raw.replications_per_cell.unwrap_or(8),
            },
            n_list: n_list.unwrap_or_else(|| vec![4, 8, 16]),
            alpha_list: alpha_list.unwrap_or_else(|| vec![2.2, 2.5]),
            policies,
            replications_per_cell: raw.replications_per_cell.unwrap_or(8),
            horizon_relaxations: raw.horizon_relaxations.unwrap_or(HORIZON_RELAXATIONS),
            horizon: raw.horizon,
            warmup: raw.warmup,
            sample_every: raw.sample_every,
            n_batches: raw.n_batches.unwrap_or(jsq_core::batch::DEFAULT_BATCHES),
            retain_samples: raw.retain_samples.unwrap_or(true),
            retain_cap: raw.retain_cap.unwrap_or(jsq_core::estimate::DEFAULT_RETAIN_CAP),
            bootstrap_resamples: raw.bootstrap_resamples.unwrap_or(100),
            stein_c: raw.stein_c.unwrap_or(1.0),
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("results")),
            formats: raw
                .formats
                .unwrap_or_else(|| vec![Format::Csv, Format::Json])
                .into_iter()
                .collect(),
            workers: raw.workers,
            warnings: Vec::new(),
        };
        cfg.validated()
    }

    /// Checks every field and every cell's arrival law; collects warnings.
    pub fn validated(mut self) -> Result<Self, ConfigError> {
        self.warnings.clear();
        if self.n_list.is_empty() {
            return Err(invalid("n_list", "must not be empty"));
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n == 0) {
            return Err(invalid("n_list", format!("{n} servers; need at least 1")));
        }
        if self.alpha_list.is_empty() {
            return Err(invalid("alpha_list", "must not be empty"));
        }
        if let Some(a) = self.alpha_list.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(invalid("alpha_list", format!("{a} must be positive and finite")));
        }
        for &a in &self.alpha_list {
            if a <= 2.0 {
                self.warnings.push(format!(
                    "alpha = {a} <= 2 lies outside the regime of the heavy-traffic limit theorems; \
                     the cell is simulated for exploration only"
                ));
            }
        }
        if self.policies.is_empty() {
            return Err(invalid("policies", "must not be empty"));
        }
        let n_min = *self.n_list.iter().min().expect("nonempty");
        for p in &self.policies {
            if let Policy::JsqD(d) = p {
                if *d == 0 || *d > n_min {
                    return Err(invalid("policies", format!("{p} needs 1 <= d <= {n_min}")));
                }
            }
        }
        if self.replications_per_cell == 0 {
            return Err(invalid("replications_per_cell", "must be at least 1"));
        }
        if !(self.base.sigma_a_sq.is_finite() && self.base.sigma_a_sq >= 0.0) {
            return Err(invalid("sigma_a_sq", "must be nonnegative"));
        }
        make_service_dist(self.base.sigma_s_sq).map_err(|e| invalid("sigma_s_sq", e.to_string()))?;
        if !(self.horizon_relaxations.is_finite() && self.horizon_relaxations > 0.0) {
            return Err(invalid("horizon_relaxations", "must be positive"));
        }
        if self.horizon == Some(0) {
            return Err(invalid("horizon", "must be positive"));
        }
        if let (Some(h), Some(w)) = (self.horizon, self.warmup) {
            if w >= h {
                return Err(invalid("warmup", format!("{w} must be below the horizon {h}")));
            }
        }
        if self.sample_every == Some(0) {
            return Err(invalid("sample_every", "must be positive"));
        }
        if self.n_batches < 10 {
            return Err(invalid("n_batches", "must be at least 10"));
        }
        if self.retain_cap == 0 {
            return Err(invalid("retain_cap", "must be positive"));
        }
        if !(self.stein_c.is_finite() && self.stein_c > 0.0) {
            return Err(invalid("stein_c", "must be positive"));
        }
        if self.formats.is_empty() {
            return Err(invalid("formats", "must name at least one of csv, json"));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers", "must be at least 1"));
        }
        for &n in &self.n_list {
            for &alpha in &self.alpha_list {
                make_arrival_dist(n, &Load::Alpha(alpha), self.base.sigma_a_sq)
                    .map_err(|e| invalid("sigma_a_sq", format!("cell N = {n}, alpha = {alpha}: {e}")))?;
            }
        }
        self.base.replications = self.replications_per_cell;
        for w in &self.warnings {
            warn!("{w}");
        }
        Ok(self)
    }
}

pub fn load_config(path: &Path) -> Result<SweepConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<SweepConfig, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    for key in table.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey {
                key: key.clone(),
                line: key_line(text, key),
                suggestion: suggest(key),
            });
        }
    }
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    SweepConfig::from_raw(raw)
}

fn suggest(key: &str) -> Option<String> {
    KNOWN_KEYS
        .iter()
        .map(|k| (strsim::normalized_damerau_levenshtein(key, k), *k))
        .filter(|(score, _)| *score >= 0.6)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.to_owned())
}

/// One-based line on which `key` is assigned, or 0 if not found.
fn key_line(text: &str, key: &str) -> usize {
    text.lines()
        .position(|line| {
            let line = line.trim_start();
            let bare = line.strip_prefix(key).map(str::trim_start);
            let quoted = line
                .strip_prefix('"')
                .and_then(|l| l.strip_prefix(key))
                .and_then(|l| l.strip_prefix('"'))
                .map(str::trim_start);
            bare.or(quoted).is_some_and(|rest| rest.starts_with('='))
        })
        .map_or(0, |i| i + 1)
}
