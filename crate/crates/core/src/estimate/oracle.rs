//! Exact stationary distribution of small JSQ chains.
//!
//! The one-slot kernel is built by enumerating every batch size, JSQ
//! tie-break and service vector with its exact probability. Queue lengths are
//! truncated at `q_cap` by clipping arrivals, which keeps the kernel
//! stochastic. The stationary law is then found by power iteration.

use std::collections::BTreeMap;

use log::warn;

use crate::error::{param, Error, Result};
use crate::model::DiscreteDist;

/// Largest truncated state space the oracle will build.
pub const ORACLE_MAX_STATES: usize = 1_000_000;
/// Power iteration stops once successive iterates differ by less than this
/// in L1.
pub const ORACLE_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 1_000_000;
const BOUNDARY_WARN: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub mean_total_q: f64,
    pub mean_total_u: f64,
    /// `P(sum q = j)` for `j = 0..=N * q_cap`.
    pub total_q_dist: Vec<f64>,
    /// Stationary mass of states with some queue at the cap.
    pub boundary_mass: f64,
    pub iterations: usize,
}

struct Row {
    transitions: Vec<(usize, f64)>,
    expected_unused: f64,
}

pub fn oracle_stationary(
    arrivals: &DiscreteDist,
    service: &DiscreteDist,
    n_servers: usize,
    q_cap: u64,
) -> Result<OracleResult> {
    if n_servers == 0 {
        return Err(param("n_servers", "must be at least 1"));
    }
    let side = q_cap as usize + 1;
    let n_states = (0..n_servers).try_fold(1usize, |acc, _| acc.checked_mul(side));
    let n_states = match n_states {
        Some(s) if s <= ORACLE_MAX_STATES => s,
        _ => {
            return Err(param(
                "q_cap",
                format!("({side})^{n_servers} states exceeds the oracle limit {ORACLE_MAX_STATES}"),
            ))
        }
    };

    let decode = |mut idx: usize| -> Vec<u64> {
        (0..n_servers)
            .map(|_| {
                let v = (idx % side) as u64;
                idx /= side;
                v
            })
            .collect()
    };
    let encode = |q: &[u64]| -> usize { q.iter().rev().fold(0, |acc, &v| acc * side + v as usize) };

    let service_vectors = enumerate_service(service, n_servers);
    let rows: Vec<Row> = (0..n_states)
        .map(|idx| {
            let q = decode(idx);
            let min = *q.iter().min().expect("n >= 1");
            let ties: Vec<usize> = (0..n_servers).filter(|&i| q[i] == min).collect();
            let tie_p = 1.0 / ties.len() as f64;
            let mut next: BTreeMap<usize, f64> = BTreeMap::new();
            let mut expected_unused = 0.0;
            let mut scratch = vec![0u64; n_servers];
            for a in arrivals.atoms() {
                for &target in &ties {
                    for (s, ps) in &service_vectors {
                        let p = a.prob * tie_p * ps;
                        let mut unused = 0;
                        for i in 0..n_servers {
                            let arriving = if i == target { a.value.min(q_cap - q[i]) } else { 0 };
                            let available = q[i] + arriving;
                            if available >= s[i] {
                                scratch[i] = available - s[i];
                            } else {
                                scratch[i] = 0;
                                unused += s[i] - available;
                            }
                        }
                        expected_unused += p * unused as f64;
                        *next.entry(encode(&scratch)).or_insert(0.0) += p;
                    }
                }
            }
            Row {
                transitions: next.into_iter().collect(),
                expected_unused,
            }
        })
        .collect();

    let mut pi = vec![0.0; n_states];
    pi[0] = 1.0;
    let mut next = vec![0.0; n_states];
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while change >= ORACLE_TOL {
        if iterations >= MAX_ITERATIONS {
            return Err(Error::OracleFailure {
                iterations,
                last_change: change,
            });
        }
        next.fill(0.0);
        for (from, row) in rows.iter().enumerate() {
            let mass = pi[from];
            if mass == 0.0 {
                continue;
            }
            for &(to, p) in &row.transitions {
                next[to] += mass * p;
            }
        }
        change = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        iterations += 1;
    }

    let mut total_q_dist = vec![0.0; n_servers * q_cap as usize + 1];
    let mut mean_total_q = 0.0;
    let mut mean_total_u = 0.0;
    let mut boundary_mass = 0.0;
    for (idx, &mass) in pi.iter().enumerate() {
        let q = decode(idx);
        let total = q.iter().sum::<u64>();
        total_q_dist[total as usize] += mass;
        mean_total_q += mass * total as f64;
        mean_total_u += mass * rows[idx].expected_unused;
        if q.contains(&q_cap) {
            boundary_mass += mass;
        }
    }
    if boundary_mass > BOUNDARY_WARN {
        warn!("oracle truncation at q_cap = {q_cap} carries stationary mass {boundary_mass:e}");
    }

    Ok(OracleResult {
        mean_total_q,
        mean_total_u,
        total_q_dist,
        boundary_mass,
        iterations,
    })
}

/// Every service vector with its probability.
fn enumerate_service(service: &DiscreteDist, n: usize) -> Vec<(Vec<u64>, f64)> {
    let mut out = vec![(Vec::with_capacity(n), 1.0)];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|(prefix, p)| {
                service.atoms().iter().map(move |a| {
                    let mut v = prefix.clone();
                    v.push(a.value);
                    (v, p * a.prob)
                })
            })
            .collect();
    }
    out
}
