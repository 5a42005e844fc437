//! The discrete-time load balancing chain.
//!
//! `N` single-server queues share one arrival stream. In each slot the queue
//! lengths are observed, a batch of `a` jobs arrives and is routed in full to
//! one queue, and then every server offers a random amount of service. Queue
//! lengths are integers and the transition is exact integer arithmetic:
//!
//! ```text
//! q_i(k+1) = max(q_i(k) + a_i(k) - s_i(k), 0) = q_i(k) + a_i(k) - s_i(k) + u_i(k)
//! ```
//!
//! where `u_i(k)` is the unused service of server `i`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Tolerance on the total probability mass of a [`DiscreteDist`].
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Tolerance on recorded versus computed moments of a [`DiscreteDist`].
pub const MOMENT_TOL: f64 = 1e-9;
const UNIT_53: f64 = (1u64 << 53) as f64;

/// One support point of a [`DiscreteDist`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: u64,
    pub prob: f64,
}

impl Atom {
    pub fn new(value: u64, prob: f64) -> Self {
        Self { value, prob }
    }
}

/// A finite distribution on the nonnegative integers with recorded moments.
///
/// Atoms are kept sorted by value; sampling is inverse-CDF over that order,
/// so one uniform draw maps to one value deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    atoms: Vec<Atom>,
    cdf: Vec<f64>,
    /// `ceil(cdf * 2^53)` for all but the last atom; compared against the
    /// 53-bit integer behind a uniform `f64` draw.
    thresholds: Vec<u64>,
    mean_exact: f64,
    var_exact: f64,
    max_value: u64,
}

impl DiscreteDist {
    /// Builds a distribution and records its moments from the atoms.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let (mean, var) = moments(&atoms);
        Self::with_moments(atoms, mean, var)
    }

    /// Builds a distribution whose recorded mean and variance are supplied by
    /// the caller (e.g. a mean known in closed form to full precision). They
    /// must agree with the atoms to within [`MOMENT_TOL`].
    pub fn with_moments(mut atoms: Vec<Atom>, mean_exact: f64, var_exact: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(param("atoms", "distribution needs at least one atom"));
        }
        for a in &atoms {
            if !(a.prob.is_finite() && (0.0..=1.0).contains(&a.prob)) {
                return Err(param("atoms", format!("probability {} outside [0, 1]", a.prob)));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(param("atoms", format!("probabilities sum to {total}, not 1")));
        }
        atoms.sort_by_key(|a| a.value);
        if atoms.windows(2).any(|w| w[0].value == w[1].value) {
            return Err(param("atoms", "atom values must be distinct"));
        }
        let (mean, var) = moments(&atoms);
        if (mean - mean_exact).abs() > MOMENT_TOL || (var - var_exact).abs() > MOMENT_TOL {
            return Err(param(
                "atoms",
                format!("recorded moments ({mean_exact}, {var_exact}) disagree with atoms ({mean}, {var})"),
            ));
        }

        let mut acc = 0.0;
        let mut cdf: Vec<f64> = atoms
            .iter()
            .map(|a| {
                acc += a.prob;
                acc
            })
            .collect();
        // Pin the top so every uniform in [0, 1) lands on an atom.
        *cdf.last_mut().expect("nonempty") = 1.0;
        let max_value = atoms.last().expect("nonempty").value;
        let thresholds = cdf[..cdf.len() - 1]
            .iter()
            .map(|&c| (c * UNIT_53).ceil() as u64)
            .collect();

        Ok(Self {
            atoms,
            cdf,
            thresholds,
            mean_exact,
            var_exact,
            max_value,
        })
    }

    /// Point mass at `value`.
    pub fn point(value: u64) -> Self {
        Self::with_moments(vec![Atom::new(value, 1.0)], value as f64, 0.0)
            .expect("point mass is always valid")
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.mean_exact
    }

    pub fn variance(&self) -> f64 {
        self.var_exact
    }

    /// Largest value in the support.
    pub fn max_value(&self) -> u64 {
        self.max_value
    }

    /// Inverse CDF: the first atom whose cumulative probability exceeds `u`.
    pub fn quantile(&self, u: f64) -> u64 {
        let idx = self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1);
        self.atoms[idx].value
    }

    /// Draws one value from one 64-bit word of `rng`. Equivalent to
    /// `quantile(rng.random::<f64>())`, without floating point or branches.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let v = rng.next_u64() >> 11;
        let idx = self.thresholds.iter().filter(|&&t| v >= t).count();
        self.atoms[idx].value
    }
}

fn moments(atoms: &[Atom]) -> (f64, f64) {
    let mean: f64 = atoms.iter().map(|a| a.value as f64 * a.prob).sum();
    let var: f64 = atoms
        .iter()
        .map(|a| {
            let d = a.value as f64 - mean;
            d * d * a.prob
        })
        .sum();
    (mean, var)
}

/// Free-function form of [`DiscreteDist::sample`].
pub fn sample_dist<R: Rng + ?Sized>(dist: &DiscreteDist, rng: &mut R) -> u64 {
    dist.sample(rng)
}

/// Per-server potential service with mean 1 and variance `sigma_s_sq`.
///
/// Three-point law on `{0, 1, 2}` with `P(0) = P(2) = sigma_s_sq / 2`.
/// Atoms of probability zero are dropped, so `sigma_s_sq = 0` is a point mass
/// at 1 and `sigma_s_sq = 1` is the two-point law on `{0, 2}`.
pub fn make_service_dist(sigma_s_sq: f64) -> Result<DiscreteDist> {
    if !(sigma_s_sq.is_finite() && (0.0..=1.0).contains(&sigma_s_sq)) {
        return Err(param("sigma_s_sq", format!("{sigma_s_sq} is outside [0, 1]")));
    }
    let atoms = [
        Atom::new(0, sigma_s_sq / 2.0),
        Atom::new(1, 1.0 - sigma_s_sq),
        Atom::new(2, sigma_s_sq / 2.0),
    ]
    .into_iter()
    .filter(|a| a.prob > 0.0)
    .collect();
    DiscreteDist::with_moments(atoms, 1.0, sigma_s_sq)
}

/// How the mean arrival rate of a configuration is specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Load {
    /// Heavy-traffic exponent: `lambda = N (1 - N^-alpha)`.
    Alpha(f64),
    /// Explicit arrival rate, `0 <= lambda < N`.
    Lambda(f64),
    /// Fully explicit arrival distribution.
    Atoms(Vec<Atom>),
}

impl Load {
    /// Mean number of arrivals per slot for a system with `n` servers.
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Load::Alpha(alpha) => n * (1.0 - n.powf(-alpha)),
            Load::Lambda(lambda) => *lambda,
            Load::Atoms(atoms) => moments(atoms).0,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Load::Alpha(alpha) => Some(*alpha),
            _ => None,
        }
    }
}

/// Batch arrival law with mean exactly `lambda` and variance close to
/// `n * sigma_a_sq`.
///
/// The law is `c + B + Z` with `c = floor(lambda)`, `B ~ Bernoulli(lambda - c)`
/// and `Z = ±m` with probability 1/2 each, `m` the rounded noise amplitude.
/// The recorded variance is the achieved one, `f(1 - f) + m²`.
pub fn make_arrival_dist(n_servers: usize, load: &Load, sigma_a_sq: f64) -> Result<DiscreteDist> {
    if n_servers == 0 {
        return Err(param("n_servers", "must be at least 1"));
    }
    let n = n_servers as f64;
    if let Load::Atoms(atoms) = load {
        let dist = DiscreteDist::new(atoms.clone())?;
        if dist.mean() >= n {
            return Err(param(
                "arrival_atoms",
                format!("mean {} must be below the service capacity {n}", dist.mean()),
            ));
        }
        return Ok(dist);
    }
    if let Load::Alpha(alpha) = load {
        if !(alpha.is_finite() && *alpha > 0.0) {
            return Err(param("alpha", format!("{alpha} must be positive and finite")));
        }
    }
    let lambda = load.lambda(n_servers);
    if !(lambda.is_finite() && lambda >= 0.0 && lambda < n) {
        return Err(param("lambda", format!("{lambda} must satisfy 0 <= lambda < {n}")));
    }
    if !(sigma_a_sq.is_finite() && sigma_a_sq >= 0.0) {
        return Err(param("sigma_a_sq", format!("{sigma_a_sq} must be nonnegative")));
    }

    let offset = lambda.floor();
    let frac = lambda - offset;
    let bernoulli_var = frac * (1.0 - frac);
    let amplitude = (n * sigma_a_sq - bernoulli_var).max(0.0).sqrt().round();
    let c = offset as u64;
    let m = amplitude as u64;
    if m > c {
        let reach = offset + 0.5;
        return Err(Error::InfeasibleVariance {
            offset: c,
            amplitude: m,
            max_sigma_a_sq: (reach * reach + bernoulli_var) / n,
        });
    }

    let centres: &[(u64, f64)] = if m == 0 {
        &[(c, 1.0)]
    } else {
        &[(c - m, 0.5), (c + m, 0.5)]
    };
    let atoms = centres
        .iter()
        .flat_map(|&(base, w)| [Atom::new(base, w * (1.0 - frac)), Atom::new(base + 1, w * frac)])
        .filter(|a| a.prob > 0.0)
        .collect();

    DiscreteDist::with_moments(atoms, lambda, bernoulli_var + (m * m) as f64)
}

/// Routing rule applied to each arrival batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Policy {
    /// Join the shortest queue, ties broken uniformly at random.
    Jsq,
    /// Shortest of `d` queues sampled uniformly without replacement.
    JsqD(usize),
    /// Uniformly random queue.
    Random,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Jsq => f.write_str("jsq"),
            Policy::JsqD(d) => write!(f, "jsq({d})"),
            Policy::Random => f.write_str("random"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "jsq" => return Ok(Policy::Jsq),
            "random" => return Ok(Policy::Random),
            _ => {}
        }
        let d = t
            .strip_prefix("jsq(")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|d| d.trim().parse::<usize>().ok());
        match d {
            Some(d) if d >= 1 => Ok(Policy::JsqD(d)),
            _ => Err(param("policy", format!("`{s}` is not one of jsq, jsq(d), random"))),
        }
    }
}

impl TryFrom<String> for Policy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Policy> for String {
    fn from(p: Policy) -> String {
        p.to_string()
    }
}

/// Queue lengths at the start of slot `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueState {
    pub q: Vec<u64>,
    pub t: u64,
}

impl QueueState {
    pub fn empty(n_servers: usize) -> Self {
        Self {
            q: vec![0; n_servers],
            t: 0,
        }
    }

    pub fn new(q: Vec<u64>) -> Self {
        Self { q, t: 0 }
    }

    pub fn total(&self) -> u64 {
        self.q.iter().sum()
    }
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub a_total: u64,
    /// Queue that received the batch.
    pub target: usize,
    pub a_routed: Vec<u64>,
    pub s: Vec<u64>,
    pub u: Vec<u64>,
    pub q_next: Vec<u64>,
}

impl StepRecord {
    fn zeroed(n: usize) -> Self {
        Self {
            a_total: 0,
            target: 0,
            a_routed: vec![0; n],
            s: vec![0; n],
            u: vec![0; n],
            q_next: vec![0; n],
        }
    }

    pub fn total_unused(&self) -> u64 {
        self.u.iter().sum()
    }
}

/// Routing state with reusable scratch buffers.
#[derive(Debug, Clone)]
pub struct Router {
    policy: Policy,
    ties: Vec<usize>,
    perm: Vec<usize>,
}

impl Router {
    pub fn new(n_servers: usize, policy: Policy) -> Result<Self> {
        if n_servers == 0 {
            return Err(param("n_servers", "must be at least 1"));
        }
        if let Policy::JsqD(d) = policy {
            if d == 0 || d > n_servers {
                return Err(param("policy", format!("d = {d} must lie in 1..={n_servers}")));
            }
        }
        Ok(Self {
            policy,
            ties: Vec::with_capacity(n_servers),
            perm: (0..n_servers).collect(),
        })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// Picks the queue that receives this slot's batch.
    pub fn select<R: Rng + ?Sized>(&mut self, q: &[u64], rng: &mut R) -> usize {
        match self.policy {
            Policy::Jsq => {
                let min = *q.iter().min().expect("at least one server");
                self.ties.clear();
                self.ties
                    .extend(q.iter().enumerate().filter(|&(_, &v)| v == min).map(|(i, _)| i));
                self.pick_tie(rng)
            }
            Policy::JsqD(d) => {
                // Partial Fisher-Yates; any starting order of `perm` yields a
                // uniform d-subset.
                let n = self.perm.len();
                for k in 0..d {
                    let j = rng.random_range(k..n);
                    self.perm.swap(k, j);
                }
                let min = self.perm[..d].iter().map(|&i| q[i]).min().expect("d >= 1");
                self.ties.clear();
                let perm = &self.perm[..d];
                self.ties.extend(perm.iter().copied().filter(|&i| q[i] == min));
                self.pick_tie(rng)
            }
            Policy::Random => rng.random_range(0..q.len()),
        }
    }

    fn pick_tie<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.ties.len() {
            1 => self.ties[0],
            k => self.ties[rng.random_range(0..k)],
        }
    }
}

/// Routes a batch of `a_total` jobs; exactly one entry of the result carries
/// the whole batch.
pub fn route<R: Rng + ?Sized>(
    state: &QueueState,
    a_total: u64,
    policy: Policy,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let mut router = Router::new(state.q.len(), policy)?;
    let target = router.select(&state.q, rng);
    let mut routed = vec![0; state.q.len()];
    routed[target] = a_total;
    Ok(routed)
}

/// Deterministic part of a slot: applies routed arrivals and offered service.
/// Returns `(q_next, u)`.
pub fn transition(q: &[u64], a_routed: &[u64], s: &[u64]) -> (Vec<u64>, Vec<u64>) {
    q.iter()
        .zip(a_routed)
        .zip(s)
        .map(|((&q, &a), &s)| serve(q + a, s))
        .unzip()
}

#[inline]
fn serve(available: u64, offered: u64) -> (u64, u64) {
    if available >= offered {
        (available - offered, 0)
    } else {
        (0, offered - available)
    }
}

/// A running chain with in-place buffers.
#[derive(Debug, Clone)]
pub struct Simulator {
    arrivals: DiscreteDist,
    service: DiscreteDist,
    router: Router,
    state: QueueState,
    record: StepRecord,
}

impl Simulator {
    /// Chain started from empty queues.
    pub fn new(
        n_servers: usize,
        arrivals: DiscreteDist,
        service: DiscreteDist,
        policy: Policy,
    ) -> Result<Self> {
        Self::with_state(QueueState::empty(n_servers), arrivals, service, policy)
    }

    pub fn with_state(
        state: QueueState,
        arrivals: DiscreteDist,
        service: DiscreteDist,
        policy: Policy,
    ) -> Result<Self> {
        let n = state.q.len();
        Ok(Self {
            router: Router::new(n, policy)?,
            record: StepRecord::zeroed(n),
            arrivals,
            service,
            state,
        })
    }

    pub fn state(&self) -> &QueueState {
        &self.state
    }

    pub fn arrivals(&self) -> &DiscreteDist {
        &self.arrivals
    }

    pub fn service(&self) -> &DiscreteDist {
        &self.service
    }

    pub fn policy(&self) -> Policy {
        self.router.policy()
    }

    /// Advances one slot. Random draws happen in event order: batch size,
    /// routing, then the service of servers `0..N`.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &StepRecord {
        let a = self.arrivals.sample(rng);
        let target = self.router.select(&self.state.q, rng);
        let rec = &mut self.record;
        rec.a_total = a;
        rec.target = target;
        rec.a_routed.fill(0);
        rec.a_routed[target] = a;
        for i in 0..self.state.q.len() {
            let s = self.service.sample(rng);
            let (next, unused) = serve(self.state.q[i] + rec.a_routed[i], s);
            rec.s[i] = s;
            rec.u[i] = unused;
            rec.q_next[i] = next;
        }
        self.state.q.copy_from_slice(&rec.q_next);
        self.state.t += 1;
        &self.record
    }
}

/// One slot of the chain as a pure function of `(state, rng)`.
pub fn step<R: Rng + ?Sized>(
    state: &QueueState,
    arrivals: &DiscreteDist,
    service: &DiscreteDist,
    policy: Policy,
    rng: &mut R,
) -> Result<(QueueState, StepRecord)> {
    let mut sim = Simulator::with_state(state.clone(), arrivals.clone(), service.clone(), policy)?;
    let rec = sim.step(rng).clone();
    Ok((sim.state, rec))
}

/// A broken per-slot identity, as reported by [`check_step`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Complementarity { server: usize },
    Conservation { server: usize },
    UnusedExceedsService { server: usize },
    ServiceBound { server: usize },
    ArrivalBound,
    RoutingMass,
    NotArgmin { target: usize, min: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Complementarity { server } => write!(f, "q_next * u != 0 at server {server}"),
            Violation::Conservation { server } => {
                write!(f, "q_next != q + a - s + u at server {server}")
            }
            Violation::UnusedExceedsService { server } => write!(f, "u > s at server {server}"),
            Violation::ServiceBound { server } => write!(f, "s above s_max at server {server}"),
            Violation::ArrivalBound => f.write_str("batch above a_max"),
            Violation::RoutingMass => f.write_str("batch not routed to exactly one queue"),
            Violation::NotArgmin { target, min } => {
                write!(f, "batch routed to queue {target}, which is not at the minimum {min}")
            }
        }
    }
}

/// Checks every per-slot identity of the chain for one recorded slot that
/// started from `before`.
pub fn check_step(
    before: &[u64],
    rec: &StepRecord,
    arrivals: &DiscreteDist,
    service: &DiscreteDist,
    policy: Policy,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if rec.a_total > arrivals.max_value() {
        out.push(Violation::ArrivalBound);
    }
    let routed: u64 = rec.a_routed.iter().sum();
    let off_target = rec
        .a_routed
        .iter()
        .enumerate()
        .any(|(i, &a)| i != rec.target && a != 0);
    if routed != rec.a_total || off_target {
        out.push(Violation::RoutingMass);
    }
    if policy == Policy::Jsq {
        let min = before.iter().copied().min().unwrap_or(0);
        if before.get(rec.target) != Some(&min) {
            out.push(Violation::NotArgmin {
                target: rec.target,
                min,
            });
        }
    }
    for i in 0..before.len() {
        let (q, a, s, u, next) = (before[i], rec.a_routed[i], rec.s[i], rec.u[i], rec.q_next[i]);
        if next * u != 0 {
            out.push(Violation::Complementarity { server: i });
        }
        if (next as i128) != q as i128 + a as i128 - s as i128 + u as i128 {
            out.push(Violation::Conservation { server: i });
        }
        if u > s {
            out.push(Violation::UnusedExceedsService { server: i });
        }
        if s > service.max_value() {
            out.push(Violation::ServiceBound { server: i });
        }
    }
    out
}

/// Full parametrization of one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_servers: usize,
    pub load: Load,
    /// Requested per-server arrival variance factor; the arrival law has
    /// variance close to `n_servers * sigma_a_sq`.
    pub sigma_a_sq: f64,
    pub sigma_s_sq: f64,
    pub policy: Policy,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub replications: usize,
}

impl SimConfig {
    pub fn lambda(&self) -> f64 {
        self.load.lambda(self.n_servers)
    }

    pub fn alpha(&self) -> Option<f64> {
        self.load.alpha()
    }

    /// Total service capacity minus arrival rate, `N - lambda`.
    pub fn drift(&self) -> f64 {
        self.n_servers as f64 - self.lambda()
    }

    /// Factor applied to the total queue length: `N^-alpha`, or `drift / N`
    /// when the load is not given through `alpha` (the two agree otherwise).
    pub fn scale(&self) -> f64 {
        let n = self.n_servers as f64;
        match self.load {
            Load::Alpha(alpha) => n.powf(-alpha),
            _ => self.drift() / n,
        }
    }

    pub fn arrival_dist(&self) -> Result<DiscreteDist> {
        make_arrival_dist(self.n_servers, &self.load, self.sigma_a_sq)
    }

    pub fn service_dist(&self) -> Result<DiscreteDist> {
        make_service_dist(self.sigma_s_sq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_servers == 0 {
            return Err(param("n_servers", "must be at least 1"));
        }
        self.arrival_dist()?;
        self.service_dist()?;
        Router::new(self.n_servers, self.policy)?;
        if self.horizon == 0 {
            return Err(param("horizon", "must be positive"));
        }
        if self.warmup >= self.horizon {
            return Err(param(
                "warmup",
                format!("{} must be below the horizon {}", self.warmup, self.horizon),
            ));
        }
        if self.replications == 0 {
            return Err(param("replications", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replication_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn atoms(d: &DiscreteDist) -> Vec<(u64, f64)> {
        d.atoms().iter().map(|a| (a.value, a.prob)).collect()
    }

    #[test]
    fn service_dist_examples() {
        let d = make_service_dist(0.0).unwrap();
        assert_eq!(atoms(&d), vec![(1, 1.0)]);
        assert_eq!((d.mean(), d.variance(), d.max_value()), (1.0, 0.0, 1));

        let d = make_service_dist(1.0).unwrap();
        assert_eq!(atoms(&d), vec![(0, 0.5), (2, 0.5)]);
        assert_eq!((d.mean(), d.variance(), d.max_value()), (1.0, 1.0, 2));

        let d = make_service_dist(0.5).unwrap();
        assert_eq!(atoms(&d), vec![(0, 0.25), (1, 0.5), (2, 0.25)]);
        assert_eq!((d.mean(), d.variance()), (1.0, 0.5));
    }

    #[test]
    fn service_dist_rejects_out_of_range() {
        assert!(make_service_dist(-0.1).is_err());
        assert!(make_service_dist(1.5).is_err());
        assert!(make_service_dist(f64::NAN).is_err());
    }

    #[test]
    fn arrival_dist_bernoulli_only() {
        let d = make_arrival_dist(1, &Load::Lambda(0.5), 0.25).unwrap();
        assert_eq!(atoms(&d), vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(d.mean(), 0.5);
        assert_eq!(d.variance(), 0.25);
    }

    #[test]
    fn arrival_dist_rejects_saturated_load() {
        assert!(matches!(
            make_arrival_dist(4, &Load::Lambda(4.0), 0.5),
            Err(Error::Parameter { name: "lambda", .. })
        ));
        assert!(make_arrival_dist(4, &Load::Lambda(-1.0), 0.5).is_err());
        assert!(make_arrival_dist(4, &Load::Alpha(0.0), 0.5).is_err());
    }

    #[test]
    fn arrival_dist_heavy_traffic_mean_is_exact() {
        let n = 16usize;
        let d = make_arrival_dist(n, &Load::Alpha(2.5), 1.0).unwrap();
        let exact = 16.0 * (1.0 - 16f64.powf(-2.5));
        assert_eq!(d.mean(), exact);
        let target: f64 = 16.0;
        let slack = target.sqrt() + 0.25;
        assert!(d.variance() >= target - slack && d.variance() <= target + slack);
        assert_eq!(d.max_value(), 15 + 1 + 4);
    }

    #[test]
    fn arrival_dist_reports_infeasible_variance() {
        // lambda = 1.5 leaves offset 1, but sigma_a^2 = 3 asks for m = 2.
        match make_arrival_dist(2, &Load::Lambda(1.5), 3.0) {
            Err(Error::InfeasibleVariance {
                offset,
                amplitude,
                max_sigma_a_sq,
            }) => {
                assert_eq!((offset, amplitude), (1, 2));
                assert_abs_diff_eq!(max_sigma_a_sq, (2.25 + 0.25) / 2.0);
                // Just below the bound is feasible.
                assert!(make_arrival_dist(2, &Load::Lambda(1.5), max_sigma_a_sq - 1e-9).is_ok());
            }
            other => panic!("expected infeasible variance, got {other:?}"),
        }
    }

    #[test]
    fn explicit_atoms() {
        let load = Load::Atoms(vec![Atom::new(0, 0.3), Atom::new(1, 0.7)]);
        let d = make_arrival_dist(2, &load, 0.0).unwrap();
        assert_abs_diff_eq!(d.mean(), 0.7, epsilon = 1e-15);
        assert!(make_arrival_dist(1, &Load::Atoms(vec![Atom::new(1, 1.0)]), 0.0).is_err());
    }

    #[test]
    fn dist_validation() {
        assert!(DiscreteDist::new(vec![]).is_err());
        assert!(DiscreteDist::new(vec![Atom::new(0, 0.5), Atom::new(1, 0.4)]).is_err());
        assert!(DiscreteDist::new(vec![Atom::new(1, 0.5), Atom::new(1, 0.5)]).is_err());
        assert!(DiscreteDist::with_moments(vec![Atom::new(1, 1.0)], 1.1, 0.0).is_err());
    }

    #[test]
    fn quantile_is_inverse_cdf() {
        let d = DiscreteDist::new(vec![Atom::new(0, 0.5), Atom::new(1, 0.5)]).unwrap();
        assert_eq!(d.quantile(0.0), 0);
        assert_eq!(d.quantile(0.4999), 0);
        assert_eq!(d.quantile(0.5), 1);
        assert_eq!(d.quantile(0.9999999), 1);
        let p = DiscreteDist::point(1);
        let mut rng = replication_rng(1, 0);
        assert!((0..100).all(|_| sample_dist(&p, &mut rng) == 1));
    }

    #[test]
    fn sample_matches_float_inverse_cdf() {
        let d = make_arrival_dist(16, &Load::Alpha(2.5), 0.5).unwrap();
        let mut a = replication_rng(3, 1);
        let mut b = replication_rng(3, 1);
        for _ in 0..100_000 {
            assert_eq!(d.sample(&mut a), d.quantile(b.random::<f64>()));
        }
    }

    #[test]
    fn sample_frequencies_match_probabilities() {
        let d = make_service_dist(0.5).unwrap();
        let mut rng = replication_rng(42, 0);
        let draws = 1_000_000;
        let mut counts = [0u64; 3];
        for _ in 0..draws {
            counts[d.sample(&mut rng) as usize] += 1;
        }
        for (a, &c) in d.atoms().iter().zip(&counts) {
            let se = (a.prob * (1.0 - a.prob) / draws as f64).sqrt();
            let freq = c as f64 / draws as f64;
            assert!((freq - a.prob).abs() < 4.0 * se, "atom {}: {freq}", a.value);
        }
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("jsq".parse::<Policy>().unwrap(), Policy::Jsq);
        assert_eq!("JSQ(2)".parse::<Policy>().unwrap(), Policy::JsqD(2));
        assert_eq!("random".parse::<Policy>().unwrap(), Policy::Random);
        assert!("jsq(0)".parse::<Policy>().is_err());
        assert!("p2c".parse::<Policy>().is_err());
        assert_eq!(Policy::JsqD(3).to_string(), "jsq(3)");
    }

    #[test]
    fn route_unique_argmin() {
        let mut rng = replication_rng(0, 0);
        let q = QueueState::new(vec![3, 1, 2]);
        assert_eq!(route(&q, 5, Policy::Jsq, &mut rng).unwrap(), vec![0, 5, 0]);
        assert_eq!(route(&q, 0, Policy::Jsq, &mut rng).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn route_rejects_large_d() {
        let mut rng = replication_rng(0, 0);
        let q = QueueState::new(vec![0, 0]);
        assert!(route(&q, 1, Policy::JsqD(3), &mut rng).is_err());
    }

    fn route_frequencies(q: &[u64], policy: Policy, trials: usize) -> Vec<f64> {
        let mut rng = replication_rng(9, 1);
        let mut router = Router::new(q.len(), policy).unwrap();
        let mut counts = vec![0usize; q.len()];
        for _ in 0..trials {
            counts[router.select(q, &mut rng)] += 1;
        }
        counts.iter().map(|&c| c as f64 / trials as f64).collect()
    }

    fn assert_uniform(freqs: &[f64], trials: usize) {
        let p = 1.0 / freqs.len() as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        for f in freqs {
            assert!((f - p).abs() < 4.0 * se, "{freqs:?}");
        }
    }

    #[test]
    fn jsq_tie_break_is_uniform() {
        let trials = 100_000;
        assert_uniform(&route_frequencies(&[2, 2], Policy::Jsq, trials), trials);
        assert_uniform(&route_frequencies(&[0, 0, 0, 0], Policy::Jsq, trials), trials);
    }

    #[test]
    fn jsq_one_choice_is_random() {
        let trials = 90_000;
        assert_uniform(&route_frequencies(&[7, 0, 9], Policy::JsqD(1), trials), trials);
        assert_uniform(&route_frequencies(&[7, 0, 9], Policy::Random, trials), trials);
    }

    #[test]
    fn jsq_two_choices_probabilities() {
        // With q = (0, 1, 2) the shortest of a uniform pair is queue 0 w.p.
        // 2/3, queue 1 w.p. 1/3 and never queue 2.
        let f = route_frequencies(&[0, 1, 2], Policy::JsqD(2), 90_000);
        assert!((f[0] - 2.0 / 3.0).abs() < 0.01);
        assert!((f[1] - 1.0 / 3.0).abs() < 0.01);
        assert_eq!(f[2], 0.0);
        // d = N is JSQ.
        let f = route_frequencies(&[4, 1, 6], Policy::JsqD(3), 1000);
        assert_eq!(f, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn transition_examples() {
        assert_eq!(transition(&[0, 0], &[0, 0], &[1, 1]), (vec![0, 0], vec![1, 1]));
        assert_eq!(transition(&[5, 3], &[0, 2], &[1, 1]), (vec![4, 4], vec![0, 0]));
        let (next, u) = transition(&[0, 4], &[2, 0], &[2, 1]);
        assert_eq!((next.clone(), u.clone()), (vec![0, 3], vec![0, 0]));
        assert!(next.iter().zip(&u).all(|(q, u)| q * u == 0));
    }

    #[test]
    fn step_respects_identities() {
        let arr = make_arrival_dist(8, &Load::Alpha(2.2), 0.5).unwrap();
        let svc = make_service_dist(0.5).unwrap();
        let mut sim = Simulator::new(8, arr.clone(), svc.clone(), Policy::Jsq).unwrap();
        let mut rng = replication_rng(3, 0);
        for _ in 0..20_000 {
            let before = sim.state().q.clone();
            let rec = sim.step(&mut rng).clone();
            assert!(check_step(&before, &rec, &arr, &svc, Policy::Jsq).is_empty());
            assert_eq!(sim.state().q, rec.q_next);
        }
        assert_eq!(sim.state().t, 20_000);
    }

    #[test]
    fn check_step_flags_bad_records() {
        let arr = DiscreteDist::point(2);
        let svc = make_service_dist(0.5).unwrap();
        let rec = StepRecord {
            a_total: 2,
            target: 1,
            a_routed: vec![0, 2],
            s: vec![1, 0],
            u: vec![1, 0],
            q_next: vec![2, 3],
        };
        let v = check_step(&[1, 1], &rec, &arr, &svc, Policy::Jsq);
        assert!(v.contains(&Violation::Complementarity { server: 0 }));
        assert!(v.contains(&Violation::Conservation { server: 0 }));
        assert!(!v.iter().any(|x| matches!(x, Violation::NotArgmin { .. })));
        let v = check_step(&[0, 1], &rec, &arr, &svc, Policy::Jsq);
        assert!(v.contains(&Violation::NotArgmin { target: 1, min: 0 }));
    }

    #[test]
    fn pure_step_matches_simulator() {
        let arr = make_arrival_dist(4, &Load::Alpha(2.2), 0.5).unwrap();
        let svc = make_service_dist(0.5).unwrap();
        let s0 = QueueState::new(vec![3, 0, 1, 5]);
        let (s1, rec) = step(&s0, &arr, &svc, Policy::Jsq, &mut replication_rng(5, 0)).unwrap();
        let mut sim = Simulator::with_state(s0, arr, svc, Policy::Jsq).unwrap();
        assert_eq!(sim.step(&mut replication_rng(5, 0)), &rec);
        assert_eq!(sim.state(), &s1);
        assert_eq!(s1.t, 1);
    }
}
