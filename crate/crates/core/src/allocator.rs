//! Greedy subcarrier allocation on top of the per-user power solver, plus an
//! exhaustive search used to check it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelDraw, Fading, Stream};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::qos::{self, Allocation, Service, Traffic, UserSpec};
use crate::solver::{bracket_root, hardened_power, min_power_within, SolverConfig};

/// Relative bracket width used for the cached per-user power curves. Tighter
/// than the solver default so that greedy and exhaustive results agree to
/// well below a microwatt.
const CURVE_TOL: f64 = 1e-11;

/// Largest number of allocations the exhaustive oracle will enumerate.
pub const SEARCH_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub users: Vec<UserSpec>,
    pub cfg: SystemConfig,
}

impl Scenario {
    pub fn new(users: Vec<UserSpec>, cfg: SystemConfig) -> Result<Self> {
        let s = Scenario { users, cfg };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::invalid("scenario has no users"));
        }
        self.cfg.validate()?;
        for (k, u) in self.users.iter().enumerate() {
            u.validate().map_err(|e| e.for_user(k))?;
        }
        Ok(())
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.users.iter().enumerate().filter(|(_, u)| !u.is_idle()).map(|(k, _)| k)
    }
}

/// Source of per-user minimum powers `P_k(n)`.
///
/// Returns `f64::INFINITY` when the QoS target cannot be met within the
/// transmit budget on `n` subcarriers.
pub trait PowerModel {
    fn users(&self) -> usize;
    fn is_active(&self, user: usize) -> bool;
    fn required_power(&mut self, user: usize, n: u32) -> Result<f64>;
}

/// Power curves evaluated on frozen per-user channel draws, memoized.
#[derive(Debug, Clone)]
pub struct FrozenPowerModel {
    scenario: Scenario,
    draws: Vec<ChannelDraw>,
    cache: BTreeMap<(usize, u32), f64>,
}

impl FrozenPowerModel {
    /// Draws one frozen realization matrix per user: `rows x 1` for the
    /// ergodic classes, `rows x N_max` for URLLC (the first `n` columns are
    /// used on `n` subcarriers).
    pub fn sample(scenario: &Scenario, fading: Fading, rows: usize, rng: &mut Stream) -> Result<Self> {
        scenario.validate()?;
        let cfg = &scenario.cfg;
        let draws = scenario
            .users
            .iter()
            .map(|u| {
                let cols = match u.service() {
                    Service::Urllc => cfg.max_subcarriers as usize,
                    _ => 1,
                };
                fading.sample(rows, cols, cfg.antennas, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrozenPowerModel { scenario: scenario.clone(), draws, cache: BTreeMap::new() })
    }

    pub fn with_draws(scenario: &Scenario, draws: Vec<ChannelDraw>) -> Result<Self> {
        scenario.validate()?;
        if draws.len() != scenario.users.len() {
            return Err(Error::invalid("one channel draw per user is required"));
        }
        Ok(FrozenPowerModel { scenario: scenario.clone(), draws, cache: BTreeMap::new() })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn cache(&self) -> &BTreeMap<(usize, u32), f64> {
        &self.cache
    }

    pub fn into_cache(self) -> BTreeMap<(usize, u32), f64> {
        self.cache
    }
}

impl PowerModel for FrozenPowerModel {
    fn users(&self) -> usize {
        self.scenario.users.len()
    }

    fn is_active(&self, user: usize) -> bool {
        !self.scenario.users[user].is_idle()
    }

    fn required_power(&mut self, user: usize, n: u32) -> Result<f64> {
        if let Some(p) = self.cache.get(&(user, n)) {
            return Ok(*p);
        }
        let cfg = &self.scenario.cfg;
        let u = &self.scenario.users[user];
        let p = match min_power_within(u, n, &self.draws[user], cfg, CURVE_TOL, cfg.max_power) {
            Ok(p) => p,
            Err(e) if e.is_infeasible() => f64::INFINITY,
            Err(e) => return Err(e.for_user(user)),
        };
        self.cache.insert((user, n), p);
        Ok(p)
    }
}

/// Tabulated curves: `curves[k][n - 1] = P_k(n)`. An empty curve marks an
/// idle user; queries past the end of a curve are infeasible.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePowerModel {
    pub curves: Vec<Vec<f64>>,
}

impl PowerModel for TablePowerModel {
    fn users(&self) -> usize {
        self.curves.len()
    }

    fn is_active(&self, user: usize) -> bool {
        !self.curves[user].is_empty()
    }

    fn required_power(&mut self, user: usize, n: u32) -> Result<f64> {
        if n == 0 {
            return Err(Error::invalid("subcarrier count must be >= 1"));
        }
        Ok(self.curves[user].get(n as usize - 1).copied().unwrap_or(f64::INFINITY))
    }
}

/// The constraint that made an allocation infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Limit {
    /// More active users than subcarriers.
    Subcarriers,
    /// This user cannot meet its QoS target within the budget on any share.
    UserPower { user: usize },
    /// Sum of transmit powers above the budget.
    PowerBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub alloc: Allocation,
    pub feasible: bool,
    pub limit: Option<Limit>,
    /// Objective of the total-power problem, W.
    pub total_power: f64,
    /// Subcarrier assignments made after initialization.
    pub steps: usize,
    pub per_user_power_fn_cache: BTreeMap<(usize, u32), f64>,
}

impl AllocationResult {
    pub fn transmit_power(&self) -> f64 {
        self.alloc.transmit_power()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Transmit,
    Total,
}

struct State {
    n: Vec<u32>,
    p: Vec<f64>,
    steps: usize,
}

impl State {
    fn init(model: &mut dyn PowerModel, cfg: &SystemConfig) -> Result<(Self, bool)> {
        let k = model.users();
        let mut n = vec![0u32; k];
        let mut p = vec![0.0; k];
        for u in 0..k {
            if model.is_active(u) {
                n[u] = 1;
            }
        }
        let fits = n.iter().sum::<u32>() <= cfg.max_subcarriers;
        if fits {
            for u in 0..k {
                if n[u] == 1 {
                    p[u] = model.required_power(u, 1)?;
                }
            }
        }
        Ok((State { n, p, steps: 0 }, fits))
    }

    fn used(&self) -> u32 {
        self.n.iter().sum()
    }

    fn sum_power(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Transmit-power saving of one more subcarrier for each active user.
    fn savings(&self, model: &mut dyn PowerModel) -> Result<Vec<Option<(f64, f64)>>> {
        (0..self.n.len())
            .map(|u| {
                if self.n[u] == 0 {
                    return Ok(None);
                }
                let next = model.required_power(u, self.n[u] + 1)?;
                Ok(Some((saving(self.p[u], next), next)))
            })
            .collect()
    }

    /// Gives one subcarrier to the user with the largest `score`; stops when
    /// no score is positive. Lowest index wins ties.
    fn step(&mut self, model: &mut dyn PowerModel, score: impl Fn(f64) -> f64) -> Result<bool> {
        let mut best: Option<(usize, f64, f64)> = None;
        for (u, s) in self.savings(model)?.into_iter().enumerate() {
            if let Some((dp, next)) = s {
                let v = score(dp);
                if best.is_none_or(|(_, b, _)| v > b) {
                    best = Some((u, v, next));
                }
            }
        }
        match best {
            Some((u, v, next)) if v > 0.0 => {
                self.n[u] += 1;
                self.p[u] = next;
                self.steps += 1;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    fn finish(self, cfg: &SystemConfig, fits: bool) -> AllocationResult {
        let alloc = Allocation { n: self.n, p: self.p };
        let limit = if !fits {
            Some(Limit::Subcarriers)
        } else if let Some(u) = alloc.p.iter().position(|p| p.is_infinite()) {
            Some(Limit::UserPower { user: u })
        } else if alloc.transmit_power() > cfg.max_power {
            Some(Limit::PowerBudget)
        } else {
            None
        };
        AllocationResult {
            total_power: qos::total_power(&alloc, cfg),
            feasible: limit.is_none(),
            limit,
            alloc,
            steps: self.steps,
            per_user_power_fn_cache: BTreeMap::new(),
        }
    }
}

fn saving(current: f64, next: f64) -> f64 {
    match (current.is_finite(), next.is_finite()) {
        (true, _) => current - next,
        (false, true) => f64::INFINITY,
        // both infeasible: another subcarrier may still help, rank it last among the stuck users
        (false, false) => f64::MAX,
    }
}

/// Minimum total transmit power (greedy marginal saving).
pub fn greedy_min_transmit_with(model: &mut dyn PowerModel, cfg: &SystemConfig) -> Result<AllocationResult> {
    let (mut st, fits) = State::init(model, cfg)?;
    if fits {
        while st.used() < cfg.max_subcarriers && st.step(model, |dp| dp)? {}
    }
    Ok(st.finish(cfg, fits))
}

/// Minimum total power including circuit power, with the budget repair loop.
pub fn greedy_min_total_with(model: &mut dyn PowerModel, cfg: &SystemConfig) -> Result<AllocationResult> {
    let (mut st, fits) = State::init(model, cfg)?;
    if fits {
        let circuit = cfg.circuit_per_added_subcarrier();
        let rho = cfg.amp_efficiency;
        while st.used() < cfg.max_subcarriers && st.step(model, |dp| dp / rho - circuit)? {}
        while st.sum_power() > cfg.max_power && st.used() < cfg.max_subcarriers && st.step(model, |dp| dp)? {}
    }
    Ok(st.finish(cfg, fits))
}

fn frozen(scn: &Scenario, sol: &SolverConfig, rng: &mut Stream) -> Result<FrozenPowerModel> {
    FrozenPowerModel::sample(scn, sol.fading, sol.oracle_draws, rng)
}

fn with_cache(mut r: AllocationResult, model: FrozenPowerModel) -> AllocationResult {
    r.per_user_power_fn_cache = model.into_cache();
    r
}

/// Greedy minimum-transmit-power allocation on `sol.oracle_draws` frozen
/// realizations per user.
pub fn greedy_min_transmit(scn: &Scenario, sol: &SolverConfig, rng: &mut Stream) -> Result<AllocationResult> {
    let mut model = frozen(scn, sol, rng)?;
    let r = greedy_min_transmit_with(&mut model, &scn.cfg)?;
    Ok(with_cache(r, model))
}

pub fn greedy_min_total(scn: &Scenario, sol: &SolverConfig, rng: &mut Stream) -> Result<AllocationResult> {
    let mut model = frozen(scn, sol, rng)?;
    let r = greedy_min_total_with(&mut model, &scn.cfg)?;
    Ok(with_cache(r, model))
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n.saturating_sub(k));
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Exhaustive search over all `n_k >= 1` with `sum(n) <= N_max`.
pub fn exhaustive_oracle_with(
    model: &mut dyn PowerModel,
    cfg: &SystemConfig,
    objective: Objective,
) -> Result<AllocationResult> {
    let active: Vec<usize> = (0..model.users()).filter(|&u| model.is_active(u)).collect();
    let k = active.len() as u32;
    let cap = cfg.max_subcarriers;
    let users = model.users();
    let empty = || State { n: vec![0; users], p: vec![0.0; users], steps: 0 };
    if k > cap {
        let mut st = empty();
        for &u in &active {
            st.n[u] = 1;
        }
        return Ok(st.finish(cfg, false));
    }
    // compositions with k positive parts and sum <= cap: C(cap, k)
    let needed = binomial(u128::from(cap), u128::from(k));
    if needed > SEARCH_LIMIT {
        return Err(Error::SearchBudget { needed, limit: SEARCH_LIMIT });
    }
    let span = cap - k + 1;
    let mut curves = Vec::with_capacity(active.len());
    for &u in &active {
        let c = (1..=span).map(|n| model.required_power(u, n)).collect::<Result<Vec<_>>>()?;
        curves.push(c);
    }
    let circuit = cfg.circuit_per_added_subcarrier();
    let rho = cfg.amp_efficiency;
    let score = |n: &[u32], sum_p: f64| match objective {
        Objective::Transmit => sum_p,
        Objective::Total => {
            if sum_p > cfg.max_power {
                f64::INFINITY
            } else {
                sum_p / rho + circuit * f64::from(n.iter().sum::<u32>())
            }
        }
    };

    let mut n = vec![1u32; active.len()];
    let mut best: Option<(f64, f64, Vec<u32>)> = None;
    if active.is_empty() {
        return Ok(empty().finish(cfg, true));
    }
    loop {
        let sum_p: f64 = n.iter().zip(&curves).map(|(&m, c)| c[m as usize - 1]).sum();
        let v = score(&n, sum_p);
        // strict improvement keeps the lexicographically first optimum
        let better = match &best {
            None => true,
            Some((b, bp, _)) => v < *b || (v == *b && v.is_infinite() && sum_p < *bp),
        };
        if better {
            best = Some((v, sum_p, n.clone()));
        }
        // odometer over the simplex
        let mut i = n.len();
        loop {
            if i == 0 {
                let (_, _, n_best) = best.expect("at least one allocation");
                let mut st = empty();
                for (j, &u) in active.iter().enumerate() {
                    st.n[u] = n_best[j];
                    st.p[u] = curves[j][n_best[j] as usize - 1];
                }
                return Ok(st.finish(cfg, true));
            }
            i -= 1;
            let used_now: u32 = n.iter().sum();
            if used_now < cap {
                n[i] += 1;
                break;
            }
            n[i] = 1;
        }
    }
}

pub fn exhaustive_oracle(
    scn: &Scenario,
    objective: Objective,
    sol: &SolverConfig,
    rng: &mut Stream,
) -> Result<AllocationResult> {
    let mut model = frozen(scn, sol, rng)?;
    let r = exhaustive_oracle_with(&mut model, &scn.cfg, objective)?;
    Ok(with_cache(r, model))
}

/// One flagged departure from Condition 1 (`P(n+1) < P(n)`) or Condition 2
/// (`P(n) - P(n+1) >= P(n+1) - P(n+2)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: u8,
    pub n: u32,
    /// Size of the departure, W.
    pub excess: f64,
    /// Standard error of the compared quantity, W.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub n: Vec<u32>,
    /// Required power on all frozen draws, W.
    pub power: Vec<f64>,
    /// Standard error of each `power` entry, W.
    pub power_sigma: Vec<f64>,
    /// `P(n) - P(n+1)`; one entry shorter than `power`.
    pub saving: Vec<f64>,
    /// Closed-form hardened-channel power for URLLC users, empty otherwise.
    pub closed_form: Vec<f64>,
    /// Departures larger than `sigmas` standard errors.
    pub violations: Vec<Violation>,
    pub sigmas: f64,
    /// Gain scaling of the importance-sampling proposal (1 = plain sampling).
    pub tilt: f64,
}

impl ConditionReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sampling depth and tolerance for [`validate_conditions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    /// Frozen channel realizations shared by every `n` (common random numbers).
    pub depth: usize,
    /// Departures within this many standard errors are not flagged.
    pub sigmas: f64,
    pub fading: Fading,
    /// URLLC only: draw gains from `Gamma(N_T, tilt)` and reweight, which
    /// puts the deep fades that dominate a tiny error probability in the
    /// bulk of the sample. `None` picks the tilt from a pilot run.
    pub tilt: Option<f64>,
}

impl Default for ConditionCheck {
    fn default() -> Self {
        ConditionCheck { depth: 100_000, sigmas: 3.0, fading: Fading::Rayleigh, tilt: None }
    }
}

/// Sample-average constraint `mean_i h_i(p)` against a threshold, in the
/// direction given by `increasing`.
struct RowConstraint<'a> {
    user: &'a UserSpec,
    cfg: &'a SystemConfig,
    n: u32,
    gains: &'a ChannelDraw,
    /// Cumulative per-row log likelihood ratios, `rows x cols`; empty for plain sampling.
    log_weights: &'a [f64],
}

impl RowConstraint<'_> {
    fn terms(&self, p: f64) -> Result<(Vec<f64>, f64)> {
        let cfg = self.cfg;
        let u = self.user;
        let n = self.n;
        let nf = f64::from(n);
        let d = self.gains;
        Ok(match u.traffic {
            Traffic::Tolerant { mean_rate } => {
                let snr = u.snr_per_watt(n, cfg, 1.0) * p;
                let scale = nf * cfg.subcarrier_bw / std::f64::consts::LN_2;
                let h = (0..d.rows()).map(|i| scale * (snr * d.get(i, 0)).ln_1p()).collect();
                (h, mean_rate)
            }
            Traffic::Sensitive { .. } => {
                let theta = qos::qos_exponent(&u.traffic)?;
                let eb = qos::effective_bandwidth(&u.traffic)?;
                let snr = u.snr_per_watt(n, cfg, cfg.snr_gap) * p;
                let w = theta * cfg.coherence_time * cfg.subcarrier_bw / std::f64::consts::LN_2;
                let h = (0..d.rows()).map(|i| (-w * (snr * d.get(i, 0)).ln_1p()).exp_m1()).collect();
                (h, (-theta * cfg.coherence_time * eb / nf).exp_m1())
            }
            Traffic::Urllc { bits, max_error } => {
                let snr = u.snr_per_watt(n, cfg, 1.0) * p;
                let ts_w = cfg.tti * cfg.subcarrier_bw;
                let scale = (ts_w / nf).sqrt();
                let demand = bits * std::f64::consts::LN_2 / ts_w;
                let cols = d.cols();
                let h = (0..d.rows())
                    .map(|i| {
                        let cap: f64 = d.row(i)[..n as usize].iter().map(|g| (snr * g).ln_1p()).sum();
                        let q = qos::q_function(scale * (cap - demand));
                        if self.log_weights.is_empty() {
                            q
                        } else {
                            q * self.log_weights[i * cols + n as usize - 1].exp()
                        }
                    })
                    .collect();
                (h, max_error)
            }
        })
    }

    fn increasing(&self) -> bool {
        self.user.service() == Service::Tolerant
    }

    fn margin(&self, p: f64) -> Result<f64> {
        let (h, thr) = self.terms(p)?;
        let m = h.iter().sum::<f64>() / h.len() as f64;
        Ok(if self.increasing() {
            m / thr - 1.0
        } else if self.user.service() == Service::Urllc {
            thr.ln() - m.ln()
        } else {
            (thr - m) / thr.abs()
        })
    }

    /// Root and the per-row influence on it: `P_hat - P ~ mean_i(phi_i)`.
    fn solve(&self) -> Result<(f64, Vec<f64>)> {
        let guess = hardened_power(self.user, self.n, self.cfg)?;
        let p = match bracket_root(|p| self.margin(p), guess, self.cfg.max_power, 1e-10) {
            Ok(p) => p,
            Err(e) if e.is_infeasible() => return Ok((f64::INFINITY, Vec::new())),
            Err(e) => return Err(e),
        };
        let (h, _) = self.terms(p)?;
        let rows = h.len() as f64;
        let m = h.iter().sum::<f64>() / rows;
        let delta = 1e-5;
        let up = self.terms(p * (1.0 + delta))?.0.iter().sum::<f64>() / rows;
        let down = self.terms(p * (1.0 - delta))?.0.iter().sum::<f64>() / rows;
        let slope = (up - down) / (2.0 * delta * p);
        let phi = h.iter().map(|x| -(x - m) / slope).collect();
        Ok((p, phi))
    }
}

fn influence_sigma(a: &[f64]) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    let n = a.len() as f64;
    let m = a.iter().sum::<f64>() / n;
    (a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0) / n).sqrt()
}

/// Scaled gains and cumulative log likelihood ratios for a `Gamma(N_T, s)`
/// proposal built from standard `Gamma(N_T, 1)` draws.
fn tilted(draws: &ChannelDraw, antennas: u32, s: f64) -> Result<(ChannelDraw, Vec<f64>)> {
    let nt = f64::from(antennas);
    let cols = draws.cols();
    let mut gains = Vec::with_capacity(draws.as_slice().len());
    let mut lw = Vec::with_capacity(gains.capacity());
    for i in 0..draws.rows() {
        let mut acc = 0.0;
        for &g in draws.row(i) {
            gains.push(s * g);
            acc += nt * s.ln() + g * (1.0 - s);
            lw.push(acc);
        }
    }
    Ok((ChannelDraw::from_vec(draws.rows(), cols, gains)?, lw))
}

const TILT_GRID: [f64; 8] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3];
const PILOT_ROWS: usize = 4000;

/// Tilt minimizing the relative variance of the weighted error terms at the
/// middle of the range, on a pilot sample.
fn pick_tilt(user: &UserSpec, n: u32, cfg: &SystemConfig, rng: &mut Stream) -> Result<f64> {
    let base = Fading::Rayleigh.sample(PILOT_ROWS, n as usize, cfg.antennas, rng)?;
    let mut best = (1.0, f64::INFINITY);
    for s in TILT_GRID {
        let (gains, lw) = tilted(&base, cfg.antennas, s)?;
        let c = RowConstraint { user, cfg, n, gains: &gains, log_weights: &lw };
        let (p, phi) = c.solve()?;
        if !p.is_finite() {
            continue;
        }
        let rel = influence_sigma(&phi) / p;
        if rel < best.1 {
            best = (s, rel);
        }
    }
    Ok(best.0)
}

/// Tabulates `P(n)` and the savings `P(n) - P(n+1)` over `n_range` on one
/// set of frozen draws and flags Condition 1/2 departures beyond
/// `check.sigmas` standard errors. Standard errors come from the per-draw
/// influence on each root, so the correlation between neighbouring `n` is
/// accounted for.
pub fn validate_conditions(
    user: &UserSpec,
    n_range: std::ops::RangeInclusive<u32>,
    cfg: &SystemConfig,
    check: &ConditionCheck,
    rng: &mut Stream,
) -> Result<ConditionReport> {
    user.validate()?;
    let (lo, hi) = (*n_range.start(), *n_range.end());
    if lo == 0 || hi < lo || hi > cfg.max_subcarriers {
        return Err(Error::invalid(format!("subcarrier range {lo}..={hi} outside [1, {}]", cfg.max_subcarriers)));
    }
    if check.depth < 2 {
        return Err(Error::invalid("need at least two draws"));
    }
    let urllc = user.service() == Service::Urllc;
    let cols = if urllc { hi as usize } else { 1 };
    let tilt = match (urllc, check.fading, check.tilt) {
        (true, Fading::Rayleigh, Some(s)) if s > 0.0 && s <= 1.0 => s,
        (true, Fading::Rayleigh, Some(s)) => return Err(Error::invalid(format!("tilt {s} outside (0, 1]"))),
        (true, Fading::Rayleigh, None) => pick_tilt(user, (lo + hi).div_ceil(2), cfg, rng)?,
        _ => 1.0,
    };
    let base = check.fading.sample(check.depth, cols, cfg.antennas, rng)?;
    let (gains, lw) = if tilt == 1.0 { (base, Vec::new()) } else { tilted(&base, cfg.antennas, tilt)? };

    let ns: Vec<u32> = (lo..=hi).collect();
    let mut power = Vec::with_capacity(ns.len());
    let mut phi = Vec::with_capacity(ns.len());
    for &n in &ns {
        let c = RowConstraint { user, cfg, n, gains: &gains, log_weights: &lw };
        let (p, f) = c.solve()?;
        power.push(p);
        phi.push(f);
    }
    let power_sigma: Vec<f64> = phi.iter().map(|f| influence_sigma(f)).collect();
    let saving: Vec<f64> = power.windows(2).map(|w| w[0] - w[1]).collect();
    let combo = |parts: &[(usize, f64)]| -> f64 {
        if parts.iter().any(|(i, _)| phi[*i].is_empty()) {
            return f64::INFINITY;
        }
        let v: Vec<f64> = (0..phi[parts[0].0].len()).map(|r| parts.iter().map(|(i, c)| c * phi[*i][r]).sum()).collect();
        influence_sigma(&v)
    };

    let mut violations = Vec::new();
    for i in 0..saving.len() {
        // Condition 1: positive saving
        let sigma = combo(&[(i, 1.0), (i + 1, -1.0)]);
        if -saving[i] > check.sigmas * sigma {
            violations.push(Violation { condition: 1, n: ns[i], excess: -saving[i], sigma });
        }
        // Condition 2: nonincreasing savings
        if i + 1 < saving.len() {
            let sigma = combo(&[(i, -1.0), (i + 1, 2.0), (i + 2, -1.0)]);
            let excess = saving[i + 1] - saving[i];
            if excess > check.sigmas * sigma {
                violations.push(Violation { condition: 2, n: ns[i], excess, sigma });
            }
        }
    }
    let closed_form = if urllc {
        ns.iter().map(|&n| qos::urllc_closed_form_power(user, n, cfg)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(ConditionReport { n: ns, power, power_sigma, saving, closed_form, violations, sigmas: check.sigmas, tilt })
}

/// Minimizer of the closed-form URLLC power over `n >= 1` (first minimum
/// when scanning upwards, capped at `limit`).
pub fn urllc_power_minimizer(user: &UserSpec, cfg: &SystemConfig, limit: u32) -> Result<u32> {
    let mut best = (1u32, qos::urllc_closed_form_power(user, 1, cfg)?);
    for n in 2..=limit {
        let p = qos::urllc_closed_form_power(user, n, cfg)?;
        if p >= best.1 {
            break;
        }
        best = (n, p);
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::stream;

    fn sys(nmax: u32) -> SystemConfig {
        SystemConfig { max_subcarriers: nmax, ..SystemConfig::default() }
    }

    fn fixed_sol(cfg: &SystemConfig) -> SolverConfig {
        SolverConfig { fading: Fading::Fixed(f64::from(cfg.antennas)), oracle_draws: 1, ..SolverConfig::default() }
    }

    #[test]
    fn single_tolerant_user_matches_scan() {
        let cfg = sys(12);
        let scn = Scenario::new(vec![UserSpec::tolerant(2e-13, 7e5)], cfg.clone()).unwrap();
        let sol = fixed_sol(&cfg);
        let r = greedy_min_transmit(&scn, &sol, &mut stream(1)).unwrap();
        let mut model = FrozenPowerModel::sample(&scn, sol.fading, 1, &mut stream(1)).unwrap();
        let (best_n, best_p) = (1..=12)
            .map(|n| (n, model.required_power(0, n).unwrap()))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        assert_eq!(r.alloc.n, vec![best_n]);
        assert!((r.alloc.p[0] - best_p).abs() <= 1e-12);
        assert!(r.feasible);
    }

    #[test]
    fn identical_users_split_evenly() {
        let cfg = sys(9);
        let u = UserSpec::tolerant(1e-12, 6e5);
        let scn = Scenario::new(vec![u; 2], cfg.clone()).unwrap();
        let r = greedy_min_transmit(&scn, &fixed_sol(&cfg), &mut stream(2)).unwrap();
        assert!(r.alloc.n[0].abs_diff(r.alloc.n[1]) <= 1);
    }

    #[test]
    fn idle_users_get_nothing() {
        let cfg = sys(8);
        let scn = Scenario::new(
            vec![UserSpec::tolerant(1e-12, 0.0), UserSpec::urllc(1e-12, 200.0, 5e-8)],
            cfg.clone(),
        )
        .unwrap();
        let r = greedy_min_total(&scn, &fixed_sol(&cfg), &mut stream(3)).unwrap();
        assert_eq!(r.alloc.n[0], 0);
        assert_eq!(r.alloc.p[0], 0.0);
        assert!(r.alloc.n[1] >= 1);
    }

    #[test]
    fn zero_circuit_power_reduces_to_transmit() {
        let cfg = SystemConfig { circuit_per_subcarrier: 0.0, ..sys(10) };
        let scn = Scenario::new(
            vec![
                UserSpec::tolerant(3e-13, 5e5),
                UserSpec::sensitive(5e-13, 400.0, 1.0 / 2000.0, 0.05, 1e-2),
                UserSpec::urllc(1e-12, 300.0, 5e-8),
            ],
            cfg.clone(),
        )
        .unwrap();
        let sol = SolverConfig { oracle_draws: 64, ..SolverConfig::default() };
        let a = greedy_min_transmit(&scn, &sol, &mut stream(4)).unwrap();
        let b = greedy_min_total(&scn, &sol, &mut stream(4)).unwrap();
        assert_eq!(a.alloc, b.alloc);
    }

    #[test]
    fn huge_circuit_power_keeps_one_subcarrier_each() {
        let cfg = SystemConfig { circuit_per_subcarrier: 1e3, ..sys(10) };
        let scn = Scenario::new(
            vec![UserSpec::tolerant(1e-11, 4e5), UserSpec::urllc(1e-11, 160.0, 5e-8)],
            cfg.clone(),
        )
        .unwrap();
        let r = greedy_min_total(&scn, &fixed_sol(&cfg), &mut stream(5)).unwrap();
        assert_eq!(r.alloc.n, vec![1, 1]);
        assert!(r.feasible);
    }

    #[test]
    fn repair_loop_meets_budget() {
        // circuit power makes the first phase stop early; a tight budget forces more subcarriers
        let curves = vec![vec![5.0, 3.0, 2.0, 1.5, 1.25], vec![4.0, 2.5, 1.8, 1.4, 1.2]];
        let cfg = SystemConfig {
            max_power: 4.0,
            max_subcarriers: 8,
            circuit_per_subcarrier: 10.0 / 64.0,
            antennas: 64,
            amp_efficiency: 1.0,
            ..SystemConfig::default()
        };
        let mut m = TablePowerModel { curves };
        let r = greedy_min_total_with(&mut m, &cfg).unwrap();
        assert!(r.feasible, "{r:?}");
        assert!(r.transmit_power() <= 4.0);
        let o = exhaustive_oracle_with(&mut m, &cfg, Objective::Total).unwrap();
        assert!((o.total_power - r.total_power).abs() < 1e-12);
    }

    #[test]
    fn infeasible_is_flagged_with_limit() {
        let cfg = SystemConfig { max_power: 1e-4, ..sys(6) };
        let scn = Scenario::new(vec![UserSpec::tolerant(1e-14, 8e5); 2], cfg.clone()).unwrap();
        let r = greedy_min_transmit(&scn, &fixed_sol(&cfg), &mut stream(6)).unwrap();
        assert!(!r.feasible);
        assert!(r.limit.is_some());
        assert!(r.alloc.subcarriers() <= 6);

        let crowded = Scenario::new(vec![UserSpec::tolerant(1e-12, 4e5); 3], sys(2)).unwrap();
        let r = greedy_min_total(&crowded, &fixed_sol(&cfg), &mut stream(6)).unwrap();
        assert_eq!(r.limit, Some(Limit::Subcarriers));
    }

    #[test]
    fn urllc_never_exceeds_closed_form_minimizer() {
        let cfg = sys(64);
        let u = UserSpec::urllc(1e-12, 160.0, 5e-8);
        let scn = Scenario::new(vec![u], cfg.clone()).unwrap();
        let r = greedy_min_transmit(&scn, &fixed_sol(&cfg), &mut stream(7)).unwrap();
        let best = urllc_power_minimizer(&u, &cfg, 64).unwrap();
        assert_eq!(best, 25);
        assert_eq!(r.alloc.n[0], best);
    }

    #[test]
    fn cache_is_stable() {
        let cfg = sys(8);
        let scn = Scenario::new(vec![UserSpec::urllc(1e-12, 256.0, 5e-8)], cfg).unwrap();
        let mut m = FrozenPowerModel::sample(&scn, Fading::Rayleigh, 200, &mut stream(8)).unwrap();
        let a = m.required_power(0, 5).unwrap();
        let b = m.required_power(0, 5).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn search_budget_is_enforced() {
        let cfg = sys(256);
        let mut m = TablePowerModel { curves: vec![vec![1.0; 256]; 4] };
        let err = exhaustive_oracle_with(&mut m, &cfg, Objective::Transmit).unwrap_err();
        assert_eq!(err.kind(), "search-budget");
    }

    #[test]
    fn closed_form_urllc_satisfies_conditions() {
        let cfg = SystemConfig::default();
        let u = UserSpec::urllc(1e-12, 200.0, 5e-8);
        let top = urllc_power_minimizer(&u, &cfg, 256).unwrap();
        let p: Vec<f64> = (1..=top).map(|n| qos::urllc_closed_form_power(&u, n, &cfg).unwrap()).collect();
        for w in p.windows(2) {
            assert!(w[1] < w[0]);
        }
        for w in p.windows(3) {
            assert!(w[0] - w[1] >= w[1] - w[2]);
        }
    }

    #[test]
    fn tolerant_frozen_gain_conditions_hold() {
        let cfg = SystemConfig::default();
        let check = ConditionCheck { depth: 20, fading: Fading::Fixed(64.0), ..ConditionCheck::default() };
        let r = validate_conditions(&UserSpec::tolerant(1e-12, 8e5), 1..=20, &cfg, &check, &mut stream(9)).unwrap();
        assert!(r.holds());
        assert!(r.saving.iter().all(|s| *s > 0.0));
    }
}
