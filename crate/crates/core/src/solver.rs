//! Minimum transmit power meeting one user's QoS constraint for a fixed
//! subcarrier count.
//!
//! Two independent routes are provided:
//!
//! * [`sgd_min_power`]: projected stochastic approximation
//!   `P <- [P + phi(t) * r(t)]^+` on a fresh channel batch per iterate, where
//!   `r` is the (normalized) constraint residual of the service class.
//! * [`min_power_on_draws`] / [`bisection_min_power`]: a bracketing root
//!   search on a frozen sample-average constraint (common random numbers).

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelDraw, Fading, Stream};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::qos::{self, Service, Traffic, UserSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Multiplier on the slope-normalized step `phi(t) = phi0 * gain / t`.
    pub step_scale: f64,
    pub max_iters: usize,
    /// Channel realizations per SGD iterate (tolerant and sensitive users).
    pub draws_per_iter: usize,
    /// Channel realizations per SGD iterate for URLLC users.
    pub urllc_draws_per_iter: usize,
    /// Relative constraint residual accepted by the SGD stopping rule.
    pub residual_tol: f64,
    /// Iterates averaged by the stopping rule.
    pub window: usize,
    /// Frozen realizations used by the bracketing oracle.
    pub oracle_draws: usize,
    /// Relative bracket width at which the oracle stops.
    pub bracket_tol: f64,
    pub fading: Fading,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step_scale: 1.0,
            max_iters: 4000,
            draws_per_iter: 64,
            urllc_draws_per_iter: 1024,
            residual_tol: 1e-3,
            window: 50,
            oracle_draws: 1000,
            bracket_tol: 1e-6,
            fading: Fading::Rayleigh,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_scale > 0.0) {
            return Err(Error::invalid("step_scale must be positive"));
        }
        if self.max_iters == 0 || self.window == 0 || self.draws_per_iter == 0 || self.urllc_draws_per_iter == 0 {
            return Err(Error::invalid("iteration and draw counts must be >= 1"));
        }
        if self.oracle_draws == 0 {
            return Err(Error::invalid("oracle_draws must be >= 1"));
        }
        for (name, t) in [("residual_tol", self.residual_tol), ("bracket_tol", self.bracket_tol)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    /// Columns of a draw matrix needed to evaluate `user` on `n` subcarriers:
    /// URLLC needs one gain per subcarrier, the other classes a scalar sample.
    pub fn columns(user: &UserSpec, n: u32) -> usize {
        match user.service() {
            Service::Urllc => n as usize,
            _ => 1,
        }
    }
}

/// QoS requirement of one user, pre-digested for repeated evaluation.
#[derive(Debug, Clone, Copy)]
enum Requirement {
    Rate { target: f64 },
    Queue { theta: f64, target_ec: f64 },
    Reliability { max_error: f64 },
}

impl Requirement {
    fn of(user: &UserSpec) -> Result<Option<Self>> {
        user.validate()?;
        if user.is_idle() {
            return Ok(None);
        }
        Ok(Some(match user.traffic {
            Traffic::Tolerant { mean_rate } => Requirement::Rate { target: mean_rate },
            Traffic::Sensitive { .. } => Requirement::Queue {
                theta: qos::qos_exponent(&user.traffic)?,
                target_ec: qos::effective_bandwidth(&user.traffic)?,
            },
            Traffic::Urllc { max_error, .. } => Requirement::Reliability { max_error },
        }))
    }

    /// Monotone increasing margin in `p`; the root is the minimum power.
    fn margin(&self, user: &UserSpec, n: u32, p: f64, draws: &ChannelDraw, cfg: &SystemConfig) -> Result<f64> {
        Ok(match *self {
            Requirement::Rate { target } => qos::avg_rate_tolerant(user, n, p, draws, cfg)? / target - 1.0,
            Requirement::Queue { theta, target_ec } => {
                qos::effective_capacity_at(theta, user, n, p, draws, cfg)? / target_ec - 1.0
            }
            Requirement::Reliability { max_error } => {
                let e = qos::urllc_error_prob(user, n, p, draws, cfg)?;
                max_error.ln() - e.ln()
            }
        })
    }

    /// Relative stochastic residual used by the SGD iterations; positive when
    /// the QoS target is missed.
    fn residual(&self, user: &UserSpec, n: u32, p: f64, draws: &ChannelDraw, cfg: &SystemConfig) -> Result<f64> {
        Ok(match *self {
            // a - R(t)
            Requirement::Rate { target } => (target - qos::avg_rate_tolerant(user, n, p, draws, cfg)?) / target,
            // E[exp(-theta Tc R)] - exp(-theta Tc E^B), R summed over the n subcarriers
            Requirement::Queue { theta, target_ec } => {
                let rate_scale = theta * cfg.coherence_time;
                let snr = user.snr_per_watt(n, cfg, cfg.snr_gap) * p;
                let w = rate_scale * cfg.subcarrier_bw / std::f64::consts::LN_2;
                let cols = draws.cols();
                let mean: f64 = (0..draws.rows())
                    .map(|r| {
                        let row = draws.row(r);
                        // one realization per subcarrier; recycle columns when the draw is narrower
                        let s: f64 = (0..n as usize).map(|j| (snr * row[j % cols]).ln_1p()).sum();
                        (-w * s).exp()
                    })
                    .sum::<f64>()
                    / draws.rows() as f64;
                let target = (-rate_scale * target_ec).exp();
                (mean - target) / target
            }
            // eps(t) - eps_max
            Requirement::Reliability { max_error } => {
                (qos::urllc_error_prob(user, n, p, draws, cfg)? - max_error) / max_error
            }
        })
    }
}

/// Hardened-channel power estimate (every small-scale gain replaced by its
/// mean `N_T`). Lower bound for the ergodic classes by Jensen's inequality;
/// exact for URLLC in the large-antenna limit.
pub fn hardened_power(user: &UserSpec, n: u32, cfg: &SystemConfig) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("subcarrier count must be >= 1"));
    }
    if user.is_idle() {
        return Ok(0.0);
    }
    let nw = f64::from(n) * cfg.subcarrier_bw;
    let per_snr = cfg.noise_density * nw / user.alpha;
    Ok(match user.traffic {
        Traffic::Tolerant { mean_rate } => per_snr * (mean_rate / nw).exp2().max(1.0) - per_snr,
        Traffic::Sensitive { .. } => {
            let eb = qos::effective_bandwidth(&user.traffic)?;
            cfg.snr_gap * per_snr * ((eb / nw).exp2() - 1.0)
        }
        Traffic::Urllc { .. } => qos::urllc_closed_form_power(user, n, cfg)?,
    })
}

/// Minimum power on a frozen draw matrix: bracketing search (bisection
/// safeguarded Illinois steps) on the sample-average constraint.
///
/// Returns [`Error::Infeasible`] when the constraint is still violated at
/// `cfg.max_power`.
pub fn min_power_on_draws(
    user: &UserSpec,
    n: u32,
    draws: &ChannelDraw,
    cfg: &SystemConfig,
    sol: &SolverConfig,
) -> Result<f64> {
    min_power_within(user, n, draws, cfg, sol.bracket_tol, cfg.max_power)
}

pub(crate) fn min_power_within(
    user: &UserSpec,
    n: u32,
    draws: &ChannelDraw,
    cfg: &SystemConfig,
    rel_tol: f64,
    cap: f64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("subcarrier count must be >= 1"));
    }
    let Some(req) = Requirement::of(user)? else {
        return Ok(0.0);
    };
    let guess = hardened_power(user, n, cfg)?;
    bracket_root(|p| req.margin(user, n, p, draws, cfg), guess, cap, rel_tol)
}

/// Smallest `p` in `[0, cap]` with `f(p) >= 0` for a nondecreasing `f`,
/// to relative precision `rel_tol`. The bracket grows from `guess`.
pub(crate) fn bracket_root(
    mut f: impl FnMut(f64) -> Result<f64>,
    guess: f64,
    cap: f64,
    rel_tol: f64,
) -> Result<f64> {
    let guess = guess.max(cap * 1e-15);
    let mut hi = guess.min(cap);
    let mut f_hi = f(hi)?;
    let mut lo = 0.0;
    let mut f_lo = f(0.0)?;
    if f_lo >= 0.0 {
        return Ok(0.0);
    }
    while f_hi < 0.0 {
        if hi >= cap {
            return Err(Error::Infeasible { budget: cap });
        }
        lo = hi;
        f_lo = f_hi;
        hi = (hi * 4.0).min(cap);
        f_hi = f(hi)?;
    }
    // Tighten the lower end geometrically when it is still at zero.
    if lo == 0.0 {
        let mut probe = hi / 4.0;
        loop {
            let fp = f(probe)?;
            if fp < 0.0 {
                lo = probe;
                f_lo = fp;
                break;
            }
            hi = probe;
            f_hi = fp;
            if probe < cap * 1e-18 {
                return Ok(hi);
            }
            probe /= 4.0;
        }
    }

    let mut side = 0i8;
    while hi - lo > rel_tol * hi {
        let width = hi - lo;
        let mut x = if f_lo.is_finite() && f_hi.is_finite() && f_hi != f_lo {
            lo - f_lo * (hi - lo) / (f_hi - f_lo)
        } else {
            0.5 * (lo + hi)
        };
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x)?;
        if fx < 0.0 {
            lo = x;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
        // fall back to a plain bisection step when the bracket stalls
        if hi - lo > 0.5 * width {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid)?;
            if fm < 0.0 {
                lo = mid;
                f_lo = fm;
            } else {
                hi = mid;
                f_hi = fm;
            }
            side = 0;
        }
    }
    Ok(hi)
}

/// Bracketing oracle on `sol.oracle_draws` fresh realizations frozen for
/// the whole search.
pub fn bisection_min_power(
    user: &UserSpec,
    n: u32,
    cfg: &SystemConfig,
    sol: &SolverConfig,
    rng: &mut Stream,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("subcarrier count must be >= 1"));
    }
    let draws = sol.fading.sample(sol.oracle_draws, SolverConfig::columns(user, n), cfg.antennas, rng)?;
    min_power_on_draws(user, n, &draws, cfg, sol)
}

/// Outcome of one SGD run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdReport {
    /// Tail-averaged iterate, W.
    pub power: f64,
    pub iterations: usize,
    /// Mean relative residual over the last window.
    pub residual: f64,
}

/// Projected stochastic approximation for the minimum power.
///
/// The step is `phi(t) = step_scale * P0 / (|s| t)` where `P0` is a
/// warm start from a pilot batch and `s` the slope of the residual with
/// respect to `ln P` on that batch, which makes one unit of relative
/// residual move the iterate by about one Newton step.
pub fn sgd_min_power(
    user: &UserSpec,
    n: u32,
    cfg: &SystemConfig,
    sol: &SolverConfig,
    rng: &mut Stream,
) -> Result<SgdReport> {
    sol.validate()?;
    if n == 0 {
        return Err(Error::invalid("subcarrier count must be >= 1"));
    }
    let Some(req) = Requirement::of(user)? else {
        return Ok(SgdReport { power: 0.0, iterations: 0, residual: 0.0 });
    };
    let batch = match user.service() {
        Service::Urllc => sol.urllc_draws_per_iter,
        _ => sol.draws_per_iter,
    };
    let cols = match user.service() {
        Service::Tolerant => 1,
        _ => n as usize,
    };
    let sample = |rng: &mut Stream| sol.fading.sample(batch, cols, cfg.antennas, rng);

    // Warm start and step normalization from a pilot batch.
    let pilot = sample(rng)?;
    let start = match min_power_within(user, n, &pilot, cfg, 1e-3, cfg.max_power * 4.0) {
        Ok(p) => p,
        Err(e) if e.is_infeasible() => return Err(Error::Infeasible { budget: cfg.max_power }),
        Err(e) => return Err(e),
    };
    if start == 0.0 {
        return Ok(SgdReport { power: 0.0, iterations: 0, residual: 0.0 });
    }
    let h = 0.05f64;
    let slope = (req.residual(user, n, start * h.exp(), &pilot, cfg)?
        - req.residual(user, n, start * (-h).exp(), &pilot, cfg)?)
        / (2.0 * h);
    if !(slope < 0.0) || !slope.is_finite() {
        return Err(Error::Convergence { iters: 0, residual: slope });
    }
    let gain = sol.step_scale * start / slope.abs();

    let mut p = start;
    let mut trace = Vec::with_capacity(sol.max_iters);
    let mut window = std::collections::VecDeque::with_capacity(sol.window);
    let mut window_sum = 0.0;
    let mut window_sq = 0.0;
    for t in 1..=sol.max_iters {
        let draws = sample(rng)?;
        let r = req.residual(user, n, p, &draws, cfg)?;
        p = (p + gain / t as f64 * r).max(0.0);
        trace.push(p);

        window.push_back(r);
        window_sum += r;
        window_sq += r * r;
        if window.len() > sol.window {
            let old = window.pop_front().unwrap();
            window_sum -= old;
            window_sq -= old * old;
        }
        if window.len() == sol.window {
            let mean = window_sum / sol.window as f64;
            let done = mean.abs() < sol.residual_tol;
            if done || t == sol.max_iters {
                let var = (window_sq / sol.window as f64 - mean * mean).max(0.0);
                let stderr = (var / sol.window as f64).sqrt();
                if done || mean.abs() <= sol.residual_tol + 3.0 * stderr {
                    let tail = &trace[trace.len() / 2..];
                    let power = tail.iter().sum::<f64>() / tail.len() as f64;
                    if power > cfg.max_power {
                        return Err(Error::Infeasible { budget: cfg.max_power });
                    }
                    return Ok(SgdReport { power, iterations: t, residual: mean });
                }
                return Err(Error::Convergence { iters: t, residual: mean });
            }
        }
    }
    Err(Error::Convergence { iters: sol.max_iters, residual: window_sum / window.len().max(1) as f64 })
}

fn expect_service(user: &UserSpec, service: Service) -> Result<()> {
    if user.service() != service {
        return Err(Error::invalid(format!("expected a {service} user, got {}", user.service())));
    }
    Ok(())
}

pub fn sgd_min_power_tolerant(user: &UserSpec, n: u32, cfg: &SystemConfig, sol: &SolverConfig, rng: &mut Stream) -> Result<f64> {
    expect_service(user, Service::Tolerant)?;
    Ok(sgd_min_power(user, n, cfg, sol, rng)?.power)
}

pub fn sgd_min_power_sensitive(user: &UserSpec, n: u32, cfg: &SystemConfig, sol: &SolverConfig, rng: &mut Stream) -> Result<f64> {
    expect_service(user, Service::Sensitive)?;
    Ok(sgd_min_power(user, n, cfg, sol, rng)?.power)
}

pub fn sgd_min_power_urllc(user: &UserSpec, n: u32, cfg: &SystemConfig, sol: &SolverConfig, rng: &mut Stream) -> Result<f64> {
    expect_service(user, Service::Urllc)?;
    Ok(sgd_min_power(user, n, cfg, sol, rng)?.power)
}
