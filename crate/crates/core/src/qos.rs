//! Per-service QoS quantities: ergodic rate, effective bandwidth/capacity,
//! finite-blocklength URLLC error probability, and the BS power model.
//!
//! Rates are in bits/s (base-2 logarithms).

use std::f64::consts::{LN_2, SQRT_2};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelDraw;
use crate::config::SystemConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Service {
    Tolerant,
    Sensitive,
    Urllc,
}

impl Service {
    pub const ALL: [Service; 3] = [Service::Tolerant, Service::Sensitive, Service::Urllc];

    pub fn name(self) -> &'static str {
        match self {
            Service::Tolerant => "tolerant",
            Service::Sensitive => "sensitive",
            Service::Urllc => "urllc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tolerant" => Ok(Service::Tolerant),
            "sensitive" => Ok(Service::Sensitive),
            "urllc" => Ok(Service::Urllc),
            other => Err(Error::invalid(format!("unknown service `{other}`"))),
        }
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Traffic descriptor of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "service", rename_all = "lowercase")]
pub enum Traffic {
    /// Mean arrival rate, bits/s.
    Tolerant { mean_rate: f64 },
    /// Compound-Poisson arrivals: `arrivals` packets/s with exponential sizes
    /// of mean `1/size_rate` bits, delay bound `delay` s violated with
    /// probability at most `violation`.
    Sensitive { arrivals: f64, size_rate: f64, delay: f64, violation: f64 },
    /// One packet of `bits` per TTI decoded with error at most `max_error`.
    Urllc { bits: f64, max_error: f64 },
}

impl Traffic {
    pub fn service(&self) -> Service {
        match self {
            Traffic::Tolerant { .. } => Service::Tolerant,
            Traffic::Sensitive { .. } => Service::Sensitive,
            Traffic::Urllc { .. } => Service::Urllc,
        }
    }

    /// A user with no demand (used to pad inputs up to a fixed user count).
    pub fn is_idle(&self) -> bool {
        match *self {
            Traffic::Tolerant { mean_rate } => mean_rate == 0.0,
            Traffic::Sensitive { arrivals, .. } => arrivals == 0.0,
            Traffic::Urllc { bits, .. } => bits == 0.0,
        }
    }

    /// Idle descriptor of the same class.
    pub fn idle(self) -> Traffic {
        match self {
            Traffic::Tolerant { .. } => Traffic::Tolerant { mean_rate: 0.0 },
            Traffic::Sensitive { size_rate, delay, violation, .. } => {
                Traffic::Sensitive { arrivals: 0.0, size_rate, delay, violation }
            }
            Traffic::Urllc { max_error, .. } => Traffic::Urllc { bits: 0.0, max_error },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Traffic::Tolerant { mean_rate } => mean_rate >= 0.0 && mean_rate.is_finite(),
            Traffic::Sensitive { arrivals, size_rate, delay, violation } => {
                arrivals >= 0.0
                    && arrivals.is_finite()
                    && size_rate > 0.0
                    && delay > 0.0
                    && violation > 0.0
                    && violation < 1.0
            }
            Traffic::Urllc { bits, max_error } => {
                (bits == 0.0 || bits >= 1.0) && bits.is_finite() && max_error > 0.0 && max_error < 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid traffic descriptor {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    /// Linear large-scale gain.
    pub alpha: f64,
    pub traffic: Traffic,
}

impl UserSpec {
    pub fn tolerant(alpha: f64, mean_rate: f64) -> Self {
        UserSpec { alpha, traffic: Traffic::Tolerant { mean_rate } }
    }

    pub fn sensitive(alpha: f64, arrivals: f64, size_rate: f64, delay: f64, violation: f64) -> Self {
        UserSpec { alpha, traffic: Traffic::Sensitive { arrivals, size_rate, delay, violation } }
    }

    pub fn urllc(alpha: f64, bits: f64, max_error: f64) -> Self {
        UserSpec { alpha, traffic: Traffic::Urllc { bits, max_error } }
    }

    pub fn service(&self) -> Service {
        self.traffic.service()
    }

    pub fn is_idle(&self) -> bool {
        self.traffic.is_idle()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        self.traffic.validate()
    }

    /// Scalar traffic feature fed to the networks: mean rate, effective
    /// bandwidth, or packet size, depending on the class.
    pub fn feature(&self) -> f64 {
        match self.traffic {
            Traffic::Tolerant { mean_rate } => mean_rate,
            Traffic::Sensitive { arrivals, .. } if arrivals == 0.0 => 0.0,
            Traffic::Sensitive { .. } => effective_bandwidth(&self.traffic).unwrap_or(f64::NAN),
            Traffic::Urllc { bits, .. } => bits,
        }
    }

    /// SNR per watt per unit small-scale gain on each of `n` subcarriers.
    pub(crate) fn snr_per_watt(&self, n: u32, cfg: &SystemConfig, gap: f64) -> f64 {
        self.alpha / (gap * cfg.noise_density * f64::from(cfg.antennas) * f64::from(n) * cfg.subcarrier_bw)
    }
}

/// Per-user subcarrier counts and transmit powers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Allocation {
    pub n: Vec<u32>,
    pub p: Vec<f64>,
}

impl Allocation {
    pub fn subcarriers(&self) -> u32 {
        self.n.iter().sum()
    }

    pub fn transmit_power(&self) -> f64 {
        self.p.iter().sum()
    }
}

/// Gaussian tail probability `Q(x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Inverse of [`q_function`] on `(0, 1)`.
pub fn q_inverse(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("q_inverse needs eps in (0, 1), got {eps}")));
    }
    if eps == 0.5 {
        return Ok(0.0);
    }
    // Work in the upper tail and reflect.
    let (tail, sign) = if eps < 0.5 { (eps, 1.0) } else { (1.0 - eps, -1.0) };
    let mut x = normal_tail_guess(tail);
    // Halley refinement on Q(x) - tail; Q'(x) = -phi(x), Q'' = x phi(x).
    for _ in 0..50 {
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let f = q_function(x) - tail;
        let step = f / phi;
        let dx = step / (1.0 + 0.5 * x * step);
        x += dx;
        if dx.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(sign * x)
}

/// Rational approximation of the upper-tail normal quantile (Acklam).
fn normal_tail_guess(p: f64) -> f64 {
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    // lower-tail quantile of p, negated
    if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    } else {
        let q = p - 0.5;
        let r = q * q;
        -((((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0))
    }
}

fn check_args(n: u32, p: f64, draws: &ChannelDraw) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("subcarrier count must be >= 1"));
    }
    if !(p >= 0.0) {
        return Err(Error::invalid(format!("transmit power must be non-negative, got {p}")));
    }
    if draws.as_slice().is_empty() {
        return Err(Error::invalid("empty channel draw"));
    }
    Ok(())
}

/// Ergodic Shannon rate `n W E[log2(1 + alpha g p / (N0 NT n W))]`, bits/s.
/// Every entry of `draws` is treated as one sample of the per-subcarrier gain.
pub fn avg_rate_tolerant(user: &UserSpec, n: u32, p: f64, draws: &ChannelDraw, cfg: &SystemConfig) -> Result<f64> {
    check_args(n, p, draws)?;
    Ok(mean_rate(user.snr_per_watt(n, cfg, 1.0) * p, n, draws, cfg))
}

/// Same as [`avg_rate_tolerant`] with the SNR gap of delay-sensitive links.
pub fn avg_rate_with_gap(user: &UserSpec, n: u32, p: f64, draws: &ChannelDraw, cfg: &SystemConfig) -> Result<f64> {
    check_args(n, p, draws)?;
    Ok(mean_rate(user.snr_per_watt(n, cfg, cfg.snr_gap) * p, n, draws, cfg))
}

fn mean_rate(snr: f64, n: u32, draws: &ChannelDraw, cfg: &SystemConfig) -> f64 {
    let g = draws.as_slice();
    let s: f64 = g.iter().map(|g| (snr * g).ln_1p()).sum();
    f64::from(n) * cfg.subcarrier_bw * s / (g.len() as f64 * LN_2)
}

fn sensitive_params(traffic: &Traffic) -> Result<(f64, f64, f64, f64)> {
    match *traffic {
        Traffic::Sensitive { arrivals, size_rate, delay, violation } => Ok((arrivals, size_rate, delay, violation)),
        _ => Err(Error::invalid("traffic is not delay-sensitive")),
    }
}

/// QoS exponent `theta = nu_s ln(eps) / (ln(eps) - nu_a D)`, 1/bit.
pub fn qos_exponent(traffic: &Traffic) -> Result<f64> {
    let (arrivals, size_rate, delay, violation) = sensitive_params(traffic)?;
    if !(violation > 0.0 && violation < 1.0) {
        return Err(Error::invalid(format!("violation probability {violation} outside (0, 1)")));
    }
    let ln_eps = violation.ln();
    let denom = ln_eps - arrivals * delay;
    if denom == 0.0 {
        return Err(Error::invalid("degenerate QoS exponent"));
    }
    Ok(size_rate * ln_eps / denom)
}

/// Effective bandwidth `nu_a / (nu_s - theta)` of compound-Poisson traffic, bits/s.
pub fn effective_bandwidth(traffic: &Traffic) -> Result<f64> {
    let (arrivals, size_rate, ..) = sensitive_params(traffic)?;
    let theta = qos_exponent(traffic)?;
    effective_bandwidth_at(arrivals, size_rate, theta)
}

pub fn effective_bandwidth_at(arrivals: f64, size_rate: f64, theta: f64) -> Result<f64> {
    if theta >= size_rate {
        return Err(Error::invalid("QoS exponent must be below the packet-size rate"));
    }
    Ok(arrivals / (size_rate - theta))
}

/// Effective capacity of a block-fading link with exponent `theta`:
/// `-(n / (theta Tc)) ln E[(1 + SNR g)^-w]`, `w = theta Tc W / ln 2`.
pub fn effective_capacity_at(
    theta: f64,
    user: &UserSpec,
    n: u32,
    p: f64,
    draws: &ChannelDraw,
    cfg: &SystemConfig,
) -> Result<f64> {
    check_args(n, p, draws)?;
    if !(theta > 0.0) {
        return Err(Error::invalid("QoS exponent must be positive"));
    }
    let snr = user.snr_per_watt(n, cfg, cfg.snr_gap) * p;
    let w = theta * cfg.coherence_time * cfg.subcarrier_bw / LN_2;
    let ln_mean = ln_mean_exp_neg(draws.as_slice().iter().map(|g| w * (snr * g).ln_1p()));
    Ok(-f64::from(n) * ln_mean / (theta * cfg.coherence_time))
}

/// Effective capacity using the exponent implied by the user's traffic.
pub fn effective_capacity(user: &UserSpec, n: u32, p: f64, draws: &ChannelDraw, cfg: &SystemConfig) -> Result<f64> {
    let theta = qos_exponent(&user.traffic)?;
    effective_capacity_at(theta, user, n, p, draws, cfg)
}

/// `ln(mean(exp(-x_i)))` for `x_i >= 0`, accurate for both tiny and large `x`.
pub(crate) fn ln_mean_exp_neg(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let count = xs.clone().count() as f64;
    let (min, max) = xs.clone().fold((f64::INFINITY, 0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if max < 1.0 {
        let m = xs.map(|x| (-x).exp_m1()).sum::<f64>() / count;
        m.ln_1p()
    } else {
        let s: f64 = xs.map(|x| (min - x).exp()).sum();
        -min + (s / count).ln()
    }
}

fn urllc_params(traffic: &Traffic) -> Result<(f64, f64)> {
    match *traffic {
        Traffic::Urllc { bits, max_error } => Ok((bits, max_error)),
        _ => Err(Error::invalid("traffic is not URLLC")),
    }
}

/// Average decoding error probability under the normal approximation with
/// dispersion `V ~ n`. Row `r` of `draws` supplies the gains of the `n`
/// subcarriers in realization `r`.
pub fn urllc_error_prob(user: &UserSpec, n: u32, p: f64, draws: &ChannelDraw, cfg: &SystemConfig) -> Result<f64> {
    check_args(n, p, draws)?;
    let (bits, _) = urllc_params(&user.traffic)?;
    if draws.cols() < n as usize {
        return Err(Error::invalid(format!(
            "URLLC needs {n} subcarrier columns, draw has {}",
            draws.cols()
        )));
    }
    let snr = user.snr_per_watt(n, cfg, 1.0) * p;
    let ts_w = cfg.tti * cfg.subcarrier_bw;
    let scale = (ts_w / f64::from(n)).sqrt();
    let demand = bits * LN_2 / ts_w;
    let total: f64 = (0..draws.rows())
        .map(|r| {
            let capacity: f64 = draws.row(r)[..n as usize].iter().map(|g| (snr * g).ln_1p()).sum();
            q_function(scale * (capacity - demand))
        })
        .sum();
    Ok(total / draws.rows() as f64)
}

/// Minimum URLLC power under channel hardening:
/// `(N0 n W / alpha) (exp[B ln2 / (Ts n W) + Qinv(eps) / sqrt(Ts n W)] - 1)`.
pub fn urllc_closed_form_power(user: &UserSpec, n: u32, cfg: &SystemConfig) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("subcarrier count must be >= 1"));
    }
    let (bits, max_error) = urllc_params(&user.traffic)?;
    let nw = f64::from(n) * cfg.subcarrier_bw;
    let ts_nw = cfg.tti * nw;
    let exponent = bits * LN_2 / ts_nw + q_inverse(max_error)? / ts_nw.sqrt();
    Ok(cfg.noise_density * nw / user.alpha * exponent.exp_m1())
}

/// BS power draw `(1/rho) sum p + P_ca NT sum n + P_0`.
pub fn total_power(alloc: &Allocation, cfg: &SystemConfig) -> f64 {
    alloc.transmit_power() / cfg.amp_efficiency
        + cfg.circuit_per_added_subcarrier() * f64::from(alloc.subcarriers())
        + cfg.fixed_circuit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_small_scale, stream};

    fn unit_cfg() -> SystemConfig {
        SystemConfig { antennas: 1, ..SystemConfig::default() }
    }

    /// Reference Q^-1 by bisection on Q, used as an independent oracle.
    fn bisect_q_inverse(eps: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q_function(mid) > eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn q_inverse_reference_values() {
        assert_eq!(q_inverse(0.5).unwrap(), 0.0);
        let x = q_inverse(5e-8).unwrap();
        assert!((x - bisect_q_inverse(5e-8)).abs() < 1e-9);
        assert!((x - 5.326).abs() < 1e-3);
        for k in 1..=9 {
            let e = 10f64.powi(-k);
            let x = q_inverse(e).unwrap();
            assert!((q_function(x) - e).abs() < 1e-12, "round trip at {e}");
            assert!((q_function(x) / e - 1.0).abs() < 1e-10);
        }
        let x = q_inverse(0.9).unwrap();
        assert!((q_function(x) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn q_inverse_rejects_out_of_range() {
        for e in [0.0, 1.0, -0.1, 1.2, f64::NAN] {
            assert!(q_inverse(e).is_err());
        }
    }

    #[test]
    fn tolerant_rate_identities() {
        let cfg = unit_cfg();
        let d = ChannelDraw::constant(1, 1, 1.0);
        let alpha = cfg.noise_per_subcarrier(); // alpha p / (N0 W) = 1 at p = 1
        let u = UserSpec::tolerant(alpha, 1e5);
        assert_eq!(avg_rate_tolerant(&u, 1, 0.0, &d, &cfg).unwrap(), 0.0);
        let r = avg_rate_tolerant(&u, 1, 1.0, &d, &cfg).unwrap();
        assert!((r - cfg.subcarrier_bw).abs() < 1e-6);
    }

    #[test]
    fn tolerant_rate_matches_high_precision_monte_carlo() {
        let cfg = SystemConfig::default();
        let u = UserSpec::tolerant(1e-12, 1e5);
        let coarse = sample_small_scale(1, 10_000, 64, &mut stream(3)).unwrap();
        let fine = sample_small_scale(1, 1_000_000, 64, &mut stream(4)).unwrap();
        let a = avg_rate_tolerant(&u, 4, 1.0, &coarse, &cfg).unwrap();
        let b = avg_rate_tolerant(&u, 4, 1.0, &fine, &cfg).unwrap();
        assert!((a / b - 1.0).abs() < 0.01);
    }

    fn sensitive_example() -> Traffic {
        Traffic::Sensitive { arrivals: 100.0, size_rate: 1e-3, delay: 0.05, violation: 1e-2 }
    }

    #[test]
    fn qos_exponent_and_effective_bandwidth_reference() {
        let t = sensitive_example();
        let theta = qos_exponent(&t).unwrap();
        let expect = 1e-3 * (1e-2f64).ln() / ((1e-2f64).ln() - 5.0);
        assert!((theta - expect).abs() < 1e-18);
        assert!((theta - 4.794e-4).abs() < 1e-6);
        let eb = effective_bandwidth(&t).unwrap();
        assert!((eb - 1.921e5).abs() / 1.921e5 < 1e-3);
        let round = (-theta * eb * 0.05).exp();
        assert!((round - 1e-2).abs() / 1e-2 < 1e-9);
    }

    #[test]
    fn qos_exponent_limits() {
        let near_one = Traffic::Sensitive { arrivals: 100.0, size_rate: 1e-3, delay: 0.05, violation: 1.0 - 1e-12 };
        assert!(qos_exponent(&near_one).unwrap() < 1e-12);
        let long_delay = Traffic::Sensitive { arrivals: 100.0, size_rate: 1e-3, delay: 1e9, violation: 1e-2 };
        assert!(qos_exponent(&long_delay).unwrap() < 1e-12);
        let bad = Traffic::Sensitive { arrivals: 100.0, size_rate: 1e-3, delay: 0.05, violation: 1.0 };
        assert!(qos_exponent(&bad).is_err());
        assert_eq!(effective_bandwidth_at(100.0, 1e-3, 0.0).unwrap(), 1e5);
        assert!(effective_bandwidth_at(100.0, 1e-3, 1e-3).is_err());
    }

    #[test]
    fn effective_capacity_deterministic_channel_is_gap_rate() {
        let cfg = SystemConfig::default();
        let u = UserSpec { alpha: 1e-12, traffic: sensitive_example() };
        let d = ChannelDraw::constant(1, 1, 1.0);
        for (n, p) in [(1u32, 0.01), (3, 0.2), (7, 1.5)] {
            let ec = effective_capacity(&u, n, p, &d, &cfg).unwrap();
            let snr = u.alpha * p / (cfg.snr_gap * cfg.noise_density * 64.0 * f64::from(n) * cfg.subcarrier_bw);
            let expect = f64::from(n) * cfg.subcarrier_bw * (1.0 + snr).log2();
            assert!((ec / expect - 1.0).abs() < 1e-12, "{ec} vs {expect}");
        }
        assert_eq!(effective_capacity(&u, 2, 0.0, &d, &cfg).unwrap(), 0.0);
        assert!(effective_capacity(&u, 2, -1.0, &d, &cfg).is_err());
    }

    #[test]
    fn effective_capacity_small_theta_approaches_mean_rate() {
        let cfg = SystemConfig::default();
        let u = UserSpec { alpha: 1e-12, traffic: sensitive_example() };
        let d = sample_small_scale(1000, 1, 16, &mut stream(8)).unwrap();
        let ec = effective_capacity_at(1e-9, &u, 4, 0.5, &d, &cfg).unwrap();
        let mean = avg_rate_with_gap(&u, 4, 0.5, &d, &cfg).unwrap();
        assert!((ec / mean - 1.0).abs() < 0.01);
        let ec_real = effective_capacity(&u, 4, 0.5, &d, &cfg).unwrap();
        assert!(ec_real <= mean);
    }

    #[test]
    fn urllc_single_draw_closed_form() {
        // n = 1, SNR = 10, B = 160, Ts W = 15
        let cfg = SystemConfig { antennas: 1, tti: 15.0 / 120e3, ..SystemConfig::default() };
        let alpha = 10.0 * cfg.noise_per_subcarrier();
        let u = UserSpec::urllc(alpha, 160.0, 5e-8);
        let d = ChannelDraw::constant(1, 1, 1.0);
        let got = urllc_error_prob(&u, 1, 1.0, &d, &cfg).unwrap();
        let oracle = 0.5 * libm::erfc(15f64.sqrt() * (11f64.ln() - 160.0 * LN_2 / 15.0) / SQRT_2);
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn urllc_power_extremes() {
        let cfg = SystemConfig::default();
        let u = UserSpec::urllc(1e-12, 160.0, 5e-8);
        let d = ChannelDraw::constant(1, 4, 64.0);
        assert!(urllc_error_prob(&u, 4, 0.0, &d, &cfg).unwrap() > 1.0 - 1e-12);
        assert!(urllc_error_prob(&u, 4, 1e6, &d, &cfg).unwrap() < 1e-30);
        assert!(urllc_error_prob(&u, 5, 1.0, &d, &cfg).is_err());
    }

    #[test]
    fn urllc_closed_form_reference() {
        let cfg = SystemConfig::default();
        let u = UserSpec::urllc(1e-12, 0.0, 0.5);
        assert_eq!(urllc_closed_form_power(&u, 3, &cfg).unwrap(), 0.0);

        let u = UserSpec::urllc(1e-12, 160.0, 5e-8);
        let p = urllc_closed_form_power(&u, 4, &cfg).unwrap();
        // independent evaluation with the bisection inverse and plain exp
        let nw = 4.0 * 120e3;
        let ts_nw = 0.125e-3 * nw;
        let expo = 160.0 * LN_2 / ts_nw + bisect_q_inverse(5e-8) / ts_nw.sqrt();
        let oracle = dbm_noise() * nw / 1e-12 * (expo.exp() - 1.0);
        assert!((p / oracle - 1.0).abs() < 1e-9);
        assert!((p - URLLC_REF_POWER).abs() / URLLC_REF_POWER < 1e-9, "{p}");
    }

    // alpha = 1e-12, B = 160 bits, eps = 5e-8, Ts = 0.125 ms, W = 120 kHz, n = 4
    // frozen from a 40-digit evaluation
    const URLLC_REF_POWER: f64 = 2.222_380_537_137_302_5e-2;

    fn dbm_noise() -> f64 {
        10f64.powf(-17.4) * 1e-3
    }

    #[test]
    fn urllc_closed_form_is_unimodal_in_n() {
        let cfg = SystemConfig::default();
        let u = UserSpec::urllc(1e-12, 160.0, 5e-8);
        let ps: Vec<f64> = (1..=80).map(|n| urllc_closed_form_power(&u, n, &cfg).unwrap()).collect();
        let argmin = ps.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(argmin > 0 && argmin < ps.len() - 1);
        assert!(ps[..=argmin].windows(2).all(|w| w[0] > w[1]));
        assert!(ps[argmin..].windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn total_power_reference() {
        let cfg = SystemConfig::default();
        let idle = Allocation::default();
        assert_eq!(total_power(&idle, &cfg), cfg.fixed_circuit);
        let cfg = SystemConfig { circuit_per_subcarrier: 0.05 / 256.0, ..SystemConfig::default() };
        let a = Allocation { n: vec![200, 56], p: vec![0.25, 0.75] };
        assert!((total_power(&a, &cfg) - 5.25).abs() < 1e-12);
        let doubled = Allocation { n: a.n.clone(), p: a.p.iter().map(|p| 2.0 * p).collect() };
        let delta = total_power(&doubled, &cfg) - total_power(&a, &cfg);
        assert!((delta - a.transmit_power() / cfg.amp_efficiency).abs() < 1e-12);
    }

    #[test]
    fn features_by_class() {
        let t = UserSpec::tolerant(1e-12, 5e5);
        assert_eq!(t.feature(), 5e5);
        let s = UserSpec { alpha: 1e-12, traffic: sensitive_example() };
        assert!((s.feature() - effective_bandwidth(&sensitive_example()).unwrap()).abs() < 1e-9);
        let u = UserSpec::urllc(1e-12, 320.0, 5e-8);
        assert_eq!(u.feature(), 320.0);
        assert_eq!(UserSpec { alpha: 1e-12, traffic: s.traffic.idle() }.feature(), 0.0);
        assert!(u.traffic.idle().is_idle());
    }
}
