//! Radio and power constants, unit conversions, and the human-editable
//! configuration document used by the command-line front end.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

/// Radio and power-model constants. All quantities are SI (W, Hz, s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Bandwidth of one subcarrier, Hz.
    pub subcarrier_bw: f64,
    /// TTI duration, s.
    pub tti: f64,
    /// Channel coherence time, s.
    pub coherence_time: f64,
    /// Number of BS antennas.
    pub antennas: u32,
    /// Single-sided noise spectral density, W/Hz.
    pub noise_density: f64,
    /// SNR gap applied to delay-sensitive links (>= 1).
    pub snr_gap: f64,
    /// Power amplifier efficiency in (0, 1].
    pub amp_efficiency: f64,
    /// Circuit power per antenna per occupied subcarrier, W.
    pub circuit_per_subcarrier: f64,
    /// Fixed circuit power, W.
    pub fixed_circuit: f64,
    /// Subcarrier budget.
    pub max_subcarriers: u32,
    /// Transmit power budget, W.
    pub max_power: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            subcarrier_bw: 120e3,
            tti: 0.125e-3,
            coherence_time: 5e-3,
            antennas: 64,
            noise_density: dbm_to_watts(-174.0),
            snr_gap: 2.0,
            amp_efficiency: 0.5,
            circuit_per_subcarrier: 0.05 / 256.0,
            fixed_circuit: 0.05,
            max_subcarriers: 256,
            max_power: dbm_to_watts(46.0),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("subcarrier_bw", self.subcarrier_bw),
            ("tti", self.tti),
            ("coherence_time", self.coherence_time),
            ("noise_density", self.noise_density),
            ("max_power", self.max_power),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.snr_gap.is_finite() && self.snr_gap >= 1.0) {
            return Err(Error::invalid(format!("snr_gap must be >= 1, got {}", self.snr_gap)));
        }
        if !(self.amp_efficiency > 0.0 && self.amp_efficiency <= 1.0) {
            return Err(Error::invalid(format!(
                "amp_efficiency must lie in (0, 1], got {}",
                self.amp_efficiency
            )));
        }
        if !(self.circuit_per_subcarrier >= 0.0 && self.fixed_circuit > 0.0) {
            return Err(Error::invalid("circuit powers must be non-negative (fixed part positive)"));
        }
        if self.antennas == 0 || self.max_subcarriers == 0 {
            return Err(Error::invalid("antennas and max_subcarriers must be >= 1"));
        }
        Ok(())
    }

    /// `N_0 * W`, the noise power on one subcarrier.
    pub fn noise_per_subcarrier(&self) -> f64 {
        self.noise_density * self.subcarrier_bw
    }

    /// Circuit power charged for one extra subcarrier on every antenna.
    pub fn circuit_per_added_subcarrier(&self) -> f64 {
        self.circuit_per_subcarrier * f64::from(self.antennas)
    }

    /// Short hex digest of the canonical JSON encoding; stored in datasets and
    /// models so mismatched configurations are detected.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hex::encode(&hash[..8])
    }
}

/// Uniform range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::invalid(format!("range {name} is empty or non-finite")));
        }
        Ok(())
    }
}

/// Traffic-descriptor ranges from which dataset inputs are drawn (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficRanges {
    /// Mean arrival rate of delay-tolerant users, bits/s.
    pub tolerant_rate: Range,
    /// Packet arrival rate of delay-sensitive users, packets/s.
    pub sensitive_arrivals: Range,
    /// Mean packet size of delay-sensitive users, bits.
    pub sensitive_packet_bits: Range,
    /// Delay bound of delay-sensitive users, s.
    pub sensitive_delay: f64,
    /// Delay-bound violation probability of delay-sensitive users.
    pub sensitive_violation: f64,
    /// URLLC packet size, bits.
    pub urllc_packet_bits: Range,
    /// URLLC decoding error bound.
    pub urllc_max_error: f64,
}

impl Default for TrafficRanges {
    fn default() -> Self {
        TrafficRanges {
            tolerant_rate: Range::new(50e3 * 8.0, 100e3 * 8.0),
            sensitive_arrivals: Range::new(100.0, 1000.0),
            sensitive_packet_bits: Range::new(1e3, 20e3),
            sensitive_delay: 0.05,
            sensitive_violation: 1e-2,
            urllc_packet_bits: Range::new(20.0 * 8.0, 64.0 * 8.0),
            urllc_max_error: 5e-8,
        }
    }
}

impl TrafficRanges {
    pub fn validate(&self) -> Result<()> {
        self.tolerant_rate.validate("tolerant_rate")?;
        self.sensitive_arrivals.validate("sensitive_arrivals")?;
        self.sensitive_packet_bits.validate("sensitive_packet_bits")?;
        self.urllc_packet_bits.validate("urllc_packet_bits")?;
        if self.tolerant_rate.lo <= 0.0
            || self.sensitive_arrivals.lo <= 0.0
            || self.sensitive_packet_bits.lo <= 0.0
            || self.urllc_packet_bits.lo < 1.0
        {
            return Err(Error::invalid("traffic ranges must be positive"));
        }
        for (name, p) in [
            ("sensitive_violation", self.sensitive_violation),
            ("urllc_max_error", self.urllc_max_error),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.sensitive_delay > 0.0) {
            return Err(Error::invalid("sensitive_delay must be positive"));
        }
        Ok(())
    }
}

/// Hidden-layer layout of one network: `layers` hidden layers of `width` neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenLayout {
    pub layers: usize,
    pub width: usize,
}

impl HiddenLayout {
    pub const fn new(layers: usize, width: usize) -> Self {
        HiddenLayout { layers, width }
    }

    pub fn sizes(&self) -> Vec<usize> {
        vec![self.width; self.layers]
    }
}

/// Network hyper-parameters per service class. The defaults are the
/// desk-scale layouts; [`NetworkLayouts::full_scale`] carries the
/// production sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkLayouts {
    pub fnn: HiddenLayout,
    pub bandwidth: HiddenLayout,
    pub power: HiddenLayout,
}

impl Default for NetworkLayouts {
    fn default() -> Self {
        NetworkLayouts {
            fnn: HiddenLayout::new(2, 64),
            bandwidth: HiddenLayout::new(2, 64),
            power: HiddenLayout::new(4, 20),
        }
    }
}

impl NetworkLayouts {
    /// Layouts used for the delay-tolerant mix at full scale
    /// (sensitive: 5x600, URLLC: 4x600 for the first two).
    pub fn full_scale() -> Self {
        NetworkLayouts {
            fnn: HiddenLayout::new(4, 800),
            bandwidth: HiddenLayout::new(4, 800),
            power: HiddenLayout::new(4, 20),
        }
    }
}

/// On-disk configuration document. Powers may be given in dBm and traffic in
/// bytes / KB/s; everything is converted to SI by [`ConfigDoc::resolve`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    #[serde(default)]
    pub system: SystemDoc,
    #[serde(default)]
    pub traffic: TrafficDoc,
    #[serde(default)]
    pub scenario: ScenarioDoc,
    #[serde(default)]
    pub training: TrainingDoc,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDoc {
    pub max_power_dbm: Option<f64>,
    pub tti_ms: Option<f64>,
    pub subcarrier_bw_khz: Option<f64>,
    pub coherence_time_ms: Option<f64>,
    pub noise_density_dbm_hz: Option<f64>,
    pub antennas: Option<u32>,
    pub snr_gap: Option<f64>,
    pub amp_efficiency: Option<f64>,
    /// `N_max * P_ca` in mW, as tabulated; converted using `max_subcarriers`
    /// unless `circuit_per_subcarrier_w` is given.
    pub circuit_per_antenna_mw: Option<f64>,
    pub circuit_per_subcarrier_w: Option<f64>,
    pub fixed_circuit_mw: Option<f64>,
    pub max_subcarriers: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficDoc {
    pub urllc_packet_bytes: Option<[f64; 2]>,
    pub urllc_max_error: Option<f64>,
    pub tolerant_rate_kbytes_s: Option<[f64; 2]>,
    pub sensitive_arrivals_per_s: Option<[f64; 2]>,
    pub sensitive_packet_kbits: Option<[f64; 2]>,
    pub sensitive_delay_ms: Option<f64>,
    pub sensitive_violation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub cell_radius_m: Option<f64>,
    pub shadowing_db: Option<f64>,
    /// Users per service class, `[tolerant, sensitive, urllc]`.
    pub users: Option<[usize; 3]>,
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingDoc {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub fnn_hidden: Option<[usize; 2]>,
    pub bandwidth_hidden: Option<[usize; 2]>,
    pub power_hidden: Option<[usize; 2]>,
}

/// Everything a configuration document resolves to.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub system: SystemConfig,
    pub traffic: TrafficRanges,
    pub cell_radius: f64,
    pub shadowing_db: f64,
    pub users: [usize; 3],
    pub draws: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub layouts: NetworkLayouts,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format { what: "config", detail: e.to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config document serializes")
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let d = SystemConfig::default();
        let s = &self.system;
        let max_subcarriers = s.max_subcarriers.unwrap_or(d.max_subcarriers);
        let circuit = match (s.circuit_per_subcarrier_w, s.circuit_per_antenna_mw) {
            (Some(w), _) => w,
            (None, Some(mw)) => mw * 1e-3 / f64::from(max_subcarriers),
            (None, None) => d.circuit_per_subcarrier,
        };
        let system = SystemConfig {
            subcarrier_bw: s.subcarrier_bw_khz.map_or(d.subcarrier_bw, |k| k * 1e3),
            tti: s.tti_ms.map_or(d.tti, |ms| ms * 1e-3),
            coherence_time: s.coherence_time_ms.map_or(d.coherence_time, |ms| ms * 1e-3),
            antennas: s.antennas.unwrap_or(d.antennas),
            noise_density: s.noise_density_dbm_hz.map_or(d.noise_density, dbm_to_watts),
            snr_gap: s.snr_gap.unwrap_or(d.snr_gap),
            amp_efficiency: s.amp_efficiency.unwrap_or(d.amp_efficiency),
            circuit_per_subcarrier: circuit,
            fixed_circuit: s.fixed_circuit_mw.map_or(d.fixed_circuit, |mw| mw * 1e-3),
            max_subcarriers,
            max_power: s.max_power_dbm.map_or(d.max_power, dbm_to_watts),
        };
        system.validate()?;

        let dt = TrafficRanges::default();
        let t = &self.traffic;
        let range = |v: Option<[f64; 2]>, scale: f64, def: Range| {
            v.map_or(def, |[lo, hi]| Range::new(lo * scale, hi * scale))
        };
        let traffic = TrafficRanges {
            tolerant_rate: range(t.tolerant_rate_kbytes_s, 8e3, dt.tolerant_rate),
            sensitive_arrivals: range(t.sensitive_arrivals_per_s, 1.0, dt.sensitive_arrivals),
            sensitive_packet_bits: range(t.sensitive_packet_kbits, 1e3, dt.sensitive_packet_bits),
            sensitive_delay: t.sensitive_delay_ms.map_or(dt.sensitive_delay, |ms| ms * 1e-3),
            sensitive_violation: t.sensitive_violation.unwrap_or(dt.sensitive_violation),
            urllc_packet_bits: range(t.urllc_packet_bytes, 8.0, dt.urllc_packet_bits),
            urllc_max_error: t.urllc_max_error.unwrap_or(dt.urllc_max_error),
        };
        traffic.validate()?;

        let dl = NetworkLayouts::default();
        let layout = |v: Option<[usize; 2]>, def: HiddenLayout| {
            v.map_or(def, |[layers, width]| HiddenLayout::new(layers, width))
        };
        let tr = &self.training;
        let resolved = Resolved {
            system,
            traffic,
            cell_radius: self.scenario.cell_radius_m.unwrap_or(200.0),
            shadowing_db: self.scenario.shadowing_db.unwrap_or(8.0),
            users: self.scenario.users.unwrap_or([2, 2, 2]),
            draws: self.scenario.draws.unwrap_or(64),
            batch_size: tr.batch_size.unwrap_or(128),
            learning_rate: tr.learning_rate.unwrap_or(1e-3),
            epochs: tr.epochs.unwrap_or(3000),
            layouts: NetworkLayouts {
                fnn: layout(tr.fnn_hidden, dl.fnn),
                bandwidth: layout(tr.bandwidth_hidden, dl.bandwidth),
                power: layout(tr.power_hidden, dl.power),
            },
        };
        if !(resolved.cell_radius > 0.0 && resolved.shadowing_db >= 0.0) {
            return Err(Error::invalid("cell radius must be positive and shadowing non-negative"));
        }
        if resolved.users.iter().sum::<usize>() == 0 || resolved.draws == 0 {
            return Err(Error::invalid("scenario needs at least one user and one draw"));
        }
        if resolved.batch_size == 0 || !(resolved.learning_rate > 0.0) {
            return Err(Error::invalid("batch size and learning rate must be positive"));
        }
        Ok(resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_conversions() {
        assert!((dbm_to_watts(46.0) - 39.810717).abs() < 1e-5);
        assert!((dbm_to_watts(-174.0) / 3.981e-21 - 1.0).abs() < 1e-3);
        assert!((watts_to_dbm(dbm_to_watts(13.0)) - 13.0).abs() < 1e-12);
    }

    #[test]
    fn empty_document_resolves_to_defaults() {
        let r = ConfigDoc::parse("").unwrap().resolve().unwrap();
        assert_eq!(r.system, SystemConfig::default());
        assert_eq!(r.traffic, TrafficRanges::default());
    }

    #[test]
    fn tabulated_circuit_power_is_split_over_subcarriers() {
        let doc = ConfigDoc::parse(
            "[system]\nmax_subcarriers = 32\ncircuit_per_antenna_mw = 50.0\nmax_power_dbm = 30.0\n",
        )
        .unwrap();
        let r = doc.resolve().unwrap();
        assert!((r.system.circuit_per_subcarrier - 0.05 / 32.0).abs() < 1e-15);
        assert!((r.system.max_power - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigDoc::parse("[system]\nbogus = 1\n").is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = SystemConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.antennas = 16;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn invalid_system_is_rejected() {
        let mut c = SystemConfig::default();
        c.amp_efficiency = 1.5;
        assert!(c.validate().is_err());
        c = SystemConfig::default();
        c.snr_gap = 0.5;
        assert!(c.validate().is_err());
    }
}
