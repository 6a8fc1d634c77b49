//! Large-scale (path loss + lognormal shadowing) and small-scale
//! (Gamma-distributed, post-combining) channel gains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random stream used throughout the crate.
pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed (splitmix64 finalizer over `base ^ tag`).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Cell radius, m.
    pub cell_radius: f64,
    /// Users are never placed closer than this, m.
    pub min_distance: f64,
    /// Path-loss intercept, dB.
    pub pathloss_intercept: f64,
    /// Path-loss slope, dB per decade of distance.
    pub pathloss_slope: f64,
    /// Shadowing standard deviation, dB.
    pub shadowing_sigma: f64,
    pub antennas: u32,
    pub seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            cell_radius: 200.0,
            min_distance: 1.0,
            pathloss_intercept: 35.3,
            pathloss_slope: 37.6,
            shadowing_sigma: 8.0,
            antennas: 64,
            seed: 0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_radius > 0.0 && self.cell_radius.is_finite()) {
            return Err(Error::invalid("cell_radius must be positive"));
        }
        if !(self.min_distance > 0.0 && self.min_distance <= self.cell_radius) {
            return Err(Error::invalid("min_distance must lie in (0, cell_radius]"));
        }
        if !(self.shadowing_sigma >= 0.0) {
            return Err(Error::invalid("shadowing_sigma must be non-negative"));
        }
        if self.antennas == 0 {
            return Err(Error::invalid("antennas must be >= 1"));
        }
        Ok(())
    }

    pub fn pathloss_db(&self, distance: f64) -> f64 {
        self.pathloss_intercept + self.pathloss_slope * distance.log10()
    }

    /// Linear gain for a given distance and shadowing realization (dB).
    pub fn gain_with_shadowing(&self, distance: f64, shadowing_db: f64) -> f64 {
        10f64.powf(-(self.pathloss_db(distance) + shadowing_db) / 10.0)
    }

    /// Area-uniform user distance over the annulus `[min_distance, cell_radius]`.
    pub fn place_user(&self, rng: &mut Stream) -> f64 {
        let (r0, r1) = (self.min_distance, self.cell_radius);
        let u: f64 = rng.random();
        (r0 * r0 + u * (r1 * r1 - r0 * r0)).sqrt()
    }
}

/// Large-scale gain `10^(-(PL(d) + S)/10)` with `S ~ N(0, sigma^2)` dB.
pub fn large_scale_gain(distance: f64, params: &ChannelParams, rng: &mut Stream) -> Result<f64> {
    if !(distance > 0.0 && distance <= params.cell_radius) {
        return Err(Error::invalid(format!(
            "distance {distance} outside (0, {}]",
            params.cell_radius
        )));
    }
    let shadow = if params.shadowing_sigma > 0.0 {
        Normal::new(0.0, params.shadowing_sigma)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(rng)
    } else {
        0.0
    };
    Ok(params.gain_with_shadowing(distance, shadow))
}

/// Row-major matrix of non-negative small-scale power gains.
///
/// When passed to the QoS evaluators each row is one independent channel
/// realization and each column one subcarrier of the allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    rows: usize,
    cols: usize,
    gains: Vec<f64>,
}

impl ChannelDraw {
    pub fn from_vec(rows: usize, cols: usize, gains: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || gains.len() != rows * cols {
            return Err(Error::invalid("channel draw shape mismatch"));
        }
        if gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::invalid("channel gains must be finite and non-negative"));
        }
        Ok(ChannelDraw { rows, cols, gains })
    }

    /// Deterministic channel: every entry equals `gain`.
    pub fn constant(rows: usize, cols: usize, gain: f64) -> Self {
        assert!(rows > 0 && cols > 0 && gain >= 0.0);
        ChannelDraw { rows, cols, gains: vec![gain; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.gains[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.gains[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gains
    }

    pub fn mean(&self) -> f64 {
        self.gains.iter().sum::<f64>() / self.gains.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.gains.iter().map(|g| (g - m) * (g - m)).sum::<f64>() / (self.gains.len() - 1).max(1) as f64
    }
}

/// Small-scale fading model used when the solver draws fresh realizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "gain")]
pub enum Fading {
    /// `Gamma(N_T, 1)` gains: Rayleigh fading after maximum-ratio combining.
    Rayleigh,
    /// Deterministic channel with every gain equal to the given value.
    Fixed(f64),
}

impl Fading {
    pub fn sample(&self, rows: usize, cols: usize, antennas: u32, rng: &mut Stream) -> Result<ChannelDraw> {
        match *self {
            Fading::Rayleigh => sample_small_scale(rows, cols, antennas, rng),
            Fading::Fixed(g) => {
                if rows == 0 || cols == 0 || !(g >= 0.0) {
                    return Err(Error::invalid("invalid fixed-gain draw"));
                }
                Ok(ChannelDraw::constant(rows, cols, g))
            }
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Fading::Rayleigh)
    }
}

/// Draws a `rows x cols` matrix of i.i.d. `Gamma(antennas, 1)` gains.
pub fn sample_small_scale(rows: usize, cols: usize, antennas: u32, rng: &mut Stream) -> Result<ChannelDraw> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("small-scale draw needs at least one row and column"));
    }
    if antennas == 0 {
        return Err(Error::invalid("antennas must be >= 1"));
    }
    let gamma = Gamma::new(f64::from(antennas), 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let gains = (0..rows * cols).map(|_| gamma.sample(rng)).collect();
    Ok(ChannelDraw { rows, cols, gains })
}
