//! Labelled dataset generation and the line-delimited file format.
//!
//! File layout: the first line is a [`DatasetHeader`], every following line
//! one [`Record`]. Record `i` is generated from its own seed derived from
//! the dataset seed and `i`, so any record can be replayed in isolation.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{greedy_min_total_with, FrozenPowerModel, PowerModel, Scenario};
use crate::channel::{derive_seed, large_scale_gain, stream, ChannelParams, Fading, Stream};
use crate::config::{Resolved, SystemConfig, TrafficRanges};
use crate::error::{Error, Result};
use crate::neural::TrainingSample;
use crate::qos::{Service, UserSpec};

pub const DATASET_FORMAT: &str = "qosnet-dataset";
pub const SCHEMA_VERSION: u32 = 1;

/// Everything that determines the generated records besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub system: SystemConfig,
    pub traffic: TrafficRanges,
    pub cell_radius: f64,
    pub min_distance: f64,
    pub shadowing_db: f64,
    /// Users per class `[tolerant, sensitive, urllc]`.
    pub users: [usize; 3],
    /// Frozen channel realizations per user used for labelling.
    pub draws: usize,
    pub fading: Fading,
}

impl GenerationSpec {
    pub fn from_resolved(r: &Resolved) -> Self {
        GenerationSpec {
            system: r.system.clone(),
            traffic: r.traffic.clone(),
            cell_radius: r.cell_radius,
            min_distance: ChannelParams::default().min_distance,
            shadowing_db: r.shadowing_db,
            users: r.users,
            draws: r.draws,
            fading: Fading::Rayleigh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.traffic.validate()?;
        self.channel().validate()?;
        if self.users.iter().sum::<usize>() == 0 || self.draws == 0 {
            return Err(Error::invalid("need at least one user and one draw"));
        }
        Ok(())
    }

    /// User classes in input order: all tolerant, then sensitive, then URLLC.
    pub fn services(&self) -> Vec<Service> {
        Service::ALL.iter().zip(self.users).flat_map(|(s, c)| std::iter::repeat_n(*s, c)).collect()
    }

    pub fn channel(&self) -> ChannelParams {
        ChannelParams {
            cell_radius: self.cell_radius,
            min_distance: self.min_distance,
            shadowing_sigma: self.shadowing_db,
            antennas: self.system.antennas,
            ..ChannelParams::default()
        }
    }

    /// Draws one user of class `svc`: placement, shadowing and traffic.
    pub fn draw_user(&self, svc: Service, rng: &mut Stream) -> Result<UserSpec> {
        let ch = self.channel();
        let d = ch.place_user(rng);
        let alpha = large_scale_gain(d, &ch, rng)?;
        let t = &self.traffic;
        let mut uni = |r: &crate::config::Range| if r.hi > r.lo { rng.random_range(r.lo..=r.hi) } else { r.lo };
        Ok(match svc {
            Service::Tolerant => UserSpec::tolerant(alpha, uni(&t.tolerant_rate)),
            Service::Sensitive => {
                let arrivals = uni(&t.sensitive_arrivals);
                let bits = uni(&t.sensitive_packet_bits);
                UserSpec::sensitive(alpha, arrivals, 1.0 / bits, t.sensitive_delay, t.sensitive_violation)
            }
            Service::Urllc => UserSpec::urllc(alpha, uni(&t.urllc_packet_bits), t.urllc_max_error),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub schema_version: u32,
    /// Digest of the system configuration the labels were computed under.
    pub config_digest: String,
    pub seed: u64,
    pub count: usize,
    /// Records with index below this belong to the training split.
    pub train_count: usize,
    pub services: Vec<Service>,
    pub spec: GenerationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub index: usize,
    pub seed: u64,
    pub feasible: bool,
    /// Solver failure, if labelling did not complete.
    pub error: Option<String>,
    pub sample: TrainingSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

impl Dataset {
    /// Feasible records of the training split.
    pub fn train(&self) -> Vec<TrainingSample> {
        self.split(true)
    }

    /// Feasible records of the held-out split.
    pub fn test(&self) -> Vec<TrainingSample> {
        self.split(false)
    }

    fn split(&self, train: bool) -> Vec<TrainingSample> {
        self.records
            .iter()
            .filter(|r| r.feasible && (r.index < self.header.train_count) == train)
            .map(|r| r.sample.clone())
            .collect()
    }

    pub fn feasible_fraction(&self) -> f64 {
        self.records.iter().filter(|r| r.feasible).count() as f64 / self.records.len().max(1) as f64
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let line = serde_json::to_string(&self.header).map_err(|e| fmt_err(e.to_string()))?;
        writeln!(w, "{line}")?;
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| fmt_err(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| fmt_err("empty file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| fmt_err(format!("header: {e}")))?;
        if header.format != DATASET_FORMAT {
            return Err(fmt_err(format!("unexpected format tag `{}`", header.format)));
        }
        if header.schema_version != SCHEMA_VERSION {
            return Err(fmt_err(format!("unsupported schema version {}", header.schema_version)));
        }
        if header.config_digest != header.spec.system.digest() {
            return Err(fmt_err("header digest does not match its system configuration".into()));
        }
        let mut records = Vec::with_capacity(header.count);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| fmt_err(format!("record {i}: {e}")))?;
            if rec.sample.services != header.services {
                return Err(fmt_err(format!("record {i} has a different user layout")));
            }
            records.push(rec);
        }
        if records.len() != header.count {
            return Err(fmt_err(format!("header announces {} records, found {}", header.count, records.len())));
        }
        Ok(Dataset { header, records })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn fmt_err(detail: String) -> Error {
    Error::Format { what: "dataset", detail }
}

/// Fraction of records assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.9;

pub fn generate_dataset(spec: &GenerationSpec, count: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::invalid("count must be >= 1"));
    }
    let records = (0..count).map(|i| generate_record(spec, seed, i)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.into(),
            schema_version: SCHEMA_VERSION,
            config_digest: spec.system.digest(),
            seed,
            count,
            train_count: (count as f64 * TRAIN_FRACTION).round() as usize,
            services: spec.services(),
            spec: spec.clone(),
        },
        records,
    })
}

/// Generates record `index`; equal to the record stored by
/// [`generate_dataset`] with the same spec and seed.
pub fn generate_record(spec: &GenerationSpec, dataset_seed: u64, index: usize) -> Result<Record> {
    let seed = derive_seed(dataset_seed, index as u64);
    let mut rng = stream(seed);
    let services = spec.services();
    let users = services.iter().map(|&s| spec.draw_user(s, &mut rng)).collect::<Result<Vec<_>>>()?;
    label(spec, users, index, seed, &mut rng)
}

/// Labels a scenario with the greedy total-power solution and tabulates
/// each active user's required power on `1..=N_max` subcarriers.
pub fn label(spec: &GenerationSpec, users: Vec<UserSpec>, index: usize, seed: u64, rng: &mut Stream) -> Result<Record> {
    let services: Vec<Service> = users.iter().map(UserSpec::service).collect();
    let alpha: Vec<f64> = users.iter().map(|u| u.alpha).collect();
    let feature: Vec<f64> = users.iter().map(UserSpec::feature).collect();
    let k = users.len();
    let scn = Scenario::new(users, spec.system.clone())?;
    let mut model = FrozenPowerModel::sample(&scn, spec.fading, spec.draws, rng)?;

    let outcome = greedy_min_total_with(&mut model, &spec.system).and_then(|r| {
        let mut required = vec![Vec::new(); k];
        for (u, curve) in required.iter_mut().enumerate() {
            if model.is_active(u) {
                *curve = (1..=spec.system.max_subcarriers)
                    .map(|n| model.required_power(u, n))
                    .collect::<Result<Vec<_>>>()?;
            }
        }
        Ok((r, required))
    });
    let (feasible, error, n_star, p_star, total_power, required) = match outcome {
        Ok((r, required)) => (r.feasible, None, r.alloc.n, r.alloc.p, r.total_power, required),
        Err(e) => (false, Some(e.to_string()), vec![0; k], vec![0.0; k], f64::INFINITY, vec![Vec::new(); k]),
    };
    Ok(Record {
        index,
        seed,
        feasible,
        error,
        sample: TrainingSample { services, alpha, feature, n_star, p_star, total_power, required },
    })
}

/// Regenerates record `index` of `header`'s dataset.
pub fn replay(header: &DatasetHeader, index: usize) -> Result<Record> {
    generate_record(&header.spec, header.seed, index)
}
