//! Minimum-power OFDMA bandwidth and power allocation for delay-tolerant,
//! delay-sensitive and URLLC users, with the neural approximators, transfer
//! learning and evaluation built on top of it.

pub mod allocator;
pub mod channel;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod neural;
pub mod qos;
pub mod solver;
pub mod store;
pub mod transfer;

pub use allocator::{AllocationResult, Objective, Scenario};
pub use channel::Fading;
pub use config::{ConfigDoc, HiddenLayout, NetworkLayouts, Resolved, SystemConfig, TrafficRanges};
pub use dataset::{Dataset, GenerationSpec};
pub use error::{Error, Result};
pub use neural::{CascadedModel, FnnModel, MlpModel, Policy, TrainConfig, TrainingSample};
pub use qos::{Allocation, Service, UserSpec};
pub use solver::SolverConfig;
pub use store::{ModelDocument, StoredModel};
pub use transfer::TransferPlan;
