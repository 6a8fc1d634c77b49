//! From-scratch neural approximators of the optimal allocation policy: an
//! end-to-end FNN baseline and the cascaded bandwidth/power structure.

mod mlp;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use mlp::{Init, Layer, MlpModel, Normalizer};
pub use train::{backward_and_adam_step, fit, loss_and_grad, loss_log_mse, AdamState, Regression, TrainConfig, Trainer};

use crate::channel::{derive_seed, stream};
use crate::config::{HiddenLayout, NetworkLayouts};
use crate::error::{Error, Result};
use crate::qos::Service;

/// Power unit of the network targets: powers are learned as `log1p(P / 1 mW)`.
pub const POWER_UNIT: f64 = 1e-3;

/// One labelled scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub services: Vec<Service>,
    /// Large-scale gains, linear.
    pub alpha: Vec<f64>,
    /// Traffic feature `c_k`; zero for idle users.
    pub feature: Vec<f64>,
    pub n_star: Vec<u32>,
    #[serde(with = "nullable::vec")]
    pub p_star: Vec<f64>,
    /// Total power of the labelled allocation, W.
    #[serde(with = "nullable::scalar")]
    pub total_power: f64,
    /// `required[k][n - 1]` is user k's minimum power on n subcarriers
    /// (infinite above the budget); empty for idle users.
    #[serde(with = "nullable::nested")]
    pub required: Vec<Vec<f64>>,
}

impl TrainingSample {
    pub fn users(&self) -> usize {
        self.services.len()
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.feature[k] > 0.0
    }

    /// Network input `[alpha_1..alpha_K (dB), c_1..c_K]`.
    pub fn x(&self) -> Vec<f64> {
        let mut x: Vec<f64> = self.alpha.iter().map(|a| 10.0 * a.log10()).collect();
        x.extend(&self.feature);
        x
    }

    /// Input of the per-service power net for user `k` on `n` subcarriers.
    pub fn power_input(&self, k: usize, n: f64) -> [f64; 3] {
        [n, 10.0 * self.alpha[k].log10(), self.feature[k]]
    }

    /// Required power of user `k` on `n` subcarriers (0 for `n = 0` on an
    /// idle user, infinite for an active user without subcarriers).
    pub fn required_power(&self, k: usize, n: u32) -> f64 {
        if !self.is_active(k) {
            return 0.0;
        }
        if n == 0 {
            return f64::INFINITY;
        }
        self.required[k].get(n as usize - 1).copied().unwrap_or(f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.services.len();
        if [self.alpha.len(), self.feature.len(), self.n_star.len(), self.p_star.len(), self.required.len()]
            .iter()
            .any(|&l| l != k)
        {
            return Err(Error::invalid("sample fields differ in user count"));
        }
        Ok(())
    }
}

/// JSON has no infinities; non-finite powers are stored as `null`.
mod nullable {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    fn out(x: f64) -> Option<f64> {
        x.is_finite().then_some(x)
    }

    fn back(x: Option<f64>) -> f64 {
        x.unwrap_or(f64::INFINITY)
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            out(*v).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(back(Option::deserialize(d)?))
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| out(*x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(back).collect())
        }
    }

    pub mod nested {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
            let o: Vec<Vec<Option<f64>>> = v.iter().map(|c| c.iter().map(|x| out(*x)).collect()).collect();
            o.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
            let o: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
            Ok(o.into_iter().map(|c| c.into_iter().map(back).collect()).collect())
        }
    }
}

/// Rounds half up, floors at zero, then while the sum exceeds `n_max`
/// decrements the entry whose fractional value lies closest above its next
/// lower integer (ties: the highest index gives way).
pub fn quantize_bandwidth(fractional: &[f64], n_max: u32) -> Vec<u32> {
    quantize_with_floor(fractional, &vec![0; fractional.len()], n_max)
}

/// [`quantize_bandwidth`] with per-entry lower bounds that the repair step
/// never crosses.
pub fn quantize_with_floor(fractional: &[f64], floor: &[u32], n_max: u32) -> Vec<u32> {
    let mut n: Vec<u32> = fractional
        .iter()
        .zip(floor)
        .map(|(x, f)| {
            let r = if x.is_finite() { (x + 0.5).floor().max(0.0) } else { 0.0 };
            (r.min(f64::from(u32::MAX)) as u32).max(*f)
        })
        .collect();
    let mut total: u64 = n.iter().map(|&v| u64::from(v)).sum();
    while total > u64::from(n_max) {
        let mut pick: Option<(usize, f64)> = None;
        for (k, (&v, x)) in n.iter().zip(fractional).enumerate() {
            if v <= floor[k] {
                continue;
            }
            let slack = x - (f64::from(v) - 1.0);
            if pick.is_none_or(|(_, s)| slack <= s) {
                pick = Some((k, slack));
            }
        }
        let Some((k, _)) = pick else { break };
        n[k] -= 1;
        total -= 1;
    }
    n
}

/// Allocation proposed by a learned policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub n_fractional: Vec<f64>,
    pub n: Vec<u32>,
    pub p: Vec<f64>,
}

pub trait Policy {
    fn predict(&self, sample: &TrainingSample) -> Result<Prediction>;
}

fn decode_power(z: f64) -> f64 {
    (z.exp_m1() * POWER_UNIT).max(0.0)
}

fn encode_power(p: f64) -> f64 {
    (p / POWER_UNIT).ln_1p()
}

/// Rounded allocation with at least one subcarrier per active user.
fn quantize_for(sample: &TrainingSample, frac: &[f64], n_max: u32) -> Vec<u32> {
    let floor: Vec<u32> = (0..sample.users()).map(|k| u32::from(sample.is_active(k))).collect();
    let frac: Vec<f64> = frac.iter().enumerate().map(|(k, &v)| if sample.is_active(k) { v } else { 0.0 }).collect();
    quantize_with_floor(&frac, &floor, n_max)
}

/// One network mapping the features to `[log1p(N); log1p(P / 1 mW)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnModel {
    pub net: MlpModel,
    pub services: Vec<Service>,
    pub n_max: u32,
}

impl FnnModel {
    pub fn flop_count(&self) -> u64 {
        self.net.flop_count()
    }
}

impl Policy for FnnModel {
    fn predict(&self, s: &TrainingSample) -> Result<Prediction> {
        check_layout(&self.services, s)?;
        let k = s.users();
        let out = self.net.forward(&s.x())?;
        let frac: Vec<f64> = out[..k].iter().map(|z| z.exp_m1().max(0.0)).collect();
        let n = quantize_for(s, &frac, self.n_max);
        let p = (0..k).map(|i| if s.is_active(i) { decode_power(out[k + i]) } else { 0.0 }).collect();
        Ok(Prediction { n_fractional: frac, n, p })
    }
}

/// Bandwidth net followed by one power net per service class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadedModel {
    pub phi_i: MlpModel,
    pub phi_ii: BTreeMap<Service, MlpModel>,
    pub services: Vec<Service>,
    pub n_max: u32,
}

impl CascadedModel {
    pub fn validate(&self) -> Result<()> {
        self.phi_i.validate()?;
        if self.phi_i.output_width() != self.services.len() || self.phi_i.input_width() != 2 * self.services.len() {
            return Err(Error::invalid("bandwidth net width does not match the user layout"));
        }
        for (svc, net) in &self.phi_ii {
            net.validate()?;
            if net.input_width() != 3 || net.output_width() != 1 {
                return Err(Error::invalid(format!("{svc} power net must map 3 inputs to 1 output")));
            }
        }
        Ok(())
    }

    /// Multiplications of one bandwidth-net pass plus one pass of each
    /// per-service power net.
    pub fn flop_count(&self) -> u64 {
        self.phi_i.flop_count() + self.phi_ii.values().map(MlpModel::flop_count).sum::<u64>()
    }

    /// Instrumented counterpart of [`CascadedModel::flop_count`].
    pub fn count_multiplications(&self, sample: &TrainingSample) -> Result<u64> {
        let mut c = 0;
        self.phi_i.forward_counted(&sample.x(), &mut c)?;
        for net in self.phi_ii.values() {
            net.forward_counted(&[1.0, 0.0, 0.0], &mut c)?;
        }
        Ok(c)
    }

    pub fn power_net(&self, service: Service) -> Result<&MlpModel> {
        self.phi_ii.get(&service).ok_or_else(|| Error::MissingSource(service.name().into()))
    }

    /// Predicted power of user `k` on `n` subcarriers.
    pub fn power(&self, s: &TrainingSample, k: usize, n: u32) -> Result<f64> {
        if !s.is_active(k) {
            return Ok(0.0);
        }
        let out = self.power_net(s.services[k])?.forward(&s.power_input(k, f64::from(n)))?;
        Ok(decode_power(out[0]))
    }
}

impl Policy for CascadedModel {
    fn predict(&self, s: &TrainingSample) -> Result<Prediction> {
        check_layout(&self.services, s)?;
        let out = self.phi_i.forward(&s.x())?;
        let frac: Vec<f64> = out.iter().map(|z| z.exp_m1().max(0.0)).collect();
        let n = quantize_for(s, &frac, self.n_max);
        let p = (0..s.users()).map(|k| self.power(s, k, n[k])).collect::<Result<Vec<_>>>()?;
        Ok(Prediction { n_fractional: frac, n, p })
    }
}

/// Multiplication count of a cascaded structure with `service_types`
/// identically shaped power nets.
pub fn cascaded_flops(phi_i: &[usize], phi_ii: &[usize], service_types: u64) -> u64 {
    let mlp = |s: &[usize]| s.windows(2).map(|w| (w[0] * w[1]) as u64).sum::<u64>();
    mlp(phi_i) + service_types * mlp(phi_ii)
}

fn check_layout(services: &[Service], s: &TrainingSample) -> Result<()> {
    if services != s.services.as_slice() {
        return Err(Error::invalid("sample user layout differs from the model's"));
    }
    Ok(())
}

pub(crate) fn layer_sizes(input: usize, hidden: &HiddenLayout, output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(hidden.sizes());
    s.push(output);
    s
}

pub(crate) fn usable<'a>(samples: &'a [TrainingSample]) -> Result<&'a [TrainingSample]> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    for s in samples {
        s.validate()?;
        if s.services != samples[0].services {
            return Err(Error::invalid("samples mix user layouts"));
        }
    }
    Ok(samples)
}

/// Bandwidth-net regression set: `x -> log1p(N*)`.
pub fn bandwidth_data(samples: &[TrainingSample]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let xs = samples.iter().map(TrainingSample::x).collect();
    let ys = samples.iter().map(|s| s.n_star.iter().map(|&n| f64::from(n).ln_1p()).collect()).collect();
    (xs, ys)
}

/// Per-user power-net regression set for one class:
/// `[N*_k, alpha_k (dB), c_k] -> log1p(P*_k / 1 mW)`.
pub fn power_data(samples: &[TrainingSample], service: Service) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in samples {
        for k in 0..s.users() {
            if s.services[k] == service && s.is_active(k) {
                xs.push(s.power_input(k, f64::from(s.n_star[k])).to_vec());
                ys.push(vec![encode_power(s.p_star[k])]);
            }
        }
    }
    (xs, ys)
}

impl TrainingSample {
    /// Copy with users reordered: user `k` of the copy is user `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> TrainingSample {
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        TrainingSample {
            services: order.iter().map(|&i| self.services[i]).collect(),
            alpha: pick(&self.alpha),
            feature: pick(&self.feature),
            n_star: order.iter().map(|&i| self.n_star[i]).collect(),
            p_star: pick(&self.p_star),
            total_power: self.total_power,
            required: order.iter().map(|&i| self.required[i].clone()).collect(),
        }
    }
}

const MAX_RELABELLINGS: usize = 64;

/// User orders that keep every user inside its service class: all
/// combinations of cyclic shifts within each class, or, when those exceed
/// 64, the shifts applied to all classes at once.
pub fn class_relabellings(services: &[Service]) -> Vec<Vec<usize>> {
    let groups: Vec<Vec<usize>> = Service::ALL
        .iter()
        .map(|svc| (0..services.len()).filter(|&k| services[k] == *svc).collect::<Vec<_>>())
        .filter(|g| g.len() > 1)
        .collect();
    let shifted = |shifts: &[usize]| {
        let mut order: Vec<usize> = (0..services.len()).collect();
        for (g, &r) in groups.iter().zip(shifts) {
            for (j, &k) in g.iter().enumerate() {
                order[k] = g[(j + r) % g.len()];
            }
        }
        order
    };
    let product = groups.iter().try_fold(1usize, |acc, g| acc.checked_mul(g.len()).filter(|&p| p <= MAX_RELABELLINGS));
    match product {
        Some(total) => (0..total)
            .map(|mut code| {
                let shifts: Vec<usize> = groups
                    .iter()
                    .map(|g| {
                        let r = code % g.len();
                        code /= g.len();
                        r
                    })
                    .collect();
                shifted(&shifts)
            })
            .collect(),
        None => {
            let widest = groups.iter().map(Vec::len).max().unwrap_or(1);
            (0..widest).map(|r| shifted(&vec![r; groups.len()])).collect()
        }
    }
}

pub(crate) fn relabelled(samples: &[TrainingSample], cfg: &TrainConfig) -> Vec<TrainingSample> {
    if !cfg.exchange_users {
        return samples.to_vec();
    }
    let orders = class_relabellings(&samples[0].services);
    samples.iter().flat_map(|s| orders.iter().map(|o| s.permuted(o))).collect()
}

/// Network with input statistics fitted on `xs`.
pub fn fresh_net(sizes: &[usize], xs: &[Vec<f64>], init: Init, seed: u64) -> Result<MlpModel> {
    let mut net = MlpModel::new(sizes, init, &mut stream(seed))?;
    net.input_norm = Normalizer::fit(xs.iter().map(|v| v.as_slice()), sizes[0])?;
    Ok(net)
}

pub(crate) const TAG_PHI_I: u64 = 0x1000;
const TAG_PHI_II: u64 = 0x2000;
const TAG_FNN: u64 = 0x3000;
const TAG_INIT: u64 = 0x10;
const TAG_BATCH: u64 = 0x20;

pub(crate) fn seeds(cfg: &TrainConfig, tag: u64) -> (u64, u64) {
    let base = derive_seed(cfg.seed, tag);
    (derive_seed(base, TAG_INIT), derive_seed(base, TAG_BATCH))
}

pub(crate) fn service_tag(s: Service) -> u64 {
    TAG_PHI_II
        + match s {
            Service::Tolerant => 1,
            Service::Sensitive => 2,
            Service::Urllc => 3,
        }
}


/// Trains the FNN baseline on all samples.
pub fn train_fnn(samples: &[TrainingSample], layout: &HiddenLayout, n_max: u32, cfg: &TrainConfig) -> Result<FnnModel> {
    let samples = usable(samples)?;
    let k = samples[0].users();
    let expanded = relabelled(samples, cfg);
    let xs: Vec<Vec<f64>> = expanded.iter().map(TrainingSample::x).collect();
    let ys: Vec<Vec<f64>> = expanded
        .iter()
        .map(|s| {
            let mut y: Vec<f64> = s.n_star.iter().map(|&n| f64::from(n).ln_1p()).collect();
            y.extend(s.p_star.iter().map(|&p| encode_power(p)));
            y
        })
        .collect();
    let (init_seed, batch_seed) = seeds(cfg, TAG_FNN);
    let mut net = fresh_net(&layer_sizes(2 * k, layout, 2 * k), &xs, cfg.init, init_seed)?;
    fit(&mut net, &Regression { inputs: &xs, targets: &ys }, cfg, 0, &mut stream(batch_seed), |_, _| Ok(()))?;
    Ok(FnnModel { net, services: samples[0].services.clone(), n_max })
}

/// Joint trainer of a cascaded model: every epoch steps the bandwidth net
/// and each power net once.
pub struct CascadedTrainer {
    pub bandwidth: Trainer,
    pub power: BTreeMap<Service, Trainer>,
    /// Power nets carried along without training.
    pub fixed: BTreeMap<Service, MlpModel>,
    pub services: Vec<Service>,
    pub n_max: u32,
    epochs: usize,
}

impl CascadedTrainer {
    pub fn new(bandwidth: Trainer, power: BTreeMap<Service, Trainer>, services: Vec<Service>, n_max: u32) -> Self {
        CascadedTrainer { bandwidth, power, fixed: BTreeMap::new(), services, n_max, epochs: 0 }
    }

    /// Fresh nets for every class present in `samples`.
    pub fn fresh(samples: &[TrainingSample], layouts: &NetworkLayouts, n_max: u32, cfg: &TrainConfig) -> Result<Self> {
        let samples = usable(samples)?;
        let k = samples[0].users();
        let (xs, ys) = bandwidth_data(&relabelled(samples, cfg));
        let (init_seed, batch_seed) = seeds(cfg, TAG_PHI_I);
        let phi_i = fresh_net(&layer_sizes(2 * k, &layouts.bandwidth, k), &xs, cfg.init, init_seed)?;
        let bandwidth = Trainer::new(phi_i, xs, ys, cfg, 0, stream(batch_seed))?;
        let mut power = BTreeMap::new();
        for svc in Service::ALL {
            if samples[0].services.contains(&svc) {
                power.insert(svc, power_trainer(samples, svc, &layouts.power, cfg, None, 0)?);
            }
        }
        Ok(Self::new(bandwidth, power, samples[0].services.clone(), n_max))
    }

    pub fn step(&mut self) -> Result<()> {
        self.bandwidth.step()?;
        // a class without examples yet (online mode) waits for its first user
        for t in self.power.values_mut().filter(|t| !t.is_empty()) {
            t.step()?;
        }
        self.epochs += 1;
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Snapshot of the nets as a usable model.
    pub fn model(&self) -> CascadedModel {
        CascadedModel {
            phi_i: self.bandwidth.model.clone(),
            phi_ii: self
                .fixed
                .iter()
                .map(|(s, m)| (*s, m.clone()))
                .chain(self.power.iter().map(|(s, t)| (*s, t.model.clone())))
                .collect(),
            services: self.services.clone(),
            n_max: self.n_max,
        }
    }

    pub fn into_model(self) -> CascadedModel {
        CascadedModel {
            phi_i: self.bandwidth.model,
            phi_ii: self.fixed.into_iter().chain(self.power.into_iter().map(|(s, t)| (s, t.model))).collect(),
            services: self.services,
            n_max: self.n_max,
        }
    }
}

/// Trainer of one class's power net, starting from `start` (a fresh net
/// when `None`) with the first `frozen` layers fixed.
pub fn power_trainer(
    samples: &[TrainingSample],
    svc: Service,
    hidden: &HiddenLayout,
    cfg: &TrainConfig,
    start: Option<MlpModel>,
    frozen: usize,
) -> Result<Trainer> {
    let (xs, ys) = power_data(samples, svc);
    if xs.is_empty() {
        return Err(Error::invalid(format!("no active {svc} users in the training set")));
    }
    let (init_seed, batch_seed) = seeds(cfg, service_tag(svc));
    let net = match start {
        Some(mut net) => {
            net.input_norm = Normalizer::fit(xs.iter().map(|v| v.as_slice()), 3)?;
            net
        }
        None => fresh_net(&layer_sizes(3, hidden, 1), &xs, cfg.init, init_seed)?,
    };
    Trainer::new(net, xs, ys, cfg, frozen, stream(batch_seed))
}

/// Trains the bandwidth net and one power net per service class present.
pub fn train_cascaded(
    samples: &[TrainingSample],
    layouts: &NetworkLayouts,
    n_max: u32,
    cfg: &TrainConfig,
) -> Result<CascadedModel> {
    let mut t = CascadedTrainer::fresh(samples, layouts, n_max, cfg)?;
    for _ in 0..cfg.epochs {
        t.step()?;
    }
    Ok(t.into_model())
}

/// Trains a fresh power net for one class.
pub fn train_power_net(samples: &[TrainingSample], svc: Service, hidden: &HiddenLayout, cfg: &TrainConfig) -> Result<MlpModel> {
    let mut t = power_trainer(samples, svc, hidden, cfg, None, 0)?;
    for _ in 0..cfg.epochs {
        t.step()?;
    }
    Ok(t.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_bandwidth(&[2.0, 3.0], 10), vec![2, 3]);
        assert_eq!(quantize_bandwidth(&[2.6, 2.6], 5), vec![3, 2]);
        assert_eq!(quantize_bandwidth(&[0.0, 0.0, 0.0], 4), vec![0, 0, 0]);
        assert_eq!(quantize_bandwidth(&[0.5, 1.49], 9), vec![1, 1]);
        // 3.9 -> 4 keeps its rounding better than 2.5 -> 3
        assert_eq!(quantize_bandwidth(&[2.5, 3.9], 6), vec![2, 4]);
    }

    #[test]
    fn quantize_respects_floor() {
        assert_eq!(quantize_with_floor(&[0.1, 0.2, 5.0], &[1, 1, 1], 4), vec![1, 1, 2]);
    }

    #[test]
    fn relabellings_stay_within_classes() {
        use Service::*;
        let svc = [Tolerant, Urllc, Tolerant, Sensitive, Urllc];
        let orders = class_relabellings(&svc);
        assert_eq!(orders.len(), 4);
        assert_eq!(orders[0], vec![0, 1, 2, 3, 4]);
        for o in &orders {
            assert!(o.iter().enumerate().all(|(k, &i)| svc[k] == svc[i]));
        }
        let big = vec![Tolerant; 70];
        assert_eq!(class_relabellings(&big).len(), 70);
        let wide: Vec<Service> = (0..60).map(|k| Service::ALL[k % 3]).collect();
        assert_eq!(class_relabellings(&wide).len(), 20);
    }

    #[test]
    fn cascaded_flops_formula() {
        assert_eq!(cascaded_flops(&[3, 4, 2], &[3, 2, 1], 3), 20 + 3 * 8);
    }

    fn sample() -> TrainingSample {
        TrainingSample {
            services: vec![Service::Tolerant, Service::Urllc],
            alpha: vec![1e-12, 1e-11],
            feature: vec![5e5, 0.0],
            n_star: vec![3, 0],
            p_star: vec![0.01, 0.0],
            total_power: 0.2,
            required: vec![vec![f64::INFINITY, 0.05, 0.01], vec![]],
        }
    }

    #[test]
    fn sample_round_trip_keeps_infinities() {
        let s = sample();
        let text = serde_json::to_string(&s).unwrap();
        let back: TrainingSample = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(s.required_power(0, 1), f64::INFINITY);
        assert_eq!(s.required_power(1, 0), 0.0);
        assert_eq!(s.x(), vec![-120.0, -110.0, 5e5, 0.0]);
    }
}
