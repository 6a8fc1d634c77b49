//! Transfer learning for cascaded models: fine-tuning on a new scenario,
//! retargeting to another service class, and stacking single-class
//! bandwidth nets into a multi-class one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{derive_seed, stream};
use crate::config::{HiddenLayout, NetworkLayouts, SystemConfig};
use crate::error::{Error, Result};
use crate::eval::accuracy_eta;
use crate::neural::{
    bandwidth_data, power_data, power_trainer, relabelled, seeds, usable, CascadedModel, CascadedTrainer, Layer,
    MlpModel, Normalizer, TrainConfig, Trainer, TrainingSample, TAG_PHI_I,
};
use crate::qos::Service;
use crate::store::model_digest;

const TAG_HEAD: u64 = 0x4000;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferPlan {
    /// Leading layers of the bandwidth net held fixed.
    pub bandwidth_frozen: usize,
    /// Leading layers of every reused power net held fixed.
    pub power_frozen: usize,
    /// Restart the bandwidth net's output layer from random weights.
    pub replaced_output: bool,
    /// Refit the input statistics of the reused nets on the target samples.
    #[serde(default = "yes")]
    pub refit_inputs: bool,
    pub train: TrainConfig,
    /// Held-out accuracy is recorded every `eval_every` epochs, plus before
    /// the first and after the last; 0 records only those two.
    pub eval_every: usize,
}

impl TransferPlan {
    /// Freezes every hidden layer of the bandwidth net but the last and
    /// fine-tunes the power nets entirely.
    pub fn for_model(model: &CascadedModel, train: TrainConfig) -> Self {
        TransferPlan {
            bandwidth_frozen: model.phi_i.layers.len().saturating_sub(2),
            power_frozen: 0,
            replaced_output: false,
            refit_inputs: true,
            train,
            eval_every: 50,
        }
    }

    fn check(&self, model: &CascadedModel) -> Result<()> {
        if self.bandwidth_frozen >= model.phi_i.layers.len() {
            return Err(Error::InvalidPlan(format!(
                "bandwidth net has {} layers, cannot freeze {}",
                model.phi_i.layers.len(),
                self.bandwidth_frozen
            )));
        }
        for (svc, net) in &model.phi_ii {
            if self.power_frozen >= net.layers.len() {
                return Err(Error::InvalidPlan(format!("{svc} power net would be frozen entirely")));
            }
        }
        Ok(())
    }
}

/// Held-out accuracy after `epoch` fine-tuning epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub epoch: usize,
    pub eta: f64,
}

/// Where a transferred model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lineage {
    /// `fine-tune`, `retarget` or `stack`.
    pub method: String,
    /// Digests of the source models.
    pub sources: Vec<String>,
    pub bandwidth_frozen: usize,
    pub power_frozen: usize,
    pub replaced_output: bool,
    pub epochs: usize,
}

#[derive(Debug, Clone)]
pub struct Transferred {
    pub model: CascadedModel,
    pub trace: Vec<TracePoint>,
    pub lineage: Lineage,
}

/// First traced epoch at which the accuracy reaches `eta`.
pub fn epochs_to_reach(trace: &[TracePoint], eta: f64) -> Option<usize> {
    trace.iter().find(|p| p.eta >= eta).map(|p| p.epoch)
}

fn lineage(method: &str, sources: Vec<String>, plan: &TransferPlan) -> Lineage {
    Lineage {
        method: method.into(),
        sources,
        bandwidth_frozen: plan.bandwidth_frozen,
        power_frozen: plan.power_frozen,
        replaced_output: plan.replaced_output,
        epochs: plan.train.epochs,
    }
}

fn refit_norm(net: &mut MlpModel, xs: &[Vec<f64>]) -> Result<()> {
    net.input_norm = Normalizer::fit(xs.iter().map(|v| v.as_slice()), net.input_width())?;
    Ok(())
}

fn replace_output(net: &mut MlpModel, outputs: usize, cfg: &TrainConfig) {
    let last = net.layers.len() - 1;
    let inputs = net.layers[last].inputs;
    let mut rng = stream(derive_seed(cfg.seed, TAG_HEAD));
    net.layers[last] = Layer::random(inputs, outputs, cfg.init, &mut rng);
}

/// Bandwidth trainer starting from `source` on the target samples.
fn bandwidth_trainer(source: &MlpModel, samples: &[TrainingSample], plan: &TransferPlan) -> Result<Trainer> {
    let k = samples[0].users();
    let mut net = source.clone();
    if net.input_width() != 2 * k {
        return Err(Error::invalid(format!("bandwidth net expects {} users, samples have {k}", net.input_width() / 2)));
    }
    if plan.replaced_output {
        replace_output(&mut net, k, &plan.train);
    } else if net.output_width() != k {
        return Err(Error::InvalidPlan("output width changes; the output layer must be replaced".into()));
    }
    let (xs, ys) = bandwidth_data(&relabelled(samples, &plan.train));
    if plan.refit_inputs {
        refit_norm(&mut net, &xs)?;
    }
    let (_, batch_seed) = seeds(&plan.train, TAG_PHI_I);
    Trainer::new(net, xs, ys, &plan.train, plan.bandwidth_frozen, stream(batch_seed))
}

fn traced(
    mut t: CascadedTrainer,
    plan: &TransferPlan,
    held_out: &[TrainingSample],
    sys: &SystemConfig,
    mut feed: impl FnMut(&mut CascadedTrainer, usize) -> Result<()>,
) -> Result<(CascadedModel, Vec<TracePoint>)> {
    if held_out.is_empty() {
        return Err(Error::invalid("accuracy trace needs a held-out set"));
    }
    let mut trace = vec![TracePoint { epoch: 0, eta: accuracy_eta(&t.model(), held_out, sys)? }];
    let epochs = plan.train.epochs;
    for e in 1..=epochs {
        feed(&mut t, e)?;
        t.step()?;
        if (plan.eval_every > 0 && e % plan.eval_every == 0) || e == epochs {
            trace.push(TracePoint { epoch: e, eta: accuracy_eta(&t.model(), held_out, sys)? });
        }
    }
    Ok((t.into_model(), trace))
}

/// Trains a cascaded model from random weights while tracing held-out
/// accuracy the same way as the transfer methods; the baseline they are
/// compared against.
pub fn train_traced(
    samples: &[TrainingSample],
    layouts: &NetworkLayouts,
    n_max: u32,
    cfg: &TrainConfig,
    eval_every: usize,
    held_out: &[TrainingSample],
    sys: &SystemConfig,
) -> Result<(CascadedModel, Vec<TracePoint>)> {
    let t = CascadedTrainer::fresh(samples, layouts, n_max, cfg)?;
    let plan = TransferPlan {
        bandwidth_frozen: 0,
        power_frozen: 0,
        replaced_output: false,
        refit_inputs: false,
        train: cfg.clone(),
        eval_every,
    };
    traced(t, &plan, held_out, sys, |_, _| Ok(()))
}

/// Power trainers for the classes of `layout`: reused nets from `source`
/// (with `fresh` classes restarted), and nets of absent classes carried
/// along unchanged.
fn power_trainers(
    source: &CascadedModel,
    samples: &[TrainingSample],
    plan: &TransferPlan,
    fresh: Option<Service>,
) -> Result<(BTreeMap<Service, Trainer>, BTreeMap<Service, MlpModel>)> {
    let layout = &samples[0].services;
    let mut train = BTreeMap::new();
    let mut fixed = BTreeMap::new();
    for svc in Service::ALL {
        let present = layout.contains(&svc);
        match (source.phi_ii.get(&svc), present) {
            _ if present && fresh == Some(svc) => {
                let hidden = source.phi_ii.values().next().map(power_layout).unwrap_or(HiddenLayout::new(4, 20));
                train.insert(svc, power_trainer(samples, svc, &hidden, &plan.train, None, 0)?);
            }
            (Some(net), true) => {
                let t = power_trainer(samples, svc, &HiddenLayout::new(0, 0), &plan.train, Some(net.clone()), plan.power_frozen)?;
                let t = if plan.refit_inputs { t } else { t.with_norm(net.input_norm.clone()) };
                train.insert(svc, t);
            }
            (Some(net), false) => {
                fixed.insert(svc, net.clone());
            }
            (None, true) => return Err(Error::MissingSource(svc.name().into())),
            (None, false) => {}
        }
    }
    Ok((train, fixed))
}

fn power_layout(net: &MlpModel) -> HiddenLayout {
    let sizes = net.sizes();
    HiddenLayout::new(sizes.len() - 2, sizes.get(1).copied().unwrap_or(1))
}

/// Fine-tunes `model` on samples from a new scenario with the same user
/// layout. The input statistics are refitted on the new samples.
pub fn fine_tune(
    model: &CascadedModel,
    plan: &TransferPlan,
    train: &[TrainingSample],
    held_out: &[TrainingSample],
    sys: &SystemConfig,
) -> Result<Transferred> {
    plan.check(model)?;
    let samples = usable(train)?;
    if samples[0].services != model.services {
        return Err(Error::invalid("target samples use a different user layout"));
    }
    let bandwidth = bandwidth_trainer(&model.phi_i, samples, plan)?;
    let (power, fixed) = power_trainers(model, samples, plan, None)?;
    let mut t = CascadedTrainer::new(bandwidth, power, model.services.clone(), model.n_max);
    t.fixed = fixed;
    let (model_out, trace) = traced(t, plan, held_out, sys, |_, _| Ok(()))?;
    Ok(Transferred { model: model_out, trace, lineage: lineage("fine-tune", vec![model_digest(model)], plan) })
}

/// Online fine-tuning: every epoch first adds one newly labelled sample from
/// `next` to the training pool. Input statistics stay those of the source.
pub fn fine_tune_online(
    model: &CascadedModel,
    plan: &TransferPlan,
    mut next: impl FnMut(usize) -> Result<TrainingSample>,
    held_out: &[TrainingSample],
    sys: &SystemConfig,
) -> Result<Transferred> {
    plan.check(model)?;
    let mut phi_i = model.phi_i.clone();
    if plan.replaced_output {
        replace_output(&mut phi_i, model.services.len(), &plan.train);
    }
    let (_, batch_seed) = seeds(&plan.train, TAG_PHI_I);
    let bandwidth = Trainer::new(phi_i, Vec::new(), Vec::new(), &plan.train, plan.bandwidth_frozen, stream(batch_seed))?;
    let mut power = BTreeMap::new();
    for (svc, net) in &model.phi_ii {
        let (_, seed) = seeds(&plan.train, crate::neural::service_tag(*svc));
        power.insert(*svc, Trainer::new(net.clone(), Vec::new(), Vec::new(), &plan.train, plan.power_frozen, stream(seed))?);
    }
    let t = CascadedTrainer::new(bandwidth, power, model.services.clone(), model.n_max);
    let feed = |t: &mut CascadedTrainer, e: usize| -> Result<()> {
        let s = next(e)?;
        s.validate()?;
        if s.services != t.services {
            return Err(Error::invalid("online sample uses a different user layout"));
        }
        let one = std::slice::from_ref(&s);
        let (xs, ys) = bandwidth_data(&relabelled(one, &plan.train));
        for (x, y) in xs.into_iter().zip(ys) {
            t.bandwidth.push(x, y)?;
        }
        for (svc, tr) in t.power.iter_mut() {
            let (xs, ys) = power_data(one, *svc);
            for (x, y) in xs.into_iter().zip(ys) {
                tr.push(x, y)?;
            }
        }
        Ok(())
    };
    let (model_out, trace) = traced(t, plan, held_out, sys, feed)?;
    Ok(Transferred { model: model_out, trace, lineage: lineage("fine-tune-online", vec![model_digest(model)], plan) })
}

/// Reuses a cascaded model trained on one service class for `target`: the
/// bandwidth net is fine-tuned from the source (per `plan`) and the power
/// net of `target` starts from scratch.
pub fn retarget_service(
    source: &CascadedModel,
    target: Service,
    plan: &TransferPlan,
    train: &[TrainingSample],
    held_out: &[TrainingSample],
    sys: &SystemConfig,
) -> Result<Transferred> {
    plan.check(source)?;
    let samples = usable(train)?;
    if !samples[0].services.contains(&target) {
        return Err(Error::invalid(format!("target samples contain no {target} users")));
    }
    let bandwidth = bandwidth_trainer(&source.phi_i, samples, plan)?;
    let (power, fixed) = power_trainers(source, samples, plan, Some(target))?;
    let mut t = CascadedTrainer::new(bandwidth, power, samples[0].services.clone(), source.n_max);
    t.fixed = fixed;
    let (model, trace) = traced(t, plan, held_out, sys, |_, _| Ok(()))?;
    Ok(Transferred { model, trace, lineage: lineage("retarget", vec![model_digest(source)], plan) })
}

/// Builds a multi-class bandwidth net from single-class sources: the first
/// `reused` layers of every source are placed side by side (block-diagonal),
/// followed by a fresh head with the source's remaining hidden widths and
/// one output per user. `plan.bandwidth_frozen <= reused` of them stay
/// fixed. Power nets are taken from the sources unchanged.
pub fn stack_multi_service(
    sources: &BTreeMap<Service, CascadedModel>,
    reused: usize,
    plan: &TransferPlan,
    train: &[TrainingSample],
    held_out: &[TrainingSample],
    sys: &SystemConfig,
) -> Result<Transferred> {
    let samples = usable(train)?;
    let layout = samples[0].services.clone();
    let k = layout.len();
    let present: Vec<Service> = Service::ALL.into_iter().filter(|s| layout.contains(s)).collect();
    for svc in &present {
        if !sources.contains_key(svc) {
            return Err(Error::MissingSource(svc.name().into()));
        }
    }
    if present.len() == 1 {
        return fine_tune(&sources[&present[0]], plan, train, held_out, sys);
    }
    if plan.bandwidth_frozen > reused {
        return Err(Error::InvalidPlan("only reused layers can be frozen".into()));
    }

    let mut blocks = Vec::new();
    for svc in &present {
        let src = &sources[svc];
        let pos: Vec<usize> = (0..k).filter(|&i| layout[i] == *svc).collect();
        if src.services.len() != pos.len() || src.services.iter().any(|s| s != svc) {
            return Err(Error::invalid(format!("source for {svc} must be a {svc}-only model with {} users", pos.len())));
        }
        let hidden = src.phi_i.layers.len() - 1;
        if reused == 0 || reused > hidden {
            return Err(Error::InvalidPlan(format!("can reuse 1..={hidden} layers of the {svc} source, not {reused}")));
        }
        blocks.push((pos, &src.phi_i));
    }

    let mut layers = Vec::with_capacity(reused);
    for j in 0..reused {
        let inputs = if j == 0 { 2 * k } else { layers.last().map(|l: &Layer| l.outputs).unwrap() };
        let outputs: usize = blocks.iter().map(|(_, n)| n.layers[j].outputs).sum();
        let mut w = vec![0.0; inputs * outputs];
        let mut b = vec![0.0; outputs];
        let (mut row0, mut col0) = (0, 0);
        for (pos, net) in &blocks {
            let l = &net.layers[j];
            let ks = pos.len();
            for o in 0..l.outputs {
                b[row0 + o] = l.b[o];
                for i in 0..l.inputs {
                    let col = match j {
                        0 if i < ks => pos[i],
                        0 => k + pos[i - ks],
                        _ => col0 + i,
                    };
                    w[(row0 + o) * inputs + col] = l.w[o * l.inputs + i];
                }
            }
            row0 += l.outputs;
            col0 += l.inputs;
        }
        layers.push(Layer { inputs, outputs, w, b });
    }

    // per-feature statistics follow the features into their new positions
    let mut norm = Normalizer::identity(2 * k);
    for (pos, net) in &blocks {
        let ks = pos.len();
        for (u, &p) in pos.iter().enumerate() {
            for (src, dst) in [(u, p), (ks + u, k + p)] {
                norm.mean[dst] = net.input_norm.mean[src];
                norm.std[dst] = net.input_norm.std[src];
            }
        }
    }

    let src_sizes = blocks[0].1.sizes();
    let mut head_sizes = vec![layers.last().unwrap().outputs];
    head_sizes.extend(&src_sizes[reused + 1..src_sizes.len() - 1]);
    head_sizes.push(k);
    let head = MlpModel::new(&head_sizes, plan.train.init, &mut stream(derive_seed(plan.train.seed, TAG_HEAD)))?;
    layers.extend(head.layers);
    let phi_i = MlpModel { layers, input_norm: norm, init: plan.train.init };
    phi_i.validate()?;

    let (xs, ys) = bandwidth_data(&relabelled(samples, &plan.train));
    let (_, batch_seed) = seeds(&plan.train, TAG_PHI_I);
    let bandwidth = Trainer::new(phi_i, xs, ys, &plan.train, plan.bandwidth_frozen, stream(batch_seed))?;
    let n_max = sources[&present[0]].n_max;
    let mut t = CascadedTrainer::new(bandwidth, BTreeMap::new(), layout, n_max);
    for svc in &present {
        t.fixed.insert(*svc, sources[svc].power_net(*svc)?.clone());
    }
    let digests = present.iter().map(|s| model_digest(&sources[s])).collect();
    let (model, trace) = traced(t, plan, held_out, sys, |_, _| Ok(()))?;
    Ok(Transferred { model, trace, lineage: lineage("stack", digests, plan) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkLayouts;
    use crate::neural::train_cascaded;
    use rand::Rng;

    // Synthetic labels: required power falls as 1/n^2 and the label sits at
    // the user's demand in subcarriers.
    fn samples(services: &[Service], count: usize, seed: u64) -> Vec<TrainingSample> {
        let mut rng = stream(seed);
        (0..count)
            .map(|_| {
                let k = services.len();
                let alpha: Vec<f64> = (0..k).map(|_| 10f64.powf(-rng.random_range(9.0..11.0))).collect();
                let feature: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..4.0)).collect();
                let required: Vec<Vec<f64>> =
                    (0..k).map(|i| (1..=8).map(|n| 0.01 * feature[i] / (n * n) as f64).collect()).collect();
                let n_star: Vec<u32> = feature.iter().map(|f| f.round() as u32).collect();
                let p_star = (0..k).map(|i| required[i][n_star[i] as usize - 1]).collect();
                TrainingSample { services: services.to_vec(), alpha, feature, n_star, p_star, total_power: 0.0, required }
            })
            .collect()
    }

    fn small_layouts() -> NetworkLayouts {
        NetworkLayouts { fnn: HiddenLayout::new(2, 8), bandwidth: HiddenLayout::new(3, 8), power: HiddenLayout::new(2, 4) }
    }

    fn source(services: &[Service]) -> CascadedModel {
        let cfg = TrainConfig { epochs: 200, batch_size: 16, ..TrainConfig::default() };
        train_cascaded(&samples(services, 60, 1), &small_layouts(), 16, &cfg).unwrap()
    }

    fn plan(model: &CascadedModel, epochs: usize) -> TransferPlan {
        TransferPlan::for_model(model, TrainConfig { epochs, batch_size: 16, seed: 9, ..TrainConfig::default() })
    }

    #[test]
    fn zero_epochs_keeps_weights() {
        use Service::*;
        let src = source(&[Tolerant, Urllc]);
        let data = samples(&[Tolerant, Urllc], 30, 2);
        let mut p = plan(&src, 0);
        let out = fine_tune(&src, &p, &data, &data[..10], &SystemConfig::default()).unwrap();
        assert_eq!(out.model.phi_i.layers, src.phi_i.layers);
        assert_eq!(out.trace.len(), 1);
        p.refit_inputs = false;
        let out = fine_tune(&src, &p, &data, &data[..10], &SystemConfig::default()).unwrap();
        assert_eq!(out.model, src);
        assert_eq!(out.lineage.sources, vec![model_digest(&src)]);
    }

    #[test]
    fn frozen_layers_stay_bit_identical() {
        use Service::*;
        let src = source(&[Tolerant, Tolerant]);
        let data = samples(&[Tolerant, Tolerant], 40, 3);
        let p = plan(&src, 1000);
        assert_eq!(p.bandwidth_frozen, 2);
        let out = fine_tune(&src, &p, &data, &data[..8], &SystemConfig::default()).unwrap();
        assert_eq!(out.model.phi_i.layers[..2], src.phi_i.layers[..2]);
        assert_ne!(out.model.phi_i.layers[2], src.phi_i.layers[2]);
        assert_ne!(out.model.phi_ii[&Tolerant].layers[0], src.phi_ii[&Tolerant].layers[0]);
        assert_eq!(out.trace.len(), 1000 / 50 + 1);
    }

    #[test]
    fn freezing_everything_is_rejected() {
        use Service::*;
        let src = source(&[Tolerant]);
        let data = samples(&[Tolerant], 10, 4);
        let mut p = plan(&src, 5);
        p.bandwidth_frozen = src.phi_i.layers.len();
        let err = fine_tune(&src, &p, &data, &data, &SystemConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "invalid-plan");
    }

    #[test]
    fn retarget_trains_a_fresh_power_net() {
        use Service::*;
        let src = source(&[Tolerant, Tolerant]);
        let data = samples(&[Urllc, Urllc], 40, 5);
        let out = retarget_service(&src, Urllc, &plan(&src, 50), &data, &data[..8], &SystemConfig::default()).unwrap();
        assert!(out.model.phi_ii.contains_key(&Urllc));
        assert_eq!(out.model.phi_i.layers[0], src.phi_i.layers[0]);
        assert_eq!(out.model.services, vec![Urllc, Urllc]);
        assert_eq!(out.lineage.method, "retarget");
    }

    #[test]
    fn stacking_needs_every_source() {
        use Service::*;
        let mut sources = BTreeMap::new();
        sources.insert(Tolerant, source(&[Tolerant]));
        let data = samples(&[Tolerant, Urllc], 10, 6);
        let p = plan(&sources[&Tolerant], 5);
        let err = stack_multi_service(&sources, 2, &p, &data, &data, &SystemConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "missing-source");
    }

    #[test]
    fn stacked_blocks_reproduce_source_activations() {
        use Service::*;
        let mut sources = BTreeMap::new();
        sources.insert(Tolerant, source(&[Tolerant, Tolerant]));
        sources.insert(Urllc, source(&[Urllc]));
        let layout = [Urllc, Tolerant, Tolerant];
        let data = samples(&layout, 20, 7);
        let mut p = plan(&sources[&Tolerant], 0);
        p.bandwidth_frozen = 2;
        let out = stack_multi_service(&sources, 2, &p, &data, &data[..5], &SystemConfig::default()).unwrap();
        assert_eq!(out.model.phi_i.sizes(), vec![6, 16, 16, 8, 3]);
        let s = &data[0];
        let mixed = out.model.phi_i.forward_trace(&s.x()).acts[2].clone();
        let t = s.permuted(&[1, 2]);
        let t = TrainingSample { services: vec![Tolerant, Tolerant], ..t };
        let tol = sources[&Tolerant].phi_i.forward_trace(&t.x()).acts[2].clone();
        let u = s.permuted(&[0]);
        let url = sources[&Urllc].phi_i.forward_trace(&u.x()).acts[2].clone();
        let expect: Vec<f64> = tol.iter().chain(&url).copied().collect();
        for (a, b) in mixed.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(out.model.phi_ii[&Urllc], sources[&Urllc].phi_ii[&Urllc]);
    }

    #[test]
    fn online_mode_adds_one_sample_per_epoch() {
        use Service::*;
        let src = source(&[Tolerant, Urllc]);
        let pool = samples(&[Tolerant, Urllc], 30, 8);
        let mut used = 0;
        let p = plan(&src, 30);
        let out = fine_tune_online(
            &src,
            &p,
            |e| {
                used += 1;
                Ok(pool[e - 1].clone())
            },
            &pool[..5],
            &SystemConfig::default(),
        )
        .unwrap();
        assert_eq!(used, 30);
        assert_eq!(out.model.phi_i.layers[..2], src.phi_i.layers[..2]);
    }
}
