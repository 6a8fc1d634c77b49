use serde::{Deserialize, Serialize};

use super::mlp::{shuffle, Init, Layer, MlpModel};
use crate::channel::Stream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Minibatch size; one optimizer step per epoch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub init: Init,
    pub seed: u64,
    /// Train the multi-user nets on every relabelling of users within a
    /// service class as well.
    #[serde(default = "yes")]
    pub exchange_users: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 1e-3,
            epochs: 3000,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            init: Init::He,
            seed: 0,
            exchange_users: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::invalid("learning rate and Adam epsilon must be positive"));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid("Adam betas must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Mean of `(log(1 + label) - log(1 + pred))^2` over all entries.
pub fn loss_log_mse(pred: &[f64], label: &[f64]) -> Result<f64> {
    if pred.len() != label.len() || pred.is_empty() {
        return Err(Error::invalid("prediction and label widths differ"));
    }
    let mut s = 0.0;
    for (p, l) in pred.iter().zip(label) {
        if !(*p > -1.0) || !(*l > -1.0) {
            return Err(Error::invalid("log loss needs entries > -1"));
        }
        let d = l.ln_1p() - p.ln_1p();
        s += d * d;
    }
    Ok(s / pred.len() as f64)
}

/// Adam first/second moment accumulators, shaped like the model.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        AdamState { step: 0, m: model.zero_grads(), v: model.zero_grads() }
    }
}

/// Mean squared error in the network's output space, which holds
/// `log1p`-transformed targets, so this equals [`loss_log_mse`] on the
/// decoded values. Layers `0..frozen` are not updated. Returns the batch
/// loss before the update.
pub fn backward_and_adam_step(
    model: &mut MlpModel,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    cfg: &TrainConfig,
    state: &mut AdamState,
    frozen: usize,
) -> Result<f64> {
    let (loss, grads) = loss_and_grad(model, inputs, targets)?;
    if grads.iter().any(|g| g.w.iter().chain(&g.b).any(|v| !v.is_finite())) || !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite gradient at step {}", state.step + 1)));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, layer) in model.layers.iter_mut().enumerate().skip(frozen) {
        let g = &grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for j in 0..p.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
            }
        };
        update(&mut layer.w, &g.w, &mut m.w, &mut v.w);
        update(&mut layer.b, &g.b, &mut m.b, &mut v.b);
    }
    Ok(loss)
}

/// Batch MSE and its gradient with respect to every parameter.
pub fn loss_and_grad(model: &MlpModel, inputs: &[&[f64]], targets: &[&[f64]]) -> Result<(f64, Vec<Layer>)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::invalid("batch inputs and targets differ in length"));
    }
    let width = model.output_width();
    let scale = 1.0 / (inputs.len() * width) as f64;
    let mut grads = model.zero_grads();
    let mut loss = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        if x.len() != model.input_width() || y.len() != width {
            return Err(Error::invalid("sample width does not match the network"));
        }
        let trace = model.forward_trace(x);
        let out = trace.acts.last().unwrap();
        let d: Vec<f64> = out.iter().zip(*y).map(|(o, t)| o - t).collect();
        loss += d.iter().map(|v| v * v).sum::<f64>() * scale;
        let d_out: Vec<f64> = d.iter().map(|v| 2.0 * v * scale).collect();
        model.backward(&trace, &d_out, &mut grads);
    }
    Ok((loss, grads))
}

/// Regression data in network space.
pub struct Regression<'a> {
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [Vec<f64>],
}

/// Runs `cfg.epochs` minibatch Adam steps (minibatches drawn without
/// replacement from reshuffled passes over the data). `on_epoch(e, model)`
/// is called after every step `e = 1..=epochs`. Returns the loss trace.
/// Minibatch Adam over an owned regression set, one step per epoch.
pub struct Trainer {
    pub model: MlpModel,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    cfg: TrainConfig,
    frozen: usize,
    state: AdamState,
    rng: Stream,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(
        model: MlpModel,
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        cfg: &TrainConfig,
        frozen: usize,
        rng: Stream,
    ) -> Result<Self> {
        cfg.validate()?;
        if inputs.len() != targets.len() {
            return Err(Error::invalid("training inputs and targets differ in length"));
        }
        if frozen >= model.layers.len() {
            return Err(Error::InvalidPlan("every layer is frozen".into()));
        }
        let state = AdamState::new(&model);
        let order: Vec<usize> = (0..inputs.len()).collect();
        let cursor = order.len();
        Ok(Trainer { model, inputs, targets, cfg: cfg.clone(), frozen, state, rng, order, cursor })
    }

    /// One Adam step on the next minibatch; returns the pre-update loss.
    pub fn step(&mut self) -> Result<f64> {
        if self.order.is_empty() {
            return Err(Error::invalid("no training examples"));
        }
        let batch = self.cfg.batch_size.min(self.order.len());
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if self.cursor == self.order.len() {
                shuffle(&mut self.order, &mut self.rng);
                self.cursor = 0;
            }
            idx.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        let xs: Vec<&[f64]> = idx.iter().map(|&i| self.inputs[i].as_slice()).collect();
        let ys: Vec<&[f64]> = idx.iter().map(|&i| self.targets[i].as_slice()).collect();
        backward_and_adam_step(&mut self.model, &xs, &ys, &self.cfg, &mut self.state, self.frozen)
    }

    /// Replaces the model's input statistics.
    pub fn with_norm(mut self, norm: super::Normalizer) -> Self {
        self.model.input_norm = norm;
        self
    }

    /// Adds one example; it joins the current pass over the data.
    pub fn push(&mut self, input: Vec<f64>, target: Vec<f64>) -> Result<()> {
        if input.len() != self.model.input_width() || target.len() != self.model.output_width() {
            return Err(Error::invalid("example width does not match the network"));
        }
        self.order.push(self.inputs.len());
        self.inputs.push(input);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.step
    }
}

/// Trains `model` for `cfg.epochs` steps with the first `frozen` layers
/// held fixed; returns the per-epoch losses.
pub fn fit(
    model: &mut MlpModel,
    data: &Regression<'_>,
    cfg: &TrainConfig,
    frozen: usize,
    rng: &mut Stream,
    mut on_epoch: impl FnMut(usize, &MlpModel) -> Result<()>,
) -> Result<Vec<f64>> {
    if data.inputs.is_empty() || data.inputs.len() != data.targets.len() {
        return Err(Error::invalid("training set is empty or ragged"));
    }
    if cfg.epochs == 0 {
        cfg.validate()?;
        return Ok(Vec::new());
    }
    let mut t = Trainer::new(model.clone(), data.inputs.to_vec(), data.targets.to_vec(), cfg, frozen, rng.clone())?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for e in 1..=cfg.epochs {
        losses.push(t.step()?);
        on_epoch(e, &t.model)?;
    }
    *model = t.model;
    *rng = t.rng;
    Ok(losses)
}
