//! Accuracy, QoS-violation and power-consumption metrics of learned policies.

use serde::{Deserialize, Serialize};

use crate::allocator::{greedy_min_total_with, ConditionReport, TablePowerModel};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::neural::{Policy, Prediction, TrainingSample};
use crate::qos::{self, Allocation, Service};
use crate::transfer::TracePoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Extra power reserved to all users of a class, `Delta_P * K^xi`, W.
    pub margins: Vec<f64>,
}

impl EvalConfig {
    /// `steps` margins evenly spaced on `[0, top]`.
    pub fn linear(top: f64, steps: usize) -> Self {
        let steps = steps.max(2);
        EvalConfig { margins: (0..steps).map(|i| top * i as f64 / (steps - 1) as f64).collect() }
    }

    /// From zero to 15% of the power budget in 16 steps.
    pub fn for_budget(cfg: &SystemConfig) -> Self {
        Self::linear(0.15 * cfg.max_power, 16)
    }

    pub fn validate(&self) -> Result<()> {
        if self.margins.is_empty() || self.margins.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::invalid("margins must be non-negative and non-empty"));
        }
        Ok(())
    }
}

/// Power the policy actually spends on user `k`: its own prediction, or
/// the solver's required power at the predicted subcarrier count when the
/// prediction falls short. Requirements above the budget are charged at the
/// budget.
fn honest_power(s: &TrainingSample, pred: &Prediction, k: usize, cfg: &SystemConfig) -> f64 {
    if !s.is_active(k) {
        return 0.0;
    }
    let need = s.required_power(k, pred.n[k]).min(cfg.max_power);
    pred.p[k].max(need)
}

/// Total power of the policy's allocation after under-powered users are
/// topped up to their requirement.
pub fn policy_total_power(s: &TrainingSample, pred: &Prediction, cfg: &SystemConfig) -> f64 {
    let p = (0..s.users()).map(|k| honest_power(s, pred, k, cfg)).collect();
    qos::total_power(&Allocation { n: pred.n.clone(), p }, cfg)
}

fn optimal_total_power(s: &TrainingSample, cfg: &SystemConfig) -> f64 {
    qos::total_power(&Allocation { n: s.n_star.clone(), p: s.p_star.clone() }, cfg)
}

/// `1 - (P_tot(policy) - P_tot(opt)) / P_tot(opt)` for one sample.
pub fn sample_eta(s: &TrainingSample, pred: &Prediction, cfg: &SystemConfig) -> f64 {
    let opt = optimal_total_power(s, cfg);
    1.0 - (policy_total_power(s, pred, cfg) - opt) / opt
}

/// Mean accuracy over `test`.
pub fn accuracy_eta(policy: &dyn Policy, test: &[TrainingSample], cfg: &SystemConfig) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut sum = 0.0;
    for s in test {
        sum += sample_eta(s, &policy.predict(s)?, cfg);
    }
    Ok(sum / test.len() as f64)
}

/// Policy that replays the labels.
pub struct LabelPolicy;

impl Policy for LabelPolicy {
    fn predict(&self, s: &TrainingSample) -> Result<Prediction> {
        Ok(Prediction {
            n_fractional: s.n_star.iter().map(|&n| f64::from(n)).collect(),
            n: s.n_star.clone(),
            p: s.p_star.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationCurve {
    pub service: Service,
    /// `Delta_P * K^xi`, W.
    pub margins: Vec<f64>,
    pub probability: Vec<f64>,
    /// Active users of this class in the test set.
    pub users: usize,
}

/// Fraction of users whose predicted power plus the per-user margin stays
/// below the power required at the predicted subcarrier count.
pub fn qos_violation_curve(
    policy: &dyn Policy,
    test: &[TrainingSample],
    eval: &EvalConfig,
) -> Result<Vec<ViolationCurve>> {
    eval.validate()?;
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let preds = test.iter().map(|s| policy.predict(s)).collect::<Result<Vec<_>>>()?;
    let mut curves = Vec::new();
    for svc in Service::ALL {
        let per_class = test[0].services.iter().filter(|s| **s == svc).count();
        if per_class == 0 {
            continue;
        }
        // shortfall of every active user of this class
        let mut short = Vec::new();
        for (s, p) in test.iter().zip(&preds) {
            for k in 0..s.users() {
                if s.services[k] == svc && s.is_active(k) {
                    short.push(s.required_power(k, p.n[k]) - p.p[k]);
                }
            }
        }
        let probability = eval
            .margins
            .iter()
            .map(|m| {
                let d = m / per_class as f64;
                short.iter().filter(|&&x| x > d).count() as f64 / short.len().max(1) as f64
            })
            .collect::<Vec<_>>();
        debug_assert!(probability.windows(2).all(|w| w[1] <= w[0]));
        curves.push(ViolationCurve { service: svc, margins: eval.margins.clone(), probability, users: short.len() });
    }
    Ok(curves)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub users: usize,
    /// Mean optimal total power, W.
    pub optimal: f64,
    /// Mean total power spent by the policy, W.
    pub policy: f64,
}

/// Keeps the first `active` users in round-robin class order (tolerant,
/// sensitive, URLLC, tolerant, ...) and idles the rest by zeroing their
/// traffic feature; the optimum is recomputed from the stored curves.
pub fn with_active_users(s: &TrainingSample, active: usize, cfg: &SystemConfig) -> Result<TrainingSample> {
    if active > s.users() {
        return Err(Error::invalid(format!("{active} users exceed the trained width {}", s.users())));
    }
    let order = round_robin(&s.services);
    let mut out = s.clone();
    for &k in &order[active..] {
        out.feature[k] = 0.0;
        out.required[k] = Vec::new();
    }
    let mut model = TablePowerModel { curves: out.required.clone() };
    let r = greedy_min_total_with(&mut model, cfg)?;
    out.n_star = r.alloc.n;
    out.p_star = r.alloc.p;
    out.total_power = r.total_power;
    Ok(out)
}

fn round_robin(services: &[Service]) -> Vec<usize> {
    let mut queues: Vec<Vec<usize>> = Service::ALL
        .iter()
        .map(|svc| (0..services.len()).filter(|&k| services[k] == *svc).collect())
        .collect();
    queues.iter_mut().for_each(|q| q.reverse());
    let mut order = Vec::with_capacity(services.len());
    while order.len() < services.len() {
        for q in queues.iter_mut() {
            if let Some(k) = q.pop() {
                order.push(k);
            }
        }
    }
    order
}

/// Mean optimal and policy total power as the number of active users grows
/// from 0 to the trained width.
pub fn power_vs_users(
    policy: &dyn Policy,
    test: &[TrainingSample],
    counts: &[usize],
    cfg: &SystemConfig,
) -> Result<Vec<PowerPoint>> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut out = Vec::with_capacity(counts.len());
    for &k in counts {
        let mut opt = 0.0;
        let mut pol = 0.0;
        let mut used = 0usize;
        for s in test {
            let padded = with_active_users(s, k, cfg)?;
            if !padded.total_power.is_finite() {
                continue;
            }
            let pred = policy.predict(&padded)?;
            opt += optimal_total_power(&padded, cfg);
            pol += policy_total_power(&padded, &pred, cfg);
            used += 1;
        }
        let n = used.max(1) as f64;
        out.push(PowerPoint { users: k, optimal: opt / n, policy: pol / n });
    }
    Ok(out)
}

/// Tab-separated table with a comment header naming the figure it mirrors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub figure: String,
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(figure: &str, title: &str, columns: &[&str]) -> Self {
        Table {
            figure: figure.into(),
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("# {}: {}\n{}\n", self.figure, self.title, self.columns.join("\t"));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        s
    }

    /// One JSON object per row, keyed by column name.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let mut obj = serde_json::Map::new();
            obj.insert("figure".into(), self.figure.clone().into());
            for (c, v) in self.columns.iter().zip(r) {
                let val = serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into);
                obj.insert(c.clone(), val);
            }
            s.push_str(&serde_json::Value::Object(obj).to_string());
            s.push('\n');
        }
        s
    }
}

pub fn violation_table(figure: &str, label: &str, curves: &[ViolationCurve]) -> Table {
    let mut t = Table::new(figure, &format!("QoS violation probability vs reserved power ({label})"), &[
        "service",
        "reserved_w",
        "violation",
    ]);
    for c in curves {
        for (m, p) in c.margins.iter().zip(&c.probability) {
            t.push(vec![service_code(c.service), *m, *p]);
        }
    }
    t
}

/// Numeric service code used in tables: 0 tolerant, 1 sensitive, 2 URLLC.
pub fn service_code(s: Service) -> f64 {
    match s {
        Service::Tolerant => 0.0,
        Service::Sensitive => 1.0,
        Service::Urllc => 2.0,
    }
}

pub fn power_table(points: &[PowerPoint]) -> Table {
    let mut t = Table::new("fig5", "Total power vs number of users", &["users", "optimal_w", "policy_w"]);
    for p in points {
        t.push(vec![p.users as f64, p.optimal, p.policy]);
    }
    t
}

/// Required power per subcarrier count for each antenna count, with the
/// closed-form URLLC curve where available (NaN otherwise).
pub fn condition_table(reports: &[(u32, ConditionReport)]) -> Table {
    let mut t = Table::new("fig3", "Required transmit power vs subcarriers", &[
        "antennas",
        "n",
        "power_w",
        "sigma_w",
        "closed_form_w",
        "violations",
    ]);
    for (antennas, r) in reports {
        for (i, &n) in r.n.iter().enumerate() {
            let flagged = r.violations.iter().filter(|v| v.n == n).count();
            t.push(vec![
                f64::from(*antennas),
                f64::from(n),
                r.power[i],
                r.power_sigma[i],
                r.closed_form.get(i).copied().unwrap_or(f64::NAN),
                flagged as f64,
            ]);
        }
    }
    t
}

/// Held-out accuracy traces; `series` numbers the traces in the order given.
pub fn trace_table(figure: &str, title: &str, traces: &[&[TracePoint]]) -> Table {
    let mut t = Table::new(figure, title, &["series", "epoch", "eta"]);
    for (i, tr) in traces.iter().enumerate() {
        for p in tr.iter() {
            t.push(vec![i as f64, p.epoch as f64, p.eta]);
        }
    }
    t
}
