//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Datasets are cached under the cargo test scratch directory; they are
//! regenerated whenever the cached header differs from the requested one.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use qosnet_core::allocator::{
    exhaustive_oracle, greedy_min_total, greedy_min_transmit, urllc_power_minimizer, validate_conditions, ConditionCheck,
};
use qosnet_core::channel::{derive_seed, stream};
use qosnet_core::dataset::{generate_dataset, Dataset};
use qosnet_core::eval::{accuracy_eta, qos_violation_curve, EvalConfig};
use qosnet_core::neural::{cascaded_flops, loss_and_grad, train_cascaded, train_fnn, Init, MlpModel, Normalizer, TrainConfig};
use qosnet_core::qos::{self, urllc_closed_form_power, Traffic};
use qosnet_core::solver::{
    bisection_min_power, sgd_min_power_sensitive, sgd_min_power_tolerant, sgd_min_power_urllc,
};
use qosnet_core::store::{ModelDocument, StoredModel};
use qosnet_core::transfer::{epochs_to_reach, fine_tune, retarget_service, train_traced, TransferPlan};
use qosnet_core::{
    Fading, GenerationSpec, NetworkLayouts, Objective, Scenario, Service, SolverConfig, SystemConfig, TrafficRanges,
    UserSpec,
};

const DESK_SEED: u64 = 7;
const DESK_COUNT: usize = 2000;
const DESK_EPOCHS: usize = 20_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn desk_spec(antennas: u32, users: [usize; 3]) -> GenerationSpec {
    GenerationSpec {
        system: SystemConfig { max_subcarriers: 32, antennas, ..SystemConfig::default() },
        traffic: TrafficRanges::default(),
        cell_radius: 200.0,
        min_distance: 1.0,
        shadowing_db: 8.0,
        users,
        draws: 64,
        fading: Fading::Rayleigh,
    }
}

fn cached_dataset(name: &str, spec: &GenerationSpec) -> Dataset {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(format!("{name}-{DESK_SEED}-{DESK_COUNT}.jsonl"));
    if let Ok(d) = Dataset::load(&path) {
        if d.header.spec == *spec && d.header.seed == DESK_SEED && d.header.count == DESK_COUNT {
            return d;
        }
    }
    let d = generate_dataset(spec, DESK_COUNT, DESK_SEED).unwrap();
    d.save(&path).unwrap();
    d
}

fn desk_train() -> TrainConfig {
    TrainConfig { epochs: DESK_EPOCHS, ..TrainConfig::default() }
}

fn at(epoch: Option<usize>) -> String {
    epoch.map_or("never".into(), |e| format!("epoch {e}"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

// 1. Greedy optimality against exhaustive search on frozen-gain instances.
fn greedy_optimality() -> Outcome {
    let mut spec = desk_spec(64, [1, 1, 1]);
    spec.system.max_subcarriers = 9;
    let sol = SolverConfig { fading: Fading::Fixed(f64::from(spec.system.antennas)), oracle_draws: 1, ..SolverConfig::default() };
    let mut rng = stream(101);
    let (mut worst, mut feasible, mut agree) = (0.0f64, 0, 0);
    for i in 0..50 {
        let users: Vec<UserSpec> = Service::ALL.iter().map(|&s| spec.draw_user(s, &mut rng).unwrap()).collect();
        let scn = Scenario::new(users, spec.system.clone()).unwrap();
        let mut ok = true;
        for (obj, greedy) in [
            (Objective::Transmit, greedy_min_transmit(&scn, &sol, &mut stream(i)).unwrap()),
            (Objective::Total, greedy_min_total(&scn, &sol, &mut stream(i)).unwrap()),
        ] {
            let oracle = exhaustive_oracle(&scn, obj, &sol, &mut stream(i)).unwrap();
            if greedy.feasible != oracle.feasible {
                ok = false;
                continue;
            }
            if greedy.feasible {
                let (g, o) = match obj {
                    Objective::Transmit => (greedy.transmit_power(), oracle.transmit_power()),
                    Objective::Total => (greedy.total_power, oracle.total_power),
                };
                worst = worst.max((g - o).abs());
                ok &= (g - o).abs() <= 1e-6;
            }
        }
        feasible += usize::from(greedy_min_total(&scn, &sol, &mut stream(i)).unwrap().feasible);
        agree += usize::from(ok);
    }
    outcome(agree == 50, format!("{agree}/50 instances agree ({feasible} feasible), max gap {worst:.2e} W"))
}

// 2. Conditions 1 and 2 for URLLC users.
fn conditions() -> Outcome {
    let user = UserSpec::urllc(1e-10, 160.0, 5e-8);
    let check = ConditionCheck::default();
    let mut details = Vec::new();
    let mut pass = true;
    for (i, nt) in [4u32, 8, 16].into_iter().enumerate() {
        let cfg = SystemConfig { antennas: nt, ..SystemConfig::default() };
        let hi = urllc_power_minimizer(&user, &cfg, cfg.max_subcarriers).unwrap();
        let r = validate_conditions(&user, 1..=hi, &cfg, &check, &mut stream(200 + i as u64)).unwrap();
        let closed = &r.closed_form;
        let exact = closed.windows(2).all(|w| w[1] < w[0])
            && closed.windows(3).all(|w| w[0] - w[1] >= w[1] - w[2]);
        pass &= r.holds() && exact;
        details.push(format!("N_T={nt} n<={hi}: {} flagged, closed form {}", r.violations.len(), if exact { "exact" } else { "BROKEN" }));
    }
    outcome(pass, details.join("; "))
}

// 3. SGD against the bracketing oracle, analytic inversions, and the
// hardened closed form at N_T = 256.
fn solver_agreement() -> Outcome {
    let spec = desk_spec(64, [1, 1, 1]);
    let cfg = &spec.system;
    let sol = SolverConfig::default();
    let mut rng = stream(301);
    let mut worst = [0.0f64; 3];
    for (si, svc) in Service::ALL.into_iter().enumerate() {
        let mut done = 0;
        while done < 30 {
            let u = spec.draw_user(svc, &mut rng).unwrap();
            let n = rng.random_range(1..=8u32);
            let seed = rng.random::<u64>();
            let Ok(bis) = bisection_min_power(&u, n, cfg, &sol, &mut stream(seed)) else { continue };
            let sgd = match svc {
                Service::Tolerant => sgd_min_power_tolerant(&u, n, cfg, &sol, &mut stream(seed)),
                Service::Sensitive => sgd_min_power_sensitive(&u, n, cfg, &sol, &mut stream(seed)),
                Service::Urllc => sgd_min_power_urllc(&u, n, cfg, &sol, &mut stream(seed)),
            };
            let Ok(sgd) = sgd else { continue };
            if bis > 0.0 {
                worst[si] = worst[si].max(rel(sgd, bis));
            }
            done += 1;
        }
    }

    // frozen unit gain, one antenna: closed-form inversions
    let unit = SystemConfig { antennas: 1, ..SystemConfig::default() };
    let fixed = SolverConfig { fading: Fading::Fixed(1.0), oracle_draws: 1, ..SolverConfig::default() };
    let mut frozen_worst = 0.0f64;
    for (i, n) in [1u32, 2, 4, 8].into_iter().enumerate() {
        let nw = f64::from(n) * unit.subcarrier_bw;
        let t = UserSpec::tolerant(1e-12, 4e5 + 1e5 * i as f64);
        let Traffic::Tolerant { mean_rate } = t.traffic else { unreachable!() };
        let exact = ((mean_rate / nw).exp2() - 1.0) * unit.noise_density * nw / t.alpha;
        let sgd = sgd_min_power_tolerant(&t, n, &unit, &fixed, &mut stream(310 + i as u64)).unwrap();
        frozen_worst = frozen_worst.max(rel(sgd, exact));

        let s = UserSpec::sensitive(1e-12, 200.0 + 100.0 * i as f64, 1.0 / 4000.0, 0.05, 1e-2);
        let eb = qos::effective_bandwidth(&s.traffic).unwrap();
        let exact = unit.snr_gap * ((eb / nw).exp2() - 1.0) * unit.noise_density * nw / s.alpha;
        let sgd = sgd_min_power_sensitive(&s, n, &unit, &fixed, &mut stream(320 + i as u64)).unwrap();
        frozen_worst = frozen_worst.max(rel(sgd, exact));
    }
    let hard = SystemConfig::default();
    let hardened = SolverConfig { fading: Fading::Fixed(f64::from(hard.antennas)), oracle_draws: 1, ..SolverConfig::default() };
    for (i, n) in [3u32, 5, 9].into_iter().enumerate() {
        let u = UserSpec::urllc(1e-12, 256.0, 5e-8);
        let exact = urllc_closed_form_power(&u, n, &hard).unwrap();
        let sgd = sgd_min_power_urllc(&u, n, &hard, &hardened, &mut stream(330 + i as u64)).unwrap();
        frozen_worst = frozen_worst.max(rel(sgd, exact));
    }

    // Rayleigh fading with 256 antennas hardens towards the closed form
    let big = SystemConfig { antennas: 256, ..SystemConfig::default() };
    let mut pu_worst = 0.0f64;
    for (i, (alpha, bits, n)) in [(1e-12, 160.0, 4u32), (3e-12, 512.0, 6), (5e-13, 300.0, 10)].into_iter().enumerate() {
        let u = UserSpec::urllc(alpha, bits, 5e-8);
        let exact = urllc_closed_form_power(&u, n, &big).unwrap();
        let sgd = sgd_min_power_urllc(&u, n, &big, &sol, &mut stream(340 + i as u64)).unwrap();
        pu_worst = pu_worst.max(rel(sgd, exact));
    }
    let pass = worst.iter().all(|w| *w <= 0.02) && frozen_worst <= 0.02 && pu_worst <= 0.05;
    outcome(
        pass,
        format!(
            "SGD vs oracle max rel err tolerant {:.2}% sensitive {:.2}% urllc {:.2}%; frozen-gain {:.2}%; N_T=256 vs closed form {:.2}%",
            100.0 * worst[0],
            100.0 * worst[1],
            100.0 * worst[2],
            100.0 * frozen_worst,
            100.0 * pu_worst
        ),
    )
}

// 4. QoS-exponent round trip over the traffic ranges.
fn exponent_algebra() -> Outcome {
    let r = TrafficRanges::default();
    let mut worst = 0.0f64;
    let mut above_mean = true;
    for i in 0..10 {
        for j in 0..10 {
            let arrivals = r.sensitive_arrivals.lo + (r.sensitive_arrivals.hi - r.sensitive_arrivals.lo) * i as f64 / 9.0;
            let bits = r.sensitive_packet_bits.lo + (r.sensitive_packet_bits.hi - r.sensitive_packet_bits.lo) * j as f64 / 9.0;
            let t = Traffic::Sensitive { arrivals, size_rate: 1.0 / bits, delay: r.sensitive_delay, violation: r.sensitive_violation };
            let theta = qos::qos_exponent(&t).unwrap();
            let eb = qos::effective_bandwidth(&t).unwrap();
            let back = (-theta * eb * r.sensitive_delay).exp();
            worst = worst.max((back - r.sensitive_violation).abs() / r.sensitive_violation);
            above_mean &= eb >= arrivals * bits;
        }
    }
    outcome(worst < 1e-9 && above_mean, format!("max round-trip error {worst:.1e} on 100 points, E^B >= mean rate: {above_mean}"))
}

// 5. Backpropagation against central finite differences.
fn gradients() -> Outcome {
    let mut rng = stream(501);
    let mut m = MlpModel::new(&[4, 6, 3], Init::He, &mut rng).unwrap();
    m.input_norm = Normalizer { mean: vec![0.2, -0.1, 0.0, 0.5], std: vec![1.5, 0.5, 1.0, 2.0] };
    let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let xr: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let yr: Vec<&[f64]> = ys.iter().map(|v| v.as_slice()).collect();
    let (_, grads) = loss_and_grad(&m, &xr, &yr).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let l = rng.random_range(0..m.layers.len());
        let bias = rng.random_bool(0.25);
        let len = if bias { m.layers[l].b.len() } else { m.layers[l].w.len() };
        let j = rng.random_range(0..len);
        let probe = |m: &mut MlpModel, v: f64| {
            if bias {
                m.layers[l].b[j] = v
            } else {
                m.layers[l].w[j] = v
            }
        };
        let orig = if bias { m.layers[l].b[j] } else { m.layers[l].w[j] };
        probe(&mut m, orig + h);
        let up = loss_and_grad(&m, &xr, &yr).unwrap().0;
        probe(&mut m, orig - h);
        let down = loss_and_grad(&m, &xr, &yr).unwrap().0;
        probe(&mut m, orig);
        let fd = (up - down) / (2.0 * h);
        let an = if bias { grads[l].b[j] } else { grads[l].w[j] };
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 20 probes"))
}

// 6. Multiplication count against the instrumented forward pass.
fn flops() -> Outcome {
    let mut rng = stream(601);
    let mut matched = 0;
    for _ in 0..10 {
        let depth = rng.random_range(1..=5);
        let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=40)).collect();
        let m = MlpModel::new(&sizes, Init::He, &mut rng).unwrap();
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut count = 0;
        m.forward_counted(&x, &mut count).unwrap();
        let formula: u64 = sizes.windows(2).map(|w| (w[0] * w[1]) as u64).sum();
        matched += usize::from(count == m.flop_count() && count == formula);
    }
    let cascaded_ok = cascaded_flops(&[12, 64, 64, 6], &[3, 20, 20, 20, 20, 1], 3) == (12 * 64 + 64 * 64 + 64 * 6) + 3 * (60 + 3 * 400 + 20);
    outcome(matched == 10 && cascaded_ok, format!("{matched}/10 architectures match; cascaded formula {cascaded_ok}"))
}

// 7. Desk-scale learning.
fn desk_learning() -> Outcome {
    let spec = desk_spec(64, [2, 2, 2]);
    let d = cached_dataset("desk64", &spec);
    let (train, test) = (d.train(), d.test());
    let cfg = desk_train();
    let lay = NetworkLayouts::default();
    let c = train_cascaded(&train, &lay, 32, &cfg).unwrap();
    let f = train_fnn(&train, &lay.fnn, 32, &cfg).unwrap();
    let sys = &spec.system;
    let eta = accuracy_eta(&c, &test, sys).unwrap();
    let eta_fnn = accuracy_eta(&f, &test, sys).unwrap();
    // grid up to the mean optimal transmit power of a held-out sample
    let top = test.iter().map(|s| s.p_star.iter().sum::<f64>()).sum::<f64>() / test.len() as f64;
    let grid = EvalConfig::linear(top, 16);
    let vc = qos_violation_curve(&c, &test, &grid).unwrap();
    let vf = qos_violation_curve(&f, &test, &grid).unwrap();
    let monotone = vc.iter().chain(&vf).all(|v| v.probability.windows(2).all(|w| w[1] <= w[0]));
    let mut below = 0;
    let mut points = 0;
    for (a, b) in vc.iter().zip(&vf) {
        for (pa, pb) in a.probability.iter().zip(&b.probability) {
            below += usize::from(pa <= pb);
            points += 1;
        }
    }
    let share = below as f64 / points as f64;
    outcome(
        eta >= 0.9 && monotone && share >= 0.8,
        format!(
            "held-out eta {eta:.4} (FNN {eta_fnn:.4}, {} test samples); curves nonincreasing: {monotone}; cascaded <= FNN at {below}/{points} grid points",
            test.len()
        ),
    )
}

// 8. Transfer trends and the freezing contract.
fn transfer_trends() -> Outcome {
    let lay = NetworkLayouts::default();
    let cfg = desk_train();

    // (a) 16 -> 64 antennas
    let s64 = desk_spec(64, [2, 2, 2]);
    let d64 = cached_dataset("desk64", &s64);
    let d16 = cached_dataset("desk16", &desk_spec(16, [2, 2, 2]));
    let (train, test) = (d64.train(), d64.test());
    let (_, base) = train_traced(&train, &lay, 32, &cfg, 100, &test, &s64.system).unwrap();
    let a = match epochs_to_reach(&base, 0.85) {
        None => (false, "random init never reaches 0.85".to_string(), true),
        Some(e) => {
            let target = base.iter().find(|p| p.epoch == e).unwrap().eta;
            let src = train_cascaded(&d16.train(), &lay, 32, &cfg).unwrap();
            let plan = TransferPlan {
                eval_every: 100,
                ..TransferPlan::for_model(&src, TrainConfig { epochs: (e / 2).max(1), ..cfg.clone() })
            };
            let out = fine_tune(&src, &plan, &train, &test, &s64.system).unwrap();
            let hit = epochs_to_reach(&out.trace, target);
            let frozen = out.model.phi_i.layers[..plan.bandwidth_frozen] == src.phi_i.layers[..plan.bandwidth_frozen];
            (
                hit.is_some_and(|h| h <= e / 2),
                format!("random init first reaches {target:.3} at epoch {e}, transfer at {}", at(hit)),
                frozen,
            )
        }
    };

    // (b) delay-tolerant -> URLLC
    let st = desk_spec(64, [6, 0, 0]);
    let su = desk_spec(64, [0, 0, 6]);
    let dt = cached_dataset("tolerant64", &st);
    let du = cached_dataset("urllc64", &su);
    let (train, test) = (du.train(), du.test());
    let (_, base) = train_traced(&train, &lay, 32, &cfg, 50, &test, &su.system).unwrap();
    let e_base = epochs_to_reach(&base, 0.85);
    let src = train_cascaded(&dt.train(), &lay, 32, &cfg).unwrap();
    let budget = e_base.unwrap_or(cfg.epochs);
    let plan = TransferPlan {
        eval_every: 50,
        ..TransferPlan::for_model(&src, TrainConfig { epochs: budget, ..cfg.clone() })
    };
    let out = retarget_service(&src, Service::Urllc, &plan, &train, &test, &su.system).unwrap();
    let e_tr = epochs_to_reach(&out.trace, 0.85);
    let b = match (e_base, e_tr) {
        (Some(eb), Some(et)) => et < eb,
        (None, Some(_)) => true,
        _ => false,
    };
    let frozen_b = out.model.phi_i.layers[..plan.bandwidth_frozen] == src.phi_i.layers[..plan.bandwidth_frozen];

    let c = a.2 && frozen_b;
    outcome(
        a.0 && b && c,
        format!(
            "(a) {}: {}; (b) {}: 0.85 at {} vs random init {}; (c) frozen layers bit-identical: {c}",
            if a.0 { "ok" } else { "FAIL" },
            a.1,
            if b { "ok" } else { "FAIL" },
            at(e_tr),
            at(e_base)
        ),
    )
}

// 9. Determinism and round trips.
fn determinism() -> Outcome {
    let spec = desk_spec(64, [2, 2, 2]);
    let a = generate_dataset(&spec, 20, 901).unwrap();
    let b = generate_dataset(&spec, 20, 901).unwrap();
    let same_data = a.to_bytes().unwrap() == b.to_bytes().unwrap();
    let reread = Dataset::read_from(&a.to_bytes().unwrap()[..]).unwrap();
    let data_trip = reread.to_bytes().unwrap() == a.to_bytes().unwrap();

    let cfg = TrainConfig { epochs: 300, seed: derive_seed(902, 0), ..TrainConfig::default() };
    let train = a.train();
    let lay = NetworkLayouts::default();
    let m1 = train_cascaded(&train, &lay, 32, &cfg).unwrap();
    let m2 = train_cascaded(&train, &lay, 32, &cfg).unwrap();
    let same_model = m1 == m2;
    let doc = ModelDocument::new(StoredModel::Cascaded(m1), &a.header.config_digest, Some(cfg), 300);
    let back = ModelDocument::from_json(&doc.to_json()).unwrap();
    let model_trip = back == doc && back.to_json() == doc.to_json();
    outcome(
        same_data && data_trip && same_model && model_trip,
        format!("datasets byte-identical {same_data}, dataset round trip {data_trip}, models identical {same_model}, model round trip {model_trip}"),
    )
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(u32, &str, fn() -> Outcome, Option<Duration>); 9] = [
        (1, "greedy optimality", greedy_optimality, Some(Duration::from_secs(300))),
        (2, "conditions 1-2", conditions, Some(Duration::from_secs(600))),
        (3, "solver cross-validation", solver_agreement, None),
        (4, "QoS-exponent algebra", exponent_algebra, None),
        (5, "gradient correctness", gradients, None),
        (6, "flop count", flops, None),
        (7, "desk-scale learning", desk_learning, Some(Duration::from_secs(1800))),
        (8, "transfer trends", transfer_trends, None),
        (9, "determinism", determinism, None),
    ];
    let mut failed = 0;
    for (id, name, run, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let t = Instant::now();
        let mut o = run();
        let took = t.elapsed();
        if let Some(lim) = limit {
            if took > lim {
                o.pass = false;
                o.detail.push_str(&format!("; over the {}s limit", lim.as_secs()));
            }
        }
        failed += usize::from(!o.pass);
        println!(
            "criterion {id} ({name}): {} [{:.1}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            o.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
