use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use qosnet_core::allocator::{
    exhaustive_oracle, greedy_min_total, greedy_min_transmit, urllc_power_minimizer, validate_conditions,
    AllocationResult, ConditionCheck,
};
use qosnet_core::channel::{derive_seed, stream};
use qosnet_core::dataset::{generate_dataset, Dataset};
use qosnet_core::eval::{
    accuracy_eta, condition_table, power_table, power_vs_users, qos_violation_curve, trace_table, violation_table,
    EvalConfig, LabelPolicy, Table,
};
use qosnet_core::neural::{train_fnn, CascadedModel, Policy, TrainConfig};
use qosnet_core::store::{ModelDocument, StoredModel};
use qosnet_core::transfer::{fine_tune, retarget_service, stack_multi_service, train_traced, TransferPlan, Transferred};
use qosnet_core::{ConfigDoc, Error, Fading, GenerationSpec, Objective, Resolved, Scenario, Service, SolverConfig, UserSpec};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "qosnet", version, about = "Minimum-power OFDMA allocation and its neural approximations")]
struct Cli {
    /// TOML configuration document; unspecified keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream of the command.
    #[arg(long, global = true, env = "QOSNET_SEED", default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Cascaded,
    Fnn,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw scenarios and label them with the greedy optimum.
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Arch::Cascaded)]
        arch: Arch,
        #[arg(long)]
        epochs: Option<usize>,
        /// Record held-out accuracy every this many epochs (cascaded only).
        #[arg(long)]
        trace_every: Option<usize>,
        /// Tab-separated accuracy trace.
        #[arg(long, requires = "trace_every")]
        trace: Option<PathBuf>,
    },
    /// Fine-tune, retarget or stack trained models on a new dataset.
    Transfer {
        /// Source model (fine-tuning and retargeting).
        #[arg(long, conflicts_with = "source")]
        model: Option<PathBuf>,
        /// `service=path` source models to stack.
        #[arg(long)]
        source: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Retarget the source to this service class.
        #[arg(long)]
        target: Option<String>,
        /// Leading bandwidth-net layers to freeze (default: all hidden layers but the last).
        #[arg(long)]
        frozen: Option<usize>,
        #[arg(long, default_value_t = 0)]
        power_frozen: usize,
        #[arg(long)]
        replace_output: bool,
        /// Layers of each source reused when stacking.
        #[arg(long, default_value_t = 1)]
        reused: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 50)]
        eval_every: usize,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Accuracy, QoS violation and power curves of a model on the test split.
    Eval {
        /// Model document; omit with --labels.
        #[arg(long, required_unless_present = "labels")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Evaluate the labels themselves.
        #[arg(long)]
        labels: bool,
        /// Largest reserved power of the violation curve, W (default 15% of the budget).
        #[arg(long)]
        margin_top: Option<f64>,
        #[arg(long, default_value_t = 16)]
        steps: usize,
        /// Directory for the fig4/fig5 tables.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Monotonicity and convexity of the URLLC required power in the subcarrier count.
    ValidateConditions {
        #[arg(long, value_delimiter = ',', default_values_t = [4u32, 8, 16])]
        antennas: Vec<u32>,
        #[arg(long, default_value_t = 100_000)]
        depth: usize,
        /// Packet size, bits.
        #[arg(long, default_value_t = 160.0)]
        bits: f64,
        /// Large-scale gain, dB.
        #[arg(long, default_value_t = -100.0)]
        alpha_db: f64,
        /// Largest subcarrier count (default: the power minimizer).
        #[arg(long)]
        max_n: Option<u32>,
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Allocate subcarriers and power for the users of a scenario file.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = Goal::Total)]
        objective: Goal,
        /// Also run the exhaustive search and report both.
        #[arg(long)]
        oracle: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Goal {
    Total,
    Transmit,
}

/// `solve` input: the users and, optionally, a deterministic small-scale gain.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    users: Vec<UserSpec>,
    #[serde(default)]
    fixed_gain: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn load_config(path: Option<&Path>) -> Result<Resolved> {
    let doc = match path {
        Some(p) => ConfigDoc::parse(&fs::read_to_string(p)?)?,
        None => ConfigDoc::default(),
    };
    doc.resolve()
}

fn train_config(cfg: &Resolved, epochs: Option<usize>, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        epochs: epochs.unwrap_or(cfg.epochs),
        seed,
        ..TrainConfig::default()
    }
}

fn write_table(dir: &Path, t: &Table) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{}.tsv", t.figure)), t.to_tsv())?;
    Ok(())
}

fn print(v: serde_json::Value) {
    println!("{v}");
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Generate { count, out } => {
            let spec = GenerationSpec::from_resolved(&cfg);
            let d = generate_dataset(&spec, count, cli.seed)?;
            d.save(&out)?;
            print(json!({
                "records": d.records.len(),
                "feasible_fraction": d.feasible_fraction(),
                "config_digest": d.header.config_digest,
                "path": out,
            }));
        }
        Cmd::Train { data, out, arch, epochs, trace_every, trace } => {
            let d = Dataset::load(&data)?;
            let tc = train_config(&cfg, epochs, cli.seed);
            let (train, test) = (d.train(), d.test());
            let system = &d.header.spec.system;
            let n_max = system.max_subcarriers;
            let model = match arch {
                Arch::Cascaded => {
                    let every = trace_every.unwrap_or(0);
                    let (m, tr) = train_traced(&train, &cfg.layouts, n_max, &tc, every, &test, system)?;
                    if let Some(p) = trace {
                        fs::write(p, trace_table("fig6", "Held-out accuracy vs epochs", &[&tr]).to_tsv())?;
                    }
                    StoredModel::Cascaded(m)
                }
                Arch::Fnn => StoredModel::Fnn(train_fnn(&train, &cfg.layouts.fnn, n_max, &tc)?),
            };
            let eta = accuracy_eta(&model, &test, system)?;
            let doc = ModelDocument::new(model, &d.header.config_digest, Some(tc.clone()), tc.epochs);
            doc.save(&out)?;
            print(json!({ "model_digest": doc.digest(), "held_out_eta": eta, "epochs": tc.epochs, "path": out }));
        }
        Cmd::Transfer {
            model,
            source,
            data,
            out,
            target,
            frozen,
            power_frozen,
            replace_output,
            reused,
            epochs,
            eval_every,
            trace,
        } => {
            let d = Dataset::load(&data)?;
            let (train, test) = (d.train(), d.test());
            let system = &d.header.spec.system;
            let tc = train_config(&cfg, epochs, cli.seed);
            let plan_for = |m: &CascadedModel| {
                let mut plan = TransferPlan::for_model(m, tc.clone());
                if let Some(f) = frozen {
                    plan.bandwidth_frozen = f;
                }
                plan.power_frozen = power_frozen;
                plan.replaced_output = replace_output;
                plan.eval_every = eval_every;
                plan
            };
            let (done, figure): (Transferred, &str) = match model {
                Some(path) => {
                    let src = cascaded(&ModelDocument::load(&path)?)?;
                    let plan = plan_for(&src);
                    match target {
                        Some(t) => (retarget_service(&src, Service::parse(&t)?, &plan, &train, &test, system)?, "fig7"),
                        None => (fine_tune(&src, &plan, &train, &test, system)?, "fig6"),
                    }
                }
                None => {
                    if source.is_empty() {
                        return Err(invalid("give --model or at least one --source service=path"));
                    }
                    let mut sources = BTreeMap::new();
                    for s in &source {
                        let (svc, path) = s.split_once('=').ok_or_else(|| invalid(format!("expected service=path, got `{s}`")))?;
                        sources.insert(Service::parse(svc)?, cascaded(&ModelDocument::load(Path::new(path))?)?);
                    }
                    let first = sources.values().next().expect("non-empty");
                    let mut plan = plan_for(first);
                    if frozen.is_none() {
                        plan.bandwidth_frozen = reused;
                    }
                    (stack_multi_service(&sources, reused, &plan, &train, &test, system)?, "fig8")
                }
            };
            if let Some(p) = trace {
                fs::write(p, trace_table(figure, "Held-out accuracy vs fine-tuning epochs", &[&done.trace]).to_tsv())?;
            }
            let last = done.trace.last().map(|p| p.eta);
            let mut doc = ModelDocument::new(StoredModel::Cascaded(done.model), &d.header.config_digest, Some(tc), done.lineage.epochs);
            doc.lineage = Some(done.lineage);
            doc.save(&out)?;
            print(json!({ "model_digest": doc.digest(), "held_out_eta": last, "lineage": doc.lineage, "path": out }));
        }
        Cmd::Eval { model, data, labels, margin_top, steps, plots } => {
            let d = Dataset::load(&data)?;
            let test = d.test();
            if test.is_empty() {
                return Err(invalid("dataset has no feasible test records"));
            }
            let system = &d.header.spec.system;
            let policy: Box<dyn Policy> = match (labels, model) {
                (true, _) => Box::new(LabelPolicy),
                (false, Some(p)) => {
                    let doc = ModelDocument::load(&p)?;
                    doc.check_dataset(&d.header)?;
                    Box::new(doc.model)
                }
                (false, None) => return Err(invalid("--model is required without --labels")),
            };
            let eval = EvalConfig::linear(margin_top.unwrap_or(0.15 * system.max_power), steps);
            let eta = accuracy_eta(policy.as_ref(), &test, system)?;
            let curves = qos_violation_curve(policy.as_ref(), &test, &eval)?;
            let counts: Vec<usize> = (0..=test[0].users()).collect();
            let power = power_vs_users(policy.as_ref(), &test, &counts, system)?;
            if let Some(dir) = plots {
                write_table(&dir, &violation_table("fig4", if labels { "labels" } else { "model" }, &curves))?;
                write_table(&dir, &power_table(&power))?;
            }
            print(json!({ "eta": eta, "test_samples": test.len(), "violation": curves, "power_vs_users": power }));
        }
        Cmd::ValidateConditions { antennas, depth, bits, alpha_db, max_n, plots } => {
            let user = UserSpec::urllc(10f64.powf(alpha_db / 10.0), bits, cfg.traffic.urllc_max_error);
            let check = ConditionCheck { depth, ..ConditionCheck::default() };
            let mut reports = Vec::new();
            for (i, &nt) in antennas.iter().enumerate() {
                let system = qosnet_core::SystemConfig { antennas: nt, ..cfg.system.clone() };
                let hi = match max_n {
                    Some(n) => n,
                    None => urllc_power_minimizer(&user, &system, system.max_subcarriers)?,
                };
                let mut rng = stream(derive_seed(cli.seed, i as u64));
                let r = validate_conditions(&user, 1..=hi, &system, &check, &mut rng)?;
                print(json!({
                    "antennas": nt,
                    "n_max": hi,
                    "holds": r.holds(),
                    "violations": r.violations,
                    "tilt": r.tilt,
                }));
                reports.push((nt, r));
            }
            if let Some(dir) = plots {
                write_table(&dir, &condition_table(&reports))?;
            }
        }
        Cmd::Solve { scenario, objective, oracle } => {
            let file: ScenarioFile = serde_json::from_str(&fs::read_to_string(&scenario)?)
                .map_err(|e| Error::Format { what: "scenario", detail: e.to_string() })?;
            let scn = Scenario::new(file.users, cfg.system.clone())?;
            let sol = SolverConfig {
                fading: file.fixed_gain.map_or(Fading::Rayleigh, Fading::Fixed),
                ..SolverConfig::default()
            };
            let mut rng = stream(cli.seed);
            let greedy = match objective {
                Goal::Total => greedy_min_total(&scn, &sol, &mut rng)?,
                Goal::Transmit => greedy_min_transmit(&scn, &sol, &mut rng)?,
            };
            let mut out = json!({ "greedy": allocation_json(&greedy) });
            if oracle {
                let obj = match objective {
                    Goal::Total => Objective::Total,
                    Goal::Transmit => Objective::Transmit,
                };
                let mut rng = stream(cli.seed);
                out["oracle"] = allocation_json(&exhaustive_oracle(&scn, obj, &sol, &mut rng)?);
            }
            print(out);
        }
    }
    Ok(())
}

fn cascaded(doc: &ModelDocument) -> Result<CascadedModel> {
    match &doc.model {
        StoredModel::Cascaded(m) => Ok(m.clone()),
        StoredModel::Fnn(_) => Err(invalid("transfer needs a cascaded model")),
    }
}

fn allocation_json(r: &AllocationResult) -> serde_json::Value {
    json!({
        "feasible": r.feasible,
        "limit": r.limit,
        "n": r.alloc.n,
        "p": r.alloc.p,
        "transmit_power": r.transmit_power(),
        "total_power": r.total_power,
    })
}
