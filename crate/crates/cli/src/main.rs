//! Command-line front end: reads a model file, runs one analysis and prints
//! a JSON report.

mod input;

use std::fmt::Display;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use input::{initial_law, load_model, single_start, start, GeneratorDoc, Loaded, StartRef};
use perpetua::classify::{classify_report, mrw_trichotomy_mc};
use perpetua::degeneracy::{detect, detect_dual};
use perpetua::examples::{builtin, Builtin, NAMES};
use perpetua::limits::{
    backward_limit, fixed_point_classify, fixed_point_solve, forward_limit, validate, FixedPointOptions, Kernel,
    LawSummary, LimitOptions, ValidationOptions,
};
use perpetua::oracle::{
    enumerate_backward, enumerate_backward_stationary, enumerate_forward, enumerate_forward_stationary, excursion_law,
    Enumeration, OracleConfig,
};
use perpetua::simulate::{
    divergence_diagnostic, perpetuity_samples, run_backward, run_forward, sample_excursions, FiniteSampler, Generator,
    PetalWeights, Start, DEFAULT_STEP_CAP,
};
use perpetua::{DiscreteLaw, InitialLaw, Model};
use serde::Serialize;
use serde_json::{json, Value};

/// A failed run, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Model(String),
    Regime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Model(_) => 2,
            Failure::Regime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Model(m) | Failure::Regime(m) => m,
        }
    }
}

fn regime(e: impl Display) -> Failure {
    Failure::Regime(e.to_string())
}

#[derive(Parser)]
#[command(name = "perpetua", version, about = "Markov-modulated random affine recursions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Args)]
struct Opts {
    /// Model file (JSON).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Start state, by label or index; `pi` starts from the stationary law where allowed.
    #[arg(long, global = true)]
    start: Option<String>,
    /// Number of steps, or iterations for fixed-point solves.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Enumeration depth or perpetuity truncation horizon.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Convergence or validation tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Initial law: a number, a list of {"v","m"} atoms, or a map from state labels to atom lists.
    #[arg(long, global = true)]
    z0: Option<String>,
    /// Report path; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Raw samples as CSV.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Worker threads; PERPETUA_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file.
    Validate,
    /// Stationary law of the driving chain.
    Stationary,
    /// The time-reversed model.
    Dual,
    /// Exact laws by path enumeration.
    Enumerate {
        #[command(subcommand)]
        kind: EnumerateKind,
    },
    /// Monte Carlo runs.
    Simulate {
        #[command(subcommand)]
        kind: SimulateKind,
    },
    /// Regime classification.
    Classify {
        /// Threshold on log|Π_n| for the generator-mode T3 verdict.
        #[arg(long, default_value_t = 6.0 * std::f64::consts::LN_10)]
        ln_threshold: f64,
    },
    /// Degeneracy constants.
    Degeneracy {
        /// Test the forward form a·c_i + b = c_j instead.
        #[arg(long)]
        dual: bool,
    },
    /// Limit law of the iterations.
    Limit {
        #[command(subcommand)]
        direction: DirectionArg,
        /// Check the claim by simulation.
        #[arg(long, global = true)]
        validate: bool,
    },
    /// Kernel fixed points of the one-step map.
    #[command(name = "fixed-point")]
    FixedPoint {
        #[command(subcommand)]
        kind: FixedPointKind,
    },
    /// Print a built-in model file, or the list of names.
    Examples {
        name: Option<String>,
        /// Petal weights for the flower chain: geometric:<r> or list:<w1>,<w2>,...
        #[arg(long)]
        petals: Option<String>,
    },
}

#[derive(Subcommand, Clone, Copy)]
enum EnumerateKind {
    Backward,
    Forward,
    /// Joint law of the excursion from the start state back to itself.
    Excursion,
}

#[derive(Subcommand)]
enum SimulateKind {
    Backward,
    Forward,
    Excursions,
    Perpetuity,
    /// P(|S_n| ≤ x) under the stationary start.
    Diverge {
        #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000, 10000])]
        checkpoints: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        x: f64,
    },
}

#[derive(Subcommand, Clone, Copy)]
enum DirectionArg {
    Backward,
    Forward,
}

#[derive(Subcommand, Clone, Copy)]
enum FixedPointKind {
    Solve,
    Classify,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    match std::env::var("PERPETUA_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::Usage(format!("PERPETUA_THREADS={v:?} is not a count"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let o = &cli.opts;
    if let Some(t) = o.tol {
        if !(t > 0.0) {
            return Err(Failure::Usage("--tol must be positive".into()));
        }
    }
    if let Some(k) = threads(o.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let report = match &cli.command {
        Command::Examples { name, petals } => examples(name.as_deref(), petals.as_deref())?,
        Command::Simulate { kind } => simulate(kind, o)?,
        Command::Classify { ln_threshold } => classify(o, *ln_threshold)?,
        command => {
            let model = finite_model(o)?;
            match command {
                Command::Validate => json!({
                    "valid": true,
                    "states": model.labels(),
                    "pi": model.pi(),
                    "mean_log_abs_a": model.mean_log_abs_a(),
                    "standing_assumption": model.standing_assumption(),
                }),
                Command::Stationary => json!({ "states": model.labels(), "pi": model.pi() }),
                Command::Dual => to_value(&model.dual().to_spec()),
                Command::Enumerate { kind } => enumerate(*kind, &model, o)?,
                Command::Degeneracy { dual } => {
                    to_value(&if *dual { detect_dual(&model) } else { detect(&model) }.map_err(regime)?)
                }
                Command::Limit { direction, validate } => limit(*direction, *validate, &model, o)?,
                Command::FixedPoint { kind } => fixed_point(*kind, &model, o)?,
                _ => unreachable!(),
            }
        }
    };
    emit(&report, o.out.as_deref())
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("reports serialize")
}

fn emit(report: &Value, out: Option<&Path>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    let written = match out {
        Some(p) => std::fs::write(p, text),
        None => io::stdout().write_all(text.as_bytes()),
    };
    written.map_err(|e| Failure::Usage(format!("cannot write report: {e}")))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), Failure> {
    let err = |e: &dyn Display| Failure::Usage(format!("cannot write {}: {e}", path.display()));
    let file = File::create(path).map_err(|e| err(&e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))
}

#[derive(Serialize)]
struct ValueRow {
    value: f64,
}

fn model_path(o: &Opts) -> Result<&Path, Failure> {
    o.model.as_deref().ok_or_else(|| Failure::Usage("--model is required".into()))
}

fn finite_model(o: &Opts) -> Result<Model, Failure> {
    load_model(model_path(o)?)?.finite()
}

fn z0_for(model: &Model, o: &Opts) -> Result<InitialLaw, Failure> {
    initial_law(o.z0.as_deref(), model.labels(), model.initial_law())
}

fn shared_z0(z0: &InitialLaw) -> Result<&DiscreteLaw, Failure> {
    if z0.is_state_independent() {
        Ok(z0.at(0))
    } else {
        Err(Failure::Usage("enumeration needs the same initial law at every state".into()))
    }
}

fn start_label(s: StartRef, labels: Option<&[String]>) -> String {
    match s {
        StartRef::Stationary => "pi".into(),
        StartRef::State(i) => labels.map_or_else(|| i.to_string(), |l| l[i].clone()),
    }
}

fn enumerate(kind: EnumerateKind, model: &Model, o: &Opts) -> Result<Value, Failure> {
    let n = o.n.unwrap_or(5);
    let cfg = OracleConfig { horizon: o.horizon.unwrap_or(OracleConfig::default().horizon).max(n), ..OracleConfig::default() };
    if let EnumerateKind::Excursion = kind {
        let i = single_start(o.start.as_deref(), model)?;
        return Ok(to_value(&excursion_law(model, i, o.horizon.unwrap_or(12), &cfg).map_err(regime)?));
    }
    let z0 = z0_for(model, o)?;
    let z = shared_z0(&z0)?;
    let s = start(o.start.as_deref(), Some(model.labels()), model.n_states(), true)?;
    let law = match (kind, s) {
        (EnumerateKind::Backward, StartRef::State(i)) => enumerate_backward(model, i, n, z, &cfg),
        (EnumerateKind::Backward, StartRef::Stationary) => enumerate_backward_stationary(model, n, z, &cfg),
        (EnumerateKind::Forward, StartRef::State(i)) => enumerate_forward(model, i, n, z, &cfg),
        (EnumerateKind::Forward, StartRef::Stationary) => enumerate_forward_stationary(model, n, z, &cfg),
        (EnumerateKind::Excursion, _) => unreachable!(),
    }
    .map_err(regime)?;
    Ok(to_value(&Enumeration::exact(&law)))
}

fn simulate(kind: &SimulateKind, o: &Opts) -> Result<Value, Failure> {
    let loaded = load_model(model_path(o)?)?;
    let replicas = o.replicas.unwrap_or(100_000);
    let (gen, model): (Box<dyn Generator>, Option<&Model>);
    let finite;
    match loaded {
        Loaded::Finite(m) => {
            finite = m;
            gen = Box::new(FiniteSampler::new(&finite));
            model = Some(&finite);
        }
        Loaded::Generator(GeneratorDoc::Flower(f)) => {
            gen = Box::new(f);
            model = None;
        }
    }
    let labels = model.map(|m| m.labels());
    let states = model.map_or(usize::MAX, |m| m.n_states());
    let s = start(o.start.as_deref(), labels, states, model.is_some())?;
    let start_arg = match s {
        StartRef::State(i) => Start::State(i),
        StartRef::Stationary => Start::Law(model.expect("finite model").pi()),
    };
    let need_finite = || model.ok_or_else(|| Failure::Regime("this simulation needs a finite model".into()));
    match kind {
        SimulateKind::Backward | SimulateKind::Forward => {
            let n = o.n.unwrap_or(100);
            let z0 = match model {
                Some(m) => z0_for(m, o)?.per_state,
                None => initial_law(o.z0.as_deref(), &[String::new()], None)?.per_state,
            };
            let backward = matches!(kind, SimulateKind::Backward);
            let set = if backward {
                run_backward(gen.as_ref(), start_arg, n, &z0, replicas, o.seed)
            } else {
                run_forward(gen.as_ref(), start_arg, n, &z0, replicas, o.seed)
            };
            if let Some(p) = &o.csv {
                write_csv(p, set.values.iter().map(|&value| ValueRow { value }))?;
            }
            let finite_values: Vec<f64> = set.values.iter().copied().filter(|v| v.is_finite()).collect();
            Ok(json!({
                "direction": if backward { "backward" } else { "forward" },
                "start": start_label(s, labels),
                "n": n,
                "replicas": replicas,
                "seed": o.seed,
                "flagged": set.flagged.len(),
                "summary": LawSummary::of(&DiscreteLaw::from_samples(&finite_values)),
            }))
        }
        SimulateKind::Excursions => {
            let StartRef::State(i) = s else { return Err(Failure::Usage("excursions need a single start state".into())) };
            let batch = sample_excursions(gen.as_ref(), i, replicas, o.seed, DEFAULT_STEP_CAP).map_err(regime)?;
            if let Some(p) = &o.csv {
                write_csv(p, batch.samples.iter())?;
            }
            let k = batch.samples.len() as f64;
            let mean = |f: fn(&perpetua::simulate::ExcursionSample) -> f64| batch.samples.iter().map(f).sum::<f64>() / k;
            Ok(json!({
                "state": start_label(s, labels),
                "count": batch.samples.len(),
                "seed": batch.seed,
                "mean_tau": mean(|x| x.tau as f64),
                "mean_s_tau": mean(|x| x.s_tau),
                "fraction_pi_one": mean(|x| if x.pi_is_one { 1.0 } else { 0.0 }),
                "hat_tau": batch.hat_tau,
            }))
        }
        SimulateKind::Perpetuity => {
            let m = need_finite()?;
            let horizon = o.horizon.unwrap_or(1000);
            let p = perpetuity_samples(m, start_arg, replicas, horizon, o.seed).map_err(regime)?;
            if let Some(path) = &o.csv {
                write_csv(path, p.values.iter().map(|&value| ValueRow { value }))?;
            }
            Ok(json!({
                "start": start_label(s, labels),
                "samples": p.values.len(),
                "horizon": p.horizon,
                "seed": p.seed,
                "max_abs_pi_horizon": p.max_abs_pi_horizon,
                "summary": LawSummary::of(&p.law()),
            }))
        }
        SimulateKind::Diverge { checkpoints, x } => {
            let m = need_finite()?;
            let r = divergence_diagnostic(m, checkpoints, *x, o.replicas.unwrap_or(10_000), o.seed).map_err(regime)?;
            if let Some(path) = &o.csv {
                #[derive(Serialize)]
                struct Row {
                    n: usize,
                    probability: f64,
                }
                write_csv(path, r.checkpoints.iter().map(|&(n, probability)| Row { n, probability }))?;
            }
            Ok(to_value(&r))
        }
    }
}

fn classify(o: &Opts, ln_threshold: f64) -> Result<Value, Failure> {
    match load_model(model_path(o)?)? {
        Loaded::Finite(m) => {
            let i = single_start(o.start.as_deref(), &m)?;
            Ok(to_value(&classify_report(&m, i, o.horizon.unwrap_or(12))))
        }
        Loaded::Generator(GeneratorDoc::Flower(f)) => {
            let i = match start(o.start.as_deref(), None, usize::MAX, false)? {
                StartRef::State(i) => i,
                StartRef::Stationary => unreachable!(),
            };
            let steps = o.n.unwrap_or(1_000_000) as u64;
            Ok(to_value(&mrw_trichotomy_mc(&f, i, steps, o.seed, ln_threshold).map_err(regime)?))
        }
    }
}

fn limit(direction: DirectionArg, check: bool, model: &Model, o: &Opts) -> Result<Value, Failure> {
    let i = single_start(o.start.as_deref(), model)?;
    let z0 = z0_for(model, o)?;
    let opts = LimitOptions {
        samples: o.replicas.unwrap_or(100_000),
        horizon: o.horizon.unwrap_or(1000),
        seed: o.seed,
    };
    let report = match direction {
        DirectionArg::Backward => backward_limit(model, i, &z0, &opts),
        DirectionArg::Forward => forward_limit(model, i, &z0, &opts),
    }
    .map_err(regime)?;
    let mut out = json!({ "report": report });
    if check {
        let vopts = ValidationOptions {
            replicas: o.replicas.unwrap_or(100_000),
            seed: o.seed.wrapping_add(1),
            ks_tol: o.tol.unwrap_or(ValidationOptions::default().ks_tol),
            ..ValidationOptions::default()
        };
        out["validation"] = to_value(&validate(model, &z0, &report, &vopts));
    }
    Ok(out)
}

fn fixed_point(kind: FixedPointKind, model: &Model, o: &Opts) -> Result<Value, Failure> {
    match kind {
        FixedPointKind::Classify => Ok(to_value(&fixed_point_classify(model).map_err(regime)?)),
        FixedPointKind::Solve => {
            let defaults = FixedPointOptions::default();
            let opts = FixedPointOptions {
                max_iters: o.n.unwrap_or(defaults.max_iters),
                tol: o.tol.unwrap_or(defaults.tol),
                ..defaults
            };
            let init = Kernel { per_state: z0_for(model, o)?.per_state };
            Ok(to_value(&fixed_point_solve(model, &init, &opts).map_err(regime)?))
        }
    }
}

fn examples(name: Option<&str>, petals: Option<&str>) -> Result<Value, Failure> {
    let Some(name) = name else { return Ok(json!({ "examples": NAMES })) };
    let weights = petals.map(PetalWeights::parse).transpose().map_err(Failure::Usage)?;
    if weights.is_some() && name != "flower" {
        return Err(Failure::Usage("--petals only applies to the flower chain".into()));
    }
    match builtin(name, weights) {
        Some(Builtin::Finite(m)) => Ok(to_value(&m.to_spec())),
        Some(Builtin::Flower(f)) => Ok(to_value(&GeneratorDoc::Flower(f))),
        None => Err(Failure::Usage(format!("unknown example {name:?}; known: {}", NAMES.join(", ")))),
    }
}
