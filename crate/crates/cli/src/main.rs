//! Command-line surface for the reduction / tuning / rule-extraction
//! pipeline.
//!
//! Subcommands mirror the library stages: `bench` inspects the plant
//! catalog, `reduce` fits dead-time templates, `tune` runs the GA
//! controller search, `rules` evaluates and benchmarks the closed-form
//! formulas, `gp` evolves new formulas from a tuning dataset, and
//! `pipeline full` chains everything into a report bundle.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
//! Randomized commands take `--seed` or fall back to the `NYQTUNE_SEED`
//! environment variable. Artifact-writing commands drop a `manifest.json`
//! next to their outputs; nothing time-dependent is written, so re-running
//! a recorded command reproduces its directory byte for byte.

mod gp_cmd;
mod manifest;
mod pipeline;

use clap::{Args, Parser, Subcommand, ValueEnum};
use manifest::RunManifest;
use nyqtune_core::bench::{catalog, make_testbench, reference_fit, BenchSpec, ReferenceFit};
use nyqtune_core::frac::ControllerParams;
use nyqtune_core::ga::GaConfig;
use nyqtune_core::reduce::{
    reduce, FrequencyGrid, GridUnit, NormKind, ReduceConfig, ReduceObjective, ReduceResult,
};
use nyqtune_core::sim::{CostWeights, SimConfig};
use nyqtune_core::tf::{DelayTF, TemplateKind};
use nyqtune_core::tuning::{
    compare_rule_vs_optimal, rule_fopid, rule_pid, tune_controller, ControllerKind, DatasetConfig,
    RuleInput, TuningProblem,
};
use serde::Serialize;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

/// Runtime failures exit 1; usage failures exit 2, matching the argument
/// parser's own convention.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<nyqtune_core::Error> for Failure {
    fn from(e: nyqtune_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("NYQTUNE_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            Failure::Usage(format!("NYQTUNE_SEED must be an unsigned integer, got '{v}'"))
        }),
        Err(_) => Err(Failure::Usage(
            "this command is randomized; pass --seed <u64> or set NYQTUNE_SEED".into(),
        )),
    }
}

pub fn sanitize(tag: &str) -> String {
    tag.replace(':', "-")
}

/// Prints one line to stdout, treating a closed pipe as a normal end of
/// output instead of a panic.
pub fn emit(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

/// `println!` that survives the consumer closing the pipe early.
macro_rules! say {
    ($($arg:tt)*) => { $crate::emit(&format!($($arg)*)) };
}
pub(crate) use say;

pub fn ensure_out_dir(flag: Option<PathBuf>, default_name: String) -> Result<PathBuf, Failure> {
    let dir = flag.unwrap_or_else(|| PathBuf::from("nyqtune_out").join(default_name));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn parse_spec(s: &str) -> Result<BenchSpec, String> {
    s.parse::<BenchSpec>().map_err(|e| e.to_string())
}

#[derive(Debug, Copy, Clone, ValueEnum)]
enum TemplateArg {
    Foptd,
    Soptd,
}

impl TemplateArg {
    fn to_core(self) -> TemplateKind {
        match self {
            TemplateArg::Foptd => TemplateKind::Foptd,
            TemplateArg::Soptd => TemplateKind::Soptd,
        }
    }
}

#[derive(Debug, Copy, Clone, ValueEnum)]
enum ObjectiveArg {
    Nyquist,
    H2,
}

#[derive(Debug, Copy, Clone, ValueEnum)]
enum NormArg {
    Length,
    Rms,
}

impl NormArg {
    fn to_core(self) -> NormKind {
        match self {
            NormArg::Length => NormKind::Length,
            NormArg::Rms => NormKind::Rms,
        }
    }
}

#[derive(Debug, Copy, Clone, ValueEnum)]
enum GridUnitArg {
    Rad,
    Hz,
}

impl GridUnitArg {
    fn to_core(self) -> GridUnit {
        match self {
            GridUnitArg::Rad => GridUnit::Rad,
            GridUnitArg::Hz => GridUnit::Hz,
        }
    }
}

#[derive(Debug, Copy, Clone, ValueEnum)]
pub enum KindArg {
    Pid,
    Fopid,
}

impl KindArg {
    pub fn to_core(self) -> ControllerKind {
        match self {
            KindArg::Pid => ControllerKind::Pid,
            KindArg::Fopid => ControllerKind::Fopid,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "nyqtune",
    version,
    about = "Dead-time model reduction, PID/FOPID tuning, and tuning-rule extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the built-in test-bench catalog
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Fit a FOPTD or SOPTD template to a bench plant
    Reduce(ReduceArgs),
    /// GA-tune a PID or fractional PID against a bench plant
    Tune(TuneArgs),
    /// Closed-form tuning rules
    #[command(subcommand)]
    Rules(RulesCmd),
    /// Symbolic regression over a tuning dataset
    #[command(subcommand)]
    Gp(GpCmd),
    /// End-to-end report pipeline
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Print all catalog entries as CSV (spec, class, parameter)
    List,
    /// Print one plant and its reference fit as JSON
    Show {
        /// Plant identifier, e.g. P1:3 or P2:0.5
        #[arg(long, value_parser = parse_spec)]
        bench: BenchSpec,
    },
}

#[derive(Args)]
struct ReduceArgs {
    /// Plant identifier, e.g. P1:3 or P2:0.5
    #[arg(long, value_parser = parse_spec)]
    bench: BenchSpec,
    #[arg(long, value_enum, default_value_t = TemplateArg::Soptd)]
    template: TemplateArg,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Nyquist)]
    objective: ObjectiveArg,
    /// Residual aggregation for the frequency-plane objective
    #[arg(long, value_enum, default_value_t = NormArg::Length)]
    norm: NormArg,
    /// Unit of the log-grid endpoints
    #[arg(long, value_enum, default_value_t = GridUnitArg::Rad)]
    grid_unit: GridUnitArg,
    /// Real-part residual weight
    #[arg(long, default_value_t = 1.0)]
    w_re: f64,
    /// Imaginary-part residual weight
    #[arg(long, default_value_t = 1.0)]
    w_im: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// GA population size
    #[arg(long)]
    pop: Option<usize>,
    /// GA generations
    #[arg(long)]
    gens: Option<usize>,
    /// Output directory (default nyqtune_out/reduce-<spec>)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    /// Plant identifier, e.g. P1:3 or P2:0.5
    #[arg(long, value_parser = parse_spec)]
    bench: BenchSpec,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    seed: Option<u64>,
    /// GA population size
    #[arg(long)]
    pop: Option<usize>,
    /// GA generations
    #[arg(long)]
    gens: Option<usize>,
    /// Simulation samples per closed-loop evaluation
    #[arg(long)]
    steps: Option<usize>,
    /// Time-weighted absolute-error weight
    #[arg(long)]
    w1: Option<f64>,
    /// Squared-control-effort weight
    #[arg(long)]
    w2: Option<f64>,
    /// Output directory (default nyqtune_out/tune-<kind>-<spec>)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RulesCmd {
    /// Evaluate a rule at explicit model parameters; JSON to stdout
    Eval(RulesEvalArgs),
    /// Benchmark a rule against direct GA tuning on one plant
    Compare(RulesCompareArgs),
}

#[derive(Args)]
struct RulesEvalArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Larger fitted time constant
    #[arg(long)]
    tau_max: f64,
    /// Smaller fitted time constant
    #[arg(long)]
    tau_min: f64,
    /// Dead time in seconds
    #[arg(long = "L", visible_alias = "l")]
    l: f64,
    /// Fitted gain; the rules require 1 (normalize the plant first)
    #[arg(long, default_value_t = 1.0)]
    k: f64,
}

#[derive(Args)]
struct RulesCompareArgs {
    /// Plant identifier, e.g. P1:3 or P2:0.5
    #[arg(long, value_parser = parse_spec)]
    bench: BenchSpec,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    seed: Option<u64>,
    /// GA population size
    #[arg(long)]
    pop: Option<usize>,
    /// GA generations
    #[arg(long)]
    gens: Option<usize>,
    /// Simulation samples per closed-loop evaluation
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory (default nyqtune_out/compare-<kind>-<spec>)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GpCmd {
    /// Evolve formulas for one dataset column
    Run(gp_cmd::GpRunArgs),
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Reduce, tune, regress, and compare across the whole catalog
    Full(pipeline::PipelineArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Bench(BenchCmd::List) => run_bench_list(),
        Command::Bench(BenchCmd::Show { bench }) => run_bench_show(bench),
        Command::Reduce(args) => run_reduce(&args),
        Command::Tune(args) => run_tune(&args),
        Command::Rules(RulesCmd::Eval(args)) => run_rules_eval(&args),
        Command::Rules(RulesCmd::Compare(args)) => run_rules_compare(&args),
        Command::Gp(GpCmd::Run(args)) => gp_cmd::run(&args),
        Command::Pipeline(PipelineCmd::Full(args)) => pipeline::run_full(&args),
    }
}

fn run_bench_list() -> Result<(), Failure> {
    say!("spec,class,parameter");
    for spec in catalog() {
        say!("{},{},{}", spec, spec.class, spec.parameter);
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    spec: String,
    plant: DelayTF,
    dc_gain: f64,
    stable: bool,
    reference: Option<ReferenceFit>,
}

fn run_bench_show(spec: BenchSpec) -> Result<(), Failure> {
    let plant = make_testbench(spec)?;
    let report = BenchReport {
        spec: spec.to_string(),
        dc_gain: plant.dc_gain()?,
        stable: plant.is_stable()?,
        reference: reference_fit(spec),
        plant,
    };
    say!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct ReduceReport<'a> {
    spec: String,
    config: &'a ReduceConfig,
    result: &'a ReduceResult,
    /// Catalog objective value for the same plant, when it has one.
    j_reference: Option<f64>,
}

fn nyquist_csv(grid: &FrequencyGrid, plant: &DelayTF, model: &DelayTF) -> Result<String, Failure> {
    let pr = grid.response(plant)?;
    let mr = grid.response(model)?;
    let mut out = String::from("omega_rad_s,plant_re,plant_im,model_re,model_im\n");
    for ((w, p), m) in grid.omegas().iter().zip(&pr).zip(&mr) {
        out.push_str(&format!("{},{},{},{},{}\n", w, p.re, p.im, m.re, m.im));
    }
    Ok(out)
}

fn run_reduce(args: &ReduceArgs) -> Result<(), Failure> {
    let seed = resolve_seed(args.seed)?;
    let spec = args.bench;
    let plant = make_testbench(spec)?;

    let mut config = ReduceConfig::standard(args.template.to_core(), seed);
    config.grid = FrequencyGrid::standard(args.grid_unit.to_core());
    config.nyquist.norm = args.norm.to_core();
    config.nyquist.w_re = args.w_re;
    config.nyquist.w_im = args.w_im;
    config.objective = match args.objective {
        ObjectiveArg::Nyquist => ReduceObjective::Nyquist,
        ObjectiveArg::H2 => ReduceObjective::H2,
    };
    if let Some(p) = args.pop {
        config.ga.population = p;
    }
    if let Some(g) = args.gens {
        config.ga.generations = g;
    }

    let result = reduce(&plant, &config, &[])?;
    let j_reference = reference_fit(spec).map(|f| f.j_ref);

    let dir = ensure_out_dir(args.out.clone(), format!("reduce-{}", sanitize(&spec.to_string())))?;
    let mut m = RunManifest::new(
        "reduce",
        Some(seed),
        json!({ "bench": spec.to_string(), "reduce": config }),
    );
    let report =
        ReduceReport { spec: spec.to_string(), config: &config, result: &result, j_reference };
    m.write_json(&dir, "reduction.json", &report)?;
    m.write_text(&dir, "nyquist.csv", &nyquist_csv(&config.grid, &plant, &result.model.to_tf())?)?;
    m.finish(&dir)?;

    let mdl = &result.model;
    say!(
        "{spec}: J = {:.6}, K = {:.4}, tau_max = {:.4}, tau_min = {:.4}, L = {:.4} (outputs in {})",
        result.j,
        mdl.k,
        mdl.tau_max,
        mdl.tau_min,
        mdl.l,
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TuneReport {
    spec: String,
    kind: String,
    rule_seeded: bool,
    weights: CostWeights,
    horizon: f64,
    steps: usize,
    ga: GaConfig,
    params: ControllerParams,
    j: f64,
    evaluations: usize,
    history: Vec<f64>,
}

fn run_tune(args: &TuneArgs) -> Result<(), Failure> {
    let seed = resolve_seed(args.seed)?;
    let spec = args.bench;
    let kind = args.kind.to_core();
    let plant = make_testbench(spec)?;

    let mut problem = TuningProblem::standard(plant, kind)?;
    if let Some(steps) = args.steps {
        problem.sim = SimConfig::new(problem.sim.horizon, steps)?;
    }
    if let Some(w) = args.w1 {
        problem.weights.w_itae = w;
    }
    if let Some(w) = args.w2 {
        problem.weights.w_isco = w;
    }

    let mut ga = GaConfig { seed, ..GaConfig::default() };
    if let Some(p) = args.pop {
        ga.population = p;
    }
    if let Some(g) = args.gens {
        ga.generations = g;
    }

    // warm-start from the matching closed-form rule when the plant has a
    // catalog fit; elitism means this can only help
    let mut seeds = Vec::new();
    if let Some(fit) = reference_fit(spec) {
        let input = RuleInput::from_model(&fit.model);
        let rule = match kind {
            ControllerKind::Pid => rule_pid(&input),
            ControllerKind::Fopid => rule_fopid(&input),
        };
        if let Ok(params) = rule {
            seeds.push(params);
        }
    }

    let tuned = tune_controller(&problem, &ga, &seeds)?;

    let dir = ensure_out_dir(
        args.out.clone(),
        format!("tune-{}-{}", kind, sanitize(&spec.to_string())),
    )?;
    let mut m = RunManifest::new(
        "tune",
        Some(seed),
        json!({
            "bench": spec.to_string(),
            "kind": kind.to_string(),
            "weights": problem.weights,
            "horizon": problem.sim.horizon,
            "steps": problem.sim.steps,
            "ga": ga,
        }),
    );
    let report = TuneReport {
        spec: spec.to_string(),
        kind: kind.to_string(),
        rule_seeded: !seeds.is_empty(),
        weights: problem.weights,
        horizon: problem.sim.horizon,
        steps: problem.sim.steps,
        ga,
        params: tuned.params,
        j: tuned.j,
        evaluations: tuned.evaluations,
        history: tuned.history,
    };
    m.write_json(&dir, "tune.json", &report)?;
    m.finish(&dir)?;

    let p = &report.params;
    say!(
        "{spec} {kind}: J = {:.6}, Kp = {:.4}, Ki = {:.4}, Kd = {:.4}, lambda = {:.4}, mu = {:.4} (outputs in {})",
        report.j,
        p.kp,
        p.ki,
        p.kd,
        p.lam,
        p.mu,
        dir.display()
    );
    Ok(())
}

fn run_rules_eval(args: &RulesEvalArgs) -> Result<(), Failure> {
    let input =
        RuleInput { k: args.k, tau_max: args.tau_max, tau_min: args.tau_min, l: args.l };
    let params = match args.kind.to_core() {
        ControllerKind::Pid => rule_pid(&input)?,
        ControllerKind::Fopid => rule_fopid(&input)?,
    };
    say!("{}", serde_json::to_string_pretty(&params)?);
    Ok(())
}

#[derive(Serialize)]
struct CompareReport {
    spec: String,
    kind: String,
    rule: ControllerParams,
    j_rule: f64,
    tuned: ControllerParams,
    j_tuned: f64,
    ratio: f64,
}

fn run_rules_compare(args: &RulesCompareArgs) -> Result<(), Failure> {
    let seed = resolve_seed(args.seed)?;
    let spec = args.bench;
    let kind = args.kind.to_core();

    let mut cfg = DatasetConfig::default();
    cfg.ga.seed = seed;
    if let Some(p) = args.pop {
        cfg.ga.population = p;
    }
    if let Some(g) = args.gens {
        cfg.ga.generations = g;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }

    let record = compare_rule_vs_optimal(spec, kind, &cfg)?;

    let dir = ensure_out_dir(
        args.out.clone(),
        format!("compare-{}-{}", kind, sanitize(&spec.to_string())),
    )?;
    let mut m = RunManifest::new(
        "rules compare",
        Some(seed),
        json!({
            "bench": spec.to_string(),
            "kind": kind.to_string(),
            "ga": cfg.ga,
            "steps": cfg.steps,
        }),
    );
    let report = CompareReport {
        spec: spec.to_string(),
        kind: kind.to_string(),
        rule: record.rule,
        j_rule: record.j_rule,
        tuned: record.tuned,
        j_tuned: record.j_tuned,
        ratio: record.ratio,
    };
    m.write_json(&dir, "compare.json", &report)?;
    m.write_text(&dir, "trajectories.csv", &record.to_csv())?;
    m.finish(&dir)?;

    say!(
        "{spec} {kind}: J_rule = {:.4}, J_tuned = {:.4}, ratio = {:.3} (outputs in {})",
        report.j_rule,
        report.j_tuned,
        report.ratio,
        dir.display()
    );
    Ok(())
}
