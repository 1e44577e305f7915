use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use disorder_core::detect::{
    solve_detect, DetectArtifact, DetectOptions, FormulaVariant, OriginFormula, PosteriorGrid,
};
use disorder_core::double::{solve_d00, D00Artifact, D00Options, FirstStopRecursion};
use disorder_core::eval::{
    d00_baselines, detect_baselines, evaluate_d00, evaluate_detect, write_reports_csv, D00Rule, DetectRule,
    EvalReport,
};
use disorder_core::filter::{run_filter, write_trace_csv, PinmTracker, PosteriorState};
use disorder_core::simulate::{simulate_batch, write_batch_csv, SimulationRecord};
use disorder_core::verdict::verdict;
use disorder_core::{DisorderError, ModelSpec};

#[derive(Parser)]
#[command(name = "disorder", version, about = "Detection of two successive disorders in a Markov chain")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate disorder moments and trajectories.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the posterior filter over an observed trajectory.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Comma-separated state labels x₁, x₂, … (x₀ comes from the model).
        #[arg(long, value_delimiter = ',')]
        observations: Vec<String>,
        /// Also report P(θ₁ = m, θ₂ > n | observations) for these m.
        #[arg(long, value_delimiter = ',')]
        track: Vec<usize>,
    },
    /// Solve the detection problem for the in-between phase.
    SolveDetect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 11)]
        grid_alpha: usize,
        #[arg(long, default_value_t = 11)]
        grid_beta: usize,
    },
    /// Solve the exact detection of both disorders.
    SolveD00 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_enum, default_value_t = Recursion::Proof)]
        recursion: Recursion,
    },
    /// Monte Carlo success probabilities of the optimal rule and baselines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Problem::Detect)]
        problem: Problem,
        #[arg(long, value_enum, default_value_t = PolicySet::All)]
        policy: PolicySet,
        #[arg(long, default_value_t = 100_000)]
        runs: u64,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Compare competing closed forms against the exact finite-horizon optimum.
    OracleVerdict {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 6)]
        horizon: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = Variant::Proof)]
    variant: Variant,
    /// Write the artifact even when value iteration has not converged.
    #[arg(long)]
    allow_nonconverged: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Printed,
    Proof,
}

impl From<Variant> for FormulaVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Printed => FormulaVariant::Printed,
            Variant::Proof => FormulaVariant::Proof,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Recursion {
    Statement,
    Proof,
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    Detect,
    D00,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicySet {
    Optimal,
    Baselines,
    All,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<DisorderError> for Failure {
    fn from(e: DisorderError) -> Self {
        let code = match &e {
            DisorderError::InvalidModel(_) => 3,
            DisorderError::NonConvergence { .. } => 4,
            DisorderError::TreeTooLarge { .. } | DisorderError::PrefixTooLong { .. } => 5,
            DisorderError::InvalidArgument(_)
            | DisorderError::StateOutOfRange { .. }
            | DisorderError::UnknownState(_)
            | DisorderError::ZeroLikelihood { .. }
            | DisorderError::Parse(_)
            | DisorderError::Io(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn config_error(message: String) -> Failure {
    Failure { code: 2, message }
}

fn load_model(path: &Path) -> std::result::Result<ModelSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read model file {}: {e}", path.display())))?;
    ModelSpec::from_json(&text).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn model_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Writes the artifact; returns whether it went to a file.
fn emit(out: Option<&Path>, bytes: &[u8]) -> std::io::Result<bool> {
    match out {
        Some(p) => {
            std::fs::write(p, bytes)?;
            Ok(true)
        }
        None => {
            let mut o = std::io::stdout().lock();
            o.write_all(bytes)?;
            o.flush()?;
            Ok(false)
        }
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serializes");
    v.push(b'\n');
    v
}

#[derive(Serialize)]
struct SimulationArtifact<'a> {
    schema: u32,
    horizon: usize,
    runs: usize,
    seed: u64,
    records: &'a [SimulationRecord],
}

fn cmd_simulate(common: &Common, horizon: usize, runs: usize, seed: Option<u64>) -> CmdResult {
    let model = load_model(&common.model)?;
    if horizon == 0 || runs == 0 {
        return Err(config_error("horizon and runs must be positive".into()));
    }
    let seed = seed_or_entropy(seed);
    let batch = simulate_batch(&model, horizon, runs, seed)?;
    let bytes = match common.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut buf = Vec::new();
            write_batch_csv(&mut buf, &model, &batch)?;
            buf
        }
        Format::Json => json_bytes(&SimulationArtifact {
            schema: 1,
            horizon,
            runs,
            seed,
            records: &batch,
        }),
    };
    if emit(common.out.as_deref(), &bytes)? {
        let mut counts = [0usize; 6];
        for r in &batch {
            if let Some(c) = counts.get_mut(r.theta1 as usize) {
                *c += 1;
            }
        }
        let head: Vec<String> = counts
            .iter()
            .enumerate()
            .map(|(j, c)| format!("{j}:{:.4}", *c as f64 / runs as f64))
            .collect();
        println!("runs {runs} horizon {horizon} seed {seed}");
        println!("empirical P(theta1 = j) {}", head.join(" "));
    }
    Ok(())
}

#[derive(Serialize)]
struct FilterArtifact {
    schema: u32,
    states: Vec<String>,
    trace: Vec<PosteriorState>,
    /// `pi_mn[n][m]` for `m = 0..=n`.
    pi_mn: Vec<Vec<f64>>,
}

fn cmd_filter(common: &Common, observations: &[String], track: &[usize]) -> CmdResult {
    let model = load_model(&common.model)?;
    let obs: Vec<usize> = observations
        .iter()
        .map(|l| {
            model
                .space
                .index_of(l)
                .ok_or_else(|| config_error(format!("unknown state label {l:?}")))
        })
        .collect::<std::result::Result<_, _>>()?;
    let trace = run_filter(&model, &obs)?;
    let bytes = match common.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut buf = Vec::new();
            write_trace_csv(&mut buf, &model, &trace, track)?;
            buf
        }
        Format::Json => {
            let mut tracker = PinmTracker::new(&model);
            let mut pi_mn = vec![tracker.values().to_vec()];
            for &y in &obs {
                tracker.observe(&model, y)?;
                pi_mn.push(tracker.values().to_vec());
            }
            json_bytes(&FilterArtifact {
                schema: 1,
                states: model.space.labels().to_vec(),
                trace,
                pi_mn,
            })
        }
    };
    emit(common.out.as_deref(), &bytes)?;
    Ok(())
}

fn require_json(common: &Common) -> CmdResult {
    match common.format {
        Some(Format::Csv) => Err(config_error("this command writes JSON only".into())),
        _ => Ok(()),
    }
}

fn detect_options(s: &SolverArgs) -> DetectOptions {
    let d = DetectOptions::default();
    DetectOptions {
        tol: s.tol.unwrap_or(d.tol),
        max_iter: s.max_iter,
        formula: OriginFormula::uniform(s.variant.into()),
        allow_nonconverged: s.allow_nonconverged,
    }
}

fn d00_options(s: &SolverArgs, recursion: Recursion) -> D00Options {
    let d = D00Options::default();
    D00Options {
        tol: s.tol.unwrap_or(d.tol),
        max_iter: s.max_iter,
        recursion: match recursion {
            Recursion::Statement => FirstStopRecursion::Statement,
            Recursion::Proof => FirstStopRecursion::Proof,
        },
        origin: s.variant.into(),
        allow_nonconverged: s.allow_nonconverged,
    }
}

fn warn_nonconverged(converged: bool, iterations: usize, delta: f64) {
    if !converged {
        eprintln!("warning: not converged after {iterations} sweeps, residual {delta:e}");
    }
}

fn cmd_solve_detect(common: &Common, solver: &SolverArgs, grid_alpha: usize, grid_beta: usize) -> CmdResult {
    require_json(common)?;
    let model = load_model(&common.model)?;
    let grid = PosteriorGrid::uniform(grid_alpha, grid_beta)?;
    let policy = solve_detect(&model, &detect_options(solver))?;
    let t = &policy.table;
    warn_nonconverged(t.converged, t.iterations, t.delta);
    let artifact = DetectArtifact::new(&model, &policy, &grid);
    if emit(common.out.as_deref(), &json_bytes(&artifact))? {
        println!(
            "value {:.12} iterations {} residual {:e}",
            policy.value_at_x0, t.iterations, t.delta
        );
    }
    Ok(())
}

fn cmd_solve_d00(common: &Common, solver: &SolverArgs, recursion: Recursion) -> CmdResult {
    require_json(common)?;
    let model = load_model(&common.model)?;
    let policy = solve_d00(&model, &d00_options(solver, recursion))?;
    warn_nonconverged(policy.second.converged, policy.second.iterations, policy.second.delta);
    warn_nonconverged(policy.first.converged, policy.first.iterations, policy.first.delta);
    let artifact = D00Artifact::new(&model, &policy);
    if emit(common.out.as_deref(), &json_bytes(&artifact))? {
        println!(
            "value {:.12} iterations {}+{} residual {:e}",
            policy.value_at_x0,
            policy.second.iterations,
            policy.first.iterations,
            policy.second.delta.max(policy.first.delta)
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalArtifact {
    schema: u32,
    /// Value reported by the solver, when the optimal rule was evaluated.
    solver_value: Option<f64>,
    reports: Vec<EvalReport>,
}

struct EvalArgs<'a> {
    policy: PolicySet,
    runs: u64,
    horizon: usize,
    seed: u64,
    solver: &'a SolverArgs,
}

fn run_detect_eval(model: &ModelSpec, id: &str, a: &EvalArgs) -> std::result::Result<EvalArtifact, Failure> {
    let mut rules: Vec<Box<dyn DetectRule>> = Vec::new();
    let mut solver_value = None;
    if a.policy != PolicySet::Baselines {
        let p = solve_detect(model, &detect_options(a.solver))?;
        solver_value = Some(p.value_at_x0);
        rules.push(Box::new(p));
    }
    if a.policy != PolicySet::Optimal {
        rules.extend(detect_baselines());
    }
    let reports = rules
        .iter()
        .map(|r| evaluate_detect(model, id, r.as_ref(), a.runs, a.horizon, a.seed))
        .collect::<disorder_core::Result<_>>()?;
    Ok(EvalArtifact {
        schema: 1,
        solver_value,
        reports,
    })
}

fn run_d00_eval(model: &ModelSpec, id: &str, a: &EvalArgs) -> std::result::Result<EvalArtifact, Failure> {
    let mut rules: Vec<Box<dyn D00Rule>> = Vec::new();
    let mut solver_value = None;
    if a.policy != PolicySet::Baselines {
        let p = solve_d00(model, &d00_options(a.solver, Recursion::Proof))?;
        solver_value = Some(p.value_at_x0);
        rules.push(Box::new(p));
    }
    if a.policy != PolicySet::Optimal {
        rules.extend(d00_baselines());
    }
    let reports = rules
        .iter()
        .map(|r| evaluate_d00(model, id, r.as_ref(), a.runs, a.horizon, a.seed))
        .collect::<disorder_core::Result<_>>()?;
    Ok(EvalArtifact {
        schema: 1,
        solver_value,
        reports,
    })
}

fn cmd_evaluate(common: &Common, problem: Problem, args: EvalArgs) -> CmdResult {
    let model = load_model(&common.model)?;
    let id = model_id(&common.model);
    let artifact = match problem {
        Problem::Detect => run_detect_eval(&model, &id, &args)?,
        Problem::D00 => run_d00_eval(&model, &id, &args)?,
    };
    for r in &artifact.reports {
        if let Some(w) = &r.warning {
            eprintln!("warning: {}: {w}", r.policy);
        }
    }
    let bytes = match common.format.unwrap_or(Format::Json) {
        Format::Json => json_bytes(&artifact),
        Format::Csv => {
            let mut buf = Vec::new();
            write_reports_csv(&mut buf, &artifact.reports)?;
            buf
        }
    };
    if emit(common.out.as_deref(), &bytes)? {
        for r in &artifact.reports {
            println!("{:<24} {:.5} ± {:.5}", r.policy, r.estimate, r.std_error);
        }
    }
    Ok(())
}

fn cmd_verdict(common: &Common, horizon: usize) -> CmdResult {
    require_json(common)?;
    let model = load_model(&common.model)?;
    let report = verdict(&model, horizon)?;
    if emit(common.out.as_deref(), &json_bytes(&report))? {
        for e in &report.entries {
            println!("{}: {}", e.name, e.winner);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_error("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_error(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate {
            common,
            horizon,
            runs,
            seed,
        } => cmd_simulate(common, *horizon, *runs, *seed),
        Command::Filter {
            common,
            observations,
            track,
        } => cmd_filter(common, observations, track),
        Command::SolveDetect {
            common,
            solver,
            grid_alpha,
            grid_beta,
        } => cmd_solve_detect(common, solver, *grid_alpha, *grid_beta),
        Command::SolveD00 {
            common,
            solver,
            recursion,
        } => cmd_solve_d00(common, solver, *recursion),
        Command::Evaluate {
            common,
            problem,
            policy,
            runs,
            horizon,
            seed,
            solver,
        } => cmd_evaluate(
            common,
            *problem,
            EvalArgs {
                policy: *policy,
                runs: *runs,
                horizon: *horizon,
                seed: seed_or_entropy(*seed),
                solver,
            },
        ),
        Command::OracleVerdict { common, horizon } => cmd_verdict(common, *horizon),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
