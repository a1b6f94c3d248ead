//! The `spk` command-line driver.
//!
//! Each command resolves its flags into a [`Job`] with every default
//! materialized, runs it, and writes `manifest.json` next to its outputs.
//! `spk replay --manifest FILE` re-runs the recorded job.
//!
//! Exit codes: 0 success, 1 verification failure or evaluation error,
//! 2 usage or configuration error, 3 size guard.

use std::ffi::OsString;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bounds::{check_trace, realized_lipschitz, BoundKind, BoundParameters, Schedule};
use crate::cq::{check_cc_mfcq, check_kkt, search_cc_pseudonormality_violation, CqOptions};
use crate::linalg::parse_vector;
use crate::model::{DenseVector, StructuredProblem};
use crate::oracle::{solve_constrained, solve_global, tau_threshold_experiment, Mode};
use crate::penalty::{PenaltyObjective, ZeroPolicy};
use crate::psm::{read_trace_csv, run_psm, write_trace_csv, SolverConfig, StepsizeRule, Termination};
use crate::sparse::SupportSet;
use crate::spsm::{monte_carlo, run_spsm, trial_rng, NoiseModel, StochasticOracle, StochasticParams};
use crate::{corpus, Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_GUARD: i32 = 3;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Problem arguments with this prefix name a built-in corpus instance.
pub const CORPUS_PREFIX: &str = "corpus:";

#[derive(Debug, Parser)]
#[command(
    name = "spk",
    version,
    about = "Cardinality-constrained optimization by exact l1 penalization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the deterministic or stochastic projected subgradient method.
    Solve(SolveArgs),
    /// Check a trace against the closed-form convergence bounds.
    VerifyBounds(VerifyArgs),
    /// Audit CC-MFCQ, restricted and classical MFCQ, and KKT at a point.
    CheckCq(CqArgs),
    /// Brute-force global optimum over all supports.
    Oracle(OracleArgs),
    /// Monte Carlo study of the stochastic method against its bounds.
    Mc(McArgs),
    /// Penalized optima over a grid of penalty parameters.
    TauSweep(TauArgs),
    /// Re-run a recorded manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Psm,
    Spsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Constant,
    Normalized,
    Diminishing,
    Polyak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    Fixed,
    Sc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleKindArg {
    Minibatch,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Zero,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Penalized,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Distance,
    Gap,
    ScDistance,
    ScGap,
}

#[derive(Debug, Args)]
struct PenaltyArgs {
    /// Problem JSON file, or `corpus:NAME` for a built-in instance.
    #[arg(long)]
    problem: String,
    /// Penalty parameter τ.
    #[arg(long, default_value_t = 10.0)]
    tau: f64,
    /// Multiplier used when a constraint value is exactly zero.
    #[arg(long, value_enum, default_value_t = PolicyArg::Zero)]
    policy: PolicyArg,
}

#[derive(Debug, Args)]
struct StochasticArgs {
    /// Step schedule: `fixed` (β_k = β) or `sc` (β_k = 2/(σ(k+1))).
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    #[arg(long)]
    beta: Option<f64>,
    /// Strong-convexity modulus; defaults to the problem's `sigma` field.
    #[arg(long)]
    sigma: Option<f64>,
    /// Stochastic subgradient oracle.
    #[arg(long = "oracle", value_enum, default_value_t = OracleKindArg::Minibatch)]
    oracle_kind: OracleKindArg,
    /// Minibatch size.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Additive noise scale: E‖ζ‖² = η².
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Psm)]
    method: MethodArg,
    /// Deterministic stepsize rule.
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Normalized-rule scale s̄ in α_k = s̄/‖d^k‖.
    #[arg(long)]
    scale: Option<f64>,
    /// Diminishing rule α_k = a/(k + b).
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// Polyak target level ρ.
    #[arg(long)]
    rho: Option<f64>,
    /// Polyak relaxation in (0, 2).
    #[arg(long, default_value_t = 1.0)]
    relax: f64,
    #[command(flatten)]
    stochastic: StochasticArgs,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    stop_tol: f64,
    /// Run all iterations without the ‖x^{k+1} − x^k‖ stopping test.
    #[arg(long)]
    no_stop: bool,
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Initial point as comma-separated values (default 0).
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Oracle summary JSON whose `x_star` becomes the trace reference.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Explicit reference point.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "reference")]
    x_star: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Unthinned trace CSV.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Distance)]
    kind: KindArg,
    /// Oracle summary JSON supplying `x_star` and `F_star`.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "reference")]
    x_star: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    f_star: Option<f64>,
    /// Lipschitz constant; defaults to the largest ‖d^k‖ in the trace.
    #[arg(long)]
    lipschitz: Option<f64>,
    /// ε ≥ ‖x¹ − x*‖; defaults to the first recorded distance, else ‖x*‖.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CqArgs {
    /// Problem JSON file, or `corpus:NAME`.
    #[arg(long)]
    problem: String,
    /// Point to audit, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    point: String,
    /// Also search for CC-pseudonormality violations.
    #[arg(long)]
    pseudonormality: bool,
    #[arg(long, default_value_t = CqOptions::default().rank_tol)]
    rank_tol: f64,
    #[arg(long, default_value_t = CqOptions::default().slack_tol)]
    slack_tol: f64,
    #[arg(long, default_value_t = CqOptions::default().activity_tol)]
    activity_tol: f64,
    #[arg(long, default_value_t = CqOptions::default().feasibility_tol)]
    feasibility_tol: f64,
    #[arg(long, default_value_t = CqOptions::default().kkt_tol)]
    kkt_tol: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Penalized)]
    mode: ModeArg,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct McArgs {
    /// Problem JSON file, or `corpus:NAME`.
    #[arg(long, default_value = "corpus:lsq50")]
    problem: String,
    #[arg(long, default_value_t = 10.0)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = PolicyArg::Zero)]
    policy: PolicyArg,
    #[command(flatten)]
    stochastic: StochasticArgs,
    /// Iterations per trial.
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Moment bounds; estimated over the first trial when absent.
    #[arg(long)]
    m1: Option<f64>,
    #[arg(long)]
    m2: Option<f64>,
    #[arg(long, default_value_t = 100)]
    moment_samples: usize,
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Oracle summary JSON; the penalized oracle runs when absent.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TauArgs {
    /// Problem JSON file, or `corpus:NAME`.
    #[arg(long)]
    problem: String,
    /// Comma-separated grid of τ values.
    #[arg(long, default_value = "0.1,0.3,1,3,10,30,100,300,1000")]
    taus: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; defaults to the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SolveMethod {
    Psm {
        rule: StepsizeRule,
    },
    Spsm {
        schedule: Schedule,
        oracle: NoiseModel,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveJob {
    pub problem: String,
    pub tau: f64,
    pub policy: ZeroPolicy,
    pub method: SolveMethod,
    pub solver: SolverConfig,
    pub reference: Option<Vec<f64>>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyJob {
    pub trace: PathBuf,
    pub kind: BoundKind,
    pub lipschitz: f64,
    pub eps: f64,
    pub x_star_norm: f64,
    #[serde(rename = "F_star")]
    pub f_star: f64,
    pub sigma: Option<f64>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqJob {
    pub problem: String,
    pub point: Vec<f64>,
    pub pseudonormality: bool,
    pub options: CqOptions,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleJob {
    pub problem: String,
    pub mode: Mode,
    pub tau: f64,
    pub policy: ZeroPolicy,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McJob {
    pub problem: String,
    pub tau: f64,
    pub policy: ZeroPolicy,
    pub oracle: NoiseModel,
    pub params: StochasticParams,
    pub solver: SolverConfig,
    pub moment_samples: usize,
    /// `(x*, F*)`; computed by the penalized oracle when absent.
    pub reference: Option<(Vec<f64>, f64)>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauJob {
    pub problem: String,
    pub taus: Vec<f64>,
    pub out: PathBuf,
}

/// A fully resolved command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Solve(SolveJob),
    VerifyBounds(VerifyJob),
    CheckCq(CqJob),
    Oracle(OracleJob),
    Mc(McJob),
    TauSweep(TauJob),
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Solve(_) => "solve",
            Job::VerifyBounds(_) => "verify-bounds",
            Job::CheckCq(_) => "check-cq",
            Job::Oracle(_) => "oracle",
            Job::Mc(_) => "mc",
            Job::TauSweep(_) => "tau-sweep",
        }
    }

    pub fn out_dir(&self) -> &Path {
        match self {
            Job::Solve(j) => &j.out,
            Job::VerifyBounds(j) => &j.out,
            Job::CheckCq(j) => &j.out,
            Job::Oracle(j) => &j.out,
            Job::Mc(j) => &j.out,
            Job::TauSweep(j) => &j.out,
        }
    }

    fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Job::Solve(j) => j.out = dir,
            Job::VerifyBounds(j) => j.out = dir,
            Job::CheckCq(j) => j.out = dir,
            Job::Oracle(j) => j.out = dir,
            Job::Mc(j) => j.out = dir,
            Job::TauSweep(j) => j.out = dir,
        }
    }

    fn problem(&self) -> Option<&str> {
        match self {
            Job::Solve(j) => Some(&j.problem),
            Job::CheckCq(j) => Some(&j.problem),
            Job::Oracle(j) => Some(&j.problem),
            Job::Mc(j) => Some(&j.problem),
            Job::TauSweep(j) => Some(&j.problem),
            Job::VerifyBounds(_) => None,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Job::Solve(SolveJob {
                method: SolveMethod::Spsm { seed, .. },
                ..
            }) => Some(*seed),
            Job::Mc(j) => Some(j.params.seed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub problem: Option<String>,
    pub seed: Option<u64>,
    pub job: Job,
    pub outputs: Vec<PathBuf>,
}

/// What a finished job reports back to the exit-code logic.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub verified: bool,
    pub outputs: Vec<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::TooLarge(_) => EXIT_GUARD,
        Error::NonFinite(_) | Error::UndefinedBound(_) => EXIT_VERIFY,
        Error::DimensionMismatch { .. }
        | Error::InvalidProblem(_)
        | Error::Precondition(_)
        | Error::Config(_)
        | Error::Parse(_)
        | Error::Json(_)
        | Error::Io(_) => EXIT_USAGE,
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    let job = match cli.command {
        Command::Replay(r) => load_manifest(&r.manifest).map(|m| {
            let mut job = m.job;
            if let Some(out) = r.out {
                job.set_out_dir(out);
            }
            job
        }),
        other => resolve(other),
    };
    let result = job.and_then(|job| run_job(&job));
    match result {
        Ok(o) if o.verified => EXIT_OK,
        Ok(_) => EXIT_VERIFY,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(text) = std::env::var("SPK_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("SPK_THREADS must be a positive integer, got {text:?}")))?;
    // A pool built earlier in the same process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a problem named by a path or `corpus:NAME`.
pub fn load_problem(source: &str) -> Result<StructuredProblem> {
    match source.strip_prefix(CORPUS_PREFIX) {
        Some(name) => corpus::load(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown corpus instance {name:?}; known: {}",
                corpus::NAMES.join(", ")
            ))
        }),
        None => StructuredProblem::from_json_file(source),
    }
}

fn vector_arg(text: &str) -> Result<Vec<f64>> {
    let v = parse_vector(text).map_err(Error::Parse)?;
    Ok(v.iter().cloned().collect())
}

fn policy(p: PolicyArg) -> ZeroPolicy {
    match p {
        PolicyArg::Zero => ZeroPolicy::Zero,
        PolicyArg::Upper => ZeroPolicy::Upper,
    }
}

fn required(value: Option<f64>, flag: &str, context: &str) -> Result<f64> {
    value.ok_or_else(|| Error::Config(format!("{context} needs --{flag}")))
}

#[derive(Deserialize)]
struct ReferenceSummary {
    x_star: Vec<f64>,
    #[serde(rename = "F_star")]
    f_star: f64,
}

fn read_reference(path: &Path) -> Result<ReferenceSummary> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn resolve_schedule(args: &StochasticArgs, problem_sigma: Option<f64>) -> Result<Schedule> {
    let schedule = match args.schedule {
        None => return Err(Error::Config("stochastic runs need --schedule".into())),
        Some(ScheduleArg::Fixed) => Schedule::Fixed {
            beta: required(args.beta, "beta", "schedule fixed")?,
        },
        Some(ScheduleArg::Sc) => Schedule::StronglyConvex {
            sigma: args
                .sigma
                .or(problem_sigma)
                .ok_or_else(|| Error::Config("schedule sc needs --sigma".into()))?,
        },
    };
    schedule.validate()?;
    Ok(schedule)
}

fn resolve_noise(args: &StochasticArgs) -> Result<NoiseModel> {
    Ok(match args.oracle_kind {
        OracleKindArg::Minibatch => NoiseModel::Minibatch { batch: args.batch },
        OracleKindArg::Noise => NoiseModel::AdditiveNoise {
            eta: required(args.eta, "eta", "oracle noise")?,
        },
    })
}

fn resolve(cmd: Command) -> Result<Job> {
    match cmd {
        Command::Solve(a) => resolve_solve(a),
        Command::VerifyBounds(a) => resolve_verify(a),
        Command::CheckCq(a) => Ok(Job::CheckCq(CqJob {
            problem: a.problem,
            point: vector_arg(&a.point)?,
            pseudonormality: a.pseudonormality,
            options: CqOptions {
                rank_tol: a.rank_tol,
                slack_tol: a.slack_tol,
                activity_tol: a.activity_tol,
                feasibility_tol: a.feasibility_tol,
                kkt_tol: a.kkt_tol,
            },
            out: a.out,
        })),
        Command::Oracle(a) => {
            PenaltyObjective::new(load_problem(&a.penalty.problem)?.to_instance()?, a.penalty.tau)?;
            Ok(Job::Oracle(OracleJob {
                problem: a.penalty.problem,
                mode: match a.mode {
                    ModeArg::Penalized => Mode::Penalized,
                    ModeArg::Constrained => Mode::Constrained,
                },
                tau: a.penalty.tau,
                policy: policy(a.penalty.policy),
                out: a.out,
            }))
        }
        Command::Mc(a) => resolve_mc(a),
        Command::TauSweep(a) => Ok(Job::TauSweep(TauJob {
            problem: a.problem,
            taus: vector_arg(&a.taus)?,
            out: a.out,
        })),
        Command::Replay(_) => unreachable!("handled by the caller"),
    }
}

fn resolve_solve(a: SolveArgs) -> Result<Job> {
    let sp = load_problem(&a.penalty.problem)?;
    let method = match a.method {
        MethodArg::Psm => {
            let rule = match a.rule {
                None => return Err(Error::Config("psm needs --rule".into())),
                Some(RuleArg::Constant) => StepsizeRule::Constant {
                    alpha: required(a.alpha, "alpha", "rule constant")?,
                },
                Some(RuleArg::Normalized) => StepsizeRule::Normalized {
                    scale: required(a.scale, "scale", "rule normalized")?,
                },
                Some(RuleArg::Diminishing) => StepsizeRule::Diminishing {
                    a: required(a.a, "a", "rule diminishing")?,
                    b: required(a.b, "b", "rule diminishing")?,
                },
                Some(RuleArg::Polyak) => StepsizeRule::PolyakLike {
                    rho: required(a.rho, "rho", "rule polyak")?,
                    relax: a.relax,
                },
            };
            rule.validate()?;
            SolveMethod::Psm { rule }
        }
        MethodArg::Spsm => {
            let schedule = resolve_schedule(&a.stochastic, sp.sigma)?;
            let oracle = resolve_noise(&a.stochastic)?;
            SolveMethod::Spsm {
                schedule,
                oracle,
                seed: a.stochastic.seed,
            }
        }
    };
    let reference = match (&a.reference, &a.x_star) {
        (Some(path), _) => Some(read_reference(path)?.x_star),
        (None, Some(text)) => Some(vector_arg(text)?),
        (None, None) => None,
    };
    let solver = SolverConfig {
        max_iters: a.max_iters,
        stop_tol: (!a.no_stop).then_some(a.stop_tol),
        initial_point: a.x0.as_deref().map(vector_arg).transpose()?,
        record_every: a.record_every,
        keep_iterates: false,
    };
    solver.validate()?;
    Ok(Job::Solve(SolveJob {
        problem: a.penalty.problem,
        tau: a.penalty.tau,
        policy: policy(a.penalty.policy),
        method,
        solver,
        reference,
        out: a.out,
    }))
}

fn resolve_verify(a: VerifyArgs) -> Result<Job> {
    let (x_star, f_star) = match (&a.reference, &a.x_star) {
        (Some(path), _) => {
            let r = read_reference(path)?;
            (r.x_star, Some(a.f_star.unwrap_or(r.f_star)))
        }
        (None, Some(text)) => (vector_arg(text)?, a.f_star),
        (None, None) => return Err(Error::Config("verify-bounds needs --reference or --x-star".into())),
    };
    let kind = match a.kind {
        KindArg::Distance => BoundKind::PsmDistance,
        KindArg::Gap => BoundKind::PsmGap,
        KindArg::ScDistance => BoundKind::StronglyConvexDistance,
        KindArg::ScGap => BoundKind::StronglyConvexGap,
    };
    let f_star = match f_star {
        Some(f) => f,
        None if matches!(kind, BoundKind::PsmDistance | BoundKind::StronglyConvexDistance) => 0.0,
        None => return Err(Error::Config("gap bounds need --f-star".into())),
    };
    if matches!(kind, BoundKind::StronglyConvexDistance | BoundKind::StronglyConvexGap) && a.sigma.is_none() {
        return Err(Error::Config("strongly convex bounds need --sigma".into()));
    }
    let trace = read_trace_csv(BufReader::new(fs::File::open(&a.trace)?))?;
    let x_star_norm = DVector::from_vec(x_star).norm();
    let lipschitz = a.lipschitz.unwrap_or_else(|| realized_lipschitz(&trace));
    let eps = match a.eps {
        Some(e) => e,
        None => trace
            .first()
            .and_then(|r| r.dist_sq)
            .map(f64::sqrt)
            .unwrap_or(x_star_norm),
    };
    Ok(Job::VerifyBounds(VerifyJob {
        trace: a.trace,
        kind,
        lipschitz,
        eps,
        x_star_norm,
        f_star,
        sigma: a.sigma,
        out: a.out,
    }))
}

fn resolve_mc(a: McArgs) -> Result<Job> {
    let sp = load_problem(&a.problem)?;
    let schedule = resolve_schedule(&a.stochastic, sp.sigma)?;
    let oracle = resolve_noise(&a.stochastic)?;
    let params = StochasticParams {
        schedule,
        m1: a.m1,
        m2: a.m2,
        seed: a.stochastic.seed,
        trials: a.trials,
    };
    params.validate()?;
    let solver = SolverConfig {
        max_iters: a.k,
        stop_tol: None,
        initial_point: None,
        record_every: a.record_every,
        keep_iterates: false,
    };
    solver.validate()?;
    let reference = a
        .reference
        .as_deref()
        .map(read_reference)
        .transpose()?
        .map(|r| (r.x_star, r.f_star));
    Ok(Job::Mc(McJob {
        problem: a.problem,
        tau: a.tau,
        policy: policy(a.policy),
        oracle,
        params,
        solver,
        moment_samples: a.moment_samples,
        reference,
        out: a.out,
    }))
}

fn write_output(dir: &Path, name: &str, bytes: &[u8], outputs: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    outputs.push(path);
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Runs a resolved job, writes its outputs and manifest.
pub fn run_job(job: &Job) -> Result<Outcome> {
    let dir = job.out_dir().to_path_buf();
    fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    let verified = match job {
        Job::Solve(j) => exec_solve(j, &dir, &mut outputs)?,
        Job::VerifyBounds(j) => exec_verify(j, &dir, &mut outputs)?,
        Job::CheckCq(j) => exec_cq(j, &dir, &mut outputs)?,
        Job::Oracle(j) => exec_oracle(j, &dir, &mut outputs)?,
        Job::Mc(j) => exec_mc(j, &dir, &mut outputs)?,
        Job::TauSweep(j) => exec_tau(j, &dir, &mut outputs)?,
    };
    let manifest = RunManifest {
        tool: "spk".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: job.name().into(),
        problem: job.problem().map(str::to_string),
        seed: job.seed(),
        job: job.clone(),
        outputs: outputs.clone(),
    };
    fs::write(dir.join(MANIFEST_FILE), json_bytes(&manifest)?)?;
    Ok(Outcome { verified, outputs })
}

fn penalty_objective(problem: &str, tau: f64, zero: ZeroPolicy) -> Result<(StructuredProblem, PenaltyObjective)> {
    let sp = load_problem(problem)?;
    let obj = PenaltyObjective::new(sp.to_instance()?, tau)?.with_policy(zero);
    Ok((sp, obj))
}

#[derive(Serialize)]
struct SolveSummary {
    method: &'static str,
    termination: Termination,
    iterations: usize,
    x: Vec<f64>,
    #[serde(rename = "F")]
    f: f64,
    #[serde(rename = "best_F")]
    best_f: f64,
    support: Vec<usize>,
    residual_g: f64,
    residual_h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    uniform_average: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weighted_average: Option<Vec<f64>>,
}

fn exec_solve(j: &SolveJob, dir: &Path, outputs: &mut Vec<PathBuf>) -> Result<bool> {
    let (_, obj) = penalty_objective(&j.problem, j.tau, j.policy)?;
    let reference = j.reference.as_ref().map(|r| DVector::from_column_slice(r));
    let (x, trace, termination, iterations, averages, method) = match &j.method {
        SolveMethod::Psm { rule } => {
            let r = run_psm(&obj, *rule, &j.solver, reference.as_ref())?;
            (r.x, r.trace, r.termination, r.iterations, None, "psm")
        }
        SolveMethod::Spsm { schedule, oracle, seed } => {
            let oracle = StochasticOracle::new(obj.clone(), *oracle)?;
            let mut rng = trial_rng(*seed, 0);
            let r = run_spsm(&oracle, *schedule, &j.solver, reference.as_ref(), &mut rng)?;
            let avg = (
                r.uniform_average.iter().cloned().collect(),
                r.weighted_average.iter().cloned().collect(),
            );
            (r.x, r.trace, r.termination, r.iterations, Some(avg), "spsm")
        }
    };
    let mut csv = Vec::new();
    write_trace_csv(&mut csv, &trace, None)?;
    write_output(dir, "trace.csv", &csv, outputs)?;
    let last = trace.last().expect("trace holds the final record");
    let (uniform_average, weighted_average) = match averages {
        Some((u, w)) => (Some(u), Some(w)),
        None => (None, None),
    };
    let summary = SolveSummary {
        method,
        termination,
        iterations,
        support: SupportSet::of(&x).indices().to_vec(),
        x: x.iter().cloned().collect(),
        f: last.f,
        best_f: last.best_f,
        residual_g: last.residual_g,
        residual_h: last.residual_h,
        uniform_average,
        weighted_average,
    };
    write_output(dir, "summary.json", &json_bytes(&summary)?, outputs)?;
    Ok(true)
}

fn exec_verify(j: &VerifyJob, dir: &Path, outputs: &mut Vec<PathBuf>) -> Result<bool> {
    let trace = read_trace_csv(BufReader::new(fs::File::open(&j.trace)?))?;
    let mut bp = BoundParameters::new(j.lipschitz, j.eps, j.x_star_norm, j.f_star)?;
    if let Some(s) = j.sigma {
        bp = bp.with_sigma(s);
    }
    let report = check_trace(&trace, &bp, j.kind)?;
    write_output(dir, "bound_report.json", &json_bytes(&report)?, outputs)?;
    let mut csv = String::from("k,observed,bound_new,bound_old\n");
    for (i, k) in report.k.iter().enumerate() {
        let old = report
            .old_bound
            .as_ref()
            .map(|o| format!("{:.16e}", o[i]))
            .unwrap_or_default();
        csv.push_str(&format!(
            "{k},{:.16e},{:.16e},{old}\n",
            report.observed[i], report.new_bound[i]
        ));
    }
    write_output(dir, "bounds.csv", csv.as_bytes(), outputs)?;
    eprintln!(
        "{} records, {} violations of the new bound, {} of the old",
        report.k.len(),
        report.violations,
        report.old_violations
    );
    Ok(report.violations == 0)
}

fn exec_cq(j: &CqJob, dir: &Path, outputs: &mut Vec<PathBuf>) -> Result<bool> {
    let inst = load_problem(&j.problem)?.to_instance()?;
    let x = DVector::from_column_slice(&j.point);
    let mut report = check_cc_mfcq(&inst, &x, &j.options)?;
    report.kkt = Some(check_kkt(&inst, &x, &j.options)?);
    let mut value = serde_json::to_value(&report)?;
    if j.pseudonormality {
        let verdict = search_cc_pseudonormality_violation(&inst, &x, &j.options)?;
        value["pseudonormality"] = serde_json::to_value(verdict)?;
    }
    write_output(dir, "cq_report.json", &json_bytes(&value)?, outputs)?;
    Ok(true)
}

fn exec_oracle(j: &OracleJob, dir: &Path, outputs: &mut Vec<PathBuf>) -> Result<bool> {
    let (_, obj) = penalty_objective(&j.problem, j.tau, j.policy)?;
    let result = match j.mode {
        Mode::Penalized => solve_global(&obj, Mode::Penalized)?,
        Mode::Constrained => solve_constrained(obj.problem())?,
    };
    let mut summary = result.summary_json()?;
    summary.push('\n');
    write_output(dir, "oracle_summary.json", summary.as_bytes(), outputs)?;
    write_output(dir, "oracle_table.csv", result.table_csv().as_bytes(), outputs)?;
    Ok(true)
}

fn exec_mc(j: &McJob, dir: &Path, outputs: &mut Vec<PathBuf>) -> Result<bool> {
    let (_, obj) = penalty_objective(&j.problem, j.tau, j.policy)?;
    let (x_star, f_star): (DenseVector, f64) = match &j.reference {
        Some((x, f)) => (DVector::from_column_slice(x), *f),
        None => {
            let r = solve_global(&obj, Mode::Penalized)?;
            (r.x_star, r.f_star)
        }
    };
    let oracle = StochasticOracle::new(obj, j.oracle)?;
    let report = monte_carlo(&oracle, &j.params, &j.solver, &x_star, f_star, j.moment_samples)?;
    write_output(dir, "mc_report.json", &json_bytes(&report)?, outputs)?;
    Ok(report.passes())
}

fn exec_tau(j: &TauJob, dir: &Path, outputs: &mut Vec<PathBuf>) -> Result<bool> {
    let inst = load_problem(&j.problem)?.to_instance()?;
    let exp = tau_threshold_experiment(&inst, &j.taus)?;
    write_output(dir, "tau_sweep.json", &json_bytes(&exp)?, outputs)?;
    let mut csv = String::from("tau,F_tau_star,distance,residual,reliable\n");
    for r in &exp.rows {
        csv.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            r.tau, r.f_tau_star, r.distance, r.residual, r.reliable
        ));
    }
    write_output(dir, "tau_sweep.csv", csv.as_bytes(), outputs)?;
    Ok(true)
}
