//! `riskloop`: run risk-score deployment experiments from the command line.
//!
//! Exit codes: 0 success, 1 validation/domain error, 2 usage error,
//! 3 numeric failure.

mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use riskloop_core::dynamics::{expertise_experiment, iterate_deployment, Cycle};
use riskloop_core::error::Error as CoreError;
use riskloop_core::evaluation::{
    check_assumptions, decision_regions, delta, evaluation_report, sweep_theta, AssumptionReport,
    EvaluationReport, RegionsReport, TreatedSet,
};
use riskloop_core::expr;
use riskloop_core::io::resolve_scenario;
use riskloop_core::numerics::{Backend, Estimate, MonteCarloSpec, QuadratureSpec};
use riskloop_core::scenario::{score_from, Comparator, Policy, ScenarioModel};

use output::{csv, emit, json, num};

#[derive(Parser)]
#[command(
    name = "riskloop",
    version,
    about = "Simulate deploying observable-outcome risk scores into the decision process that \
             generated their training data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit scenario assumptions: positivity and help/hurt lower bounds
    Validate(ValidateArgs),
    /// Mean outcome, optimal value, and regret for one policy
    Evaluate(EvaluateArgs),
    /// Deployment-difference curve over a grid of cutoffs
    Sweep(SweepArgs),
    /// Treated set vs optimal set and the harmed groups at one cutoff
    Regions(RegionsArgs),
    /// Retrain-redeploy loop with cycle detection
    Iterate(IterateArgs),
    /// Skilled vs ordinary baseline, before and after deployment
    Expertise(ExpertiseArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    /// Adaptive quadrature (exact enumeration on discrete supports)
    Quad,
    /// Seeded Monte Carlo
    Mc,
    /// Exact enumeration (discrete supports only)
    Exact,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CmpArg {
    /// Treat when the score is at or above the cutoff
    Ge,
    /// Treat only when the score strictly exceeds the cutoff
    Gt,
}

impl From<CmpArg> for Comparator {
    fn from(c: CmpArg) -> Comparator {
        match c {
            CmpArg::Ge => Comparator::Ge,
            CmpArg::Gt => Comparator::Gt,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Built-in scenario name (toy, table1-witness, expertise-witness) or a
    /// path to a scenario JSON file
    scenario: String,
    /// Numeric backend
    #[arg(long, value_enum, default_value_t = BackendArg::Quad)]
    backend: BackendArg,
    /// Monte Carlo sample count
    #[arg(long, default_value_t = 1_000_000)]
    n_samples: u64,
    /// Monte Carlo seed (required with --backend mc)
    #[arg(long)]
    seed: Option<u64>,
    /// Output format; defaults to csv for sweep/iterate and json otherwise
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Write output to this file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Policy to evaluate: baseline, treat-all, treat-none, or threshold:<theta>
    #[arg(long, default_value = "baseline")]
    policy: String,
    /// Comparator for threshold policies
    #[arg(long, value_enum, default_value_t = CmpArg::Ge)]
    cmp: CmpArg,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Lowest cutoff in the grid
    theta_min: f64,
    /// Highest cutoff in the grid
    theta_max: f64,
    /// Number of grid points (at least 2)
    steps: usize,
}

#[derive(Args)]
struct RegionsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cutoff applied to the baseline-fitted score
    theta: f64,
    /// Comparator for the threshold rule
    #[arg(long, value_enum, default_value_t = CmpArg::Ge)]
    cmp: CmpArg,
}

#[derive(Args)]
struct IterateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cutoff applied at every redeployment
    #[arg(long)]
    theta: f64,
    /// Comparator for the threshold rule
    #[arg(long, value_enum, default_value_t = CmpArg::Ge)]
    cmp: CmpArg,
    /// Number of steps including the baseline step
    #[arg(long)]
    horizon: u32,
}

#[derive(Args)]
struct ExpertiseArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cutoff for the deployed threshold rule (falls back to the scenario's
    /// `theta` metadata)
    #[arg(long)]
    theta: Option<f64>,
    /// Comparator for the threshold rule
    #[arg(long, value_enum, default_value_t = CmpArg::Ge)]
    cmp: CmpArg,
    /// Ordinary-system propensity expression (defaults to the scenario's pi0)
    #[arg(long)]
    pi0_base: Option<String>,
    /// Skilled-system propensity expression (falls back to the scenario's
    /// `pi0_skilled` metadata)
    #[arg(long)]
    pi0_skilled: Option<String>,
}

/// A failed run: message for stderr plus the process exit code.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

impl From<CoreError> for Failure {
    fn from(err: CoreError) -> Failure {
        let code = match &err {
            CoreError::NumericFailure { .. } | CoreError::Inconsistency { .. } => 3,
            _ => 1,
        };
        Failure { code, message: err.to_string() }
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            std::process::ExitCode::from(failure.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Validate(args) => cmd_validate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Regions(args) => cmd_regions(args),
        Command::Iterate(args) => cmd_iterate(args),
        Command::Expertise(args) => cmd_expertise(args),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_model(common: &CommonArgs) -> Result<ScenarioModel, Failure> {
    Ok(resolve_scenario(&common.scenario)?)
}

fn build_backend(common: &CommonArgs) -> Result<Backend, Failure> {
    match common.backend {
        BackendArg::Quad => Ok(Backend::Quadrature(QuadratureSpec::default())),
        BackendArg::Exact => Ok(Backend::Exact),
        BackendArg::Mc => {
            let seed = common
                .seed
                .ok_or_else(|| usage("--seed is required when --backend mc is selected"))?;
            if common.n_samples == 0 {
                return Err(usage("--n-samples must be at least 1"));
            }
            Ok(Backend::MonteCarlo(MonteCarloSpec { n_samples: common.n_samples, seed }))
        }
    }
}

/// Commands with tabular output accept csv (their default) and json; report
/// commands are json only.
fn resolve_format(common: &CommonArgs, tabular: bool) -> Result<FormatArg, Failure> {
    match (common.format, tabular) {
        (None, true) => Ok(FormatArg::Csv),
        (None, false) => Ok(FormatArg::Json),
        (Some(f), true) => Ok(f),
        (Some(FormatArg::Json), false) => Ok(FormatArg::Json),
        (Some(FormatArg::Csv), false) => {
            Err(usage("this command emits a structured report; csv is not supported"))
        }
    }
}

fn parse_policy(model: &ScenarioModel, spec: &str, cmp: Comparator) -> Result<Policy, Failure> {
    match spec {
        "baseline" => Ok(Policy::baseline(model)),
        "treat-all" => Ok(Policy::treat_all()),
        "treat-none" => Ok(Policy::treat_none()),
        other => {
            let Some(theta_text) = other.strip_prefix("threshold:") else {
                return Err(usage(format!(
                    "unknown policy `{other}`; expected baseline, treat-all, treat-none, or \
                     threshold:<theta>"
                )));
            };
            let theta: f64 = theta_text
                .parse()
                .map_err(|_| usage(format!("`{theta_text}` is not a number")))?;
            let score = score_from(model, &Policy::baseline(model));
            Ok(Policy::threshold(score, theta, cmp)?)
        }
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ValidateOutput<'a> {
    scenario: &'a str,
    #[serde(flatten)]
    report: &'a AssumptionReport,
}

fn cmd_validate(args: ValidateArgs) -> Result<u8, Failure> {
    resolve_format(&args.common, false)?;
    let model = load_model(&args.common)?;
    let report = check_assumptions(&model, &Policy::baseline(&model))?;
    let text = json(&ValidateOutput { scenario: model.name(), report: &report });
    emit(&args.common.out, &text)?;
    Ok(if report.positivity_t0.passed { 0 } else { 1 })
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    scenario: &'a str,
    policy: String,
    #[serde(flatten)]
    report: &'a EvaluationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_vs_baseline: Option<Estimate>,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<u8, Failure> {
    resolve_format(&args.common, false)?;
    let model = load_model(&args.common)?;
    let backend = build_backend(&args.common)?;
    let policy = parse_policy(&model, &args.policy, args.cmp.into())?;
    let report = evaluation_report(&model, &policy, &backend)?;
    let delta_vs_baseline = if args.policy == "baseline" {
        None
    } else {
        Some(delta(&model, &Policy::baseline(&model), &policy, &backend)?)
    };
    let text = json(&EvaluateOutput {
        scenario: model.name(),
        policy: policy.describe(),
        report: &report,
        delta_vs_baseline,
    });
    emit(&args.common.out, &text)?;
    Ok(0)
}

const SWEEP_HEADER: &str = "theta,delta,delta_err,mean_outcome_t1,treated_mass";

#[derive(Serialize)]
struct SweepOutput<'a> {
    scenario: &'a str,
    rows: &'a [riskloop_core::evaluation::SweepRow],
}

fn cmd_sweep(args: SweepArgs) -> Result<u8, Failure> {
    let format = resolve_format(&args.common, true)?;
    if args.steps < 2 {
        return Err(usage("a sweep needs at least 2 grid points"));
    }
    if args.theta_min.is_nan() || args.theta_max.is_nan() || args.theta_min >= args.theta_max {
        return Err(usage("theta-min must be strictly below theta-max"));
    }
    let model = load_model(&args.common)?;
    let backend = build_backend(&args.common)?;
    let thetas: Vec<f64> = (0..args.steps)
        .map(|i| {
            args.theta_min
                + (args.theta_max - args.theta_min) * i as f64 / (args.steps - 1) as f64
        })
        .collect();
    let rows = sweep_theta(&model, &Policy::baseline(&model), &thetas, &backend)?;
    let text = match format {
        FormatArg::Csv => csv(
            SWEEP_HEADER,
            rows.iter()
                .map(|r| {
                    vec![
                        num(r.theta),
                        num(r.delta.value),
                        num(r.delta.error_bound),
                        num(r.mean_outcome_t1.value),
                        num(r.treated_mass),
                    ]
                })
                .collect(),
        ),
        FormatArg::Json => json(&SweepOutput { scenario: model.name(), rows: &rows }),
    };
    emit(&args.common.out, &text)?;
    Ok(0)
}

#[derive(Serialize)]
struct RegionsOutput<'a> {
    scenario: &'a str,
    #[serde(flatten)]
    report: &'a RegionsReport,
}

fn cmd_regions(args: RegionsArgs) -> Result<u8, Failure> {
    resolve_format(&args.common, false)?;
    let model = load_model(&args.common)?;
    let score = score_from(&model, &Policy::baseline(&model));
    let policy = Policy::threshold(score, args.theta, args.cmp.into())?;
    let report = decision_regions(&model, &policy)?;
    let text = json(&RegionsOutput { scenario: model.name(), report: &report });
    emit(&args.common.out, &text)?;
    Ok(0)
}

const ITERATE_HEADER: &str = "t,decision,mean_outcome,mean_outcome_err,cycle_start,cycle_period";

#[derive(Serialize)]
struct IterateStepOutput {
    t: u32,
    decision: String,
    mean_outcome: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    treated: Option<TreatedSet>,
}

#[derive(Serialize)]
struct IterateOutput<'a> {
    scenario: &'a str,
    theta: f64,
    comparator: Comparator,
    steps: Vec<IterateStepOutput>,
    cycle: Option<Cycle>,
}

fn cmd_iterate(args: IterateArgs) -> Result<u8, Failure> {
    let format = resolve_format(&args.common, true)?;
    let model = load_model(&args.common)?;
    let backend = build_backend(&args.common)?;
    let trace = iterate_deployment(
        &model,
        &Policy::baseline(&model),
        args.theta,
        args.cmp.into(),
        args.horizon,
        &backend,
    )?;
    let decision = |step: &riskloop_core::dynamics::DeploymentStep| match &step.treated {
        Some(set) => format!("treat {}", set.summary()),
        None => "baseline".to_string(),
    };
    let text = match format {
        FormatArg::Csv => {
            let (start, period) = match trace.cycle {
                Some(c) => (c.start.to_string(), c.period.to_string()),
                None => (String::new(), String::new()),
            };
            csv(
                ITERATE_HEADER,
                trace
                    .steps
                    .iter()
                    .map(|s| {
                        vec![
                            s.t.to_string(),
                            decision(s),
                            num(s.mean_outcome.value),
                            num(s.mean_outcome.error_bound),
                            start.clone(),
                            period.clone(),
                        ]
                    })
                    .collect(),
            )
        }
        FormatArg::Json => json(&IterateOutput {
            scenario: model.name(),
            theta: args.theta,
            comparator: args.cmp.into(),
            steps: trace
                .steps
                .iter()
                .map(|s| IterateStepOutput {
                    t: s.t,
                    decision: decision(s),
                    mean_outcome: s.mean_outcome,
                    treated: s.treated.clone(),
                })
                .collect(),
            cycle: trace.cycle,
        }),
    };
    emit(&args.common.out, &text)?;
    Ok(0)
}

#[derive(Serialize)]
struct ExpertiseOutput<'a> {
    scenario: &'a str,
    #[serde(flatten)]
    comparison: &'a riskloop_core::dynamics::ExpertiseComparison,
}

fn cmd_expertise(args: ExpertiseArgs) -> Result<u8, Failure> {
    resolve_format(&args.common, false)?;
    let model = load_model(&args.common)?;
    let backend = build_backend(&args.common)?;
    let theta = match args.theta {
        Some(t) => t,
        None => model
            .metadata()
            .get("theta")
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| usage("--theta is required (no `theta` metadata in the scenario)"))?,
    };
    let pi0_base = match &args.pi0_base {
        Some(src) => expr::parse(src).map_err(CoreError::from)?,
        None => model.pi0().clone(),
    };
    let pi0_skilled_src = match &args.pi0_skilled {
        Some(src) => src.clone(),
        None => model.metadata().get("pi0_skilled").cloned().ok_or_else(|| {
            usage("--pi0-skilled is required (no `pi0_skilled` metadata in the scenario)")
        })?,
    };
    let pi0_skilled = expr::parse(&pi0_skilled_src).map_err(CoreError::from)?;
    let comparison =
        expertise_experiment(&model, &pi0_base, &pi0_skilled, theta, args.cmp.into(), &backend)?;
    let text = json(&ExpertiseOutput { scenario: model.name(), comparison: &comparison });
    emit(&args.common.out, &text)?;
    Ok(0)
}
