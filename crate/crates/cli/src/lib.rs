//! Command-line front end: instance generation, solving, evaluation,
//! verification and sweeps. Every random choice derives from `--seed`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use varalloc::analysis::{self, Claim, SweepTable, VerificationReport};
use varalloc::solvers::{self, Allocation, PtasOptions, SolveReport};
use varalloc::{
    graph_objective, graph_objective_correlated, parse_instance, serialize_instance, Estimate,
    EstimatorConfig, Instance, Method,
};

#[derive(Debug, Parser)]
#[command(
    name = "varalloc",
    version,
    about = "Variance allocation solvers and verifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write an instance file.
    Generate {
        family: Family,
        #[command(flatten)]
        params: GenerateParams,
    },
    /// Solve an instance and write a report.
    Solve {
        algorithm: SolverKind,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        grid_step: Option<f64>,
        /// Candidate limit for the grid searches.
        #[arg(long)]
        node_budget: Option<u64>,
        /// Report the greedy allocation as a covariance matrix (log-approx).
        #[arg(long)]
        correlated: bool,
        #[command(flatten)]
        est: EstimatorArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Evaluate the objective of an allocation on an instance.
    Evaluate {
        /// Instance file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Solve report, tagged allocation, or `{"stddevs": [...]}` file.
        #[arg(long)]
        alloc: PathBuf,
        #[command(flatten)]
        est: EstimatorArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run empirical checks; exits 1 on any violation.
    Verify {
        claim: Option<String>,
        #[arg(long, conflicts_with = "claim")]
        all: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Include per-trial records.
        #[arg(long)]
        details: bool,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Write a sweep table.
    Sweep {
        kind: SweepKind,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        m: usize,
        /// Instances per p for the concentration sweep.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[command(flatten)]
        est: EstimatorArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    ErdosRenyi,
    Cycle,
    CompleteK,
}

#[derive(Debug, Args)]
struct GenerateParams {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverKind {
    PtasInd,
    PtasCorr,
    LogApprox,
    BruteForce,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepKind {
    Concavity,
    Concentration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct EstimatorArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mc_samples: Option<usize>,
    /// auto, closed_form, quadrature or monte_carlo.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

/// Bad flag combinations detected after parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// Verification ran but found violations.
#[derive(Debug)]
struct Violations(String);

impl std::fmt::Display for Violations {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violations {}

impl EstimatorArgs {
    fn resolve(&self, base: EstimatorConfig) -> Result<EstimatorConfig> {
        let mut cfg = base;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(s) = self.mc_samples {
            cfg.mc_samples = s;
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse::<Method>().map_err(|e| usage(e.to_string()))?;
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

impl OutputArgs {
    fn format(&self, default: Format, allowed: &[Format]) -> Result<Format> {
        let f = self.format.unwrap_or(default);
        if !allowed.contains(&f) {
            return Err(usage(
                format!("--format {f:?} is not supported here").to_lowercase(),
            ));
        }
        Ok(f)
    }

    fn write(&self, bytes: &[u8]) -> Result<()> {
        match &self.out {
            Some(path) => {
                fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(bytes)?;
                stdout.flush()?;
                Ok(())
            }
        }
    }

    fn write_json<T: Serialize>(&self, value: &T) -> Result<()> {
        self.format(Format::Json, &[Format::Json])?;
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(&bytes)
    }
}

fn read_instance(path: &Path) -> Result<Instance> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_instance(&bytes).with_context(|| format!("parsing instance {}", path.display()))
}

fn require<T>(value: Option<T>, flag: &str, what: &str) -> Result<T> {
    value.ok_or_else(|| usage(format!("{what} requires --{flag}")))
}

fn generate(family: Family, p: &GenerateParams) -> Result<()> {
    p.out.format(Format::Json, &[Format::Json])?;
    let inst = match family {
        Family::ErdosRenyi => varalloc::erdos_renyi_instance(
            require(p.n, "n", "erdos-renyi")?,
            require(p.m, "m", "erdos-renyi")?,
            require(p.p, "p", "erdos-renyi")?,
            p.seed,
        )?,
        Family::Cycle => {
            varalloc::cycle_instance(require(p.n, "n", "cycle")?, p.mu.unwrap_or(0.0))?
        }
        Family::CompleteK => varalloc::complete_k_subsets_instance(
            require(p.n, "n", "complete-k")?,
            require(p.k, "k", "complete-k")?,
        )?,
    };
    p.out.write(&serialize_instance(&inst))
}

#[allow(clippy::too_many_arguments)]
fn solve(
    algorithm: SolverKind,
    input: &Path,
    eps: Option<f64>,
    grid_step: Option<f64>,
    node_budget: Option<u64>,
    correlated: bool,
    est: &EstimatorArgs,
    out: &OutputArgs,
) -> Result<()> {
    out.format(Format::Json, &[Format::Json])?;
    let cfg = est.resolve(EstimatorConfig::default())?;
    if let Some(e) = eps {
        if !(e > 0.0 && e < 1.0) {
            return Err(usage(format!("--eps must lie in (0, 1), got {e}")));
        }
    }
    let inst = read_instance(input)?;
    let opts = PtasOptions {
        grid_step,
        node_budget,
    };
    let report = match algorithm {
        SolverKind::PtasInd => {
            solvers::ptas_independent(&inst, require(eps, "eps", "ptas-ind")?, opts, &cfg)?
        }
        SolverKind::PtasCorr => {
            solvers::ptas_correlated(&inst, require(eps, "eps", "ptas-corr")?, opts, &cfg)?
        }
        SolverKind::LogApprox if correlated => solvers::log_approx_graph_correlated(&inst, &cfg)?,
        SolverKind::LogApprox => solvers::log_approx_graph(&inst, &cfg)?,
        SolverKind::BruteForce => match node_budget {
            Some(b) => solvers::brute_force_grid_with_budget(
                &inst,
                require(grid_step, "grid-step", "brute-force")?,
                b,
                &cfg,
            )?,
            None => solvers::brute_force_grid(
                &inst,
                require(grid_step, "grid-step", "brute-force")?,
                &cfg,
            )?,
        },
        SolverKind::Uniform => solvers::solve_uniform(&inst, &cfg)?,
    };
    log::info!("{:?} finished in {:.3?}", report.algorithm, report.elapsed);
    out.write_json(&report)
}

#[derive(Serialize)]
struct Evaluation {
    objective: Estimate,
    support_size: usize,
    seed: u64,
    config: EstimatorConfig,
}

/// Accepts a solve report, a tagged allocation or a bare stddev vector.
fn read_allocation(path: &Path) -> Result<(Allocation, Option<EstimatorConfig>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("allocation").is_some() {
        let report: SolveReport = serde_json::from_value(value)
            .with_context(|| format!("parsing report {}", path.display()))?;
        return Ok((report.allocation, Some(report.config)));
    }
    if value.get("kind").is_some() {
        let a: Allocation = serde_json::from_value(value)
            .with_context(|| format!("parsing allocation {}", path.display()))?;
        return Ok((a, None));
    }
    let a = serde_json::from_value(value)
        .with_context(|| format!("parsing allocation {}", path.display()))?;
    Ok((Allocation::Independent(a), None))
}

fn evaluate(input: &Path, alloc: &Path, est: &EstimatorArgs, out: &OutputArgs) -> Result<()> {
    out.format(Format::Json, &[Format::Json])?;
    let inst = read_instance(input)?;
    let (allocation, recorded) = read_allocation(alloc)?;
    let cfg = est.resolve(recorded.unwrap_or_default())?;
    let objective = match &allocation {
        Allocation::Independent(a) => graph_objective(&inst, a, &cfg)?,
        Allocation::Correlated(c) => graph_objective_correlated(&inst, c, &cfg)?,
    };
    out.write_json(&Evaluation {
        objective,
        support_size: allocation.support_size(),
        seed: cfg.seed,
        config: cfg,
    })
}

#[derive(Serialize)]
struct VerifyOutput {
    seed: u64,
    passed: bool,
    reports: Vec<VerificationReport>,
}

fn verify(
    claim: Option<&str>,
    all: bool,
    seed: u64,
    details: bool,
    out: &OutputArgs,
) -> Result<()> {
    out.format(Format::Json, &[Format::Json])?;
    let claims: Vec<Claim> = match (claim, all) {
        (Some(c), false) => vec![c.parse::<Claim>().map_err(|e| usage(e.to_string()))?],
        (None, true) => Claim::ALL.to_vec(),
        _ => return Err(usage("verify needs a claim name or --all")),
    };
    let mut reports = Vec::with_capacity(claims.len());
    for c in claims {
        let mut r = c
            .run_default(seed)
            .with_context(|| format!("claim {}", c.name()))?;
        log::info!(
            "{}: {} trials, {} violations",
            c.name(),
            r.trials,
            r.violations
        );
        if !details {
            r.details.clear();
        }
        reports.push(r);
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({} violations)", r.claim.name(), r.violations))
        .collect();
    out.write_json(&VerifyOutput {
        seed,
        passed: failed.is_empty(),
        reports,
    })?;
    if !failed.is_empty() {
        return Err(anyhow::Error::new(Violations(format!(
            "violated: {}",
            failed.join(", ")
        ))));
    }
    Ok(())
}

fn sweep(
    kind: SweepKind,
    n: usize,
    m: usize,
    seeds: u64,
    est: &EstimatorArgs,
    out: &OutputArgs,
) -> Result<()> {
    let format = out.format(Format::Csv, &[Format::Csv, Format::Json])?;
    let cfg = est.resolve(EstimatorConfig::default())?;
    let table: SweepTable = match kind {
        SweepKind::Concavity => analysis::concavity_sweep(n, &cfg)?,
        SweepKind::Concentration => {
            let p: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
            let seeds: Vec<u64> = (0..seeds)
                .map(|i| varalloc::rng::derive_seed(cfg.seed, "instance", i))
                .collect();
            analysis::concentration_profile(n, m, &p, &seeds, &cfg)?
        }
    };
    match format {
        Format::Csv => {
            let mut bytes = Vec::new();
            analysis::write_sweep_csv(&table, &mut bytes)?;
            out.write(&bytes)
        }
        Format::Json => {
            let mut bytes = serde_json::to_vec_pretty(table.rows())?;
            bytes.push(b'\n');
            out.write(&bytes)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { family, params } => generate(family, &params),
        Command::Solve {
            algorithm,
            input,
            eps,
            grid_step,
            node_budget,
            correlated,
            est,
            out,
        } => solve(
            algorithm,
            &input,
            eps,
            grid_step,
            node_budget,
            correlated,
            &est,
            &out,
        ),
        Command::Evaluate {
            input,
            alloc,
            est,
            out,
        } => evaluate(&input, &alloc, &est, &out),
        Command::Verify {
            claim,
            all,
            seed,
            details,
            out,
        } => verify(claim.as_deref(), all, seed, details, &out),
        Command::Sweep {
            kind,
            n,
            m,
            seeds,
            est,
            out,
        } => sweep(kind, n, m, seeds, &est, &out),
    }
}

/// Exit status for a failed command: 2 for usage errors, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status. Errors go to standard error prefixed `error:`.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    }
}
