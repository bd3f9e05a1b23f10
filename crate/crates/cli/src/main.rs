//! `qdelay`: instance generation, linearization, solving and experiment
//! campaigns from the command line.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 infeasible,
//! 4 no convergence, 5 dominance-invariant violation.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qdelay_core::convex::{solve_qp_exact, ExactOptions, DEFAULT_TOLERANCE};
use qdelay_core::experiment::{
    compare_records, read_records, run_grid, solver_pair, write_records, Comparison, ExperimentError, GridConfig,
    RunOptions,
};
use qdelay_core::instance::{build_bipartite, generate_demand, DemandKind, DemandSpec, Instance, Topology};
use qdelay_core::milp::{
    build_p_model, build_qp_lin_model, solve_p, solve_qp_lin, MilpOptions, DEFAULT_GAP, DEFAULT_NODE_LIMIT,
};
use qdelay_core::pwl::{weighted_tis_basepoints, BasepointSet, DEFAULT_BASEPOINTS, DEFAULT_INTERVAL_END};
use qdelay_core::report::{SolveError, SolveReport, SolverKind};

const EXIT_USAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NO_CONVERGENCE: u8 = 4;
const EXIT_VIOLATION: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "qdelay", version, about = "Queue-aware facility placement solvers and experiments")]
struct Cli {
    /// Echo every parsed numeric flag (with its unit) to standard error.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an instance file from a topology and a demand model.
    GenInstance(GenInstanceArgs),
    /// Compute PWL basepoints of the weighted time-in-system curve ρ/(1−ρ).
    Linearize(LinearizeArgs),
    /// Solve an instance with one of the three solvers.
    Solve(SolveArgs),
    /// Run an experiment campaign described by a grid file.
    Experiment(ExperimentArgs),
    /// Summarize a records CSV by pairing a reference and a candidate solver.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct GenInstanceArgs {
    /// Topology file (JSON with `nodes` and `edges`).
    #[arg(long)]
    topology: PathBuf,
    /// Number of candidate facilities (best connected nodes).
    #[arg(long)]
    facilities: usize,
    /// Demand model.
    #[arg(long, default_value = "uniform-normalized", value_parser = parse_demand)]
    demand: DemandKind,
    /// Demand target in req/s: total arrival Λ for uniform-normalized, mean
    /// per-client arrival λ̂ otherwise.
    #[arg(long, default_value_t = 470.0, value_parser = positive)]
    target: f64,
    /// Service rate μ of every facility, req/s.
    #[arg(long, default_value_t = 100.0, value_parser = positive)]
    mu: f64,
    /// Facility budget p (1 ≤ p ≤ facilities).
    #[arg(long)]
    p: usize,
    /// Demand RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// RTT between a client and its co-located facility, ms.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    local_loop_ms: f64,
    /// One-way latency per km of great-circle distance for edges without
    /// an explicit latency, ms/km.
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    speed_ms_per_km: f64,
    /// Output instance file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LinearizeArgs {
    /// Number of basepoints m (≥ 3).
    #[arg(long, default_value_t = DEFAULT_BASEPOINTS)]
    m: usize,
    /// Upper end α_{m−1} of the linearization interval as a fraction of μ,
    /// in (0, 1).
    #[arg(long, default_value_t = DEFAULT_INTERVAL_END)]
    interval_end: f64,
    /// Output CSV of basepoints (`alpha,beta` normalized to μ = 1).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    /// Queue-ignoring capacitated p-median.
    P,
    /// Exact convex solver over all facility subsets.
    QpExact,
    /// Piecewise-linearized branch and bound.
    QpLin,
}

impl SolverArg {
    fn kind(self) -> SolverKind {
        match self {
            SolverArg::P => SolverKind::P,
            SolverArg::QpExact => SolverKind::QpExact,
            SolverArg::QpLin => SolverKind::QpLin,
        }
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Instance file.
    #[arg(long)]
    instance: PathBuf,
    /// Solver.
    #[arg(long, value_enum)]
    solver: SolverArg,
    /// Override the instance's facility budget p.
    #[arg(long)]
    p: Option<usize>,
    /// Basepoints per facility curve (qp-lin).
    #[arg(long, default_value_t = DEFAULT_BASEPOINTS)]
    m: usize,
    /// Linearization interval end as a fraction of μ (qp-lin).
    #[arg(long, default_value_t = DEFAULT_INTERVAL_END)]
    interval_end: f64,
    /// Barrier stopping tolerance on the duality-gap bound, s (qp-exact).
    #[arg(long, default_value_t = DEFAULT_TOLERANCE, value_parser = positive)]
    tolerance: f64,
    /// Relative optimality gap for branch and bound (p, qp-lin).
    #[arg(long, default_value_t = DEFAULT_GAP, value_parser = non_negative)]
    gap: f64,
    /// Node limit for branch and bound (p, qp-lin).
    #[arg(long, default_value_t = DEFAULT_NODE_LIMIT)]
    node_limit: usize,
    /// Worker threads for subset enumeration; 0 = all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Include wall time in the report file.
    #[arg(long)]
    timings: bool,
    /// Report file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Assignment table file (JSON with `x_rps` in req/s and `y`).
    #[arg(long)]
    assignment: Option<PathBuf>,
    /// Write the MILP model in LP text format (p, qp-lin).
    #[arg(long)]
    lp_dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Grid file (JSON; `campaign` is `convex-vs-linear` or `factor-study`).
    #[arg(long)]
    grid: PathBuf,
    /// Output directory for records.csv and summary.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads across configurations; 0 = all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Record solver wall times (output then differs between runs).
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Records CSV produced by `experiment`.
    #[arg(long)]
    records: PathBuf,
    /// Reference solver (expected to be no better).
    #[arg(long, value_enum, default_value = "p")]
    reference: SolverArg,
    /// Candidate solver.
    #[arg(long, value_enum, default_value = "qp-lin")]
    candidate: SolverArg,
    /// Summary CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_demand(s: &str) -> Result<DemandKind, String> {
    s.parse::<DemandKind>().map_err(|e| e.to_string())
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{s} must be a finite number > 0"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{s} must be a finite number >= 0"))
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        let code = match &e {
            SolveError::Infeasible { .. } => EXIT_INFEASIBLE,
            SolveError::NoConvergence { .. } => EXIT_NO_CONVERGENCE,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Solve { config, source } => {
                let inner = Failure::from(source);
                Self {
                    code: inner.code,
                    message: format!("{config}: {}", inner.message),
                }
            }
            other => Failure::usage(other.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

struct Echo(bool);

impl Echo {
    fn num(&self, flag: &str, value: impl std::fmt::Display, unit: &str) {
        if self.0 {
            eprintln!("--{flag} = {value}{}{unit}", if unit.is_empty() { "" } else { " " });
        }
    }
}

fn linearization(m: usize, interval_end: f64) -> Result<BasepointSet, Failure> {
    if m < 3 {
        return Err(Failure::usage(format!("--m must be >= 3, got {m}")));
    }
    if !(interval_end > 0.0 && interval_end < 1.0) {
        return Err(Failure::usage(format!(
            "--interval-end must lie in (0, 1), got {interval_end}; the curve has its asymptote at 1"
        )));
    }
    weighted_tis_basepoints(m, interval_end).map_err(|e| Failure::usage(e.to_string()))
}

fn gen_instance(args: &GenInstanceArgs, echo: &Echo) -> Result<(), Failure> {
    echo.num("facilities", args.facilities, "");
    echo.num("target", args.target, "req/s");
    echo.num("mu", args.mu, "req/s");
    echo.num("p", args.p, "");
    echo.num("seed", args.seed, "");
    echo.num("local-loop-ms", args.local_loop_ms, "ms");
    echo.num("speed-ms-per-km", args.speed_ms_per_km, "ms/km");
    let topology =
        Topology::read(&args.topology, args.speed_ms_per_km * 1e-3).map_err(|e| Failure::usage(e.to_string()))?;
    let skeleton = build_bipartite(&topology, args.facilities, args.local_loop_ms * 1e-3)
        .map_err(|e| Failure::usage(e.to_string()))?;
    let spec = DemandSpec {
        kind: args.demand,
        target: args.target,
        seed: args.seed,
    };
    let arrival = generate_demand(skeleton.clients.len(), &spec).map_err(|e| Failure::usage(e.to_string()))?;
    let instance = skeleton
        .with_demand(arrival, vec![args.mu; args.facilities], args.p)
        .map_err(|e| Failure::usage(e.to_string()))?;
    instance.write(&args.out).map_err(|e| Failure::usage(e.to_string()))?;
    println!(
        "clients={} facilities={} total_arrival_rps={} p={} feasible_exact={} feasible_linearized={}",
        instance.num_clients(),
        instance.num_facilities(),
        instance.total_arrival(),
        instance.p,
        instance.total_arrival() < instance.max_usable_capacity(1.0),
        instance.fits_capacity(DEFAULT_INTERVAL_END),
    );
    Ok(())
}

fn linearize(args: &LinearizeArgs, echo: &Echo) -> Result<(), Failure> {
    echo.num("m", args.m, "");
    echo.num("interval-end", args.interval_end, "of mu");
    let set = linearization(args.m, args.interval_end)?;
    if let Some(out) = &args.out {
        let mut buf = Vec::new();
        set.write_csv(&mut buf).map_err(|e| Failure::usage(e.to_string()))?;
        write_file(out, &buf)?;
    }
    println!(
        "m={} interval_end={} epsilon={} epsilon_pct_of_range={}",
        set.len(),
        set.interval_end(),
        set.epsilon(),
        set.epsilon_pct_of_range()
    );
    Ok(())
}

fn print_report(report: &SolveReport) {
    let rt = match report.exact_rt() {
        Some(v) => format!("{v}"),
        None => "inf (saturated facility)".to_string(),
    };
    println!(
        "solver={} objective_s={} evaluated_rt_s={} p={} subset={:?} iterations={} wall_s={}",
        report.solver.label(),
        report.objective,
        rt,
        report.subset.len(),
        report.subset,
        report.iterations,
        report.wall_time.as_secs_f64()
    );
}

fn solve(args: &SolveArgs, echo: &Echo) -> Result<(), Failure> {
    if let Some(p) = args.p {
        echo.num("p", p, "");
    }
    echo.num("m", args.m, "");
    echo.num("interval-end", args.interval_end, "of mu");
    echo.num("tolerance", args.tolerance, "s");
    echo.num("gap", args.gap, "");
    echo.num("node-limit", args.node_limit, "");
    echo.num("threads", args.threads, "");
    let mut instance = Instance::read(&args.instance).map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(p) = args.p {
        instance = instance.with_p(p).map_err(|e| Failure::usage(e.to_string()))?;
    }
    let milp = MilpOptions {
        gap: args.gap,
        node_limit: args.node_limit,
    };
    let basepoints = || -> Result<Vec<BasepointSet>, Failure> {
        let set = linearization(args.m, args.interval_end)?;
        instance
            .service
            .iter()
            .map(|&mu| set.rescale(mu).map_err(|e| Failure::usage(e.to_string())))
            .collect()
    };
    if let Some(path) = &args.lp_dump {
        let model = match args.solver {
            SolverArg::P => build_p_model(&instance)?,
            SolverArg::QpLin => build_qp_lin_model(&instance, &basepoints()?)?,
            SolverArg::QpExact => return Err(Failure::usage("--lp-dump needs --solver p or qp-lin")),
        };
        write_file(path, model.to_lp_format().as_bytes())?;
    }
    let result = match args.solver {
        SolverArg::P => solve_p(&instance, &milp),
        SolverArg::QpLin => solve_qp_lin(&instance, &basepoints()?, &milp),
        SolverArg::QpExact => solve_qp_exact(
            &instance,
            &ExactOptions {
                tolerance: args.tolerance,
                threads: args.threads,
                ..ExactOptions::default()
            },
        ),
    };
    let report = match result {
        Ok(r) => r,
        Err(SolveError::NoConvergence {
            iterations,
            residual,
            best,
        }) => {
            if let Some(best) = &best {
                print_report(best);
            }
            return Err(Failure {
                code: EXIT_NO_CONVERGENCE,
                message: format!("no convergence after {iterations} iterations, gap {residual}"),
            });
        }
        Err(e) => return Err(e.into()),
    };
    debug_assert_eq!(report.solver, args.solver.kind());
    if let Some(out) = &args.out {
        write_file(out, report.to_json(&instance, args.timings).as_bytes())?;
    }
    if let Some(out) = &args.assignment {
        write_file(out, report.assignment.to_json(report.exact_rt()).as_bytes())?;
    }
    print_report(&report);
    Ok(())
}

fn summary_bytes(comparison: &Comparison) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    comparison.write_csv(&mut buf)?;
    Ok(buf)
}

fn report_violations(comparison: &Comparison) -> Result<(), Failure> {
    for v in &comparison.violations {
        eprintln!(
            "violation: {} is worse than {} by {} s at {}",
            comparison.candidate.label(),
            comparison.reference.label(),
            -v.delta,
            v.config
        );
    }
    if comparison.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VIOLATION,
            message: format!(
                "{} dominance violation(s): RT({}) < RT({}) - 1e-6",
                comparison.violations.len(),
                comparison.reference.label(),
                comparison.candidate.label()
            ),
        })
    }
}

fn experiment(args: &ExperimentArgs, echo: &Echo) -> Result<(), Failure> {
    echo.num("threads", args.threads, "");
    let grid = GridConfig::read(&args.grid)?;
    let options = RunOptions {
        threads: args.threads,
        timings: args.timings,
        ..RunOptions::default()
    };
    let records = run_grid(&grid, &options)?;
    let (reference, candidate) = solver_pair(&grid);
    let comparison = compare_records(&records, reference, candidate)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::usage(format!("{}: {e}", args.out_dir.display())))?;
    let mut buf = Vec::new();
    write_records(&records, &mut buf)?;
    write_file(&args.out_dir.join("records.csv"), &buf)?;
    write_file(&args.out_dir.join("summary.csv"), &summary_bytes(&comparison)?)?;
    println!(
        "records={} summary_rows={} solved_pairs={} violations={}",
        records.len(),
        comparison.rows.len(),
        comparison.solved_pairs(),
        comparison.violations.len()
    );
    report_violations(&comparison)
}

fn compare(args: &CompareArgs) -> Result<(), Failure> {
    let file = fs::File::open(&args.records).map_err(|e| Failure::usage(format!("{}: {e}", args.records.display())))?;
    let records = read_records(io::BufReader::new(file))?;
    let comparison = compare_records(&records, args.reference.kind(), args.candidate.kind())?;
    let bytes = summary_bytes(&comparison)?;
    match &args.out {
        Some(path) => write_file(path, &bytes)?,
        None => io::stdout()
            .write_all(&bytes)
            .map_err(|e| Failure::usage(e.to_string()))?,
    }
    report_violations(&comparison)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let echo = Echo(cli.verbose);
    let result = match &cli.command {
        Command::GenInstance(a) => gen_instance(a, &echo),
        Command::Linearize(a) => linearize(a, &echo),
        Command::Solve(a) => solve(a, &echo),
        Command::Experiment(a) => experiment(a, &echo),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
