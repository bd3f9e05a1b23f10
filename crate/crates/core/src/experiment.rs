//! Evaluation campaigns: exact versus linearized quality on fixed
//! facility sets, and the four-factor study comparing the queue-aware
//! linearized model with the queue-ignoring p-median.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::convex::{solve_qp_exact, ExactOptions};
use crate::instance::{
    build_bipartite, generate_demand, DemandKind, DemandSpec, Instance, InstanceError, Topology,
    DEFAULT_LOCAL_LOOP_S, DEFAULT_SPEED_FACTOR_S_PER_KM,
};
use crate::milp::{solve_p, solve_qp_lin, MilpOptions};
use crate::pwl::{weighted_tis_basepoints, BasepointSet, DEFAULT_BASEPOINTS, DEFAULT_INTERVAL_END};
use crate::queueing::{response_time, Assignment};
use crate::report::{SolveError, SolveReport, SolverKind};

/// Response-time differences below this count as ties.
pub const TIE_THRESHOLD: f64 = 1e-6;
/// Candidate facilities are capped at this many best connected nodes.
pub const MAX_FACILITIES: usize = 100;
pub const RECORDS_HEADER: [&str; 10] = [
    "topology",
    "mu_hat",
    "dist",
    "rho_hat",
    "p",
    "realization",
    "solver",
    "rt_s",
    "wall_s",
    "status",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("campaign parameters: {0}")]
    Params(String),
    #[error("confidence interval needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("unpaired record for configuration {0}")]
    Unpaired(String),
    #[error("no records to compare")]
    EmptyGroup,
    #[error("grid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("{config}: {source}")]
    Solve {
        config: String,
        #[source]
        source: SolveError,
    },
}

/// Quantities derived from a topology and one (μ̂, ρ̂) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignParams {
    pub facilities: usize,
    pub p_min: usize,
    /// Mean arrival rate per client.
    pub lambda_hat: f64,
    /// Multiplier `a ≈ 0.3/ρ̂` rounded to two decimals.
    pub a: f64,
    pub p_hat: usize,
}

/// `a = 0.3/ρ̂` rounded to two decimals.
pub fn utilization_multiplier(rho_hat: f64) -> f64 {
    (0.3 / rho_hat * 100.0).round() / 100.0
}

fn floor_eps(x: f64) -> usize {
    (x + 1e-9).floor() as usize
}

/// `|F| = min(|N|, 100)`, `p_min = ⌊0.3|F|⌋`, `λ̂ = μ̂·p_min/|N|`,
/// `p̂ = ⌊a|F|⌋`.
pub fn derive_campaign_params(num_nodes: usize, mu_hat: f64, rho_hat: f64) -> Result<CampaignParams, ExperimentError> {
    if !(rho_hat > 0.0 && rho_hat <= 1.0) {
        return Err(ExperimentError::Params(format!("rho_hat {rho_hat} must be in (0, 1]")));
    }
    if !(mu_hat.is_finite() && mu_hat > 0.0) {
        return Err(ExperimentError::Params(format!("mu_hat {mu_hat} must be > 0")));
    }
    let facilities = num_nodes.min(MAX_FACILITIES);
    let p_min = floor_eps(0.3 * facilities as f64);
    if p_min == 0 {
        return Err(ExperimentError::Params(format!(
            "topology with {num_nodes} nodes gives p_min = 0"
        )));
    }
    let a = utilization_multiplier(rho_hat);
    let p_hat = floor_eps(a * facilities as f64);
    if p_hat > facilities {
        return Err(ExperimentError::Params(format!(
            "rho_hat {rho_hat} needs p = {p_hat} > |F| = {facilities}"
        )));
    }
    Ok(CampaignParams {
        facilities,
        p_min,
        lambda_hat: mu_hat * p_min as f64 / num_nodes as f64,
        a,
        p_hat,
    })
}

/// Student-t interval `mean ± t_{(1+level)/2, n−1}·s/√n`.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<(f64, f64), ExperimentError> {
    let n = samples.len();
    if n < 2 {
        return Err(ExperimentError::TooFewSamples(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ExperimentError::Params(format!("confidence level {level} must be in (0, 1)")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| ExperimentError::Params(e.to_string()))?
        .inverse_cdf((1.0 + level) / 2.0);
    Ok((mean, t * var.sqrt() / (n as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecordStatus {
    Ok,
    /// A facility is loaded to its full service rate; the response time
    /// is infinite.
    Unstable,
    Infeasible,
    NoConvergence,
}

impl RecordStatus {
    pub fn label(self) -> &'static str {
        match self {
            RecordStatus::Ok => "ok",
            RecordStatus::Unstable => "unstable",
            RecordStatus::Infeasible => "infeasible",
            RecordStatus::NoConvergence => "no-convergence",
        }
    }
}

impl std::str::FromStr for RecordStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(RecordStatus::Ok),
            "unstable" => Ok(RecordStatus::Unstable),
            "infeasible" => Ok(RecordStatus::Infeasible),
            "no-convergence" => Ok(RecordStatus::NoConvergence),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

/// One solver run on one configuration.
#[derive(Debug, Clone)]
pub struct ExperimentRecord {
    pub topology: String,
    pub mu_hat: f64,
    pub dist: DemandKind,
    /// Target utilization; `None` in the exact-versus-linearized campaign.
    pub rho_hat: Option<f64>,
    pub p: usize,
    pub realization: usize,
    pub solver: SolverKind,
    /// Exact response time; `None` when infeasible, `+∞` when unstable.
    pub rt_s: Option<f64>,
    pub wall_s: Option<f64>,
    pub status: RecordStatus,
    /// The evaluated assignment and its instance (not serialized).
    pub solution: Option<(Arc<Instance>, Assignment)>,
}

impl ExperimentRecord {
    /// Factor combination including the realization.
    pub fn config_key(&self) -> String {
        format!(
            "{}/mu={}/{}/rho={}/p={}/r={}",
            self.topology,
            self.mu_hat,
            self.dist.label(),
            self.rho_hat.map(|r| r.to_string()).unwrap_or_default(),
            self.p,
            self.realization
        )
    }

    /// Re-scores the stored assignment.
    pub fn reevaluate(&self) -> Option<f64> {
        let (instance, assignment) = self.solution.as_ref()?;
        Some(response_time(instance, assignment).map(|r| r.total()).unwrap_or(f64::INFINITY))
    }

    fn to_row(&self) -> [String; 10] {
        [
            self.topology.clone(),
            self.mu_hat.to_string(),
            self.dist.label().to_string(),
            self.rho_hat.map(|r| r.to_string()).unwrap_or_default(),
            self.p.to_string(),
            self.realization.to_string(),
            self.solver.label().to_string(),
            match self.rt_s {
                Some(v) if v.is_infinite() => "inf".to_string(),
                Some(v) => v.to_string(),
                None => String::new(),
            },
            self.wall_s.map(|w| w.to_string()).unwrap_or_default(),
            self.status.label().to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Worker threads; `0` uses the global pool, `1` runs sequentially.
    pub threads: usize,
    /// Record wall-clock times (makes output run-dependent); configurations
    /// then run one at a time.
    pub timings: bool,
    pub milp: MilpOptions,
    pub exact: ExactOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 0,
            timings: false,
            milp: MilpOptions::default(),
            exact: ExactOptions {
                threads: 1,
                ..ExactOptions::default()
            },
        }
    }
}

/// Linearization preset used by a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearizationConfig {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_end")]
    pub interval_end: f64,
}

fn default_m() -> usize {
    DEFAULT_BASEPOINTS
}

fn default_end() -> f64 {
    DEFAULT_INTERVAL_END
}

impl Default for LinearizationConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_BASEPOINTS,
            interval_end: DEFAULT_INTERVAL_END,
        }
    }
}

/// Exact versus linearized comparison on the best connected facilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexVsLinearConfig {
    pub topologies: Vec<PathBuf>,
    pub realizations: usize,
    pub seed: u64,
    #[serde(default = "default_facilities")]
    pub facilities: usize,
    #[serde(default = "default_total_arrival")]
    pub total_arrival: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_p_range")]
    pub p_range: [usize; 2],
    #[serde(default)]
    pub linearization: LinearizationConfig,
}

fn default_facilities() -> usize {
    10
}

fn default_total_arrival() -> f64 {
    470.0
}

fn default_mu() -> f64 {
    100.0
}

fn default_p_range() -> [usize; 2] {
    [5, 10]
}

/// Factor levels of the queue-aware versus queue-ignoring study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorGrid {
    pub topologies: Vec<PathBuf>,
    pub mu_levels: Vec<f64>,
    pub distributions: Vec<DemandKind>,
    pub rho_levels: Vec<f64>,
    pub realizations: usize,
    pub seed: u64,
    #[serde(default)]
    pub linearization: LinearizationConfig,
}

/// A grid file: either campaign, selected by its `campaign` key
/// (`convex-vs-linear` or `factor-study`).
#[derive(Debug, Clone, PartialEq)]
pub enum GridConfig {
    ConvexVsLinear(ConvexVsLinearConfig),
    FactorStudy(FactorGrid),
}

impl GridConfig {
    /// Reads a grid file; relative topology paths resolve against the
    /// file's directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut grid = Self::from_json(&text).map_err(|e| match e {
            ExperimentError::Config(msg) => ExperimentError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let topologies = match &mut grid {
            GridConfig::ConvexVsLinear(c) => &mut c.topologies,
            GridConfig::FactorStudy(g) => &mut g.topologies,
        };
        for t in topologies.iter_mut() {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        grid.validate()?;
        Ok(grid)
    }

    /// Parses a grid document without resolving paths or validating.
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let bad = |e: serde_json::Error| ExperimentError::Config(e.to_string());
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let campaign = value
            .as_object_mut()
            .and_then(|o| o.remove("campaign"))
            .ok_or_else(|| ExperimentError::Config("missing `campaign` key".into()))?;
        match campaign.as_str() {
            Some("convex-vs-linear") => Ok(GridConfig::ConvexVsLinear(serde_json::from_value(value).map_err(bad)?)),
            Some("factor-study") => Ok(GridConfig::FactorStudy(serde_json::from_value(value).map_err(bad)?)),
            _ => Err(ExperimentError::Config(format!(
                "campaign must be \"convex-vs-linear\" or \"factor-study\", got {campaign}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        let lin = match self {
            GridConfig::ConvexVsLinear(c) => {
                if c.topologies.is_empty() {
                    return bad("topologies must not be empty".into());
                }
                if c.realizations < 2 {
                    return bad(format!("realizations must be >= 2, got {}", c.realizations));
                }
                let [lo, hi] = c.p_range;
                if lo == 0 || lo > hi || hi > c.facilities {
                    return bad(format!("p_range {lo}..={hi} invalid for {} facilities", c.facilities));
                }
                if !(c.total_arrival > 0.0 && c.mu > 0.0) {
                    return bad("total_arrival and mu must be > 0".into());
                }
                c.linearization
            }
            GridConfig::FactorStudy(g) => {
                if g.topologies.is_empty()
                    || g.mu_levels.is_empty()
                    || g.distributions.is_empty()
                    || g.rho_levels.is_empty()
                {
                    return bad("all factor levels must be non-empty".into());
                }
                if g.realizations < 2 {
                    return bad(format!("realizations must be >= 2, got {}", g.realizations));
                }
                if g.mu_levels.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                    return bad("mu levels must be > 0".into());
                }
                if g.rho_levels.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
                    return bad("rho levels must be in (0, 1]".into());
                }
                if g.distributions.contains(&DemandKind::UniformNormalized) {
                    return bad("the factor study draws per-client means; uniform-normalized is not a level".into());
                }
                g.linearization
            }
        };
        if lin.m < 3 || !(lin.interval_end > 0.0 && lin.interval_end < 1.0) {
            return bad(format!("linearization m = {}, interval_end = {} out of range", lin.m, lin.interval_end));
        }
        Ok(())
    }
}

/// Mixes the grid seed with the configuration coordinates.
fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        // splitmix64 finalizer
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

struct Job {
    topology: String,
    mu_hat: f64,
    dist: DemandKind,
    rho_hat: Option<f64>,
    realization: usize,
    instance: Result<Arc<Instance>, InstanceError>,
    solvers: Vec<SolverKind>,
}

fn run_solver(
    instance: &Instance,
    solver: SolverKind,
    basepoints: &[BasepointSet],
    options: &RunOptions,
) -> Result<SolveReport, SolveError> {
    match solver {
        SolverKind::P => solve_p(instance, &options.milp),
        SolverKind::QpLin => solve_qp_lin(instance, basepoints, &options.milp),
        SolverKind::QpExact => solve_qp_exact(instance, &options.exact),
    }
}

fn execute(job: &Job, lin: &BasepointSet, options: &RunOptions) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    let mut out = Vec::with_capacity(job.solvers.len());
    let instance = match &job.instance {
        Ok(i) => i.clone(),
        Err(e) => {
            return Err(ExperimentError::Params(format!(
                "{}/r={}: {e}",
                job.topology, job.realization
            )))
        }
    };
    let basepoints: Vec<BasepointSet> = instance
        .service
        .iter()
        .map(|&mu| lin.rescale(mu))
        .collect::<Result<_, _>>()
        .map_err(|e| ExperimentError::Params(e.to_string()))?;
    for &solver in &job.solvers {
        let mut record = ExperimentRecord {
            topology: job.topology.clone(),
            mu_hat: job.mu_hat,
            dist: job.dist,
            rho_hat: job.rho_hat,
            p: instance.p,
            realization: job.realization,
            solver,
            rt_s: None,
            wall_s: None,
            status: RecordStatus::Infeasible,
            solution: None,
        };
        let started = Instant::now();
        let result = run_solver(&instance, solver, &basepoints, options);
        let elapsed = started.elapsed().as_secs_f64();
        match result {
            Ok(report) => {
                record.rt_s = Some(report.rt_or_inf());
                record.status = if report.exact.is_some() {
                    RecordStatus::Ok
                } else {
                    RecordStatus::Unstable
                };
                record.solution = Some((instance.clone(), report.assignment));
            }
            Err(SolveError::Infeasible { .. }) => {}
            Err(SolveError::NoConvergence { best, .. }) => {
                record.status = RecordStatus::NoConvergence;
                if let Some(best) = best {
                    record.rt_s = Some(best.rt_or_inf());
                    record.solution = Some((instance.clone(), best.assignment));
                }
            }
            Err(source) => {
                return Err(ExperimentError::Solve {
                    config: record.config_key(),
                    source,
                })
            }
        }
        if options.timings {
            record.wall_s = Some(elapsed);
        }
        out.push(record);
    }
    Ok(out)
}

fn run_jobs(jobs: &[Job], lin: &BasepointSet, options: &RunOptions) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    let work = || -> Result<Vec<Vec<ExperimentRecord>>, ExperimentError> {
        if options.threads == 1 || options.timings {
            jobs.iter().map(|j| execute(j, lin, options)).collect()
        } else {
            jobs.par_iter().map(|j| execute(j, lin, options)).collect()
        }
    };
    let nested = if options.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(|e| ExperimentError::Params(format!("thread pool: {e}")))?
            .install(work)?
    } else {
        work()?
    };
    Ok(nested.into_iter().flatten().collect())
}

fn load_topology(path: &Path) -> Result<Topology, ExperimentError> {
    Ok(Topology::read(path, DEFAULT_SPEED_FACTOR_S_PER_KM)?)
}

fn linearization(cfg: &LinearizationConfig) -> Result<BasepointSet, ExperimentError> {
    weighted_tis_basepoints(cfg.m, cfg.interval_end).map_err(|e| ExperimentError::Params(e.to_string()))
}

/// Exact and linearized solves for every topology, realization and `p` in
/// the configured range. Records follow (topology, realization, p, solver)
/// order.
pub fn run_campaign_1(config: &ConvexVsLinearConfig, options: &RunOptions) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    GridConfig::ConvexVsLinear(config.clone()).validate()?;
    let lin = linearization(&config.linearization)?;
    let mut jobs = Vec::new();
    for (ti, path) in config.topologies.iter().enumerate() {
        let topology = load_topology(path)?;
        let skeleton = build_bipartite(&topology, config.facilities, DEFAULT_LOCAL_LOOP_S)?;
        for r in 0..config.realizations {
            let spec = DemandSpec {
                kind: DemandKind::UniformNormalized,
                target: config.total_arrival,
                seed: derive_seed(config.seed, &[ti as u64, 0, r as u64]),
            };
            let arrival = generate_demand(skeleton.clients.len(), &spec)?;
            for p in config.p_range[0]..=config.p_range[1] {
                let instance = skeleton
                    .clone()
                    .with_demand(arrival.clone(), vec![config.mu; config.facilities], p)
                    .map(Arc::new);
                jobs.push(Job {
                    topology: topology.name.clone(),
                    mu_hat: config.mu,
                    dist: DemandKind::UniformNormalized,
                    rho_hat: None,
                    realization: r,
                    instance,
                    solvers: vec![SolverKind::QpExact, SolverKind::QpLin],
                });
            }
        }
    }
    run_jobs(&jobs, &lin, options)
}

/// P and linearized solves for every factor combination and realization.
/// Demand draws depend on (seed, topology, distribution, realization)
/// only, so the same standardized draws are reused across μ̂ and ρ̂.
pub fn run_campaign_2(grid: &FactorGrid, options: &RunOptions) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    GridConfig::FactorStudy(grid.clone()).validate()?;
    let lin = linearization(&grid.linearization)?;
    let mut jobs = Vec::new();
    for (ti, path) in grid.topologies.iter().enumerate() {
        let topology = load_topology(path)?;
        let n = topology.len();
        let facilities = n.min(MAX_FACILITIES);
        let skeleton = build_bipartite(&topology, facilities, DEFAULT_LOCAL_LOOP_S)?;
        for &mu_hat in &grid.mu_levels {
            for &dist in &grid.distributions {
                for &rho_hat in &grid.rho_levels {
                    let params = derive_campaign_params(n, mu_hat, rho_hat)?;
                    for r in 0..grid.realizations {
                        let spec = DemandSpec {
                            kind: dist,
                            target: params.lambda_hat,
                            seed: derive_seed(grid.seed, &[ti as u64, dist as u64 + 1, r as u64]),
                        };
                        let instance = generate_demand(n, &spec)
                            .and_then(|arrival| {
                                skeleton
                                    .clone()
                                    .with_demand(arrival, vec![mu_hat; facilities], params.p_hat)
                            })
                            .map(Arc::new);
                        jobs.push(Job {
                            topology: topology.name.clone(),
                            mu_hat,
                            dist,
                            rho_hat: Some(rho_hat),
                            realization: r,
                            instance,
                            solvers: vec![SolverKind::P, SolverKind::QpLin],
                        });
                    }
                }
            }
        }
    }
    run_jobs(&jobs, &lin, options)
}

/// Runs whichever campaign the grid describes.
pub fn run_grid(grid: &GridConfig, options: &RunOptions) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    match grid {
        GridConfig::ConvexVsLinear(c) => run_campaign_1(c, options),
        GridConfig::FactorStudy(g) => run_campaign_2(g, options),
    }
}

/// Reference and candidate solvers compared by a campaign: the candidate
/// should never be worse.
pub fn solver_pair(grid: &GridConfig) -> (SolverKind, SolverKind) {
    match grid {
        GridConfig::ConvexVsLinear(_) => (SolverKind::QpLin, SolverKind::QpExact),
        GridConfig::FactorStudy(_) => (SolverKind::P, SolverKind::QpLin),
    }
}

fn csv_writer<W: io::Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub fn write_records<W: io::Write>(records: &[ExperimentRecord], out: W) -> Result<(), ExperimentError> {
    let mut w = csv_writer(out);
    w.write_record(RECORDS_HEADER)?;
    for r in records {
        w.write_record(r.to_row())?;
    }
    w.flush().map_err(|source| ExperimentError::Io {
        path: "<records>".into(),
        source,
    })?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, line: usize) -> Result<T, ExperimentError>
where
    T::Err: fmt::Display,
{
    let text = row.get(i).unwrap_or("");
    text.parse().map_err(|e: T::Err| {
        ExperimentError::Config(format!("records line {line}: column {}: {text:?}: {e}", RECORDS_HEADER[i]))
    })
}

fn parse_optional(row: &csv::StringRecord, i: usize, line: usize) -> Result<Option<f64>, ExperimentError> {
    match row.get(i).unwrap_or("") {
        "" => Ok(None),
        "inf" => Ok(Some(f64::INFINITY)),
        _ => parse_field::<f64>(row, i, line).map(Some),
    }
}

pub fn read_records<R: io::Read>(input: R) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != RECORDS_HEADER {
        return Err(ExperimentError::Config(format!("unexpected records header {header:?}")));
    }
    let mut out = Vec::new();
    for (k, row) in rd.records().enumerate() {
        let row = row?;
        let line = k + 2;
        out.push(ExperimentRecord {
            topology: row.get(0).unwrap_or("").to_string(),
            mu_hat: parse_field(&row, 1, line)?,
            dist: parse_field(&row, 2, line)?,
            rho_hat: parse_optional(&row, 3, line)?,
            p: parse_field(&row, 4, line)?,
            realization: parse_field(&row, 5, line)?,
            solver: parse_field(&row, 6, line)?,
            rt_s: parse_optional(&row, 7, line)?,
            wall_s: parse_optional(&row, 8, line)?,
            status: parse_field(&row, 9, line)?,
            solution: None,
        });
    }
    Ok(out)
}

/// Aggregates for one factor combination (all realizations).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub topology: String,
    pub mu_hat: f64,
    pub dist: DemandKind,
    pub rho_hat: Option<f64>,
    /// Facility budget when identical across the group.
    pub p: Option<usize>,
    pub pairs: usize,
    /// Pairs where both solvers returned an assignment.
    pub solved: usize,
    /// Pairs in which the reference assignment is unstable.
    pub unstable: usize,
    pub ties: usize,
    pub violations: usize,
    pub mean_rt_reference: Option<f64>,
    pub ci_rt_reference: Option<f64>,
    pub mean_rt_candidate: Option<f64>,
    pub ci_rt_candidate: Option<f64>,
    /// Mean `RT(reference) − RT(candidate)` over pairs with finite times.
    pub mean_delta: Option<f64>,
    pub ci_delta: Option<f64>,
    /// Mean `1 − RT(candidate)/RT(reference)` over solved pairs.
    pub mean_rel_improvement: Option<f64>,
    pub ci_rel_improvement: Option<f64>,
    pub mean_wall_reference: Option<f64>,
    pub mean_wall_candidate: Option<f64>,
}

pub const SUMMARY_HEADER: [&str; 21] = [
    "topology",
    "mu_hat",
    "dist",
    "rho_hat",
    "p",
    "pairs",
    "solved",
    "unstable",
    "ties",
    "violations",
    "mean_rt_reference_s",
    "ci_rt_reference_s",
    "mean_rt_candidate_s",
    "ci_rt_candidate_s",
    "mean_delta_s",
    "ci_delta_s",
    "mean_rel_improvement",
    "ci_rel_improvement",
    "mean_wall_reference_s",
    "mean_wall_candidate_s",
    "reference_vs_candidate",
];

/// A pair whose candidate is worse than the reference beyond the tie
/// threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub config: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub reference: SolverKind,
    pub candidate: SolverKind,
    pub rows: Vec<SummaryRow>,
    pub violations: Vec<Violation>,
}

impl Comparison {
    pub fn solved_pairs(&self) -> usize {
        self.rows.iter().map(|r| r.solved).sum()
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), ExperimentError> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv_writer(out);
        w.write_record(SUMMARY_HEADER)?;
        let label = format!("{}-vs-{}", self.reference.label(), self.candidate.label());
        for r in &self.rows {
            w.write_record([
                r.topology.clone(),
                r.mu_hat.to_string(),
                r.dist.label().to_string(),
                opt(r.rho_hat),
                r.p.map(|p| p.to_string()).unwrap_or_default(),
                r.pairs.to_string(),
                r.solved.to_string(),
                r.unstable.to_string(),
                r.ties.to_string(),
                r.violations.to_string(),
                opt(r.mean_rt_reference),
                opt(r.ci_rt_reference),
                opt(r.mean_rt_candidate),
                opt(r.ci_rt_candidate),
                opt(r.mean_delta),
                opt(r.ci_delta),
                opt(r.mean_rel_improvement),
                opt(r.ci_rel_improvement),
                opt(r.mean_wall_reference),
                opt(r.mean_wall_candidate),
                label.clone(),
            ])?;
        }
        w.flush().map_err(|source| ExperimentError::Io {
            path: "<summary>".into(),
            source,
        })?;
        Ok(())
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn half_width(xs: &[f64]) -> Option<f64> {
    confidence_interval(xs, 0.95).ok().map(|(_, h)| h)
}

type GroupKey = (String, u64, DemandKind, Option<u64>, Option<usize>);

/// Pairs reference and candidate records per configuration and summarizes
/// each factor combination. Campaigns without a utilization factor are
/// grouped by `p` instead.
pub fn compare_records(
    records: &[ExperimentRecord],
    reference: SolverKind,
    candidate: SolverKind,
) -> Result<Comparison, ExperimentError> {
    if records.is_empty() {
        return Err(ExperimentError::EmptyGroup);
    }
    let mut pairs: BTreeMap<String, (Option<&ExperimentRecord>, Option<&ExperimentRecord>)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for r in records {
        let slot = if r.solver == reference {
            0
        } else if r.solver == candidate {
            1
        } else {
            continue;
        };
        let key = r.config_key();
        let entry = pairs.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (None, None)
        });
        let target = if slot == 0 { &mut entry.0 } else { &mut entry.1 };
        if target.is_some() {
            return Err(ExperimentError::Unpaired(format!("{key} (duplicate {})", r.solver)));
        }
        *target = Some(r);
    }
    if pairs.is_empty() {
        return Err(ExperimentError::EmptyGroup);
    }

    let mut groups: Vec<(GroupKey, Vec<(&ExperimentRecord, &ExperimentRecord)>)> = Vec::new();
    let mut index: BTreeMap<GroupKey, usize> = BTreeMap::new();
    for key in &order {
        let (Some(a), Some(b)) = pairs[key] else {
            return Err(ExperimentError::Unpaired(key.clone()));
        };
        let gk: GroupKey = (
            a.topology.clone(),
            a.mu_hat.to_bits(),
            a.dist,
            a.rho_hat.map(f64::to_bits),
            a.rho_hat.is_none().then_some(a.p),
        );
        let slot = *index.entry(gk.clone()).or_insert_with(|| {
            groups.push((gk.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push((a, b));
    }

    let mut rows = Vec::with_capacity(groups.len());
    let mut violations = Vec::new();
    for ((topology, mu_bits, dist, rho_bits, _), members) in groups {
        let first_p = members[0].0.p;
        let same_p = members.iter().all(|(a, _)| a.p == first_p);
        let mut row = SummaryRow {
            topology,
            mu_hat: f64::from_bits(mu_bits),
            dist,
            rho_hat: rho_bits.map(f64::from_bits),
            p: same_p.then_some(first_p),
            pairs: members.len(),
            solved: 0,
            unstable: 0,
            ties: 0,
            violations: 0,
            mean_rt_reference: None,
            ci_rt_reference: None,
            mean_rt_candidate: None,
            ci_rt_candidate: None,
            mean_delta: None,
            ci_delta: None,
            mean_rel_improvement: None,
            ci_rel_improvement: None,
            mean_wall_reference: None,
            mean_wall_candidate: None,
        };
        let (mut rt_ref, mut rt_cand, mut delta, mut rel) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut wall_ref, mut wall_cand) = (Vec::new(), Vec::new());
        for (a, b) in &members {
            wall_ref.extend(a.wall_s);
            wall_cand.extend(b.wall_s);
            let (Some(ra), Some(rb)) = (a.rt_s, b.rt_s) else {
                continue;
            };
            row.solved += 1;
            let d = ra - rb;
            rel.push(if ra.is_infinite() { 1.0 } else { d / ra });
            if ra.is_infinite() {
                row.unstable += 1;
            }
            if d.abs() < TIE_THRESHOLD {
                row.ties += 1;
            }
            if d < -TIE_THRESHOLD {
                row.violations += 1;
                violations.push(Violation {
                    config: a.config_key(),
                    delta: d,
                });
            }
            if ra.is_finite() && rb.is_finite() {
                rt_ref.push(ra);
                rt_cand.push(rb);
                delta.push(d);
            }
        }
        row.mean_rt_reference = mean(&rt_ref);
        row.ci_rt_reference = half_width(&rt_ref);
        row.mean_rt_candidate = mean(&rt_cand);
        row.ci_rt_candidate = half_width(&rt_cand);
        row.mean_delta = mean(&delta);
        row.ci_delta = half_width(&delta);
        row.mean_rel_improvement = mean(&rel);
        row.ci_rel_improvement = half_width(&rel);
        row.mean_wall_reference = mean(&wall_ref);
        row.mean_wall_candidate = mean(&wall_cand);
        rows.push(row);
    }
    Ok(Comparison {
        reference,
        candidate,
        rows,
        violations,
    })
}
