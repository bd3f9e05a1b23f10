//! Solver outcomes shared by the convex and branch-and-bound solvers.

use std::fmt;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::instance::{Instance, InstanceError};
use crate::pwl::PwlError;
use crate::queueing::{response_time, Assignment, QueueError, ResponseTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SolverKind {
    /// Queue-ignoring capacitated p-median.
    #[serde(rename = "P")]
    P,
    /// Piecewise-linearized queue-aware MILP.
    #[serde(rename = "QP-lin")]
    QpLin,
    /// Exact queue-aware convex decomposition.
    #[serde(rename = "QP")]
    QpExact,
}

impl SolverKind {
    pub fn label(self) -> &'static str {
        match self {
            SolverKind::P => "P",
            SolverKind::QpLin => "QP-lin",
            SolverKind::QpExact => "QP",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "P" | "p" => Ok(SolverKind::P),
            "QP-lin" | "qp-lin" => Ok(SolverKind::QpLin),
            "QP" | "qp-exact" => Ok(SolverKind::QpExact),
            other => Err(format!("unknown solver {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("infeasible: {reason} (demand {demand} req/s, usable capacity {capacity} req/s)")]
    Infeasible {
        reason: String,
        demand: f64,
        capacity: f64,
    },
    #[error("no convergence after {iterations} iterations (residual/gap {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Option<Box<SolveReport>>,
    },
    #[error("point outside the domain: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Pwl(#[from] PwlError),
}

/// Result of one solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solver: SolverKind,
    pub assignment: Assignment,
    /// Objective of the solved model in seconds. For the exact solver this
    /// is the exact response time.
    pub objective: f64,
    /// Exact response time of `assignment`; `None` when some facility is
    /// loaded to its full service rate (unstable queue).
    pub exact: Option<ResponseTime>,
    /// First-order optimality residual (convex) or relative gap (MILP).
    pub kkt_residual: f64,
    /// Newton steps (convex) or explored nodes (MILP).
    pub iterations: usize,
    pub wall_time: Duration,
    /// Indices of the open facilities.
    pub subset: Vec<usize>,
}

impl SolveReport {
    pub fn exact_rt(&self) -> Option<f64> {
        self.exact.map(|r| r.total())
    }

    /// Exact response time with unstable assignments mapped to `+∞`.
    pub fn rt_or_inf(&self) -> f64 {
        self.exact_rt().unwrap_or(f64::INFINITY)
    }

    /// JSON export. `with_timing` controls whether the wall time is written;
    /// without it the document depends only on the inputs.
    pub fn to_json(&self, instance: &Instance, with_timing: bool) -> String {
        let loads = self.assignment.loads();
        let doc = ReportFile {
            solver: self.solver.label(),
            objective_s: self.objective,
            evaluated_rt_s: self.exact_rt(),
            rtt_part_s: self.exact.map(|r| r.rtt),
            tis_part_s: self.exact.map(|r| r.tis),
            p: self.subset.len(),
            subset: self.subset.iter().map(|&f| instance.facilities[f]).collect(),
            load_rps: self.subset.iter().map(|&f| loads[f]).collect(),
            utilization: self
                .subset
                .iter()
                .map(|&f| loads[f] / instance.service[f])
                .collect(),
            kkt_residual: self.kkt_residual,
            iterations: self.iterations,
            wall_time_s: with_timing.then(|| self.wall_time.as_secs_f64()),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
        text.push('\n');
        text
    }
}

#[derive(Serialize)]
struct ReportFile {
    solver: &'static str,
    objective_s: f64,
    evaluated_rt_s: Option<f64>,
    rtt_part_s: Option<f64>,
    tis_part_s: Option<f64>,
    p: usize,
    subset: Vec<usize>,
    load_rps: Vec<f64>,
    utilization: Vec<f64>,
    kkt_residual: f64,
    iterations: usize,
    wall_time_s: Option<f64>,
}

/// Scores an assignment, mapping a saturated facility to `None`.
pub(crate) fn evaluate(instance: &Instance, assignment: &Assignment) -> Result<Option<ResponseTime>, SolveError> {
    match response_time(instance, assignment) {
        Ok(rt) => Ok(Some(rt)),
        Err(QueueError::Overloaded { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}
