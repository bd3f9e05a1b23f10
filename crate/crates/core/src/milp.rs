//! Mixed-integer models for the linearized queue-aware problem and the
//! classic capacitated p-median, solved by best-first branch-and-bound on
//! top of [`crate::lp`].
//!
//! The linearized model represents each facility's load-weighted time in
//! system with the lambda formulation: load `Σ_c x_cf = Σ_s α_fs z_fs`,
//! cost `Σ_s β_fs z_fs`, `Σ_s z_fs = 1`, and an SOS2 condition on
//! `z_f·`. Because the curve is convex the LP optimum already uses adjacent
//! weights; leaves are checked and repaired, and SOS2 branching is used
//! only when that check fails.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::instance::Instance;
use crate::lp::{self, LpError, LpProblem, LpSolution, LpStatus, RowKind};
use crate::pwl::{default_basepoints, BasepointSet};
use crate::queueing::Assignment;
use crate::report::{evaluate, SolveError, SolveReport, SolverKind};

/// Relative optimality gap at which branch-and-bound stops.
pub const DEFAULT_GAP: f64 = 1e-6;
pub const DEFAULT_NODE_LIMIT: usize = 200_000;
/// Distance from an integer below which a binary counts as integral.
const INTEGRALITY_TOL: f64 = 1e-6;
/// SOS2 weights below this are treated as zero.
const SOS2_ZERO: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Var {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

/// Ordered variables of which at most two adjacent ones may be nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos2Group {
    pub name: String,
    pub vars: Vec<usize>,
    /// Load represented by each member (`α_s`).
    pub alpha: Vec<f64>,
    /// Objective contribution per unit weight (`β_s / Λ`).
    pub cost: Vec<f64>,
}

/// Where the assignment variables live inside a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub kind: SolverKind,
    /// `x[c][f]`.
    pub x: Vec<Vec<usize>>,
    pub y: Vec<usize>,
    /// `z[f][s]`; empty for the p-median model.
    pub z: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpModel {
    pub vars: Vec<Var>,
    pub constraints: Vec<Constraint>,
    pub sos2: Vec<Sos2Group>,
    pub layout: Layout,
}

impl MilpModel {
    fn new(kind: SolverKind) -> Self {
        Self {
            vars: Vec::new(),
            constraints: Vec::new(),
            sos2: Vec::new(),
            layout: Layout {
                kind,
                x: Vec::new(),
                y: Vec::new(),
                z: Vec::new(),
            },
        }
    }

    fn var(&mut self, name: String, kind: VarKind, lower: f64, upper: f64, cost: f64) -> usize {
        self.vars.push(Var {
            name,
            kind,
            lower,
            upper,
            cost,
        });
        self.vars.len() - 1
    }

    fn row(&mut self, name: String, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        self.constraints.push(Constraint { name, coeffs, kind, rhs });
    }

    pub fn num_continuous(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Continuous).count()
    }

    pub fn num_binary(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.vars.iter().zip(values).map(|(v, x)| v.cost * x).sum()
    }

    /// LP relaxation with binaries in `[0, 1]` and the given bounds.
    fn relaxation(&self, lower: &[f64], upper: &[f64]) -> LpProblem {
        LpProblem {
            objective: self.vars.iter().map(|v| v.cost).collect(),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            rows: self
                .constraints
                .iter()
                .map(|c| lp::Row {
                    coeffs: c.coeffs.clone(),
                    kind: c.kind,
                    rhs: c.rhs,
                })
                .collect(),
        }
    }

    fn default_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.vars.iter().map(|v| v.lower).collect(),
            self.vars.iter().map(|v| v.upper).collect(),
        )
    }

    /// The model in LP text format (objective, rows, bounds, binaries and
    /// SOS2 sets).
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\\ {}", self.layout.kind.label());
        out.push_str("Minimize\n obj:");
        push_terms(&mut out, self.vars.iter().enumerate().map(|(j, v)| (j, v.cost)), self);
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            let _ = write!(out, " {}:", c.name);
            push_terms(&mut out, c.coeffs.iter().copied(), self);
            let op = match c.kind {
                RowKind::Le => "<=",
                RowKind::Ge => ">=",
                RowKind::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", c.rhs);
        }
        out.push_str("Bounds\n");
        for v in self.vars.iter().filter(|v| v.kind == VarKind::Continuous) {
            if v.upper.is_finite() {
                let _ = writeln!(out, " {} <= {} <= {}", v.lower, v.name, v.upper);
            } else {
                let _ = writeln!(out, " {} >= {}", v.name, v.lower);
            }
        }
        out.push_str("Binaries\n");
        for v in self.vars.iter().filter(|v| v.kind == VarKind::Binary) {
            let _ = writeln!(out, " {}", v.name);
        }
        if !self.sos2.is_empty() {
            out.push_str("SOS\n");
            for g in &self.sos2 {
                let _ = write!(out, " {}: S2::", g.name);
                for (s, &j) in g.vars.iter().enumerate() {
                    let _ = write!(out, " {}:{}", self.vars[j].name, s + 1);
                }
                out.push('\n');
            }
        }
        out.push_str("End\n");
        out
    }
}

fn push_terms(out: &mut String, terms: impl Iterator<Item = (usize, f64)>, model: &MilpModel) {
    let mut first = true;
    for (j, a) in terms {
        if a == 0.0 {
            continue;
        }
        let sign = if a < 0.0 { '-' } else { '+' };
        if first && a > 0.0 {
            let _ = write!(out, " {} {}", a, model.vars[j].name);
        } else {
            let _ = write!(out, " {sign} {} {}", a.abs(), model.vars[j].name);
        }
        first = false;
    }
    if first {
        out.push_str(" 0");
    }
}

fn add_assignment_vars(model: &mut MilpModel, instance: &Instance) {
    let total = instance.total_arrival();
    for c in 0..instance.num_clients() {
        let row = (0..instance.num_facilities())
            .map(|f| {
                model.var(
                    format!("x_{c}_{f}"),
                    VarKind::Continuous,
                    0.0,
                    f64::INFINITY,
                    instance.rtt[c][f] / total,
                )
            })
            .collect();
        model.layout.x.push(row);
    }
}

fn add_demand_rows(model: &mut MilpModel, instance: &Instance) {
    for c in 0..instance.num_clients() {
        let coeffs = model.layout.x[c].iter().map(|&j| (j, 1.0)).collect();
        model.row(format!("demand_{c}"), coeffs, RowKind::Eq, instance.arrival[c]);
    }
}

fn add_budget_row(model: &mut MilpModel, instance: &Instance) {
    let coeffs = model.layout.y.iter().map(|&j| (j, 1.0)).collect();
    model.row("budget".into(), coeffs, RowKind::Eq, instance.p as f64);
}

fn load_terms(model: &MilpModel, f: usize) -> Vec<(usize, f64)> {
    model.layout.x.iter().map(|row| (row[f], 1.0)).collect()
}

fn check_total(instance: &Instance) -> Result<f64, SolveError> {
    let total = instance.total_arrival();
    if total <= 0.0 {
        return Err(SolveError::Domain("empty instance: total arrival rate is zero".into()));
    }
    Ok(total)
}

/// The standard basepoint preset rescaled to every facility's service rate.
pub fn standard_basepoints(instance: &Instance) -> Result<Vec<BasepointSet>, SolveError> {
    instance
        .service
        .iter()
        .map(|&mu| default_basepoints().rescale(mu).map_err(SolveError::from))
        .collect()
}

/// Builds the linearized queue-aware model from per-facility basepoints
/// (already scaled to each `μ_f`).
pub fn build_qp_lin_model(instance: &Instance, basepoints: &[BasepointSet]) -> Result<MilpModel, SolveError> {
    instance.validate()?;
    let total = check_total(instance)?;
    let nf = instance.num_facilities();
    if basepoints.len() != nf {
        return Err(SolveError::Model(format!(
            "{} basepoint sets for {nf} facilities",
            basepoints.len()
        )));
    }
    for (f, set) in basepoints.iter().enumerate() {
        if set.alpha()[0] != 0.0 || set.beta()[0] != 0.0 {
            return Err(SolveError::Model(format!(
                "facility {f}: first basepoint ({}, {}) must be (0, 0) to express an idle facility",
                set.alpha()[0],
                set.beta()[0]
            )));
        }
        if !(set.interval_end() < instance.service[f]) {
            return Err(SolveError::Model(format!(
                "facility {f}: linearization interval end {} must stay below mu = {}",
                set.interval_end(),
                instance.service[f]
            )));
        }
    }
    let mut ends: Vec<f64> = basepoints.iter().map(|b| b.interval_end()).collect();
    ends.sort_by(|a, b| b.total_cmp(a));
    let usable: f64 = ends.iter().take(instance.p).sum();
    if total > usable {
        return Err(SolveError::Infeasible {
            reason: format!("demand exceeds the linearization limit of the best {} facilities", instance.p),
            demand: total,
            capacity: usable,
        });
    }

    let mut model = MilpModel::new(SolverKind::QpLin);
    add_assignment_vars(&mut model, instance);
    for (f, set) in basepoints.iter().enumerate() {
        let z = (0..set.len())
            .map(|s| {
                model.var(
                    format!("z_{f}_{s}"),
                    VarKind::Continuous,
                    0.0,
                    f64::INFINITY,
                    set.beta()[s] / total,
                )
            })
            .collect();
        model.layout.z.push(z);
    }
    for f in 0..nf {
        let y = model.var(format!("y_{f}"), VarKind::Binary, 0.0, 1.0, 0.0);
        model.layout.y.push(y);
    }

    add_demand_rows(&mut model, instance);
    for (f, set) in basepoints.iter().enumerate() {
        let mut coeffs = load_terms(&model, f);
        coeffs.extend(model.layout.z[f].iter().zip(set.alpha()).map(|(&j, &a)| (j, -a)));
        model.row(format!("load_{f}"), coeffs, RowKind::Eq, 0.0);
    }
    for f in 0..nf {
        let coeffs = model.layout.z[f].iter().map(|&j| (j, 1.0)).collect();
        model.row(format!("convex_{f}"), coeffs, RowKind::Eq, 1.0);
    }
    for (f, set) in basepoints.iter().enumerate() {
        let mut coeffs = load_terms(&model, f);
        coeffs.push((model.layout.y[f], -set.interval_end()));
        model.row(format!("open_{f}"), coeffs, RowKind::Le, 0.0);
    }
    add_budget_row(&mut model, instance);

    for (f, set) in basepoints.iter().enumerate() {
        model.sos2.push(Sos2Group {
            name: format!("sos_{f}"),
            vars: model.layout.z[f].clone(),
            alpha: set.alpha().to_vec(),
            cost: set.beta().iter().map(|b| b / total).collect(),
        });
    }
    Ok(model)
}

/// Builds the queue-ignoring capacitated p-median model.
pub fn build_p_model(instance: &Instance) -> Result<MilpModel, SolveError> {
    instance.validate()?;
    check_total(instance)?;
    let nf = instance.num_facilities();
    let mut model = MilpModel::new(SolverKind::P);
    add_assignment_vars(&mut model, instance);
    for f in 0..nf {
        let y = model.var(format!("y_{f}"), VarKind::Binary, 0.0, 1.0, 0.0);
        model.layout.y.push(y);
    }
    add_demand_rows(&mut model, instance);
    for f in 0..nf {
        let mut coeffs = load_terms(&model, f);
        coeffs.push((model.layout.y[f], -instance.service[f]));
        model.row(format!("capacity_{f}"), coeffs, RowKind::Le, 0.0);
    }
    add_budget_row(&mut model, instance);
    Ok(model)
}

fn lp_failure(e: LpError) -> SolveError {
    SolveError::Numerical(e.to_string())
}

/// Solves the LP relaxation of `model` with binaries relaxed to their
/// (possibly fixed) bounds.
pub fn solve_lp(model: &MilpModel, lower: &[f64], upper: &[f64]) -> Result<LpSolution, SolveError> {
    lp::solve(&model.relaxation(lower, upper)).map_err(lp_failure)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sos2Status {
    /// Every group already satisfied the condition.
    Unchanged,
    /// Some group was re-expressed with adjacent weights at the same load;
    /// `objective_change` is the resulting change (never positive).
    Repaired { objective_change: f64 },
    /// The adjacent representation of this group costs more, so the
    /// solution must be excluded by branching.
    NeedsBranching { group: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sos2Check {
    pub values: Vec<f64>,
    pub status: Sos2Status,
}

fn support(values: &[f64], group: &Sos2Group) -> Vec<usize> {
    group
        .vars
        .iter()
        .enumerate()
        .filter_map(|(s, &j)| (values[j] > SOS2_ZERO).then_some(s))
        .collect()
}

fn is_adjacent(nonzero: &[usize]) -> bool {
    match nonzero {
        [] | [_] => true,
        [a, b] => b - a == 1,
        _ => false,
    }
}

/// Verifies the SOS2 condition on a relaxation solution and re-expresses
/// violating groups by the adjacent pair spanning the same load.
pub fn sos2_check_repair(model: &MilpModel, values: &[f64]) -> Sos2Check {
    let mut out = values.to_vec();
    let mut change = 0.0;
    let mut repaired = false;
    for (gi, group) in model.sos2.iter().enumerate() {
        let nonzero = support(values, group);
        if is_adjacent(&nonzero) {
            continue;
        }
        let load: f64 = group.vars.iter().zip(&group.alpha).map(|(&j, a)| a * values[j]).sum();
        let cost: f64 = group.vars.iter().zip(&group.cost).map(|(&j, c)| c * values[j]).sum();
        let weight: f64 = group.vars.iter().map(|&j| values[j]).sum();
        let alpha = &group.alpha;
        let level = load / weight;
        let k = alpha.partition_point(|&a| a <= level).saturating_sub(1).min(alpha.len() - 2);
        let right = ((level - alpha[k]) / (alpha[k + 1] - alpha[k])).clamp(0.0, 1.0);
        let left = 1.0 - right;
        let new_cost = weight * (left * group.cost[k] + right * group.cost[k + 1]);
        if new_cost > cost + 1e-12 * cost.abs().max(1e-12) {
            return Sos2Check {
                values: values.to_vec(),
                status: Sos2Status::NeedsBranching { group: gi },
            };
        }
        for &j in &group.vars {
            out[j] = 0.0;
        }
        out[group.vars[k]] = weight * left;
        out[group.vars[k + 1]] = weight * right;
        change += new_cost - cost;
        repaired = true;
    }
    let status = if repaired {
        Sos2Status::Repaired { objective_change: change }
    } else {
        Sos2Status::Unchanged
    };
    Sos2Check { values: out, status }
}

#[derive(Debug, Clone, Copy)]
pub struct MilpOptions {
    pub gap: f64,
    pub node_limit: usize,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self {
            gap: DEFAULT_GAP,
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub values: Vec<f64>,
    pub objective: f64,
    /// Best proven lower bound.
    pub bound: f64,
    /// Relative gap between `objective` and `bound`.
    pub gap: f64,
    pub nodes: usize,
    pub sos2_branches: usize,
    pub repairs: usize,
}

struct Node {
    id: usize,
    bound: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lp: LpSolution,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // max-heap: smallest bound first, then oldest
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.id.cmp(&self.id))
    }
}

fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    ((incumbent - bound) / incumbent.abs().max(1e-12)).max(0.0)
}

enum Branch {
    Binary(usize),
    Sos2 { group: usize, split: usize },
}

fn branch_and_bound(model: &MilpModel, options: &MilpOptions) -> Result<MilpSolution, SolveError> {
    let (mut lower, upper) = model.default_bounds();
    // trivial fixing: a budget row equal to the number of binaries opens all
    if let Some(budget) = model.constraints.iter().find(|c| c.name == "budget") {
        if budget.rhs as usize == model.layout.y.len() {
            for &j in &model.layout.y {
                lower[j] = 1.0;
            }
        }
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut nodes = 0usize;
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut sos2_branches = 0;
    let mut repairs = 0;

    let mut push = |lower: Vec<f64>, upper: Vec<f64>, heap: &mut BinaryHeap<Node>, nodes: &mut usize| -> Result<(), SolveError> {
        *nodes += 1;
        let lp = solve_lp(model, &lower, &upper)?;
        match lp.status {
            LpStatus::Optimal => {
                heap.push(Node {
                    id: next_id,
                    bound: lp.objective,
                    lower,
                    upper,
                    lp,
                });
                next_id += 1;
                Ok(())
            }
            LpStatus::Infeasible => Ok(()),
            LpStatus::Unbounded => Err(SolveError::Model("LP relaxation is unbounded".into())),
        }
    };
    push(lower, upper, &mut heap, &mut nodes)?;
    let mut best_bound = heap.peek().map(|n| n.bound).unwrap_or(f64::INFINITY);

    while let Some(node) = heap.pop() {
        best_bound = node.bound;
        if let Some((_, inc)) = &incumbent {
            if relative_gap(*inc, node.bound) <= options.gap {
                break;
            }
        }
        if nodes >= options.node_limit {
            heap.push(node);
            break;
        }
        let values = &node.lp.values;
        let fractional = model
            .layout
            .y
            .iter()
            .copied()
            .map(|j| (j, (values[j] - values[j].round()).abs()))
            .filter(|&(_, dist)| dist > INTEGRALITY_TOL)
            .fold(None, |best: Option<(usize, f64)>, (j, dist)| match best {
                Some((_, bd)) if bd >= dist => best,
                _ => Some((j, dist)),
            });

        let branch = match fractional {
            Some((j, _)) => Branch::Binary(j),
            None => {
                let check = sos2_check_repair(model, values);
                match check.status {
                    Sos2Status::NeedsBranching { group } => {
                        let nz = support(values, &model.sos2[group]);
                        Branch::Sos2 {
                            group,
                            split: (nz[0] + nz[nz.len() - 1]) / 2,
                        }
                    }
                    status => {
                        if let Sos2Status::Repaired { .. } = status {
                            repairs += 1;
                        }
                        let mut leaf = check.values;
                        for &j in &model.layout.y {
                            leaf[j] = leaf[j].round();
                        }
                        let objective = model.objective_value(&leaf);
                        if incumbent.as_ref().is_none_or(|(_, inc)| objective < *inc) {
                            incumbent = Some((leaf, objective));
                        }
                        continue;
                    }
                }
            }
        };

        match branch {
            Branch::Binary(j) => {
                let mut down = node.upper.clone();
                down[j] = 0.0;
                push(node.lower.clone(), down, &mut heap, &mut nodes)?;
                let mut up = node.lower.clone();
                up[j] = 1.0;
                push(up, node.upper.clone(), &mut heap, &mut nodes)?;
            }
            Branch::Sos2 { group, split } => {
                sos2_branches += 1;
                let vars = &model.sos2[group].vars;
                let mut left = node.upper.clone();
                for &j in &vars[split + 1..] {
                    left[j] = 0.0;
                }
                push(node.lower.clone(), left, &mut heap, &mut nodes)?;
                let mut right = node.upper.clone();
                for &j in &vars[..split] {
                    right[j] = 0.0;
                }
                push(node.lower.clone(), right, &mut heap, &mut nodes)?;
            }
        }
    }
    if heap.is_empty() {
        if let Some((_, inc)) = &incumbent {
            best_bound = best_bound.min(*inc);
        }
    }

    match incumbent {
        None if heap.is_empty() => Err(SolveError::Infeasible {
            reason: "no integer point satisfies the model".into(),
            demand: f64::NAN,
            capacity: f64::NAN,
        }),
        None => Err(SolveError::NoConvergence {
            iterations: nodes,
            residual: f64::INFINITY,
            best: None,
        }),
        Some((values, objective)) => Ok(MilpSolution {
            gap: relative_gap(objective, best_bound),
            values,
            objective,
            bound: best_bound.min(objective),
            nodes,
            sos2_branches,
            repairs,
        }),
    }
}

/// Best-first branch-and-bound over the binaries (and SOS2 groups when the
/// adjacency repair fails). Hitting the node limit with an incumbent is
/// reported as `NoConvergence` carrying the gap.
pub fn solve_milp(model: &MilpModel, options: &MilpOptions) -> Result<MilpSolution, SolveError> {
    let solution = branch_and_bound(model, options)?;
    if solution.gap > options.gap {
        return Err(SolveError::NoConvergence {
            iterations: solution.nodes,
            residual: solution.gap,
            best: None,
        });
    }
    Ok(solution)
}

/// Assignment encoded by a MILP solution of either model.
pub fn assignment_from(model: &MilpModel, instance: &Instance, values: &[f64]) -> Assignment {
    let mut a = Assignment::zeros(instance.num_clients(), instance.num_facilities());
    for (f, &j) in model.layout.y.iter().enumerate() {
        a.y[f] = values[j] > 0.5;
    }
    for (c, row) in model.layout.x.iter().enumerate() {
        for (f, &j) in row.iter().enumerate() {
            a.x[c][f] = if a.y[f] { values[j].max(0.0) } else { 0.0 };
        }
    }
    a
}

fn report(
    model: &MilpModel,
    instance: &Instance,
    solution: &MilpSolution,
    started: Instant,
) -> Result<SolveReport, SolveError> {
    let assignment = assignment_from(model, instance, &solution.values);
    let exact = evaluate(instance, &assignment)?;
    Ok(SolveReport {
        solver: model.layout.kind,
        subset: assignment.open_facilities(),
        assignment,
        objective: solution.objective,
        exact,
        kkt_residual: solution.gap,
        iterations: solution.nodes,
        wall_time: started.elapsed(),
    })
}

fn run(model: &MilpModel, instance: &Instance, options: &MilpOptions, started: Instant) -> Result<SolveReport, SolveError> {
    let solution = branch_and_bound(model, options)?;
    let report = report(model, instance, &solution, started)?;
    if solution.gap > options.gap {
        return Err(SolveError::NoConvergence {
            iterations: solution.nodes,
            residual: solution.gap,
            best: Some(Box::new(report)),
        });
    }
    Ok(report)
}

/// Solves the linearized queue-aware problem with the given basepoints.
pub fn solve_qp_lin(instance: &Instance, basepoints: &[BasepointSet], options: &MilpOptions) -> Result<SolveReport, SolveError> {
    let started = Instant::now();
    let model = build_qp_lin_model(instance, basepoints)?;
    run(&model, instance, options, started)
}

/// Solves the classic capacitated p-median problem.
pub fn solve_p(instance: &Instance, options: &MilpOptions) -> Result<SolveReport, SolveError> {
    let started = Instant::now();
    let model = build_p_model(instance)?;
    run(&model, instance, options, started)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p_example() -> Instance {
        Instance::from_matrix(
            vec![vec![0.060, 0.070], vec![0.080, 0.050]],
            vec![50.0, 50.0],
            vec![100.0, 100.0],
            1,
        )
        .unwrap()
    }

    #[test]
    fn qp_lin_model_counts() {
        let inst = Instance::from_matrix(
            vec![vec![0.01, 0.02, 0.03], vec![0.03, 0.02, 0.01]],
            vec![30.0, 30.0],
            vec![100.0; 3],
            2,
        )
        .unwrap();
        let model = build_qp_lin_model(&inst, &standard_basepoints(&inst).unwrap()).unwrap();
        assert_eq!(model.num_continuous(), 24);
        assert_eq!(model.num_binary(), 3);
        assert_eq!(model.constraints.len(), 12);
        assert_eq!(model.sos2.len(), 3);
        let owners: Vec<usize> = model.sos2.iter().flat_map(|g| g.vars.clone()).collect();
        let mut unique = owners.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), owners.len());
    }

    #[test]
    fn qp_lin_model_rejects_bad_basepoints() {
        let inst = p_example();
        let shifted = BasepointSet::new(vec![1.0, 50.0, 90.0], vec![0.0, 1.0, 9.0], 0.0).unwrap();
        let err = build_qp_lin_model(&inst, &[shifted.clone(), shifted]).unwrap_err();
        assert!(matches!(err, SolveError::Model(_)));
    }

    #[test]
    fn qp_lin_budget_infeasible_before_solving() {
        let over = Instance::from_matrix(vec![vec![0.01, 0.02]], vec![150.0], vec![100.0, 100.0], 1).unwrap();
        assert!(matches!(
            build_qp_lin_model(&over, &standard_basepoints(&over).unwrap()),
            Err(SolveError::Infeasible { .. })
        ));
    }

    #[test]
    fn p_example_opens_b() {
        let inst = p_example();
        let r = solve_p(&inst, &MilpOptions::default()).unwrap();
        assert_eq!(r.subset, vec![1]);
        assert!((r.objective - 0.060).abs() < 1e-12);
        // facility b carries exactly its service rate
        assert!(r.exact.is_none());
    }

    #[test]
    fn transportation_lp_with_fixed_open_vector() {
        let inst = p_example();
        let model = build_p_model(&inst).unwrap();
        let (mut lo, mut hi) = model.default_bounds();
        hi[model.layout.y[0]] = 0.0;
        lo[model.layout.y[1]] = 1.0;
        let s = solve_lp(&model, &lo, &hi).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 0.060).abs() < 1e-12);
    }

    #[test]
    fn p_nearest_assignment_when_all_open() {
        let inst = p_example().with_p(2).unwrap();
        let mut inst = inst;
        inst.service = vec![1000.0, 1000.0];
        let r = solve_p(&inst, &MilpOptions::default()).unwrap();
        assert!((r.assignment.x[0][0] - 50.0).abs() < 1e-9);
        assert!((r.assignment.x[1][1] - 50.0).abs() < 1e-9);
        let mut sat = p_example().with_p(2).unwrap();
        sat.arrival = vec![100.0, 100.0];
        let r = solve_p(&sat, &MilpOptions::default()).unwrap();
        assert!((r.assignment.loads()[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn qp_lin_symmetric_pair() {
        let inst = Instance::from_matrix(vec![vec![0.060, 0.060]], vec![80.0], vec![100.0, 100.0], 2).unwrap();
        let sets = standard_basepoints(&inst).unwrap();
        let r = solve_qp_lin(&inst, &sets, &MilpOptions::default()).unwrap();
        // the chord over [0, α₁] is linear, so every split with both loads in
        // [80 − α₁, α₁] is optimal for the linearized model, the even one included
        let pwl = |load: f64| sets[0].eval(load).unwrap();
        let even = (80.0 * 0.060 + 2.0 * pwl(40.0)) / 80.0;
        assert!((r.objective - even).abs() < 1e-9);
        let even_split = Assignment {
            x: vec![vec![40.0, 40.0]],
            y: vec![true, true],
        };
        let even_rt = evaluate(&inst, &even_split).unwrap().unwrap().total();
        assert!((even_rt - 0.0767).abs() < 1e-4);
        let bound = 2.0 / 80.0 * sets[0].epsilon();
        let rt = r.exact_rt().unwrap();
        assert!(rt >= even_rt - 1e-9 && rt <= even_rt + bound, "{rt}");
        let p = solve_p(&inst.with_p(1).unwrap(), &MilpOptions::default()).unwrap();
        assert!((p.exact_rt().unwrap() - 0.110).abs() < 1e-12);
        assert!(p.exact_rt().unwrap() > rt);
    }

    #[test]
    fn forced_single_facility() {
        let inst = Instance::from_matrix(
            vec![vec![0.01, 0.02, 0.03]],
            vec![150.0],
            vec![10.0, 200.0, 10.0],
            1,
        )
        .unwrap();
        let r = solve_qp_lin(&inst, &standard_basepoints(&inst).unwrap(), &MilpOptions::default()).unwrap();
        assert_eq!(r.subset, vec![1]);
        assert!(r.iterations <= 2 * inst.num_facilities() + 1);
    }

    #[test]
    fn sos2_adjacent_is_unchanged() {
        let inst = p_example().with_p(2).unwrap();
        let model = build_qp_lin_model(&inst, &standard_basepoints(&inst).unwrap()).unwrap();
        let mut v = vec![0.0; model.vars.len()];
        let z = &model.layout.z[0];
        v[z[1]] = 0.3;
        v[z[2]] = 0.7;
        assert_eq!(sos2_check_repair(&model, &v).status, Sos2Status::Unchanged);
    }

    #[test]
    fn sos2_nonadjacent_on_convex_curve_is_repaired_and_rejected_by_lp() {
        let inst = Instance::from_matrix(vec![vec![0.01]], vec![1.0], vec![100.0], 1).unwrap();
        let sets = standard_basepoints(&inst).unwrap();
        let model = build_qp_lin_model(&inst, &sets).unwrap();
        let z = &model.layout.z[0];
        let mut v = vec![0.0; model.vars.len()];
        v[z[0]] = 0.5;
        v[z[2]] = 0.5;
        let check = sos2_check_repair(&model, &v);
        match check.status {
            Sos2Status::Repaired { objective_change } => assert!(objective_change < 0.0),
            other => panic!("expected repair, got {other:?}"),
        }
        let nz = support(&check.values, &model.sos2[0]);
        assert_eq!(nz, vec![0, 1]);

        // pin the load to 0.5(α₀+α₂): the LP picks the adjacent pair itself
        let load = 0.5 * (sets[0].alpha()[0] + sets[0].alpha()[2]);
        let mut pinned = inst.clone();
        pinned.arrival = vec![load];
        let model = build_qp_lin_model(&pinned, &sets).unwrap();
        let (lo, hi) = model.default_bounds();
        let s = solve_lp(&model, &lo, &hi).unwrap();
        assert!(is_adjacent(&support(&s.values, &model.sos2[0])));
    }

    #[test]
    fn sos2_three_nonzeros_repaired() {
        let inst = Instance::from_matrix(vec![vec![0.01]], vec![1.0], vec![100.0], 1).unwrap();
        let model = build_qp_lin_model(&inst, &standard_basepoints(&inst).unwrap()).unwrap();
        let z = &model.layout.z[0];
        let mut v = vec![0.0; model.vars.len()];
        v[z[1]] = 0.2;
        v[z[2]] = 0.3;
        v[z[3]] = 0.5;
        let check = sos2_check_repair(&model, &v);
        assert!(matches!(check.status, Sos2Status::Repaired { .. }));
        assert!(is_adjacent(&support(&check.values, &model.sos2[0])));
    }

    #[test]
    fn nonconvex_basepoints_use_sos2_branching() {
        // concave cost: the relaxation mixes the end points
        let set = BasepointSet::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 3.0, 3.2, 3.3], 0.0).unwrap();
        let inst = Instance::from_matrix(vec![vec![0.01]], vec![1.5], vec![4.0], 1).unwrap();
        let model = build_qp_lin_model(&inst, std::slice::from_ref(&set)).unwrap();
        let (lo, hi) = model.default_bounds();
        let root = solve_lp(&model, &lo, &hi).unwrap();
        assert!(matches!(
            sos2_check_repair(&model, &root.values).status,
            Sos2Status::NeedsBranching { group: 0 }
        ));
        let s = solve_milp(&model, &MilpOptions::default()).unwrap();
        assert!(s.sos2_branches >= 1);
        assert!((s.objective - (0.01 + 3.1 / 1.5)).abs() < 1e-9, "{}", s.objective);
        assert!(is_adjacent(&support(&s.values, &model.sos2[0])));
    }

    #[test]
    fn lp_format_lists_sections() {
        let inst = p_example().with_p(2).unwrap();
        let model = build_qp_lin_model(&inst, &standard_basepoints(&inst).unwrap()).unwrap();
        let text = model.to_lp_format();
        for section in ["Minimize", "Subject To", "Bounds", "Binaries", "SOS", "End"] {
            assert!(text.contains(section), "{section}");
        }
        assert!(text.contains(" budget: 1 y_0 + 1 y_1 = 2\n"), "{text}");
        assert!(text.contains("sos_0: S2:: z_0_0:1"));
    }
}
