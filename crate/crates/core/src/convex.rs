//! Exact queue-aware solver.
//!
//! With the open-facility subset fixed the problem is convex: a linear
//! round-trip term plus `Λ_f/(μ_f−Λ_f)` per facility, subject to per-client
//! demand equalities, non-negative flows and the strict capacities
//! `Λ_f ≤ μ_f − τ_f`. Each subset is solved by a primal log-barrier method
//! whose Newton steps keep the demand equalities satisfied. The Hessian of
//! the objective is constant inside each facility block, so the barrier
//! Hessian is diagonal plus rank `p` and every Newton system reduces to a
//! `p × p` solve.
//!
//! [`solve_qp_exact`] enumerates all subsets of size `p`.

use std::time::Instant;

use itertools::Itertools;
use rayon::prelude::*;

use crate::instance::Instance;
use crate::queueing::Assignment;
use crate::report::{evaluate, SolveError, SolveReport, SolverKind};

/// Default capacity margin as a fraction of each service rate.
pub const DEFAULT_TAU_FRACTION: f64 = 1e-6;
/// Default bound on the barrier duality measure (seconds).
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

const ARMIJO: f64 = 1e-4;
const BARRIER_FACTOR: f64 = 10.0;
const MAX_NEWTON: usize = 5_000;
const MAX_BACKTRACK: usize = 60;
/// Objectives closer than this are ties resolved by subset order.
const TIE: f64 = 1e-9;

/// The convex subproblem for one open-facility subset.
#[derive(Debug, Clone)]
pub struct PqpProblem<'a> {
    instance: &'a Instance,
    subset: Vec<usize>,
    mu: Vec<f64>,
    cap: Vec<f64>,
    total: f64,
}

impl<'a> PqpProblem<'a> {
    /// `subset` holds facility indices; `tau_fraction` sets the margin
    /// `τ_f = tau_fraction · μ_f`.
    pub fn new(instance: &'a Instance, subset: Vec<usize>, tau_fraction: f64) -> Result<Self, SolveError> {
        if !(tau_fraction > 0.0 && tau_fraction < 1.0) {
            return Err(SolveError::Model(format!("tau fraction {tau_fraction} must be in (0, 1)")));
        }
        if subset.is_empty() || subset.iter().any(|&f| f >= instance.num_facilities()) || !subset.iter().all_unique() {
            return Err(SolveError::Model(format!("invalid facility subset {subset:?}")));
        }
        let mu: Vec<f64> = subset.iter().map(|&f| instance.service[f]).collect();
        let cap = mu.iter().map(|m| m - tau_fraction * m).collect();
        let total = instance.total_arrival();
        if total <= 0.0 {
            return Err(SolveError::Domain("empty instance: total arrival rate is zero".into()));
        }
        Ok(Self {
            instance,
            subset,
            mu,
            cap,
            total,
        })
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    fn width(&self) -> usize {
        self.subset.len()
    }

    /// Total capacity `Σ (μ_f − τ_f)` of the subset.
    pub fn capacity(&self) -> f64 {
        self.cap.iter().sum()
    }

    fn check_shape(&self, x: &[f64]) -> Result<(), SolveError> {
        let want = self.instance.num_clients() * self.width();
        if x.len() != want {
            return Err(SolveError::Domain(format!("expected {want} flows, got {}", x.len())));
        }
        Ok(())
    }

    fn loads(&self, x: &[f64]) -> Vec<f64> {
        let p = self.width();
        let mut loads = vec![0.0; p];
        for row in x.chunks(p) {
            for (l, v) in loads.iter_mut().zip(row) {
                *l += v;
            }
        }
        loads
    }

    fn checked_loads(&self, x: &[f64]) -> Result<Vec<f64>, SolveError> {
        self.check_shape(x)?;
        let loads = self.loads(x);
        for (k, (&l, &cap)) in loads.iter().zip(&self.cap).enumerate() {
            if !(l < cap) {
                return Err(SolveError::Domain(format!(
                    "facility {} load {l} not below mu - tau = {cap}",
                    self.subset[k]
                )));
            }
        }
        Ok(loads)
    }

    /// `(Σ x_cf l_cf + Σ_f Λ_f/(μ_f−Λ_f)) / Λ` over the subset; `x` is
    /// row-major `clients × subset`.
    pub fn objective(&self, x: &[f64]) -> Result<f64, SolveError> {
        let loads = self.checked_loads(x)?;
        Ok(self.objective_with(x, &loads))
    }

    fn objective_with(&self, x: &[f64], loads: &[f64]) -> f64 {
        let p = self.width();
        let mut rtt = 0.0;
        for (c, row) in x.chunks(p).enumerate() {
            for (k, v) in row.iter().enumerate() {
                rtt += v * self.instance.rtt[c][self.subset[k]];
            }
        }
        let tis: f64 = loads.iter().zip(&self.mu).map(|(l, m)| l / (m - l)).sum();
        (rtt + tis) / self.total
    }

    /// `∂/∂x_cf = l_cf/Λ + μ_f/(Λ (μ_f−Λ_f)²)`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, SolveError> {
        let loads = self.checked_loads(x)?;
        Ok(self.gradient_with(&loads))
    }

    fn gradient_with(&self, loads: &[f64]) -> Vec<f64> {
        let p = self.width();
        let queue: Vec<f64> = loads
            .iter()
            .zip(&self.mu)
            .map(|(l, m)| m / (self.total * (m - l) * (m - l)))
            .collect();
        let mut g = Vec::with_capacity(self.instance.num_clients() * p);
        for row in &self.instance.rtt {
            for (k, &f) in self.subset.iter().enumerate() {
                g.push(row[f] / self.total + queue[k]);
            }
        }
        g
    }

    /// Second derivatives; see [`BlockHessian`].
    pub fn hessian(&self, x: &[f64]) -> Result<BlockHessian, SolveError> {
        let loads = self.checked_loads(x)?;
        Ok(BlockHessian {
            clients: self.instance.num_clients(),
            curvature: self.curvature(&loads),
        })
    }

    fn curvature(&self, loads: &[f64]) -> Vec<f64> {
        loads
            .iter()
            .zip(&self.mu)
            .map(|(l, m)| {
                let slack = m - l;
                2.0 * m / (self.total * slack * slack * slack)
            })
            .collect()
    }
}

/// Hessian of the subproblem objective. The entry for `(c, f) × (d, e)` is
/// `2μ_f/(Λ(μ_f−Λ_f)³)` when `f = e` and zero otherwise, independent of
/// the clients.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockHessian {
    clients: usize,
    curvature: Vec<f64>,
}

impl BlockHessian {
    pub fn dim(&self) -> usize {
        self.clients * self.curvature.len()
    }

    pub fn facility_curvature(&self) -> &[f64] {
        &self.curvature
    }

    /// Entry at row-major flow indices `i = c·p + f`, `j = d·p + e`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let p = self.curvature.len();
        if i % p == j % p {
            self.curvature[i % p]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.entry(i, j)).collect()).collect()
    }

    /// `vᵀ H v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let p = self.curvature.len();
        let mut per = vec![0.0; p];
        for row in v.chunks(p) {
            for (s, x) in per.iter_mut().zip(row) {
                *s += x;
            }
        }
        per.iter().zip(&self.curvature).map(|(s, h)| h * s * s).sum()
    }
}

/// Barrier state for the clients with positive demand.
struct Barrier<'p, 'a> {
    problem: &'p PqpProblem<'a>,
    /// Row-major `active clients × subset`.
    x: Vec<f64>,
    active: Vec<usize>,
    t: f64,
}

impl Barrier<'_, '_> {
    fn p(&self) -> usize {
        self.problem.width()
    }

    fn loads(&self) -> Vec<f64> {
        self.problem.loads(&self.x)
    }

    fn inequality_count(&self) -> usize {
        self.x.len() + self.p()
    }

    /// Gradient of `t·F − Σ ln(cap−Λ) − Σ ln x` and of `F` alone.
    fn gradients(&self, loads: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pr = self.problem;
        let p = self.p();
        let queue: Vec<f64> = loads
            .iter()
            .zip(&pr.mu)
            .map(|(l, m)| m / (pr.total * (m - l) * (m - l)))
            .collect();
        let slack_inv: Vec<f64> = loads.iter().zip(&pr.cap).map(|(l, c)| 1.0 / (c - l)).collect();
        let mut g = Vec::with_capacity(self.x.len());
        let mut f = Vec::with_capacity(self.x.len());
        for (i, &c) in self.active.iter().enumerate() {
            for k in 0..p {
                let df = pr.instance.rtt[c][pr.subset[k]] / pr.total + queue[k];
                f.push(df);
                g.push(self.t * df + slack_inv[k] - 1.0 / self.x[i * p + k]);
            }
        }
        (g, f)
    }

    /// Newton direction on the demand-preserving subspace.
    fn newton(&self, loads: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SolveError> {
        let pr = self.problem;
        let p = self.p();
        let n_active = self.active.len();
        let curv = pr.curvature(loads);
        let s: Vec<f64> = (0..p)
            .map(|k| {
                let slack = pr.cap[k] - loads[k];
                self.t * curv[k] + 1.0 / (slack * slack)
            })
            .collect();
        let w: Vec<f64> = self.x.iter().map(|v| v * v).collect();

        // per-client weighted means
        let mut big_w = vec![0.0; n_active];
        let mut g_bar = vec![0.0; n_active];
        for i in 0..n_active {
            let (wr, gr) = (&w[i * p..(i + 1) * p], &g[i * p..(i + 1) * p]);
            big_w[i] = wr.iter().sum();
            g_bar[i] = wr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / big_w[i];
        }

        // (I + L S) u = r with L = diag(Ω) − P, symmetrized through S^{1/2}
        let mut lap = vec![vec![0.0; p]; p];
        let mut r = vec![0.0; p];
        for i in 0..n_active {
            let wr = &w[i * p..(i + 1) * p];
            for k in 0..p {
                r[k] -= wr[k] * (g[i * p + k] - g_bar[i]);
                lap[k][k] += wr[k];
                for j in 0..p {
                    lap[k][j] -= wr[k] * wr[j] / big_w[i];
                }
            }
        }
        let root: Vec<f64> = s.iter().map(|v| v.sqrt()).collect();
        let mut system = vec![vec![0.0; p]; p];
        let mut rhs = vec![0.0; p];
        for k in 0..p {
            for j in 0..p {
                system[k][j] = root[k] * lap[k][j] * root[j] + if k == j { 1.0 } else { 0.0 };
            }
            rhs[k] = root[k] * r[k];
        }
        let v = solve_dense(system, rhs).ok_or_else(|| SolveError::Numerical("singular Newton system".into()))?;
        let u: Vec<f64> = v.iter().zip(&root).map(|(a, b)| a / b).collect();

        let su: Vec<f64> = s.iter().zip(&u).map(|(a, b)| a * b).collect();
        let mut d = vec![0.0; self.x.len()];
        for i in 0..n_active {
            let wr = &w[i * p..(i + 1) * p];
            let mean_su = wr.iter().zip(&su).map(|(a, b)| a * b).sum::<f64>() / big_w[i];
            for k in 0..p {
                d[i * p + k] = -wr[k] * (g[i * p + k] - g_bar[i] + su[k] - mean_su);
            }
            // remove rounding drift so the row keeps its demand
            let drift = d[i * p..(i + 1) * p].iter().sum::<f64>();
            for k in 0..p {
                d[i * p + k] -= drift * wr[k] / big_w[i];
            }
        }
        let du = self.problem.loads(&d);
        Ok((d, du))
    }

    /// `φ(x + a·d) − φ(x)` computed term-wise to avoid cancellation.
    fn change(&self, loads: &[f64], d: &[f64], du: &[f64], a: f64) -> f64 {
        let pr = self.problem;
        let p = self.p();
        let mut linear = 0.0;
        for (i, &c) in self.active.iter().enumerate() {
            for k in 0..p {
                linear += pr.instance.rtt[c][pr.subset[k]] * d[i * p + k];
            }
        }
        let mut queue = 0.0;
        let mut barrier = 0.0;
        for k in 0..p {
            let (m, l, step) = (pr.mu[k], loads[k], a * du[k]);
            queue += m * step / ((m - l - step) * (m - l));
            barrier -= (-step / (pr.cap[k] - l)).ln_1p();
        }
        for (xi, di) in self.x.iter().zip(d) {
            barrier -= (a * di / xi).ln_1p();
        }
        self.t * (a * linear + queue) / pr.total + barrier
    }

    fn max_step(&self, loads: &[f64], d: &[f64], du: &[f64]) -> f64 {
        let mut limit = f64::INFINITY;
        for (xi, di) in self.x.iter().zip(d) {
            if *di < 0.0 {
                limit = limit.min(-xi / di);
            }
        }
        for k in 0..self.p() {
            if du[k] > 0.0 {
                limit = limit.min((self.problem.cap[k] - loads[k]) / du[k]);
            }
        }
        limit
    }

    /// Damped Newton centering at the current `t`. Returns the number of
    /// steps taken.
    fn center(&mut self, budget: usize) -> Result<usize, SolveError> {
        for step in 0..budget {
            let loads = self.loads();
            let (g, _) = self.gradients(&loads);
            let (d, du) = self.newton(&loads, &g)?;
            let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            if !slope.is_finite() {
                return Err(SolveError::Numerical("non-finite Newton decrement".into()));
            }
            if -slope / 2.0 <= 1e-12 {
                return Ok(step);
            }
            let mut a = (0.99 * self.max_step(&loads, &d, &du)).min(1.0);
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACK {
                let delta = self.change(&loads, &d, &du, a);
                if delta.is_finite() && delta <= ARMIJO * a * slope {
                    accepted = true;
                    break;
                }
                a *= 0.5;
            }
            if !accepted {
                // no further decrease representable at this t
                return Ok(step);
            }
            for (xi, di) in self.x.iter_mut().zip(&d) {
                *xi += a * di;
            }
        }
        Err(SolveError::NoConvergence {
            iterations: budget,
            residual: f64::NAN,
            best: None,
        })
    }

    fn kkt_residual(&self) -> f64 {
        let loads = self.loads();
        let (_, df) = self.gradients(&loads);
        let p = self.p();
        let sigma: Vec<f64> = loads
            .iter()
            .zip(&self.problem.cap)
            .map(|(l, c)| 1.0 / (self.t * (c - l)))
            .collect();
        let mut worst = 0.0f64;
        for i in 0..self.active.len() {
            let r: Vec<f64> = (0..p)
                .map(|k| df[i * p + k] + sigma[k] - 1.0 / (self.t * self.x[i * p + k]))
                .collect();
            let nu = r.iter().sum::<f64>() / p as f64;
            for v in r {
                worst = worst.max((v - nu).abs());
            }
        }
        worst.max(self.inequality_count() as f64 / self.t)
    }
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Solves the subproblem for one subset to duality measure `tolerance`.
pub fn solve_pqp(problem: &PqpProblem, tolerance: f64) -> Result<SolveReport, SolveError> {
    let started = Instant::now();
    let inst = problem.instance;
    let p = problem.width();
    let capacity = problem.capacity();
    if !(problem.total < capacity) {
        return Err(SolveError::Infeasible {
            reason: format!("subset {:?} cannot strictly hold the demand", problem.subset),
            demand: problem.total,
            capacity,
        });
    }
    if !(tolerance > 0.0) {
        return Err(SolveError::Model(format!("tolerance {tolerance} must be > 0")));
    }
    let active: Vec<usize> = (0..inst.num_clients()).filter(|&c| inst.arrival[c] > 0.0).collect();
    let mut x = Vec::with_capacity(active.len() * p);
    for &c in &active {
        for k in 0..p {
            x.push(inst.arrival[c] * problem.cap[k] / capacity);
        }
    }
    let mut barrier = Barrier {
        problem,
        x,
        active,
        t: 1.0,
    };
    let loads = barrier.loads();
    let start_objective = barrier.problem.objective_with_active(&barrier.x, &barrier.active, &loads);
    let m = barrier.inequality_count() as f64;
    barrier.t = m / start_objective.max(1e-12);

    let mut steps = 0usize;
    loop {
        let budget = MAX_NEWTON.saturating_sub(steps);
        match barrier.center(budget) {
            Ok(n) => steps += n,
            Err(SolveError::NoConvergence { .. }) => {
                let report = finish(&barrier, steps, started)?;
                return Err(SolveError::NoConvergence {
                    iterations: steps + budget,
                    residual: report.kkt_residual,
                    best: Some(Box::new(report)),
                });
            }
            Err(e) => return Err(e),
        }
        if m / barrier.t <= tolerance {
            break;
        }
        barrier.t *= BARRIER_FACTOR;
    }
    finish(&barrier, steps, started)
}

impl PqpProblem<'_> {
    fn objective_with_active(&self, x: &[f64], active: &[usize], loads: &[f64]) -> f64 {
        let p = self.width();
        let mut rtt = 0.0;
        for (i, &c) in active.iter().enumerate() {
            for k in 0..p {
                rtt += x[i * p + k] * self.instance.rtt[c][self.subset[k]];
            }
        }
        let tis: f64 = loads.iter().zip(&self.mu).map(|(l, m)| l / (m - l)).sum();
        (rtt + tis) / self.total
    }
}

fn finish(barrier: &Barrier, steps: usize, started: Instant) -> Result<SolveReport, SolveError> {
    let pr = barrier.problem;
    let inst = pr.instance;
    let p = pr.width();
    let mut assignment = Assignment::zeros(inst.num_clients(), inst.num_facilities());
    for &f in &pr.subset {
        assignment.y[f] = true;
    }
    for (i, &c) in barrier.active.iter().enumerate() {
        let row = &barrier.x[i * p..(i + 1) * p];
        let sum: f64 = row.iter().sum();
        let scale = inst.arrival[c] / sum;
        for (k, v) in row.iter().enumerate() {
            assignment.x[c][pr.subset[k]] = v * scale;
        }
    }
    let exact = evaluate(inst, &assignment)?;
    let objective = exact
        .map(|r| r.total())
        .ok_or_else(|| SolveError::Numerical("barrier iterate reached a capacity".into()))?;
    let mut subset = pr.subset.clone();
    subset.sort_unstable();
    Ok(SolveReport {
        solver: SolverKind::QpExact,
        assignment,
        objective,
        exact,
        kkt_residual: barrier.kkt_residual(),
        iterations: steps,
        wall_time: started.elapsed(),
        subset,
    })
}

/// Options for [`solve_qp_exact`].
#[derive(Debug, Clone, Copy)]
pub struct ExactOptions {
    pub tau_fraction: f64,
    pub tolerance: f64,
    /// Worker threads for the subset enumeration; `0` uses the global pool,
    /// `1` runs on the calling thread.
    pub threads: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            tau_fraction: DEFAULT_TAU_FRACTION,
            tolerance: DEFAULT_TOLERANCE,
            threads: 0,
        }
    }
}

/// Solves the queue-aware problem exactly by enumerating every subset of
/// `instance.p` facilities.
pub fn solve_qp_exact(instance: &Instance, options: &ExactOptions) -> Result<SolveReport, SolveError> {
    let started = Instant::now();
    let subsets: Vec<Vec<usize>> = (0..instance.num_facilities()).combinations(instance.p).collect();
    let solve_one = |subset: &Vec<usize>| {
        let problem = PqpProblem::new(instance, subset.clone(), options.tau_fraction)?;
        solve_pqp(&problem, options.tolerance)
    };
    let run = || -> Vec<Result<SolveReport, SolveError>> { subsets.par_iter().map(solve_one).collect() };
    let results = if options.threads == 1 {
        subsets.iter().map(solve_one).collect()
    } else if options.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(|e| SolveError::Numerical(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };

    let mut best: Option<SolveReport> = None;
    let mut steps = 0;
    for result in results {
        match result {
            Ok(report) => {
                steps += report.iterations;
                let better = match &best {
                    None => true,
                    Some(b) => report.objective < b.objective - TIE,
                };
                if better {
                    best = Some(report);
                }
            }
            Err(SolveError::Infeasible { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let mut best = best.ok_or_else(|| SolveError::Infeasible {
        reason: format!("no subset of {} facilities can strictly hold the demand", instance.p),
        demand: instance.total_arrival(),
        capacity: instance.max_usable_capacity(1.0 - options.tau_fraction),
    })?;
    best.iterations = steps;
    best.wall_time = started.elapsed();
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(lambda: f64, rtts: Vec<f64>, p: usize) -> Instance {
        let nf = rtts.len();
        Instance::from_matrix(vec![rtts], vec![lambda], vec![100.0; nf], p).unwrap()
    }

    #[test]
    fn objective_examples() {
        let inst = single(10.0, vec![0.060], 1);
        let pr = PqpProblem::new(&inst, vec![0], DEFAULT_TAU_FRACTION).unwrap();
        let v = pr.objective(&[10.0]).unwrap();
        assert!((v - (0.060 + 1.0 / 90.0)).abs() < 1e-12);

        let inst = single(40.0, vec![0.060, 0.070], 2);
        let pr = PqpProblem::new(&inst, vec![0, 1], DEFAULT_TAU_FRACTION).unwrap();
        assert!((pr.objective(&[20.0, 20.0]).unwrap() - 0.0775).abs() < 1e-12);
        assert!(pr.objective(&[100.0, 0.0]).is_err());

        let empty = single(0.0, vec![0.060], 1);
        assert!(PqpProblem::new(&empty, vec![0], DEFAULT_TAU_FRACTION).is_err());
    }

    #[test]
    fn gradient_and_hessian_examples() {
        let inst = single(10.0, vec![0.060], 1);
        let pr = PqpProblem::new(&inst, vec![0], DEFAULT_TAU_FRACTION).unwrap();
        let g = pr.gradient(&[10.0]).unwrap();
        let expected = 0.06 / 10.0 + (1.0 / 90.0 + 10.0 / 8100.0) / 10.0;
        assert!((g[0] - expected).abs() < 1e-15);
        let h5 = 1e-5;
        let fd = (pr.objective(&[10.0 + h5]).unwrap() - pr.objective(&[10.0 - h5]).unwrap()) / (2.0 * h5);
        assert!((g[0] - fd).abs() < 1e-7);
        assert!((g[0] - 0.0072346).abs() < 1e-7);
        let h = pr.hessian(&[10.0]).unwrap();
        let expected_h = (2.0 / 8100.0 + 20.0 / 729_000.0) / 10.0;
        assert!((h.entry(0, 0) - expected_h).abs() < 1e-18);
        assert!((h.entry(0, 0) - 2.74348e-5).abs() < 1e-9);

        let inst = single(40.0, vec![0.06, 0.06], 2);
        let pr = PqpProblem::new(&inst, vec![0, 1], DEFAULT_TAU_FRACTION).unwrap();
        let g0 = pr.gradient(&[0.0, 0.0]).unwrap();
        assert!((g0[0] - (0.06 / 40.0 + 1.0 / (40.0 * 100.0))).abs() < 1e-15);
        let g = pr.gradient(&[20.0, 20.0]).unwrap();
        assert_eq!(g[0], g[1]);
        let h = pr.hessian(&[20.0, 20.0]).unwrap();
        assert_eq!(h.entry(0, 1), 0.0);
        assert_eq!(h.entry(1, 0), 0.0);
    }

    #[test]
    fn symmetric_split() {
        let inst = single(80.0, vec![0.060, 0.060], 2);
        let pr = PqpProblem::new(&inst, vec![0, 1], DEFAULT_TAU_FRACTION).unwrap();
        let r = solve_pqp(&pr, DEFAULT_TOLERANCE).unwrap();
        assert!((r.assignment.x[0][0] - 40.0).abs() < 1e-6, "{:?}", r.assignment.x);
        assert!(r.kkt_residual <= DEFAULT_TOLERANCE);
    }

    #[test]
    fn infeasible_subset() {
        let inst = single(150.0, vec![0.060, 0.070], 1);
        let pr = PqpProblem::new(&inst, vec![0], DEFAULT_TAU_FRACTION).unwrap();
        assert!(matches!(solve_pqp(&pr, DEFAULT_TOLERANCE), Err(SolveError::Infeasible { .. })));
        assert!(matches!(
            solve_qp_exact(&inst, &ExactOptions::default()),
            Err(SolveError::Infeasible { .. })
        ));
    }

    #[test]
    fn exact_picks_dominant_subset() {
        let inst = single(30.0, vec![0.060, 0.070], 1);
        let r = solve_qp_exact(&inst, &ExactOptions::default()).unwrap();
        assert_eq!(r.subset, vec![0]);
        let inst = single(30.0, vec![0.060, 0.070, 0.065], 3);
        let full = solve_qp_exact(&inst, &ExactOptions::default()).unwrap();
        let pr = PqpProblem::new(&inst, vec![0, 1, 2], DEFAULT_TAU_FRACTION).unwrap();
        let direct = solve_pqp(&pr, DEFAULT_TOLERANCE).unwrap();
        assert!((full.objective - direct.objective).abs() < 1e-12);
    }
}
