//! Dense bounded-variable simplex.
//!
//! Two-phase primal simplex on a full tableau. Variables carry lower and
//! upper bounds; nonbasic variables sit on a bound (or at zero when free).
//! Rows and columns are equilibrated before solving and the tableau is
//! rebuilt from the scaled data every [`REFACTOR_INTERVAL`] pivots.
//! Dantzig pricing is used until a run of degenerate pivots, after which
//! Bland's rule takes over until progress resumes.

use thiserror::Error;

/// Optimality and primal feasibility tolerance in scaled units.
const TOL: f64 = 1e-9;
/// Smallest tableau entry accepted as a pivot.
const PIVOT_TOL: f64 = 1e-9;
/// Relative bound on the final constraint residual.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
pub const REFACTOR_INTERVAL: usize = 64;
/// Consecutive degenerate pivots before switching to Bland's rule.
pub const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

/// `min cᵀx` subject to linear rows and `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, kind, rhs });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation over rows and bounds, each relative to
    /// `max(1, |rhs|, Σ|a_j x_j|)` (bounds: `max(1, |bound|)`).
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.rows {
            let mut lhs = 0.0;
            let mut mag = 0.0;
            for &(j, a) in &row.coeffs {
                lhs += a * x[j];
                mag += (a * x[j]).abs();
            }
            let gap = lhs - row.rhs;
            let viol = match row.kind {
                RowKind::Le => gap.max(0.0),
                RowKind::Ge => (-gap).max(0.0),
                RowKind::Eq => gap.abs(),
            };
            worst = worst.max(viol / 1f64.max(row.rhs.abs()).max(mag));
        }
        for (j, &v) in x.iter().enumerate() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            worst = worst.max((lo - v).max(0.0) / 1f64.max(lo.abs()));
            worst = worst.max((v - hi).max(0.0) / 1f64.max(hi.abs()));
        }
        worst
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Invalid("bound vectors do not match the objective".into()));
        }
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(LpError::Invalid(format!("objective coefficient {j} is not finite")));
        }
        for (j, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(LpError::Invalid(format!("variable {j} has bounds [{lo}, {hi}]")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::Invalid(format!("row {i} has rhs {}", row.rhs)));
            }
            for &(j, a) in &row.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(LpError::Invalid(format!("row {i} has entry ({j}, {a})")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values; meaningful only when optimal.
    pub values: Vec<f64>,
    pub objective: f64,
    /// Row duals `y` with `c − Aᵀy` the reduced costs.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    /// Relative primal residual of `values` (see [`LpProblem::residual`]).
    pub residual: f64,
}

impl LpSolution {
    fn empty(status: LpStatus, n: usize, m: usize, iterations: usize) -> Self {
        Self {
            status,
            values: vec![0.0; n],
            objective: match status {
                LpStatus::Unbounded => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            },
            duals: vec![0.0; m],
            reduced_costs: vec![0.0; n],
            iterations,
            residual: f64::NAN,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("invalid LP: {0}")]
    Invalid(String),
    #[error("simplex hit the iteration limit {0}")]
    IterationLimit(usize),
    #[error("numerical failure: {reason} (residual {residual:e}, pivot ratio {pivot_ratio:e})")]
    Numerical {
        reason: String,
        residual: f64,
        /// Largest over smallest pivot magnitude in the last refactorization.
        pivot_ratio: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Basic,
    Lower,
    Upper,
    Zero,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

struct Tableau {
    m: usize,
    n: usize,
    /// Scaled constraint matrix with slack and artificial columns.
    a: Vec<f64>,
    b: Vec<f64>,
    /// Current `B⁻¹A`, row-major.
    t: Vec<f64>,
    xb: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<State>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    since_refactor: usize,
    degenerate: usize,
    pivot_ratio: f64,
}

impl Tableau {
    fn value(&self, j: usize) -> f64 {
        match self.state[j] {
            State::Lower => self.lo[j],
            State::Upper => self.hi[j],
            State::Zero => 0.0,
            State::Basic => {
                let r = self.basis.iter().position(|&k| k == j).expect("basic column in basis");
                self.xb[r]
            }
        }
    }

    /// Rebuilds `B⁻¹A`, basic values and reduced costs from scratch.
    fn refactor(&mut self) -> Result<(), LpError> {
        let (m, n) = (self.m, self.n);
        let mut t = self.a.clone();
        let mut rhs = self.b.clone();
        let mut order = vec![usize::MAX; m];
        let mut used = vec![false; m];
        let (mut big, mut small) = (0.0f64, f64::INFINITY);
        for &col in &self.basis {
            let mut best: Option<(usize, f64)> = None;
            for (i, &u) in used.iter().enumerate() {
                if !u {
                    let v = t[i * n + col].abs();
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((i, v));
                    }
                }
            }
            let (r, mag) = best.expect("square basis");
            if mag < 1e-12 {
                return Err(LpError::Numerical {
                    reason: "singular basis during refactorization".into(),
                    residual: f64::NAN,
                    pivot_ratio: f64::INFINITY,
                });
            }
            big = big.max(mag);
            small = small.min(mag);
            used[r] = true;
            order[r] = col;
            pivot_rows(&mut t, Some(&mut rhs), m, n, r, col);
        }
        self.pivot_ratio = big / small;
        self.t = t;
        self.basis = order;
        self.xb = rhs;
        for j in 0..n {
            if self.state[j] != State::Basic {
                let v = self.value(j);
                if v != 0.0 {
                    for i in 0..m {
                        self.xb[i] -= self.t[i * n + j] * v;
                    }
                }
            }
        }
        self.reprice();
        self.since_refactor = 0;
        Ok(())
    }

    fn reprice(&mut self) {
        let (m, n) = (self.m, self.n);
        self.d = self.cost.clone();
        for i in 0..m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * n..(i + 1) * n];
                for (dj, tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
    }

    fn entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n {
            let dj = self.d[j];
            let dir = match self.state[j] {
                State::Basic => continue,
                _ if self.lo[j] == self.hi[j] => continue,
                State::Lower if dj < -TOL => 1.0,
                State::Upper if dj > TOL => -1.0,
                State::Zero if dj.abs() > TOL => -dj.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if best.is_none_or(|(_, _, score)| dj.abs() > score) {
                best = Some((j, dir, dj.abs()));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Harris two-pass ratio test. Returns the step length and the leaving
    /// row, or `None` for the row when the entering variable flips bounds.
    fn ratio(&self, j: usize, dir: f64, bland: bool) -> Option<(f64, Option<usize>)> {
        let (m, n) = (self.m, self.n);
        let bound = |i: usize, relax: f64| -> Option<f64> {
            let alpha = dir * self.t[i * n + j];
            let k = self.basis[i];
            if alpha > PIVOT_TOL {
                let lo = self.lo[k];
                lo.is_finite().then(|| (self.xb[i] - lo + relax) / alpha)
            } else if alpha < -PIVOT_TOL {
                let hi = self.hi[k];
                hi.is_finite().then(|| (hi - self.xb[i] + relax) / -alpha)
            } else {
                None
            }
        };
        let flip = self.hi[j] - self.lo[j];
        let relax = if bland { 0.0 } else { TOL };
        let mut limit = f64::INFINITY;
        for i in 0..m {
            if let Some(r) = bound(i, relax) {
                limit = limit.min(r);
            }
        }
        if flip <= limit {
            return flip.is_finite().then_some((flip, None));
        }
        if limit == f64::INFINITY {
            return None;
        }
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..m {
            if let Some(r) = bound(i, 0.0) {
                if r <= limit {
                    let better = match pick {
                        None => true,
                        Some((p, pa)) => {
                            if bland {
                                r < bound(p, 0.0).unwrap_or(f64::INFINITY)
                                    || (r == bound(p, 0.0).unwrap_or(f64::INFINITY) && self.basis[i] < self.basis[p])
                            } else {
                                self.t[i * n + j].abs() > pa
                            }
                        }
                    };
                    if better {
                        pick = Some((i, self.t[i * n + j].abs()));
                    }
                }
            }
        }
        let r = pick.expect("a blocking row attains the limit").0;
        Some((bound(r, 0.0).unwrap_or(0.0).max(0.0), Some(r)))
    }

    fn step(&mut self) -> Result<Step, LpError> {
        let bland = self.degenerate >= DEGENERATE_RUN;
        let Some((j, dir)) = self.entering(bland) else {
            return Ok(Step::Optimal);
        };
        let Some((theta, leave)) = self.ratio(j, dir, bland) else {
            return Ok(Step::Unbounded);
        };
        let (m, n) = (self.m, self.n);
        self.iterations += 1;
        if self.iterations > self.max_iterations {
            return Err(LpError::IterationLimit(self.max_iterations));
        }
        if theta <= TOL {
            self.degenerate += 1;
        } else {
            self.degenerate = 0;
        }
        let entering_value = self.value(j) + dir * theta;
        for i in 0..m {
            self.xb[i] -= dir * theta * self.t[i * n + j];
        }
        match leave {
            None => {
                self.state[j] = if dir > 0.0 { State::Upper } else { State::Lower };
            }
            Some(r) => {
                let k = self.basis[r];
                let alpha = dir * self.t[r * n + j];
                self.state[k] = if alpha > 0.0 { State::Lower } else { State::Upper };
                if self.lo[k] == f64::NEG_INFINITY && alpha > 0.0 || self.hi[k] == f64::INFINITY && alpha < 0.0 {
                    self.state[k] = State::Zero;
                }
                self.state[j] = State::Basic;
                self.basis[r] = j;
                pivot_rows(&mut self.t, None, m, n, r, j);
                self.xb[r] = entering_value;
                let dj = self.d[j];
                let row = &self.t[r * n..(r + 1) * n];
                for (dk, tk) in self.d.iter_mut().zip(row) {
                    *dk -= dj * tk;
                }
                self.since_refactor += 1;
                if self.since_refactor >= REFACTOR_INTERVAL {
                    self.refactor()?;
                }
            }
        }
        Ok(Step::Moved)
    }

    fn run(&mut self) -> Result<Step, LpError> {
        loop {
            match self.step()? {
                Step::Moved => {}
                done => return Ok(done),
            }
        }
    }

    fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.value(j)).sum()
    }
}

/// Gauss-Jordan pivot on `(r, col)` applied to the tableau and a rhs column.
fn pivot_rows(t: &mut [f64], mut rhs: Option<&mut [f64]>, m: usize, n: usize, r: usize, col: usize) {
    debug_assert_eq!(t.len(), m * n);
    let piv = t[r * n + col];
    for v in &mut t[r * n..(r + 1) * n] {
        *v /= piv;
    }
    let rr = match rhs.as_deref_mut() {
        Some(rhs) => {
            rhs[r] /= piv;
            rhs[r]
        }
        None => 0.0,
    };
    let (head, rest) = t.split_at_mut(r * n);
    let (prow, tail) = rest.split_at_mut(n);
    for (i, row) in head.chunks_mut(n).chain(tail.chunks_mut(n)).enumerate() {
        let i = if i < r { i } else { i + 1 };
        let f = row[col];
        if f != 0.0 {
            for (v, p) in row.iter_mut().zip(prow.iter()) {
                *v -= f * p;
            }
            row[col] = 0.0;
            if let Some(rhs) = rhs.as_deref_mut() {
                rhs[i] -= f * rr;
            }
        }
    }
}

struct Scaling {
    rows: Vec<f64>,
    cols: Vec<f64>,
    objective: f64,
}

fn equilibrate(problem: &LpProblem) -> Scaling {
    let m = problem.num_rows();
    let n = problem.num_vars();
    let rows: Vec<f64> = problem
        .rows
        .iter()
        .map(|row| {
            let big = row.coeffs.iter().fold(0.0f64, |acc, &(_, a)| acc.max(a.abs()));
            if big > 0.0 {
                1.0 / big
            } else {
                1.0
            }
        })
        .collect();
    let mut col_max = vec![0.0f64; n];
    for (i, row) in problem.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            col_max[j] = col_max[j].max((a * rows[i]).abs());
        }
    }
    let cols: Vec<f64> = col_max.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 1.0 }).collect();
    let big_c = (0..n).fold(0.0f64, |acc, j| acc.max((problem.objective[j] * cols[j]).abs()));
    let objective = if big_c > 0.0 { 1.0 / big_c } else { 1.0 };
    debug_assert_eq!(rows.len(), m);
    Scaling { rows, cols, objective }
}

/// Solves `problem` to optimality, or reports it infeasible or unbounded.
pub fn solve(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let ns = problem.num_vars();
    let m = problem.num_rows();
    if (0..ns).any(|j| problem.lower[j] > problem.upper[j]) {
        return Ok(LpSolution::empty(LpStatus::Infeasible, ns, m, 0));
    }
    let sc = equilibrate(problem);

    // scaled structural bounds and initial nonbasic values
    let mut lo: Vec<f64> = (0..ns).map(|j| problem.lower[j] / sc.cols[j]).collect();
    let mut hi: Vec<f64> = (0..ns).map(|j| problem.upper[j] / sc.cols[j]).collect();
    let mut state: Vec<State> = (0..ns)
        .map(|j| {
            if lo[j].is_finite() {
                State::Lower
            } else if hi[j].is_finite() {
                State::Upper
            } else {
                State::Zero
            }
        })
        .collect();
    let start = |j: usize, st: State, lo: &[f64], hi: &[f64]| match st {
        State::Lower => lo[j],
        State::Upper => hi[j],
        _ => 0.0,
    };

    let mut scaled_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    let mut residual = Vec::with_capacity(m);
    for (i, row) in problem.rows.iter().enumerate() {
        let entries: Vec<(usize, f64)> = row
            .coeffs
            .iter()
            .map(|&(j, a)| (j, a * sc.rows[i] * sc.cols[j]))
            .collect();
        let rhs = row.rhs * sc.rows[i];
        let used: f64 = entries.iter().map(|&(j, a)| a * start(j, state[j], &lo, &hi)).sum();
        residual.push(rhs - used);
        b.push(rhs);
        scaled_rows.push(entries);
    }

    // slack columns for inequality rows, artificials where the slack
    // cannot start basic
    let mut extra: Vec<(usize, f64, f64, f64, bool)> = Vec::new(); // (row, coef, lo, hi, artificial)
    let mut slack_of = vec![None; m];
    let mut art_of = vec![None; m];
    let mut initial_basis = vec![usize::MAX; m];
    for (i, row) in problem.rows.iter().enumerate() {
        let r = residual[i];
        match row.kind {
            RowKind::Le | RowKind::Ge => {
                let (slo, shi) = if row.kind == RowKind::Le {
                    (0.0, f64::INFINITY)
                } else {
                    (f64::NEG_INFINITY, 0.0)
                };
                slack_of[i] = Some(ns + extra.len());
                extra.push((i, 1.0, slo, shi, false));
                if r >= slo && r <= shi {
                    initial_basis[i] = ns + extra.len() - 1;
                } else {
                    art_of[i] = Some(ns + extra.len());
                    initial_basis[i] = ns + extra.len();
                    extra.push((i, if r > 0.0 { 1.0 } else { -1.0 }, 0.0, f64::INFINITY, true));
                }
            }
            RowKind::Eq => {
                art_of[i] = Some(ns + extra.len());
                initial_basis[i] = ns + extra.len();
                extra.push((i, if r >= 0.0 { 1.0 } else { -1.0 }, 0.0, f64::INFINITY, true));
            }
        }
    }
    let n = ns + extra.len();
    let mut a = vec![0.0; m * n];
    for (i, entries) in scaled_rows.iter().enumerate() {
        for &(j, v) in entries {
            a[i * n + j] += v;
        }
    }
    let mut phase1_cost = vec![0.0; n];
    for (k, &(i, coef, slo, shi, art)) in extra.iter().enumerate() {
        a[i * n + ns + k] = coef;
        lo.push(slo);
        hi.push(shi);
        state.push(if slo.is_finite() { State::Lower } else { State::Upper });
        if art {
            phase1_cost[ns + k] = 1.0;
        }
    }
    for &col in &initial_basis {
        state[col] = State::Basic;
    }
    let mut phase2_cost = vec![0.0; n];
    for j in 0..ns {
        phase2_cost[j] = problem.objective[j] * sc.cols[j] * sc.objective;
    }

    let has_artificial = art_of.iter().any(Option::is_some);
    let mut tab = Tableau {
        m,
        n,
        a,
        b,
        t: Vec::new(),
        xb: Vec::new(),
        basis: initial_basis,
        state,
        lo,
        hi,
        cost: if has_artificial { phase1_cost } else { phase2_cost.clone() },
        d: Vec::new(),
        iterations: 0,
        max_iterations: 200 * (m + n) + 1000,
        since_refactor: 0,
        degenerate: 0,
        pivot_ratio: 1.0,
    };
    tab.refactor()?;

    if has_artificial {
        tab.run()?;
        tab.refactor()?;
        let infeasibility = tab.objective();
        let scale = tab.b.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        if infeasibility > 1e3 * TOL * scale {
            return Ok(LpSolution::empty(LpStatus::Infeasible, ns, m, tab.iterations));
        }
        for (k, &(_, _, _, _, art)) in extra.iter().enumerate() {
            if art {
                let j = ns + k;
                tab.hi[j] = 0.0;
                if tab.state[j] != State::Basic {
                    tab.state[j] = State::Lower;
                }
            }
        }
        tab.refactor()?;
        tab.cost = phase2_cost;
        tab.reprice();
        tab.degenerate = 0;
    }

    if let Step::Unbounded = tab.run()? {
        return Ok(LpSolution::empty(LpStatus::Unbounded, ns, m, tab.iterations));
    }
    tab.refactor()?;

    let mut values = vec![0.0; ns];
    for (j, v) in values.iter_mut().enumerate() {
        let scaled = tab.value(j).clamp(tab.lo[j], tab.hi[j]);
        *v = scaled * sc.cols[j];
    }
    for j in 0..ns {
        if values[j] < problem.lower[j] {
            values[j] = problem.lower[j];
        }
        if values[j] > problem.upper[j] {
            values[j] = problem.upper[j];
        }
    }
    let res = problem.residual(&values);
    if !(res <= RESIDUAL_TOLERANCE) {
        return Err(LpError::Numerical {
            reason: "primal residual above tolerance at the optimal basis".into(),
            residual: res,
            pivot_ratio: tab.pivot_ratio,
        });
    }
    let mut duals = vec![0.0; m];
    for i in 0..m {
        let scaled = match (slack_of[i], art_of[i]) {
            (Some(s), _) => -tab.d[s],
            (None, Some(a)) => -tab.d[a] / tab.a[i * n + a],
            (None, None) => 0.0,
        };
        duals[i] = scaled * sc.rows[i] / sc.objective;
    }
    let reduced_costs = (0..ns).map(|j| tab.d[j] / (sc.objective * sc.cols[j])).collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: problem.objective_value(&values),
        values,
        duals,
        reduced_costs,
        iterations: tab.iterations,
        residual: res,
    })
}
