//! Queue-aware assignment of geographically distributed demand to
//! capacitated compute facilities.
//!
//! The average response time of an assignment is the demand-weighted round
//! trip time plus the M/M/1 time in system of every open facility. Three
//! solvers produce assignments:
//!
//! * [`convex`]: exact, enumerates facility subsets and solves each convex
//!   subproblem with a barrier Newton method.
//! * [`milp`]: piecewise-linearizes the weighted time in system and solves
//!   the resulting mixed-integer program by branch and bound.
//! * [`milp::build_p_model`]: the classic queue-ignoring capacitated
//!   p-median baseline, solved by the same branch and bound.
//!
//! [`queueing::response_time`] scores all of them with the exact objective.

pub mod convex;
pub mod experiment;
pub mod instance;
pub mod lp;
pub mod milp;
pub mod pwl;
pub mod queueing;
pub mod report;
