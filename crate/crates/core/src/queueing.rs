//! M/M/1 time-in-system and the exact response-time evaluation that scores
//! every solver's output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::Instance;

/// Relative tolerance for `Σ_f x_cf = λ_c`.
pub const DEMAND_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("service rate {0} must be finite and > 0")]
    BadServiceRate(f64),
    #[error("arrival rate {lambda} violates steady state (needs 0 <= lambda < mu = {mu})")]
    SteadyState { lambda: f64, mu: f64 },
    #[error("facility {facility}: load {load} reaches service rate {mu}")]
    Overloaded { facility: usize, load: f64, mu: f64 },
    #[error("client {client}: assigned {assigned} req/s but demand is {demand} req/s")]
    DemandMismatch {
        client: usize,
        assigned: f64,
        demand: f64,
    },
    #[error("x[{client}][{facility}] = {value} is negative or not finite")]
    BadFlow {
        client: usize,
        facility: usize,
        value: f64,
    },
    #[error("x[{client}][{facility}] = {value} sent to closed facility")]
    ClosedFacility {
        client: usize,
        facility: usize,
        value: f64,
    },
    #[error("assignment shape does not match instance ({0})")]
    Shape(String),
    #[error("empty instance: total arrival rate is zero")]
    EmptyInstance,
}

/// Single-server queue with exponential service at rate `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mm1 {
    mu: f64,
}

impl Mm1 {
    pub fn new(mu: f64) -> Result<Self, QueueError> {
        if mu.is_finite() && mu > 0.0 {
            Ok(Self { mu })
        } else {
            Err(QueueError::BadServiceRate(mu))
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn check(&self, lambda: f64) -> Result<(), QueueError> {
        if lambda >= 0.0 && lambda < self.mu {
            Ok(())
        } else {
            Err(QueueError::SteadyState { lambda, mu: self.mu })
        }
    }

    /// Time in system `1/(μ−λ)` in seconds.
    pub fn tis(&self, lambda: f64) -> Result<f64, QueueError> {
        self.check(lambda)?;
        Ok(1.0 / (self.mu - lambda))
    }

    /// Load-weighted time in system `λ/(μ−λ)`.
    pub fn weighted_tis(&self, lambda: f64) -> Result<f64, QueueError> {
        self.check(lambda)?;
        Ok(lambda / (self.mu - lambda))
    }

    pub fn utilization(&self, lambda: f64) -> f64 {
        lambda / self.mu
    }
}

/// Demand split `x[c][f]` in requests/second and the open-facility vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<bool>,
}

impl Assignment {
    pub fn zeros(clients: usize, facilities: usize) -> Self {
        Self {
            x: vec![vec![0.0; facilities]; clients],
            y: vec![false; facilities],
        }
    }

    /// Per-facility load `Λ_f = Σ_c x_cf`.
    pub fn loads(&self) -> Vec<f64> {
        let nf = self.y.len();
        let mut loads = vec![0.0; nf];
        for row in &self.x {
            for (l, v) in loads.iter_mut().zip(row) {
                *l += v;
            }
        }
        loads
    }

    pub fn open_count(&self) -> usize {
        self.y.iter().filter(|&&o| o).count()
    }

    pub fn open_facilities(&self) -> Vec<usize> {
        self.y
            .iter()
            .enumerate()
            .filter_map(|(f, &o)| o.then_some(f))
            .collect()
    }

    /// JSON export with the exact response time attached for audit.
    pub fn to_json(&self, evaluated_rt_s: Option<f64>) -> String {
        let file = AssignmentFile {
            x_rps: self.x.clone(),
            y: self.y.iter().map(|&o| u8::from(o)).collect(),
            evaluated_rt_s,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("assignment serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: AssignmentFile = serde_json::from_str(text)?;
        Ok(Self {
            x: file.x_rps,
            y: file.y.into_iter().map(|v| v != 0).collect(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AssignmentFile {
    x_rps: Vec<Vec<f64>>,
    y: Vec<u8>,
    evaluated_rt_s: Option<f64>,
}

/// Exact average response time and its two additive parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseTime {
    /// `Σ x_cf l_cf / Λ`.
    pub rtt: f64,
    /// `Σ_f Λ_f/(μ_f−Λ_f) / Λ`.
    pub tis: f64,
}

impl ResponseTime {
    pub fn total(&self) -> f64 {
        self.rtt + self.tis
    }
}

/// Scores an assignment with the exact queue-aware objective.
pub fn response_time(instance: &Instance, assignment: &Assignment) -> Result<ResponseTime, QueueError> {
    let nc = instance.num_clients();
    let nf = instance.num_facilities();
    if assignment.x.len() != nc || assignment.y.len() != nf || assignment.x.iter().any(|r| r.len() != nf) {
        return Err(QueueError::Shape(format!(
            "expected {nc}x{nf} flows and {nf} open flags"
        )));
    }
    let total = instance.total_arrival();
    if total <= 0.0 {
        return Err(QueueError::EmptyInstance);
    }
    let mut rtt_sum = 0.0;
    for (c, row) in assignment.x.iter().enumerate() {
        let mut assigned = 0.0;
        for (f, &v) in row.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(QueueError::BadFlow { client: c, facility: f, value: v });
            }
            if v > 0.0 && !assignment.y[f] {
                return Err(QueueError::ClosedFacility { client: c, facility: f, value: v });
            }
            assigned += v;
            rtt_sum += v * instance.rtt[c][f];
        }
        let demand = instance.arrival[c];
        if (assigned - demand).abs() > DEMAND_TOLERANCE * demand {
            return Err(QueueError::DemandMismatch { client: c, assigned, demand });
        }
    }
    let mut tis_sum = 0.0;
    for (f, load) in assignment.loads().into_iter().enumerate() {
        let queue = Mm1::new(instance.service[f])?;
        tis_sum += queue.weighted_tis(load).map_err(|_| QueueError::Overloaded {
            facility: f,
            load,
            mu: instance.service[f],
        })?;
    }
    Ok(ResponseTime {
        rtt: rtt_sum / total,
        tis: tis_sum / total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_client(lambda: f64, rtts: Vec<f64>) -> Instance {
        let nf = rtts.len();
        Instance::from_matrix(vec![rtts], vec![lambda], vec![100.0; nf], nf).unwrap()
    }

    #[test]
    fn tis_values() {
        let q = Mm1::new(100.0).unwrap();
        assert_eq!(q.tis(0.0).unwrap(), 0.01);
        assert_eq!(q.tis(50.0).unwrap(), 0.02);
        assert!(matches!(q.tis(100.0), Err(QueueError::SteadyState { .. })));
        assert!(q.tis(-1.0).is_err());
        assert!(Mm1::new(0.0).is_err());
    }

    #[test]
    fn weighted_tis_values() {
        assert_eq!(Mm1::new(7.0).unwrap().weighted_tis(0.0).unwrap(), 0.0);
        assert_eq!(Mm1::new(1.0).unwrap().weighted_tis(0.5).unwrap(), 1.0);
        assert_eq!(Mm1::new(100.0).unwrap().weighted_tis(96.0).unwrap(), 24.0);
    }

    #[test]
    fn even_split_toy() {
        let inst = one_client(40.0, vec![0.060, 0.070]);
        let a = Assignment { x: vec![vec![20.0, 20.0]], y: vec![true, true] };
        let rt = response_time(&inst, &a).unwrap();
        assert!((rt.total() - 0.0775).abs() < 1e-12);
    }

    #[test]
    fn all_on_one_toy() {
        let inst = one_client(80.0, vec![0.060, 0.060]);
        let a = Assignment { x: vec![vec![80.0, 0.0]], y: vec![true, false] };
        let rt = response_time(&inst, &a).unwrap();
        assert!((rt.total() - 0.110).abs() < 1e-12);
    }

    #[test]
    fn evaluation_errors() {
        let inst = one_client(80.0, vec![0.060, 0.060]);
        let short = Assignment { x: vec![vec![70.0, 0.0]], y: vec![true, false] };
        assert!(matches!(response_time(&inst, &short), Err(QueueError::DemandMismatch { client: 0, .. })));
        let closed = Assignment { x: vec![vec![40.0, 40.0]], y: vec![true, false] };
        assert!(matches!(response_time(&inst, &closed), Err(QueueError::ClosedFacility { facility: 1, .. })));
        let inst = one_client(100.0, vec![0.060, 0.060]);
        let sat = Assignment { x: vec![vec![100.0, 0.0]], y: vec![true, true] };
        assert!(matches!(response_time(&inst, &sat), Err(QueueError::Overloaded { facility: 0, .. })));
        let empty = Instance::from_matrix(vec![vec![0.01]], vec![0.0], vec![10.0], 1).unwrap();
        let a = Assignment { x: vec![vec![0.0]], y: vec![true] };
        assert_eq!(response_time(&empty, &a), Err(QueueError::EmptyInstance));
    }

    #[test]
    fn assignment_json_roundtrip() {
        let a = Assignment { x: vec![vec![20.0, 20.0]], y: vec![true, false] };
        let text = a.to_json(Some(0.0775));
        assert!(text.contains("evaluated_rt_s"));
        assert_eq!(Assignment::from_json(&text).unwrap(), a);
    }
}
