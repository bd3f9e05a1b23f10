//! Problem instances: topologies, their client/facility projection, demand
//! generation and the on-disk instance format.
//!
//! All latencies are held in seconds. The instance file stores them in
//! milliseconds; the conversion shifts the decimal point of the shortest
//! round-trip representation instead of multiplying, so a written instance
//! reads back bit-for-bit.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use petgraph::algo::{connected_components, dijkstra};
use petgraph::graph::{NodeIndex, UnGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Number;
use thiserror::Error;

/// Mean Earth radius used by the haversine distance.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Default conversion from great-circle distance to one-way latency.
pub const DEFAULT_SPEED_FACTOR_S_PER_KM: f64 = 1e-5;

/// Default round-trip time between a client and a facility on the same node.
pub const DEFAULT_LOCAL_LOOP_S: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("topology: {0}")]
    Topology(String),
    #[error("topology is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("facility count {requested} out of range 1..={available}")]
    FacilityCount { requested: usize, available: usize },
    #[error("p exceeds candidate facilities (p = {p}, |F| = {facilities})")]
    BudgetTooLarge { p: usize, facilities: usize },
    #[error("p must be at least 1")]
    BudgetZero,
    #[error("client {client}: arrival rate {value} is negative or not finite")]
    NegativeArrival { client: usize, value: f64 },
    #[error("facility {facility}: service rate {value} must be finite and > 0")]
    BadService { facility: usize, value: f64 },
    #[error("rtt[{client}][{facility}] = {value} s must be finite and > 0")]
    BadRtt { client: usize, facility: usize, value: f64 },
    #[error("{field}: expected {expected} entries, found {found}")]
    Shape { field: String, expected: usize, found: usize },
    #[error("{field}: unknown node id {id}")]
    UnknownId { field: String, id: usize },
    #[error("{field}: duplicate node id {id}")]
    DuplicateId { field: String, id: usize },
    #[error("invalid demand spec: {0}")]
    Demand(String),
    #[error("malformed number in {field}: {text}")]
    Number { field: String, text: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Geographic position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub coord: Option<Coord>,
    pub degree: usize,
}

/// Undirected link with its one-way latency in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub latency_s: f64,
}

/// A validated network topology. Degrees are derived from the edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub name: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl Topology {
    /// Builds a topology from node coordinates and an edge list. Node ids
    /// are the positions in `coords`.
    pub fn new(
        name: impl Into<String>,
        coords: Vec<Option<Coord>>,
        edges: Vec<Edge>,
    ) -> Result<Self, InstanceError> {
        let n = coords.len();
        if n == 0 {
            return Err(InstanceError::Topology("no nodes".into()));
        }
        let mut degree = vec![0usize; n];
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.a >= n || e.b >= n {
                return Err(InstanceError::Topology(format!(
                    "edge ({}, {}) references a missing node",
                    e.a, e.b
                )));
            }
            if e.a == e.b {
                return Err(InstanceError::Topology(format!("self-loop at node {}", e.a)));
            }
            if !(e.latency_s.is_finite() && e.latency_s >= 0.0) {
                return Err(InstanceError::Topology(format!(
                    "edge ({}, {}) has invalid latency {}",
                    e.a, e.b, e.latency_s
                )));
            }
            let key = (e.a.min(e.b), e.a.max(e.b));
            if !seen.insert(key) {
                return Err(InstanceError::Topology(format!(
                    "parallel edge ({}, {})",
                    key.0, key.1
                )));
            }
            degree[e.a] += 1;
            degree[e.b] += 1;
        }
        let nodes = coords
            .into_iter()
            .enumerate()
            .map(|(id, coord)| Node {
                id,
                coord,
                degree: degree[id],
            })
            .collect();
        let topo = Self {
            name: name.into(),
            nodes,
            edges,
        };
        let components = connected_components(&topo.graph());
        if components != 1 {
            return Err(InstanceError::Disconnected { components });
        }
        Ok(topo)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn graph(&self) -> UnGraph<(), f64> {
        let mut g = UnGraph::with_capacity(self.nodes.len(), self.edges.len());
        for _ in &self.nodes {
            g.add_node(());
        }
        for e in &self.edges {
            g.add_edge(NodeIndex::new(e.a), NodeIndex::new(e.b), e.latency_s);
        }
        g
    }

    /// One-way shortest-path latency from `source` to every node.
    pub fn shortest_latencies(&self, source: usize) -> Vec<f64> {
        let dist = dijkstra(&self.graph(), NodeIndex::new(source), None, |e| *e.weight());
        (0..self.nodes.len())
            .map(|i| dist.get(&NodeIndex::new(i)).copied().unwrap_or(f64::INFINITY))
            .collect()
    }

    /// The `count` nodes of highest degree, smaller id first on ties,
    /// returned in ascending id order.
    pub fn best_connected(&self, count: usize) -> Vec<usize> {
        let mut order: Vec<&Node> = self.nodes.iter().collect();
        order.sort_by(|a, b| b.degree.cmp(&a.degree).then(a.id.cmp(&b.id)));
        let mut picked: Vec<usize> = order.iter().take(count).map(|n| n.id).collect();
        picked.sort_unstable();
        picked
    }

    /// Reads a topology file. Edges without `latency_ms` get their latency
    /// from the endpoint coordinates.
    pub fn read(path: impl AsRef<Path>, speed_factor: f64) -> Result<Self, InstanceError> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let file: TopologyFile = serde_json::from_str(&text).map_err(|source| InstanceError::Json {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_file_repr(file, speed_factor)
    }

    fn from_file_repr(file: TopologyFile, speed_factor: f64) -> Result<Self, InstanceError> {
        let mut coords = vec![None; file.nodes.len()];
        let mut ids = BTreeSet::new();
        for n in &file.nodes {
            if n.id >= file.nodes.len() || !ids.insert(n.id) {
                return Err(InstanceError::Topology(format!(
                    "node ids must be unique and contiguous from 0 (got {})",
                    n.id
                )));
            }
            coords[n.id] = match (n.lat, n.lon) {
                (Some(lat), Some(lon)) => Some(Coord { lat, lon }),
                (None, None) => None,
                _ => {
                    return Err(InstanceError::Topology(format!(
                        "node {} has only one of lat/lon",
                        n.id
                    )))
                }
            };
        }
        let mut edges = Vec::with_capacity(file.edges.len());
        for e in &file.edges {
            let latency_s = match &e.latency_ms {
                Some(ms) => ms_to_seconds(ms, "edges.latency_ms")?,
                None => {
                    let (a, b) = match (coords.get(e.a).copied().flatten(), coords.get(e.b).copied().flatten()) {
                        (Some(a), Some(b)) => (a, b),
                        _ => {
                            return Err(InstanceError::Topology(format!(
                                "edge ({}, {}) has no latency and its endpoints lack coordinates",
                                e.a, e.b
                            )))
                        }
                    };
                    latency_from_coords(a, b, speed_factor)
                }
            };
            edges.push(Edge {
                a: e.a,
                b: e.b,
                latency_s,
            });
        }
        Self::new(file.name.unwrap_or_default(), coords, edges)
    }
}

/// Great-circle latency between two coordinates.
pub fn latency_from_coords(a: Coord, b: Coord, speed_factor: f64) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    let central = 2.0 * h.sqrt().min(1.0).asin();
    EARTH_RADIUS_KM * central * speed_factor
}

/// Client/facility projection of a topology without demand or capacities.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSkeleton {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub clients: Vec<usize>,
    pub facilities: Vec<usize>,
    /// Round-trip times in seconds, `rtt[c][f]`.
    pub rtt: Vec<Vec<f64>>,
}

impl InstanceSkeleton {
    pub fn with_demand(
        self,
        arrival: Vec<f64>,
        service: Vec<f64>,
        p: usize,
    ) -> Result<Instance, InstanceError> {
        Instance::new(
            self.nodes,
            self.edges,
            self.clients,
            self.facilities,
            self.rtt,
            arrival,
            service,
            p,
        )
    }
}

/// Selects the `facility_count` best connected nodes as facilities and
/// makes every node a client.
pub fn build_bipartite(
    topology: &Topology,
    facility_count: usize,
    local_loop_s: f64,
) -> Result<InstanceSkeleton, InstanceError> {
    let n = topology.len();
    if facility_count == 0 || facility_count > n {
        return Err(InstanceError::FacilityCount {
            requested: facility_count,
            available: n,
        });
    }
    if !(local_loop_s.is_finite() && local_loop_s > 0.0) {
        return Err(InstanceError::Topology(format!(
            "local loop latency must be > 0, got {local_loop_s}"
        )));
    }
    let facilities = topology.best_connected(facility_count);
    let clients: Vec<usize> = (0..n).collect();
    let columns: Vec<Vec<f64>> = facilities
        .iter()
        .map(|&f| topology.shortest_latencies(f))
        .collect();
    let rtt = clients
        .iter()
        .map(|&c| {
            facilities
                .iter()
                .zip(&columns)
                .map(|(&f, col)| if c == f { local_loop_s } else { 2.0 * col[c] })
                .collect()
        })
        .collect();
    Ok(InstanceSkeleton {
        nodes: topology.nodes().to_vec(),
        edges: topology.edges().to_vec(),
        clients,
        facilities,
        rtt,
    })
}

/// A fully specified assignment problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub clients: Vec<usize>,
    pub facilities: Vec<usize>,
    /// Round-trip times in seconds, `rtt[c][f]`.
    pub rtt: Vec<Vec<f64>>,
    /// Arrival rate per client in requests/second.
    pub arrival: Vec<f64>,
    /// Service rate per facility in requests/second.
    pub service: Vec<f64>,
    pub p: usize,
}

impl Instance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        clients: Vec<usize>,
        facilities: Vec<usize>,
        rtt: Vec<Vec<f64>>,
        arrival: Vec<f64>,
        service: Vec<f64>,
        p: usize,
    ) -> Result<Self, InstanceError> {
        let inst = Self {
            nodes,
            edges,
            clients,
            facilities,
            rtt,
            arrival,
            service,
            p,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Instance without topology metadata; client and facility ids are
    /// `0..n` in their own namespaces.
    pub fn from_matrix(
        rtt: Vec<Vec<f64>>,
        arrival: Vec<f64>,
        service: Vec<f64>,
        p: usize,
    ) -> Result<Self, InstanceError> {
        let clients = (0..arrival.len()).collect();
        let facilities = (0..service.len()).collect();
        Self::new(Vec::new(), Vec::new(), clients, facilities, rtt, arrival, service, p)
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let nc = self.clients.len();
        let nf = self.facilities.len();
        check_len("rtt_ms", nc, self.rtt.len())?;
        for row in &self.rtt {
            check_len("rtt_ms row", nf, row.len())?;
        }
        check_len("arrival_rps", nc, self.arrival.len())?;
        check_len("service_rps", nf, self.service.len())?;
        check_ids("clients", &self.clients, &self.nodes)?;
        check_ids("facilities", &self.facilities, &self.nodes)?;
        if self.p == 0 {
            return Err(InstanceError::BudgetZero);
        }
        if self.p > nf {
            return Err(InstanceError::BudgetTooLarge {
                p: self.p,
                facilities: nf,
            });
        }
        for (c, &v) in self.arrival.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(InstanceError::NegativeArrival { client: c, value: v });
            }
        }
        for (f, &v) in self.service.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(InstanceError::BadService { facility: f, value: v });
            }
        }
        for (c, row) in self.rtt.iter().enumerate() {
            for (f, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v > 0.0) {
                    return Err(InstanceError::BadRtt {
                        client: c,
                        facility: f,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn num_facilities(&self) -> usize {
        self.facilities.len()
    }

    /// Total arrival rate Λ.
    pub fn total_arrival(&self) -> f64 {
        self.arrival.iter().sum()
    }

    /// Sum of the `p` largest usable capacities `fraction · μ_f`.
    pub fn max_usable_capacity(&self, fraction: f64) -> f64 {
        let mut caps: Vec<f64> = self.service.iter().map(|m| m * fraction).collect();
        caps.sort_by(|a, b| b.total_cmp(a));
        caps.iter().take(self.p).sum()
    }

    /// Whether the total demand fits into the best `p` facilities when each
    /// may be loaded up to `fraction · μ_f`.
    pub fn fits_capacity(&self, fraction: f64) -> bool {
        self.total_arrival() <= self.max_usable_capacity(fraction)
    }

    pub fn with_p(&self, p: usize) -> Result<Self, InstanceError> {
        let mut inst = self.clone();
        inst.p = p;
        inst.validate()?;
        Ok(inst)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, InstanceError> {
        let path = path.as_ref();
        let text = read_text(path)?;
        Self::from_json(&text).map_err(|e| match e {
            InstanceError::Json { source, .. } => InstanceError::Json {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), InstanceError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| InstanceError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|source| InstanceError::Json {
            path: "<instance>".into(),
            source,
        })?;
        let nodes = file
            .nodes
            .iter()
            .map(|n| Node {
                id: n.id,
                coord: match (n.lat, n.lon) {
                    (Some(lat), Some(lon)) => Some(Coord { lat, lon }),
                    _ => None,
                },
                degree: n.degree.unwrap_or(0),
            })
            .collect();
        let edges = file
            .edges
            .iter()
            .map(|e| {
                Ok(Edge {
                    a: e.a,
                    b: e.b,
                    latency_s: match &e.latency_ms {
                        Some(ms) => ms_to_seconds(ms, "edges.latency_ms")?,
                        None => 0.0,
                    },
                })
            })
            .collect::<Result<Vec<_>, InstanceError>>()?;
        let rtt = file
            .rtt_ms
            .iter()
            .map(|row| row.iter().map(|v| ms_to_seconds(v, "rtt_ms")).collect())
            .collect::<Result<Vec<Vec<f64>>, _>>()?;
        Self::new(
            nodes,
            edges,
            file.clients,
            file.facilities,
            rtt,
            file.arrival_rps,
            file.service_rps,
            file.p,
        )
    }

    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    lat: n.coord.map(|c| c.lat),
                    lon: n.coord.map(|c| c.lon),
                    degree: Some(n.degree),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    a: e.a,
                    b: e.b,
                    latency_ms: Some(seconds_to_ms(e.latency_s)),
                })
                .collect(),
            clients: self.clients.clone(),
            facilities: self.facilities.clone(),
            rtt_ms: self
                .rtt
                .iter()
                .map(|row| row.iter().map(|&v| seconds_to_ms(v)).collect())
                .collect(),
            arrival_rps: self.arrival.clone(),
            service_rps: self.service.clone(),
            p: self.p,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("instance serializes");
        text.push('\n');
        text
    }
}

fn check_len(field: &str, expected: usize, found: usize) -> Result<(), InstanceError> {
    if expected != found {
        return Err(InstanceError::Shape {
            field: field.into(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_ids(field: &str, ids: &[usize], nodes: &[Node]) -> Result<(), InstanceError> {
    let mut seen = BTreeSet::new();
    for &id in ids {
        if !seen.insert(id) {
            return Err(InstanceError::DuplicateId {
                field: field.into(),
                id,
            });
        }
        if !nodes.is_empty() && !nodes.iter().any(|n| n.id == id) {
            return Err(InstanceError::UnknownId {
                field: field.into(),
                id,
            });
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String, InstanceError> {
    fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Milliseconds representation of `seconds`, written by moving the decimal
/// point of its shortest round-trip digits.
pub fn seconds_to_ms(seconds: f64) -> Number {
    let text = shift_decimal(seconds, 3);
    text.parse().expect("shifted decimal is a valid JSON number")
}

/// Inverse of [`seconds_to_ms`]; exact for anything it produced.
pub fn ms_to_seconds(ms: &Number, field: &str) -> Result<f64, InstanceError> {
    let text = ms.to_string();
    let bad = || InstanceError::Number {
        field: field.into(),
        text: text.clone(),
    };
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i64>().map_err(|_| bad())?),
        None => (text.as_str(), 0),
    };
    let value: f64 = format!("{mantissa}e{}", exp - 3).parse().map_err(|_| bad())?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(bad())
    }
}

fn shift_decimal(value: f64, places: i32) -> String {
    let sci = format!("{value:e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    if digits.chars().all(|c| c == '0') {
        return "0".into();
    }
    let point = 1 + exp + places;
    let len = digits.len() as i32;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point >= len {
        format!("{}{}", digits, "0".repeat((point - len) as usize))
    } else {
        format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
    };
    format!("{sign}{body}")
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    #[serde(default)]
    name: Option<String>,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degree: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    a: usize,
    b: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latency_ms: Option<Number>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    clients: Vec<usize>,
    facilities: Vec<usize>,
    rtt_ms: Vec<Vec<Number>>,
    arrival_rps: Vec<f64>,
    service_rps: Vec<f64>,
    p: usize,
}

/// Random law used to draw per-client arrival rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandKind {
    /// `U[0,1]` draws normalized to a total Λ.
    UniformNormalized,
    /// `N(λ̂, λ̂/20)`, capped at zero.
    NormalNarrow,
    /// `N(λ̂, λ̂)`, capped at zero.
    NormalWide,
    /// Exponential with mean λ̂.
    Exponential,
}

impl DemandKind {
    pub fn label(self) -> &'static str {
        match self {
            DemandKind::UniformNormalized => "uniform-normalized",
            DemandKind::NormalNarrow => "normal-narrow",
            DemandKind::NormalWide => "normal-wide",
            DemandKind::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for DemandKind {
    type Err = InstanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform-normalized" | "uniform" => Ok(DemandKind::UniformNormalized),
            "normal-narrow" => Ok(DemandKind::NormalNarrow),
            "normal-wide" => Ok(DemandKind::NormalWide),
            "exponential" | "exp" => Ok(DemandKind::Exponential),
            other => Err(InstanceError::Demand(format!("unknown distribution {other:?}"))),
        }
    }
}

/// Demand law plus its target: the total Λ for
/// [`DemandKind::UniformNormalized`], the per-client mean λ̂ otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandSpec {
    pub kind: DemandKind,
    pub target: f64,
    pub seed: u64,
}

/// Draws one arrival rate per client. Deterministic in `spec.seed`.
pub fn generate_demand(num_clients: usize, spec: &DemandSpec) -> Result<Vec<f64>, InstanceError> {
    if !(spec.target.is_finite() && spec.target > 0.0) {
        return Err(InstanceError::Demand(format!(
            "target must be > 0, got {}",
            spec.target
        )));
    }
    if num_clients == 0 {
        return Err(InstanceError::Demand("no clients".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let target = spec.target;
    let draws = match spec.kind {
        DemandKind::UniformNormalized => {
            let mut stream = 0u64;
            loop {
                let u: Vec<f64> = (0..num_clients).map(|_| rng.random::<f64>()).collect();
                if u.iter().sum::<f64>() > 0.0 {
                    break normalize(&u, target);
                }
                stream += 1;
                rng.set_stream(stream);
            }
        }
        DemandKind::NormalNarrow => {
            let law = Normal::new(target, target / 20.0).map_err(|e| InstanceError::Demand(e.to_string()))?;
            (0..num_clients).map(|_| cap_at_zero(law.sample(&mut rng))).collect()
        }
        DemandKind::NormalWide => {
            let law = Normal::new(target, target).map_err(|e| InstanceError::Demand(e.to_string()))?;
            (0..num_clients).map(|_| cap_at_zero(law.sample(&mut rng))).collect()
        }
        DemandKind::Exponential => {
            let law = Exp::new(1.0 / target).map_err(|e| InstanceError::Demand(e.to_string()))?;
            (0..num_clients).map(|_| law.sample(&mut rng)).collect()
        }
    };
    Ok(draws)
}

/// Scales non-negative draws so they sum to `total`.
pub fn normalize(draws: &[f64], total: f64) -> Vec<f64> {
    let sum: f64 = draws.iter().sum();
    draws.iter().map(|u| u * total / sum).collect()
}

pub fn cap_at_zero(x: f64) -> f64 {
    x.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Topology {
        Topology::new(
            "path",
            vec![None; 3],
            vec![
                Edge { a: 0, b: 1, latency_s: 0.010 },
                Edge { a: 1, b: 2, latency_s: 0.010 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn path_graph_picks_middle_node() {
        let sk = build_bipartite(&path3(), 1, DEFAULT_LOCAL_LOOP_S).unwrap();
        assert_eq!(sk.facilities, vec![1]);
        assert_eq!(sk.clients, vec![0, 1, 2]);
        assert_eq!(sk.rtt[0][0], 0.020);
        assert_eq!(sk.rtt[1][0], DEFAULT_LOCAL_LOOP_S);
    }

    #[test]
    fn star_tie_break_by_id() {
        let edges = (1..=4)
            .map(|leaf| Edge { a: 0, b: leaf, latency_s: 0.005 })
            .collect();
        let topo = Topology::new("star", vec![None; 5], edges).unwrap();
        let sk = build_bipartite(&topo, 2, DEFAULT_LOCAL_LOOP_S).unwrap();
        assert_eq!(sk.facilities, vec![0, 1]);
    }

    #[test]
    fn triangle_uses_shortest_path() {
        let topo = Topology::new(
            "tri",
            vec![None; 3],
            vec![
                Edge { a: 0, b: 1, latency_s: 0.005 },
                Edge { a: 1, b: 2, latency_s: 0.005 },
                Edge { a: 0, b: 2, latency_s: 0.020 },
            ],
        )
        .unwrap();
        let sk = build_bipartite(&topo, 3, DEFAULT_LOCAL_LOOP_S).unwrap();
        assert!((sk.rtt[0][2] - 0.020).abs() < 1e-15);
    }

    #[test]
    fn disconnected_and_bad_counts_rejected() {
        let err = Topology::new("two", vec![None; 2], vec![]).unwrap_err();
        assert!(matches!(err, InstanceError::Disconnected { components: 2 }));
        assert!(matches!(
            build_bipartite(&path3(), 0, DEFAULT_LOCAL_LOOP_S),
            Err(InstanceError::FacilityCount { .. })
        ));
        assert!(matches!(
            build_bipartite(&path3(), 4, DEFAULT_LOCAL_LOOP_S),
            Err(InstanceError::FacilityCount { .. })
        ));
        let self_loop = Topology::new("l", vec![None; 1], vec![Edge { a: 0, b: 0, latency_s: 0.0 }]);
        assert!(self_loop.is_err());
    }

    #[test]
    fn haversine_cases() {
        let a = Coord { lat: 10.0, lon: 20.0 };
        assert_eq!(latency_from_coords(a, a, 1e-5), 0.0);
        let q = latency_from_coords(Coord { lat: 0.0, lon: 0.0 }, Coord { lat: 0.0, lon: 90.0 }, 1e-5);
        assert!((q - 0.100_075).abs() < 1e-5, "{q}");
        let p1 = Coord { lat: 30.0, lon: -40.0 };
        let p2 = Coord { lat: -30.0, lon: 140.0 };
        let d = latency_from_coords(p1, p2, 1.0);
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6);
        assert!((d - 20015.0).abs() < 1.0);
        assert_eq!(d, latency_from_coords(p2, p1, 1.0));
    }

    #[test]
    fn normalization_arithmetic() {
        let l = normalize(&[0.2, 0.3, 0.5], 470.0);
        for (got, want) in l.iter().zip([94.0, 141.0, 235.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(cap_at_zero(-3.0), 0.0);
    }

    #[test]
    fn demand_is_deterministic_and_nonnegative() {
        for kind in [
            DemandKind::UniformNormalized,
            DemandKind::NormalNarrow,
            DemandKind::NormalWide,
            DemandKind::Exponential,
        ] {
            let spec = DemandSpec { kind, target: 100.0, seed: 7 };
            let a = generate_demand(40, &spec).unwrap();
            let b = generate_demand(40, &spec).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|&v| v >= 0.0));
        }
        let spec = DemandSpec { kind: DemandKind::UniformNormalized, target: 470.0, seed: 3 };
        let sum: f64 = generate_demand(25, &spec).unwrap().iter().sum();
        assert!((sum - 470.0).abs() <= 1e-9 * 470.0);
        assert!(generate_demand(3, &DemandSpec { target: 0.0, ..spec }).is_err());
    }

    #[test]
    fn ms_shift_examples() {
        assert_eq!(seconds_to_ms(0.02).to_string(), "20");
        assert_eq!(seconds_to_ms(0.0123456).to_string(), "12.3456");
        assert_eq!(seconds_to_ms(1e-9).to_string(), "0.000001");
        assert_eq!(seconds_to_ms(0.0).to_string(), "0");
        let n: Number = "1.5e-2".parse().unwrap();
        assert_eq!(ms_to_seconds(&n, "x").unwrap(), 1.5e-5);
    }

    fn toy_instance() -> Instance {
        Instance::from_matrix(
            vec![vec![0.060, 0.070], vec![0.080, 0.050]],
            vec![50.0, 50.0],
            vec![100.0, 100.0],
            1,
        )
        .unwrap()
    }

    #[test]
    fn invalid_files_name_the_record() {
        let mut text = toy_instance().to_json();
        text = text.replacen("50.0", "-1.0", 1);
        let err = Instance::from_json(&text).unwrap_err();
        assert!(matches!(err, InstanceError::NegativeArrival { client: 0, .. }), "{err}");

        let mut inst = toy_instance();
        inst.p = 3;
        let err = Instance::from_json(&inst.to_json()).unwrap_err();
        assert!(err.to_string().contains("p exceeds candidate facilities"));
    }

    #[test]
    fn capacity_flags() {
        let inst = toy_instance();
        assert_eq!(inst.max_usable_capacity(0.96), 96.0);
        assert!(inst.fits_capacity(1.0));
        assert!(!inst.fits_capacity(0.96));
    }
}
