//! Shared domain types: node identifiers, feeder topology, the measurement
//! dataset and its validation.
//!
//! Voltages are kept in volts and timestamps in local civil time. A missing
//! cell is `None`; statistics skip such cells rather than propagating them.

use std::fmt;

use chrono::{NaiveDateTime, Timelike};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

/// Dense, 0-based node index within one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMeta {
    pub label: String,
    pub has_load: bool,
}

/// Feeder graph: undirected edges plus per-node metadata.
///
/// Edges are stored normalized (`a < b`) in the order given.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Topology {
    nodes: Vec<NodeMeta>,
    edges: Vec<(NodeId, NodeId)>,
}

impl Topology {
    pub fn new(nodes: Vec<NodeMeta>, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Self {
        let edges = edges
            .into_iter()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        Self { nodes, edges }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeMeta] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeMeta {
        &self.nodes[id.0]
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn load_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].has_load)
            .map(NodeId)
            .collect()
    }

    pub fn find_label(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.label == label).map(NodeId)
    }

    /// True when every node is reachable from node 0. An empty graph counts
    /// as connected.
    pub fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return true;
        }
        let mut uf = UnionFind::<usize>::new(n);
        for &(a, b) in &self.edges {
            if a.0 < n && b.0 < n {
                uf.union(a.0, b.0);
            }
        }
        let root = uf.find(0);
        (1..n).all(|i| uf.find(i) == root)
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        let n = self.nodes.len();
        let mut seen = std::collections::BTreeSet::new();
        for (index, &(a, b)) in self.edges.iter().enumerate() {
            if a.0 >= n || b.0 >= n {
                out.push(Violation::EdgeEndpointOutOfRange { edge: index, a, b });
                continue;
            }
            if a == b {
                out.push(Violation::SelfLoop { edge: index, node: a });
                continue;
            }
            if !seen.insert((a, b)) {
                out.push(Violation::DuplicateEdge { edge: index, a, b });
            }
        }
    }
}

/// Node-major matrix of optional values: `n_nodes` series of `n_times` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMatrix {
    n_times: usize,
    n_nodes: usize,
    cells: Vec<Option<f64>>,
}

impl SeriesMatrix {
    pub fn missing(n_times: usize, n_nodes: usize) -> Self {
        Self {
            n_times,
            n_nodes,
            cells: vec![None; n_times * n_nodes],
        }
    }

    /// Builds a matrix from one series per node. All series must have equal
    /// length.
    pub fn from_series(series: Vec<Vec<Option<f64>>>) -> Self {
        let n_nodes = series.len();
        let n_times = series.first().map_or(0, Vec::len);
        assert!(
            series.iter().all(|s| s.len() == n_times),
            "all node series must have the same length"
        );
        Self {
            n_times,
            n_nodes,
            cells: series.into_iter().flatten().collect(),
        }
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn get(&self, node: NodeId, t: usize) -> Option<f64> {
        self.cells[node.0 * self.n_times + t]
    }

    pub fn set(&mut self, node: NodeId, t: usize, value: Option<f64>) {
        self.cells[node.0 * self.n_times + t] = value;
    }

    pub fn series(&self, node: NodeId) -> &[Option<f64>] {
        let start = node.0 * self.n_times;
        &self.cells[start..start + self.n_times]
    }

    /// Present values of one node, in time order.
    pub fn present(&self, node: NodeId) -> impl Iterator<Item = f64> + '_ {
        self.series(node).iter().filter_map(|v| *v)
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }
}

/// Provenance of a measurement record. Carried for audit only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Measured,
    Estimated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Measured => "measured",
            Provenance::Estimated => "estimated",
        }
    }
}

/// Aligned nodal voltage and current histories for one study period.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementDataset {
    pub timestamps: Vec<NaiveDateTime>,
    pub voltages: SeriesMatrix,
    pub currents: SeriesMatrix,
    /// Node-major like the matrices; `None` when the record carried no tag.
    pub provenance: Vec<Option<Provenance>>,
    pub v_base: f64,
    pub topology: Topology,
    pub season_label: String,
}

impl MeasurementDataset {
    /// Assembles a dataset without provenance tags. No validation is done;
    /// call [`validate_dataset`] before analysis.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        voltages: SeriesMatrix,
        currents: SeriesMatrix,
        v_base: f64,
        topology: Topology,
        season_label: impl Into<String>,
    ) -> Self {
        let cells = voltages.n_times() * voltages.n_nodes();
        Self {
            timestamps,
            voltages,
            currents,
            provenance: vec![None; cells],
            v_base,
            topology,
            season_label: season_label.into(),
        }
    }

    pub fn n_times(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.node_count()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n_nodes()).map(NodeId)
    }

    pub fn voltage(&self, node: NodeId, t: usize) -> Option<f64> {
        self.voltages.get(node, t)
    }

    pub fn provenance_at(&self, node: NodeId, t: usize) -> Option<Provenance> {
        self.provenance
            .get(node.0 * self.voltages.n_times() + t)
            .copied()
            .flatten()
    }

    /// Sampling interval in seconds, taken from the first two timestamps.
    pub fn interval_seconds(&self) -> Option<i64> {
        match self.timestamps.as_slice() {
            [a, b, ..] => Some((*b - *a).num_seconds()),
            _ => None,
        }
    }

    /// Reference to the voltage sample at `(node, t)`, if present.
    pub fn sample(&self, node: NodeId, t: usize) -> Option<SampleRef> {
        self.voltage(node, t).map(|value| SampleRef {
            node,
            t_index: t,
            value,
        })
    }

    /// Copy of this dataset with a new voltage matrix.
    pub fn with_voltages(&self, voltages: SeriesMatrix) -> Self {
        Self {
            voltages,
            ..self.clone()
        }
    }
}

/// One `(node, time)` voltage sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRef {
    pub node: NodeId,
    pub t_index: usize,
    pub value: f64,
}

/// A broken dataset invariant, with the offending location and value.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveBase { v_base: f64 },
    TooFewTimestamps { count: usize },
    NonIncreasingTimestamp { index: usize, previous: NaiveDateTime, current: NaiveDateTime },
    NonUniformInterval { index: usize, expected_s: i64, actual_s: i64 },
    DimensionMismatch { matrix: &'static str, expected: (usize, usize), actual: (usize, usize) },
    NonPositiveVoltage { node: NodeId, t_index: usize, value: f64 },
    NonFiniteValue { matrix: &'static str, node: NodeId, t_index: usize },
    SelfLoop { edge: usize, node: NodeId },
    DuplicateEdge { edge: usize, a: NodeId, b: NodeId },
    EdgeEndpointOutOfRange { edge: usize, a: NodeId, b: NodeId },
}

impl Violation {
    /// Short machine-readable name of the broken invariant.
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::NonPositiveBase { .. } => "non-positive v_base",
            Violation::TooFewTimestamps { .. } => "too few timestamps",
            Violation::NonIncreasingTimestamp { .. } => "non-increasing timestamp",
            Violation::NonUniformInterval { .. } => "non-uniform interval",
            Violation::DimensionMismatch { .. } => "dimension mismatch",
            Violation::NonPositiveVoltage { .. } => "non-positive voltage",
            Violation::NonFiniteValue { .. } => "non-finite value",
            Violation::SelfLoop { .. } => "self-loop",
            Violation::DuplicateEdge { .. } => "duplicate edge",
            Violation::EdgeEndpointOutOfRange { .. } => "edge endpoint out of range",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.kind())?;
        match self {
            Violation::NonPositiveBase { v_base } => write!(f, "v_base = {v_base}"),
            Violation::TooFewTimestamps { count } => write!(f, "{count} timestamps"),
            Violation::NonIncreasingTimestamp { index, previous, current } => {
                write!(f, "index {index}: {current} after {previous}")
            }
            Violation::NonUniformInterval { index, expected_s, actual_s } => {
                write!(f, "index {index}: spacing {actual_s} s, expected {expected_s} s")
            }
            Violation::DimensionMismatch { matrix, expected, actual } => write!(
                f,
                "{matrix} is {}x{}, expected {}x{}",
                actual.0, actual.1, expected.0, expected.1
            ),
            Violation::NonPositiveVoltage { node, t_index, value } => {
                write!(f, "({node},{t_index}) = {value}")
            }
            Violation::NonFiniteValue { matrix, node, t_index } => {
                write!(f, "{matrix} at ({node},{t_index})")
            }
            Violation::SelfLoop { edge, node } => write!(f, "edge {edge} on node {node}"),
            Violation::DuplicateEdge { edge, a, b } => write!(f, "edge {edge} ({a},{b})"),
            Violation::EdgeEndpointOutOfRange { edge, a, b } => {
                write!(f, "edge {edge} ({a},{b})")
            }
        }
    }
}

/// Checks every dataset invariant and lists the violations. Never fails;
/// callers decide what to do with the list.
pub fn validate_dataset(raw: &MeasurementDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(raw.v_base > 0.0) {
        out.push(Violation::NonPositiveBase { v_base: raw.v_base });
    }

    let ts = &raw.timestamps;
    if ts.is_empty() {
        out.push(Violation::TooFewTimestamps { count: 0 });
    }
    let expected_s = raw.interval_seconds();
    for index in 1..ts.len() {
        let step = (ts[index] - ts[index - 1]).num_seconds();
        if ts[index] <= ts[index - 1] {
            out.push(Violation::NonIncreasingTimestamp {
                index,
                previous: ts[index - 1],
                current: ts[index],
            });
        } else if Some(step) != expected_s {
            out.push(Violation::NonUniformInterval {
                index,
                expected_s: expected_s.unwrap_or(step),
                actual_s: step,
            });
        }
    }

    let expected = (ts.len(), raw.n_nodes());
    let mut dims_ok = true;
    for (name, m) in [("voltages", &raw.voltages), ("currents", &raw.currents)] {
        let actual = (m.n_times(), m.n_nodes());
        if actual != expected {
            dims_ok = false;
            out.push(Violation::DimensionMismatch { matrix: name, expected, actual });
        }
    }

    if dims_ok {
        for node in raw.node_ids() {
            for (t, cell) in raw.voltages.series(node).iter().enumerate() {
                match *cell {
                    Some(v) if !v.is_finite() => out.push(Violation::NonFiniteValue {
                        matrix: "voltages",
                        node,
                        t_index: t,
                    }),
                    Some(v) if v <= 0.0 => out.push(Violation::NonPositiveVoltage {
                        node,
                        t_index: t,
                        value: v,
                    }),
                    _ => {}
                }
            }
            for (t, cell) in raw.currents.series(node).iter().enumerate() {
                if matches!(cell, Some(v) if !v.is_finite()) {
                    out.push(Violation::NonFiniteValue {
                        matrix: "currents",
                        node,
                        t_index: t,
                    });
                }
            }
        }
    }

    raw.topology.violations(&mut out);
    out
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("time index {index} out of bounds for {len} timestamps")]
pub struct TimeIndexOutOfBounds {
    pub index: usize,
    pub len: usize,
}

/// Minutes since local midnight of the timestamp at `t_index`.
pub fn time_of_day_minutes(
    t_index: usize,
    dataset: &MeasurementDataset,
) -> Result<f64, TimeIndexOutOfBounds> {
    let ts = dataset.timestamps.get(t_index).ok_or(TimeIndexOutOfBounds {
        index: t_index,
        len: dataset.timestamps.len(),
    })?;
    Ok(minutes_of_day(ts))
}

pub fn minutes_of_day(ts: &NaiveDateTime) -> f64 {
    let secs = ts.num_seconds_from_midnight() as f64 + ts.nanosecond() as f64 * 1e-9;
    secs / 60.0
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use chrono::NaiveDate;

    pub fn epoch() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2017, 1, 5)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    pub fn chain_topology(n: usize, loads: &[usize]) -> Topology {
        let nodes = (0..n)
            .map(|i| NodeMeta {
                label: format!("n{i:02}"),
                has_load: loads.contains(&i),
            })
            .collect();
        Topology::new(nodes, (1..n).map(|i| (NodeId(i - 1), NodeId(i))))
    }

    /// Dataset on a chain topology with 10-minute spacing.
    pub fn dataset(voltages: Vec<Vec<f64>>, loads: &[usize]) -> MeasurementDataset {
        let n = voltages.len();
        let n_t = voltages.first().map_or(0, Vec::len);
        let ts = (0..n_t)
            .map(|i| epoch() + chrono::Duration::seconds(600 * i as i64))
            .collect();
        let v = SeriesMatrix::from_series(
            voltages
                .into_iter()
                .map(|s| s.into_iter().map(Some).collect())
                .collect(),
        );
        MeasurementDataset::new(
            ts,
            v,
            SeriesMatrix::missing(n_t, n),
            11_000.0,
            chain_topology(n, loads),
            "summer",
        )
    }
}
