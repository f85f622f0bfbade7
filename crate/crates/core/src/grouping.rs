//! Nodal grouping.
//!
//! Adjacent nodes whose time-aggregated voltage difference stays within a
//! fraction of the nominal voltage are merged into connected components.
//! Load nodes whose load profile correlates poorly with their group peers are
//! then split out into singleton groups.

use std::io::Write;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{MeasurementDataset, NodeId, SeriesMatrix, Topology};

/// Minimum number of overlapping samples behind any difference or
/// correlation entry.
pub const MIN_SUPPORT: usize = 100;

/// Threshold range (percent of `v_base`) outside which grouping still runs
/// but logs a warning.
pub const THRESHOLD_PCT_SANE: (f64, f64) = (0.05, 5.0);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GroupingError {
    #[error("edge {a}-{b} has only {support} overlapping samples (need {needed})")]
    InsufficientOverlap { a: String, b: String, support: usize, needed: usize },
    #[error("no voltage difference available for edge {a}-{b}")]
    MissingEdgeDiff { a: String, b: String },
    #[error("threshold must be a finite non-negative percentage, got {0}")]
    InvalidThreshold(f64),
    #[error("correlation limit must lie in [-1, 1], got {0}")]
    InvalidCorrLimit(f64),
    #[error("load node {0} has no {1} samples")]
    MissingSignal(String, &'static str),
    #[error("matrix is {actual} nodes wide, dataset has {expected}")]
    SizeMismatch { expected: usize, actual: usize },
}

/// How `|V_i(t) - V_j(t)|` is aggregated over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffMetric {
    #[default]
    MeanAbs,
    /// Nearest-rank 95th percentile.
    P95Abs,
}

/// Aggregates the absolute difference of two aligned series over the
/// timestamps where both are present. Returns `(value, support)`; the value
/// is `None` when there is no overlap.
pub fn series_difference(x: &[Option<f64>], y: &[Option<f64>], metric: DiffMetric) -> (Option<f64>, usize) {
    let diffs = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).abs()));
    match metric {
        DiffMetric::MeanAbs => {
            let (sum, n) = diffs.fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
            ((n > 0).then(|| sum / n as f64), n)
        }
        DiffMetric::P95Abs => {
            let mut all: Vec<f64> = diffs.collect();
            let n = all.len();
            if n == 0 {
                return (None, 0);
            }
            all.sort_by(f64::total_cmp);
            let rank = (0.95 * n as f64).ceil() as usize;
            (Some(all[rank.clamp(1, n) - 1]), n)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageDiffMatrix {
    n: usize,
    pub metric: DiffMetric,
    d: Vec<Option<f64>>,
    support: Vec<usize>,
}

impl VoltageDiffMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: NodeId, j: NodeId) -> Option<f64> {
        self.d[i.0 * self.n + j.0]
    }

    pub fn support(&self, i: NodeId, j: NodeId) -> usize {
        self.support[i.0 * self.n + j.0]
    }

    pub fn write_csv(&self, topology: &Topology, out: impl Write) -> csv::Result<()> {
        write_square(self.n, |i, j| self.d[i * self.n + j], |i| topology.label(NodeId(i)).to_string(), out)
    }
}

fn write_square(
    n: usize,
    value: impl Fn(usize, usize) -> Option<f64>,
    label: impl Fn(usize) -> String,
    out: impl Write,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["node".to_string()];
    header.extend((0..n).map(&label));
    w.write_record(&header)?;
    for i in 0..n {
        let mut row = vec![label(i)];
        row.extend((0..n).map(|j| value(i, j).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Pairwise aggregated voltage differences over all node pairs. Every
/// topology edge must have at least [`MIN_SUPPORT`] overlapping samples.
pub fn voltage_diff_matrix(dataset: &MeasurementDataset, metric: DiffMetric) -> Result<VoltageDiffMatrix, GroupingError> {
    let n = dataset.n_nodes();
    let v = &dataset.voltages;
    let entries: Vec<((usize, usize), (Option<f64>, usize))> = upper_pairs(n)
        .into_par_iter()
        .map(|(i, j)| ((i, j), series_difference(v.series(NodeId(i)), v.series(NodeId(j)), metric)))
        .collect();
    let mut d = vec![None; n * n];
    let mut support = vec![0; n * n];
    for i in 0..n {
        d[i * n + i] = Some(0.0);
        support[i * n + i] = v.present(NodeId(i)).count();
    }
    for ((i, j), (value, count)) in entries {
        d[i * n + j] = value;
        d[j * n + i] = value;
        support[i * n + j] = count;
        support[j * n + i] = count;
    }
    let matrix = VoltageDiffMatrix { n, metric, d, support };
    let topo = &dataset.topology;
    for &(a, b) in topo.edges() {
        let count = matrix.support(a, b);
        if count < MIN_SUPPORT {
            return Err(GroupingError::InsufficientOverlap {
                a: topo.label(a).to_string(),
                b: topo.label(b).to_string(),
                support: count,
                needed: MIN_SUPPORT,
            });
        }
    }
    Ok(matrix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupProvenance {
    VoltageComponent,
    CorrelationSplit,
}

impl GroupProvenance {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupProvenance::VoltageComponent => "voltage-component",
            GroupProvenance::CorrelationSplit => "correlation-split",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    /// Ascending.
    pub nodes: Vec<NodeId>,
    pub provenance: GroupProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub groups: Vec<Group>,
}

impl GroupPartition {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_of(&self, node: NodeId) -> Option<usize> {
        self.groups.iter().position(|g| g.nodes.contains(&node))
    }

    /// True when the groups are disjoint, non-empty and cover `0..n_nodes`.
    pub fn is_partition_of(&self, n_nodes: usize) -> bool {
        let mut seen = vec![false; n_nodes];
        for g in &self.groups {
            if g.nodes.is_empty() {
                return false;
            }
            for n in &g.nodes {
                if n.0 >= n_nodes || seen[n.0] {
                    return false;
                }
                seen[n.0] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn write_csv(&self, topology: &Topology, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["group_id", "node", "provenance"])?;
        for (id, g) in self.groups.iter().enumerate() {
            for &n in &g.nodes {
                w.write_record([&id.to_string(), topology.label(n), g.provenance.as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Connected components of the topology restricted to edges whose voltage
/// difference is at most `threshold_pct` percent of `v_base`. Components are
/// ordered by their smallest node id.
pub fn group_by_voltage(
    topology: &Topology,
    diff: &VoltageDiffMatrix,
    threshold_pct: f64,
    v_base: f64,
) -> Result<GroupPartition, GroupingError> {
    if !threshold_pct.is_finite() || threshold_pct < 0.0 {
        return Err(GroupingError::InvalidThreshold(threshold_pct));
    }
    let (lo, hi) = THRESHOLD_PCT_SANE;
    if !(lo..=hi).contains(&threshold_pct) {
        tracing::warn!(threshold_pct, "grouping threshold outside the usual {lo}..{hi} % range");
    }
    let n = topology.node_count();
    if diff.len() != n {
        return Err(GroupingError::SizeMismatch { expected: n, actual: diff.len() });
    }
    let limit = threshold_pct / 100.0 * v_base;
    let mut uf = UnionFind::<usize>::new(n);
    for &(a, b) in topology.edges() {
        let d = diff.get(a, b).ok_or_else(|| GroupingError::MissingEdgeDiff {
            a: topology.label(a).to_string(),
            b: topology.label(b).to_string(),
        })?;
        if d <= limit {
            uf.union(a.0, b.0);
        }
    }
    // Iterating nodes in ascending order creates components in order of
    // their minimum node.
    let mut root_slot: Vec<Option<usize>> = vec![None; n];
    let mut groups: Vec<Group> = Vec::new();
    for i in 0..n {
        let root = uf.find(i);
        let slot = *root_slot[root].get_or_insert_with(|| {
            groups.push(Group {
                nodes: Vec::new(),
                provenance: GroupProvenance::VoltageComponent,
            });
            groups.len() - 1
        });
        groups[slot].nodes.push(NodeId(i));
    }
    Ok(GroupPartition { groups })
}

/// Pearson coefficient over the timestamps where both series are present.
/// `None` when the overlap is shorter than [`MIN_SUPPORT`] or either series
/// is constant on it.
pub fn pearson_correlation(x: &[Option<f64>], y: &[Option<f64>]) -> Option<f64> {
    pearson_with_support(x, y, MIN_SUPPORT).0
}

/// As [`pearson_correlation`] with an explicit minimum overlap; also returns
/// the overlap count.
pub fn pearson_with_support(x: &[Option<f64>], y: &[Option<f64>], min_support: usize) -> (Option<f64>, usize) {
    // Streaming co-moment update.
    let (mut n, mut mx, mut my, mut sxx, mut syy, mut sxy) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (Some(a), Some(b)) = (*a, *b) else { continue };
        n += 1;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n as f64;
        my += dy / n as f64;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        // both equivalent forms, averaged, so r(x, y) == r(y, x) exactly
        sxy += 0.5 * (dx * (b - my) + dy * (a - mx));
    }
    if n < min_support.max(2) || sxx <= 0.0 || syy <= 0.0 {
        return (None, n);
    }
    (Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)), n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrSignal {
    #[default]
    Current,
    Voltage,
}

impl CorrSignal {
    fn matrix(self, dataset: &MeasurementDataset) -> &SeriesMatrix {
        match self {
            CorrSignal::Current => &dataset.currents,
            CorrSignal::Voltage => &dataset.voltages,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CorrSignal::Current => "current",
            CorrSignal::Voltage => "voltage",
        }
    }
}

/// Pairwise correlation over the load nodes of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub nodes: Vec<NodeId>,
    r: Vec<Option<f64>>,
    support: Vec<usize>,
}

impl CorrelationMatrix {
    fn index(&self, node: NodeId) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    /// Correlation between two load nodes; `None` if undefined or either node
    /// is not a load node.
    pub fn get(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let m = self.nodes.len();
        self.r[self.index(a)? * m + self.index(b)?]
    }

    pub fn support(&self, a: NodeId, b: NodeId) -> Option<usize> {
        let m = self.nodes.len();
        Some(self.support[self.index(a)? * m + self.index(b)?])
    }

    pub fn write_csv(&self, topology: &Topology, out: impl Write) -> csv::Result<()> {
        let m = self.nodes.len();
        write_square(m, |i, j| self.r[i * m + j], |i| topology.label(self.nodes[i]).to_string(), out)
    }
}

pub fn correlation_matrix(dataset: &MeasurementDataset, signal: CorrSignal) -> CorrelationMatrix {
    let nodes = dataset.topology.load_nodes();
    let m = nodes.len();
    let data = signal.matrix(dataset);
    let entries: Vec<((usize, usize), (Option<f64>, usize))> = upper_pairs(m)
        .into_par_iter()
        .map(|(i, j)| {
            let r = pearson_with_support(data.series(nodes[i]), data.series(nodes[j]), MIN_SUPPORT);
            ((i, j), r)
        })
        .collect();
    let mut r = vec![None; m * m];
    let mut support = vec![0; m * m];
    for (i, &node) in nodes.iter().enumerate() {
        let (self_r, count) = pearson_with_support(data.series(node), data.series(node), MIN_SUPPORT);
        r[i * m + i] = self_r.map(|_| 1.0);
        support[i * m + i] = count;
    }
    for ((i, j), (value, count)) in entries {
        r[i * m + j] = value;
        r[j * m + i] = value;
        support[i * m + j] = count;
        support[j * m + i] = count;
    }
    CorrelationMatrix { nodes, r, support }
}

/// Splits weakly correlated load nodes out of their groups.
///
/// For each group with two or more load nodes, every load node's mean
/// defined correlation with the group's other load nodes is computed against
/// the original membership. Nodes whose mean falls below `corr_limit` are
/// moved to singleton groups in ascending `(mean, node)` order, stopping
/// before the group would be left without a load node. Each singleton is
/// placed right after the group it came from.
pub fn refine_by_correlation(
    partition: &GroupPartition,
    dataset: &MeasurementDataset,
    corr_limit: f64,
    signal: CorrSignal,
) -> Result<(GroupPartition, CorrelationMatrix), GroupingError> {
    if !(-1.0..=1.0).contains(&corr_limit) {
        return Err(GroupingError::InvalidCorrLimit(corr_limit));
    }
    let topo = &dataset.topology;
    let corr = correlation_matrix(dataset, signal);
    let data = signal.matrix(dataset);
    let mut groups = Vec::with_capacity(partition.len());
    for group in &partition.groups {
        let loads: Vec<NodeId> = group
            .nodes
            .iter()
            .copied()
            .filter(|&n| topo.node(n).has_load)
            .collect();
        if loads.len() <= 1 {
            groups.push(group.clone());
            continue;
        }
        if let Some(&empty) = loads.iter().find(|&&n| data.present(n).next().is_none()) {
            return Err(GroupingError::MissingSignal(topo.label(empty).to_string(), signal.name()));
        }
        let mut below: Vec<(f64, NodeId)> = loads
            .iter()
            .filter_map(|&i| {
                let defined: Vec<f64> = loads
                    .iter()
                    .filter(|&&j| j != i)
                    .filter_map(|&j| corr.get(i, j))
                    .collect();
                if defined.is_empty() {
                    return None;
                }
                let mean = defined.iter().sum::<f64>() / defined.len() as f64;
                (mean < corr_limit).then_some((mean, i))
            })
            .collect();
        below.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        below.truncate(loads.len() - 1);
        let mut split: Vec<NodeId> = below.into_iter().map(|(_, n)| n).collect();
        split.sort();
        groups.push(Group {
            nodes: group.nodes.iter().copied().filter(|n| !split.contains(n)).collect(),
            provenance: group.provenance,
        });
        groups.extend(split.into_iter().map(|n| Group {
            nodes: vec![n],
            provenance: GroupProvenance::CorrelationSplit,
        }));
    }
    Ok((GroupPartition { groups }, corr))
}
