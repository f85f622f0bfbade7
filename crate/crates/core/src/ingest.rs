//! Measurement and topology file ingestion.
//!
//! Measurement file: header row, then `timestamp,node,voltage_v[,current_a][,source]`.
//! Columns are located by header name. `voltage_v` and `current_a` may be
//! empty, meaning missing. `source` is `measured` or `estimated`.
//!
//! Topology file: header row, then a mix of `edge,<label_a>,<label_b>` and
//! `node,<label>,<has_load 0|1>` rows.
//!
//! Node labels are sorted lexicographically and mapped to ids `0..n`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDateTime};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::model::{
    MeasurementDataset, NodeId, NodeMeta, Provenance, SeriesMatrix, Topology,
};

/// Timestamps may sit this far from the interval grid and still be snapped.
const ALIGN_TOLERANCE_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub measurement_path: PathBuf,
    pub topology_path: PathBuf,
    pub v_base: f64,
    #[serde(default = "default_interval")]
    pub expected_interval: u32,
    #[serde(default = "default_timezone")]
    pub timezone: String,
    #[serde(default = "default_season")]
    pub season_label: String,
}

fn default_interval() -> u32 {
    600
}

fn default_timezone() -> String {
    "Australia/Brisbane".to_string()
}

fn default_season() -> String {
    "summer".to_string()
}

impl IngestConfig {
    pub fn new(measurement_path: impl Into<PathBuf>, topology_path: impl Into<PathBuf>, v_base: f64) -> Self {
        Self {
            measurement_path: measurement_path.into(),
            topology_path: topology_path.into(),
            v_base,
            expected_interval: default_interval(),
            timezone: default_timezone(),
            season_label: default_season(),
        }
    }

    pub fn check(&self) -> Result<Tz, IngestError> {
        if !(self.v_base > 0.0) || !self.v_base.is_finite() {
            return Err(IngestError::InvalidConfig(format!(
                "v_base must be positive, got {}",
                self.v_base
            )));
        }
        if self.expected_interval == 0 {
            return Err(IngestError::InvalidConfig(
                "expected_interval must be positive".into(),
            ));
        }
        self.timezone
            .parse::<Tz>()
            .map_err(|_| IngestError::UnknownTimezone(self.timezone.clone()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Csv {
        path: PathBuf,
        line: u64,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow { path: PathBuf, line: u64, reason: String },
    #[error("conflicting duplicate records for node {node} at {timestamp}")]
    DuplicateConflict { node: String, timestamp: NaiveDateTime },
    #[error("{path}:{line}: timestamp {timestamp} is {offset_s:.3} s off the {interval_s} s grid")]
    NotAligned {
        path: PathBuf,
        line: u64,
        timestamp: NaiveDateTime,
        offset_s: f64,
        interval_s: u32,
    },
    #[error("{path}:{line}: node {label} is not declared in the topology")]
    UnknownNode { path: PathBuf, line: u64, label: String },
    #[error("unknown timezone {0}")]
    UnknownTimezone(String),
    #[error("invalid ingest config: {0}")]
    InvalidConfig(String),
    #[error("{0} contains no data rows")]
    Empty(PathBuf),
}

/// Reads both files named in `config` and assembles the dataset.
pub fn load_dataset(config: &IngestConfig) -> Result<MeasurementDataset, IngestError> {
    let open = |path: &Path| {
        File::open(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    let topo = open(&config.topology_path)?;
    let meas = open(&config.measurement_path)?;
    parse_dataset(
        meas,
        &config.measurement_path,
        topo,
        &config.topology_path,
        config,
    )
}

/// Same as [`load_dataset`] but over arbitrary readers; the paths are used
/// only in diagnostics.
pub fn parse_dataset(
    measurements: impl Read,
    measurement_path: &Path,
    topology: impl Read,
    topology_path: &Path,
    config: &IngestConfig,
) -> Result<MeasurementDataset, IngestError> {
    let tz = config.check()?;
    let topology = parse_topology(topology, topology_path)?;
    let records = parse_measurements(measurements, measurement_path, &topology, tz)?;
    assemble(records, topology, config, measurement_path)
}

struct Record {
    line: u64,
    timestamp: NaiveDateTime,
    node: NodeId,
    voltage: Option<f64>,
    current: Option<f64>,
    source: Option<Provenance>,
}

fn reader(input: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn csv_err(path: &Path, e: csv::Error) -> IngestError {
    IngestError::Csv {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        source: e,
    }
}

/// Parses a topology file into a [`Topology`] with lexicographically
/// ordered node ids.
pub fn parse_topology(input: impl Read, path: &Path) -> Result<Topology, IngestError> {
    let malformed = |line: u64, reason: String| IngestError::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut nodes: BTreeMap<String, bool> = BTreeMap::new();
    let mut edges: Vec<(u64, String, String)> = Vec::new();
    let mut rdr = reader(input);
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != 3 {
            return Err(malformed(line, format!("expected 3 fields, found {}", row.len())));
        }
        match &row[0] {
            "node" => {
                let has_load = match &row[2] {
                    "0" => false,
                    "1" => true,
                    other => return Err(malformed(line, format!("has_load must be 0 or 1, got {other:?}"))),
                };
                if row[1].is_empty() {
                    return Err(malformed(line, "empty node label".into()));
                }
                if nodes.insert(row[1].to_string(), has_load).is_some() {
                    return Err(malformed(line, format!("node {} declared twice", &row[1])));
                }
            }
            "edge" => edges.push((line, row[1].to_string(), row[2].to_string())),
            other => return Err(malformed(line, format!("unknown record kind {other:?}"))),
        }
    }
    if nodes.is_empty() {
        return Err(IngestError::Empty(path.to_path_buf()));
    }

    let index: BTreeMap<&str, NodeId> = nodes
        .keys()
        .enumerate()
        .map(|(i, label)| (label.as_str(), NodeId(i)))
        .collect();
    let mut resolved = Vec::with_capacity(edges.len());
    for (line, a, b) in &edges {
        let lookup = |label: &str| {
            index.get(label).copied().ok_or_else(|| IngestError::UnknownNode {
                path: path.to_path_buf(),
                line: *line,
                label: label.to_string(),
            })
        };
        resolved.push((lookup(a)?, lookup(b)?));
    }
    let metas = nodes
        .into_iter()
        .map(|(label, has_load)| NodeMeta { label, has_load })
        .collect();
    let topology = Topology::new(metas, resolved);
    if !topology.is_connected() {
        tracing::warn!(path = %path.display(), "topology graph is not connected");
    }
    Ok(topology)
}

fn parse_measurements(
    input: impl Read,
    path: &Path,
    topology: &Topology,
    tz: Tz,
) -> Result<Vec<Record>, IngestError> {
    let malformed = |line: u64, reason: String| IngestError::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let column = |name: &str| header.iter().position(|h| h == name);
    let (Some(ts_col), Some(node_col), Some(v_col)) =
        (column("timestamp"), column("node"), column("voltage_v"))
    else {
        return Err(malformed(
            1,
            "header must name timestamp, node and voltage_v columns".into(),
        ));
    };
    let i_col = column("current_a");
    let src_col = column("source");

    let labels: BTreeMap<&str, NodeId> = topology
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.label.as_str(), NodeId(i)))
        .collect();

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != header.len() {
            return Err(malformed(
                line,
                format!("expected {} fields, found {}", header.len(), row.len()),
            ));
        }
        let timestamp = parse_timestamp(&row[ts_col], tz)
            .ok_or_else(|| malformed(line, format!("bad timestamp {:?}", &row[ts_col])))?;
        let label = &row[node_col];
        let node = *labels.get(label).ok_or_else(|| IngestError::UnknownNode {
            path: path.to_path_buf(),
            line,
            label: label.to_string(),
        })?;
        let number = |field: &str, what: &str| -> Result<Option<f64>, IngestError> {
            if field.is_empty() {
                return Ok(None);
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(malformed(line, format!("bad {what} {field:?}"))),
            }
        };
        let voltage = number(&row[v_col], "voltage_v")?;
        let current = match i_col {
            Some(c) => number(&row[c], "current_a")?,
            None => None,
        };
        let source = match src_col.map(|c| &row[c]) {
            None | Some("") => None,
            Some("measured") => Some(Provenance::Measured),
            Some("estimated") => Some(Provenance::Estimated),
            Some(other) => return Err(malformed(line, format!("bad source {other:?}"))),
        };
        out.push(Record {
            line,
            timestamp,
            node,
            voltage,
            current,
            source,
        });
    }
    if out.is_empty() {
        return Err(IngestError::Empty(path.to_path_buf()));
    }
    Ok(out)
}

/// ISO-8601 local time, optionally with seconds fraction. A timestamp that
/// carries a UTC offset is converted into `tz`.
fn parse_timestamp(text: &str, tz: Tz) -> Option<NaiveDateTime> {
    const LOCAL_FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    if let Some(ts) = LOCAL_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
    {
        return Some(ts);
    }
    DateTime::parse_from_rfc3339(text)
        .ok()
        .map(|dt| dt.with_timezone(&tz).naive_local())
}

fn assemble(
    records: Vec<Record>,
    topology: Topology,
    config: &IngestConfig,
    path: &Path,
) -> Result<MeasurementDataset, IngestError> {
    let interval = config.expected_interval;
    let anchor = records
        .iter()
        .map(|r| r.timestamp)
        .min()
        .expect("records are non-empty")
        .date()
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists");

    // Snap every record to a grid slot counted from the anchor midnight.
    let mut slots: Vec<i64> = Vec::with_capacity(records.len());
    for r in &records {
        let delta = r.timestamp - anchor;
        let secs = delta.num_milliseconds() as f64 / 1000.0;
        let slot = (secs / interval as f64).round();
        let offset = secs - slot * interval as f64;
        if offset.abs() > ALIGN_TOLERANCE_S {
            return Err(IngestError::NotAligned {
                path: path.to_path_buf(),
                line: r.line,
                timestamp: r.timestamp,
                offset_s: offset,
                interval_s: interval,
            });
        }
        slots.push(slot as i64);
    }
    let first = *slots.iter().min().expect("non-empty");
    let last = *slots.iter().max().expect("non-empty");
    let n_times = (last - first + 1) as usize;
    let n_nodes = topology.node_count();

    let mut voltages = SeriesMatrix::missing(n_times, n_nodes);
    let mut currents = SeriesMatrix::missing(n_times, n_nodes);
    let mut provenance = vec![None; n_times * n_nodes];
    let mut filled: BTreeSet<(NodeId, usize)> = BTreeSet::new();

    for (r, slot) in records.iter().zip(&slots) {
        let t = (slot - first) as usize;
        if !filled.insert((r.node, t)) {
            let same = voltages.get(r.node, t) == r.voltage
                && currents.get(r.node, t) == r.current
                && provenance[r.node.0 * n_times + t] == r.source;
            if !same {
                return Err(IngestError::DuplicateConflict {
                    node: topology.label(r.node).to_string(),
                    timestamp: r.timestamp,
                });
            }
            continue;
        }
        voltages.set(r.node, t, r.voltage);
        currents.set(r.node, t, r.current);
        provenance[r.node.0 * n_times + t] = r.source;
    }

    let timestamps = (0..n_times as i64)
        .map(|i| anchor + Duration::seconds((first + i) * interval as i64))
        .collect();
    let mut dataset = MeasurementDataset::new(
        timestamps,
        voltages,
        currents,
        config.v_base,
        topology,
        config.season_label.clone(),
    );
    dataset.provenance = provenance;
    Ok(dataset)
}

fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the measurement file for `dataset`. Cells where both voltage and
/// current are missing produce no row.
pub fn write_measurements(dataset: &MeasurementDataset, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "node", "voltage_v", "current_a", "source"])?;
    for (t, ts) in dataset.timestamps.iter().enumerate() {
        let stamp = format_timestamp(ts);
        for node in dataset.node_ids() {
            let v = dataset.voltages.get(node, t);
            let i = dataset.currents.get(node, t);
            if v.is_none() && i.is_none() {
                continue;
            }
            let source = dataset.provenance_at(node, t).map_or("", Provenance::as_str);
            w.write_record([
                stamp.as_str(),
                dataset.topology.label(node),
                &cell(v),
                &cell(i),
                source,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_topology(topology: &Topology, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "a", "b"])?;
    for n in topology.nodes() {
        w.write_record(["node", n.label.as_str(), if n.has_load { "1" } else { "0" }])?;
    }
    for &(a, b) in topology.edges() {
        w.write_record(["edge", topology.label(a), topology.label(b)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes both files; [`load_dataset`] on them yields the same dataset.
pub fn export_dataset(
    dataset: &MeasurementDataset,
    measurement_path: &Path,
    topology_path: &Path,
) -> Result<(), IngestError> {
    let create = |path: &Path| {
        File::create(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    let io = |path: &Path, e: csv::Error| csv_err(path, e);
    write_measurements(dataset, create(measurement_path)?).map_err(|e| io(measurement_path, e))?;
    write_topology(&dataset.topology, create(topology_path)?).map_err(|e| io(topology_path, e))?;
    Ok(())
}
