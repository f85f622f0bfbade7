//! End-to-end run: ingest, bad-data rejection, grouping, and per-group
//! critical-case selection, plus the run directory writer.
//!
//! Run directory layout:
//!
//! ```text
//! config.echo                  effective configuration (TOML)
//! report.json
//! ledger.csv                   removed bad-data samples
//! partition.csv
//! matrices/voltage_diff.csv
//! matrices/correlation.csv
//! plots/qq_pooled.{svg,csv}
//! groups/<id>/elbow.csv
//! groups/<id>/clusters.csv
//! groups/<id>/points.csv
//! groups/<id>/plots/{qq,histogram,elbow,scatter}.{svg,csv}
//! ```

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bad_data::{detect_bad_data, qq_points, BadDataLedger, FitScope, DEFAULT_K_SIGMA};
use crate::critical::{
    analyze_group, CriticalParams, DaylightWindow, ElbowParams, ElbowRule, GroupReport, Point2D,
    RepresentativeMode, DEFAULT_KNEE_SHARPNESS,
};
use crate::grouping::{
    group_by_voltage, refine_by_correlation, voltage_diff_matrix, CorrSignal,
    CorrelationMatrix, DiffMetric, GroupPartition, GroupProvenance, VoltageDiffMatrix,
};
use crate::ingest::{self, IngestConfig, IngestError};
use crate::model::{minutes_of_day, validate_dataset, MeasurementDataset, SampleRef};
use crate::plots;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
const HISTOGRAM_BINS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BadDataConfig {
    pub k_sigma: f64,
    pub scope: FitScope,
}

impl Default for BadDataConfig {
    fn default() -> Self {
        Self { k_sigma: DEFAULT_K_SIGMA, scope: FitScope::Pooled }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    pub dv_threshold_pct: f64,
    pub dv_metric: DiffMetric,
    pub corr_limit: f64,
    pub corr_signal: CorrSignal,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            dv_threshold_pct: 0.2,
            dv_metric: DiffMetric::MeanAbs,
            corr_limit: 0.7,
            corr_signal: CorrSignal::Current,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalConfig {
    pub k_tail: f64,
    pub k_max: usize,
    pub sse_ratio: f64,
    pub knee_floor: f64,
    pub knee_sharpness: f64,
    /// `[start, end]` in minutes of the day.
    pub daylight: (f64, f64),
    pub per_cluster: usize,
    pub mode: RepresentativeMode,
    pub include_night: bool,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for CriticalConfig {
    fn default() -> Self {
        Self {
            k_tail: 2.0,
            k_max: 10,
            sse_ratio: 0.3,
            knee_floor: 0.1,
            knee_sharpness: DEFAULT_KNEE_SHARPNESS,
            daylight: (300.0, 1140.0),
            per_cluster: 1,
            mode: RepresentativeMode::MaxVoltage,
            include_night: false,
            seed: 42,
            restarts: 10,
            max_iter: 300,
        }
    }
}

impl CriticalConfig {
    pub fn params(&self) -> CriticalParams {
        CriticalParams {
            k_tail: self.k_tail,
            elbow: ElbowParams {
                k_max: self.k_max,
                ratio: self.sse_ratio,
                knee_floor: self.knee_floor,
                knee_sharpness: self.knee_sharpness,
                restarts: self.restarts,
                max_iter: self.max_iter,
            },
            daylight: DaylightWindow { start: self.daylight.0, end: self.daylight.1 },
            per_cluster: self.per_cluster,
            mode: self.mode,
            include_night: self.include_night,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub ingest: IngestConfig,
    #[serde(default)]
    pub bad_data: BadDataConfig,
    #[serde(default)]
    pub grouping: GroupingConfig,
    #[serde(default)]
    pub critical: CriticalConfig,
}

impl PipelineConfig {
    pub fn new(ingest: IngestConfig) -> Self {
        Self {
            ingest,
            bad_data: BadDataConfig::default(),
            grouping: GroupingConfig::default(),
            critical: CriticalConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Reads a config file. Relative input paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.ingest.measurement_path, &mut config.ingest.topology_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// Range checks for every field.
    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.ingest.check().map_err(|e| PipelineError::Config(e.to_string()))?;
        let b = &self.bad_data;
        if !(b.k_sigma > 0.0 && b.k_sigma.is_finite()) {
            return bad(format!("bad_data.k_sigma must be positive, got {}", b.k_sigma));
        }
        let g = &self.grouping;
        if !(g.dv_threshold_pct >= 0.0 && g.dv_threshold_pct.is_finite()) {
            return bad(format!("grouping.dv_threshold_pct must be non-negative, got {}", g.dv_threshold_pct));
        }
        if !(-1.0..=1.0).contains(&g.corr_limit) {
            return bad(format!("grouping.corr_limit must lie in [-1, 1], got {}", g.corr_limit));
        }
        let c = &self.critical;
        if !(c.k_tail > 0.0 && c.k_tail.is_finite()) {
            return bad(format!("critical.k_tail must be positive, got {}", c.k_tail));
        }
        if c.k_max < 1 || c.restarts < 1 || c.max_iter < 1 || c.per_cluster < 1 {
            return bad("critical.k_max, restarts, max_iter and per_cluster must be at least 1".into());
        }
        if !(c.sse_ratio > 0.0 && c.sse_ratio < 1.0) {
            return bad(format!("critical.sse_ratio must lie in (0, 1), got {}", c.sse_ratio));
        }
        if !(0.0..=1.0).contains(&c.knee_floor) || !(0.0..=1.0).contains(&c.knee_sharpness) {
            return bad("critical.knee_floor and knee_sharpness must lie in [0, 1]".into());
        }
        if !(DaylightWindow { start: c.daylight.0, end: c.daylight.1 }).is_valid() {
            return bad(format!("critical.daylight {:?} is not an increasing window within the day", c.daylight));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset failed validation with {} violation(s); first: {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    Validation(Vec<String>),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Validation(_) => 1,
            PipelineError::Stage { .. } => 2,
            PipelineError::Io { .. } => 3,
        }
    }

    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Validation(_) => "validate",
            PipelineError::Stage { stage, .. } => stage,
            PipelineError::Io { .. } => "io",
        }
    }

    /// One-line JSON diagnostic.
    pub fn to_json(&self) -> String {
        let mut value = serde_json::json!({
            "status": "error",
            "stage": self.stage(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let PipelineError::Validation(v) = self {
            value["violations"] = serde_json::json!(v);
        }
        value.to_string()
    }

    fn stage_err(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage { stage, message: e.to_string() }
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { path, source } => PipelineError::Io { path, source },
            IngestError::InvalidConfig(_) | IngestError::UnknownTimezone(_) => PipelineError::Config(e.to_string()),
            other => PipelineError::stage_err("ingest", other),
        }
    }
}

/// Seed for one named stage, from the master seed.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update(master.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn group_seed(master: u64, group_id: usize) -> u64 {
    derive_seed(master, &format!("critical/group-{group_id}"))
}

/// Everything a run computes, before it is written out.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub dataset: MeasurementDataset,
    pub clean: MeasurementDataset,
    pub ledger: BadDataLedger,
    pub diff: VoltageDiffMatrix,
    pub voltage_partition: GroupPartition,
    pub correlation: CorrelationMatrix,
    pub partition: GroupPartition,
    pub groups: Vec<(GroupReport, Vec<Point2D>)>,
    pub report: CriticalCaseReport,
}

/// Loads the configured files and runs every stage.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    config.check()?;
    let dataset = ingest::load_dataset(&config.ingest)?;
    run_on_dataset(config, dataset)
}

/// Runs every stage after ingest on an in-memory dataset.
pub fn run_on_dataset(config: &PipelineConfig, dataset: MeasurementDataset) -> Result<PipelineRun, PipelineError> {
    config.check()?;
    let violations = validate_dataset(&dataset);
    if !violations.is_empty() {
        return Err(PipelineError::Validation(violations.iter().map(ToString::to_string).collect()));
    }
    let _span = tracing::info_span!("pipeline", nodes = dataset.n_nodes(), times = dataset.n_times()).entered();

    let (clean, ledger) = detect_bad_data(&dataset, config.bad_data.k_sigma, config.bad_data.scope)
        .map_err(|e| PipelineError::stage_err("bad_data", e))?;
    tracing::info!(removed = ledger.removed.len(), "bad data masked");

    let g = &config.grouping;
    let grouping_err = |e| PipelineError::stage_err("grouping", e);
    let diff = voltage_diff_matrix(&clean, g.dv_metric).map_err(grouping_err)?;
    let voltage_partition =
        group_by_voltage(&clean.topology, &diff, g.dv_threshold_pct, clean.v_base).map_err(grouping_err)?;
    let (partition, correlation) =
        refine_by_correlation(&voltage_partition, &clean, g.corr_limit, g.corr_signal).map_err(grouping_err)?;
    tracing::info!(voltage_groups = voltage_partition.len(), groups = partition.len(), "grouping done");

    let params = config.critical.params();
    let groups = partition
        .groups
        .par_iter()
        .enumerate()
        .map(|(id, group)| analyze_group(id, group, &clean, &params, group_seed(params.seed, id)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::stage_err("critical", e))?;

    let report = CriticalCaseReport::build(config, &dataset, &ledger, &voltage_partition, &groups);
    Ok(PipelineRun { config: config.clone(), dataset, clean, ledger, diff, voltage_partition, correlation, partition, groups, report })
}

/// Runs on a dedicated thread pool of `threads` workers (`None`: rayon's
/// default).
pub fn run_with_threads(config: &PipelineConfig, threads: Option<usize>) -> Result<PipelineRun, PipelineError> {
    match threads {
        None => run_pipeline(config),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| PipelineError::stage_err("runtime", e))?
            .install(|| run_pipeline(config)),
    }
}

fn format_ts(ts: &NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

fn clock(minutes: f64) -> String {
    let m = minutes.round() as i64;
    format!("{:02}:{:02}", m.div_euclid(60) % 24, m.rem_euclid(60))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalCaseReport {
    pub tool: String,
    pub version: String,
    pub season_label: String,
    pub n_nodes: usize,
    pub n_times: usize,
    pub interval_s: Option<i64>,
    pub first_timestamp: Option<String>,
    pub last_timestamp: Option<String>,
    pub seed: u64,
    pub bad_data: BadDataSummary,
    pub grouping: GroupingSummary,
    pub groups: Vec<GroupEntry>,
    pub critical_cases: Vec<CaseEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BadDataSummary {
    pub k_sigma: f64,
    pub scope: FitScope,
    pub removed: usize,
    pub bands: Vec<BandEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandEntry {
    pub node: Option<String>,
    pub mu: f64,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupingSummary {
    pub dv_threshold_v: f64,
    pub voltage_groups: usize,
    pub correlation_splits: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupEntry {
    pub id: usize,
    pub provenance: GroupProvenance,
    pub nodes: Vec<String>,
    pub seed: u64,
    pub tail: TailEntry,
    pub elbow: Option<ElbowEntry>,
    pub clusters: Vec<ClusterEntry>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEntry {
    pub mu: f64,
    pub sigma: f64,
    pub samples: usize,
    pub threshold: f64,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElbowEntry {
    pub sse_by_k: Vec<f64>,
    pub chosen_k: usize,
    pub rule: ElbowRule,
    pub knee_k: Option<usize>,
    pub knee_distance: f64,
    pub knee_sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterEntry {
    pub index: usize,
    pub size: usize,
    pub centroid_voltage: f64,
    pub centroid_minutes: f64,
    pub centroid_time: String,
    pub daylight: bool,
    pub representatives: Vec<CaseEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseEntry {
    pub group: usize,
    pub cluster: usize,
    pub node: String,
    pub timestamp: String,
    pub time_of_day: String,
    pub voltage: f64,
}

impl CriticalCaseReport {
    fn build(
        config: &PipelineConfig,
        dataset: &MeasurementDataset,
        ledger: &BadDataLedger,
        voltage_partition: &GroupPartition,
        groups: &[(GroupReport, Vec<Point2D>)],
    ) -> Self {
        let topo = &dataset.topology;
        let case = |group: usize, cluster: usize, s: &SampleRef| {
            let ts = &dataset.timestamps[s.t_index];
            CaseEntry {
                group,
                cluster,
                node: topo.label(s.node).to_string(),
                timestamp: format_ts(ts),
                time_of_day: clock(minutes_of_day(ts)),
                voltage: s.value,
            }
        };
        let entries: Vec<GroupEntry> = groups
            .iter()
            .map(|(g, _)| GroupEntry {
                id: g.group_id,
                provenance: g.provenance,
                nodes: g.nodes.iter().map(|&n| topo.label(n).to_string()).collect(),
                seed: group_seed(config.critical.seed, g.group_id),
                tail: TailEntry {
                    mu: g.tail.fit.mu,
                    sigma: g.tail.fit.sigma,
                    samples: g.tail.fit.n,
                    threshold: g.tail.threshold,
                    candidates: g.tail.candidates.len(),
                },
                elbow: g.elbow.as_ref().map(|e| ElbowEntry {
                    sse_by_k: e.sse_by_k.clone(),
                    chosen_k: e.chosen_k,
                    rule: e.rule,
                    knee_k: e.knee_k,
                    knee_distance: e.knee_distance,
                    knee_sharpness: e.knee_sharpness,
                }),
                clusters: g
                    .clusters
                    .iter()
                    .map(|c| ClusterEntry {
                        index: c.index,
                        size: c.size,
                        centroid_voltage: c.centroid.volts,
                        centroid_minutes: c.centroid.minutes,
                        centroid_time: clock(c.centroid.minutes),
                        daylight: c.daylight,
                        representatives: c.representatives.iter().map(|s| case(g.group_id, c.index, s)).collect(),
                    })
                    .collect(),
                note: g.note.clone(),
            })
            .collect();
        let critical_cases = entries
            .iter()
            .flat_map(|g| g.clusters.iter().flat_map(|c| c.representatives.iter().cloned()))
            .collect();
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            season_label: dataset.season_label.clone(),
            n_nodes: dataset.n_nodes(),
            n_times: dataset.n_times(),
            interval_s: dataset.interval_seconds(),
            first_timestamp: dataset.timestamps.first().map(format_ts),
            last_timestamp: dataset.timestamps.last().map(format_ts),
            seed: config.critical.seed,
            bad_data: BadDataSummary {
                k_sigma: ledger.k_sigma,
                scope: ledger.scope,
                removed: ledger.removed.len(),
                bands: ledger
                    .bands
                    .iter()
                    .map(|b| BandEntry {
                        node: b.node.map(|n| topo.label(n).to_string()),
                        mu: b.fit.mu,
                        sigma: b.fit.sigma,
                        lo: b.lo,
                        hi: b.hi,
                    })
                    .collect(),
            },
            grouping: GroupingSummary {
                dv_threshold_v: config.grouping.dv_threshold_pct / 100.0 * dataset.v_base,
                voltage_groups: voltage_partition.len(),
                correlation_splits: entries
                    .iter()
                    .filter(|g| g.provenance == GroupProvenance::CorrelationSplit)
                    .count(),
                groups: entries.len(),
            },
            groups: entries,
            critical_cases,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
        move |source| PipelineError::Io { path: path.to_path_buf(), source }
    }

    fn write_bytes(&self, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(Self::io_err(parent))?;
        }
        fs::write(&path, bytes).map_err(Self::io_err(&path))
    }

    fn write_csv(
        &self,
        rel: &str,
        fill: impl FnOnce(&mut BufWriter<&mut Vec<u8>>) -> csv::Result<()>,
    ) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        {
            let mut w = BufWriter::new(&mut buf);
            fill(&mut w).map_err(|e| PipelineError::Io { path: self.root.join(rel), source: e.into() })?;
            w.flush().map_err(Self::io_err(&self.root.join(rel)))?;
        }
        self.write_bytes(rel, &buf)
    }

    fn table(&self, rel: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), PipelineError> {
        self.write_csv(rel, |out| {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(header)?;
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        })
    }
}

fn qq_tables(values: &[f64]) -> Option<Vec<(f64, f64)>> {
    qq_points(values).ok().map(|qq| plots::thin(&qq, plots::QQ_MAX_POINTS))
}

/// Writes the run directory for `run` under `out`.
pub fn write_run_dir(run: &PipelineRun, out: &Path) -> Result<(), PipelineError> {
    let dir = RunDir { root: out.to_path_buf() };
    fs::create_dir_all(out).map_err(RunDir::io_err(out))?;
    let ds = &run.clean;
    let topo = &ds.topology;

    dir.write_bytes("config.echo", run.config.to_toml_string().as_bytes())?;
    dir.write_bytes("report.json", run.report.to_json().as_bytes())?;
    dir.write_csv("ledger.csv", |w| run.ledger.write_csv(&run.dataset, w))?;
    dir.write_csv("partition.csv", |w| run.partition.write_csv(topo, w))?;
    dir.write_csv("matrices/voltage_diff.csv", |w| run.diff.write_csv(topo, w))?;
    dir.write_csv("matrices/correlation.csv", |w| run.correlation.write_csv(topo, w))?;

    let pooled: Vec<f64> = ds.node_ids().flat_map(|n| ds.voltages.present(n)).collect();
    if let Some(qq) = qq_tables(&pooled) {
        write_qq(&dir, "plots/qq_pooled", &qq, "Pooled voltage QQ plot")?;
    }

    for (g, points) in &run.groups {
        write_group(&dir, run, g, points)?;
    }
    Ok(())
}

fn write_qq(dir: &RunDir, stem: &str, qq: &[(f64, f64)], title: &str) -> Result<(), PipelineError> {
    dir.table(
        &format!("{stem}.csv"),
        &["theoretical", "sample"],
        qq.iter().map(|(a, b)| vec![a.to_string(), b.to_string()]),
    )?;
    dir.write_bytes(&format!("{stem}.svg"), plots::qq_svg(qq, title).as_bytes())
}

fn write_group(dir: &RunDir, run: &PipelineRun, g: &GroupReport, points: &[Point2D]) -> Result<(), PipelineError> {
    let ds = &run.clean;
    let topo = &ds.topology;
    let base = format!("groups/{}", g.group_id);
    let label = |s: &SampleRef| topo.label(s.node).to_string();
    let ts = |s: &SampleRef| format_ts(&ds.timestamps[s.t_index]);

    let values: Vec<f64> = g.nodes.iter().flat_map(|&n| ds.voltages.present(n)).collect();
    if let Some(qq) = qq_tables(&values) {
        write_qq(dir, &format!("{base}/plots/qq"), &qq, &format!("Group {} QQ plot", g.group_id))?;
    }
    let bins = plots::histogram(&values, &g.tail.fit, HISTOGRAM_BINS);
    dir.table(
        &format!("{base}/plots/histogram.csv"),
        &["bin_lo", "bin_hi", "count", "gaussian"],
        bins.iter().map(|b| vec![b.lo.to_string(), b.hi.to_string(), b.count.to_string(), b.expected.to_string()]),
    )?;
    dir.write_bytes(
        &format!("{base}/plots/histogram.svg"),
        plots::histogram_svg(&bins, g.tail.threshold, &format!("Group {} voltage and fitted Gaussian", g.group_id))
            .as_bytes(),
    )?;

    let (Some(elbow), Some(model)) = (&g.elbow, &g.model) else {
        return Ok(());
    };
    let elbow_rows = || {
        elbow
            .sse_by_k
            .iter()
            .enumerate()
            .map(|(i, s)| vec![(i + 1).to_string(), s.to_string(), (i + 1 == elbow.chosen_k).to_string()])
    };
    dir.table(&format!("{base}/elbow.csv"), &["k", "sse", "chosen"], elbow_rows())?;
    dir.table(&format!("{base}/plots/elbow.csv"), &["k", "sse", "chosen"], elbow_rows())?;
    dir.write_bytes(
        &format!("{base}/plots/elbow.svg"),
        plots::elbow_svg(elbow, run.config.critical.sse_ratio, &format!("Group {} elbow", g.group_id)).as_bytes(),
    )?;
    dir.table(
        &format!("{base}/clusters.csv"),
        &["cluster", "size", "centroid_voltage", "centroid_minutes", "daylight", "representatives"],
        g.clusters.iter().map(|c| {
            let reps: Vec<String> = c.representatives.iter().map(|s| format!("{}@{}", label(s), ts(s))).collect();
            vec![
                c.index.to_string(),
                c.size.to_string(),
                c.centroid.volts.to_string(),
                c.centroid.minutes.to_string(),
                c.daylight.to_string(),
                reps.join(";"),
            ]
        }),
    )?;
    let point_rows = || {
        points.iter().zip(&model.assignment).map(|(p, a)| {
            vec![
                label(&p.origin),
                ts(&p.origin),
                p.minutes.to_string(),
                p.origin.value.to_string(),
                p.v_norm.to_string(),
                p.t_norm.to_string(),
                a.to_string(),
            ]
        })
    };
    let header = ["node", "timestamp", "minutes", "voltage", "v_norm", "t_norm", "cluster"];
    dir.table(&format!("{base}/points.csv"), &header, point_rows())?;
    dir.table(&format!("{base}/plots/scatter.csv"), &header, point_rows())?;
    let window = run.config.critical.params().daylight;
    dir.write_bytes(
        &format!("{base}/plots/scatter.svg"),
        plots::scatter_svg(points, model, window, &format!("Group {} critical candidates", g.group_id)).as_bytes(),
    )
}

/// A pipeline config for files written by [`crate::synth::write_files`] in
/// the same directory.
pub fn config_for_synth(spec: &crate::synth::SynthSpec) -> PipelineConfig {
    let mut ingest = IngestConfig::new(crate::synth::MEASUREMENT_FILE, crate::synth::TOPOLOGY_FILE, spec.v_base);
    ingest.expected_interval = spec.interval_s;
    let mut config = PipelineConfig::new(ingest);
    config.grouping.dv_threshold_pct = spec.threshold_pct;
    config
}
