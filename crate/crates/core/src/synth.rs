//! Synthetic feeder datasets with planted structure.
//!
//! Voltage at node `i`, day `d`, minute-of-day `m`:
//!
//! ```text
//! nominal + group_offset + node_offset + level[d]
//!     + ridge_amplitude · sun[d] · bump(m) + tap(m) + common AR(1) + white noise
//! ```
//!
//! `bump` is a raised cosine from 06:00 to 18:00. `tap` adds a step between
//! the tap time and its end. Load currents share one profile per group;
//! decorrelated load nodes get an independent AR(1) process instead.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bad_data::fit_gaussian;
use crate::grouping::pearson_correlation;
use crate::ingest;
use crate::model::{MeasurementDataset, NodeId, NodeMeta, SampleRef, SeriesMatrix, Topology};

/// Planted decorrelated loads must stay below this correlation with peers.
pub const DECORRELATION_LIMIT: f64 = 0.3;
const MAX_RETRIES: u64 = 10;
/// Outliers sit this many pooled standard deviations from the clean mean.
const OUTLIER_SIGMAS: f64 = 9.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedGroup {
    pub nodes: Vec<usize>,
    pub offset_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapChange {
    pub minute: f64,
    pub step_v: f64,
    #[serde(default = "default_tap_end")]
    pub until_minute: f64,
}

fn default_tap_end() -> f64 {
    1320.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_nodes: usize,
    /// 0-based node index pairs.
    pub edges: Vec<(usize, usize)>,
    pub load_nodes: Vec<usize>,
    pub group_plan: Vec<PlannedGroup>,
    pub decorrelated_loads: Vec<usize>,
    pub outlier_count: usize,
    pub tap_change: Option<TapChange>,
    pub interval_s: u32,
    pub days: u32,
    pub seed: u64,
    pub start: NaiveDate,
    pub nominal_v: f64,
    pub v_base: f64,
    /// Grouping threshold (percent of `v_base`) the planted offsets are
    /// checked against.
    pub threshold_pct: f64,
    pub ridge_amplitude_v: f64,
    pub daily_level_sd_v: f64,
    pub common_noise_sd_v: f64,
    pub node_noise_sd_v: f64,
    pub node_step_v: f64,
}

impl Default for SynthSpec {
    /// 49-node feeder with 16 load transformers: a 20-node trunk and two
    /// laterals, planted as three voltage groups, with the loads at
    /// `n07` and `n38` decorrelated, an evening tap step at 19:48 and five
    /// outliers.
    fn default() -> Self {
        let mut edges: Vec<(usize, usize)> = (0..19).map(|i| (i, i + 1)).collect();
        edges.push((9, 20));
        edges.extend((20..33).map(|i| (i, i + 1)));
        edges.push((15, 34));
        edges.extend((34..48).map(|i| (i, i + 1)));
        let group_plan = vec![
            PlannedGroup { nodes: (0..15).collect(), offset_v: 0.0 },
            PlannedGroup { nodes: (20..34).collect(), offset_v: -40.0 },
            PlannedGroup { nodes: (15..20).chain(34..49).collect(), offset_v: -80.0 },
        ];
        Self {
            n_nodes: 49,
            edges,
            load_nodes: vec![2, 4, 6, 8, 11, 13, 22, 25, 28, 31, 33, 17, 37, 40, 43, 46],
            group_plan,
            decorrelated_loads: vec![6, 37],
            outlier_count: 5,
            tap_change: Some(TapChange { minute: 1188.0, step_v: 80.0, until_minute: default_tap_end() }),
            interval_s: 600,
            days: 90,
            seed: 2017,
            start: NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date"),
            nominal_v: 6351.0,
            v_base: 11_000.0,
            threshold_pct: 0.2,
            ridge_amplitude_v: 100.0,
            daily_level_sd_v: 6.0,
            common_noise_sd_v: 1.0,
            node_noise_sd_v: 2.0,
            node_step_v: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub groups: Vec<Vec<NodeId>>,
    /// Sorted by `(node, t_index)`.
    pub outliers: Vec<SampleRef>,
    pub decorrelated: Vec<NodeId>,
    pub tap_minute: Option<f64>,
    /// Seed that produced the dataset (after decorrelation retries).
    pub seed_used: u64,
    /// Largest correlation of any decorrelated load with a group peer.
    pub max_decorrelated_r: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("inconsistent synth spec: {0}")]
    Spec(String),
    #[error("decorrelated loads stayed above r = {DECORRELATION_LIMIT} after {MAX_RETRIES} seeds")]
    Decorrelation,
    #[error("cannot write synthetic files: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
}

impl SynthError {
    pub fn exit_code(&self) -> i32 {
        match self {
            SynthError::Spec(_) => 1,
            SynthError::Decorrelation => 2,
            SynthError::Io(_) | SynthError::Ingest(ingest::IngestError::Io { .. }) => 3,
            SynthError::Ingest(_) => 2,
        }
    }
}

impl SynthSpec {
    /// Parses a TOML spec; absent fields take the default feeder's values.
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Spec(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes to TOML")
    }

    pub fn label(&self, i: usize) -> String {
        let width = self.n_nodes.to_string().len().max(2);
        format!("n{:0width$}", i + 1)
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Spec(m));
        let n = self.n_nodes;
        if n == 0 || self.days == 0 || self.interval_s == 0 || 86_400 % self.interval_s != 0 {
            return err("n_nodes, days and interval_s must be positive, interval dividing a day".into());
        }
        if !(self.v_base > 0.0) || !(self.nominal_v > 0.0) {
            return err("v_base and nominal_v must be positive".into());
        }
        let out_of_range = |i: &usize| *i >= n;
        if self.edges.iter().any(|(a, b)| a >= &n || b >= &n || a == b) {
            return err("edges must join two distinct valid nodes".into());
        }
        if self.load_nodes.iter().any(out_of_range) || self.decorrelated_loads.iter().any(out_of_range) {
            return err("load node index out of range".into());
        }
        if let Some(d) = self.decorrelated_loads.iter().find(|d| !self.load_nodes.contains(d)) {
            return err(format!("decorrelated node {d} is not a load node"));
        }
        let mut seen = BTreeSet::new();
        for g in &self.group_plan {
            for &i in &g.nodes {
                if i >= n || !seen.insert(i) {
                    return err(format!("node {i} is out of range or planted twice"));
                }
            }
        }
        if seen.len() != n {
            return err("group plan must cover every node".into());
        }
        let threshold = self.threshold_pct / 100.0 * self.v_base;
        for (a, ga) in self.group_plan.iter().enumerate() {
            for gb in &self.group_plan[a + 1..] {
                if (ga.offset_v - gb.offset_v).abs() <= threshold {
                    return err(format!(
                        "group offsets {} and {} are within the {threshold} V threshold",
                        ga.offset_v, gb.offset_v
                    ));
                }
            }
            if self.node_step_v.abs() >= threshold {
                return err("node_step_v must stay below the grouping threshold".into());
            }
        }
        if let Some(tap) = self.tap_change {
            if !(0.0..1440.0).contains(&tap.minute) || tap.until_minute <= tap.minute {
                return err("tap change window must lie within the day".into());
            }
        }
        Ok(())
    }

    fn topology(&self) -> Topology {
        let nodes = (0..self.n_nodes)
            .map(|i| NodeMeta { label: self.label(i), has_load: self.load_nodes.contains(&i) })
            .collect();
        Topology::new(nodes, self.edges.iter().map(|&(a, b)| (NodeId(a), NodeId(b))))
    }

    fn timestamps(&self) -> Vec<NaiveDateTime> {
        let start = self.start.and_hms_opt(0, 0, 0).expect("midnight");
        let n = self.days as usize * (86_400 / self.interval_s as usize);
        (0..n)
            .map(|i| start + Duration::seconds(i as i64 * self.interval_s as i64))
            .collect()
    }
}

fn bump(minutes: f64) -> f64 {
    if (360.0..=1080.0).contains(&minutes) {
        0.5 * (1.0 - (2.0 * std::f64::consts::PI * (minutes - 360.0) / 720.0).cos())
    } else {
        0.0
    }
}

/// Residential-style load shape: night base, morning and evening peaks, and a
/// midday dip from behind-the-meter PV.
fn load_shape(minutes: f64) -> f64 {
    let peak = |centre: f64, width: f64| (-((minutes - centre) / width).powi(2)).exp();
    1.0 + 0.8 * peak(450.0, 60.0) + 1.4 * peak(1140.0, 90.0) - 0.5 * bump(minutes)
}

struct Ar1 {
    phi: f64,
    state: f64,
    innovation: Normal<f64>,
}

impl Ar1 {
    fn new(phi: f64, sd: f64) -> Self {
        let innovation_sd = sd * (1.0 - phi * phi).sqrt();
        Self { phi, state: 0.0, innovation: Normal::new(0.0, innovation_sd.max(0.0)).expect("finite sd") }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        self.state = self.phi * self.state + self.innovation.sample(rng);
        self.state
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd.max(0.0)).expect("finite sd")
}

fn generate_once(spec: &SynthSpec, seed: u64) -> (MeasurementDataset, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let timestamps = spec.timestamps();
    let n_t = timestamps.len();
    let n = spec.n_nodes;
    let per_day = 86_400 / spec.interval_s as usize;
    let minutes: Vec<f64> = (0..per_day).map(|i| i as f64 * spec.interval_s as f64 / 60.0).collect();

    let days = spec.days as usize;
    let level_dist = normal(spec.daily_level_sd_v);
    let level: Vec<f64> = (0..days).map(|_| level_dist.sample(&mut rng)).collect();
    let sun: Vec<f64> = (0..days).map(|_| rng.gen_range(0.5..1.0)).collect();
    let mut common = Ar1::new(0.9, spec.common_noise_sd_v);
    let common_noise: Vec<f64> = (0..n_t).map(|_| common.next(&mut rng)).collect();

    let mut group_of = vec![0usize; n];
    let mut offset = vec![0.0; n];
    for (g, plan) in spec.group_plan.iter().enumerate() {
        for (rank, &i) in plan.nodes.iter().enumerate() {
            group_of[i] = g;
            offset[i] = plan.offset_v - spec.node_step_v * rank as f64;
        }
    }

    let white = normal(spec.node_noise_sd_v);
    let voltages: Vec<Vec<Option<f64>>> = (0..n)
        .map(|i| {
            (0..n_t)
                .map(|t| {
                    let (d, slot) = (t / per_day, t % per_day);
                    let m = minutes[slot];
                    let tap = spec
                        .tap_change
                        .filter(|tap| m >= tap.minute && m < tap.until_minute)
                        .map_or(0.0, |tap| tap.step_v);
                    Some(
                        spec.nominal_v
                            + offset[i]
                            + level[d]
                            + spec.ridge_amplitude_v * sun[d] * bump(m)
                            + tap
                            + common_noise[t]
                            + white.sample(&mut rng),
                    )
                })
                .collect()
        })
        .collect();

    // One load profile per planted group.
    let profiles: Vec<Vec<f64>> = spec
        .group_plan
        .iter()
        .map(|_| {
            let daily: Vec<f64> = (0..days).map(|_| rng.gen_range(0.8..1.2)).collect();
            let mut wobble = Ar1::new(0.95, 0.05);
            (0..n_t)
                .map(|t| daily[t / per_day] * load_shape(minutes[t % per_day]) + wobble.next(&mut rng))
                .collect()
        })
        .collect();
    let load_noise = normal(0.02);
    let currents: Vec<Vec<Option<f64>>> = (0..n)
        .map(|i| {
            if !spec.load_nodes.contains(&i) {
                return vec![None; n_t];
            }
            let scale = rng.gen_range(20.0..60.0);
            if spec.decorrelated_loads.contains(&i) {
                let mut own = Ar1::new(0.98, 0.3);
                (0..n_t).map(|_| Some(scale * (1.5 + own.next(&mut rng)).abs())).collect()
            } else {
                let profile = &profiles[group_of[i]];
                (0..n_t)
                    .map(|t| Some(scale * (profile[t] + load_noise.sample(&mut rng)).abs()))
                    .collect()
            }
        })
        .collect();

    let mut voltages = SeriesMatrix::from_series(voltages);
    let clean: Vec<f64> = (0..n).flat_map(|i| voltages.present(NodeId(i)).collect::<Vec<_>>()).collect();
    let fit = fit_gaussian(&clean).expect("synthetic dataset is non-empty");

    let mut cells = BTreeSet::new();
    while cells.len() < spec.outlier_count.min(n * n_t) {
        cells.insert((rng.gen_range(0..n), rng.gen_range(0..n_t)));
    }
    let mut outliers: Vec<SampleRef> = cells
        .into_iter()
        .enumerate()
        .map(|(k, (i, t))| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let value = fit.mu + sign * OUTLIER_SIGMAS * fit.sigma;
            voltages.set(NodeId(i), t, Some(value));
            SampleRef { node: NodeId(i), t_index: t, value }
        })
        .collect();
    outliers.sort_by_key(|s| (s.node, s.t_index));

    let dataset = MeasurementDataset::new(
        timestamps,
        voltages,
        SeriesMatrix::from_series(currents),
        spec.v_base,
        spec.topology(),
        "summer",
    );
    let max_decorrelated_r = max_peer_correlation(spec, &dataset);
    let truth = GroundTruth {
        groups: spec
            .group_plan
            .iter()
            .map(|g| {
                let mut nodes: Vec<NodeId> = g.nodes.iter().copied().map(NodeId).collect();
                nodes.sort();
                nodes
            })
            .collect(),
        outliers,
        decorrelated: spec.decorrelated_loads.iter().copied().map(NodeId).collect(),
        tap_minute: spec.tap_change.map(|t| t.minute),
        seed_used: seed,
        max_decorrelated_r,
    };
    (dataset, truth)
}

fn max_peer_correlation(spec: &SynthSpec, dataset: &MeasurementDataset) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for &d in &spec.decorrelated_loads {
        let plan = spec.group_plan.iter().find(|g| g.nodes.contains(&d))?;
        for &peer in plan.nodes.iter().filter(|&&p| p != d && spec.load_nodes.contains(&p)) {
            let r = pearson_correlation(
                dataset.currents.series(NodeId(d)),
                dataset.currents.series(NodeId(peer)),
            );
            if let Some(r) = r {
                worst = Some(worst.map_or(r, |w: f64| w.max(r)));
            }
        }
    }
    worst
}

/// Generates the dataset and its ground truth. If a planted decorrelated
/// load ends up correlating with a peer at or above
/// [`DECORRELATION_LIMIT`], generation is retried with the next seed.
pub fn generate(spec: &SynthSpec) -> Result<(MeasurementDataset, GroundTruth), SynthError> {
    spec.check()?;
    for attempt in 0..MAX_RETRIES {
        let (dataset, truth) = generate_once(spec, spec.seed.wrapping_add(attempt));
        if truth.max_decorrelated_r.is_none_or(|r| r < DECORRELATION_LIMIT) {
            return Ok((dataset, truth));
        }
    }
    Err(SynthError::Decorrelation)
}

/// Dataset with i.i.d. `N(mu, sigma)` voltages on a chain of `n_nodes`.
pub fn gaussian_dataset(n_nodes: usize, n_times: usize, mu: f64, sigma: f64, seed: u64) -> MeasurementDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(mu, sigma).expect("finite parameters");
    let series = (0..n_nodes)
        .map(|_| (0..n_times).map(|_| Some(dist.sample(&mut rng))).collect())
        .collect();
    let nodes = (0..n_nodes)
        .map(|i| NodeMeta { label: format!("g{i:03}"), has_load: false })
        .collect();
    let start = NaiveDate::from_ymd_opt(2017, 1, 1).and_then(|d| d.and_hms_opt(0, 0, 0)).expect("valid");
    MeasurementDataset::new(
        (0..n_times).map(|i| start + Duration::minutes(10 * i as i64)).collect(),
        SeriesMatrix::from_series(series),
        SeriesMatrix::missing(n_times, n_nodes),
        11_000.0,
        Topology::new(nodes, (1..n_nodes).map(|i| (NodeId(i - 1), NodeId(i)))),
        "synthetic",
    )
}

pub const MEASUREMENT_FILE: &str = "measurements.csv";
pub const TOPOLOGY_FILE: &str = "topology.csv";
pub const TRUTH_FILE: &str = "ground_truth.json";

/// Writes the measurement and topology files plus `ground_truth.json`
/// into `dir`.
pub fn write_files(dataset: &MeasurementDataset, truth: &GroundTruth, dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    ingest::export_dataset(dataset, &dir.join(MEASUREMENT_FILE), &dir.join(TOPOLOGY_FILE))?;
    let json = serde_json::to_string_pretty(truth).map_err(io::Error::from)?;
    fs::write(dir.join(TRUTH_FILE), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_dataset;

    fn small() -> SynthSpec {
        SynthSpec {
            n_nodes: 6,
            edges: vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)],
            load_nodes: vec![0, 1, 2, 3, 4, 5],
            group_plan: vec![
                PlannedGroup { nodes: vec![0, 1, 2], offset_v: 0.0 },
                PlannedGroup { nodes: vec![3, 4, 5], offset_v: -50.0 },
            ],
            decorrelated_loads: vec![],
            outlier_count: 0,
            tap_change: None,
            days: 5,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn default_spec_is_consistent() {
        let spec = SynthSpec::default();
        spec.check().unwrap();
        assert_eq!(spec.load_nodes.len(), 16);
        assert_eq!(spec.edges.len(), 48);
        assert_eq!(spec.label(6), "n07");
        assert_eq!(spec.label(37), "n38");
        assert!(spec.topology().is_connected());
    }

    #[test]
    fn small_spec_generates_valid_data() {
        let (ds, truth) = generate(&small()).unwrap();
        assert!(validate_dataset(&ds).is_empty());
        assert_eq!(ds.n_times(), 5 * 144);
        assert_eq!(truth.groups.len(), 2);
        assert!(truth.outliers.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed += 100;
        assert_ne!(generate(&other).unwrap().0, a.0);
    }

    #[test]
    fn outliers_are_recorded() {
        let spec = SynthSpec { outlier_count: 5, ..small() };
        let (ds, truth) = generate(&spec).unwrap();
        assert_eq!(truth.outliers.len(), 5);
        for s in &truth.outliers {
            assert_eq!(ds.voltage(s.node, s.t_index), Some(s.value));
        }
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = SynthSpec::default();
        assert_eq!(SynthSpec::from_toml_str(&spec.to_toml_string()).unwrap(), spec);
        let partial = SynthSpec::from_toml_str("days = 7\nseed = 3\n").unwrap();
        assert_eq!((partial.days, partial.seed, partial.n_nodes), (7, 3, 49));
        assert!(SynthSpec::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn inconsistent_specs_are_rejected() {
        let overlapping = SynthSpec {
            group_plan: vec![
                PlannedGroup { nodes: vec![0, 1, 2], offset_v: 0.0 },
                PlannedGroup { nodes: vec![3, 4, 5], offset_v: -10.0 },
            ],
            ..small()
        };
        assert!(matches!(overlapping.check(), Err(SynthError::Spec(_))));
        let uncovered = SynthSpec {
            group_plan: vec![PlannedGroup { nodes: vec![0, 1, 2], offset_v: 0.0 }],
            ..small()
        };
        assert!(matches!(uncovered.check(), Err(SynthError::Spec(_))));
        let bad_decorrelated = SynthSpec { decorrelated_loads: vec![9], ..small() };
        assert!(bad_decorrelated.check().is_err());
    }
}
