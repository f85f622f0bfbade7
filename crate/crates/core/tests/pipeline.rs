use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use pvcrit_core::grouping::GroupProvenance;
use pvcrit_core::ingest::IngestConfig;
use pvcrit_core::model::{MeasurementDataset, NodeMeta, SeriesMatrix, Topology};
use pvcrit_core::pipeline::{
    config_for_synth, run_on_dataset, run_pipeline, write_run_dir, PipelineConfig, PipelineRun,
};
use pvcrit_core::synth::{generate, write_files, PlannedGroup, SynthSpec, TapChange};
use pvcrit_core::NodeId;

fn two_group_spec() -> SynthSpec {
    SynthSpec {
        n_nodes: 8,
        edges: (0..7).map(|i| (i, i + 1)).collect(),
        load_nodes: vec![1, 2, 5, 6],
        group_plan: vec![
            PlannedGroup { nodes: vec![0, 1, 2, 3], offset_v: 0.0 },
            PlannedGroup { nodes: vec![4, 5, 6, 7], offset_v: -60.0 },
        ],
        decorrelated_loads: vec![],
        outlier_count: 0,
        tap_change: None,
        days: 14,
        ..SynthSpec::default()
    }
}

fn run_spec(spec: &SynthSpec, dir: &Path) -> PipelineRun {
    let (dataset, truth) = generate(spec).unwrap();
    write_files(&dataset, &truth, dir).unwrap();
    let mut config = config_for_synth(spec);
    config.ingest.measurement_path = dir.join(&config.ingest.measurement_path);
    config.ingest.topology_path = dir.join(&config.ingest.topology_path);
    run_pipeline(&config).unwrap()
}

#[test]
fn planted_two_group_partition_is_recovered() {
    let dir = tempfile::tempdir().unwrap();
    let spec = two_group_spec();
    let run = run_spec(&spec, dir.path());
    let found: Vec<Vec<usize>> = run.partition.groups.iter().map(|g| g.nodes.iter().map(|n| n.0).collect()).collect();
    assert_eq!(found, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
    assert!(run.ledger.removed.is_empty());
}

#[test]
fn injected_outliers_are_exactly_the_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { outlier_count: 5, ..two_group_spec() };
    let (_, truth) = generate(&spec).unwrap();
    let run = run_spec(&spec, dir.path());
    let key = |s: &pvcrit_core::SampleRef| (s.node, s.t_index, s.value);
    let removed: Vec<_> = run.ledger.removed.iter().map(key).collect();
    let planted: Vec<_> = truth.outliers.iter().map(key).collect();
    assert_eq!(removed, planted);
}

#[test]
fn evening_tap_creates_an_excluded_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        tap_change: Some(TapChange { minute: 1188.0, step_v: 80.0, until_minute: 1320.0 }),
        days: 30,
        ..two_group_spec()
    };
    let run = run_spec(&spec, dir.path());
    let evening: Vec<_> = run
        .groups
        .iter()
        .flat_map(|(g, _)| &g.clusters)
        .filter(|c| c.centroid.minutes > 1140.0)
        .collect();
    assert!(!evening.is_empty());
    assert!(evening.iter().all(|c| !c.daylight && c.representatives.is_empty()));
}

#[test]
fn huge_threshold_gives_one_voltage_group() {
    let spec = two_group_spec();
    let (dataset, _) = generate(&spec).unwrap();
    let mut config = config_for_synth(&spec);
    config.grouping.dv_threshold_pct = 100.0;
    let run = run_on_dataset(&config, dataset).unwrap();
    assert_eq!(run.voltage_partition.len(), 1);
    assert_eq!(run.voltage_partition.groups[0].nodes.len(), 8);
}

#[test]
fn default_feeder_has_five_groups_with_two_splits() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_spec(&SynthSpec::default(), dir.path());
    assert_eq!(run.report.grouping.groups, 5);
    let splits: Vec<&str> = run
        .partition
        .groups
        .iter()
        .filter(|g| g.provenance == GroupProvenance::CorrelationSplit)
        .map(|g| run.dataset.topology.label(g.nodes[0]))
        .collect();
    assert_eq!(splits, ["n07", "n38"]);
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { days: 10, ..SynthSpec::default() };
    let run = run_spec(&spec, &dir.path().join("data"));
    let again = run_pipeline(&run.config).unwrap();
    write_run_dir(&run, &dir.path().join("a")).unwrap();
    write_run_dir(&again, &dir.path().join("b")).unwrap();
    let (a, b) = (read_tree(&dir.path().join("a")), read_tree(&dir.path().join("b")));
    assert!(a.iter().any(|(name, _)| name == "report.json"));
    assert_eq!(a, b);
}

#[test]
fn run_directory_has_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_spec(&two_group_spec(), &dir.path().join("data"));
    let out = dir.path().join("run");
    write_run_dir(&run, &out).unwrap();
    for f in ["config.echo", "report.json", "ledger.csv", "partition.csv", "matrices/voltage_diff.csv", "matrices/correlation.csv", "plots/qq_pooled.svg"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    for (g, _) in &run.groups {
        let base = out.join("groups").join(g.group_id.to_string());
        for f in ["elbow.csv", "clusters.csv", "points.csv", "plots/qq.svg", "plots/histogram.svg", "plots/elbow.svg", "plots/scatter.svg"] {
            assert!(base.join(f).is_file(), "group {} {f}", g.group_id);
        }
        let scatter = fs::read_to_string(base.join("plots/scatter.svg")).unwrap();
        assert_eq!(scatter.matches(r#"class="centroid""#).count(), g.clusters.len());
    }
    let echoed = PipelineConfig::from_toml_str(&fs::read_to_string(out.join("config.echo")).unwrap()).unwrap();
    assert_eq!(echoed, run.config);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["groups"].as_array().unwrap().len(), run.partition.len());
}

#[test]
fn flat_group_is_reported_without_clustering() {
    // node 0 constant, node 1 far away and varying: two voltage groups, the
    // first with zero spread and therefore no tail candidates
    let n_times = 500;
    let start = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let timestamps = (0..n_times).map(|i| start + Duration::minutes(10 * i as i64)).collect();
    let flat = vec![Some(6351.0); n_times];
    let wavy = (0..n_times).map(|i| Some(6200.0 + (i % 37) as f64)).collect();
    let topo = Topology::new(
        vec![NodeMeta { label: "a".into(), has_load: false }, NodeMeta { label: "b".into(), has_load: false }],
        [(NodeId(0), NodeId(1))],
    );
    let dataset = MeasurementDataset::new(
        timestamps,
        SeriesMatrix::from_series(vec![flat, wavy]),
        SeriesMatrix::missing(n_times, 2),
        11_000.0,
        topo,
        "summer",
    );
    let config = PipelineConfig::new(IngestConfig::new("unused", "unused", 11_000.0));
    let run = run_on_dataset(&config, dataset).unwrap();
    let (flat_group, _) = &run.groups[0];
    assert!(flat_group.tail.candidates.is_empty());
    assert!(flat_group.note.is_some());
    assert!(flat_group.elbow.is_none());

    let dir = tempfile::tempdir().unwrap();
    write_run_dir(&run, dir.path()).unwrap();
    let g0 = dir.path().join("groups/0");
    assert!(g0.join("plots/histogram.svg").is_file());
    assert!(!g0.join("plots/scatter.svg").exists());
    assert!(!g0.join("plots/elbow.svg").exists());
    let report = fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(report.contains("clustering skipped"));
}
