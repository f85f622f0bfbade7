use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use proptest::prelude::*;
use pvcrit_core::bad_data::{detect_bad_data, FitScope};
use pvcrit_core::critical::{kmeans, select_tail, to_points, Point2D};
use pvcrit_core::grouping::{
    group_by_voltage, pearson_correlation, voltage_diff_matrix, DiffMetric, GroupPartition,
};
use pvcrit_core::ingest::{export_dataset, load_dataset, IngestConfig};
use pvcrit_core::model::{MeasurementDataset, NodeMeta, Provenance, SeriesMatrix, Topology};
use pvcrit_core::{NodeId, SampleRef};

fn start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2017, 1, 2).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

fn build(series: Vec<Vec<Option<f64>>>, edges: &[(usize, usize)], loads: &BTreeSet<usize>) -> MeasurementDataset {
    let n_nodes = series.len();
    let n_times = series[0].len();
    let nodes = (0..n_nodes)
        .map(|i| NodeMeta { label: format!("n{i:02}"), has_load: loads.contains(&i) })
        .collect();
    MeasurementDataset::new(
        (0..n_times).map(|i| start() + Duration::minutes(10 * i as i64)).collect(),
        SeriesMatrix::from_series(series),
        SeriesMatrix::missing(n_times, n_nodes),
        11_000.0,
        Topology::new(nodes, edges.iter().map(|&(a, b)| (NodeId(a), NodeId(b)))),
        "summer",
    )
}

/// Random tree on `n` nodes plus a few extra edges.
fn topology(max_nodes: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2..=max_nodes).prop_flat_map(|n| {
        let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
        (Just(n), parents, proptest::collection::vec((0..n, 0..n), 0..3))
    })
    .prop_map(|(n, parents, extra)| {
        let mut edges: Vec<(usize, usize)> = parents.into_iter().enumerate().map(|(i, p)| (p, i + 1)).collect();
        edges.extend(extra.into_iter().filter(|(a, b)| a != b));
        let mut seen = BTreeSet::new();
        edges.retain(|&(a, b)| seen.insert((a.min(b), a.max(b))));
        (n, edges)
    })
}

/// Node voltage levels plus small noise, 120 timestamps.
fn feeder(max_nodes: usize) -> impl Strategy<Value = MeasurementDataset> {
    topology(max_nodes).prop_flat_map(|(n, edges)| {
        (Just(edges), proptest::collection::vec(6200.0..6500.0f64, n), any::<u64>())
    })
    .prop_map(|(edges, levels, salt)| {
        let series = levels
            .iter()
            .enumerate()
            .map(|(i, &lvl)| {
                (0..120)
                    .map(|t| Some(lvl + (((t * 31 + i * 17) as u64 ^ salt) % 7) as f64 * 0.5))
                    .collect()
            })
            .collect();
        build(series, &edges, &BTreeSet::new())
    })
}

fn coarser(fine: &GroupPartition, coarse: &GroupPartition) -> bool {
    fine.groups
        .iter()
        .all(|g| g.nodes.iter().map(|&n| coarse.group_of(n)).collect::<BTreeSet<_>>().len() == 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn voltage_grouping_is_a_partition(ds in feeder(12), pct in 0.0..3.0f64) {
        let diff = voltage_diff_matrix(&ds, DiffMetric::MeanAbs).unwrap();
        let p = group_by_voltage(&ds.topology, &diff, pct, ds.v_base).unwrap();
        prop_assert!(p.is_partition_of(ds.n_nodes()));
        // nodes joined by an edge under the threshold share a group
        let limit = pct / 100.0 * ds.v_base;
        for &(a, b) in ds.topology.edges() {
            if diff.get(a, b).unwrap() <= limit {
                prop_assert_eq!(p.group_of(a), p.group_of(b));
            }
        }
    }

    #[test]
    fn raising_the_threshold_only_merges(ds in feeder(12), lo in 0.0..2.0f64, extra in 0.0..2.0f64) {
        let diff = voltage_diff_matrix(&ds, DiffMetric::P95Abs).unwrap();
        let fine = group_by_voltage(&ds.topology, &diff, lo, ds.v_base).unwrap();
        let coarse = group_by_voltage(&ds.topology, &diff, lo + extra, ds.v_base).unwrap();
        prop_assert!(coarser(&fine, &coarse));
        prop_assert!(coarse.len() <= fine.len());
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        pairs in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64, any::<bool>()), 100..300),
        scale in 0.01..50.0f64,
        shift in -1e4..1e4f64,
    ) {
        let x: Vec<Option<f64>> = pairs.iter().map(|&(a, _, gap)| (!gap || a > 0.0).then_some(a)).collect();
        let y: Vec<Option<f64>> = pairs.iter().map(|&(a, b, _)| Some(0.5 * a + b)).collect();
        let r = pearson_correlation(&x, &y);
        prop_assert_eq!(r, pearson_correlation(&y, &x));
        if let Some(r) = r {
            let moved: Vec<Option<f64>> = x.iter().map(|v| v.map(|v| scale * v + shift)).collect();
            let r2 = pearson_correlation(&moved, &y).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
            let flipped: Vec<Option<f64>> = x.iter().map(|v| v.map(|v| -v)).collect();
            prop_assert!((r + pearson_correlation(&flipped, &y).unwrap()).abs() < 1e-9);
            // brute force over the overlapping cells
            let (xs, ys): (Vec<f64>, Vec<f64>) = x.iter().zip(&y).filter_map(|(a, b)| Some(((*a)?, (*b)?))).unzip();
            let n = xs.len() as f64;
            let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
            let num: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
            let den = (xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>() * ys.iter().map(|b| (b - my).powi(2)).sum::<f64>()).sqrt();
            prop_assert!((r - num / den).abs() < 1e-9);
        }
    }

    #[test]
    fn kmeans_invariants_and_determinism(
        coords in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 10..120),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let pts: Vec<Point2D> = coords.iter().enumerate().map(|(i, &(v, t))| Point2D {
            v_norm: v, t_norm: t, origin: SampleRef { node: NodeId(0), t_index: i, value: v }, minutes: t * 1440.0,
        }).collect();
        let m = kmeans(&pts, k, seed, 3, 500).unwrap();
        prop_assert_eq!(&m, &kmeans(&pts, k, seed, 3, 500).unwrap());
        prop_assert!(m.sse_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(m.cluster_sizes().iter().all(|&s| s > 0));
        let d2 = |p: &Point2D, c: usize| (p.v_norm - m.centroids[c].v_norm).powi(2) + (p.t_norm - m.centroids[c].t_norm).powi(2);
        let mut sse = 0.0;
        for (p, &a) in pts.iter().zip(&m.assignment) {
            let best = (0..k).map(|c| d2(p, c)).fold(f64::INFINITY, f64::min);
            prop_assert!(d2(p, a) - best < 1e-9);
            sse += d2(p, a);
        }
        prop_assert!((sse - m.sse).abs() < 1e-9);
        for c in 0..k {
            let members: Vec<&Point2D> = m.members(c).map(|i| &pts[i]).collect();
            let cnt = members.len() as f64;
            let mv = members.iter().map(|p| p.v_norm).sum::<f64>() / cnt;
            let minutes = members.iter().map(|p| p.minutes).sum::<f64>() / cnt;
            prop_assert!((mv - m.centroids[c].v_norm).abs() < 1e-9);
            prop_assert!((minutes - m.centroids[c].minutes).abs() < 1e-6);
        }
    }

    #[test]
    fn normalization_ignores_voltage_offsets(
        cells in proptest::collection::vec((0usize..144, 6300.0..6500.0f64), 2..60),
        offset in -500.0..500.0f64,
    ) {
        let ds = build(vec![vec![Some(6351.0); 144]], &[], &BTreeSet::new());
        let cands: Vec<SampleRef> = cells.iter().map(|&(t, v)| SampleRef { node: NodeId(0), t_index: t, value: v }).collect();
        let shifted: Vec<SampleRef> = cands.iter().map(|s| SampleRef { value: s.value + offset, ..*s }).collect();
        for (a, b) in to_points(&cands, &ds).iter().zip(to_points(&shifted, &ds)) {
            prop_assert!((a.v_norm - b.v_norm).abs() < 1e-9);
            prop_assert_eq!(a.t_norm, b.t_norm);
            prop_assert!((0.0..=1.0).contains(&a.v_norm) && (0.0..=1.0).contains(&a.t_norm));
        }
    }

    #[test]
    fn tail_matches_a_rescan(
        values in proptest::collection::vec(proptest::option::weighted(0.9, 6000.0..6700.0f64), 60..300),
        k_tail in 0.5..3.0f64,
    ) {
        let half = values.len() / 2;
        let ds = build(vec![values[..half].to_vec(), values[half..2 * half].to_vec()], &[(0, 1)], &BTreeSet::new());
        let present: Vec<SampleRef> = (0..2).flat_map(|n| (0..half).map(move |t| (n, t))).filter_map(|(n, t)| ds.sample(NodeId(n), t)).collect();
        prop_assume!(present.len() >= 50);
        let tail = select_tail(0, &[NodeId(0), NodeId(1)], &ds, k_tail).unwrap();
        let n = present.len() as f64;
        let mu = present.iter().map(|s| s.value).sum::<f64>() / n;
        let sigma = (present.iter().map(|s| (s.value - mu).powi(2)).sum::<f64>() / n).sqrt();
        let cut = mu + k_tail * sigma;
        let mut expect: Vec<SampleRef> = present.into_iter().filter(|s| s.value > cut + 1e-9 * cut.abs()).collect();
        expect.sort_by_key(|s| (s.t_index, s.node));
        let got: Vec<SampleRef> = tail.candidates.iter().copied().filter(|s| s.value > cut + 1e-9 * cut.abs()).collect();
        prop_assert_eq!(got, expect);
        prop_assert!(tail.candidates.iter().all(|s| s.value > tail.threshold));
    }

    #[test]
    fn bad_data_rejection_laws(
        raw in proptest::collection::vec(6300.0..6400.0f64, 200..400),
        spikes in proptest::collection::vec((0usize..200, prop_oneof![Just(-3000.0), Just(3000.0)]), 0..4),
        k in 1.0..8.0f64,
        extra in 0.0..3.0f64,
    ) {
        let mut values: Vec<Option<f64>> = raw.iter().copied().map(Some).collect();
        for &(i, dv) in &spikes {
            values[i] = values[i].map(|v| v + dv);
        }
        let half = values.len() / 2;
        let ds = build(vec![values[..half].to_vec(), values[half..2 * half].to_vec()], &[(0, 1)], &BTreeSet::new());
        for scope in [FitScope::Pooled, FitScope::PerNode] {
            let (clean, ledger) = detect_bad_data(&ds, k, scope).unwrap();
            // re-applying the recorded bands removes nothing more
            let (again, removed) = ledger.apply(&clean);
            prop_assert!(removed.is_empty());
            prop_assert_eq!(&again.voltages, &clean.voltages);
            // clean + ledger reconstructs the input
            let mut rebuilt = clean.voltages.clone();
            for s in &ledger.removed {
                prop_assert!(ledger.band_for(s.node).rejects(s.value));
                rebuilt.set(s.node, s.t_index, Some(s.value));
            }
            prop_assert_eq!(&rebuilt, &ds.voltages);
            // a wider band removes a subset
            let (_, wider) = detect_bad_data(&ds, k + extra, scope).unwrap();
            let narrow: BTreeSet<(NodeId, usize)> = ledger.removed.iter().map(|s| (s.node, s.t_index)).collect();
            prop_assert!(wider.removed.iter().all(|s| narrow.contains(&(s.node, s.t_index))));
        }
    }

    #[test]
    fn export_then_load_round_trips(
        ds in feeder(6),
        holes in proptest::collection::vec((0usize..6, 1usize..119), 0..10),
        loads in proptest::collection::btree_set(0usize..6, 0..3),
    ) {
        let mut voltages = ds.voltages.clone();
        for &(n, t) in &holes {
            if n < ds.n_nodes() {
                voltages.set(NodeId(n), t, None);
            }
        }
        let loads: BTreeSet<usize> = loads.into_iter().filter(|&l| l < ds.n_nodes()).collect();
        let series: Vec<Vec<Option<f64>>> = ds.node_ids().map(|n| voltages.series(n).to_vec()).collect();
        let mut original = build(series, &ds.topology.edges().iter().map(|&(a, b)| (a.0, b.0)).collect::<Vec<_>>(), &loads);
        for &l in &loads {
            for t in 0..original.n_times() {
                original.currents.set(NodeId(l), t, Some(10.0 + (t % 13) as f64));
            }
        }
        original.provenance = vec![Some(Provenance::Measured); original.n_nodes() * original.n_times()];
        let dir = tempfile::tempdir().unwrap();
        let (m, t) = (dir.path().join("m.csv"), dir.path().join("t.csv"));
        export_dataset(&original, &m, &t).unwrap();
        let back = load_dataset(&IngestConfig::new(&m, &t, 11_000.0)).unwrap();
        prop_assert_eq!(&back.voltages, &original.voltages);
        prop_assert_eq!(&back.currents, &original.currents);
        prop_assert_eq!(&back.topology, &original.topology);
        prop_assert_eq!(&back.timestamps, &original.timestamps);
    }
}
