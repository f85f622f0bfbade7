//! Critical-case selection within a group.
//!
//! 1. Fit a Gaussian to the group's pooled voltages and keep the samples above
//!    `mu + k_tail·sigma`.
//! 2. Map the candidates to the unit square: voltage and time of day, each
//!    min-max normalized over the candidate set.
//! 3. Pick the cluster count from the SSE-vs-k curve and run Lloyd's K-means.
//! 4. Flag clusters whose time centroid falls outside the daylight window and
//!    pick representatives from the rest.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bad_data::{fit_gaussian, GaussianFit};
use crate::grouping::{Group, GroupProvenance};
use crate::model::{minutes_of_day, MeasurementDataset, NodeId, SampleRef};

pub const MIN_TAIL_SAMPLES: usize = 50;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CriticalError {
    #[error("group {group} has {count} voltage samples, need at least {MIN_TAIL_SAMPLES}")]
    TooFewSamples { group: usize, count: usize },
    #[error("k = {k} is invalid for {distinct} distinct points")]
    InvalidK { k: usize, distinct: usize },
    #[error("all points are identical; no SSE curve can be formed")]
    Degenerate,
    #[error("per_cluster must be at least 1")]
    InvalidPerCluster,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSelection {
    pub group_id: usize,
    pub fit: GaussianFit,
    pub threshold: f64,
    /// Sorted by `(t_index, node)`.
    pub candidates: Vec<SampleRef>,
}

/// Samples of `nodes` strictly above `mu + k_tail·sigma` of their pooled fit.
pub fn select_tail(
    group_id: usize,
    nodes: &[NodeId],
    dataset: &MeasurementDataset,
    k_tail: f64,
) -> Result<TailSelection, CriticalError> {
    let pooled: Vec<SampleRef> = nodes
        .iter()
        .flat_map(|&n| (0..dataset.n_times()).filter_map(move |t| dataset.sample(n, t)))
        .collect();
    if pooled.len() < MIN_TAIL_SAMPLES {
        return Err(CriticalError::TooFewSamples {
            group: group_id,
            count: pooled.len(),
        });
    }
    let values: Vec<f64> = pooled.iter().map(|s| s.value).collect();
    let fit = fit_gaussian(&values).expect("at least MIN_TAIL_SAMPLES values");
    let threshold = fit.upper(k_tail);
    let mut candidates: Vec<SampleRef> = pooled.into_iter().filter(|s| s.value > threshold).collect();
    candidates.sort_by_key(|s| (s.t_index, s.node));
    Ok(TailSelection {
        group_id,
        fit,
        threshold,
        candidates,
    })
}

/// A candidate in the normalized (voltage, time-of-day) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub v_norm: f64,
    pub t_norm: f64,
    pub origin: SampleRef,
    pub minutes: f64,
}

impl Point2D {
    fn coords(&self) -> [f64; 2] {
        [self.v_norm, self.t_norm]
    }
}

fn unit_scale(values: impl Iterator<Item = f64> + Clone) -> impl Fn(f64) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    move |x| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 }
}

/// Min-max normalizes both dimensions over the candidate set; a dimension
/// with no spread maps to 0.5.
pub fn to_points(candidates: &[SampleRef], dataset: &MeasurementDataset) -> Vec<Point2D> {
    let minutes: Vec<f64> = candidates
        .iter()
        .map(|s| minutes_of_day(&dataset.timestamps[s.t_index]))
        .collect();
    let v_scale = unit_scale(candidates.iter().map(|s| s.value));
    let t_scale = unit_scale(minutes.iter().copied());
    candidates
        .iter()
        .zip(minutes.iter().copied())
        .map(|(s, m)| Point2D {
            v_norm: v_scale(s.value),
            t_norm: t_scale(m),
            origin: *s,
            minutes: m,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub v_norm: f64,
    pub t_norm: f64,
    pub volts: f64,
    pub minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Centroid>,
    /// Point index to cluster index.
    pub assignment: Vec<usize>,
    pub sse: f64,
    pub iterations: usize,
    pub seed: u64,
    pub restarts: usize,
    /// SSE after every assignment step of the winning run.
    pub sse_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a == cluster)
            .map(|(i, _)| i)
    }
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(p: &[f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn distinct_count(points: &[[f64; 2]]) -> usize {
    let mut keys: Vec<(u64, u64)> = points.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// D²-weighted seeding: each new centroid is the best of `trials`
/// candidates drawn proportionally to squared distance from the centroids
/// chosen so far (`trials = 1` is plain k-means++).
fn seed_centroids(points: &[[f64; 2]], k: usize, trials: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)]];
    let mut closest: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if closest[pick] == 0.0 {
                // rounding walked off the end; fall back to the farthest point
                pick = argmax(&closest);
            }
            let updated: Vec<f64> = points
                .iter()
                .zip(&closest)
                .map(|(p, &c)| c.min(dist2(p, &points[pick])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, pick, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least one trial");
        centroids.push(points[pick]);
        closest = updated;
    }
    centroids
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct LloydRun {
    centroids: Vec<[f64; 2]>,
    assignment: Vec<usize>,
    sse: f64,
    iterations: usize,
    sse_trace: Vec<f64>,
}

fn assign(points: &[[f64; 2]], centroids: &[[f64; 2]]) -> (Vec<usize>, f64) {
    let mut sse = 0.0;
    let assignment = points
        .iter()
        .map(|p| {
            let (c, d) = nearest(p, centroids);
            sse += d;
            c
        })
        .collect();
    (assignment, sse)
}

/// Means of the assigned points. An empty cluster is re-seeded at the point
/// farthest from its own centroid.
fn update(points: &[[f64; 2]], assignment: &[usize], k: usize) -> Vec<[f64; 2]> {
    let mut sums = vec![[0.0; 2]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        sums[a][0] += p[0];
        sums[a][1] += p[1];
        counts[a] += 1;
    }
    let mut centroids: Vec<[f64; 2]> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { [s[0] / c as f64, s[1] / c as f64] } else { [f64::NAN; 2] })
        .collect();
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        let mut spread: Vec<(f64, usize)> = points
            .iter()
            .zip(assignment)
            .enumerate()
            .map(|(i, (p, &a))| (dist2(p, &centroids[a]), i))
            .collect();
        spread.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (c, (_, i)) in empty.into_iter().zip(spread) {
            centroids[c] = points[i];
        }
    }
    centroids
}

/// One sweep of single-point moves: a point leaves its cluster when the
/// exact SSE change, counting the shift of both means, is negative.
/// `centroids` must be the means of `assignment`. Returns whether anything
/// moved.
fn hartigan_pass(points: &[[f64; 2]], assignment: &mut [usize], centroids: &[[f64; 2]]) -> bool {
    let k = centroids.len();
    let mut means = centroids.to_vec();
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    let mut moved = false;
    for (p, slot) in points.iter().zip(assignment.iter_mut()) {
        let a = *slot;
        let na = sizes[a] as f64;
        if sizes[a] < 2 {
            continue;
        }
        let removal = na / (na - 1.0) * dist2(p, &means[a]);
        let mut best: Option<(usize, f64)> = None;
        for b in (0..k).filter(|&b| b != a) {
            let nb = sizes[b] as f64;
            let cost = nb / (nb + 1.0) * dist2(p, &means[b]);
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((b, cost));
            }
        }
        let Some((b, addition)) = best else { continue };
        if addition >= removal * (1.0 - 1e-12) {
            continue;
        }
        let nb = sizes[b] as f64;
        for d in 0..2 {
            means[a][d] = (means[a][d] * na - p[d]) / (na - 1.0);
            means[b][d] = (means[b][d] * nb + p[d]) / (nb + 1.0);
        }
        sizes[a] -= 1;
        sizes[b] += 1;
        *slot = b;
        moved = true;
    }
    moved
}

/// Lloyd iterations; whenever the assignment is stable a Hartigan sweep
/// tries to escape the local optimum before stopping.
fn lloyd(points: &[[f64; 2]], mut centroids: Vec<[f64; 2]>, max_iter: usize) -> LloydRun {
    let k = centroids.len();
    let (mut assignment, mut sse) = assign(points, &centroids);
    let mut sse_trace = vec![sse];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        centroids = update(points, &assignment, k);
        let (next, next_sse) = assign(points, &centroids);
        sse_trace.push(next_sse);
        let unchanged = next == assignment;
        assignment = next;
        sse = next_sse;
        if unchanged && !hartigan_pass(points, &mut assignment, &centroids) {
            break;
        }
    }
    LloydRun {
        centroids,
        assignment,
        sse,
        iterations,
        sse_trace,
    }
}

fn to_model(points: &[Point2D], run: LloydRun, seed: u64, restarts: usize) -> ClusterModel {
    let k = run.centroids.len();
    let mut physical = vec![(0.0, 0.0, 0usize); k];
    for (p, &a) in points.iter().zip(&run.assignment) {
        physical[a].0 += p.origin.value;
        physical[a].1 += p.minutes;
        physical[a].2 += 1;
    }
    let centroids = run
        .centroids
        .iter()
        .zip(physical)
        .map(|(c, (v, m, count))| {
            let count = count.max(1) as f64;
            Centroid {
                v_norm: c[0],
                t_norm: c[1],
                volts: v / count,
                minutes: m / count,
            }
        })
        .collect();
    ClusterModel {
        k,
        centroids,
        assignment: run.assignment,
        sse: run.sse,
        iterations: run.iterations,
        seed,
        restarts,
        sse_trace: run.sse_trace,
    }
}

fn best_of_restarts(points: &[[f64; 2]], k: usize, seed: u64, restarts: usize, max_iter: usize) -> LloydRun {
    let runs: Vec<LloydRun> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r));
            // the first restart seeds greedily, the rest plainly for diversity
            let trials = if r == 0 { 2 + (k as f64).ln().floor() as usize } else { 1 };
            lloyd(points, seed_centroids(points, k, trials, &mut rng), max_iter)
        })
        .collect();
    // lowest SSE; ties keep the earliest restart
    runs.into_iter()
        .reduce(|best, run| if run.sse < best.sse { run } else { best })
        .expect("at least one restart")
}

fn check_k(points: &[[f64; 2]], k: usize) -> Result<(), CriticalError> {
    let distinct = distinct_count(points);
    if k == 0 || k > distinct {
        return Err(CriticalError::InvalidK { k, distinct });
    }
    Ok(())
}

/// Lloyd's K-means in the normalized plane, best of `restarts` seeded runs.
/// Restart `r` uses seed `seed + r`.
pub fn kmeans(
    points: &[Point2D],
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<ClusterModel, CriticalError> {
    let coords: Vec<[f64; 2]> = points.iter().map(Point2D::coords).collect();
    check_k(&coords, k)?;
    let run = best_of_restarts(&coords, k, seed, restarts, max_iter);
    Ok(to_model(points, run, seed, restarts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElbowRule {
    Knee,
    SseRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElbowParams {
    pub k_max: usize,
    pub ratio: f64,
    pub knee_floor: f64,
    /// Minimum `1 - drop_after / drop_before` at the knee for it to count as
    /// a clear elbow.
    pub knee_sharpness: f64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for ElbowParams {
    fn default() -> Self {
        Self {
            k_max: 10,
            ratio: 0.3,
            knee_floor: 0.1,
            knee_sharpness: DEFAULT_KNEE_SHARPNESS,
            restarts: 10,
            max_iter: 300,
        }
    }
}

pub const DEFAULT_KNEE_SHARPNESS: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    /// `sse_by_k[k - 1]` for `k = 1..=len`.
    pub sse_by_k: Vec<f64>,
    pub chosen_k: usize,
    pub rule: ElbowRule,
    /// Interior k farthest below the chord, if the curve has an interior.
    pub knee_k: Option<usize>,
    pub knee_distance: f64,
    pub knee_sharpness: f64,
    /// Best model for every k on the curve.
    #[serde(skip)]
    pub models: Vec<ClusterModel>,
}

impl ElbowCurve {
    pub fn sse(&self, k: usize) -> f64 {
        self.sse_by_k[k - 1]
    }

    pub fn chosen_model(&self) -> &ClusterModel {
        &self.models[self.chosen_k - 1]
    }
}

/// Locates the knee of a non-increasing SSE curve: the interior point with
/// the largest perpendicular distance below the chord, on the curve scaled
/// to the unit square. Returns `(k, distance, sharpness)`.
pub fn knee_of(sse_by_k: &[f64]) -> Option<(usize, f64, f64)> {
    let len = sse_by_k.len();
    if len < 3 {
        return None;
    }
    let first = sse_by_k[0];
    let last = sse_by_k[len - 1];
    let span = first - last;
    if !(span > 0.0) {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for k in 2..len {
        let x = (k - 1) as f64 / (len - 1) as f64;
        let y = (sse_by_k[k - 1] - last) / span;
        let d = (1.0 - x - y) / std::f64::consts::SQRT_2;
        if best.is_none_or(|(_, b)| d > b) {
            best = Some((k, d));
        }
    }
    let (k, d) = best?;
    let drop_in = sse_by_k[k - 2] - sse_by_k[k - 1];
    let drop_out = sse_by_k[k - 1] - sse_by_k[k];
    let sharpness = if drop_in > 0.0 { 1.0 - drop_out / drop_in } else { 0.0 };
    Some((k, d.max(0.0), sharpness))
}

/// SSE curve over `k = 1..=min(k_max, distinct points)` and the chosen k.
///
/// Each k keeps the better of its seeded restarts and a warm start from the
/// best `k - 1` centroids plus the worst-fitted point, so the curve never
/// rises. A knee that is far enough below the chord and sharp enough is
/// taken; otherwise the smallest k with `sse_k <= ratio · sse_1`.
pub fn elbow_select(points: &[Point2D], seed: u64, params: &ElbowParams) -> Result<ElbowCurve, CriticalError> {
    if params.k_max == 0 || !(params.ratio > 0.0 && params.ratio < 1.0) {
        return Err(CriticalError::InvalidParameter(format!(
            "k_max {} / ratio {}",
            params.k_max, params.ratio
        )));
    }
    let coords: Vec<[f64; 2]> = points.iter().map(Point2D::coords).collect();
    let distinct = distinct_count(&coords);
    if distinct < 2 {
        return Err(CriticalError::Degenerate);
    }
    let top = params.k_max.min(distinct);
    let mut models: Vec<ClusterModel> = Vec::with_capacity(top);
    for k in 1..=top {
        let mut run = best_of_restarts(&coords, k, seed, params.restarts, params.max_iter);
        if let Some(prev) = models.last() {
            let mut warm: Vec<[f64; 2]> = prev.centroids.iter().map(|c| [c.v_norm, c.t_norm]).collect();
            let worst = argmax(
                &coords
                    .iter()
                    .zip(&prev.assignment)
                    .map(|(p, &a)| dist2(p, &warm[a]))
                    .collect::<Vec<_>>(),
            );
            warm.push(coords[worst]);
            let warm_run = lloyd(&coords, warm, params.max_iter);
            if warm_run.sse < run.sse {
                run = warm_run;
            }
        }
        models.push(to_model(points, run, seed, params.restarts));
    }
    let sse_by_k: Vec<f64> = models.iter().map(|m| m.sse).collect();
    let knee = knee_of(&sse_by_k);
    let (knee_k, knee_distance, knee_sharpness) = match knee {
        Some((k, d, s)) => (Some(k), d, s),
        None => (None, 0.0, 0.0),
    };
    let clear = knee_distance >= params.knee_floor && knee_sharpness >= params.knee_sharpness;
    let (rule, chosen_k) = match knee_k {
        Some(k) if clear => (ElbowRule::Knee, k),
        _ => {
            let limit = params.ratio * sse_by_k[0];
            let k = sse_by_k.iter().position(|&s| s <= limit).map_or(top, |i| i + 1);
            (ElbowRule::SseRatio, k)
        }
    };
    Ok(ElbowCurve {
        sse_by_k,
        chosen_k,
        rule,
        knee_k,
        knee_distance,
        knee_sharpness,
        models,
    })
}

/// Time-of-day window in minutes, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaylightWindow {
    pub start: f64,
    pub end: f64,
}

impl Default for DaylightWindow {
    fn default() -> Self {
        Self { start: 300.0, end: 1140.0 }
    }
}

impl DaylightWindow {
    pub fn is_valid(&self) -> bool {
        (0.0..1440.0).contains(&self.start) && (0.0..1440.0).contains(&self.end) && self.start < self.end
    }

    pub fn contains(&self, minutes: f64) -> bool {
        (self.start..=self.end).contains(&minutes)
    }
}

/// Per cluster: does its time centroid fall inside the window?
pub fn flag_daylight(model: &ClusterModel, window: DaylightWindow) -> Vec<bool> {
    model.centroids.iter().map(|c| window.contains(c.minutes)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentativeMode {
    #[default]
    MaxVoltage,
    NearestCentroid,
}

/// Up to `per_cluster` members of each cluster, ranked by the mode's key.
/// Clusters flagged `false` in `eligible` get an empty list. Ties go to the
/// earlier time index, then the lower node.
pub fn pick_representatives(
    model: &ClusterModel,
    points: &[Point2D],
    eligible: &[bool],
    per_cluster: usize,
    mode: RepresentativeMode,
) -> Result<Vec<Vec<SampleRef>>, CriticalError> {
    if per_cluster < 1 {
        return Err(CriticalError::InvalidPerCluster);
    }
    Ok((0..model.k)
        .map(|c| {
            if !eligible.get(c).copied().unwrap_or(false) {
                return Vec::new();
            }
            let centroid = [model.centroids[c].v_norm, model.centroids[c].t_norm];
            let mut members: Vec<&Point2D> = model.members(c).map(|i| &points[i]).collect();
            let tie = |a: &Point2D, b: &Point2D| {
                a.origin
                    .t_index
                    .cmp(&b.origin.t_index)
                    .then(a.origin.node.cmp(&b.origin.node))
            };
            members.sort_by(|a, b| {
                let key = match mode {
                    RepresentativeMode::MaxVoltage => b.origin.value.total_cmp(&a.origin.value),
                    RepresentativeMode::NearestCentroid => {
                        dist2(&a.coords(), &centroid).total_cmp(&dist2(&b.coords(), &centroid))
                    }
                };
                if key == Ordering::Equal { tie(a, b) } else { key }
            });
            members.into_iter().take(per_cluster).map(|p| p.origin).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalParams {
    pub k_tail: f64,
    pub elbow: ElbowParams,
    pub daylight: DaylightWindow,
    pub per_cluster: usize,
    pub mode: RepresentativeMode,
    pub include_night: bool,
    pub seed: u64,
}

impl Default for CriticalParams {
    fn default() -> Self {
        Self {
            k_tail: 2.0,
            elbow: ElbowParams::default(),
            daylight: DaylightWindow::default(),
            per_cluster: 1,
            mode: RepresentativeMode::MaxVoltage,
            include_night: false,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub index: usize,
    pub size: usize,
    pub centroid: Centroid,
    pub daylight: bool,
    pub representatives: Vec<SampleRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group_id: usize,
    pub nodes: Vec<NodeId>,
    pub provenance: GroupProvenance,
    pub tail: TailSelection,
    pub elbow: Option<ElbowCurve>,
    pub model: Option<ClusterModel>,
    pub clusters: Vec<ClusterSummary>,
    pub note: Option<String>,
}

impl GroupReport {
    pub fn representatives(&self) -> impl Iterator<Item = &SampleRef> {
        self.clusters.iter().flat_map(|c| &c.representatives)
    }
}

/// Tail, elbow, clustering, daylight flags and representatives for one
/// group. `seed` should already be specific to the group.
pub fn analyze_group(
    group_id: usize,
    group: &Group,
    dataset: &MeasurementDataset,
    params: &CriticalParams,
    seed: u64,
) -> Result<(GroupReport, Vec<Point2D>), CriticalError> {
    let tail = select_tail(group_id, &group.nodes, dataset, params.k_tail)?;
    let points = to_points(&tail.candidates, dataset);
    let mut report = GroupReport {
        group_id,
        nodes: group.nodes.clone(),
        provenance: group.provenance,
        tail,
        elbow: None,
        model: None,
        clusters: Vec::new(),
        note: None,
    };
    let coords: Vec<[f64; 2]> = points.iter().map(Point2D::coords).collect();
    if points.is_empty() {
        report.note = Some("no samples above the tail threshold; clustering skipped".into());
        return Ok((report, points));
    }
    if distinct_count(&coords) < 2 {
        report.note = Some("fewer than 2 distinct candidates; clustering skipped".into());
        return Ok((report, points));
    }
    let elbow = elbow_select(&points, seed, &params.elbow)?;
    let model = elbow.chosen_model().clone();
    let daylight = flag_daylight(&model, params.daylight);
    let eligible: Vec<bool> = daylight.iter().map(|&d| d || params.include_night).collect();
    let reps = pick_representatives(&model, &points, &eligible, params.per_cluster, params.mode)?;
    let sizes = model.cluster_sizes();
    report.clusters = (0..model.k)
        .map(|c| ClusterSummary {
            index: c,
            size: sizes[c],
            centroid: model.centroids[c],
            daylight: daylight[c],
            representatives: reps[c].clone(),
        })
        .collect();
    report.elbow = Some(elbow);
    report.model = Some(model);
    Ok((report, points))
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// A point with no dataset behind it; voltage and minutes mirror the
    /// normalized coordinates.
    pub fn bare(v: f64, t: f64, i: usize) -> Point2D {
        Point2D {
            v_norm: v,
            t_norm: t,
            origin: SampleRef { node: NodeId(0), t_index: i, value: v },
            minutes: t * 1439.0,
        }
    }

    pub fn bare_points(coords: &[[f64; 2]]) -> Vec<Point2D> {
        coords.iter().enumerate().map(|(i, c)| bare(c[0], c[1], i)).collect()
    }
}
