//! Gaussian plausibility band for bad-data rejection.
//!
//! A single Gaussian is fitted to the voltage samples (pooled over all nodes,
//! or per node) and every sample outside `mu ± k·sigma` is masked. The fit is
//! computed once on the original data.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::model::{MeasurementDataset, NodeId, SampleRef};

/// Band half-width, in standard deviations, used unless configured otherwise.
pub const DEFAULT_K_SIGMA: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BadDataError {
    #[error("need at least 2 samples to fit a Gaussian, got {0}")]
    TooFewSamples(usize),
    #[error("node {node} has {count} samples; per-node fitting needs at least 2")]
    TooFewNodeSamples { node: NodeId, count: usize },
    #[error("k_sigma must be positive and finite, got {0}")]
    InvalidK(f64),
}

/// Mean and population standard deviation of `values`.
pub fn fit_gaussian(values: &[f64]) -> Result<GaussianFit, BadDataError> {
    let n = values.len();
    if n < 2 {
        return Err(BadDataError::TooFewSamples(n));
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Ok(GaussianFit { mu: first, sigma: 0.0, n });
    }
    let mu = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
    Ok(GaussianFit {
        mu,
        sigma: var.sqrt(),
        n,
    })
}

impl GaussianFit {
    pub fn upper(&self, k: f64) -> f64 {
        self.mu + k * self.sigma
    }

    pub fn lower(&self, k: f64) -> f64 {
        self.mu - k * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitScope {
    #[default]
    Pooled,
    PerNode,
}

/// Acceptance band of one fit scope. `node` is `None` for the pooled band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub node: Option<NodeId>,
    pub fit: GaussianFit,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    fn new(node: Option<NodeId>, fit: GaussianFit, k: f64) -> Self {
        Self {
            node,
            fit,
            lo: fit.lower(k),
            hi: fit.upper(k),
        }
    }

    pub fn rejects(&self, value: f64) -> bool {
        value < self.lo || value > self.hi
    }
}

/// What the bad-data stage removed, and the band(s) it used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadDataLedger {
    /// Sorted by `(node, t_index)`.
    pub removed: Vec<SampleRef>,
    pub bands: Vec<Band>,
    pub k_sigma: f64,
    pub scope: FitScope,
}

impl BadDataLedger {
    /// The band that applies to `node`.
    pub fn band_for(&self, node: NodeId) -> &Band {
        match self.scope {
            FitScope::Pooled => &self.bands[0],
            FitScope::PerNode => &self.bands[node.0],
        }
    }

    /// Re-applies the recorded bands to `dataset` without refitting.
    pub fn apply(&self, dataset: &MeasurementDataset) -> (MeasurementDataset, Vec<SampleRef>) {
        mask_outside(dataset, |node| self.band_for(node))
    }

    /// Writes `node,timestamp,voltage,band_lo,band_hi` rows, labels resolved
    /// through `dataset`.
    pub fn write_csv(&self, dataset: &MeasurementDataset, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "timestamp", "voltage", "band_lo", "band_hi"])?;
        for s in &self.removed {
            let band = self.band_for(s.node);
            w.write_record([
                dataset.topology.label(s.node).to_string(),
                dataset.timestamps[s.t_index]
                    .format("%Y-%m-%dT%H:%M:%S")
                    .to_string(),
                s.value.to_string(),
                band.lo.to_string(),
                band.hi.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mask_outside<'a>(
    dataset: &MeasurementDataset,
    band_of: impl Fn(NodeId) -> &'a Band + Sync,
) -> (MeasurementDataset, Vec<SampleRef>) {
    let mut voltages = dataset.voltages.clone();
    let mut removed = Vec::new();
    for node in dataset.node_ids() {
        let band = band_of(node);
        for (t, cell) in dataset.voltages.series(node).iter().enumerate() {
            if let Some(value) = *cell {
                if band.rejects(value) {
                    voltages.set(node, t, None);
                    removed.push(SampleRef { node, t_index: t, value });
                }
            }
        }
    }
    (dataset.with_voltages(voltages), removed)
}

/// Masks every voltage sample outside `mu ± k_sigma·sigma`.
pub fn detect_bad_data(
    dataset: &MeasurementDataset,
    k_sigma: f64,
    scope: FitScope,
) -> Result<(MeasurementDataset, BadDataLedger), BadDataError> {
    if !(k_sigma > 0.0) || !k_sigma.is_finite() {
        return Err(BadDataError::InvalidK(k_sigma));
    }
    if k_sigma < DEFAULT_K_SIGMA {
        tracing::warn!(
            k_sigma,
            "bad-data band narrower than 7 sigma will discard informative extremes"
        );
    }
    let bands = match scope {
        FitScope::Pooled => {
            let all: Vec<f64> = dataset
                .node_ids()
                .flat_map(|n| dataset.voltages.present(n))
                .collect();
            vec![Band::new(None, fit_gaussian(&all)?, k_sigma)]
        }
        FitScope::PerNode => dataset
            .node_ids()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|node| {
                let values: Vec<f64> = dataset.voltages.present(node).collect();
                fit_gaussian(&values)
                    .map(|fit| Band::new(Some(node), fit, k_sigma))
                    .map_err(|_| BadDataError::TooFewNodeSamples {
                        node,
                        count: values.len(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    let ledger_bands = bands.clone();
    let (clean, removed) = mask_outside(dataset, |node| match scope {
        FitScope::Pooled => &bands[0],
        FitScope::PerNode => &bands[node.0],
    });
    Ok((
        clean,
        BadDataLedger {
            removed,
            bands: ledger_bands,
            k_sigma,
            scope,
        },
    ))
}

/// Normal QQ pairs `(theoretical, empirical)` against the sample's own fit,
/// plotting positions `(i - 0.5) / n`.
pub fn qq_points(values: &[f64]) -> Result<Vec<(f64, f64)>, BadDataError> {
    let fit = fit_gaussian(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let z = Normal::standard();
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let p = (i as f64 + 0.5) / n;
            (fit.mu + fit.sigma * z.inverse_cdf(p), v)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as NormalDist};

    fn gaussian(n: usize, mu: f64, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = NormalDist::new(mu, sigma).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_sample_has_zero_sigma() {
        let fit = fit_gaussian(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(fit, GaussianFit { mu: 5.0, sigma: 0.0, n: 3 });
        let fit = fit_gaussian(&[0.1; 7]).unwrap();
        assert_eq!(fit.sigma, 0.0);
    }

    #[test]
    fn population_sigma_of_one_to_five() {
        // sqrt(((-2)^2 + (-1)^2 + 0 + 1 + 4) / 5) = sqrt(2)
        let fit = fit_gaussian(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(fit.mu, 3.0);
        assert!((fit.sigma - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn too_few_values() {
        assert_eq!(fit_gaussian(&[1.0]), Err(BadDataError::TooFewSamples(1)));
        assert_eq!(qq_points(&[]), Err(BadDataError::TooFewSamples(0)));
    }

    #[test]
    fn three_sigma_coverage() {
        let values = gaussian(100_000, 6351.0, 40.0, 7);
        let fit = fit_gaussian(&values).unwrap();
        let inside = values
            .iter()
            .filter(|&&v| (v - fit.mu).abs() <= 3.0 * fit.sigma)
            .count() as f64
            / values.len() as f64;
        assert!((inside - 0.997).abs() <= 0.002, "inside fraction {inside}");
    }

    fn gaussian_dataset(seed: u64) -> MeasurementDataset {
        dataset(
            (0..4)
                .map(|n| gaussian(500, 6351.0, 20.0, seed + n))
                .collect(),
            &[],
        )
    }

    #[test]
    fn no_removal_when_everything_is_inside() {
        let ds = gaussian_dataset(1);
        let (clean, ledger) = detect_bad_data(&ds, 7.0, FitScope::Pooled).unwrap();
        assert!(ledger.removed.is_empty());
        assert_eq!(clean, ds);
    }

    #[test]
    fn single_planted_outlier_is_removed() {
        let ds = gaussian_dataset(2);
        let all: Vec<f64> = ds.node_ids().flat_map(|n| ds.voltages.present(n)).collect();
        let fit = fit_gaussian(&all).unwrap();
        let mut v = ds.voltages.clone();
        let planted = fit.upper(8.0);
        v.set(NodeId(2), 17, Some(planted));
        let dirty = ds.with_voltages(v);
        let (clean, ledger) = detect_bad_data(&dirty, 7.0, FitScope::Pooled).unwrap();
        assert_eq!(
            ledger.removed,
            vec![SampleRef { node: NodeId(2), t_index: 17, value: planted }]
        );
        assert_eq!(clean.voltage(NodeId(2), 17), None);
        let band = ledger.band_for(NodeId(0));
        assert!((band.hi - band.lo - 2.0 * 7.0 * band.fit.sigma).abs() < 1e-9);
    }

    #[test]
    fn sample_just_inside_the_band_is_retained() {
        let ds = gaussian_dataset(3);
        let all: Vec<f64> = ds.node_ids().flat_map(|n| ds.voltages.present(n)).collect();
        let fit = fit_gaussian(&all).unwrap();
        let mut v = ds.voltages.clone();
        v.set(NodeId(0), 3, Some(fit.upper(6.9)));
        let (_, ledger) = detect_bad_data(&ds.with_voltages(v), 7.0, FitScope::Pooled).unwrap();
        assert!(ledger.removed.is_empty());
    }

    #[test]
    fn per_node_scope_fits_each_node() {
        let mut series: Vec<Vec<f64>> = (0..3).map(|n| gaussian(300, 6300.0 + 100.0 * n as f64, 5.0, 11 + n)).collect();
        // pooled band would swallow this, node 0's own band does not
        series[0][10] = 6300.0 + 60.0;
        let ds = dataset(series, &[]);
        let (_, pooled) = detect_bad_data(&ds, 7.0, FitScope::Pooled).unwrap();
        assert!(pooled.removed.is_empty());
        let (_, per_node) = detect_bad_data(&ds, 7.0, FitScope::PerNode).unwrap();
        assert_eq!(per_node.removed.len(), 1);
        assert_eq!(per_node.removed[0].node, NodeId(0));
        assert_eq!(per_node.bands.len(), 3);
    }

    #[test]
    fn per_node_scope_needs_two_samples() {
        let ds = gaussian_dataset(4);
        let mut v = ds.voltages.clone();
        for t in 1..500 {
            v.set(NodeId(3), t, None);
        }
        let err = detect_bad_data(&ds.with_voltages(v), 7.0, FitScope::PerNode).unwrap_err();
        assert_eq!(err, BadDataError::TooFewNodeSamples { node: NodeId(3), count: 1 });
    }

    #[test]
    fn qq_plotting_positions_for_two_values() {
        let pts = qq_points(&[2.0, 1.0]).unwrap();
        // mu 1.5, sigma 0.5; Phi^-1(0.25) = -0.6744897501960817
        let z = 0.674_489_750_196_081_7;
        assert_eq!(pts.len(), 2);
        assert!((pts[0].0 - (1.5 - 0.5 * z)).abs() < 1e-9);
        assert!((pts[1].0 - (1.5 + 0.5 * z)).abs() < 1e-9);
        assert_eq!((pts[0].1, pts[1].1), (1.0, 2.0));
    }

    #[test]
    fn qq_of_gaussian_sample_hugs_identity() {
        let values = gaussian(20_000, 6351.0, 40.0, 9);
        let pts = qq_points(&values).unwrap();
        // central 98% of the pairs
        let lo = pts.len() / 100;
        let worst = pts[lo..pts.len() - lo]
            .iter()
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.1 * 40.0, "max deviation {worst}");
    }

    #[test]
    fn qq_exposes_outlier() {
        let mut values = gaussian(5_000, 6351.0, 40.0, 10);
        let fit = fit_gaussian(&values).unwrap();
        values.push(fit.upper(8.0));
        let pts = qq_points(&values).unwrap();
        let (theory, empirical) = *pts.last().unwrap();
        assert!(empirical - theory > 4.0 * fit.sigma);
    }
}
