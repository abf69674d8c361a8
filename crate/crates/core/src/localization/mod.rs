//! Coarse anomaly pre-localization on the network graph and
//! leak versus sensor-bias discrimination.

pub mod graph;
pub mod interpolate;

pub use graph::{Edge, NetworkGraph, Node};
pub use interpolate::{
    laplacian_interpolate, sensor_node_values, EdgeWeighting, LaplaceInterpolator, NodeField, Provenance, SolverChoice,
};

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Location;
use crate::panel::SensorPanel;
use crate::training::{assign_cluster, TrainedModel};

/// Default success and suppression radius in meters.
pub const DEFAULT_RADIUS: f64 = 300.0;
/// Default per-sensor standard-deviation floor (native units).
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-9;

/// Per-sensor z-scores and their squares.
#[derive(Debug, Clone, PartialEq)]
pub struct ZField {
    pub z: Vec<f64>,
    pub z2: Vec<f64>,
}

/// `z_j = (x_j - mean_j) / sigma_j` under cluster `cluster`.
///
/// With `floor = Some(f)` any sigma below `f` is replaced by `f` (with a
/// warning); with `None` a zero sigma is an error.
pub fn z_field(obs: &[f64], model: &TrainedModel, cluster: usize, floor: Option<f64>) -> Result<ZField> {
    let c = model.cluster(cluster)?;
    if obs.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: obs.len(),
        });
    }
    let sd = c.moments.std_devs();
    let mut z = Vec::with_capacity(obs.len());
    for (j, x) in obs.iter().enumerate() {
        let mut sigma = sd[j];
        match floor {
            Some(f) if sigma < f => {
                warn!(
                    "sensor '{}' in cluster {cluster}: std dev {sigma:e} below floor, using {f:e}",
                    model.sensors()[j].id
                );
                sigma = f;
            }
            None if sigma <= 0.0 => {
                return Err(Error::domain(format!(
                    "sensor '{}' has zero variance in cluster {cluster}",
                    model.sensors()[j].id
                )));
            }
            _ => {}
        }
        z.push((x - c.moments.mean[j]) / sigma);
    }
    let z2 = z.iter().map(|v| v * v).collect();
    Ok(ZField { z, z2 })
}

/// z-scores of a window: each row is normalized under its own temporal
/// cluster and the scores are averaged per sensor. Squaring the result gives
/// the field values for a persistent anomaly observed over the window.
pub fn window_z_field(panel: &SensorPanel, model: &TrainedModel, rows: std::ops::Range<usize>) -> Result<ZField> {
    if rows.is_empty() || rows.end > panel.len() {
        return Err(Error::IndexOutOfRange {
            index: rows.end,
            dim: panel.len(),
        });
    }
    let panel = panel.select(&model.sensor_ids())?;
    let n = rows.len() as f64;
    let mut z = vec![0.0; model.dim()];
    for t in rows {
        let k = assign_cluster(panel.timestamps()[t], model.scheme());
        let row = z_field(panel.row(t), model, k, Some(DEFAULT_SIGMA_FLOOR))?;
        for (a, v) in z.iter_mut().zip(row.z) {
            *a += v / n;
        }
    }
    let z2 = z.iter().map(|v| v * v).collect();
    Ok(ZField { z, z2 })
}

/// Sensor-wise split `c_j = d_j (S^-1 d)_j` of T^2, with `d = x - mean`.
/// Entries may be negative; they sum to T^2.
pub fn contributions(obs: &[f64], model: &TrainedModel, cluster: usize) -> Result<Vec<f64>> {
    let c = model.cluster(cluster)?;
    let p = c.whitening.precision_times_deviation(obs)?;
    Ok(obs
        .iter()
        .enumerate()
        .map(|(j, x)| (x - c.whitening.mean()[j]) * p[j])
        .collect())
}

/// Relative shares `s_j = z_j^2 / sum z^2`; all zeros when the total is zero.
pub fn share_profile(z2: &[f64]) -> Vec<f64> {
    let total: f64 = z2.iter().sum();
    if total > 0.0 {
        z2.iter().map(|v| v / total).collect()
    } else {
        vec![0.0; z2.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocateResult {
    pub node: String,
    pub index: usize,
    /// Euclidean distance to the true location, when one was given.
    pub distance: Option<f64>,
    pub success: Option<bool>,
}

/// Argmax node of `field`, scored against an optional true location.
pub fn locate(field: &NodeField, graph: &NetworkGraph, truth: Option<&Location>, radius: f64) -> Result<LocateResult> {
    if field.values.len() != graph.len() {
        return Err(Error::DimensionMismatch {
            expected: graph.len(),
            actual: field.values.len(),
        });
    }
    let index = field.argmax();
    let node = graph.node(index).id.clone();
    let distance = truth
        .map(|t| graph.euclidean(&Location::Node(node.clone()), t))
        .transpose()?;
    Ok(LocateResult {
        node,
        index,
        distance,
        success: distance.map(|d| d <= radius),
    })
}

/// Builds fields from per-sensor z^2 values with one reusable factorization.
pub struct FieldBuilder<'g> {
    interp: LaplaceInterpolator<'g>,
    sensors: Vec<(String, usize)>,
}

impl<'g> FieldBuilder<'g> {
    /// `sensors` are the ids whose values will be supplied, in order.
    pub fn new(graph: &'g NetworkGraph, sensors: &[&str], weighting: EdgeWeighting) -> Result<Self> {
        let bound = sensors
            .iter()
            .map(|s| graph.sensor_node(s).map(|n| (s.to_string(), n)))
            .collect::<Result<Vec<_>>>()?;
        let mut nodes: Vec<usize> = bound.iter().map(|(_, n)| *n).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let interp = LaplaceInterpolator::new(graph, &nodes, weighting, SolverChoice::Auto)?;
        Ok(Self { interp, sensors: bound })
    }

    pub fn graph(&self) -> &'g NetworkGraph {
        self.interp.graph()
    }

    pub fn sensors(&self) -> impl Iterator<Item = &str> {
        self.sensors.iter().map(|(s, _)| s.as_str())
    }

    /// Interpolated field; co-located sensors contribute their maximum.
    pub fn field(&self, values: &[f64]) -> Result<NodeField> {
        if values.len() != self.sensors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sensors.len(),
                actual: values.len(),
            });
        }
        let mut node_values = vec![f64::NEG_INFINITY; self.graph().len()];
        for ((_, n), v) in self.sensors.iter().zip(values) {
            node_values[*n] = node_values[*n].max(*v);
        }
        for v in &mut node_values {
            if *v == f64::NEG_INFINITY {
                *v = 0.0;
            }
        }
        self.interp.solve(&node_values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub rank: usize,
    /// Argmax node; `None` once every sensor has been suppressed.
    pub node: Option<String>,
    pub value: f64,
    pub exhausted: bool,
}

/// Ranked candidates: take the argmax, zero every sensor within `radius`
/// (shortest-path meters) of it, re-interpolate, repeat `k` times.
pub fn iterative_suppress(builder: &FieldBuilder<'_>, z2: &[f64], k: usize, radius: f64) -> Result<Vec<Candidate>> {
    if k == 0 {
        return Err(Error::Config("candidate count must be at least 1".into()));
    }
    let graph = builder.graph();
    let mut values = z2.to_vec();
    let mut out = Vec::with_capacity(k);
    for rank in 1..=k {
        if values.iter().all(|v| *v <= 0.0) {
            warn!("all sensors suppressed after {} candidates", rank - 1);
            out.push(Candidate {
                rank,
                node: None,
                value: 0.0,
                exhausted: true,
            });
            continue;
        }
        let field = builder.field(&values)?;
        let top = field.argmax();
        out.push(Candidate {
            rank,
            node: Some(graph.node(top).id.clone()),
            value: field.values[top],
            exhausted: false,
        });
        let dist = graph.shortest_paths(top);
        for ((_, n), v) in builder.sensors.iter().zip(values.iter_mut()) {
            if dist[*n] <= radius {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

/// Per-sensor admissible z band `(lower, upper)`.
pub type Band = (f64, f64);

/// Empirical quantile with linear interpolation between order statistics.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// z bands from quantiles of the training z-scores (default 0.5% and 99.5%).
pub fn operational_bands(panel: &SensorPanel, model: &TrainedModel, lower: f64, upper: f64) -> Result<Vec<Band>> {
    if !(0.0..0.5).contains(&lower) || !(0.5..=1.0).contains(&upper) {
        return Err(Error::Config(format!("band quantiles ({lower}, {upper}) are invalid")));
    }
    let ids = model.sensor_ids();
    let panel = panel.select(&ids)?;
    if panel.is_empty() {
        return Err(Error::SeriesTooShort { len: 0, required: 1 });
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(panel.len()); model.dim()];
    for (t, ts) in panel.timestamps().iter().enumerate() {
        let k = assign_cluster(*ts, model.scheme());
        let zf = z_field(panel.row(t), model, k, Some(DEFAULT_SIGMA_FLOOR))?;
        for (c, z) in cols.iter_mut().zip(zf.z) {
            c.push(z);
        }
    }
    Ok(cols
        .into_iter()
        .map(|mut c| {
            c.sort_by(f64::total_cmp);
            (quantile_sorted(&c, lower), quantile_sorted(&c, upper))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Leak,
    SensorBias,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Leak => "leak",
            Verdict::SensorBias => "sensor-bias",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminationParams {
    /// Share above which a lone out-of-band sensor is called biased.
    pub concentration: f64,
    /// Fraction of the remaining share the top sensor's neighbours must hold.
    pub coherence: f64,
    /// How many graph-nearest sensors count as neighbours.
    pub neighbours: usize,
}

impl Default for DiscriminationParams {
    fn default() -> Self {
        Self {
            concentration: 0.9,
            coherence: 0.25,
            neighbours: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrimination {
    pub verdict: Verdict,
    /// Number of sensors outside their band.
    pub out_of_range: usize,
    pub shares: Vec<f64>,
    /// Sensor with the largest share.
    pub top: usize,
    /// Share of the remainder held by the top sensor's neighbours.
    pub neighbour_share: f64,
}

/// Leak, sensor bias or inconclusive from the out-of-range count and
/// the spatial concentration of the share profile.
pub fn discriminate(
    z: &[f64],
    bands: &[Band],
    graph: &NetworkGraph,
    sensors: &[&str],
    params: &DiscriminationParams,
) -> Result<Discrimination> {
    if z.len() != bands.len() || z.len() != sensors.len() {
        return Err(Error::DimensionMismatch {
            expected: sensors.len(),
            actual: z.len().min(bands.len()),
        });
    }
    let out_of_range = z
        .iter()
        .zip(bands)
        .filter(|(v, (lo, hi))| **v < *lo || **v > *hi)
        .count();
    let z2: Vec<f64> = z.iter().map(|v| v * v).collect();
    let shares = share_profile(&z2);
    let top = shares
        .iter()
        .enumerate()
        .fold(0, |best, (j, v)| if *v > shares[best] { j } else { best });

    let nodes = sensors
        .iter()
        .map(|s| graph.sensor_node(s))
        .collect::<Result<Vec<_>>>()?;
    let dist = graph.shortest_paths(nodes[top]);
    let mut others: Vec<usize> = (0..sensors.len()).filter(|&j| j != top).collect();
    others.sort_by(|&a, &b| dist[nodes[a]].total_cmp(&dist[nodes[b]]).then(a.cmp(&b)));
    let remaining = 1.0 - shares[top];
    let near: f64 = others.iter().take(params.neighbours).map(|&j| shares[j]).sum();
    let neighbour_share = if remaining > 0.0 { near / remaining } else { 0.0 };

    let verdict = if out_of_range == 1 && shares[top] > params.concentration {
        Verdict::SensorBias
    } else if out_of_range >= 2 && neighbour_share >= params.coherence {
        Verdict::Leak
    } else {
        Verdict::Inconclusive
    };
    Ok(Discrimination {
        verdict,
        out_of_range,
        shares,
        top,
        neighbour_share,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::SensorInfo;
    use crate::stats::{mahalanobis_sq, MomentEstimate, RidgePolicy};
    use crate::training::ClusterScheme;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(mean: Vec<f64>, cov: DMatrix<f64>) -> TrainedModel {
        let s = mean.len();
        let m = MomentEstimate {
            mean: DVector::from_vec(mean),
            cov,
            n: 100,
        };
        let sensors = (0..s).map(|j| SensorInfo::pressure(format!("s{j}"))).collect();
        TrainedModel::from_moments(ClusterScheme::single(), sensors, vec![m], RidgePolicy::Auto).unwrap()
    }

    fn line_graph(n: usize, spacing: f64) -> NetworkGraph {
        let nodes = (0..n)
            .map(|i| Node {
                id: format!("n{i}"),
                x: i as f64 * spacing,
                y: 0.0,
            })
            .collect();
        let edges = (0..n - 1)
            .map(|i| Edge {
                id: format!("e{i}"),
                u: format!("n{i}"),
                v: format!("n{}", i + 1),
                length: spacing,
            })
            .collect();
        NetworkGraph::new(nodes, edges).unwrap()
    }

    #[test]
    fn z_field_examples() {
        let m = model(vec![1.0, 5.0], DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])));
        let zf = z_field(&[1.0, 5.0], &m, 0, None).unwrap();
        assert_eq!(zf.z, vec![0.0, 0.0]);
        let zf = z_field(&[5.0, 4.0], &m, 0, None).unwrap();
        assert_eq!(zf.z, vec![2.0, -1.0]);
        assert_eq!(zf.z2, vec![4.0, 1.0]);
    }

    #[test]
    fn window_z_averages_scores_before_squaring() {
        let m = model(vec![1.0, 5.0], DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])));
        let t0 = chrono::NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let ts = (0..3).map(|i| t0 + chrono::Duration::hours(i)).collect();
        let sensors = vec![SensorInfo::pressure("s1"), SensorInfo::pressure("s0")];
        // columns swapped relative to the model
        let panel = SensorPanel::new(ts, sensors, vec![4.0, 5.0, 4.0, 9.0, 4.0, 1.0]).unwrap();
        let w = window_z_field(&panel, &m, 0..3).unwrap();
        assert_eq!(w.z, vec![2.0, -1.0]);
        assert_eq!(w.z2, vec![4.0, 1.0]);
        assert_eq!(window_z_field(&panel, &m, 1..2).unwrap().z, vec![4.0, -1.0]);
        assert!(window_z_field(&panel, &m, 2..5).is_err());
    }

    #[test]
    fn contributions_sum_to_t2() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.8, -0.3, 0.8, 1.5, 0.2, -0.3, 0.2, 0.9]);
        let m = model(vec![1.0, 2.0, 3.0], cov.clone());
        assert_eq!(contributions(&[1.0, 2.0, 3.0], &m, 0).unwrap(), vec![0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|j| j as f64 + 1.0 + rng.random_range(-3.0..3.0)).collect();
            let c = contributions(&x, &m, 0).unwrap();
            let t2 = mahalanobis_sq(&x, &m.cluster(0).unwrap().whitening).unwrap();
            let d = DVector::from_fn(3, |i, _| x[i] - (i as f64 + 1.0));
            let oracle = (d.transpose() * cov.clone().try_inverse().unwrap() * &d)[0];
            assert!((c.iter().sum::<f64>() - t2).abs() <= 1e-8 * t2.max(1.0));
            assert!((t2 - oracle).abs() <= 1e-8 * oracle.max(1.0));
        }
        // diagonal covariance: contributions are squared z-scores
        let diag = model(vec![0.0, 0.0], DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0])));
        let c = contributions(&[2.0, 6.0], &diag, 0).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn shares_normalise() {
        let s = share_profile(&[1.0, 3.0, 4.0]);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(share_profile(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn locate_single_hot_sensor() {
        let g = line_graph(7, 100.0).with_sensors([("a", "n0"), ("b", "n3"), ("c", "n6")]).unwrap();
        let fb = FieldBuilder::new(&g, &["a", "b", "c"], EdgeWeighting::Unweighted).unwrap();
        let field = fb.field(&[0.0, 5.0, 0.0]).unwrap();
        let truth = Location::Node("n3".into());
        let r = locate(&field, &g, Some(&truth), DEFAULT_RADIUS).unwrap();
        assert_eq!(r.node, "n3");
        assert_eq!(r.distance, Some(0.0));
        assert_eq!(r.success, Some(true));
        let far = Location::Point { x: 301.0 + 300.0, y: 0.0 };
        assert_eq!(locate(&field, &g, Some(&far), DEFAULT_RADIUS).unwrap().success, Some(false));
    }

    #[test]
    fn suppression_recovers_two_hot_spots() {
        let ids: Vec<String> = (0..11).map(|j| format!("s{j}")).collect();
        let nodes: Vec<String> = (0..11).map(|j| format!("n{}", 2 * j)).collect();
        let g = line_graph(21, 100.0)
            .with_sensors(ids.iter().map(|s| s.as_str()).zip(nodes.iter().map(|n| n.as_str())))
            .unwrap();
        let ids: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        let fb = FieldBuilder::new(&g, &ids, EdgeWeighting::Unweighted).unwrap();
        // hot spots at n4 and n16 with decaying halos
        let z2: Vec<f64> = (0..11)
            .map(|j| {
                let x = 2.0 * j as f64;
                9.0 * (-(x - 4.0).abs() / 2.0).exp() + 6.0 * (-(x - 16.0).abs() / 2.0).exp()
            })
            .collect();
        let cands = iterative_suppress(&fb, &z2, 2, 300.0).unwrap();
        assert_eq!(cands[0].node.as_deref(), Some("n4"));
        assert_eq!(cands[1].node.as_deref(), Some("n16"));

        let one = iterative_suppress(&fb, &z2, 1, 300.0).unwrap();
        let field = fb.field(&z2).unwrap();
        assert_eq!(one[0].node.as_deref(), Some(locate(&field, &g, None, 300.0).unwrap().node.as_str()));

        let all = iterative_suppress(&fb, &z2, 2, 1e6).unwrap();
        assert!(!all[0].exhausted && all[1].exhausted);
    }

    fn bands(s: usize) -> Vec<Band> {
        vec![(-2.6, 2.6); s]
    }

    #[test]
    fn discriminate_bias_leak_and_nothing() {
        let g = line_graph(9, 100.0)
            .with_sensors([("a", "n0"), ("b", "n2"), ("c", "n4"), ("d", "n6"), ("e", "n8")])
            .unwrap();
        let ids = ["a", "b", "c", "d", "e"];
        let p = DiscriminationParams::default();

        let bias = discriminate(&[0.1, -0.3, 9.0, 0.2, 0.1], &bands(5), &g, &ids, &p).unwrap();
        assert_eq!(bias.verdict, Verdict::SensorBias);
        assert_eq!(bias.out_of_range, 1);

        // deficits decaying away from node n4
        let leak: Vec<f64> = [0.0f64, 2.0, 4.0, 6.0, 8.0].iter().map(|x| -8.0 * (-(x - 4.0).abs() / 3.0).exp()).collect();
        let d = discriminate(&leak, &bands(5), &g, &ids, &p).unwrap();
        assert_eq!(d.verdict, Verdict::Leak, "{d:?}");

        let quiet = discriminate(&[0.01, -0.02, 0.0, 0.01, 0.0], &bands(5), &g, &ids, &p).unwrap();
        assert_eq!(quiet.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn bands_cover_training_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t0 = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let ts: Vec<_> = (0..2000).map(|h| t0 + chrono::Duration::hours(h)).collect();
        let values: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sensors = vec![SensorInfo::pressure("s0"), SensorInfo::pressure("s1")];
        let panel = SensorPanel::new(ts, sensors, values).unwrap();
        let m = crate::training::train(&panel, &ClusterScheme::single(), &crate::training::TrainingStrategy::Unfiltered).unwrap();
        let b = operational_bands(&panel, &m, 0.005, 0.995).unwrap();
        // uniform(-1, 1) has sd 1/sqrt(3); its 0.5% quantile in z units is about -1.715
        for (lo, hi) in b {
            assert!((lo + 1.715).abs() < 0.05 && (hi - 1.715).abs() < 0.05, "{lo} {hi}");
        }
    }
}
