//! Stage-one model building: temporal clusters, training-window selection,
//! per-cluster moments and detection thresholds.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{SensorInfo, SensorPanel, SensorRole};
use crate::stats::{estimate_moments, f_quantile, ks_test, normal_cdf, MomentEstimate, RidgePolicy, WhiteningOperator};

/// Calendar mapping from timestamps to temporal cluster ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClusterScheme {
    /// 24 clusters, one per hour of the day.
    HourOfDay,
    /// 12 clusters of two consecutive hours.
    TwoHourBlock,
    /// 48 clusters: hours 0..24 on weekdays, 24..48 on weekends.
    WeekdayWeekendHour,
    /// Hour of day mapped explicitly; unmapped hours fall into cluster 0.
    ExplicitMap { hours: BTreeMap<u32, usize>, clusters: usize },
}

impl Default for ClusterScheme {
    fn default() -> Self {
        ClusterScheme::HourOfDay
    }
}

impl ClusterScheme {
    /// A single cluster covering every time point.
    pub fn single() -> Self {
        ClusterScheme::ExplicitMap {
            hours: BTreeMap::new(),
            clusters: 1,
        }
    }

    pub fn explicit(hours: BTreeMap<u32, usize>) -> Result<Self> {
        if let Some((h, _)) = hours.iter().find(|(h, _)| **h > 23) {
            return Err(Error::Config(format!("explicit cluster map has invalid hour {h}")));
        }
        let clusters = hours.values().copied().max().map_or(1, |m| m + 1);
        let mut used = vec![false; clusters];
        used[0] = true;
        for &k in hours.values() {
            used[k] = true;
        }
        if let Some(gap) = used.iter().position(|u| !u) {
            return Err(Error::Config(format!(
                "explicit cluster ids must form a contiguous range; id {gap} is unused"
            )));
        }
        Ok(ClusterScheme::ExplicitMap { hours, clusters })
    }

    pub fn num_clusters(&self) -> usize {
        match self {
            ClusterScheme::HourOfDay => 24,
            ClusterScheme::TwoHourBlock => 12,
            ClusterScheme::WeekdayWeekendHour => 48,
            ClusterScheme::ExplicitMap { clusters, .. } => *clusters,
        }
    }
}

impl fmt::Display for ClusterScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterScheme::HourOfDay => f.write_str("hour-of-day"),
            ClusterScheme::TwoHourBlock => f.write_str("two-hour-block"),
            ClusterScheme::WeekdayWeekendHour => f.write_str("weekday-weekend-hour"),
            ClusterScheme::ExplicitMap { hours, clusters } if hours.is_empty() && *clusters == 1 => {
                f.write_str("single")
            }
            ClusterScheme::ExplicitMap { hours, .. } => {
                let parts: Vec<String> = hours.iter().map(|(h, k)| format!("{h}={k}")).collect();
                write!(f, "map:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for ClusterScheme {
    type Err = Error;

    /// `hour-of-day`, `two-hour-block`, `weekday-weekend-hour`, `single`, or
    /// `map:H=K,H=K,...`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hour-of-day" | "hourly" => Ok(ClusterScheme::HourOfDay),
            "two-hour-block" => Ok(ClusterScheme::TwoHourBlock),
            "weekday-weekend-hour" => Ok(ClusterScheme::WeekdayWeekendHour),
            "single" => Ok(ClusterScheme::single()),
            other => {
                let body = other
                    .strip_prefix("map:")
                    .ok_or_else(|| Error::Config(format!("unknown cluster scheme '{other}'")))?;
                let mut hours = BTreeMap::new();
                for pair in body.split(',').filter(|p| !p.is_empty()) {
                    let (h, k) = pair
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("bad cluster map entry '{pair}'")))?;
                    let h: u32 = h.trim().parse().map_err(|_| Error::Config(format!("bad hour '{h}'")))?;
                    let k: usize = k.trim().parse().map_err(|_| Error::Config(format!("bad cluster id '{k}'")))?;
                    hours.insert(h, k);
                }
                ClusterScheme::explicit(hours)
            }
        }
    }
}

/// Cluster id of a timestamp under `scheme`. Total: every timestamp maps somewhere.
pub fn assign_cluster(t: NaiveDateTime, scheme: &ClusterScheme) -> usize {
    let hour = t.hour() as usize;
    match scheme {
        ClusterScheme::HourOfDay => hour,
        ClusterScheme::TwoHourBlock => hour / 2,
        ClusterScheme::WeekdayWeekendHour => match t.weekday() {
            Weekday::Sat | Weekday::Sun => 24 + hour,
            _ => hour,
        },
        ClusterScheme::ExplicitMap { hours, .. } => hours.get(&(hour as u32)).copied().unwrap_or(0),
    }
}

/// How training rows are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingStrategy {
    /// Only rows inside the given `[start, end)` windows, assumed anomaly-free.
    CleanWindows(Vec<(NaiveDateTime, NaiveDateTime)>),
    /// Drop the `fraction` of rows per cluster with the lowest mean pressure z-score.
    DropLowest { fraction: f64 },
    /// Use every row.
    Unfiltered,
}

impl TrainingStrategy {
    pub fn drop_lowest(fraction: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&fraction) {
            return Err(Error::Config(format!(
                "drop fraction {fraction} must lie in [0, 0.5]"
            )));
        }
        Ok(TrainingStrategy::DropLowest { fraction })
    }
}

impl FromStr for TrainingStrategy {
    type Err = Error;

    /// `unfiltered`, `drop-lowest:Q`, or `clean:START/END;START/END`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "unfiltered" {
            return Ok(TrainingStrategy::Unfiltered);
        }
        if s == "mcd" || s.starts_with("mcd:") {
            return Err(Error::Config(
                "the minimum covariance determinant strategy is reserved and not available".into(),
            ));
        }
        if let Some(q) = s.strip_prefix("drop-lowest:") {
            let q: f64 = q
                .parse()
                .map_err(|_| Error::Config(format!("bad drop fraction '{q}'")))?;
            return TrainingStrategy::drop_lowest(q);
        }
        if let Some(body) = s.strip_prefix("clean:") {
            let mut windows = Vec::new();
            for w in body.split(';').filter(|w| !w.is_empty()) {
                let (a, b) = w
                    .split_once('/')
                    .ok_or_else(|| Error::Config(format!("bad clean window '{w}' (expected START/END)")))?;
                let a = crate::io::parse_timestamp(a).map_err(Error::Config)?;
                let b = crate::io::parse_timestamp(b).map_err(Error::Config)?;
                if b <= a {
                    return Err(Error::Config(format!("clean window '{w}' ends before it starts")));
                }
                windows.push((a, b));
            }
            if windows.is_empty() {
                return Err(Error::Config("clean strategy needs at least one window".into()));
            }
            return Ok(TrainingStrategy::CleanWindows(windows));
        }
        Err(Error::Config(format!("unknown training strategy '{s}'")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub ridge: RidgePolicy,
}

/// Moments and whitening operator of one temporal cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub id: usize,
    pub moments: MomentEstimate,
    pub whitening: WhiteningOperator,
}

impl ClusterModel {
    pub fn n(&self) -> usize {
        self.moments.n
    }
}

/// Per-cluster statistical model of nominal operation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    scheme: ClusterScheme,
    sensors: Vec<SensorInfo>,
    clusters: Vec<ClusterModel>,
}

/// Minimum cluster size strictly above which a cluster is usable.
pub fn min_cluster_size(s: usize) -> usize {
    s + 2
}

impl TrainedModel {
    /// Assembles a model from per-cluster moments (indexed by cluster id).
    pub fn from_moments(
        scheme: ClusterScheme,
        sensors: Vec<SensorInfo>,
        moments: Vec<MomentEstimate>,
        ridge: RidgePolicy,
    ) -> Result<Self> {
        let s = sensors.len();
        if moments.len() != scheme.num_clusters() {
            return Err(Error::DimensionMismatch {
                expected: scheme.num_clusters(),
                actual: moments.len(),
            });
        }
        let short: Vec<usize> = moments
            .iter()
            .enumerate()
            .filter(|(_, m)| m.n <= min_cluster_size(s))
            .map(|(k, _)| k)
            .collect();
        if !short.is_empty() {
            return Err(Error::InsufficientData {
                clusters: short,
                required: min_cluster_size(s),
            });
        }
        let clusters = moments
            .into_par_iter()
            .enumerate()
            .map(|(k, m)| {
                if m.dim() != s {
                    return Err(Error::DimensionMismatch {
                        expected: s,
                        actual: m.dim(),
                    });
                }
                let whitening = WhiteningOperator::for_cluster(&m, ridge, k)?;
                Ok(ClusterModel {
                    id: k,
                    moments: m,
                    whitening,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scheme,
            sensors,
            clusters,
        })
    }

    pub fn scheme(&self) -> &ClusterScheme {
        &self.scheme
    }

    pub fn sensors(&self) -> &[SensorInfo] {
        &self.sensors
    }

    pub fn sensor_ids(&self) -> Vec<&str> {
        self.sensors.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn dim(&self) -> usize {
        self.sensors.len()
    }

    pub fn clusters(&self) -> &[ClusterModel] {
        &self.clusters
    }

    pub fn cluster(&self, k: usize) -> Result<&ClusterModel> {
        self.clusters.get(k).ok_or(Error::UnusableCluster(k))
    }

    pub fn cluster_at(&self, t: NaiveDateTime) -> Result<&ClusterModel> {
        self.cluster(assign_cluster(t, &self.scheme))
    }
}

fn in_windows(t: NaiveDateTime, windows: &[(NaiveDateTime, NaiveDateTime)]) -> bool {
    windows.iter().any(|(a, b)| t >= *a && t < *b)
}

/// Row indices of `rows` that survive the drop-lowest filter.
fn drop_lowest_rows(panel: &SensorPanel, rows: &[usize], fraction: f64, cluster: usize) -> Vec<usize> {
    let n_drop = (fraction * rows.len() as f64).floor() as usize;
    if n_drop == 0 {
        return rows.to_vec();
    }
    let mut cols: Vec<usize> = panel
        .sensors()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.role == SensorRole::Pressure)
        .map(|(j, _)| j)
        .collect();
    if cols.is_empty() {
        warn!("cluster {cluster}: no pressure sensors, ranking rows by all sensors");
        cols = (0..panel.dim()).collect();
    }
    let n = rows.len() as f64;
    let stats: Vec<(usize, f64, f64)> = cols
        .iter()
        .map(|&j| {
            let mean = rows.iter().map(|&t| panel.row(t)[j]).sum::<f64>() / n;
            let var = rows.iter().map(|&t| (panel.row(t)[j] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (j, mean, var.sqrt())
        })
        .collect();
    let mut scored: Vec<(f64, usize)> = rows
        .iter()
        .map(|&t| {
            let row = panel.row(t);
            let score = stats
                .iter()
                .map(|&(j, m, sd)| if sd > 0.0 { (row[j] - m) / sd } else { 0.0 })
                .sum::<f64>()
                / stats.len() as f64;
            (score, t)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<usize> = scored[n_drop..].iter().map(|&(_, t)| t).collect();
    kept.sort_unstable();
    kept
}

/// Estimates one model per temporal cluster from the retained rows.
pub fn train(panel: &SensorPanel, scheme: &ClusterScheme, strategy: &TrainingStrategy) -> Result<TrainedModel> {
    train_with(panel, scheme, strategy, &TrainOptions::default())
}

pub fn train_with(
    panel: &SensorPanel,
    scheme: &ClusterScheme,
    strategy: &TrainingStrategy,
    options: &TrainOptions,
) -> Result<TrainedModel> {
    let c = scheme.num_clusters();
    let mut by_cluster: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (t, ts) in panel.timestamps().iter().enumerate() {
        if let TrainingStrategy::CleanWindows(w) = strategy {
            if !in_windows(*ts, w) {
                continue;
            }
        }
        by_cluster[assign_cluster(*ts, scheme)].push(t);
    }
    if let TrainingStrategy::DropLowest { fraction } = strategy {
        if !(0.0..=0.5).contains(fraction) {
            return Err(Error::Config(format!("drop fraction {fraction} must lie in [0, 0.5]")));
        }
        by_cluster = by_cluster
            .into_par_iter()
            .enumerate()
            .map(|(k, rows)| drop_lowest_rows(panel, &rows, *fraction, k))
            .collect();
    }
    let s = panel.dim();
    let short: Vec<usize> = by_cluster
        .iter()
        .enumerate()
        .filter(|(_, rows)| rows.len() <= min_cluster_size(s))
        .map(|(k, _)| k)
        .collect();
    if !short.is_empty() {
        return Err(Error::InsufficientData {
            clusters: short,
            required: min_cluster_size(s),
        });
    }
    let moments = by_cluster
        .par_iter()
        .map(|rows| {
            let sample: Vec<&[f64]> = rows.iter().map(|&t| panel.row(t)).collect();
            estimate_moments(&sample)
        })
        .collect::<Result<Vec<_>>>()?;
    TrainedModel::from_moments(scheme.clone(), panel.sensors().to_vec(), moments, options.ridge)
}

/// Detection thresholds of one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Baseline level: expected value of the F-scaled statistic.
    pub theta0: f64,
    /// Critical level: upper `alpha` quantile of `F(s, n - s)`.
    pub theta1: f64,
}

pub fn cluster_thresholds(s: usize, n: usize, alpha: f64) -> Result<Thresholds> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("significance level {alpha} is outside (0, 1)")));
    }
    if n <= s + 2 {
        return Err(Error::DegreesOfFreedom(format!(
            "thresholds need n > s + 2 (s = {s}, n = {n})"
        )));
    }
    let d2 = n - s;
    let theta1 = f_quantile(1.0 - alpha, s as u32, d2 as u32)?;
    let theta0 = d2 as f64 / (d2 as f64 - 2.0);
    Ok(Thresholds { theta0, theta1 })
}

/// `(theta0, theta1)` for every cluster of `model`, indexed by cluster id.
pub fn thresholds(model: &TrainedModel, alpha: f64) -> Result<Vec<Thresholds>> {
    model
        .clusters()
        .iter()
        .map(|c| cluster_thresholds(model.dim(), c.n(), alpha))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalityOutcome {
    Pass { statistic: f64, p_value: f64 },
    Fail { statistic: f64, p_value: f64 },
    Insufficient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalityEntry {
    pub cluster: usize,
    pub sensor: String,
    pub n: usize,
    pub outcome: NormalityOutcome,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalityReport {
    pub level: f64,
    pub entries: Vec<NormalityEntry>,
}

impl NormalityReport {
    /// Fraction of tested components that passed.
    pub fn pass_rate(&self) -> f64 {
        let tested: Vec<_> = self
            .entries
            .iter()
            .filter(|e| !matches!(e.outcome, NormalityOutcome::Insufficient))
            .collect();
        if tested.is_empty() {
            return 0.0;
        }
        let passed = tested.iter().filter(|e| matches!(e.outcome, NormalityOutcome::Pass { .. })).count();
        passed as f64 / tested.len() as f64
    }
}

/// Minimum per-cluster sample size for the normality screen.
pub const NORMALITY_MIN_N: usize = 8;

/// Per-sensor, per-cluster KS check of the readings against the fitted normal.
///
/// Advisory only; the model is not altered.
pub fn normality_screen(panel: &SensorPanel, model: &TrainedModel, level: f64) -> Result<NormalityReport> {
    let ids = model.sensor_ids();
    let panel = panel.select(&ids)?;
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); model.scheme().num_clusters()];
    for (t, ts) in panel.timestamps().iter().enumerate() {
        rows[assign_cluster(*ts, model.scheme())].push(t);
    }
    let mut entries = Vec::new();
    for cluster in model.clusters() {
        let idx = &rows[cluster.id];
        let sd = cluster.moments.std_devs();
        for (j, id) in ids.iter().enumerate() {
            let outcome = if idx.len() < NORMALITY_MIN_N {
                NormalityOutcome::Insufficient
            } else {
                let sample: Vec<f64> = idx.iter().map(|&t| panel.row(t)[j]).collect();
                let (mu, sigma) = (cluster.moments.mean[j], sd[j]);
                if sigma <= 0.0 {
                    NormalityOutcome::Fail {
                        statistic: 1.0,
                        p_value: 0.0,
                    }
                } else {
                    let (d, p) = ks_test(&sample, |x| normal_cdf((x - mu) / sigma));
                    if p >= level {
                        NormalityOutcome::Pass {
                            statistic: d,
                            p_value: p,
                        }
                    } else {
                        NormalityOutcome::Fail {
                            statistic: d,
                            p_value: p,
                        }
                    }
                }
            };
            entries.push(NormalityEntry {
                cluster: cluster.id,
                sensor: id.to_string(),
                n: idx.len(),
                outcome,
            });
        }
    }
    Ok(NormalityReport { level, entries })
}
