//! Stage-two scoring and the two-threshold alarm rule, plus the evaluation
//! metrics used to compare detections against ground truth.

use chrono::{Duration, NaiveDateTime};
use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::event::{EventRecord, Location};
use crate::localization::NetworkGraph;
use crate::panel::SensorPanel;
use crate::stats::{t2_to_f, wilson_hilferty};
use crate::training::{assign_cluster, Thresholds, TrainedModel};

/// Default moving-average window (steps).
pub const DEFAULT_WINDOW: usize = 12;

/// Per-step Hotelling statistics of a scored panel.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub clusters: Vec<usize>,
    pub t2: Vec<f64>,
    pub t2f: Vec<f64>,
    /// Trailing mean of `t2f`; `None` for the first `window - 1` steps.
    pub ma: Vec<Option<f64>>,
    pub wh: Vec<f64>,
    pub window: usize,
}

impl StatisticSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Trailing mean over the most recent `window` values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<Option<f64>> {
    (0..values.len())
        .map(|t| {
            if t + 1 < window {
                None
            } else {
                Some(values[t + 1 - window..=t].iter().sum::<f64>() / window as f64)
            }
        })
        .collect()
}

/// Whitens every row under its cluster's model and computes T^2, the
/// F-scaled T^2, its moving average and the Wilson-Hilferty transform.
///
/// Columns are bound by sensor name; extra panel columns are ignored.
pub fn score(model: &TrainedModel, panel: &SensorPanel, window: usize) -> Result<StatisticSeries> {
    if window == 0 {
        return Err(Error::Config("moving-average window must be at least 1".into()));
    }
    let panel = panel.select(&model.sensor_ids())?;
    let s = model.dim();
    let rows: Vec<(usize, f64, f64)> = (0..panel.len())
        .into_par_iter()
        .map(|t| {
            let k = assign_cluster(panel.timestamps()[t], model.scheme());
            let cluster = model.cluster(k)?;
            let t2 = cluster.whitening.whiten(panel.row(t))?.norm_squared();
            Ok((k, t2, t2_to_f(t2, s, cluster.n())?))
        })
        .collect::<Result<_>>()?;
    let clusters: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let t2: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let t2f: Vec<f64> = rows.iter().map(|r| r.2).collect();
    Ok(StatisticSeries {
        timestamps: panel.timestamps().to_vec(),
        ma: moving_average(&t2f, window),
        wh: t2.iter().map(|v| wilson_hilferty(*v, s)).collect(),
        clusters,
        t2,
        t2f,
        window,
    })
}

/// Binary alarm state per step.
#[derive(Debug, Clone, PartialEq)]
pub struct StatusSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub status: Vec<bool>,
}

fn check_order(theta1: f64, theta0: f64) -> Result<()> {
    if !(theta1 > theta0 && theta0 > 0.0) {
        return Err(Error::ThresholdOrder { theta1, theta0 });
    }
    Ok(())
}

/// Two-threshold scan: raise when the average exceeds `theta1`, clear when it
/// drops below `theta0`; undefined steps keep the previous state.
pub fn hysteresis_scan(ma: &[Option<f64>], mut bound: impl FnMut(usize) -> (f64, f64), initial: bool) -> Vec<bool> {
    let mut state = initial;
    ma.iter()
        .enumerate()
        .map(|(t, m)| {
            if let Some(m) = m {
                let (theta1, theta0) = bound(t);
                if !state && *m > theta1 {
                    state = true;
                } else if state && *m < theta0 {
                    state = false;
                }
            }
            state
        })
        .collect()
}

pub fn hysteresis(series: &StatisticSeries, theta1: f64, theta0: f64, initial: bool) -> Result<StatusSeries> {
    check_order(theta1, theta0)?;
    Ok(StatusSeries {
        timestamps: series.timestamps.clone(),
        status: hysteresis_scan(&series.ma, |_| (theta1, theta0), initial),
    })
}

/// Hysteresis with the thresholds of each step's own cluster.
pub fn hysteresis_by_cluster(series: &StatisticSeries, thresholds: &[Thresholds], initial: bool) -> Result<StatusSeries> {
    for th in thresholds {
        check_order(th.theta1, th.theta0)?;
    }
    if let Some(&k) = series.clusters.iter().find(|&&k| k >= thresholds.len()) {
        return Err(Error::UnusableCluster(k));
    }
    Ok(StatusSeries {
        timestamps: series.timestamps.clone(),
        status: hysteresis_scan(
            &series.ma,
            |t| {
                let th = thresholds[series.clusters[t]];
                (th.theta1, th.theta0)
            },
            initial,
        ),
    })
}

/// Time from `onset` to the first alarm at or after it.
pub fn detection_delay(status: &StatusSeries, onset: NaiveDateTime) -> Result<Option<Duration>> {
    let (first, last) = match (status.timestamps.first(), status.timestamps.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(Error::SeriesTooShort { len: 0, required: 1 }),
    };
    if onset < first || onset > last {
        return Err(Error::domain(format!("onset {onset} lies outside the series [{first}, {last}]")));
    }
    Ok(status
        .timestamps
        .iter()
        .zip(&status.status)
        .find(|(t, s)| **t >= onset && **s)
        .map(|(t, _)| *t - onset))
}

/// Number of active anomalies per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakCountSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub count: Vec<u32>,
}

/// Count series from per-step net changes, moving at most one unit per step.
///
/// Changes that cannot be applied in their own step carry over to the next;
/// a count that would go negative is held at zero with a warning.
pub fn leak_count_from_changes(grid: &[NaiveDateTime], changes: &[i64]) -> LeakCountSeries {
    let mut count = Vec::with_capacity(grid.len());
    let (mut current, mut pending) = (0i64, 0i64);
    for (t, d) in changes.iter().enumerate() {
        pending += d;
        let step = pending.clamp(-1, 1);
        current += step;
        pending -= step;
        if current < 0 {
            warn!("anomaly count went negative at {}; holding at zero", grid[t]);
            current = 0;
            pending = 0;
        }
        count.push(current as u32);
    }
    LeakCountSeries {
        timestamps: grid.to_vec(),
        count,
    }
}

/// Count series from events active on their closed `[start, end]` interval.
pub fn leak_count_from_events(events: &[EventRecord], grid: &[NaiveDateTime]) -> LeakCountSeries {
    let mut changes = vec![0i64; grid.len()];
    for e in events {
        if let Some(end) = e.end {
            if end < e.start {
                warn!("event '{}' ends before it starts", e.id);
            }
        }
        if let Some(i) = grid.iter().position(|t| *t >= e.start) {
            changes[i] += 1;
        }
        if let Some(end) = e.end {
            if let Some(i) = grid.iter().position(|t| *t > end) {
                changes[i] -= 1;
            }
        }
    }
    leak_count_from_changes(grid, &changes)
}

/// Step length used for grid point `t` (forward difference, last step repeats).
fn step_hours(grid: &[NaiveDateTime], t: usize) -> f64 {
    let d = if t + 1 < grid.len() {
        grid[t + 1] - grid[t]
    } else if t > 0 {
        grid[t] - grid[t - 1]
    } else {
        Duration::zero()
    };
    d.num_milliseconds() as f64 / 3_600_000.0
}

/// `sum |N_t - N^_t| dt` in hours.
pub fn leak_hours(truth: &LeakCountSeries, estimate: &LeakCountSeries) -> Result<f64> {
    if truth.timestamps != estimate.timestamps {
        return Err(Error::GridMismatch(format!(
            "count series have different grids ({} vs {} points)",
            truth.timestamps.len(),
            estimate.timestamps.len()
        )));
    }
    Ok(truth
        .count
        .iter()
        .zip(&estimate.count)
        .enumerate()
        .map(|(t, (a, b))| (*a as f64 - *b as f64).abs() * step_hours(&truth.timestamps, t))
        .sum())
}

/// A detection to be scored: alarm time and estimated location.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub time: NaiveDateTime,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionReport {
    pub true_positives: usize,
    pub events: usize,
    pub tp_rate: f64,
    pub fp_count: usize,
    /// Per truth event: index of the matched detection.
    pub matched: Vec<Option<usize>>,
    /// Per truth event: detection time minus start, in hours.
    pub delay_hours: Vec<Option<f64>>,
}

/// Greedy one-to-one matching, earliest detection first. A detection matches
/// an unmatched event active at its time whose location lies within
/// `radius` meters; among several, the earliest-starting event wins.
pub fn confusion_eval(
    detections: &[Detection],
    truth: &[EventRecord],
    radius: f64,
    graph: &NetworkGraph,
) -> Result<ConfusionReport> {
    let truth_xy = truth
        .iter()
        .map(|e| {
            let loc = e
                .location
                .as_ref()
                .ok_or_else(|| Error::UnresolvableLocation(format!("event '{}' has no location", e.id)))?;
            graph.resolve(loc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by_key(|&i| (detections[i].time, i));
    let mut matched = vec![None; truth.len()];
    let mut fp = 0;
    for i in order {
        let d = &detections[i];
        let (x, y) = graph.resolve(&d.location)?;
        let best = truth
            .iter()
            .enumerate()
            .filter(|(j, e)| matched[*j].is_none() && e.is_active(d.time))
            .filter(|(j, _)| (truth_xy[*j].0 - x).hypot(truth_xy[*j].1 - y) <= radius)
            .min_by_key(|(j, e)| (e.start, *j));
        match best {
            Some((j, _)) => matched[j] = Some(i),
            None => fp += 1,
        }
    }
    let tp = matched.iter().filter(|m| m.is_some()).count();
    let delay_hours = matched
        .iter()
        .zip(truth)
        .map(|(m, e)| m.map(|i| (detections[i].time - e.start).num_seconds() as f64 / 3600.0))
        .collect();
    Ok(ConfusionReport {
        true_positives: tp,
        events: truth.len(),
        tp_rate: if truth.is_empty() { 0.0 } else { tp as f64 / truth.len() as f64 },
        fp_count: fp,
        matched,
        delay_hours,
    })
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("{p} is not a probability")));
    }
    Ok(())
}

/// Probability of at least one false alarm among `s` independent tests at level `p`.
pub fn fa_combination(p: f64, s: usize) -> Result<f64> {
    check_probability(p)?;
    if s == 0 {
        return Err(Error::domain("sensor count must be at least 1"));
    }
    Ok(1.0 - (1.0 - p).powi(s as i32))
}

/// Per-test level giving overall false-alarm probability `p_total` over `s` tests.
pub fn fa_per_test(p_total: f64, s: usize) -> Result<f64> {
    check_probability(p_total)?;
    if s == 0 {
        return Err(Error::domain("sensor count must be at least 1"));
    }
    Ok(1.0 - (1.0 - p_total).powf(1.0 / s as f64))
}

/// Bonferroni per-test level `p_fa / s`.
pub fn bonferroni(p_fa: f64, s: usize) -> Result<f64> {
    check_probability(p_fa)?;
    if s == 0 {
        return Err(Error::domain("sensor count must be at least 1"));
    }
    Ok(p_fa / s as f64)
}
