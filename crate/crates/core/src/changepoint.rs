//! Penalised mean-shift segmentation (PELT) of the alarm statistic and the
//! post-processing that labels change points as anomaly starts and ends.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::NaiveDateTime;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventKind, EventRecord};
use crate::stats::{mean_diff_test, ols_fit, special::t_two_sided_p, RegressionForm};

/// Default minimum segment length.
pub const DEFAULT_MIN_SEG: usize = 6;
/// Intervals shorter than this are not tested and count as stable.
pub const MIN_TESTABLE: usize = 4;

/// Prefix sums for O(1) within-segment sum of squared deviations.
struct SseCost {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl SseCost {
    fn new(y: &[f64]) -> Self {
        // centring first limits cancellation in s2 - s1^2 / n
        let m = y.iter().sum::<f64>() / y.len().max(1) as f64;
        let mut s1 = vec![0.0; y.len() + 1];
        let mut s2 = vec![0.0; y.len() + 1];
        for (i, v) in y.iter().enumerate() {
            let c = v - m;
            s1[i + 1] = s1[i] + c;
            s2[i + 1] = s2[i] + c * c;
        }
        Self { s1, s2 }
    }

    /// Cost of the half-open segment `[a, b)`.
    fn cost(&self, a: usize, b: usize) -> f64 {
        let n = (b - a) as f64;
        let s = self.s1[b] - self.s1[a];
        (self.s2[b] - self.s2[a] - s * s / n).max(0.0)
    }
}

/// Within-segment sum of squared deviations from the segment mean.
pub fn segment_cost(y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - m) * (v - m)).sum()
}

/// Total penalised cost of splitting `y` at `scps`.
pub fn penalised_cost(y: &[f64], scps: &[usize], penalty: f64) -> f64 {
    let mut bounds = Vec::with_capacity(scps.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(scps);
    bounds.push(y.len());
    bounds.windows(2).map(|w| segment_cost(&y[w[0]..w[1]])).sum::<f64>() + penalty * scps.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segmentation {
    /// First index of each new segment, strictly increasing, within `(0, T)`.
    pub scps: Vec<usize>,
    pub penalty: f64,
    pub min_seg: usize,
    /// Optimal penalised cost.
    pub cost: f64,
}

impl Segmentation {
    /// Segment ranges tiling `0..len`.
    pub fn segments(&self, len: usize) -> Vec<Range<usize>> {
        let mut bounds = vec![0];
        bounds.extend_from_slice(&self.scps);
        bounds.push(len);
        bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }
}

/// Robust penalty `2 sigma^2 ln T`, with sigma from the median absolute
/// deviation of first differences.
pub fn default_penalty(y: &[f64]) -> f64 {
    let n = y.len().max(2);
    let mut d: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let sigma = if d.is_empty() {
        0.0
    } else {
        let med = median(&mut d);
        let mut dev: Vec<f64> = d.iter().map(|v| (v - med).abs()).collect();
        1.4826 * median(&mut dev) / std::f64::consts::SQRT_2
    };
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let sigma = sigma.max(1e-9 * rms.max(1.0));
    2.0 * sigma * sigma * (n as f64).ln()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn tie_tolerance(a: f64, b: f64) -> f64 {
    1e-10 * (1.0 + a.abs().max(b.abs()))
}

/// Exact penalised segmentation with pruning.
///
/// Ties within a relative 1e-10 prefer fewer change points, then the
/// earliest last change point.
pub fn pelt(y: &[f64], penalty: f64, min_seg: usize) -> Result<Segmentation> {
    let t_len = y.len();
    if min_seg == 0 {
        return Err(Error::Config("minimum segment length must be at least 1".into()));
    }
    if t_len < 2 * min_seg {
        return Err(Error::SeriesTooShort {
            len: t_len,
            required: 2 * min_seg,
        });
    }
    if !(penalty > 0.0 && penalty.is_finite()) {
        return Err(Error::domain(format!("penalty must be positive, got {penalty}")));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::domain(format!("series value at index {i} is not finite")));
    }
    let cost = SseCost::new(y);
    let mut best = vec![f64::INFINITY; t_len + 1];
    let mut count = vec![usize::MAX; t_len + 1];
    let mut last = vec![0usize; t_len + 1];
    best[0] = -penalty;
    count[0] = 0;
    // (candidate, step at which it was pruned)
    let mut cands: Vec<(usize, Option<usize>)> = Vec::new();
    for t in min_seg..=t_len {
        let fresh = t - min_seg;
        if best[fresh].is_finite() {
            cands.push((fresh, None));
        }
        let mut choice: Option<(f64, usize, usize)> = None;
        for &(tau, _) in &cands {
            let v = best[tau] + cost.cost(tau, t) + penalty;
            let c = count[tau] + usize::from(tau > 0);
            let better = match choice {
                None => true,
                Some((bv, bc, bt)) => {
                    let tol = tie_tolerance(v, bv);
                    if v < bv - tol {
                        true
                    } else if v <= bv + tol {
                        (c, tau) < (bc, bt)
                    } else {
                        false
                    }
                }
            };
            if better {
                choice = Some((v, c, tau));
            }
        }
        if let Some((v, c, tau)) = choice {
            best[t] = v;
            count[t] = c;
            last[t] = tau;
        }
        // a candidate dominated at t stays usable until a split at t is allowed
        let ft = best[t];
        cands.retain_mut(|(tau, pruned)| {
            if let Some(p) = *pruned {
                return t < p + min_seg;
            }
            if ft.is_finite() && best[*tau] + cost.cost(*tau, t) > ft + tie_tolerance(ft, best[*tau]) {
                *pruned = Some(t);
                return min_seg > 1;
            }
            true
        });
    }
    let mut scps = Vec::new();
    let mut t = t_len;
    while t > 0 {
        let tau = last[t];
        if tau > 0 {
            scps.push(tau);
        }
        t = tau;
    }
    scps.reverse();
    Ok(Segmentation {
        scps,
        penalty,
        min_seg,
        cost: best[t_len],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScpLabel {
    AnomalyStart,
    AnomalyEnd,
}

impl fmt::Display for ScpLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScpLabel::AnomalyStart => "anomaly-start",
            ScpLabel::AnomalyEnd => "anomaly-end",
        })
    }
}

impl FromStr for ScpLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "anomaly-start" => Ok(ScpLabel::AnomalyStart),
            "anomaly-end" => Ok(ScpLabel::AnomalyEnd),
            other => Err(format!("unknown change-point label '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledScp {
    pub index: usize,
    /// Set only when the mean change across the point is significant.
    pub label: Option<ScpLabel>,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Stable,
    Increasing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalLabel {
    pub range: Range<usize>,
    pub trend: Trend,
    /// Least-squares slope in statistic units per step.
    pub slope: f64,
    pub p_value: f64,
}

/// How the redundancy check compares the slopes of adjacent increasing intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeRule {
    /// Remove when the two-regression t-test does not reject equal slopes at `alpha`.
    TTest,
    /// Remove when `|m_a - m_b| < delta`.
    Raw { delta: f64 },
}

impl Default for SlopeRule {
    fn default() -> Self {
        SlopeRule::TTest
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    /// Surviving change points in index order.
    pub scps: Vec<LabeledScp>,
    /// Intervals between the original change points.
    pub intervals: Vec<IntervalLabel>,
    /// Change points removed as redundant.
    pub removed: Vec<usize>,
}

struct SlopeFit {
    slope: f64,
    se: f64,
    n: usize,
}

fn fit_slope(y: &[f64], start: usize) -> Option<SlopeFit> {
    if y.len() < 3 {
        return None;
    }
    let x: Vec<f64> = (0..y.len()).map(|i| (start + i) as f64).collect();
    ols_fit(&x, y, RegressionForm::Linear).ok().map(|f| SlopeFit {
        slope: f.slope(),
        se: f.std_errors[1],
        n: y.len(),
    })
}

/// Labels intervals and change points and removes redundant change points.
pub fn classify(y: &[f64], seg: &Segmentation, alpha: f64, rule: SlopeRule) -> Result<Classification> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("significance level {alpha} is outside (0, 1)")));
    }
    if seg.scps.windows(2).any(|w| w[0] >= w[1]) || seg.scps.iter().any(|&i| i == 0 || i >= y.len()) {
        return Err(Error::domain("change points must be strictly increasing inside the series"));
    }
    let ranges = seg.segments(y.len());
    let mut intervals = Vec::with_capacity(ranges.len());
    let mut fits = Vec::with_capacity(ranges.len());
    for r in &ranges {
        let part = &y[r.clone()];
        let fit = fit_slope(part, r.start);
        let slope = fit.as_ref().map_or(0.0, |f| f.slope);
        let (trend, p) = if part.len() < MIN_TESTABLE {
            warn!("interval {}..{} is too short to test; marked stable", r.start, r.end);
            (Trend::Stable, 1.0)
        } else {
            let (a, b) = part.split_at(part.len() / 2);
            let p = mean_diff_test(a, b)?;
            let rising = crate::stats::mean(b) > crate::stats::mean(a);
            (if p < alpha && rising { Trend::Increasing } else { Trend::Stable }, p)
        };
        intervals.push(IntervalLabel {
            range: r.clone(),
            trend,
            slope,
            p_value: p,
        });
        fits.push(fit);
    }

    let mut scps = Vec::with_capacity(seg.scps.len());
    let mut removed = Vec::new();
    for (k, &index) in seg.scps.iter().enumerate() {
        let (ia, ib) = (&intervals[k], &intervals[k + 1]);
        if ia.trend == Trend::Increasing && ib.trend == Trend::Increasing {
            if let (Some(fa), Some(fb)) = (&fits[k], &fits[k + 1]) {
                let similar = match rule {
                    SlopeRule::Raw { delta } => (fa.slope - fb.slope).abs() < delta,
                    SlopeRule::TTest => {
                        let se = (fa.se * fa.se + fb.se * fb.se).sqrt();
                        let df = (fa.n + fb.n) as f64 - 4.0;
                        if se > 0.0 && df > 0.0 {
                            t_two_sided_p((fa.slope - fb.slope) / se, df) >= alpha
                        } else {
                            fa.slope == fb.slope
                        }
                    }
                };
                if similar {
                    removed.push(index);
                    continue;
                }
            }
        }
        let (a, b) = (&y[ia.range.clone()], &y[ib.range.clone()]);
        let (label, p) = if a.len() < 2 || b.len() < 2 {
            warn!("change point {index} has a neighbouring interval shorter than 2 points");
            (None, 1.0)
        } else {
            let p = mean_diff_test(a, b)?;
            let label = (p < alpha).then(|| {
                if crate::stats::mean(b) > crate::stats::mean(a) {
                    ScpLabel::AnomalyStart
                } else {
                    ScpLabel::AnomalyEnd
                }
            });
            (label, p)
        };
        scps.push(LabeledScp { index, label, p_value: p });
    }
    Ok(Classification {
        scps,
        intervals,
        removed,
    })
}

/// Pairs each anomaly end with the oldest open start (first in, first out).
/// Starts left open become open-ended events; ends with nothing open are dropped.
///
/// An event is incipient when the interval following its start is increasing.
pub fn events_from_labels(classification: &Classification, grid: &[NaiveDateTime]) -> Result<Vec<EventRecord>> {
    let mut open: VecDeque<usize> = VecDeque::new();
    let mut pairs: Vec<(usize, Option<usize>)> = Vec::new();
    for scp in &classification.scps {
        if scp.index >= grid.len() {
            return Err(Error::IndexOutOfRange {
                index: scp.index,
                dim: grid.len(),
            });
        }
        match scp.label {
            Some(ScpLabel::AnomalyStart) => open.push_back(scp.index),
            Some(ScpLabel::AnomalyEnd) => match open.pop_front() {
                Some(s) => pairs.push((s, Some(scp.index))),
                None => warn!("anomaly end at index {} has no open start", scp.index),
            },
            None => {}
        }
    }
    pairs.extend(open.into_iter().map(|s| (s, None)));
    pairs.sort_by_key(|p| p.0);
    Ok(pairs
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| {
            let incipient = classification
                .intervals
                .iter()
                .find(|iv| iv.range.start == s)
                .is_some_and(|iv| iv.trend == Trend::Increasing);
            let kind = if incipient { EventKind::Incipient } else { EventKind::Abrupt };
            let mut ev = EventRecord::new(format!("e{}", i + 1), kind, grid[s], e.map(|e| grid[e]));
            ev.detected = Some(grid[s]);
            ev
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Unpruned optimal-partition DP with the same tie rule.
    fn exhaustive(y: &[f64], penalty: f64, min_seg: usize) -> (f64, Vec<usize>) {
        let n = y.len();
        let mut best = vec![f64::INFINITY; n + 1];
        let mut count = vec![usize::MAX; n + 1];
        let mut last = vec![0; n + 1];
        best[0] = -penalty;
        count[0] = 0;
        for t in min_seg..=n {
            for tau in 0..=t - min_seg {
                if !best[tau].is_finite() {
                    continue;
                }
                let v = best[tau] + segment_cost(&y[tau..t]) + penalty;
                let c = count[tau] + usize::from(tau > 0);
                let tol = tie_tolerance(v, best[t]);
                let take = !best[t].is_finite()
                    || v < best[t] - tol
                    || (v <= best[t] + tol && (c, tau) < (count[t], last[t]));
                if take {
                    best[t] = v;
                    count[t] = c;
                    last[t] = tau;
                }
            }
        }
        let mut scps = Vec::new();
        let mut t = n;
        while t > 0 {
            if last[t] > 0 {
                scps.push(last[t]);
            }
            t = last[t];
        }
        scps.reverse();
        (best[n], scps)
    }

    fn grid(n: usize) -> Vec<NaiveDateTime> {
        let t0 = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        (0..n as i64).map(|i| t0 + Duration::hours(i)).collect()
    }

    #[test]
    fn constant_series_has_no_change_points() {
        let y = vec![3.0; 40];
        assert!(pelt(&y, default_penalty(&y), 6).unwrap().scps.is_empty());
    }

    #[test]
    fn single_step_found_at_fifty() {
        let mut y = vec![0.0; 50];
        y.extend(vec![5.0; 50]);
        let pen = default_penalty(&y);
        let seg = pelt(&y, pen, DEFAULT_MIN_SEG).unwrap();
        assert_eq!(seg.scps, vec![50]);
        assert_eq!(exhaustive(&y, pen, DEFAULT_MIN_SEG).1, vec![50]);
    }

    #[test]
    fn staircase_found_at_forty_and_eighty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let y: Vec<f64> = (0..120).map(|i| (i / 40) as f64 + noise.sample(&mut rng)).collect();
        let pen = default_penalty(&y);
        let seg = pelt(&y, pen, DEFAULT_MIN_SEG).unwrap();
        assert_eq!(seg.scps, vec![40, 80]);
        assert_eq!(exhaustive(&y, pen, DEFAULT_MIN_SEG).1, seg.scps);
    }

    #[test]
    fn pruning_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = Normal::new(0.0, 1.0).unwrap();
        for trial in 0..60 {
            let n = 12 + (trial * 7) % 150;
            let y: Vec<f64> = (0..n)
                .map(|i| if i > n / 3 { 3.0 } else { 0.0 } + noise.sample(&mut rng))
                .collect();
            for min_seg in [1, 3, 6] {
                if n < 2 * min_seg {
                    continue;
                }
                let pen = default_penalty(&y);
                let seg = pelt(&y, pen, min_seg).unwrap();
                let (oracle_cost, oracle_scps) = exhaustive(&y, pen, min_seg);
                assert_eq!(seg.scps, oracle_scps, "trial {trial} min_seg {min_seg}");
                assert!((seg.cost - oracle_cost).abs() <= 1e-9 * oracle_cost.abs().max(1.0));
                for w in seg.segments(n) {
                    assert!(w.len() >= min_seg);
                }
            }
        }
    }

    #[test]
    fn more_penalty_never_adds_change_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..150).map(|i| ((i / 30) % 2) as f64 * 2.0 + noise.sample(&mut rng)).collect();
        let mut prev = usize::MAX;
        for pen in [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 200.0] {
            let k = pelt(&y, pen, 3).unwrap().scps.len();
            assert!(k <= prev);
            prev = k;
        }
    }

    #[test]
    fn rejects_short_series() {
        assert!(matches!(pelt(&[1.0; 5], 1.0, 3), Err(Error::SeriesTooShort { .. })));
    }

    fn noisy(levels: impl Fn(usize) -> f64, n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        (0..n).map(|i| levels(i) + noise.sample(&mut rng)).collect()
    }

    #[test]
    fn step_up_and_down_labels() {
        let y = noisy(|i| if (30..60).contains(&i) { 4.0 } else { 1.0 }, 90, 0.1, 4);
        let seg = pelt(&y, default_penalty(&y), DEFAULT_MIN_SEG).unwrap();
        assert_eq!(seg.scps, vec![30, 60]);
        let c = classify(&y, &seg, 0.05, SlopeRule::default()).unwrap();
        assert_eq!(c.scps[0].label, Some(ScpLabel::AnomalyStart));
        assert_eq!(c.scps[1].label, Some(ScpLabel::AnomalyEnd));
        assert!(c.intervals.iter().all(|iv| iv.trend == Trend::Stable));
    }

    #[test]
    fn spurious_point_inside_ramp_is_removed() {
        let y = noisy(|i| 0.05 * i as f64, 80, 0.05, 5);
        let seg = Segmentation {
            scps: vec![40],
            penalty: 1.0,
            min_seg: 6,
            cost: 0.0,
        };
        for rule in [SlopeRule::TTest, SlopeRule::Raw { delta: 0.01 }] {
            let c = classify(&y, &seg, 0.05, rule).unwrap();
            assert!(c.intervals.iter().all(|iv| iv.trend == Trend::Increasing));
            assert!((c.intervals[0].slope - c.intervals[1].slope).abs() < 0.01);
            assert_eq!(c.removed, vec![40], "{rule:?}");
            assert!(c.scps.is_empty());
        }
        // a kink with a much steeper second half is kept
        let kink = noisy(|i| if i < 40 { 0.05 * i as f64 } else { 2.0 + 0.5 * (i - 40) as f64 }, 80, 0.05, 6);
        let c = classify(&kink, &seg, 0.05, SlopeRule::TTest).unwrap();
        assert!(c.removed.is_empty());
        assert_eq!(c.scps[0].label, Some(ScpLabel::AnomalyStart));
    }

    #[test]
    fn removal_leaves_other_labels_unchanged() {
        // step up at 30, ramp over 60..120 split at 90, step down at 150
        let level = |i: usize| match i {
            0..=29 => 0.0,
            30..=59 => 3.0,
            60..=119 => 3.0 + 0.05 * (i - 60) as f64,
            120..=149 => 6.0,
            _ => 0.0,
        };
        let y = noisy(level, 180, 0.05, 7);
        let with = Segmentation { scps: vec![30, 60, 90, 120, 150], penalty: 1.0, min_seg: 6, cost: 0.0 };
        let without = Segmentation { scps: vec![30, 60, 120, 150], penalty: 1.0, min_seg: 6, cost: 0.0 };
        let a = classify(&y, &with, 0.05, SlopeRule::TTest).unwrap();
        assert_eq!(a.removed, vec![90]);
        let b = classify(&y, &without, 0.05, SlopeRule::TTest).unwrap();
        let labels = |c: &Classification, idx: usize| c.scps.iter().find(|s| s.index == idx).unwrap().label;
        for idx in [30, 150] {
            assert_eq!(labels(&a, idx), labels(&b, idx));
        }
    }

    fn labeled(items: &[(usize, ScpLabel)]) -> Classification {
        Classification {
            scps: items
                .iter()
                .map(|&(index, label)| LabeledScp { index, label: Some(label), p_value: 0.0 })
                .collect(),
            intervals: vec![],
            removed: vec![],
        }
    }

    #[test]
    fn event_pairing() {
        let g = grid(60);
        let one = events_from_labels(&labeled(&[(10, ScpLabel::AnomalyStart), (50, ScpLabel::AnomalyEnd)]), &g).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].start, one[0].end), (g[10], Some(g[50])));

        let fifo = events_from_labels(
            &labeled(&[(10, ScpLabel::AnomalyStart), (20, ScpLabel::AnomalyStart), (30, ScpLabel::AnomalyEnd)]),
            &g,
        )
        .unwrap();
        assert_eq!((fifo[0].start, fifo[0].end), (g[10], Some(g[30])));
        assert_eq!((fifo[1].start, fifo[1].end), (g[20], None));

        assert!(events_from_labels(&labeled(&[]), &g).unwrap().is_empty());
        assert!(events_from_labels(&labeled(&[(5, ScpLabel::AnomalyEnd)]), &g).unwrap().is_empty());
    }
}
