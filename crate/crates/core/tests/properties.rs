use chrono::{Duration, NaiveDate, NaiveDateTime};
use proptest::prelude::*;

use leakstat::changepoint;
use leakstat::detection;
use leakstat::localization::{EdgeWeighting, FieldBuilder, NetworkGraph};
use leakstat::panel::{SensorInfo, SensorPanel};
use leakstat::synthgen::{self, GraphSpec, Placement, Scenario};
use leakstat::training::{self, ClusterScheme, TrainingStrategy};

fn grid(n: usize) -> Vec<NaiveDateTime> {
    let t0 = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    (0..n as i64).map(|i| t0 + Duration::hours(i)).collect()
}

fn network() -> NetworkGraph {
    let sc = Scenario::new(
        GraphSpec::Grid {
            cols: 7,
            rows: 5,
            spacing: 50.0,
        },
        Placement::FarthestPoint { count: 6 },
        0.0,
    );
    synthgen::generate(&sc, 0, 1).unwrap().2
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_is_bounded_and_linear(
        x in prop::collection::vec(0.0..50.0f64, 6),
        y in prop::collection::vec(0.0..50.0f64, 6),
        a in 0.0..3.0f64,
    ) {
        let g = network();
        let ids = ["s0", "s1", "s2", "s3", "s4", "s5"];
        let b = FieldBuilder::new(&g, &ids, EdgeWeighting::Unweighted).unwrap();
        let (fx, fy) = (b.field(&x).unwrap(), b.field(&y).unwrap());
        let combined: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
        let fc = b.field(&combined).unwrap();
        let (lo, hi) = (
            x.iter().copied().fold(f64::INFINITY, f64::min),
            x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        for i in 0..g.len() {
            prop_assert!(fx.values[i] >= lo && fx.values[i] <= hi);
            let expected = a * fx.values[i] + fy.values[i];
            prop_assert!((fc.values[i] - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn leak_count_moves_one_unit_and_stays_non_negative(
        changes in prop::collection::vec(-2i64..=3, 1..80),
    ) {
        let c = detection::leak_count_from_changes(&grid(changes.len()), &changes);
        prop_assert_eq!(c.count.len(), changes.len());
        let mut prev = 0i64;
        for &v in &c.count {
            prop_assert!((v as i64 - prev).abs() <= 1);
            prev = v as i64;
        }
    }

    #[test]
    fn larger_penalty_never_adds_change_points(
        y in prop::collection::vec(-5.0..5.0f64, 12..120),
        pen in 0.5..20.0f64,
        factor in 1.0..4.0f64,
    ) {
        let lo = changepoint::pelt(&y, pen, 2).unwrap();
        let hi = changepoint::pelt(&y, pen * factor, 2).unwrap();
        prop_assert!(hi.scps.len() <= lo.scps.len());
        prop_assert!(hi.cost >= lo.cost - 1e-9 * lo.cost.abs().max(1.0));
    }

    #[test]
    fn false_alarm_budget_inverts(p in 1e-6..0.5f64, s in 1usize..60) {
        let total = detection::fa_combination(p, s).unwrap();
        // the inverse is ill-conditioned once the total rounds towards one
        prop_assume!(total < 0.999);
        prop_assert!((detection::fa_per_test(total, s).unwrap() - p).abs() <= 1e-9 * p.max(1e-3));
        prop_assert!(detection::bonferroni(total, s).unwrap() <= p + 1e-15);
    }

    #[test]
    fn hotelling_ignores_sensor_units(scale in prop::collection::vec(0.01..100.0f64, 3), seed in 0u64..1000) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows = 60;
        let raw: Vec<f64> = (0..rows * 3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let scaled: Vec<f64> = raw.iter().enumerate().map(|(i, v)| v * scale[i % 3] + 7.0).collect();
        let sensors = || (0..3).map(|j| SensorInfo::pressure(format!("s{j}"))).collect::<Vec<_>>();
        let a = SensorPanel::new(grid(rows), sensors(), raw).unwrap();
        let b = SensorPanel::new(grid(rows), sensors(), scaled).unwrap();
        let score = |p: &SensorPanel| {
            let m = training::train(p, &ClusterScheme::single(), &TrainingStrategy::Unfiltered).unwrap();
            detection::score(&m, p, 1).unwrap().t2
        };
        for (u, v) in score(&a).iter().zip(score(&b)) {
            prop_assert!((u - v).abs() <= 1e-8 * (1.0 + u.abs()));
        }
    }
}
