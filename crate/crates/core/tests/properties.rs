use metrocast::dists::{sn_logpdf, st_logpdf, Innovation, SkewNormalParams, SkewTParams};
use metrocast::eval::{metrics_by_distance, pp_qq_tables, ZValue};
use metrocast::features::{overlap_ratio, split_by_disruption, ObservationRecord, RecordFlags};
use metrocast::model::{Family, ModelConfig, ParameterVector};
use metrocast::predict::{crps_from_draws, hdi, Interval, Prediction};
use proptest::prelude::*;

fn draws_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 50..400)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn params(alpha0: f64, alpha1: f64, nu: f64) -> ParameterVector {
    ParameterVector {
        t0: 0.0,
        theta: Vec::new(),
        gamma: Vec::new(),
        omega0: 1.5,
        omega1: 0.2,
        alpha0,
        alpha1,
        rho: 0.5,
        lambda: 1.0,
        nu: Some(nu),
    }
}

fn record(id: u64, disruption: i64, origin: usize, destination: usize) -> ObservationRecord {
    ObservationRecord {
        record_id: id,
        disruption_id: disruption,
        train_id: id as i64,
        origin,
        destination,
        y: 1.0,
        ref_travel: 1.0,
        headways: Vec::new(),
        formation: Vec::new(),
        is_first: true,
        predecessor: None,
        pred_origin: None,
        overlap: None,
        flags: RecordFlags::empty(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hdi_is_no_wider_than_the_equal_tailed_interval(draws in draws_strategy(), mass in 0.5f64..0.95) {
        let (lo, hi) = hdi(&draws, mass).unwrap();
        let s = sorted(&draws);
        let n = s.len();
        let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
        let tail = (n - k) / 2;
        let eq_width = s[tail + k - 1] - s[tail];
        prop_assert!(hi - lo <= eq_width + 1e-12);
        let inside = s.iter().filter(|&&x| lo <= x && x <= hi).count();
        prop_assert!(inside as f64 >= mass * n as f64 - 1e-9);
    }

    #[test]
    fn crps_is_permutation_invariant_and_nonnegative(draws in draws_strategy(), y in -2e3f64..2e3, seed in any::<u64>()) {
        let a = crps_from_draws(&draws, y);
        let mut shuffled = draws.clone();
        let n = shuffled.len();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let b = crps_from_draws(&shuffled, y);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn mae_never_exceeds_rmse(errors in prop::collection::vec((1usize..6, -50f64..50.0), 1..80)) {
        let mut preds = Vec::new();
        let mut recs = Vec::new();
        for (i, &(d, e)) in errors.iter().enumerate() {
            let id = i as u64;
            recs.push(record(id, 1, 1, 1 + d));
            preds.push(Prediction {
                record_id: id,
                disruption_id: 1,
                origin: 1,
                destination: 1 + d,
                is_first: true,
                y: Some(1.0),
                mean: 1.0 + e,
                median: 1.0 + e,
                intervals: vec![Interval { mass: 0.8, lo: e - 1.0, hi: e + 1.0 }],
                crps: Some(e.abs()),
                negative_fraction: 0.0,
                flags: RecordFlags::empty(),
            });
        }
        for row in metrics_by_distance(&preds, &recs, 0.8).unwrap() {
            prop_assert!(row.mae <= row.rmse + 1e-12);
            prop_assert!((0.0..=1.0).contains(&row.coverage));
        }
    }

    #[test]
    fn pp_values_are_probabilities_and_sorted(
        zs in prop::collection::vec((1usize..4, -6f64..6.0), 10..120),
        alpha0 in -3f64..3.0,
        st in any::<bool>(),
    ) {
        let family = if st { Family::SkewT } else { Family::SkewNormal };
        let model = ModelConfig::new(family, 6, 2);
        let p = params(alpha0, -0.05, 4.0);
        let z: Vec<ZValue> = zs.iter().enumerate().map(|(i, &(d, z))| ZValue { record_id: i as u64, distance: d, z }).collect();
        let cal = pp_qq_tables(&z, &p, &model, 1);
        for w in cal.rows.windows(2) {
            if w[0].distance == w[1].distance {
                prop_assert!(w[1].rank == w[0].rank + 1);
                prop_assert!(w[1].model_prob >= w[0].model_prob);
                prop_assert!(w[1].empirical_prob > w[0].empirical_prob);
                prop_assert!(w[1].model_quantile >= w[0].model_quantile);
            }
        }
        for r in &cal.rows {
            prop_assert!((0.0..=1.0).contains(&r.model_prob));
            prop_assert!(r.empirical_prob > 0.0 && r.empirical_prob < 1.0);
        }
        prop_assert!((0.0..=1.0).contains(&cal.pooled.p_value));
    }

    #[test]
    fn skewed_densities_reflect(y in -8f64..8.0, omega in 0.2f64..5.0, alpha in -5f64..5.0, nu in 1.5f64..60.0) {
        let sn = |a| SkewNormalParams::new(0.0, omega, a).unwrap();
        let st = |a| SkewTParams::new(0.0, omega, a, nu).unwrap();
        let (a, b) = (sn_logpdf(&sn(alpha), y).unwrap(), sn_logpdf(&sn(-alpha), -y).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        let (a, b) = (st_logpdf(&st(alpha), y).unwrap(), st_logpdf(&st(-alpha), -y).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn innovation_quantile_inverts_its_cdf(p in 0.001f64..0.999, omega in 0.3f64..3.0, alpha in -4f64..4.0, nu in 2.1f64..30.0) {
        for law in [Innovation::SkewNormal { omega, alpha }, Innovation::SkewT { omega, alpha, nu }] {
            let q = law.quantile(p);
            prop_assert!((law.cdf(q) - p).abs() < 1e-7, "{law:?} p {p} q {q} cdf {}", law.cdf(q));
        }
    }

    #[test]
    fn overlap_lies_strictly_inside_the_unit_interval(origin in 1usize..20, ahead in 1usize..10, beyond in 1usize..10) {
        let pred_origin = origin + ahead;
        let o = overlap_ratio(origin, pred_origin, pred_origin + beyond);
        prop_assert!(o > 0.0 && o < 1.0);
    }

    #[test]
    fn dependence_weight_is_below_rho_and_increasing(rho in 0.01f64..0.999, lambda in 0.01f64..10.0, a in 0.001f64..1.0, b in 0.001f64..1.0) {
        let mut p = params(0.0, 0.0, 4.0);
        p.rho = rho;
        p.lambda = lambda;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (wl, wh) = (p.dependence(lo), p.dependence(hi));
        prop_assert!(wl >= 0.0 && wh < rho);
        if hi > lo {
            prop_assert!(wh >= wl);
        }
    }

    #[test]
    fn split_partitions_disruptions(
        counts in prop::collection::vec(1usize..6, 2..30),
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let mut recs = Vec::new();
        for (d, &c) in counts.iter().enumerate() {
            for k in 0..c {
                recs.push(record(recs.len() as u64, d as i64 + 1, 1, 2 + k));
            }
        }
        let split = split_by_disruption(&recs, fraction, seed).unwrap();
        prop_assert_eq!(split.in_sample.len() + split.out_of_sample.len(), recs.len());
        for id in &split.in_sample_ids {
            prop_assert!(!split.out_of_sample_ids.contains(id));
        }
        prop_assert!(split.in_sample.iter().all(|r| split.in_sample_ids.contains(&r.disruption_id)));
        prop_assert!(split.out_of_sample.iter().all(|r| split.out_of_sample_ids.contains(&r.disruption_id)));
        let n = counts.len();
        let expected = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
        prop_assert_eq!(split.in_sample_ids.len(), expected);
    }
}
