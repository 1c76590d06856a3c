use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::*;
use crate::dists::{SkewNormalParams, sn_var};
use crate::features::overlap_ratio;
use crate::model::{Family, ModelConfig, ParameterVector};

/// `2φ(0) - 1/√π`, the CRPS of a standard normal forecast at its centre.
const NORMAL_CRPS_AT_ZERO: f64 = 0.233_694_977_255_109_07;
/// Standard normal 0.9 quantile.
const Z90: f64 = 1.281_551_565_544_600_5;

const J: usize = 27;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn record(id: u64, origin: usize, destination: usize) -> ObservationRecord {
    ObservationRecord {
        record_id: id,
        disruption_id: 1,
        train_id: id as i64,
        origin,
        destination,
        y: 12.0,
        ref_travel: 10.0,
        headways: Vec::new(),
        formation: vec![false; 5],
        is_first: true,
        predecessor: None,
        pred_origin: None,
        overlap: None,
        flags: RecordFlags::empty(),
    }
}

fn follower(id: u64, origin: usize, pred: &ObservationRecord) -> ObservationRecord {
    ObservationRecord {
        is_first: false,
        predecessor: Some(pred.record_id),
        pred_origin: Some(pred.origin),
        overlap: Some(overlap_ratio(origin, pred.origin, pred.destination)),
        ..record(id, origin, pred.destination)
    }
}

fn params(family: Family) -> (ModelConfig, ParameterVector) {
    let model = ModelConfig::new(family, J, 5);
    let mut p = ParameterVector::zeros(&model.layout());
    p.t0 = 1.0;
    p.omega0 = 2.3;
    p.omega1 = 0.163;
    if family.has_dependence() {
        p.alpha0 = 2.158;
        p.alpha1 = -0.031;
        p.rho = 0.966;
        p.lambda = 1.552;
    }
    if family == Family::SkewT {
        p.nu = Some(2.666);
    }
    (model, p)
}

fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let s = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n / v.powf(1.5);
    (m, v, s)
}

#[test]
fn gaussian_when_skew_and_slope_vanish() {
    let (model, mut p) = params(Family::SkewNormal);
    p.alpha0 = 0.0;
    p.alpha1 = 0.0;
    p.omega1 = 0.0;
    let rec = record(1, 3, 9);
    let s = predict_record(&rec, std::slice::from_ref(&p), &model, 200_000, &[0.8], Predecessor::Latent, &mut rng(1)).unwrap();
    let mu = adjusted_mean(&rec, &p, &model).unwrap();
    let (m, v, _) = moments(&s.draws);
    let se = (p.omega0 / s.draws.len() as f64).sqrt();
    assert!((m - mu).abs() < 3.0 * se, "mean {m} vs {mu}");
    assert!((v / p.omega0 - 1.0).abs() < 0.02);
    // symmetric: the shortest interval is the central one
    let iv = s.intervals[0];
    assert!((iv.lo - (mu - Z90 * p.omega0.sqrt())).abs() < 0.03);
    assert!((iv.hi - (mu + Z90 * p.omega0.sqrt())).abs() < 0.03);
}

#[test]
fn zero_skew_gives_zero_sample_skewness() {
    let (model, mut p) = params(Family::SkewNormal);
    p.alpha0 = 0.0;
    p.alpha1 = 0.0;
    let s = predict_record(&record(1, 2, 12), &[p], &model, 1_000_000, &[0.8], Predecessor::Latent, &mut rng(2)).unwrap();
    let (_, _, g1) = moments(&s.draws);
    assert!(g1.abs() < 0.02, "skewness {g1}");
}

#[test]
fn follower_variance_grows_by_the_carried_term() {
    let (model, p) = params(Family::SkewNormal);
    let lead = record(1, 8, 14);
    let f = follower(2, 5, &lead);
    let n = 400_000;
    let a = predict_record(&f, std::slice::from_ref(&p), &model, n, &[0.8], Predecessor::Latent, &mut rng(3)).unwrap();
    let mut alone = f.clone();
    alone.is_first = true;
    alone.predecessor = None;
    alone.pred_origin = None;
    alone.overlap = None;
    let b = predict_record(&alone, std::slice::from_ref(&p), &model, n, &[0.8], Predecessor::Latent, &mut rng(4)).unwrap();
    let (_, va, _) = moments(&a.draws);
    let (_, vb, _) = moments(&b.draws);
    let dp = (lead.destination - lead.origin) as f64;
    let w = p.dependence(f.overlap.unwrap());
    let inflation = w * w * sn_var(&SkewNormalParams { xi: 0.0, omega: p.scale_sq(dp).sqrt(), alpha: p.skewness(dp) });
    assert!(va > vb);
    assert!(((va - vb) / inflation - 1.0).abs() < 0.05, "{} vs {inflation}", va - vb);
}

#[test]
fn skew_t_predictive_is_right_skewed() {
    let (model, p) = params(Family::SkewT);
    let s = predict_record(&record(1, 5, 15), &[p], &model, 200_000, &[0.8], Predecessor::Latent, &mut rng(5)).unwrap();
    assert!(s.mean > s.median);
    let (_, _, g1) = moments(&s.draws);
    assert!(g1 > 0.0);
}

#[test]
fn zero_dependence_matches_lead_prediction() {
    let (model, mut p) = params(Family::SkewNormal);
    p.rho = 0.0;
    let lead = record(1, 8, 14);
    let f = follower(2, 5, &lead);
    let mut alone = f.clone();
    alone.is_first = true;
    let a = predict_record(&f, std::slice::from_ref(&p), &model, 1000, &[0.8], Predecessor::Latent, &mut rng(6)).unwrap();
    let b = predict_record(&alone, &[p], &model, 1000, &[0.8], Predecessor::Latent, &mut rng(7)).unwrap();
    let d = crate::eval::ks_two_sample(&a.draws, &b.draws);
    assert!(d.p_value > 0.01, "{d:?}");
}

#[test]
fn hdi_examples() {
    assert_eq!(hdi(&[3.0; 60], 0.8).unwrap(), (3.0, 3.0));
    let mut r = rng(8);
    let u: Vec<f64> = Uniform::new(0.0, 1.0).unwrap().sample_iter(&mut r).take(100_000).collect();
    let (lo, hi) = hdi(&u, 0.8).unwrap();
    assert!((hi - lo - 0.8).abs() < 0.01);
    // the shortest window's position is flat to first order, so a single
    // sample's endpoints wander by about 0.02; the width does not, and the
    // endpoints average out across replicates
    let mut sum = (0.0, 0.0);
    for _ in 0..10 {
        let z: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut r)).collect();
        let (lo, hi) = hdi(&z, 0.8).unwrap();
        assert!((hi - lo - 2.0 * Z90).abs() < 0.02, "({lo}, {hi})");
        sum = (sum.0 + lo / 10.0, sum.1 + hi / 10.0);
    }
    assert!((sum.0 + Z90).abs() < 0.02 && (sum.1 - Z90).abs() < 0.02, "{sum:?}");
}

#[test]
fn hdi_rejects_bad_input() {
    assert!(hdi(&[1.0; 60], 1.0).is_err());
    assert!(hdi(&[1.0; 60], 0.0).is_err());
    assert!(hdi(&[1.0; 49], 0.5).is_err());
}

#[test]
fn hdi_ties_go_to_the_lowest_window() {
    let draws: Vec<f64> = (0..100).map(f64::from).collect();
    assert_eq!(hdi(&draws, 0.5).unwrap(), (0.0, 49.0));
}

#[test]
fn crps_examples() {
    assert_eq!(crps_from_draws(&[1.5; 10], 1.5), 0.0);
    assert_eq!(crps_from_draws(&[0.0, 2.0], 1.0), 0.5);
    let mut r = rng(9);
    let z: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut r)).collect();
    assert!((crps_from_draws(&z, 0.0) - NORMAL_CRPS_AT_ZERO).abs() < 0.005);
}

#[test]
fn crps_matches_pairwise_sum() {
    let mut r = rng(10);
    let x: Vec<f64> = (0..57).map(|_| StandardNormal.sample(&mut r)).collect();
    let n = x.len() as f64;
    let a: f64 = x.iter().map(|v| (v - 0.3).abs()).sum::<f64>() / n;
    let b: f64 = x.iter().flat_map(|u| x.iter().map(move |v| (u - v).abs())).sum::<f64>() / (n * n);
    assert!((crps_from_draws(&x, 0.3) - (a - 0.5 * b)).abs() < 1e-12);
}

fn chain_records() -> Vec<ObservationRecord> {
    let a = record(1, 10, 16);
    let b = follower(2, 7, &a);
    let c = follower(3, 4, &b);
    let mut d = record(4, 10, 20);
    d.disruption_id = 2;
    d.y = 13.0;
    let mut e = follower(5, 3, &d);
    e.disruption_id = 2;
    vec![a, b, c, d, e]
}

#[test]
fn dataset_prediction_is_thread_invariant() {
    let (model, p) = params(Family::SkewNormal);
    let recs = chain_records();
    let cfg = PredictConfig { masses: vec![0.5, 0.8, 0.95], n_per_draw: 100, seed: 4, ..Default::default() };
    let a = predict_dataset(&recs, std::slice::from_ref(&p), &model, &cfg).unwrap();
    let b = predict_dataset(&recs, &[p], &model, &PredictConfig { threads: 3, ..cfg }).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.predictions.len(), 5);
    for pr in &a.predictions {
        let w: Vec<f64> = pr.intervals.iter().map(|i| i.hi - i.lo).collect();
        assert!(w.windows(2).all(|x| x[0] <= x[1]));
        assert!(pr.crps.unwrap() >= 0.0);
    }
}

#[test]
fn plug_in_uses_observed_residuals() {
    let (model, p) = params(Family::SkewNormal);
    let recs = chain_records();
    let cfg = PredictConfig { predecessor: PredecessorMode::PlugIn, n_per_draw: 200, ..Default::default() };
    let set = predict_dataset(&recs, std::slice::from_ref(&p), &model, &cfg).unwrap();
    assert_eq!(set.plug_in, 3);
    let chains = build_chains(&recs).unwrap();
    let eps = residual_recursion(&chains[0], &recs, &p, &model).unwrap();
    let b = &recs[1];
    let shift = p.dependence(b.overlap.unwrap()) * eps[0];
    let alone = predict_record(
        &ObservationRecord { is_first: true, predecessor: None, pred_origin: None, overlap: None, ..b.clone() },
        &[p],
        &model,
        200,
        &[0.8],
        Predecessor::Latent,
        &mut {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            r.set_stream(b.record_id);
            r
        },
    )
    .unwrap();
    assert!(set.predictions[1].flags.contains(RecordFlags::PLUG_IN));
    assert!((set.predictions[1].mean - (alone.mean + shift)).abs() < 1e-9);
}

#[test]
fn negative_draws_are_kept_and_flagged() {
    let (model, mut p) = params(Family::Baseline);
    p.t0 = -9.0;
    let set = predict_dataset(&[record(1, 2, 4)], &[p], &model, &PredictConfig { n_per_draw: 500, ..Default::default() }).unwrap();
    let pr = &set.predictions[0];
    assert!(pr.flags.contains(RecordFlags::NEGATIVE_DRAWS));
    assert!(pr.negative_fraction > 0.0 && pr.negative_fraction < 1.0);
    assert_eq!(set.negative_fraction, pr.negative_fraction);
    assert!(pr.intervals[0].lo < 0.0);
}

#[test]
fn distances_beyond_the_cap_are_clamped() {
    let (mut model, p) = params(Family::SkewNormal);
    model.distance_cap = Some(5);
    let far = predict_record(&record(1, 2, 20), std::slice::from_ref(&p), &model, 50, &[0.8], Predecessor::Latent, &mut rng(1)).unwrap();
    assert!(far.flags.contains(RecordFlags::DISTANCE_CLAMPED));
    let near = predict_record(&record(1, 2, 6), &[p], &model, 50, &[0.8], Predecessor::Latent, &mut rng(1)).unwrap();
    assert!(!near.flags.contains(RecordFlags::DISTANCE_CLAMPED));
}

#[test]
fn predictions_csv_round_trip() {
    let (model, p) = params(Family::SkewT);
    let recs = chain_records();
    let cfg = PredictConfig { masses: vec![0.8, 0.975], n_per_draw: 60, ..Default::default() };
    let set = predict_dataset(&recs, &[p], &model, &cfg).unwrap();
    let mut buf = Vec::new();
    write_predictions(&mut buf, &set.masses, &set.predictions).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.lines().next().unwrap().contains("hdi80_lo,hdi80_hi,hdi97.5_lo,hdi97.5_hi,crps"));
    let (masses, back) = read_predictions(buf.as_slice()).unwrap();
    assert_eq!(masses, set.masses);
    assert_eq!(back, set.predictions);
}

#[test]
fn mismatched_draws_are_rejected() {
    let (model, _) = params(Family::SkewNormal);
    let other = ModelConfig::new(Family::Baseline, J, 5);
    let draws = crate::sampler::PosteriorDraws {
        names: other.layout().names(),
        values: vec![vec![vec![0.0; other.layout().dim()]]],
        divergent: vec![vec![false]],
        step_sizes: vec![],
        summary: vec![],
    };
    assert!(thinned_parameters(&draws, &model, 10).is_err());
    assert!(thinned_parameters(&draws, &other, 10).is_ok());
}
