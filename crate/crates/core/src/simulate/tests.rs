use super::*;
use crate::features::{build_dataset, build_reference_profile, median, ObservationConfig, ProfileConfig};
use crate::ingest::{affected_trains, reconstruct_trajectories, resolve_disruptions, MatchConfig};
use crate::model::{build_chains, residual_recursion};

fn small(stations: usize, days: usize, rate: f64, seed: u64) -> SimConfig {
    SimConfig { stations, days, disruptions_per_day: rate, seed, ..Default::default() }
}

fn reconstruct(out: &SimOutput) -> Vec<TrainTrajectory> {
    reconstruct_trajectories(&out.events, &out.topology, &MatchConfig::default()).unwrap().0
}

#[test]
fn zero_rate_gives_no_records() {
    let out = simulate_days(&small(10, 2, 0.0, 1)).unwrap();
    assert!(out.disruptions.is_empty());
    assert!(out.truth.records.is_empty());
    let trajs = reconstruct(&out);
    let (resolved, _) = resolve_disruptions(out.disruptions.clone(), &trajs, 10).unwrap();
    let profile = out.truth.config.reference_profile();
    let (recs, _) = build_dataset(&resolved, &trajs, &profile, &ObservationConfig { stations: 10, max_lag: 5 }).unwrap();
    assert!(recs.is_empty());
}

#[test]
fn reconstruction_recovers_every_visit() {
    let out = simulate_days(&small(12, 2, 2.0, 3)).unwrap();
    assert!(!out.truth.disruptions.is_empty());
    let (trajs, report) = reconstruct_trajectories(&out.events, &out.topology, &MatchConfig::default()).unwrap();
    assert_eq!(report.unmatched_signals, 0);
    assert_eq!(report.partial_trains, 0);
    assert_eq!(trajs, out.truth.trajectories);
}

#[test]
fn jitter_keeps_visit_counts() {
    let cfg = SimConfig { jitter: 1.0, ..small(27, 2, 2.0, 5) };
    let out = simulate_days(&cfg).unwrap();
    let trajs = reconstruct(&out);
    assert_eq!(trajs.len(), out.truth.trajectories.len());
    assert!(trajs.iter().all(|t| t.visits.len() == 27));
    for (a, b) in trajs.iter().zip(&out.truth.trajectories) {
        for (va, vb) in a.visits.iter().zip(&b.visits) {
            assert!((va.arrival - vb.arrival).abs() <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn no_overtaking() {
    let out = simulate_days(&small(15, 3, 2.0, 8)).unwrap();
    let trajs = &out.truth.trajectories;
    for s in 1..=15 {
        let arrivals: Vec<f64> = trajs.iter().map(|t| t.visit(s).unwrap().arrival).collect();
        assert!(arrivals.windows(2).all(|w| w[0] < w[1]), "order changes at station {s}");
    }
    for t in trajs {
        t.validate().unwrap();
    }
}

fn scripted(stations: usize, start_hour: f64, minutes: f64) -> SimConfig {
    SimConfig {
        scripted: vec![ScriptedDisruption { day: 0, start_hour, duration_minutes: minutes, location: 5 }],
        ..small(stations, 1, 0.0, 11)
    }
}

#[test]
fn scripted_disruption_matches_truth() {
    // a short line carries only a few trains at once
    let out = simulate_days(&scripted(12, 10.0, 12.0)).unwrap();
    let gt = &out.truth.disruptions[0];
    assert!((2..=4).contains(&gt.held.len()), "held {}", gt.held.len());
    let trajs = reconstruct(&out);
    let (resolved, report) = resolve_disruptions(out.disruptions.clone(), &trajs, 12).unwrap();
    assert!(report.no_resuming_train.is_empty());
    assert_eq!(resolved[0].effective_end, Some(gt.resume));
    let got: Vec<(i64, usize)> =
        affected_trains(&resolved[0], &trajs, 12).unwrap().iter().map(|a| (a.train_id, a.station)).collect();
    let want: Vec<(i64, usize)> = gt.held.iter().map(|h| (h.train_id, h.station)).collect();
    assert_eq!(got, want);
}

#[test]
fn full_line_disruption_holds_about_seven_trains() {
    let out = simulate_days(&scripted(27, 11.0, 10.0)).unwrap();
    let gt = &out.truth.disruptions[0];
    assert!((6..=9).contains(&gt.held.len()), "held {}", gt.held.len());
    let expected: usize = gt.held.iter().map(|h| 27 - h.station).sum();
    assert_eq!(out.truth.records.len(), expected);
}

/// Records built from the logs carry the same covariates as the truth; the
/// logged travel times can only be later than the drawn ones.
#[test]
fn logged_records_match_truth_covariates() {
    let cfg = small(27, 3, 2.0, 21);
    let out = simulate_days(&cfg).unwrap();
    let trajs = reconstruct(&out);
    let (resolved, _) = resolve_disruptions(out.disruptions.clone(), &trajs, 27).unwrap();
    for (r, t) in resolved.iter().zip(&out.truth.disruptions) {
        assert_eq!(r.effective_end, Some(t.resume));
    }
    let profile = out.truth.config.reference_profile();
    let (recs, report) = build_dataset(&resolved, &trajs, &profile, &ObservationConfig { stations: 27, max_lag: 5 }).unwrap();
    assert_eq!(report.non_positive, 0);
    let gt = &out.truth.records;
    assert_eq!(recs.len(), gt.len());
    let mut later = 0;
    for (a, b) in recs.iter().zip(gt) {
        assert_eq!(
            (a.record_id, a.disruption_id, a.train_id, a.origin, a.destination),
            (b.record_id, b.disruption_id, b.train_id, b.origin, b.destination)
        );
        assert_eq!((a.predecessor, a.pred_origin, a.overlap, a.is_first), (b.predecessor, b.pred_origin, b.overlap, b.is_first));
        assert_eq!(a.formation, b.formation);
        assert_eq!(a.ref_travel, b.ref_travel);
        assert_eq!(a.headways, b.headways);
        assert!(a.y >= b.y - 1e-5, "record {}: logged {} drawn {}", a.record_id, a.y, b.y);
        if a.y > b.y + 1e-5 {
            later += 1;
        }
    }
    // drawn times are not monotone along the line, so projection binds often
    assert!(later > 0 && later < recs.len(), "{later} of {}", recs.len());
}

#[test]
fn truth_travel_times_follow_the_recursion() {
    let out = simulate_days(&small(27, 3, 2.0, 4)).unwrap();
    let gt = &out.truth;
    let model = gt.config.model_config();
    for chain in build_chains(&gt.records).unwrap() {
        let eps = residual_recursion(&chain, &gt.records, &gt.parameters, &model).unwrap();
        for (e, &i) in eps.iter().zip(&chain.members) {
            assert!((e - gt.epsilon[i]).abs() < 1e-9);
        }
    }
    for r in &gt.records {
        r.validate().unwrap();
    }
}

#[test]
fn ground_truth_round_trip_and_determinism() {
    let cfg = small(10, 2, 2.0, 9);
    let a = simulate_days(&cfg).unwrap();
    let mut buf = Vec::new();
    a.truth.write_json(&mut buf).unwrap();
    assert_eq!(GroundTruth::read_json(buf.as_slice()).unwrap(), a.truth);
    let b = simulate_days(&cfg).unwrap();
    let mut buf2 = Vec::new();
    b.truth.write_json(&mut buf2).unwrap();
    assert_eq!(buf, buf2);
    assert_eq!(a.events, b.events);
    let c = simulate_days(&SimConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.events, c.events);
}

#[test]
fn default_timetable_matches_target_scale() {
    let cfg = SimConfig { days: 5, disruptions_per_day: 0.0, ..Default::default() };
    let out = simulate_days(&cfg).unwrap();
    let trajs = reconstruct(&out);
    let p = build_reference_profile(&trajs, &[], 27, &ProfileConfig::default()).unwrap();
    let service_bins = 12..44;
    let mut h: Vec<f64> = service_bins.clone().filter_map(|b| p.headway[13][b]).collect();
    let mut t: Vec<f64> = service_bins.filter_map(|b| p.travel[crate::features::pair_index(27, 1, 27)][b]).collect();
    let h = median(&mut h).unwrap();
    let t = median(&mut t).unwrap();
    assert!((h / 5.1 - 1.0).abs() < 0.1, "headway {h}");
    assert!((t / 41.1 - 1.0).abs() < 0.1, "travel {t}");
}

#[test]
fn disruption_count_tracks_rate() {
    let cfg = SimConfig { days: 250, disruptions_per_day: 1.0, ..small(3, 250, 1.0, 2) };
    let out = simulate_days(&cfg).unwrap();
    let lambda = 250.0;
    assert!((out.disruptions.len() as f64 - lambda).abs() <= 3.0 * lambda.sqrt(), "{}", out.disruptions.len());
    for d in &out.disruptions {
        d.validate().unwrap();
    }
}

#[test]
fn infeasible_configs_are_rejected() {
    let mut cfg = SimConfig { peak_headway: 0.5, ..Default::default() };
    assert!(simulate_days(&cfg).is_err());
    cfg = SimConfig { running_medians: vec![40.0; 3], ..Default::default() };
    assert!(cfg.validate().is_err());
    cfg = SimConfig::default();
    cfg.truth.family = crate::model::Family::SkewT;
    cfg.truth.nu = 0.5;
    assert!(cfg.validate().is_err());
}

#[test]
fn frozen_truth_is_stable() {
    let mut a = SimConfig::default();
    a.freeze_truth();
    let p = SimConfig::default().true_parameters();
    assert_eq!(a.truth.theta.as_ref().unwrap(), &p.theta);
    // formation effects that cannot occur stay zero
    assert_eq!(p.gamma_at(27, 1, 26), 0.0);
    assert_eq!(p.gamma_at(27, 5, 22), 0.0);
    assert_ne!(p.gamma_at(27, 5, 21), 0.0);
}

#[test]
fn mismatch_mode_runs() {
    let cfg = SimConfig { recovery: RecoveryLaw::ShiftedGamma { shape: 2.0, scale: 1.0 }, ..small(12, 2, 2.0, 6) };
    let out = simulate_days(&cfg).unwrap();
    assert!(out.truth.records.iter().all(|r| r.y > 0.0));
}
