use super::*;

fn ev(block_id: i64, kind: EventKind, timestamp: f64) -> BlockEvent {
    BlockEvent { block_id, kind, timestamp }
}

/// Clean signals for one train entering `blocks` in order, `step` seconds
/// per block.
fn run_train(blocks: std::ops::Range<i64>, start: f64, step: f64) -> Vec<BlockEvent> {
    let mut out = Vec::new();
    for (i, b) in blocks.enumerate() {
        let t = start + i as f64 * step;
        out.push(ev(b, EventKind::Occupy, t));
        out.push(ev(b, EventKind::Release, t + step));
    }
    out
}

fn five_station_line() -> LineTopology {
    LineTopology::uniform(5, 0, "north")
}

#[test]
fn single_train_gives_one_trajectory() {
    let events = run_train(0..5, 100.0, 60.0);
    let (trains, report) = reconstruct_trajectories(&events, &five_station_line(), &MatchConfig::default()).unwrap();
    assert_eq!(trains.len(), 1);
    assert_eq!(trains[0].visits.len(), 5);
    assert_eq!(trains[0].visits[2], StationVisit { station: 3, arrival: 220.0, departure: 280.0 });
    assert_eq!(report, RejectionReport::default());
}

#[test]
fn separated_trains_do_not_cross() {
    let mut events = run_train(0..5, 0.0, 30.0);
    events.extend(run_train(0..5, 1000.0, 30.0));
    let (trains, _) = reconstruct_trajectories(&events, &five_station_line(), &MatchConfig::default()).unwrap();
    assert_eq!(trains.len(), 2);
    assert!(trains[0].last_time() < trains[1].first_time());
    assert!(trains.iter().all(|t| t.visits.len() == 5));
}

#[test]
fn interleaved_trains_follow_fifo() {
    let topo = LineTopology::uniform(4, 2, "");
    let n = topo.blocks.len() as i64;
    let mut events = run_train(0..n, 0.0, 40.0);
    events.extend(run_train(0..n, 90.0, 40.0));
    events.extend(run_train(0..n, 180.0, 40.0));
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let (trains, _) = reconstruct_trajectories(&events, &topo, &MatchConfig::default()).unwrap();
    assert_eq!(trains.len(), 3);
    for (i, t) in trains.iter().enumerate() {
        assert_eq!(t.visits.len(), 4);
        assert_eq!(t.visits[0].arrival, 90.0 * i as f64);
        t.validate().unwrap();
    }
}

#[test]
fn unmatched_signals_are_counted() {
    let mut events = run_train(0..5, 0.0, 30.0);
    events.push(ev(2, EventKind::Release, 500.0));
    events.push(ev(3, EventKind::Occupy, 900.0));
    let (trains, report) = reconstruct_trajectories(&events, &five_station_line(), &MatchConfig::default()).unwrap();
    assert_eq!(trains.len(), 1);
    assert_eq!(report.unmatched_signals, 2);
}

#[test]
fn unknown_blocks_are_counted() {
    let mut events = run_train(0..5, 0.0, 30.0);
    events.push(ev(77, EventKind::Occupy, 10.0));
    let (_, report) = reconstruct_trajectories(&events, &five_station_line(), &MatchConfig::default()).unwrap();
    assert_eq!(report.unknown_blocks, 1);
}

#[test]
fn jittered_handoff_within_slack_is_linked() {
    let mut events = run_train(0..5, 0.0, 30.0);
    // next block occupied slightly before the previous one is released
    for e in events.iter_mut().filter(|e| e.kind == EventKind::Occupy && e.block_id == 3) {
        e.timestamp -= 0.8;
    }
    let (trains, _) = reconstruct_trajectories(&events, &five_station_line(), &MatchConfig::default()).unwrap();
    assert_eq!(trains.len(), 1);
    assert_eq!(trains[0].visits.len(), 5);
}

#[test]
fn mid_line_entry_is_kept_as_partial_train() {
    let events = run_train(2..5, 50.0, 30.0);
    let (trains, report) = reconstruct_trajectories(&events, &five_station_line(), &MatchConfig::default()).unwrap();
    assert_eq!(trains.len(), 1);
    assert_eq!(trains[0].visits[0].station, 3);
    assert_eq!(report.partial_trains, 1);
    assert_eq!(trains[0].visit(4).unwrap().arrival, 80.0);
    assert!(trains[0].visit(1).is_none());
}

#[test]
fn ambiguous_handoffs_pick_the_earliest() {
    let topo = LineTopology::uniform(2, 0, "");
    let events = vec![
        ev(0, EventKind::Occupy, 0.0),
        ev(0, EventKind::Release, 10.0),
        ev(1, EventKind::Occupy, 12.0),
        ev(1, EventKind::Release, 20.0),
        ev(1, EventKind::Occupy, 30.0),
        ev(1, EventKind::Release, 40.0),
    ];
    let (trains, report) = reconstruct_trajectories(&events, &topo, &MatchConfig::default()).unwrap();
    assert_eq!(report.ambiguous_handoffs, 1);
    assert_eq!(trains[0].visits.len(), 2);
    assert_eq!(trains[0].visits[1].arrival, 12.0);
}

#[test]
fn timestamps_truncate_to_milliseconds() {
    assert_eq!(parse_timestamp("12.3459").unwrap(), 12.345);
    assert_eq!(parse_timestamp("1704067200.9999").unwrap(), 1704067200.999);
    assert_eq!(parse_timestamp("7").unwrap(), 7.0);
    assert_eq!(parse_timestamp("1.5e1").unwrap(), 15.0);
    assert!(parse_timestamp("-3").is_err());
    assert!(parse_timestamp("x").is_err());
}

#[test]
fn event_csv_round_trip() {
    let events = run_train(0..3, 1704067200.125, 30.5);
    let mut buf = Vec::new();
    write_events(&mut buf, &events).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("block_id,kind,timestamp\n0,O,1704067200.125"));
    assert_eq!(read_events(buf.as_slice()).unwrap(), events);
}

#[test]
fn trajectory_csv_round_trip() {
    let events = run_train(0..5, 3.5, 30.25);
    let (trains, _) = reconstruct_trajectories(&events, &five_station_line(), &MatchConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_trajectories(&mut buf, &trains).unwrap();
    assert_eq!(read_trajectories(buf.as_slice()).unwrap(), trains);
}

#[test]
fn topology_validation() {
    let mut t = LineTopology::uniform(3, 1, "");
    assert!(t.validate().is_ok());
    t.blocks.swap(0, 2);
    assert!(t.validate().is_err());
    let json = serde_json::to_string(&LineTopology::uniform(3, 1, "east")).unwrap();
    assert!(json.contains("\"station\":null"));
    assert_eq!(LineTopology::read_json(json.as_bytes()).unwrap().blocks.len(), 5);
}

fn traj(id: i64, visits: &[(usize, f64, f64)]) -> TrainTrajectory {
    TrainTrajectory {
        train_id: id,
        visits: visits.iter().map(|&(station, arrival, departure)| StationVisit { station, arrival, departure }).collect(),
    }
}

fn disruption(start: f64, end: f64) -> DisruptionRecord {
    DisruptionRecord {
        disruption_id: 1,
        reported_start: start,
        reported_end: end,
        location: 5,
        cause: "signal".into(),
        effective_end: None,
    }
}

#[test]
fn effective_end_single_and_minimum() {
    let d = disruption(400.0, 980.0);
    let one = vec![traj(1, &[(3, 300.0, 350.0), (4, 420.0, 1000.0), (5, 1060.0, 1100.0)])];
    assert_eq!(effective_disruption_end(&d, &one, 10).unwrap(), 1000.0);
    let mut two = one.clone();
    two.push(traj(2, &[(6, 200.0, 260.0), (7, 330.0, 1012.0)]));
    assert_eq!(effective_disruption_end(&d, &two, 10).unwrap(), 1000.0);
    two[0].visits[1].departure = 1020.0;
    assert_eq!(effective_disruption_end(&d, &two, 10).unwrap(), 1012.0);
}

#[test]
fn no_resuming_train_is_an_error() {
    let d = disruption(400.0, 980.0);
    let trains = vec![traj(1, &[(3, 100.0, 150.0)])];
    assert!(matches!(effective_disruption_end(&d, &trains, 10), Err(Error::NoResumingTrain { disruption_id: 1 })));
}

#[test]
fn affected_trains_are_ordered_lead_first() {
    let mut d = disruption(400.0, 980.0);
    d.effective_end = Some(1000.0);
    let trains = vec![
        traj(1, &[(8, 300.0, 350.0), (9, 410.0, 1000.0), (10, 1060.0, 1100.0)]),
        traj(2, &[(3, 300.0, 350.0), (4, 420.0, 1090.0)]),
        traj(3, &[(6, 390.0, 440.0), (7, 500.0, 1040.0)]),
        // left the line before the disruption
        traj(4, &[(9, 10.0, 20.0), (10, 80.0, 90.0)]),
    ];
    let got = affected_trains(&d, &trains, 10).unwrap();
    let stations: Vec<(i64, usize)> = got.iter().map(|a| (a.train_id, a.station)).collect();
    assert_eq!(stations, vec![(1, 9), (3, 7), (2, 4)]);
    d.effective_end = Some(5000.0);
    assert!(affected_trains(&d, &trains, 10).unwrap().is_empty());
}

#[test]
fn tunnel_train_gets_next_station_and_flag() {
    let mut d = disruption(400.0, 980.0);
    d.effective_end = Some(1000.0);
    let trains = vec![traj(1, &[(5, 300.0, 990.0), (6, 1040.0, 1100.0)]), traj(2, &[(8, 300.0, 350.0), (9, 410.0, 1000.0)])];
    let got = affected_trains(&d, &trains, 12).unwrap();
    assert_eq!(got[1], AffectedTrain { index: 0, train_id: 1, station: 6, in_tunnel: true });
    assert!(!got[0].in_tunnel);
}

#[test]
fn overlapping_reports_merge() {
    let mut a = disruption(100.0, 500.0);
    a.disruption_id = 4;
    let mut b = disruption(450.0, 900.0);
    b.disruption_id = 2;
    b.cause = "door".into();
    let c = DisruptionRecord { disruption_id: 9, ..disruption(2000.0, 2500.0) };
    let (merged, n) = merge_overlapping(vec![c, b, a]);
    assert_eq!(n, 1);
    assert_eq!(merged.len(), 2);
    assert_eq!((merged[0].disruption_id, merged[0].reported_start, merged[0].reported_end), (2, 100.0, 900.0));
    assert_eq!(merged[0].cause, "signal; door");
}

#[test]
fn disruption_csv_round_trip() {
    let mut d = disruption(100.0, 500.5);
    let mut buf = Vec::new();
    write_disruptions(&mut buf, std::slice::from_ref(&d)).unwrap();
    assert!(String::from_utf8(buf.clone()).unwrap().starts_with("disruption_id,start_ts,end_ts,station,cause\n"));
    assert_eq!(read_disruptions(buf.as_slice()).unwrap(), vec![d.clone()]);
    d.effective_end = Some(512.25);
    let mut buf = Vec::new();
    write_disruptions(&mut buf, std::slice::from_ref(&d)).unwrap();
    assert_eq!(read_disruptions(buf.as_slice()).unwrap(), vec![d]);
}

#[test]
fn position_lookup() {
    let t = traj(1, &[(2, 100.0, 150.0), (3, 200.0, 260.0)]);
    assert_eq!(t.position_at(50.0), None);
    assert_eq!(t.position_at(100.0), Some(Position::Station(2)));
    assert_eq!(t.position_at(170.0), Some(Position::Tunnel { next: 3 }));
    assert_eq!(t.position_at(260.0), Some(Position::Station(3)));
    assert_eq!(t.position_at(261.0), None);
    assert_eq!(t.running_times(), vec![(2, 50.0)]);
}
