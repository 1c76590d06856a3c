use serde::{Deserialize, Serialize};

use super::{BlockEvent, EventKind, LineTopology, StationVisit, TrainTrajectory};
use crate::error::{Error, Result};

/// Matching tolerances for linking consecutive block visits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Longest gap, seconds, between a release and the next block's occupation.
    pub window: f64,
    /// An occupation may precede the release it is linked to by this much,
    /// seconds, to absorb clock jitter.
    pub slack: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { window: 300.0, slack: 5.0 }
    }
}

/// Counts of signals that could not be used.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionReport {
    /// Occupations with no release, or releases with no occupation.
    pub unmatched_signals: usize,
    /// Events on blocks missing from the topology.
    pub unknown_blocks: usize,
    /// Releases with more than one candidate successor occupation.
    pub ambiguous_handoffs: usize,
    /// Trains that entered or left service away from the line ends.
    pub partial_trains: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockVisit {
    occupy: f64,
    release: f64,
    next: Option<usize>,
    has_prev: bool,
}

/// Pairs occupy/release signals per block, dropping any that do not alternate.
fn block_visits(events: &[(f64, EventKind)], report: &mut RejectionReport) -> Vec<BlockVisit> {
    let mut out = Vec::new();
    let mut open: Option<f64> = None;
    for &(t, kind) in events {
        match (kind, open) {
            (EventKind::Occupy, Some(_)) => {
                report.unmatched_signals += 1;
                open = Some(t);
            }
            (EventKind::Occupy, None) => open = Some(t),
            (EventKind::Release, Some(o)) => {
                out.push(BlockVisit { occupy: o, release: t, next: None, has_prev: false });
                open = None;
            }
            (EventKind::Release, None) => report.unmatched_signals += 1,
        }
    }
    if open.is_some() {
        report.unmatched_signals += 1;
    }
    out
}

/// Rebuilds train trajectories from block signals. Each release on a block
/// is linked to the earliest unclaimed occupation of the next block that
/// falls inside the matching window.
pub fn reconstruct_trajectories(
    events: &[BlockEvent],
    topo: &LineTopology,
    cfg: &MatchConfig,
) -> Result<(Vec<TrainTrajectory>, RejectionReport)> {
    topo.validate()?;
    if !(cfg.window > 0.0 && cfg.slack >= 0.0) {
        return Err(Error::InvalidConfig("matching window must be positive and slack non-negative".into()));
    }
    let pos = topo.positions();
    let n_blocks = topo.blocks.len();
    let mut report = RejectionReport::default();
    let mut per_block: Vec<Vec<(f64, EventKind)>> = vec![Vec::new(); n_blocks];
    for e in events {
        if !e.timestamp.is_finite() || e.timestamp < 0.0 {
            report.unmatched_signals += 1;
            continue;
        }
        match pos.get(&e.block_id) {
            Some(&p) => per_block[p].push((e.timestamp, e.kind)),
            None => report.unknown_blocks += 1,
        }
    }
    // a release and an occupation at the same instant: the release comes first
    let order = |k: EventKind| if k == EventKind::Release { 0 } else { 1 };
    for evs in &mut per_block {
        evs.sort_by(|a, b| a.0.total_cmp(&b.0).then(order(a.1).cmp(&order(b.1))));
    }
    let mut visits: Vec<Vec<BlockVisit>> = per_block.iter().map(|e| block_visits(e, &mut report)).collect();

    for p in 0..n_blocks.saturating_sub(1) {
        let (left, right) = visits.split_at_mut(p + 1);
        let (cur, next) = (&mut left[p], &mut right[0]);
        let mut rel_order: Vec<usize> = (0..cur.len()).collect();
        rel_order.sort_by(|&a, &b| cur[a].release.total_cmp(&cur[b].release));
        let mut start = 0;
        for &v in &rel_order {
            let r = cur[v].release;
            while start < next.len() && next[start].occupy < r - cfg.slack {
                start += 1;
            }
            let candidates =
                next[start..].iter().take_while(|w| w.occupy <= r + cfg.window).count();
            if candidates == 0 {
                continue;
            }
            if candidates > 1 {
                report.ambiguous_handoffs += 1;
            }
            cur[v].next = Some(start);
            next[start].has_prev = true;
            start += 1;
        }
    }

    let mut trains: Vec<TrainTrajectory> = Vec::new();
    for p0 in 0..n_blocks {
        for v0 in 0..visits[p0].len() {
            if visits[p0][v0].has_prev {
                continue;
            }
            let mut stations = Vec::new();
            let (mut p, mut v) = (p0, v0);
            loop {
                let bv = visits[p][v];
                if let Some(s) = topo.blocks[p].station {
                    stations.push(StationVisit { station: s, arrival: bv.occupy, departure: bv.release });
                }
                match bv.next {
                    Some(n) => {
                        p += 1;
                        v = n;
                    }
                    None => break,
                }
            }
            if p0 != 0 || p != n_blocks - 1 {
                report.partial_trains += 1;
            }
            if !stations.is_empty() {
                trains.push(TrainTrajectory { train_id: 0, visits: stations });
            }
        }
    }
    trains.sort_by(|a, b| a.first_time().total_cmp(&b.first_time()).then(a.visits[0].station.cmp(&b.visits[0].station)));
    for (i, t) in trains.iter_mut().enumerate() {
        t.train_id = i as i64 + 1;
    }
    Ok((trains, report))
}
