//! Raw signal logs to train trajectories and disruption windows.
//!
//! Track-circuit logs record when each block is occupied and released. A
//! train is a chain of block visits linked release-to-occupy along the line;
//! station arrivals and departures are the occupation and release times of
//! the station blocks.

mod disruption;
mod reconstruct;

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use disruption::*;
pub use reconstruct::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "O")]
    Occupy,
    #[serde(rename = "R")]
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEvent {
    pub block_id: i64,
    pub kind: EventKind,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: i64,
    /// Station served by this block, `None` for tunnel blocks.
    pub station: Option<usize>,
}

/// Blocks in travel order and the station each one serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineTopology {
    pub stations: usize,
    pub blocks: Vec<Block>,
    #[serde(default)]
    pub direction: String,
}

impl LineTopology {
    /// A line with `tunnel_blocks` tunnel blocks between consecutive stations,
    /// block ids counting up from zero.
    pub fn uniform(stations: usize, tunnel_blocks: usize, direction: &str) -> Self {
        let mut blocks = Vec::new();
        for s in 1..=stations {
            blocks.push(Block { id: blocks.len() as i64, station: Some(s) });
            if s < stations {
                for _ in 0..tunnel_blocks {
                    blocks.push(Block { id: blocks.len() as i64, station: None });
                }
            }
        }
        LineTopology { stations, blocks, direction: direction.to_string() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("topology: {m}")));
        if self.stations < 2 {
            return bad("need at least two stations".into());
        }
        let mut seen_ids = HashMap::new();
        let mut next_station = 1;
        for (pos, b) in self.blocks.iter().enumerate() {
            if seen_ids.insert(b.id, pos).is_some() {
                return bad(format!("block id {} repeated", b.id));
            }
            if let Some(s) = b.station {
                if s != next_station {
                    return bad(format!("station {s} out of order, expected {next_station}"));
                }
                next_station += 1;
            }
        }
        if next_station != self.stations + 1 {
            return bad(format!("{} station blocks for {} stations", next_station - 1, self.stations));
        }
        Ok(())
    }

    /// Block id → position along the line.
    pub fn positions(&self) -> HashMap<i64, usize> {
        self.blocks.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let t: LineTopology = serde_json::from_reader(r)?;
        t.validate()?;
        Ok(t)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// One station visit of a reconstructed train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationVisit {
    pub station: usize,
    pub arrival: f64,
    pub departure: f64,
}

impl StationVisit {
    pub fn dwell(&self) -> f64 {
        self.departure - self.arrival
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrajectory {
    pub train_id: i64,
    /// Visits in station order.
    pub visits: Vec<StationVisit>,
}

/// Where a train is at a given instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Station(usize),
    /// Between stations, heading to `next`.
    Tunnel { next: usize },
}

impl TrainTrajectory {
    pub fn visit(&self, station: usize) -> Option<&StationVisit> {
        let first = self.visits.first()?.station;
        let v = self.visits.get(station.checked_sub(first)?)?;
        (v.station == station).then_some(v)
    }

    pub fn first_time(&self) -> f64 {
        self.visits.first().map_or(f64::NAN, |v| v.arrival)
    }

    pub fn last_time(&self) -> f64 {
        self.visits.last().map_or(f64::NAN, |v| v.departure)
    }

    /// Running time from each station to the next, seconds.
    pub fn running_times(&self) -> Vec<(usize, f64)> {
        self.visits.windows(2).map(|w| (w[0].station, w[1].arrival - w[0].departure)).collect()
    }

    /// Position at time `t`, or `None` when the train is not on the observed
    /// part of the line.
    pub fn position_at(&self, t: f64) -> Option<Position> {
        let i = self.visits.partition_point(|v| v.arrival <= t);
        if i == 0 {
            return None;
        }
        let v = &self.visits[i - 1];
        if t <= v.departure {
            return Some(Position::Station(v.station));
        }
        self.visits.get(i).map(|next| Position::Tunnel { next: next.station })
    }

    /// Checks ordering and non-negative dwell and running times.
    pub fn validate(&self) -> Result<()> {
        for w in self.visits.windows(2) {
            if w[1].station != w[0].station + 1 || w[1].arrival < w[0].departure {
                return Err(Error::InvalidParameter(format!(
                    "train {}: visits to stations {} and {} out of order",
                    self.train_id, w[0].station, w[1].station
                )));
            }
        }
        if let Some(v) = self.visits.iter().find(|v| v.departure < v.arrival) {
            return Err(Error::InvalidParameter(format!(
                "train {}: negative dwell at station {}",
                self.train_id, v.station
            )));
        }
        Ok(())
    }
}

/// Parses a seconds value keeping at most millisecond precision, truncating
/// any further digits.
pub fn parse_timestamp(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::Parse(format!("bad timestamp {s:?}"));
    let plain = !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit() || b == b'.') && s.matches('.').count() <= 1;
    if plain {
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        let whole: i64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let mut ms = 0i64;
        for (i, c) in frac.bytes().take(3).enumerate() {
            ms += (c - b'0') as i64 * 10i64.pow(2 - i as u32);
        }
        return Ok(millis_to_seconds(whole * 1000 + ms));
    }
    let v: f64 = s.parse().map_err(|_| bad())?;
    if !v.is_finite() || v < 0.0 {
        return Err(bad());
    }
    Ok(millis_to_seconds((v * 1000.0).floor() as i64))
}

pub fn millis_to_seconds(ms: i64) -> f64 {
    ms as f64 / 1000.0
}

pub fn format_timestamp(t: f64) -> String {
    format!("{t:.3}")
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    block_id: i64,
    kind: EventKind,
    timestamp: String,
}

pub fn read_events<R: Read>(r: R) -> Result<Vec<BlockEvent>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize::<EventRow>()
        .map(|row| {
            let row = row?;
            Ok(BlockEvent { block_id: row.block_id, kind: row.kind, timestamp: parse_timestamp(&row.timestamp)? })
        })
        .collect()
}

pub fn write_events<W: Write>(w: W, events: &[BlockEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for e in events {
        wtr.serialize(EventRow { block_id: e.block_id, kind: e.kind, timestamp: format_timestamp(e.timestamp) })?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct VisitRow {
    train_id: i64,
    station: usize,
    arrival: String,
    departure: String,
}

pub fn write_trajectories<W: Write>(w: W, trajs: &[TrainTrajectory]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for t in trajs {
        for v in &t.visits {
            wtr.serialize(VisitRow {
                train_id: t.train_id,
                station: v.station,
                arrival: format_timestamp(v.arrival),
                departure: format_timestamp(v.departure),
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads trajectories written by [`write_trajectories`]; rows of one train
/// must be contiguous.
pub fn read_trajectories<R: Read>(r: R) -> Result<Vec<TrainTrajectory>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out: Vec<TrainTrajectory> = Vec::new();
    for row in rdr.deserialize::<VisitRow>() {
        let row = row?;
        let visit = StationVisit {
            station: row.station,
            arrival: parse_timestamp(&row.arrival)?,
            departure: parse_timestamp(&row.departure)?,
        };
        match out.last_mut() {
            Some(t) if t.train_id == row.train_id => t.visits.push(visit),
            _ => out.push(TrainTrajectory { train_id: row.train_id, visits: vec![visit] }),
        }
    }
    for t in &out {
        t.validate()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
