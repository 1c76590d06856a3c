use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{format_timestamp, parse_timestamp, Position, TrainTrajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisruptionRecord {
    pub disruption_id: i64,
    pub reported_start: f64,
    pub reported_end: f64,
    /// Station where the incident was reported.
    pub location: usize,
    pub cause: String,
    /// First departure of a held train, filled in by [`resolve_disruptions`].
    pub effective_end: Option<f64>,
}

impl DisruptionRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.reported_start < self.reported_end) {
            return Err(Error::InvalidParameter(format!(
                "disruption {}: start {} not before end {}",
                self.disruption_id, self.reported_start, self.reported_end
            )));
        }
        Ok(())
    }
}

/// Merges records whose reported windows overlap into one window spanning
/// both. The merged record keeps the smallest id and the first location.
pub fn merge_overlapping(mut records: Vec<DisruptionRecord>) -> (Vec<DisruptionRecord>, usize) {
    records.sort_by(|a, b| a.reported_start.total_cmp(&b.reported_start).then(a.disruption_id.cmp(&b.disruption_id)));
    let mut out: Vec<DisruptionRecord> = Vec::with_capacity(records.len());
    let mut merged = 0;
    for r in records {
        match out.last_mut() {
            Some(last) if r.reported_start <= last.reported_end => {
                last.reported_end = last.reported_end.max(r.reported_end);
                last.disruption_id = last.disruption_id.min(r.disruption_id);
                if !r.cause.is_empty() && last.cause != r.cause {
                    last.cause = format!("{}; {}", last.cause, r.cause);
                }
                merged += 1;
            }
            _ => out.push(r),
        }
    }
    (out, merged)
}

/// Earliest departure, strictly after the reported start, of any train that
/// was dwelling at a non-terminal station at the reported end.
pub fn effective_disruption_end(d: &DisruptionRecord, trajs: &[TrainTrajectory], stations: usize) -> Result<f64> {
    trajs
        .iter()
        .filter_map(|t| {
            let v = t.visits.iter().find(|v| v.arrival <= d.reported_end && d.reported_end <= v.departure)?;
            (v.station < stations && v.departure > d.reported_start).then_some(v.departure)
        })
        .min_by(f64::total_cmp)
        .ok_or(Error::NoResumingTrain { disruption_id: d.disruption_id })
}

/// A train on the line when service resumed, and where it was held.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectedTrain {
    /// Index into the trajectory slice.
    pub index: usize,
    pub train_id: i64,
    pub station: usize,
    /// The train was between stations and was assigned a neighbouring one.
    pub in_tunnel: bool,
}

/// Trains in operation between the reported start and the effective end,
/// with their positions at the effective end, leading train first.
pub fn affected_trains(d: &DisruptionRecord, trajs: &[TrainTrajectory], stations: usize) -> Result<Vec<AffectedTrain>> {
    let end = d
        .effective_end
        .ok_or_else(|| Error::InvalidParameter(format!("disruption {} has no effective end", d.disruption_id)))?;
    let positions = trajs.iter().enumerate().filter_map(|(index, t)| {
        if t.visits.is_empty() || t.first_time() > end || t.last_time() < d.reported_start {
            return None;
        }
        Some((index, t.train_id, t.position_at(end)?))
    });
    Ok(assign_held_stations(positions, stations))
}

/// Maps positions at the resume time to held stations. Trains at the
/// terminal are dropped; a train between stations takes the next station,
/// or the one it left when the next is occupied. One train per station,
/// leading train first.
pub fn assign_held_stations(
    positions: impl IntoIterator<Item = (usize, i64, Position)>,
    stations: usize,
) -> Vec<AffectedTrain> {
    let mut at_station = Vec::new();
    let mut in_tunnel = Vec::new();
    for (index, train_id, pos) in positions {
        match pos {
            Position::Station(s) if s < stations => {
                at_station.push(AffectedTrain { index, train_id, station: s, in_tunnel: false })
            }
            Position::Tunnel { next } => {
                in_tunnel.push(AffectedTrain { index, train_id, station: next, in_tunnel: true })
            }
            _ => {}
        }
    }
    for a in &mut in_tunnel {
        if at_station.iter().any(|s| s.station == a.station) {
            a.station -= 1;
        }
    }
    let mut out: Vec<AffectedTrain> =
        at_station.into_iter().chain(in_tunnel.into_iter().filter(|a| a.station < stations)).collect();
    out.sort_by(|a, b| b.station.cmp(&a.station).then(a.in_tunnel.cmp(&b.in_tunnel)));
    out.dedup_by_key(|a| a.station);
    out
}

/// Outcome of resolving the effective end of every disruption.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisruptionReport {
    pub merged: usize,
    /// Ids of disruptions dropped because no held train resumed.
    pub no_resuming_train: Vec<i64>,
}

/// Merges overlapping windows and fills in effective ends, dropping
/// disruptions with no resuming train.
pub fn resolve_disruptions(
    records: Vec<DisruptionRecord>,
    trajs: &[TrainTrajectory],
    stations: usize,
) -> Result<(Vec<DisruptionRecord>, DisruptionReport)> {
    for r in &records {
        r.validate()?;
    }
    let (merged, n_merged) = merge_overlapping(records);
    let mut report = DisruptionReport { merged: n_merged, ..Default::default() };
    let mut out = Vec::with_capacity(merged.len());
    for mut d in merged {
        match effective_disruption_end(&d, trajs, stations) {
            Ok(t) => {
                d.effective_end = Some(t);
                out.push(d);
            }
            Err(Error::NoResumingTrain { disruption_id }) => report.no_resuming_train.push(disruption_id),
            Err(e) => return Err(e),
        }
    }
    out.sort_by_key(|d| d.disruption_id);
    Ok((out, report))
}

#[derive(Debug, Serialize, Deserialize)]
struct DisruptionRow {
    disruption_id: i64,
    start_ts: String,
    end_ts: String,
    station: usize,
    cause: String,
    #[serde(default)]
    effective_end_ts: Option<String>,
}

pub fn read_disruptions<R: Read>(r: R) -> Result<Vec<DisruptionRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize::<DisruptionRow>()
        .map(|row| {
            let row = row?;
            let effective_end = match row.effective_end_ts.as_deref().map(str::trim) {
                Some(s) if !s.is_empty() => Some(parse_timestamp(s)?),
                _ => None,
            };
            Ok(DisruptionRecord {
                disruption_id: row.disruption_id,
                reported_start: parse_timestamp(&row.start_ts)?,
                reported_end: parse_timestamp(&row.end_ts)?,
                location: row.station,
                cause: row.cause,
                effective_end,
            })
        })
        .collect()
}

/// Writes the raw log columns, plus `effective_end_ts` when any record has one.
pub fn write_disruptions<W: Write>(w: W, records: &[DisruptionRecord]) -> Result<()> {
    let with_end = records.iter().any(|r| r.effective_end.is_some());
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let mut header = vec!["disruption_id", "start_ts", "end_ts", "station", "cause"];
    if with_end {
        header.push("effective_end_ts");
    }
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.disruption_id.to_string(),
            format_timestamp(r.reported_start),
            format_timestamp(r.reported_end),
            r.location.to_string(),
            r.cause.clone(),
        ];
        if with_end {
            row.push(r.effective_end.map(format_timestamp).unwrap_or_default());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
