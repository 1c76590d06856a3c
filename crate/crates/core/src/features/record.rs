use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-record condition flags carried through to predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordFlags(u8);

impl RecordFlags {
    /// Held station was inferred from a train caught between stations.
    pub const TUNNEL_ASSIGNED: RecordFlags = RecordFlags(1);
    /// Predecessor record lives in the other split; treated as a lead record.
    pub const ORPHANED: RecordFlags = RecordFlags(2);
    /// Distance exceeded the configured cap and was clamped.
    pub const DISTANCE_CLAMPED: RecordFlags = RecordFlags(4);
    /// Some predictive draws were not positive.
    pub const NEGATIVE_DRAWS: RecordFlags = RecordFlags(8);
    /// Predicted with the predecessor's observed innovation plugged in.
    pub const PLUG_IN: RecordFlags = RecordFlags(16);

    const NAMES: [(RecordFlags, &'static str); 5] = [
        (Self::TUNNEL_ASSIGNED, "tunnel"),
        (Self::ORPHANED, "orphan"),
        (Self::DISTANCE_CLAMPED, "clamped"),
        (Self::NEGATIVE_DRAWS, "negative"),
        (Self::PLUG_IN, "plugin"),
    ];

    pub const fn empty() -> Self {
        RecordFlags(0)
    }

    pub fn contains(self, other: RecordFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: RecordFlags) {
        self.0 |= other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut out = RecordFlags::empty();
        for tok in s.split(';').filter(|t| !t.is_empty()) {
            let (flag, _) = Self::NAMES
                .iter()
                .find(|(_, n)| *n == tok)
                .ok_or_else(|| Error::Parse(format!("unknown record flag {tok:?}")))?;
            out.insert(*flag);
        }
        Ok(out)
    }
}

impl std::fmt::Display for RecordFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> =
            Self::NAMES.iter().filter(|(fl, _)| self.contains(*fl)).map(|(_, n)| *n).collect();
        f.write_str(&names.join(";"))
    }
}

/// Headway at one intermediate station, relative to its normal-operation median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadwayTerm {
    pub station: usize,
    /// Observed headway minus the reference median, minutes.
    pub imbalance: f64,
    /// Reference median headway, minutes.
    pub reference: f64,
}

/// One post-disruption travel time from a held position to a downstream
/// station, with everything the mean model needs frozen in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub record_id: u64,
    pub disruption_id: i64,
    pub train_id: i64,
    pub origin: usize,
    pub destination: usize,
    /// Minutes from the effective disruption end to arrival at `destination`.
    pub y: f64,
    /// Reference travel time from origin to destination, minutes.
    pub ref_travel: f64,
    pub headways: Vec<HeadwayTerm>,
    /// `formation[l - 1]` is set when another held train sat exactly `l`
    /// segments ahead.
    pub formation: Vec<bool>,
    pub is_first: bool,
    pub predecessor: Option<u64>,
    pub pred_origin: Option<usize>,
    pub overlap: Option<f64>,
    pub flags: RecordFlags,
}

impl ObservationRecord {
    pub fn distance(&self) -> usize {
        self.destination - self.origin
    }

    /// Checks the structural invariants of a single record.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("record {}: {m}", self.record_id)));
        if self.origin >= self.destination {
            return bad(format!("origin {} not before destination {}", self.origin, self.destination));
        }
        if !(self.y.is_finite() && self.y > 0.0) {
            return bad(format!("travel time {} not positive", self.y));
        }
        if !self.ref_travel.is_finite() {
            return bad("reference travel time not finite".into());
        }
        for h in &self.headways {
            if h.station <= self.origin || h.station >= self.destination || !h.imbalance.is_finite() {
                return bad(format!("bad headway term at station {}", h.station));
            }
        }
        match (self.is_first, self.predecessor, self.pred_origin, self.overlap) {
            (true, None, None, None) => Ok(()),
            (false, Some(_), Some(jp), Some(ov)) => {
                if !(self.origin < jp && jp < self.destination) {
                    return bad(format!("predecessor origin {jp} outside ({}, {})", self.origin, self.destination));
                }
                if !(ov > 0.0 && ov < 1.0) {
                    return bad(format!("overlap {ov} outside (0, 1)"));
                }
                Ok(())
            }
            _ => bad("inconsistent predecessor link".into()),
        }
    }

    /// Turns a follower into a lead record, used when its predecessor was
    /// assigned to another split.
    pub fn orphan(&mut self) {
        self.is_first = true;
        self.predecessor = None;
        self.pred_origin = None;
        self.overlap = None;
        self.flags.insert(RecordFlags::ORPHANED);
    }
}

/// `(k - j') / (k - j)`.
pub fn overlap_ratio(origin: usize, pred_origin: usize, destination: usize) -> f64 {
    (destination - pred_origin) as f64 / (destination - origin) as f64
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    record_id: u64,
    disruption_id: i64,
    train_id: i64,
    origin: usize,
    destination: usize,
    distance: usize,
    y: f64,
    ref_travel: f64,
    imbalance: String,
    ref_headway: String,
    formation: String,
    is_first: u8,
    predecessor_id: Option<u64>,
    pred_origin: Option<usize>,
    overlap: Option<f64>,
    flags: String,
}

fn join_station_values(it: impl Iterator<Item = (usize, f64)>) -> String {
    let mut s = String::new();
    for (i, (m, v)) in it.enumerate() {
        if i > 0 {
            s.push(';');
        }
        write!(s, "{m}:{v}").unwrap();
    }
    s
}

fn split_station_values(s: &str) -> Result<Vec<(usize, f64)>> {
    s.split(';')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (m, v) = t
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("expected station:value, got {t:?}")))?;
            let m = m.parse().map_err(|_| Error::Parse(format!("bad station index {m:?}")))?;
            let v = v.parse().map_err(|_| Error::Parse(format!("bad value {v:?}")))?;
            Ok((m, v))
        })
        .collect()
}

impl From<&ObservationRecord> for RecordRow {
    fn from(r: &ObservationRecord) -> Self {
        RecordRow {
            record_id: r.record_id,
            disruption_id: r.disruption_id,
            train_id: r.train_id,
            origin: r.origin,
            destination: r.destination,
            distance: r.distance(),
            y: r.y,
            ref_travel: r.ref_travel,
            imbalance: join_station_values(r.headways.iter().map(|h| (h.station, h.imbalance))),
            ref_headway: join_station_values(r.headways.iter().map(|h| (h.station, h.reference))),
            formation: r.formation.iter().map(|&z| if z { "1" } else { "0" }).collect::<Vec<_>>().join(";"),
            is_first: r.is_first as u8,
            predecessor_id: r.predecessor,
            pred_origin: r.pred_origin,
            overlap: r.overlap,
            flags: r.flags.to_string(),
        }
    }
}

impl TryFrom<RecordRow> for ObservationRecord {
    type Error = Error;

    fn try_from(row: RecordRow) -> Result<Self> {
        let imbalance = split_station_values(&row.imbalance)?;
        let reference = split_station_values(&row.ref_headway)?;
        if imbalance.len() != reference.len()
            || imbalance.iter().zip(&reference).any(|(a, b)| a.0 != b.0)
        {
            return Err(Error::Parse(format!("record {}: headway columns disagree", row.record_id)));
        }
        let headways = imbalance
            .into_iter()
            .zip(reference)
            .map(|((station, imbalance), (_, reference))| HeadwayTerm { station, imbalance, reference })
            .collect();
        let formation = row
            .formation
            .split(';')
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::Parse(format!("bad formation flag {t:?}"))),
            })
            .collect::<Result<_>>()?;
        let rec = ObservationRecord {
            record_id: row.record_id,
            disruption_id: row.disruption_id,
            train_id: row.train_id,
            origin: row.origin,
            destination: row.destination,
            y: row.y,
            ref_travel: row.ref_travel,
            headways,
            formation,
            is_first: row.is_first != 0,
            predecessor: row.predecessor_id,
            pred_origin: row.pred_origin,
            overlap: row.overlap,
            flags: RecordFlags::parse(&row.flags)?,
        };
        if row.distance != rec.distance() {
            return Err(Error::Parse(format!("record {}: distance column disagrees", rec.record_id)));
        }
        Ok(rec)
    }
}

pub fn write_observations<W: Write>(w: W, records: &[ObservationRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(RecordRow::from(r))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_observations<R: Read>(r: R) -> Result<Vec<ObservationRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize::<RecordRow>().map(|row| ObservationRecord::try_from(row?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(first: bool) -> ObservationRecord {
        ObservationRecord {
            record_id: 7,
            disruption_id: 3,
            train_id: 12,
            origin: 4,
            destination: 10,
            y: 14.25,
            ref_travel: 9.1,
            headways: vec![
                HeadwayTerm { station: 5, imbalance: 2.5, reference: 5.1 },
                HeadwayTerm { station: 6, imbalance: -0.1, reference: 4.9 },
            ],
            formation: vec![false, true, false, false, false],
            is_first: first,
            predecessor: (!first).then_some(6),
            pred_origin: (!first).then_some(7),
            overlap: (!first).then_some(0.5),
            flags: RecordFlags::TUNNEL_ASSIGNED,
        }
    }

    #[test]
    fn overlap_example() {
        assert_eq!(overlap_ratio(4, 7, 10), 0.5);
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![sample(true), sample(false)];
        let mut buf = Vec::new();
        write_observations(&mut buf, &recs).unwrap();
        let back = read_observations(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("record_id,disruption_id,train_id,origin,destination,distance,y,"));
        assert!(text.contains("5:2.5;6:-0.1"));
    }

    #[test]
    fn validation_catches_broken_links() {
        assert!(sample(true).validate().is_ok());
        assert!(sample(false).validate().is_ok());
        let mut r = sample(false);
        r.pred_origin = Some(3);
        assert!(r.validate().is_err());
        let mut r = sample(false);
        r.predecessor = None;
        assert!(r.validate().is_err());
    }

    #[test]
    fn orphaning_clears_the_link() {
        let mut r = sample(false);
        r.orphan();
        assert!(r.is_first && r.predecessor.is_none());
        assert!(r.flags.contains(RecordFlags::ORPHANED));
        assert!(r.validate().is_ok());
        assert_eq!(RecordFlags::parse(&r.flags.to_string()).unwrap(), r.flags);
    }
}
