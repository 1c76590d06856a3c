use std::io::{Read, Write};

use chrono::{DateTime, Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DisruptionRecord, TrainTrajectory};

const DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub bin_minutes: u32,
    /// Bins with fewer samples have their window doubled until they reach it.
    pub min_count: usize,
    /// Normal-operation exclusion before each reported start, minutes.
    pub exclude_before: f64,
    /// Normal-operation exclusion after each effective end, minutes.
    pub exclude_after: f64,
    pub holidays: Vec<NaiveDate>,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { bin_minutes: 30, min_count: 20, exclude_before: 30.0, exclude_after: 60.0, holidays: Vec::new() }
    }
}

/// Time-of-day medians of headways per station and of travel times per
/// station pair, from normal weekday operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    pub bin_minutes: u32,
    pub stations: usize,
    /// `headway[m - 1][bin]`, minutes; `None` where no data exists.
    pub headway: Vec<Vec<Option<f64>>>,
    /// `travel[pair_index(j, k)][bin]`, minutes.
    pub travel: Vec<Vec<Option<f64>>>,
    /// Number of (series, bin) cells whose window had to be widened.
    pub widened_bins: usize,
}

/// Index of the ordered pair `j < k` in a triangular layout.
pub fn pair_index(stations: usize, j: usize, k: usize) -> usize {
    debug_assert!(1 <= j && j < k && k <= stations);
    (j - 1) * (2 * stations - j) / 2 + (k - j - 1)
}

fn n_pairs(stations: usize) -> usize {
    stations * (stations - 1) / 2
}

fn bins_per_day(bin_minutes: u32) -> usize {
    (1440 / bin_minutes) as usize
}

/// Seconds since midnight UTC.
pub fn time_of_day(ts: f64) -> f64 {
    ts.rem_euclid(DAY)
}

fn date_of(ts: f64) -> NaiveDate {
    DateTime::from_timestamp((ts.div_euclid(DAY) * DAY) as i64, 0).map_or(NaiveDate::MIN, |d| d.date_naive())
}

impl ReferenceProfile {
    /// A profile filled from closed-form medians, used by the simulator.
    pub fn from_fn(
        stations: usize,
        bin_minutes: u32,
        headway: impl Fn(usize, f64) -> f64,
        travel: impl Fn(usize, usize, f64) -> f64,
    ) -> Self {
        let nb = bins_per_day(bin_minutes);
        let centre = |b: usize| (b as f64 + 0.5) * bin_minutes as f64 * 60.0;
        let headway = (1..=stations).map(|m| (0..nb).map(|b| Some(headway(m, centre(b)))).collect()).collect();
        let mut travel_tab = vec![Vec::new(); n_pairs(stations)];
        for j in 1..stations {
            for k in j + 1..=stations {
                travel_tab[pair_index(stations, j, k)] = (0..nb).map(|b| Some(travel(j, k, centre(b)))).collect();
            }
        }
        ReferenceProfile { bin_minutes, stations, headway, travel: travel_tab, widened_bins: 0 }
    }

    /// Bin containing the time of day of `ts`, left-closed.
    pub fn bin_of(&self, ts: f64) -> usize {
        ((time_of_day(ts) / 60.0) as usize / self.bin_minutes as usize).min(bins_per_day(self.bin_minutes) - 1)
    }

    pub fn headway_median(&self, station: usize, ts: f64) -> Option<f64> {
        self.headway.get(station.checked_sub(1)?)?.get(self.bin_of(ts)).copied().flatten()
    }

    pub fn travel_median(&self, origin: usize, destination: usize, ts: f64) -> Option<f64> {
        if !(1 <= origin && origin < destination && destination <= self.stations) {
            return None;
        }
        self.travel[pair_index(self.stations, origin, destination)][self.bin_of(ts)]
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }
}

/// Decides which timestamps count as normal weekday operation.
struct NormalFilter<'a> {
    windows: Vec<(f64, f64)>,
    cfg: &'a ProfileConfig,
}

impl<'a> NormalFilter<'a> {
    fn new(disruptions: &[DisruptionRecord], cfg: &'a ProfileConfig) -> Self {
        let mut windows: Vec<(f64, f64)> = disruptions
            .iter()
            .map(|d| {
                let end = d.effective_end.unwrap_or(d.reported_end).max(d.reported_end);
                (d.reported_start - 60.0 * cfg.exclude_before, end + 60.0 * cfg.exclude_after)
            })
            .collect();
        windows.sort_by(|a, b| a.0.total_cmp(&b.0));
        NormalFilter { windows, cfg }
    }

    fn weekday(&self, ts: f64) -> bool {
        let d = date_of(ts);
        !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) && !self.cfg.holidays.contains(&d)
    }

    /// True when `[a, b]` touches no exclusion window.
    fn clear(&self, a: f64, b: f64) -> bool {
        let i = self.windows.partition_point(|w| w.0 <= b);
        !self.windows[..i].iter().any(|w| w.1 >= a)
    }

    fn accepts(&self, anchor: f64, a: f64, b: f64) -> bool {
        self.weekday(anchor) && self.clear(a, b)
    }
}

/// Rolling medians for one series: samples are (time of day, value).
fn bin_medians(samples: &mut [(f64, f64)], cfg: &ProfileConfig, widened: &mut usize) -> Vec<Option<f64>> {
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = samples.len();
    let nb = bins_per_day(cfg.bin_minutes);
    let width = cfg.bin_minutes as f64 * 60.0;
    let mut buf = Vec::new();
    (0..nb)
        .map(|b| {
            if n == 0 {
                return None;
            }
            let centre = (b as f64 + 0.5) * width;
            let mut half = width / 2.0;
            loop {
                buf.clear();
                collect_circular(samples, centre - half, centre + half, &mut buf);
                if buf.len() >= cfg.min_count.max(1) || half >= DAY / 2.0 {
                    break;
                }
                half *= 2.0;
            }
            if half > width / 2.0 {
                *widened += 1;
            }
            median(&mut buf)
        })
        .collect()
}

/// Values whose time of day lies in `[lo, hi)`, wrapping around midnight.
fn collect_circular(samples: &[(f64, f64)], lo: f64, hi: f64, out: &mut Vec<f64>) {
    if hi - lo >= DAY {
        out.extend(samples.iter().map(|s| s.1));
        return;
    }
    let mut take = |a: f64, b: f64| {
        let i = samples.partition_point(|s| s.0 < a);
        let j = samples.partition_point(|s| s.0 < b);
        out.extend(samples[i..j].iter().map(|s| s.1));
    };
    if lo < 0.0 {
        take(lo + DAY, DAY);
        take(0.0, hi);
    } else if hi > DAY {
        take(lo, DAY);
        take(0.0, hi - DAY);
    } else {
        take(lo, hi);
    }
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    let n = v.len();
    if n == 0 {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-station departures sorted by time, for predecessor lookups.
#[derive(Debug, Clone)]
pub struct StationIndex {
    /// `departures[m - 1]` holds `(departure, trajectory index)`.
    departures: Vec<Vec<(f64, usize)>>,
}

impl StationIndex {
    pub fn new(trajs: &[TrainTrajectory], stations: usize) -> Self {
        let mut departures = vec![Vec::new(); stations];
        for (i, t) in trajs.iter().enumerate() {
            for v in &t.visits {
                if v.station >= 1 && v.station <= stations {
                    departures[v.station - 1].push((v.departure, i));
                }
            }
        }
        for d in &mut departures {
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        StationIndex { departures }
    }

    /// Latest departure from `station` strictly before `t` by a train other
    /// than `train`.
    pub fn previous_departure(&self, station: usize, t: f64, train: usize) -> Option<f64> {
        let list = self.departures.get(station.checked_sub(1)?)?;
        let i = list.partition_point(|d| d.0 < t);
        list[..i].iter().rev().find(|d| d.1 != train).map(|d| d.0)
    }
}

/// Why a headway could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadwayError {
    /// The train did not visit the station.
    NotVisited,
    /// No other train departed the station before this one arrived.
    NoPredecessor,
}

/// Gap, in minutes, between the previous train's departure from `station`
/// and the arrival of train `train` there.
pub fn compute_headway(
    train: usize,
    station: usize,
    trajs: &[TrainTrajectory],
    index: &StationIndex,
) -> std::result::Result<f64, HeadwayError> {
    let v = trajs[train].visit(station).ok_or(HeadwayError::NotVisited)?;
    let dep = index.previous_departure(station, v.arrival, train).ok_or(HeadwayError::NoPredecessor)?;
    Ok((v.arrival - dep) / 60.0)
}

/// Medians of headways and travel times over normal weekday operation.
pub fn build_reference_profile(
    trajs: &[TrainTrajectory],
    disruptions: &[DisruptionRecord],
    stations: usize,
    cfg: &ProfileConfig,
) -> Result<ReferenceProfile> {
    if cfg.bin_minutes == 0 || 1440 % cfg.bin_minutes != 0 {
        return Err(Error::InvalidConfig(format!("bin width {} must divide a day", cfg.bin_minutes)));
    }
    let filter = NormalFilter::new(disruptions, cfg);
    let index = StationIndex::new(trajs, stations);
    let mut widened = 0;

    let mut headway = Vec::with_capacity(stations);
    for m in 1..=stations {
        let mut samples = Vec::new();
        for (i, t) in trajs.iter().enumerate() {
            let Some(v) = t.visit(m) else { continue };
            let Some(dep) = index.previous_departure(m, v.arrival, i) else { continue };
            if filter.accepts(v.arrival, dep, v.arrival) {
                samples.push((time_of_day(v.arrival), (v.arrival - dep) / 60.0));
            }
        }
        headway.push(bin_medians(&mut samples, cfg, &mut widened));
    }

    let mut travel = vec![Vec::new(); n_pairs(stations)];
    let mut samples: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_pairs(stations)];
    for t in trajs {
        for (a, va) in t.visits.iter().enumerate() {
            if va.station >= stations || !filter.weekday(va.departure) {
                continue;
            }
            let tod = time_of_day(va.departure);
            for vb in &t.visits[a + 1..] {
                if vb.station > stations || !filter.clear(va.departure, vb.arrival) {
                    continue;
                }
                samples[pair_index(stations, va.station, vb.station)].push((tod, (vb.arrival - va.departure) / 60.0));
            }
        }
    }
    for (p, s) in samples.iter_mut().enumerate() {
        travel[p] = bin_medians(s, cfg, &mut widened);
    }
    Ok(ReferenceProfile { bin_minutes: cfg.bin_minutes, stations, headway, travel, widened_bins: widened })
}
