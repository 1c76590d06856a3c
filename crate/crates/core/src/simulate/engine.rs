use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, Poisson};

use super::{HeldTrain, RecoveryLaw, SimConfig, TrueDisruption};
use crate::error::{Error, Result};
use crate::features::{overlap_ratio, HeadwayTerm, ObservationRecord, RecordFlags, ReferenceProfile};
use crate::ingest::{assign_held_stations, DisruptionRecord, Position};
use crate::model::{adjusted_mean, effective_distance, innovation_law, mean_mu, ModelConfig, ParameterVector};

const CAUSES: [&str; 4] = ["signal failure", "door fault", "passenger incident", "track obstruction"];

pub(crate) fn ms(seconds: f64) -> i64 {
    (seconds * 1000.0).round() as i64
}

pub(crate) fn secs(ms: i64) -> f64 {
    ms as f64 / 1000.0
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PlannedDisruption {
    pub start: i64,
    pub resume: i64,
    pub location: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct DayPlan {
    pub dispatches: Vec<i64>,
    pub disruptions: Vec<PlannedDisruption>,
}

/// Where a train stopped when its walk was cut short by a halt.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Stop {
    Done,
    Held(Position),
    /// Could not enter the line before service resumed.
    OffLine,
}

/// One simulated day with day-local train, disruption and record ids.
#[derive(Debug, Clone, Default)]
pub(crate) struct DayOutput {
    /// Block entry times per train; the last entry is the exit time.
    pub trains: Vec<Vec<i64>>,
    pub disruptions: Vec<(DisruptionRecord, TrueDisruption)>,
    pub records: Vec<ObservationRecord>,
    pub epsilon: Vec<f64>,
}

pub(crate) struct Engine<'a> {
    cfg: &'a SimConfig,
    tb: usize,
    n_blocks: usize,
    dwell: LogNormal<f64>,
    running: Vec<LogNormal<f64>>,
    clearance: i64,
    min_part: i64,
    truth: &'a ParameterVector,
    model: ModelConfig,
    profile: &'a ReferenceProfile,
}

/// Per-train walking state for the segment being traversed.
#[derive(Default)]
struct Segment {
    part: Option<i64>,
    target: Option<i64>,
}

type TargetFn<'f> = dyn FnMut(usize, &[i64], &mut ChaCha8Rng) -> Result<Option<i64>> + 'f;

impl<'a> Engine<'a> {
    pub fn new(cfg: &'a SimConfig, truth: &'a ParameterVector, profile: &'a ReferenceProfile) -> Result<Self> {
        let lognormal = |median: f64, sigma: f64| {
            LogNormal::new(median.ln(), sigma).map_err(|e| Error::InvalidConfig(format!("simulation: {e}")))
        };
        let tb = cfg.tunnel_blocks;
        Ok(Engine {
            cfg,
            tb,
            n_blocks: (cfg.stations - 1) * (tb + 1) + 1,
            dwell: lognormal(cfg.dwell_median, cfg.dwell_sigma)?,
            running: cfg.running().iter().map(|&r| lognormal(r, cfg.running_sigma)).collect::<Result<_>>()?,
            clearance: ms(cfg.clearance),
            min_part: ms(cfg.min_running / tb as f64).max(1),
            truth,
            model: cfg.model_config(),
            profile,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn station_block(&self, s: usize) -> usize {
        (s - 1) * (self.tb + 1)
    }

    fn station_of(&self, b: usize) -> Option<usize> {
        b.is_multiple_of(self.tb + 1).then_some(b / (self.tb + 1) + 1)
    }

    /// Earliest entry into block `b` at or after `desired` given the train ahead.
    fn enter(&self, prev: Option<&[i64]>, b: usize, desired: i64) -> i64 {
        match prev {
            Some(p) => desired.max(p.get(b + 1).copied().unwrap_or(i64::MAX).saturating_add(self.clearance)),
            None => desired,
        }
    }

    fn draw_dwell(&self, rng: &mut ChaCha8Rng) -> i64 {
        ms(self.dwell.sample(rng)).max(1000)
    }

    pub fn plan_day(&self, day: usize, epoch_ms: i64, rng: &mut ChaCha8Rng) -> Result<DayPlan> {
        let cfg = self.cfg;
        let mut disruptions = Vec::new();
        if !cfg.scripted.is_empty() {
            for s in cfg.scripted.iter().filter(|s| s.day == day) {
                let start = epoch_ms + ms(s.start_hour * 3600.0);
                disruptions.push(PlannedDisruption {
                    start,
                    resume: start + ms(s.duration_minutes * 60.0),
                    location: s.location,
                });
            }
            disruptions.sort_by_key(|d| d.start);
        } else if cfg.disruptions_per_day > 0.0 {
            let n = Poisson::new(cfg.disruptions_per_day)
                .map_err(|e| Error::InvalidConfig(format!("simulation: {e}")))?
                .sample(rng) as usize;
            let extra = cfg.duration_mean - cfg.duration_min;
            let gamma = Gamma::new(cfg.duration_shape, extra / cfg.duration_shape)
                .map_err(|e| Error::InvalidConfig(format!("simulation: {e}")))?;
            let mut durations: Vec<f64> = (0..n).map(|_| cfg.duration_min + gamma.sample(rng)).collect();
            let window = (cfg.disruption_window.1 - cfg.disruption_window.0) * 60.0;
            let slack = |d: &[f64]| window - d.iter().sum::<f64>() - d.len().saturating_sub(1) as f64 * cfg.disruption_gap;
            while !durations.is_empty() && slack(&durations) < 0.0 {
                durations.pop();
            }
            let free = slack(&durations).max(0.0);
            let mut offsets: Vec<f64> = durations.iter().map(|_| rng.random::<f64>() * free).collect();
            offsets.sort_by(f64::total_cmp);
            let mut used = 0.0;
            for (u, dur) in offsets.iter().zip(&durations) {
                let start_min = cfg.disruption_window.0 * 60.0 + u + used;
                used += dur + cfg.disruption_gap;
                let start = epoch_ms + ms(start_min * 60.0);
                disruptions.push(PlannedDisruption {
                    start,
                    resume: start + ms(dur * 60.0),
                    location: rng.random_range(1..=cfg.stations),
                });
            }
        }
        let mut dispatches = Vec::new();
        let mut t = ms(cfg.service_start * 3600.0);
        while t <= ms(cfg.service_end * 3600.0) {
            let abs = epoch_ms + t;
            if !disruptions.iter().any(|d| d.start <= abs && abs <= d.resume) {
                dispatches.push(abs);
            }
            t += ms(cfg.headway_at(t as f64 / 3.6e6) * 60.0);
        }
        Ok(DayPlan { dispatches, disruptions })
    }

    /// Moves a train block by block from its current state. With a halt
    /// window, stops where the train stands at the resume time; `hold`
    /// releases a held train from its station no earlier than the given
    /// time; `target` supplies arrival targets for stations that have them.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        entries: &mut Vec<i64>,
        dispatch: i64,
        prev: Option<&[i64]>,
        halt: Option<(i64, i64)>,
        hold: Option<(usize, i64)>,
        target: &mut TargetFn<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Stop> {
        if entries.is_empty() {
            let e = self.enter(prev, 0, dispatch);
            if halt.is_some_and(|(_, r)| e > r) {
                return Ok(Stop::OffLine);
            }
            entries.push(e);
        }
        let mut seg = Segment::default();
        loop {
            let b = entries.len() - 1;
            let t = entries[b];
            if b == self.n_blocks - 1 {
                entries.push(t + self.draw_dwell(rng));
                return Ok(Stop::Done);
            }
            if let Some(s) = self.station_of(b) {
                let desired = match hold {
                    Some((hs, rel)) if hs == s => rel.max(t),
                    _ => t + self.draw_dwell(rng),
                };
                let dep = self.enter(prev, b + 1, desired);
                if let Some((t0, r)) = halt {
                    if t <= r && dep >= t0 {
                        return Ok(Stop::Held(Position::Station(s)));
                    }
                }
                entries.push(dep);
                seg.part = None;
                continue;
            }
            let next = b / (self.tb + 1) + 2;
            let seg_dep = entries[self.station_block(next - 1) + 1];
            if seg.part.is_none() {
                let run = ms(self.running[next - 2].sample(rng));
                seg.part = Some((run / self.tb as i64).max(self.min_part));
                seg.target = target(next, entries, rng)?;
            }
            let part = seg.part.expect("segment drawn");
            let into_station = self.station_of(b + 1).is_some();
            let desired = match (seg.target, into_station) {
                (Some(tgt), true) => tgt.max(t + self.min_part),
                (Some(tgt), false) => t + self.min_part.max((tgt - seg_dep) / self.tb as i64),
                (None, _) => t + part,
            };
            let e = self.enter(prev, b + 1, desired);
            if halt.is_some_and(|(_, r)| e > r) {
                return Ok(Stop::Held(Position::Tunnel { next }));
            }
            entries.push(e);
        }
    }

    pub fn simulate_day(&self, plan: &DayPlan, rng: &mut ChaCha8Rng) -> Result<DayOutput> {
        let mut out = DayOutput::default();
        let mut pending: Vec<(usize, Stop)> = Vec::new();
        let mut next_d = 0;
        let mut none = |_: usize, _: &[i64], _: &mut ChaCha8Rng| Ok(None);
        for (ti, &tau) in plan.dispatches.iter().enumerate() {
            while next_d < plan.disruptions.len() && plan.disruptions[next_d].start < tau {
                self.resolve(&plan.disruptions[next_d], &plan.dispatches, &mut pending, &mut out, rng)?;
                next_d += 1;
            }
            let halt = plan.disruptions.get(next_d).map(|d| (d.start, d.resume));
            let mut entries = Vec::with_capacity(self.n_blocks + 1);
            let stop = self.advance(&mut entries, tau, out.trains.last().map(Vec::as_slice), halt, None, &mut none, rng)?;
            out.trains.push(entries);
            if stop != Stop::Done {
                pending.push((ti, stop));
            }
        }
        while next_d < plan.disruptions.len() {
            self.resolve(&plan.disruptions[next_d], &plan.dispatches, &mut pending, &mut out, rng)?;
            next_d += 1;
        }
        Ok(out)
    }

    /// Releases the trains held by one disruption and drives the affected
    /// ones through their recovery.
    fn resolve(
        &self,
        d: &PlannedDisruption,
        dispatches: &[i64],
        pending: &mut Vec<(usize, Stop)>,
        out: &mut DayOutput,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let cfg = self.cfg;
        let stations = cfg.stations;
        let local_id = out.disruptions.len() as i64 + 1;
        let positions = pending.iter().filter_map(|&(ti, stop)| match stop {
            Stop::Held(p) => Some((ti, ti as i64, p)),
            _ => None,
        });
        let affected = assign_held_stations(positions, stations);
        if affected.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(Error::InvalidConfig("simulation: held trains out of line order".into()));
        }
        let held_stations: Vec<usize> = affected.iter().map(|a| a.station).collect();
        let resume_s = secs(d.resume);

        // records of the affected train ahead, per destination: (record index, origin)
        let mut ahead: Vec<Option<(usize, usize)>> = vec![None; stations + 1];
        let mut rank = 0i64;
        for &(ti, stop) in pending.iter() {
            let hold = match stop {
                Stop::Held(Position::Station(s)) => {
                    let rel = d.resume + rank * ms(cfg.stagger);
                    rank += 1;
                    Some((s, rel))
                }
                _ => None,
            };
            let mut entries = std::mem::take(&mut out.trains[ti]);
            let prev = if ti > 0 { Some(out.trains[ti - 1].as_slice()) } else { None };
            let info = affected.iter().find(|a| a.index == ti).copied();
            let mut reached: Vec<Option<(usize, usize)>> = vec![None; stations + 1];
            let stop = {
                let records = &mut out.records;
                let epsilon = &mut out.epsilon;
                let ahead = &ahead;
                let reached = &mut reached;
                let mut target = |k: usize, own: &[i64], rng: &mut ChaCha8Rng| -> Result<Option<i64>> {
                    let Some(a) = info else { return Ok(None) };
                    let j = a.station;
                    if k <= j {
                        return Ok(None);
                    }
                    let mut headways = Vec::new();
                    if let Some(p) = prev {
                        for m in j + 1..k {
                            let arr = secs(own[self.station_block(m)]);
                            let h = (arr - secs(p[self.station_block(m) + 1])) / 60.0;
                            if let Some(reference) = self.profile.headway_median(m, arr) {
                                headways.push(HeadwayTerm { station: m, imbalance: h - reference, reference });
                            }
                        }
                    }
                    let ref_travel = self
                        .profile
                        .travel_median(j, k, resume_s)
                        .ok_or_else(|| Error::InvalidConfig("simulation: reference profile has gaps".into()))?;
                    let pred = ahead[k];
                    let mut flags = RecordFlags::empty();
                    if a.in_tunnel {
                        flags.insert(RecordFlags::TUNNEL_ASSIGNED);
                    }
                    let mut rec = ObservationRecord {
                        record_id: records.len() as u64 + 1,
                        disruption_id: local_id,
                        train_id: ti as i64,
                        origin: j,
                        destination: k,
                        y: 0.0,
                        ref_travel,
                        headways,
                        formation: (1..=cfg.max_lag).map(|l| held_stations.contains(&(j + l))).collect(),
                        is_first: pred.is_none(),
                        predecessor: pred.map(|p| records[p.0].record_id),
                        pred_origin: pred.map(|p| p.1),
                        overlap: pred.map(|p| overlap_ratio(j, p.1, k)),
                        flags,
                    };
                    let eps_prev = pred.map(|p| epsilon[p.0]);
                    let (y, eps) = self.draw_travel(&rec, eps_prev, rng)?;
                    rec.y = y;
                    reached[k] = Some((records.len(), j));
                    records.push(rec);
                    epsilon.push(eps);
                    Ok(Some(d.resume + ms(y * 60.0)))
                };
                self.advance(&mut entries, dispatches[ti], prev, None, hold, &mut target, rng)?
            };
            debug_assert_eq!(stop, Stop::Done);
            out.trains[ti] = entries;
            if info.is_some() {
                ahead = reached;
            }
        }
        pending.clear();

        let report_start = d.start + ms(Normal::new(0.0, cfg.report_start_sd).expect("finite sd").sample(rng));
        let report_end = d.resume - ms(rng.random::<f64>() * cfg.report_end_lead);
        let cause = CAUSES[rng.random_range(0..CAUSES.len())].to_string();
        let log = DisruptionRecord {
            disruption_id: local_id,
            reported_start: secs(report_start),
            reported_end: secs(report_end),
            location: d.location,
            cause,
            effective_end: None,
        };
        let truth = TrueDisruption {
            disruption_id: local_id,
            start: secs(d.start),
            resume: resume_s,
            reported_start: log.reported_start,
            reported_end: log.reported_end,
            location: d.location,
            held: affected
                .iter()
                .map(|a| HeldTrain { train_id: a.index as i64, station: a.station, in_tunnel: a.in_tunnel })
                .collect(),
        };
        out.disruptions.push((log, truth));
        Ok(())
    }

    /// Travel time in minutes and its innovation.
    fn draw_travel(&self, rec: &ObservationRecord, eps_prev: Option<f64>, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let p = self.truth;
        let d = effective_distance(rec.distance(), self.model.distance_cap);
        for _ in 0..10_000 {
            let (y, eps) = match self.cfg.recovery {
                RecoveryLaw::Model => {
                    let base = adjusted_mean(rec, p, &self.model)?;
                    let carry = match (eps_prev, rec.overlap) {
                        (Some(e), Some(ov)) if self.model.family.has_dependence() => p.dependence(ov) * e,
                        _ => 0.0,
                    };
                    let eps = innovation_law(self.model.family, p, d).sample(rng);
                    (base + carry + eps, eps)
                }
                RecoveryLaw::ShiftedGamma { shape, scale } => {
                    let theta = scale * d.sqrt();
                    let g = Gamma::new(shape, theta).map_err(|e| Error::InvalidConfig(format!("simulation: {e}")))?;
                    let eps = g.sample(rng) - shape * theta;
                    (mean_mu(rec, p, &self.model) + eps, eps)
                }
            };
            if y > 0.0 {
                return Ok((y, eps));
            }
        }
        Err(Error::InvalidConfig("simulation: true parameters keep producing non-positive travel times".into()))
    }
}
