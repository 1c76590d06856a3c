//! Synthetic single-direction metro line.
//!
//! Trains are dispatched on a timetable and walk the line block by block,
//! never entering a block before the train ahead has left it. Normal dwell
//! and running times are log-normal. A disruption halts the whole line:
//! trains finish the segment they are on and wait at the next station, then
//! leave one by one when service resumes. Arrival times of held trains after
//! the resume are drawn from the travel-time model and projected onto what
//! the block constraints allow, so the emitted logs never show overtaking.

mod config;
mod engine;

use std::io::{Read, Write};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::*;
use engine::{secs, Engine};

use crate::error::{Error, Result};
use crate::features::ObservationRecord;
use crate::ingest::{BlockEvent, DisruptionRecord, EventKind, LineTopology, StationVisit, TrainTrajectory};
use crate::model::ParameterVector;

pub const GROUND_TRUTH_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldTrain {
    pub train_id: i64,
    pub station: usize,
    pub in_tunnel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueDisruption {
    pub disruption_id: i64,
    pub start: f64,
    /// Release of the first held train.
    pub resume: f64,
    pub reported_start: f64,
    pub reported_end: f64,
    pub location: usize,
    /// Affected trains, leading train first.
    pub held: Vec<HeldTrain>,
}

/// Everything the logs were projected from. Never read by the fitting
/// pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format_version: u32,
    /// Config with the true effects frozen in.
    pub config: SimConfig,
    pub parameters: ParameterVector,
    pub trajectories: Vec<TrainTrajectory>,
    pub disruptions: Vec<TrueDisruption>,
    /// Records with the travel times drawn from the recovery law.
    pub records: Vec<ObservationRecord>,
    /// Innovation of each record, aligned with `records`.
    pub epsilon: Vec<f64>,
}

impl GroundTruth {
    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let gt: GroundTruth = serde_json::from_reader(r)?;
        if gt.format_version != GROUND_TRUTH_VERSION {
            return Err(Error::Parse(format!("unsupported ground-truth version {}", gt.format_version)));
        }
        Ok(gt)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }
}

/// Raw logs in the ingest formats plus the hidden truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub topology: LineTopology,
    pub events: Vec<BlockEvent>,
    pub disruptions: Vec<DisruptionRecord>,
    pub truth: GroundTruth,
}

/// Simulated calendar: consecutive days from the start date, weekends
/// skipped when configured.
pub fn service_dates(cfg: &SimConfig) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(cfg.days);
    let mut d = cfg.start_date;
    while out.len() < cfg.days {
        if !cfg.weekdays_only || !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn day_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn simulate_days(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.freeze_truth();
    let truth = cfg.true_parameters();
    let profile = cfg.reference_profile();
    let engine = Engine::new(&cfg, &truth, &profile)?;
    let topology = LineTopology::uniform(cfg.stations, cfg.tunnel_blocks, &cfg.direction);

    let mut trajectories = Vec::new();
    let mut disruption_log = Vec::new();
    let mut true_disruptions = Vec::new();
    let mut records = Vec::new();
    let mut epsilon = Vec::new();
    let mut events = Vec::new();
    let jitter = engine::ms(cfg.jitter);

    for (day, date) in service_dates(&cfg).into_iter().enumerate() {
        let epoch_ms = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_millis();
        let mut rng = day_rng(cfg.seed, day as u64 + 1);
        let plan = engine.plan_day(day, epoch_ms, &mut rng)?;
        let out = engine.simulate_day(&plan, &mut rng)?;

        let train_offset = trajectories.len() as i64 + 1;
        let record_offset = records.len() as u64;
        let disruption_offset = disruption_log.len() as i64;
        let mut noise = day_rng(cfg.seed ^ 0x005E_ED0F_7143_u64, day as u64);
        for entries in &out.trains {
            for b in 0..engine.n_blocks() {
                for (kind, t) in [(EventKind::Occupy, entries[b]), (EventKind::Release, entries[b + 1])] {
                    let shift = if jitter > 0 { noise.random_range(-jitter..=jitter) } else { 0 };
                    events.push(BlockEvent { block_id: b as i64, kind, timestamp: secs(t + shift) });
                }
            }
            let visits = (1..=cfg.stations)
                .map(|s| {
                    let b = engine.station_block(s);
                    StationVisit { station: s, arrival: secs(entries[b]), departure: secs(entries[b + 1]) }
                })
                .collect();
            trajectories.push(TrainTrajectory { train_id: trajectories.len() as i64 + 1, visits });
        }
        for (mut log, mut t) in out.disruptions {
            log.disruption_id += disruption_offset;
            t.disruption_id += disruption_offset;
            for h in &mut t.held {
                h.train_id += train_offset;
            }
            disruption_log.push(log);
            true_disruptions.push(t);
        }
        for (mut r, e) in out.records.into_iter().zip(out.epsilon) {
            r.record_id += record_offset;
            r.predecessor = r.predecessor.map(|p| p + record_offset);
            r.disruption_id += disruption_offset;
            r.train_id += train_offset;
            records.push(r);
            epsilon.push(e);
        }
    }
    events.sort_by(|a, b| {
        a.timestamp.total_cmp(&b.timestamp).then(a.block_id.cmp(&b.block_id)).then(a.kind.cmp(&b.kind))
    });
    Ok(SimOutput {
        topology,
        events,
        disruptions: disruption_log,
        truth: GroundTruth {
            format_version: GROUND_TRUTH_VERSION,
            parameters: truth.clone(),
            config: cfg,
            trajectories,
            disruptions: true_disruptions,
            records,
            epsilon,
        },
    })
}

#[cfg(test)]
mod tests;
