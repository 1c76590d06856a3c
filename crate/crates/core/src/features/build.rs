use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    compute_headway, overlap_ratio, HeadwayError, HeadwayTerm, ObservationRecord, RecordFlags, ReferenceProfile,
    StationIndex,
};
use crate::error::{Error, Result};
use crate::ingest::{affected_trains, DisruptionRecord, TrainTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationConfig {
    pub stations: usize,
    /// Largest look-ahead distance recorded in the formation flags.
    pub max_lag: usize,
}

/// Counts of records and covariates that could not be built.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub disruptions: usize,
    pub records: usize,
    /// Destinations the train never reached in the log.
    pub missing_arrivals: usize,
    /// Records dropped for a non-positive travel time.
    pub non_positive: usize,
    /// Records dropped for lack of a reference travel time.
    pub missing_reference: usize,
    /// Intermediate stations left out of an imbalance sum.
    pub headways_without_predecessor: usize,
    pub headways_without_reference: usize,
}

impl BuildReport {
    fn absorb(&mut self, o: &BuildReport) {
        self.disruptions += o.disruptions;
        self.records += o.records;
        self.missing_arrivals += o.missing_arrivals;
        self.non_positive += o.non_positive;
        self.missing_reference += o.missing_reference;
        self.headways_without_predecessor += o.headways_without_predecessor;
        self.headways_without_reference += o.headways_without_reference;
    }
}

/// One record per affected train and downstream destination it reached.
/// Record ids continue from `next_id`.
pub fn build_observations(
    d: &DisruptionRecord,
    trajs: &[TrainTrajectory],
    index: &StationIndex,
    profile: &ReferenceProfile,
    cfg: &ObservationConfig,
    next_id: &mut u64,
) -> Result<(Vec<ObservationRecord>, BuildReport)> {
    let end = d
        .effective_end
        .ok_or_else(|| Error::InvalidParameter(format!("disruption {} has no effective end", d.disruption_id)))?;
    let affected = affected_trains(d, trajs, cfg.stations)?;
    let held: Vec<usize> = affected.iter().map(|a| a.station).collect();
    let mut report = BuildReport { disruptions: 1, ..Default::default() };
    let mut out = Vec::new();
    // last record id and origin per destination, from the train ahead
    let mut ahead: Vec<Option<(u64, usize)>> = vec![None; cfg.stations + 1];
    for a in &affected {
        let t = &trajs[a.index];
        let j = a.station;
        let formation: Vec<bool> = (1..=cfg.max_lag).map(|l| held.contains(&(j + l))).collect();
        let mut flags = RecordFlags::empty();
        if a.in_tunnel {
            flags.insert(RecordFlags::TUNNEL_ASSIGNED);
        }
        let mut reached: Vec<Option<(u64, usize)>> = vec![None; cfg.stations + 1];
        for k in j + 1..=cfg.stations {
            let Some(arr) = t.visit(k) else {
                report.missing_arrivals += 1;
                continue;
            };
            let y = (arr.arrival - end) / 60.0;
            if !(y > 0.0) {
                report.non_positive += 1;
                continue;
            }
            let Some(ref_travel) = profile.travel_median(j, k, end) else {
                report.missing_reference += 1;
                continue;
            };
            let mut headways = Vec::new();
            for m in j + 1..k {
                match compute_headway(a.index, m, trajs, index) {
                    Ok(h) => {
                        let arrival = t.visit(m).map_or(f64::NAN, |v| v.arrival);
                        match profile.headway_median(m, arrival) {
                            Some(reference) => {
                                headways.push(HeadwayTerm { station: m, imbalance: h - reference, reference })
                            }
                            None => report.headways_without_reference += 1,
                        }
                    }
                    Err(HeadwayError::NoPredecessor) => report.headways_without_predecessor += 1,
                    Err(HeadwayError::NotVisited) => {}
                }
            }
            let pred = ahead[k];
            let id = *next_id;
            *next_id += 1;
            out.push(ObservationRecord {
                record_id: id,
                disruption_id: d.disruption_id,
                train_id: t.train_id,
                origin: j,
                destination: k,
                y,
                ref_travel,
                headways,
                formation: formation.clone(),
                is_first: pred.is_none(),
                predecessor: pred.map(|p| p.0),
                pred_origin: pred.map(|p| p.1),
                overlap: pred.map(|p| overlap_ratio(j, p.1, k)),
                flags,
            });
            reached[k] = Some((id, j));
        }
        // a train that skipped a destination breaks the chain there
        ahead = reached;
    }
    report.records = out.len();
    Ok((out, report))
}

/// Observations for every resolved disruption, in disruption order.
pub fn build_dataset(
    disruptions: &[DisruptionRecord],
    trajs: &[TrainTrajectory],
    profile: &ReferenceProfile,
    cfg: &ObservationConfig,
) -> Result<(Vec<ObservationRecord>, BuildReport)> {
    let index = StationIndex::new(trajs, cfg.stations);
    let mut next_id = 1;
    let mut all = Vec::new();
    let mut report = BuildReport::default();
    for d in disruptions {
        let (recs, r) = build_observations(d, trajs, &index, profile, cfg, &mut next_id)?;
        all.extend(recs);
        report.absorb(&r);
    }
    Ok((all, report))
}

/// Records partitioned by disruption.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub in_sample: Vec<ObservationRecord>,
    pub out_of_sample: Vec<ObservationRecord>,
    pub in_sample_ids: Vec<i64>,
    pub out_of_sample_ids: Vec<i64>,
    pub split_seed: u64,
    pub split_fraction: f64,
    /// Followers whose predecessor landed in the other partition.
    pub orphaned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split_seed: u64,
    pub split_fraction: f64,
    pub in_sample_ids: Vec<i64>,
    pub out_of_sample_ids: Vec<i64>,
    pub orphaned: usize,
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            split_seed: self.split_seed,
            split_fraction: self.split_fraction,
            in_sample_ids: self.in_sample_ids.clone(),
            out_of_sample_ids: self.out_of_sample_ids.clone(),
            orphaned: self.orphaned,
        }
    }
}

/// Shuffles disruption ids by `seed` and sends the first `⌈fraction·N⌉` to
/// the fitting partition.
pub fn split_by_disruption(records: &[ObservationRecord], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut ids: Vec<i64> = records.iter().map(|r| r.disruption_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::TooFewDisruptions { found: ids.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_in = ((fraction * ids.len() as f64 - 1e-9).ceil() as usize).clamp(1, ids.len() - 1);
    let mut in_ids = ids[..n_in].to_vec();
    let mut out_ids = ids[n_in..].to_vec();
    in_ids.sort_unstable();
    out_ids.sort_unstable();

    let mut in_sample = Vec::new();
    let mut out_of_sample = Vec::new();
    for r in records {
        if in_ids.binary_search(&r.disruption_id).is_ok() {
            in_sample.push(r.clone());
        } else {
            out_of_sample.push(r.clone());
        }
    }
    let orphaned = orphan_missing(&mut in_sample) + orphan_missing(&mut out_of_sample);
    Ok(DatasetSplit {
        in_sample,
        out_of_sample,
        in_sample_ids: in_ids,
        out_of_sample_ids: out_ids,
        split_seed: seed,
        split_fraction: fraction,
        orphaned,
    })
}

/// Turns followers whose predecessor is absent into lead records.
fn orphan_missing(records: &mut [ObservationRecord]) -> usize {
    let present: std::collections::HashSet<u64> = records.iter().map(|r| r.record_id).collect();
    let mut n = 0;
    for r in records.iter_mut() {
        if let Some(p) = r.predecessor {
            if !present.contains(&p) {
                r.orphan();
                n += 1;
            }
        }
    }
    n
}
