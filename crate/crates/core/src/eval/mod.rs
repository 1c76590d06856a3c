//! Out-of-sample scoring by travelled distance and calibration tables.
//!
//! Point and interval scores come from a predictions table joined to the
//! observed records. Calibration maps each observation to its standardized
//! innovation, whose law depends only on the distance, and compares the
//! empirical distribution of each distance group to that law.

mod io;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use io::*;

use crate::dists::Innovation;
use crate::error::{Error, Result};
use crate::features::ObservationRecord;
use crate::model::{adjusted_mean, effective_distance, Family, ModelConfig, ParameterVector};
use crate::par::par_map;
use crate::predict::Prediction;
use crate::quad;

/// Smallest distance group that gets P-P and Q-Q rows.
pub const MIN_GROUP: usize = 10;

/// Scores of one distance group, or of all records when `distance` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub distance: Option<usize>,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub hdi_mass: f64,
    pub hdi_length: f64,
    pub coverage: f64,
    /// Mean CRPS over the rows that carry one.
    pub crps: Option<f64>,
}

#[derive(Default)]
struct Acc {
    n: usize,
    sq: f64,
    abs: f64,
    len: f64,
    hit: usize,
    crps: f64,
    n_crps: usize,
}

impl Acc {
    fn add(&mut self, err: f64, len: f64, hit: bool, crps: Option<f64>) {
        self.n += 1;
        self.sq += err * err;
        self.abs += err.abs();
        self.len += len;
        self.hit += usize::from(hit);
        if let Some(c) = crps {
            self.crps += c;
            self.n_crps += 1;
        }
    }

    fn row(&self, distance: Option<usize>, mass: f64) -> MetricsRow {
        let n = self.n as f64;
        MetricsRow {
            distance,
            n: self.n,
            rmse: (self.sq / n).sqrt(),
            mae: self.abs / n,
            hdi_mass: mass,
            hdi_length: self.len / n,
            coverage: self.hit as f64 / n,
            crps: (self.n_crps > 0).then(|| self.crps / self.n_crps as f64),
        }
    }
}

/// RMSE and MAE of the predictive mean, mean interval length and coverage
/// at `mass`, and mean CRPS, per distance and overall. Observations supply
/// the travel times; predictions without a matching record are an error.
pub fn metrics_by_distance(
    predictions: &[Prediction],
    observations: &[ObservationRecord],
    mass: f64,
) -> Result<Vec<MetricsRow>> {
    let y: HashMap<u64, f64> = observations.iter().map(|r| (r.record_id, r.y)).collect();
    let mut groups: BTreeMap<usize, Acc> = BTreeMap::new();
    let mut all = Acc::default();
    for p in predictions {
        let obs = *y
            .get(&p.record_id)
            .ok_or_else(|| Error::InvalidParameter(format!("prediction for unknown record {}", p.record_id)))?;
        let iv = p
            .interval(mass)
            .ok_or_else(|| Error::InvalidParameter(format!("record {} has no interval at mass {mass}", p.record_id)))?;
        let err = p.mean - obs;
        let hit = iv.lo <= obs && obs <= iv.hi;
        groups.entry(p.distance()).or_default().add(err, iv.hi - iv.lo, hit, p.crps);
        all.add(err, iv.hi - iv.lo, hit, p.crps);
    }
    let mut rows: Vec<MetricsRow> = groups.iter().map(|(&d, a)| a.row(Some(d), mass)).collect();
    if all.n > 0 {
        rows.push(all.row(None, mass));
    }
    Ok(rows)
}

/// Standardized innovation of one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZValue {
    pub record_id: u64,
    pub distance: usize,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub z: Vec<ZValue>,
    /// Records whose predecessor residual could not be formed.
    pub excluded: usize,
}

/// Maps each record to `(y - μ' - ρ ε_prev) / ω`, whose law at fixed
/// distance is the unit-scale innovation law. Followers whose predecessor is
/// missing from `records` are excluded and counted.
pub fn normalize_for_diagnostics(
    records: &[ObservationRecord],
    p: &ParameterVector,
    model: &ModelConfig,
) -> Result<Normalized> {
    let index: HashMap<u64, usize> = records.iter().enumerate().map(|(i, r)| (r.record_id, i)).collect();
    let dep = model.family.has_dependence();
    // outer None: not computed yet; inner None: excluded
    let mut eps: Vec<Option<Option<f64>>> = vec![None; records.len()];
    for start in 0..records.len() {
        if eps[start].is_some() {
            continue;
        }
        // walk up the predecessor links to a lead, a computed record or a gap
        let mut path = Vec::new();
        let mut cur = start;
        let mut prev: Option<Option<f64>> = loop {
            path.push(cur);
            let r = &records[cur];
            if r.is_first || !dep {
                break None;
            }
            match r.predecessor.and_then(|id| index.get(&id)) {
                Some(&j) if eps[j].is_some() => break eps[j],
                Some(&j) if path.len() <= records.len() => cur = j,
                _ => break Some(None),
            }
        };
        for &i in path.iter().rev() {
            let r = &records[i];
            let value = match prev {
                None => Some(r.y - adjusted_mean(r, p, model)?),
                Some(None) => None,
                Some(Some(e)) => {
                    let w = r.overlap.map_or(0.0, |ov| p.dependence(ov));
                    Some(r.y - adjusted_mean(r, p, model)? - w * e)
                }
            };
            eps[i] = Some(value);
            prev = Some(value);
        }
    }
    let mut z = Vec::with_capacity(records.len());
    let mut excluded = 0;
    for (r, e) in records.iter().zip(&eps) {
        match e.expect("every record visited") {
            Some(e) => {
                let d = effective_distance(r.distance(), model.distance_cap);
                z.push(ZValue { record_id: r.record_id, distance: r.distance(), z: e / p.scale_sq(d).sqrt() });
            }
            None => excluded += 1,
        }
    }
    Ok(Normalized { z, excluded })
}

/// Unit-scale innovation law of the standardized values at distance `d`.
pub fn reference_law(p: &ParameterVector, model: &ModelConfig, d: usize) -> Innovation {
    let d = effective_distance(d, model.distance_cap);
    match model.family {
        Family::Baseline => Innovation::Normal { sd: 1.0 },
        Family::SkewNormal => Innovation::SkewNormal { omega: 1.0, alpha: p.skewness(d) },
        Family::SkewT => Innovation::SkewT {
            omega: 1.0,
            alpha: p.skewness(d),
            nu: p.nu.expect("skew-t parameters carry nu"),
        },
    }
}

const QUANTILE_GRID: usize = 2048;
const QUANTILE_TOL: f64 = 1e-10;

/// Quantiles of `law` at ascending levels in `(0, 1)`: the CDF is tabulated
/// on a grid wide enough to hold every level, then each level is refined by
/// bisection inside its grid cell.
pub fn quantiles_sorted(law: &Innovation, levels: &[f64]) -> Vec<f64> {
    if levels.is_empty() {
        return Vec::new();
    }
    let (pmin, pmax) = (levels[0], levels[levels.len() - 1]);
    let mut lo = -1.0;
    while law.cdf(lo) > pmin {
        lo *= 2.0;
    }
    let mut hi = 1.0;
    while law.cdf(hi) < pmax {
        hi *= 2.0;
    }
    let grid: Vec<f64> = (0..=QUANTILE_GRID).map(|i| lo + (hi - lo) * i as f64 / QUANTILE_GRID as f64).collect();
    let cdf = law.cdf_sorted(&grid);
    levels
        .iter()
        .map(|&p| {
            let k = cdf.partition_point(|&c| c < p).clamp(1, QUANTILE_GRID);
            let (a, fa) = (grid[k - 1], cdf[k - 1]);
            let (mut l, mut h) = (a, grid[k]);
            for _ in 0..60 {
                let mid = 0.5 * (l + h);
                if fa + quad::integrate(|s| law.pdf(s), a, mid, QUANTILE_TOL) < p {
                    l = mid;
                } else {
                    h = mid;
                }
                if h - l <= 1e-12 * (1.0 + mid.abs()) {
                    break;
                }
            }
            0.5 * (l + h)
        })
        .collect()
}

/// One point of the calibration tables for a distance group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpQqRow {
    pub distance: usize,
    /// 1-based rank within the group.
    pub rank: usize,
    pub n: usize,
    /// Observed standardized value of this rank.
    pub z: f64,
    /// `(rank - ½) / n`.
    pub empirical_prob: f64,
    /// Reference CDF at `z`.
    pub model_prob: f64,
    /// Reference quantile at `empirical_prob`.
    pub model_quantile: f64,
}

/// Kolmogorov–Smirnov statistic with its asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupKs {
    pub distance: usize,
    pub ks: KsTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// P-P pairs are `(empirical_prob, model_prob)`, Q-Q pairs
    /// `(model_quantile, z)`.
    pub rows: Vec<PpQqRow>,
    pub groups: Vec<GroupKs>,
    /// Reference-CDF values of every record pooled, tested against the uniform law.
    pub pooled: KsTest,
    /// Records in groups too small for their own tables.
    pub skipped: usize,
}

/// `Q(λ) = 2 Σ (-1)^{k-1} exp(-2 k² λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

/// One-sample test of values whose reference CDF values are `u`, sorted
/// ascending.
pub fn ks_uniform_sorted(u: &[f64]) -> KsTest {
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &f)| (f - i as f64 / n).max((i + 1) as f64 / n - f))
        .fold(0.0, f64::max);
    KsTest { n: u.len(), statistic: d, p_value: ks_p_value(d, n) }
}

/// Two-sample test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsTest { n: a.len() + b.len(), statistic: d, p_value: ks_p_value(d, na * nb / (na + nb)) }
}

/// P-P and Q-Q tables per distance group against the reference law at the
/// plug-in parameters, with per-group and pooled KS tests. Groups with
/// fewer than [`MIN_GROUP`] values get no tables but still enter the pooled
/// test.
pub fn pp_qq_tables(z: &[ZValue], p: &ParameterVector, model: &ModelConfig, threads: usize) -> Calibration {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for v in z {
        groups.entry(v.distance).or_default().push(v.z);
    }
    let groups: Vec<(usize, Vec<f64>)> = groups
        .into_iter()
        .map(|(d, mut v)| {
            v.sort_by(f64::total_cmp);
            (d, v)
        })
        .collect();
    let per_group = par_map(&groups, threads, |(d, zs)| {
        let law = reference_law(p, model, *d);
        let probs = law.cdf_sorted(zs);
        if zs.len() < MIN_GROUP {
            return (probs, None, None);
        }
        let n = zs.len();
        let levels: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect();
        let q = quantiles_sorted(&law, &levels);
        let rows: Vec<PpQqRow> = (0..n)
            .map(|i| PpQqRow {
                distance: *d,
                rank: i + 1,
                n,
                z: zs[i],
                empirical_prob: levels[i],
                model_prob: probs[i],
                model_quantile: q[i],
            })
            .collect();
        let ks = GroupKs { distance: *d, ks: ks_uniform_sorted(&probs) };
        (probs, Some(rows), Some(ks))
    });
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    let mut pooled = Vec::with_capacity(z.len());
    let mut skipped = 0;
    for (probs, r, k) in per_group {
        match (r, k) {
            (Some(r), Some(k)) => {
                rows.extend(r);
                tests.push(k);
            }
            _ => skipped += probs.len(),
        }
        pooled.extend(probs);
    }
    pooled.sort_by(f64::total_cmp);
    Calibration { rows, groups: tests, pooled: ks_uniform_sorted(&pooled), skipped }
}

/// Pointwise range of the model probabilities across posterior draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub distance: usize,
    pub rank: usize,
    pub empirical_prob: f64,
    pub model_prob_lo: f64,
    pub model_prob_hi: f64,
}

/// P-P curves recomputed at each of `params`, summarized as the pointwise
/// minimum and maximum of the model probability for every rank.
pub fn pp_envelope(
    records: &[ObservationRecord],
    params: &[ParameterVector],
    model: &ModelConfig,
    threads: usize,
) -> Result<Vec<EnvelopeRow>> {
    let mut acc: BTreeMap<(usize, usize), EnvelopeRow> = BTreeMap::new();
    for p in params {
        let z = normalize_for_diagnostics(records, p, model)?;
        for r in pp_qq_tables(&z.z, p, model, threads).rows {
            acc.entry((r.distance, r.rank))
                .and_modify(|e| {
                    e.model_prob_lo = e.model_prob_lo.min(r.model_prob);
                    e.model_prob_hi = e.model_prob_hi.max(r.model_prob);
                })
                .or_insert(EnvelopeRow {
                    distance: r.distance,
                    rank: r.rank,
                    empirical_prob: r.empirical_prob,
                    model_prob_lo: r.model_prob,
                    model_prob_hi: r.model_prob,
                });
        }
    }
    Ok(acc.into_values().collect())
}
