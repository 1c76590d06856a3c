//! Posterior predictive simulation of post-disruption travel times.
//!
//! Each retained posterior draw contributes a few simulated travel times.
//! For a follower train the predecessor's innovation is either drawn from its
//! own law, which integrates it out, or taken from the observed residuals of
//! the predecessor record.

mod io;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::*;

use crate::error::{Error, Result};
use crate::features::{ObservationRecord, RecordFlags};
use crate::model::{
    adjusted_mean, build_chains, effective_distance, innovation_law, residual_recursion, ModelConfig,
    ParameterVector,
};
use crate::par::par_map;
use crate::sampler::PosteriorDraws;

/// Fewest draws an interval is computed from.
pub const MIN_HDI_DRAWS: usize = 50;

/// How the innovation of a follower's predecessor enters its prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredecessorMode {
    /// Drawn from the predecessor's own innovation law.
    #[default]
    Integrate,
    /// The predecessor's residual at each posterior draw.
    PlugIn,
}

impl std::str::FromStr for PredecessorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integrate" => Ok(PredecessorMode::Integrate),
            "plug-in" => Ok(PredecessorMode::PlugIn),
            _ => Err(Error::InvalidConfig(format!("unknown predecessor mode {s:?}, expected integrate or plug-in"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    /// Posterior draws kept after thinning.
    pub draw_budget: usize,
    /// Simulated travel times per retained posterior draw.
    pub n_per_draw: usize,
    /// Probability masses of the reported intervals.
    pub masses: Vec<f64>,
    pub seed: u64,
    pub predecessor: PredecessorMode,
    pub threads: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            draw_budget: 1000,
            n_per_draw: 4,
            masses: vec![0.8],
            seed: 0,
            predecessor: PredecessorMode::Integrate,
            threads: 1,
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_draw == 0 || self.draw_budget == 0 {
            return Err(Error::InvalidConfig("draw budget and draws per posterior draw must be positive".into()));
        }
        if self.masses.is_empty() {
            return Err(Error::InvalidConfig("need at least one interval mass".into()));
        }
        for &m in &self.masses {
            check_mass(m)?;
        }
        Ok(())
    }
}

fn check_mass(mass: f64) -> Result<()> {
    if mass > 0.0 && mass < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("interval mass {mass} outside (0, 1)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mass: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSample {
    pub record_id: u64,
    /// Simulated travel times, minutes, sorted ascending.
    pub draws: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub intervals: Vec<Interval>,
    /// Share of draws that are not positive.
    pub negative_fraction: f64,
    pub flags: RecordFlags,
}

/// Shortest window holding `⌈mass·n⌉` of the draws; ties go to the lowest
/// lower bound.
pub fn hdi(draws: &[f64], mass: f64) -> Result<(f64, f64)> {
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    hdi_sorted(&s, mass)
}

/// [`hdi`] on draws already sorted ascending.
pub fn hdi_sorted(sorted: &[f64], mass: f64) -> Result<(f64, f64)> {
    check_mass(mass)?;
    let n = sorted.len();
    if n < MIN_HDI_DRAWS {
        return Err(Error::InsufficientData(format!("interval needs at least {MIN_HDI_DRAWS} draws, got {n}")));
    }
    if sorted.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("interval draws must be finite".into()));
    }
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = 0;
    let mut width = f64::INFINITY;
    for i in 0..=n - k {
        let w = sorted[i + k - 1] - sorted[i];
        if w < width {
            width = w;
            best = i;
        }
    }
    Ok((sorted[best], sorted[best + k - 1]))
}

/// `mean|X - y| - ½ mean|X - X'|` over all ordered pairs of draws.
pub fn crps_from_draws(draws: &[f64], y: f64) -> f64 {
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    crps_sorted(&s, y)
}

/// [`crps_from_draws`] on draws already sorted ascending, using
/// `Σ|xᵢ - xⱼ| = 2 Σ (2i - n + 1) x₍ᵢ₎`.
pub fn crps_sorted(sorted: &[f64], y: f64) -> f64 {
    let n = sorted.len() as f64;
    let abs_dev: f64 = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    let spread: f64 = sorted.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - n + 1.0) * x).sum::<f64>() / (n * n);
    (abs_dev - spread).max(0.0)
}

fn median_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Source of the predecessor innovation for one record.
#[derive(Debug, Clone, Copy)]
pub enum Predecessor<'a> {
    Latent,
    /// One residual per posterior draw.
    Observed(&'a [f64]),
}

/// Predictive draws for one record: `n_per_draw` simulations at each
/// parameter vector.
pub fn predict_record<R: Rng + ?Sized>(
    rec: &ObservationRecord,
    params: &[ParameterVector],
    model: &ModelConfig,
    n_per_draw: usize,
    masses: &[f64],
    predecessor: Predecessor<'_>,
    rng: &mut R,
) -> Result<PredictiveSample> {
    if params.is_empty() {
        return Err(Error::InsufficientData("no posterior draws to predict from".into()));
    }
    let mut flags = rec.flags;
    if model.distance_cap.is_some_and(|c| rec.distance() > c) {
        flags.insert(RecordFlags::DISTANCE_CLAMPED);
    }
    let d = effective_distance(rec.distance(), model.distance_cap);
    let link = match (rec.is_first, rec.pred_origin, rec.overlap) {
        (false, Some(jp), Some(ov)) if model.family.has_dependence() => {
            Some((effective_distance(rec.destination - jp, model.distance_cap), ov))
        }
        _ => None,
    };
    if let (Some(_), Predecessor::Observed(e)) = (link, predecessor) {
        if e.len() != params.len() {
            return Err(Error::InvalidParameter("one predecessor residual per posterior draw is required".into()));
        }
        flags.insert(RecordFlags::PLUG_IN);
    }

    let mut draws = Vec::with_capacity(params.len() * n_per_draw);
    for (s, p) in params.iter().enumerate() {
        let mu = adjusted_mean(rec, p, model)?;
        let law = innovation_law(model.family, p, d);
        let prev = link.map(|(dp, ov)| (innovation_law(model.family, p, dp), p.dependence(ov)));
        for _ in 0..n_per_draw {
            let carried = match (prev, predecessor) {
                (None, _) => 0.0,
                (Some((_, w)), Predecessor::Observed(e)) => w * e[s],
                (Some((pl, w)), Predecessor::Latent) => w * pl.sample(rng),
            };
            draws.push(mu + carried + law.sample(rng));
        }
    }
    if draws.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("record {}: non-finite predictive draw", rec.record_id)));
    }
    draws.sort_by(f64::total_cmp);
    let negative = draws.iter().take_while(|&&x| x <= 0.0).count();
    if negative > 0 {
        flags.insert(RecordFlags::NEGATIVE_DRAWS);
    }
    let intervals = masses
        .iter()
        .map(|&mass| hdi_sorted(&draws, mass).map(|(lo, hi)| Interval { mass, lo, hi }))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictiveSample {
        record_id: rec.record_id,
        mean: draws.iter().sum::<f64>() / draws.len() as f64,
        median: median_sorted(&draws),
        negative_fraction: negative as f64 / draws.len() as f64,
        intervals,
        draws,
        flags,
    })
}

/// Summary of the predictive distribution of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub record_id: u64,
    pub disruption_id: i64,
    pub origin: usize,
    pub destination: usize,
    pub is_first: bool,
    /// Observed travel time, when known.
    pub y: Option<f64>,
    pub mean: f64,
    pub median: f64,
    pub intervals: Vec<Interval>,
    pub crps: Option<f64>,
    pub negative_fraction: f64,
    pub flags: RecordFlags,
}

impl Prediction {
    pub fn distance(&self) -> usize {
        self.destination - self.origin
    }

    pub fn interval(&self, mass: f64) -> Option<&Interval> {
        self.intervals.iter().find(|i| (i.mass - mass).abs() < 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub predictions: Vec<Prediction>,
    pub masses: Vec<f64>,
    pub mode: PredecessorMode,
    /// Posterior draws actually used.
    pub posterior_draws: usize,
    pub n_per_draw: usize,
    /// Share of all predictive draws that were not positive.
    pub negative_fraction: f64,
    pub clamped: usize,
    pub plug_in: usize,
}

/// Parameter vectors of the thinned posterior.
pub fn thinned_parameters(draws: &PosteriorDraws, model: &ModelConfig, budget: usize) -> Result<Vec<ParameterVector>> {
    let layout = model.layout();
    if draws.names != layout.names() {
        return Err(Error::InvalidConfig("posterior draws do not match the model configuration".into()));
    }
    draws.thinned(budget).into_iter().map(|v| layout.from_values(v)).collect()
}

/// Residuals of every record at every parameter vector, `out[record][draw]`.
fn observed_residuals(
    records: &[ObservationRecord],
    params: &[ParameterVector],
    model: &ModelConfig,
) -> Result<Vec<Vec<f64>>> {
    let chains = build_chains(records)?;
    let mut out = vec![Vec::with_capacity(params.len()); records.len()];
    for p in params {
        for chain in &chains {
            for (e, &i) in residual_recursion(chain, records, p, model)?.into_iter().zip(&chain.members) {
                out[i].push(e);
            }
        }
    }
    Ok(out)
}

/// Predicts every record. Each record uses its own random stream keyed by
/// its id, so results do not depend on the thread count.
pub fn predict_dataset(
    records: &[ObservationRecord],
    params: &[ParameterVector],
    model: &ModelConfig,
    cfg: &PredictConfig,
) -> Result<PredictionSet> {
    cfg.validate()?;
    let residuals = match cfg.predecessor {
        PredecessorMode::Integrate => None,
        PredecessorMode::PlugIn => Some(observed_residuals(records, params, model)?),
    };
    let index: HashMap<u64, usize> = records.iter().enumerate().map(|(i, r)| (r.record_id, i)).collect();
    let one = |rec: &ObservationRecord| -> Result<(Prediction, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rec.record_id);
        let pred = match (&residuals, rec.predecessor) {
            (Some(res), Some(pid)) => {
                let i = index.get(&pid).ok_or_else(|| {
                    Error::BrokenChain(format!("record {} links to missing record {pid}", rec.record_id))
                })?;
                Predecessor::Observed(&res[*i])
            }
            _ => Predecessor::Latent,
        };
        let s = predict_record(rec, params, model, cfg.n_per_draw, &cfg.masses, pred, &mut rng)?;
        let negative = s.draws.iter().take_while(|&&x| x <= 0.0).count();
        Ok((
            Prediction {
                record_id: rec.record_id,
                disruption_id: rec.disruption_id,
                origin: rec.origin,
                destination: rec.destination,
                is_first: rec.is_first,
                y: Some(rec.y),
                mean: s.mean,
                median: s.median,
                crps: Some(crps_sorted(&s.draws, rec.y)),
                intervals: s.intervals,
                negative_fraction: s.negative_fraction,
                flags: s.flags,
            },
            negative,
        ))
    };
    let results = par_map(records, cfg.threads, one);
    let mut predictions = Vec::with_capacity(records.len());
    let mut negative = 0usize;
    for r in results {
        let (p, n) = r?;
        negative += n;
        predictions.push(p);
    }
    let total = (records.len() * params.len() * cfg.n_per_draw).max(1);
    Ok(PredictionSet {
        clamped: predictions.iter().filter(|p| p.flags.contains(RecordFlags::DISTANCE_CLAMPED)).count(),
        plug_in: predictions.iter().filter(|p| p.flags.contains(RecordFlags::PLUG_IN)).count(),
        predictions,
        masses: cfg.masses.clone(),
        mode: cfg.predecessor,
        posterior_draws: params.len(),
        n_per_draw: cfg.n_per_draw,
        negative_fraction: negative as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests;
