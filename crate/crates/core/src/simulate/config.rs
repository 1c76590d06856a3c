use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ReferenceProfile;
use crate::model::{Family, ModelConfig, ParameterVector};

/// How post-disruption travel times of held trains are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum RecoveryLaw {
    /// The travel-time model itself at the true parameters.
    Model,
    /// Mean plus centred gamma noise with scale growing as `√d`; used for
    /// robustness experiments only.
    ShiftedGamma { shape: f64, scale: f64 },
}

/// Generative parameters of the post-disruption law. Headway and formation
/// effects are drawn once from zero-mean normals unless given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthConfig {
    pub family: Family,
    pub t0: f64,
    pub omega0: f64,
    pub omega1: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub rho: f64,
    pub lambda: f64,
    pub nu: f64,
    pub theta_sd: f64,
    pub gamma_sd: f64,
    pub theta: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            family: Family::SkewNormal,
            t0: 2.0,
            omega0: 2.300,
            omega1: 0.163,
            alpha0: 2.158,
            alpha1: -0.031,
            rho: 0.966,
            lambda: 1.552,
            nu: 2.666,
            theta_sd: 0.05,
            gamma_sd: 1.0,
            theta: None,
            gamma: None,
        }
    }
}

/// A disruption placed by hand instead of by the random process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedDisruption {
    /// Zero-based index of the simulated day.
    pub day: usize,
    /// Hours after midnight.
    pub start_hour: f64,
    pub duration_minutes: f64,
    pub location: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub stations: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    pub weekdays_only: bool,
    /// First and last dispatch, hours after midnight.
    pub service_start: f64,
    pub service_end: f64,
    /// Minutes between dispatches.
    pub peak_headway: f64,
    pub offpeak_headway: f64,
    /// Peak periods as `(start, end)` hours.
    pub peak_periods: Vec<(f64, f64)>,
    /// Seconds.
    pub dwell_median: f64,
    /// Log-scale standard deviation.
    pub dwell_sigma: f64,
    /// Median running time of each segment, seconds; empty for the default pattern.
    pub running_medians: Vec<f64>,
    pub running_sigma: f64,
    pub tunnel_blocks: usize,
    /// Minimum seconds between one train releasing a block and the next entering it.
    pub clearance: f64,
    /// Shortest running time over a segment, seconds.
    pub min_running: f64,
    pub disruptions_per_day: f64,
    /// Minutes.
    pub duration_mean: f64,
    pub duration_min: f64,
    pub duration_shape: f64,
    /// Minutes from one resume to the next disruption start.
    pub disruption_gap: f64,
    /// Hours of day within which disruptions may start and end.
    pub disruption_window: (f64, f64),
    /// Standard deviation of the reported start around the true start, seconds.
    pub report_start_sd: f64,
    /// The reported end precedes the true resume by up to this many seconds.
    pub report_end_lead: f64,
    /// Seconds between successive held trains being released.
    pub stagger: f64,
    /// Uniform timestamp noise half-width on emitted signals, seconds.
    pub jitter: f64,
    pub max_lag: usize,
    pub direction: String,
    pub recovery: RecoveryLaw,
    pub truth: TruthConfig,
    pub scripted: Vec<ScriptedDisruption>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            stations: 27,
            days: 20,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            weekdays_only: true,
            service_start: 6.0,
            service_end: 22.0,
            peak_headway: 5.0,
            offpeak_headway: 5.75,
            peak_periods: vec![(7.0, 9.5), (15.5, 18.5)],
            dwell_median: 40.0,
            dwell_sigma: 0.2,
            running_medians: Vec::new(),
            running_sigma: 0.1,
            tunnel_blocks: 2,
            clearance: 3.0,
            min_running: 30.0,
            disruptions_per_day: 1.0,
            duration_mean: 11.05,
            duration_min: 3.0,
            duration_shape: 2.0,
            disruption_gap: 90.0,
            disruption_window: (7.0, 20.0),
            report_start_sd: 20.0,
            report_end_lead: 30.0,
            stagger: 30.0,
            jitter: 0.0,
            max_lag: 5,
            direction: "1".into(),
            recovery: RecoveryLaw::Model,
            truth: TruthConfig::default(),
            scripted: Vec::new(),
            seed: 0,
        }
    }
}

/// 43 s segments with every other one up to the 24th at 72 s.
pub fn default_running_medians(stations: usize) -> Vec<f64> {
    (1..stations).map(|s| if s % 2 == 0 && s <= 24 { 72.0 } else { 43.0 }).collect()
}

impl SimConfig {
    pub fn running(&self) -> Vec<f64> {
        if self.running_medians.is_empty() {
            default_running_medians(self.stations)
        } else {
            self.running_medians.clone()
        }
    }

    /// Scheduled minutes between dispatches at `hour` after midnight.
    pub fn headway_at(&self, hour: f64) -> f64 {
        if self.peak_periods.iter().any(|&(a, b)| a <= hour && hour < b) {
            self.peak_headway
        } else {
            self.offpeak_headway
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.truth.family, self.stations, self.max_lag)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("simulation: {m}")));
        if self.stations < 3 {
            return bad("need at least 3 stations");
        }
        if !(0.0 <= self.service_start && self.service_start < self.service_end && self.service_end <= 24.0) {
            return bad("service hours must satisfy 0 <= start < end <= 24");
        }
        if self.tunnel_blocks == 0 {
            return bad("need at least one tunnel block per segment");
        }
        for h in [self.peak_headway, self.offpeak_headway] {
            if !(h > 0.0) || h * 60.0 <= self.dwell_median {
                return bad("headway must exceed the dwell time");
            }
        }
        let run = self.running();
        if run.len() != self.stations - 1 || run.iter().any(|r| !(*r > 0.0)) {
            return bad("running medians must be positive, one per segment");
        }
        let positive = [
            self.dwell_median,
            self.duration_mean,
            self.duration_min,
            self.duration_shape,
            self.min_running,
            self.clearance,
            self.disruption_gap,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return bad("durations must be positive");
        }
        if self.duration_mean <= self.duration_min {
            return bad("mean disruption duration must exceed the minimum");
        }
        let nonneg = [
            self.dwell_sigma,
            self.running_sigma,
            self.disruptions_per_day,
            self.report_start_sd,
            self.report_end_lead,
            self.stagger,
            self.jitter,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("dispersions, rates and delays must be non-negative");
        }
        if self.report_end_lead >= 60.0 * self.duration_min {
            return bad("reported end lead must be shorter than the minimum duration");
        }
        if self.max_lag == 0 {
            return bad("max_lag must be positive");
        }
        for s in &self.scripted {
            if s.day >= self.days || !(s.duration_minutes > 0.0) || s.location == 0 || s.location > self.stations {
                return bad("scripted disruption out of range");
            }
        }
        let t = &self.truth;
        if !(t.omega0 > 0.0 && t.omega1 >= 0.0) {
            return bad("true scale parameters must be positive");
        }
        if t.family.has_dependence() && !(t.rho.abs() < 1.0 && t.lambda > 0.0) {
            return bad("true dependence needs |rho| < 1 and lambda > 0");
        }
        if t.family == Family::SkewT && !(t.nu > 1.0) {
            return bad("true nu must exceed 1");
        }
        let layout = self.model_config().layout();
        if t.theta.as_ref().is_some_and(|v| v.len() != layout.n_theta()) {
            return bad("theta has the wrong length");
        }
        if t.gamma.as_ref().is_some_and(|v| v.len() != layout.n_gamma()) {
            return bad("gamma has the wrong length");
        }
        Ok(())
    }

    /// Draws any missing headway and formation effects and stores them, so
    /// the config written out fully determines the truth. Formation effects
    /// that no disruption can exercise stay zero.
    pub fn freeze_truth(&mut self) {
        let layout = self.model_config().layout();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        if self.truth.theta.is_none() {
            let n = Normal::new(0.0, self.truth.theta_sd.max(0.0)).expect("finite sd");
            self.truth.theta = Some((0..layout.n_theta()).map(|_| n.sample(&mut rng)).collect());
        }
        if self.truth.gamma.is_none() {
            let n = Normal::new(0.0, self.truth.gamma_sd.max(0.0)).expect("finite sd");
            let j_max = self.stations;
            let mut g = vec![0.0; layout.n_gamma()];
            for lag in 1..=self.max_lag {
                for origin in 1..=j_max {
                    let v = n.sample(&mut rng);
                    if origin + lag < j_max {
                        g[(lag - 1) * j_max + (origin - 1)] = v;
                    }
                }
            }
            self.truth.gamma = Some(g);
        }
    }

    /// True parameters; missing effects are drawn as in [`freeze_truth`](Self::freeze_truth).
    pub fn true_parameters(&self) -> ParameterVector {
        let mut c = self.clone();
        c.freeze_truth();
        let t = c.truth;
        ParameterVector {
            t0: t.t0,
            theta: t.theta.expect("frozen"),
            gamma: t.gamma.expect("frozen"),
            omega0: t.omega0,
            omega1: t.omega1,
            alpha0: if t.family.has_dependence() { t.alpha0 } else { 0.0 },
            alpha1: if t.family.has_dependence() { t.alpha1 } else { 0.0 },
            rho: if t.family.has_dependence() { t.rho } else { 0.0 },
            lambda: if t.family.has_dependence() { t.lambda } else { 1.0 },
            nu: (t.family == Family::SkewT).then_some(t.nu),
        }
    }

    /// Closed-form medians of the normal timetable: scheduled headway less the
    /// dwell, and the sum of running and intermediate dwell medians.
    pub fn reference_profile(&self) -> ReferenceProfile {
        let run = self.running();
        let dwell = self.dwell_median;
        ReferenceProfile::from_fn(
            self.stations,
            30,
            |_, tod| (self.headway_at(tod / 3600.0) * 60.0 - dwell) / 60.0,
            |j, k, _| (run[j - 1..k - 1].iter().sum::<f64>() + (k - j - 1) as f64 * dwell) / 60.0,
        )
    }
}
