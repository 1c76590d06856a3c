//! One function per pipeline stage. Each reads the previous stage's
//! directory, writes its own, and finishes with a run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::Args;
use metrocast::eval::{metrics_by_distance, normalize_for_diagnostics, pp_envelope, pp_qq_tables, GroupKs, KsTest};
use metrocast::eval::{write_envelope, write_metrics, write_ppqq, write_z};
use metrocast::features::{
    build_dataset, build_reference_profile, read_observations, split_by_disruption, write_observations, BuildReport,
    ObservationConfig, ObservationRecord, ProfileConfig,
};
use metrocast::ingest::{
    read_disruptions, read_events, read_trajectories, reconstruct_trajectories, resolve_disruptions,
    write_disruptions, write_events, write_trajectories, DisruptionReport, LineTopology, MatchConfig,
    RejectionReport,
};
use metrocast::model::{fit, Family, FitSummary, ModelConfig};
use metrocast::predict::{
    predict_dataset, read_predictions, thinned_parameters, write_predictions, PredecessorMode, PredictConfig,
};
use metrocast::sampler::{ParamSummary, PosteriorDraws, SamplerConfig};
use metrocast::simulate::{simulate_days, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{at, CliError, Result};
use crate::manifest::{Inputs, StageDir};

/// Version of every table and summary written by this tool.
pub const FORMAT_VERSION: u32 = 1;
/// Largest split R-hat at which draws are written without `--force`.
pub const RHAT_LIMIT: f64 = 1.05;

pub const EVENTS: &str = "events.csv";
pub const DISRUPTIONS: &str = "disruptions.csv";
pub const TOPOLOGY: &str = "topology.json";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const INGEST_SUMMARY: &str = "ingest.json";
pub const OBSERVATIONS: &str = "observations.csv";
pub const TRAIN: &str = "train.csv";
pub const TEST: &str = "test.csv";
pub const SPLIT: &str = "split.json";
pub const PROFILE: &str = "profile.json";
pub const FEATURES_SUMMARY: &str = "features.json";
pub const DRAWS: &str = "draws.csv";
pub const DIAGNOSTICS: &str = "diagnostics.json";
pub const PARAMETERS: &str = "parameters.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const PREDICT_SUMMARY: &str = "predict.json";
pub const METRICS: &str = "metrics.csv";
pub const PPQQ: &str = "ppqq.csv";
pub const ZVALUES: &str = "z.csv";
pub const CALIBRATION: &str = "calibration.json";
pub const ENVELOPE: &str = "envelope.csv";

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_json<T: DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| at(path)(e.into()))
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| at(path)(e.into()))?;
    parse_json(&bytes, path)
}

fn read_records(inputs: &mut Inputs, path: &Path) -> Result<Vec<ObservationRecord>> {
    read_observations(&inputs.read(path, FORMAT_VERSION)?[..]).map_err(at(path))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| at(p)(e.into()))
}

/// Writes logs to `out` and the ground truth to `truth_dir`, which must not
/// overlap.
pub fn simulate(cfg: &SimConfig, out: &Path, truth_dir: &Path, inputs: Inputs) -> Result<()> {
    let mut logs = StageDir::create(out)?;
    let mut truth = StageDir::create(truth_dir)?;
    let (a, b) = (absolute(out)?, absolute(truth_dir)?);
    if a.starts_with(&b) || b.starts_with(&a) {
        return Err(CliError::Usage("the ground-truth directory must be separate from the log directory".into()));
    }
    let sim = simulate_days(cfg)?;
    logs.put_with(EVENTS, FORMAT_VERSION, |w| write_events(w, &sim.events))?;
    logs.put_with(DISRUPTIONS, FORMAT_VERSION, |w| write_disruptions(w, &sim.disruptions))?;
    logs.put_json(TOPOLOGY, FORMAT_VERSION, &sim.topology)?;
    logs.finish("simulate", Some(cfg.seed), cfg, inputs)?;
    truth.put_with(GROUND_TRUTH, sim.truth.format_version, |w| sim.truth.write_json(w))?;
    truth.finish("simulate", Some(cfg.seed), cfg, Inputs::default())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Longest gap, seconds, between a block release and the next occupation.
    #[arg(long, default_value_t = MatchConfig::default().window)]
    pub window: f64,
    /// Tolerated clock skew, seconds, between linked signals.
    #[arg(long, default_value_t = MatchConfig::default().slack)]
    pub slack: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        let m = MatchConfig::default();
        IngestOptions { window: m.window, slack: m.slack }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub format_version: u32,
    pub stations: usize,
    pub trains: usize,
    pub disruptions: usize,
    pub rejections: RejectionReport,
    pub resolution: DisruptionReport,
}

pub fn ingest(logs: &Path, out: &Path, opts: &IngestOptions) -> Result<()> {
    let mut inputs = Inputs::default();
    let topo_path = logs.join(TOPOLOGY);
    let topo: LineTopology = parse_json(&inputs.read(&topo_path, FORMAT_VERSION)?, &topo_path)?;
    let ev_path = logs.join(EVENTS);
    let events = read_events(&inputs.read(&ev_path, FORMAT_VERSION)?[..]).map_err(at(&ev_path))?;
    let d_path = logs.join(DISRUPTIONS);
    let disruptions = read_disruptions(&inputs.read(&d_path, FORMAT_VERSION)?[..]).map_err(at(&d_path))?;

    let m = MatchConfig { window: opts.window, slack: opts.slack };
    let (trajs, rejections) = reconstruct_trajectories(&events, &topo, &m)?;
    let (resolved, resolution) = resolve_disruptions(disruptions, &trajs, topo.stations)?;

    let mut dir = StageDir::create(out)?;
    dir.put_with(TRAJECTORIES, FORMAT_VERSION, |w| write_trajectories(w, &trajs))?;
    dir.put_with(DISRUPTIONS, FORMAT_VERSION, |w| write_disruptions(w, &resolved))?;
    let summary = IngestSummary {
        format_version: FORMAT_VERSION,
        stations: topo.stations,
        trains: trajs.len(),
        disruptions: resolved.len(),
        rejections,
        resolution,
    };
    dir.put_json(INGEST_SUMMARY, FORMAT_VERSION, &summary)?;
    dir.finish("ingest", None, opts, inputs)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureOptions {
    /// Share of disruptions used for fitting.
    #[arg(long, default_value_t = 0.9)]
    pub split: f64,
    /// Largest look-ahead distance of the formation indicators.
    #[arg(long, default_value_t = 5)]
    pub dmax: usize,
    /// Reference profile bin width, minutes.
    #[arg(long, default_value_t = 30)]
    pub bin_minutes: u32,
    /// Date excluded from the reference profile, YYYY-MM-DD; repeatable.
    #[arg(long = "holiday")]
    pub holidays: Vec<NaiveDate>,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions { split: 0.9, dmax: 5, bin_minutes: 30, holidays: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesSummary {
    pub format_version: u32,
    pub stations: usize,
    pub max_lag: usize,
    pub records: usize,
    pub train_records: usize,
    pub test_records: usize,
    /// Test followers whose predecessor is in the training partition.
    pub orphaned: usize,
    pub build: BuildReport,
}

#[derive(Serialize)]
struct SplitFile {
    format_version: u32,
    #[serde(flatten)]
    split: metrocast::features::SplitManifest,
}

pub fn features(ingest_dir: &Path, out: &Path, opts: &FeatureOptions, seed: u64) -> Result<()> {
    let mut inputs = Inputs::default();
    let s_path = ingest_dir.join(INGEST_SUMMARY);
    let summary: IngestSummary = parse_json(&inputs.read(&s_path, FORMAT_VERSION)?, &s_path)?;
    let t_path = ingest_dir.join(TRAJECTORIES);
    let trajs = read_trajectories(&inputs.read(&t_path, FORMAT_VERSION)?[..]).map_err(at(&t_path))?;
    let d_path = ingest_dir.join(DISRUPTIONS);
    let disruptions = read_disruptions(&inputs.read(&d_path, FORMAT_VERSION)?[..]).map_err(at(&d_path))?;

    let stations = summary.stations;
    let pcfg = ProfileConfig { bin_minutes: opts.bin_minutes, holidays: opts.holidays.clone(), ..Default::default() };
    let profile = build_reference_profile(&trajs, &disruptions, stations, &pcfg)?;
    let ocfg = ObservationConfig { stations, max_lag: opts.dmax };
    let (records, build) = build_dataset(&disruptions, &trajs, &profile, &ocfg)?;
    let split = split_by_disruption(&records, opts.split, seed)?;

    let mut dir = StageDir::create(out)?;
    dir.put_with(OBSERVATIONS, FORMAT_VERSION, |w| write_observations(w, &records))?;
    dir.put_with(TRAIN, FORMAT_VERSION, |w| write_observations(w, &split.in_sample))?;
    dir.put_with(TEST, FORMAT_VERSION, |w| write_observations(w, &split.out_of_sample))?;
    dir.put_json(SPLIT, FORMAT_VERSION, &SplitFile { format_version: FORMAT_VERSION, split: split.manifest() })?;
    dir.put_with(PROFILE, FORMAT_VERSION, |w| profile.write_json(w))?;
    let summary = FeaturesSummary {
        format_version: FORMAT_VERSION,
        stations,
        max_lag: opts.dmax,
        records: records.len(),
        train_records: split.in_sample.len(),
        test_records: split.out_of_sample.len(),
        orphaned: split.orphaned,
        build,
    };
    dir.put_json(FEATURES_SUMMARY, FORMAT_VERSION, &summary)?;
    dir.finish("features", Some(seed), opts, inputs)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Innovation family: baseline, sn or st.
    #[arg(long, default_value = "sn")]
    pub family: Family,
    #[arg(long, default_value_t = SamplerConfig::default().chains)]
    pub chains: usize,
    #[arg(long, default_value_t = SamplerConfig::default().warmup)]
    pub warmup: usize,
    /// Retained draws per chain.
    #[arg(long, default_value_t = SamplerConfig::default().draws)]
    pub draws: usize,
    #[arg(long, default_value_t = SamplerConfig::default().target_accept)]
    pub target_accept: f64,
    #[arg(long, default_value_t = SamplerConfig::default().max_depth)]
    pub max_depth: usize,
    /// Distances above this are clamped in the scale and skewness terms;
    /// defaults to the largest fitted distance.
    #[arg(long)]
    pub distance_cap: Option<usize>,
    /// Write draws even when the chains have not converged.
    #[arg(long)]
    pub force: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        let s = SamplerConfig::default();
        FitOptions {
            family: Family::SkewNormal,
            chains: s.chains,
            warmup: s.warmup,
            draws: s.draws,
            target_accept: s.target_accept,
            max_depth: s.max_depth,
            distance_cap: None,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub format_version: u32,
    pub converged: bool,
    pub rhat_limit: f64,
    /// Whether the draws file was written.
    pub draws_written: bool,
    #[serde(flatten)]
    pub fit: FitSummary,
}

#[derive(Serialize)]
struct FitConfig<'a> {
    #[serde(flatten)]
    options: &'a FitOptions,
    threads: usize,
}

/// Headway effects are reported in seconds per minute of imbalance.
fn parameter_table(summary: &[ParamSummary]) -> String {
    let mut out = String::from("name,unit,mean,sd,q05,q50,q95,ess,rhat\n");
    for s in summary {
        let (unit, k) = match s.name.as_str() {
            n if n.starts_with("theta[") => ("s/min", 60.0),
            n if n == "t0" || n.starts_with("gamma[") => ("min", 1.0),
            _ => ("", 1.0),
        };
        out.push_str(&format!(
            "{},{unit},{},{},{},{},{},{},{}\n",
            s.name,
            s.mean * k,
            s.sd * k,
            s.q05 * k,
            s.q50 * k,
            s.q95 * k,
            s.ess,
            s.rhat
        ));
    }
    out
}

pub fn fit_stage(features_dir: &Path, out: &Path, opts: &FitOptions, seed: u64, threads: usize) -> Result<()> {
    let mut inputs = Inputs::default();
    let s_path = features_dir.join(FEATURES_SUMMARY);
    let summary: FeaturesSummary = parse_json(&inputs.read(&s_path, FORMAT_VERSION)?, &s_path)?;
    let records = read_records(&mut inputs, &features_dir.join(TRAIN))?;

    let mut model = ModelConfig::new(opts.family, summary.stations, summary.max_lag);
    model.distance_cap = opts.distance_cap;
    let sampler = SamplerConfig {
        chains: opts.chains,
        warmup: opts.warmup,
        draws: opts.draws,
        seed,
        target_accept: opts.target_accept,
        max_depth: opts.max_depth,
        threads: threads.min(opts.chains).max(1),
        ..Default::default()
    };
    let fitted = fit(&records, model, &sampler)?;
    let summary = fitted.summary(&sampler, records.len());
    let max_rhat = summary.max_rhat;
    let converged = max_rhat <= RHAT_LIMIT;
    let write_draws = converged || opts.force;

    let mut dir = StageDir::create(out)?;
    let diag = FitDiagnostics {
        format_version: FORMAT_VERSION,
        converged,
        rhat_limit: RHAT_LIMIT,
        draws_written: write_draws,
        fit: summary,
    };
    dir.put_json(DIAGNOSTICS, FORMAT_VERSION, &diag)?;
    dir.put(PARAMETERS, FORMAT_VERSION, parameter_table(&fitted.draws.summary).as_bytes())?;
    let stale = dir.path(DRAWS);
    if write_draws {
        dir.put_with(DRAWS, FORMAT_VERSION, |w| fitted.draws.write_csv(w))?;
    } else if stale.exists() {
        fs::remove_file(&stale).map_err(|e| at(&stale)(e.into()))?;
    }
    dir.finish("fit", Some(seed), &FitConfig { options: opts, threads: sampler.threads }, inputs)?;
    if write_draws {
        Ok(())
    } else {
        Err(metrocast::Error::NotConverged { max_rhat, limit: RHAT_LIMIT }.into())
    }
}

fn read_fit(inputs: &mut Inputs, fit_dir: &Path) -> Result<(FitDiagnostics, PosteriorDraws)> {
    let d_path = fit_dir.join(DIAGNOSTICS);
    let diag: FitDiagnostics = parse_json(&inputs.read(&d_path, FORMAT_VERSION)?, &d_path)?;
    let p = fit_dir.join(DRAWS);
    let draws = PosteriorDraws::read_csv(&inputs.read(&p, FORMAT_VERSION)?[..]).map_err(at(&p))?;
    Ok((diag, draws))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictOptions {
    /// Interval probability mass; repeatable.
    #[arg(long = "mass", default_values_t = [0.8])]
    pub masses: Vec<f64>,
    /// Posterior draws kept after thinning.
    #[arg(long, default_value_t = PredictConfig::default().draw_budget)]
    pub draw_budget: usize,
    /// Simulated travel times per posterior draw.
    #[arg(long, default_value_t = PredictConfig::default().n_per_draw)]
    pub per_draw: usize,
    /// How a follower's predecessor enters: integrate or plug-in.
    #[arg(long, default_value = "integrate")]
    pub predecessor: PredecessorMode,
}

impl Default for PredictOptions {
    fn default() -> Self {
        let p = PredictConfig::default();
        PredictOptions {
            masses: p.masses,
            draw_budget: p.draw_budget,
            per_draw: p.n_per_draw,
            predecessor: p.predecessor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub format_version: u32,
    pub records: usize,
    pub masses: Vec<f64>,
    pub predecessor: PredecessorMode,
    pub posterior_draws: usize,
    pub n_per_draw: usize,
    pub negative_fraction: f64,
    pub clamped: usize,
    pub plug_in: usize,
}

pub fn predict(
    fit_dir: &Path,
    observations: &Path,
    out: &Path,
    opts: &PredictOptions,
    seed: u64,
    threads: usize,
) -> Result<()> {
    let mut inputs = Inputs::default();
    let (diag, draws) = read_fit(&mut inputs, fit_dir)?;
    let records = read_records(&mut inputs, observations)?;
    let model = diag.fit.model;
    let params = thinned_parameters(&draws, &model, opts.draw_budget)?;
    let cfg = PredictConfig {
        draw_budget: opts.draw_budget,
        n_per_draw: opts.per_draw,
        masses: opts.masses.clone(),
        seed,
        predecessor: opts.predecessor,
        threads,
    };
    let set = predict_dataset(&records, &params, &model, &cfg)?;

    let mut dir = StageDir::create(out)?;
    dir.put_with(PREDICTIONS, FORMAT_VERSION, |w| write_predictions(w, &set.masses, &set.predictions))?;
    let summary = PredictSummary {
        format_version: FORMAT_VERSION,
        records: set.predictions.len(),
        masses: set.masses.clone(),
        predecessor: set.mode,
        posterior_draws: set.posterior_draws,
        n_per_draw: set.n_per_draw,
        negative_fraction: set.negative_fraction,
        clamped: set.clamped,
        plug_in: set.plug_in,
    };
    dir.put_json(PREDICT_SUMMARY, FORMAT_VERSION, &summary)?;
    dir.finish("predict", Some(seed), opts, inputs)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Posterior draws for the P-P envelope; 0 skips it.
    #[arg(long, default_value_t = 0)]
    pub envelope: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub format_version: u32,
    /// Standardized values are computed at the posterior mean.
    pub parameters: String,
    pub records: usize,
    /// Followers whose predecessor is not among the evaluated records.
    pub excluded: usize,
    /// Records in distance groups too small for their own tables.
    pub skipped: usize,
    pub pooled: KsTest,
    pub groups: Vec<GroupKs>,
}

pub fn eval(
    fit_dir: &Path,
    predictions: &Path,
    observations: &Path,
    out: &Path,
    opts: &EvalOptions,
    threads: usize,
) -> Result<()> {
    let mut inputs = Inputs::default();
    let (diag, draws) = read_fit(&mut inputs, fit_dir)?;
    let p_path = predictions.join(PREDICTIONS);
    let (masses, preds) = read_predictions(&inputs.read(&p_path, FORMAT_VERSION)?[..]).map_err(at(&p_path))?;
    let records = read_records(&mut inputs, observations)?;
    let model = diag.fit.model;

    let mut metrics = Vec::new();
    for &m in &masses {
        metrics.extend(metrics_by_distance(&preds, &records, m)?);
    }
    let layout = model.layout();
    let mean = layout.from_values(&draws.posterior_mean())?;
    let norm = normalize_for_diagnostics(&records, &mean, &model)?;
    let cal = pp_qq_tables(&norm.z, &mean, &model, threads);

    let mut dir = StageDir::create(out)?;
    dir.put_with(METRICS, FORMAT_VERSION, |w| write_metrics(w, &metrics))?;
    dir.put_with(PPQQ, FORMAT_VERSION, |w| write_ppqq(w, &cal.rows))?;
    dir.put_with(ZVALUES, FORMAT_VERSION, |w| write_z(w, &norm.z))?;
    let summary = CalibrationSummary {
        format_version: FORMAT_VERSION,
        parameters: "posterior-mean".into(),
        records: norm.z.len(),
        excluded: norm.excluded,
        skipped: cal.skipped,
        pooled: cal.pooled,
        groups: cal.groups,
    };
    dir.put_json(CALIBRATION, FORMAT_VERSION, &summary)?;
    if opts.envelope > 0 {
        let params = thinned_parameters(&draws, &model, opts.envelope)?;
        let env = pp_envelope(&records, &params, &model, threads)?;
        dir.put_with(ENVELOPE, FORMAT_VERSION, |w| write_envelope(w, &env))?;
    }
    dir.finish("eval", None, opts, inputs)
}

/// Drives every stage from one file. Stage directories are created under
/// the output directory; the ground truth goes to its own directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    /// Existing log directory; when absent the logs are simulated.
    pub logs: Option<PathBuf>,
    pub simulation: SimConfig,
    pub ingest: IngestOptions,
    pub features: FeatureOptions,
    pub fit: FitOptions,
    pub predict: PredictOptions,
    pub eval: EvalOptions,
}

pub fn run(cfg: &RunConfig, config_path: &Path, out: &Path, truth_dir: &Path) -> Result<()> {
    let threads = cfg.threads.unwrap_or_else(default_threads);
    let logs = match &cfg.logs {
        Some(dir) => dir.clone(),
        None => {
            let mut sim = cfg.simulation.clone();
            sim.seed = cfg.seed;
            let mut inputs = Inputs::default();
            inputs.read(config_path, FORMAT_VERSION)?;
            let dir = out.join("logs");
            simulate(&sim, &dir, truth_dir, inputs)?;
            dir
        }
    };
    let (ing, feat, fit_dir, pred, ev) =
        (out.join("ingest"), out.join("features"), out.join("fit"), out.join("predict"), out.join("eval"));
    ingest(&logs, &ing, &cfg.ingest)?;
    features(&ing, &feat, &cfg.features, cfg.seed)?;
    fit_stage(&feat, &fit_dir, &cfg.fit, cfg.seed, threads)?;
    let test = feat.join(TEST);
    predict(&fit_dir, &test, &pred, &cfg.predict, cfg.seed, threads)?;
    eval(&fit_dir, &pred, &test, &ev, &cfg.eval, threads)
}
