//! No-U-turn Hamiltonian Monte Carlo with step-size and diagonal metric
//! adaptation during warmup.
//!
//! Warmup follows the usual three-phase schedule: a fast initial buffer
//! (step size only), a sequence of doubling slow windows that each end with
//! a metric update, and a fast terminal buffer. Step size is tuned by dual
//! averaging toward `target_accept` and restarted after every metric update.

mod diagnostics;
mod io;
mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use diagnostics::{autocorrelation_time, ess, ess_chains, split_rhat, ParamSummary};
pub use nuts::{TransitionInfo, MAX_ENERGY_ERROR};

use crate::error::{Error, Result};
use nuts::Point;

/// A differentiable log density on an unconstrained space.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density, or
    /// `-∞` outside the support.
    fn log_density(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Leapfrog steps per transition are capped at `2^max_depth`.
    pub max_depth: usize,
    pub init_buffer: usize,
    pub term_buffer: usize,
    pub base_window: usize,
    /// Warmup is aborted when more than this fraction of the terminal
    /// window diverged.
    pub max_divergent_fraction: f64,
    /// Worker threads for running chains; results do not depend on it.
    pub threads: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            draws: 4000,
            seed: 0,
            target_accept: 0.8,
            max_depth: 10,
            init_buffer: 75,
            term_buffer: 50,
            base_window: 25,
            max_divergent_fraction: 0.5,
            threads: 1,
        }
    }
}

impl SamplerConfig {
    pub fn max_leapfrog(&self) -> usize {
        1 << self.max_depth
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.chains == 0 {
            return bad("need at least one chain");
        }
        if self.warmup < 100 {
            return bad("warmup must be at least 100 iterations for adaptation");
        }
        if self.draws == 0 {
            return bad("need at least one draw");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target acceptance must lie in (0, 1)");
        }
        if self.max_depth == 0 || self.max_depth > 16 {
            return bad("tree depth must lie in 1..=16");
        }
        Ok(())
    }
}

/// Dual-averaging step-size adaptation.
#[derive(Debug, Clone)]
struct StepSizeAdapter {
    mu: f64,
    log_eps_bar: f64,
    h_bar: f64,
    counter: f64,
    target: f64,
}

impl StepSizeAdapter {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        StepSizeAdapter { mu: (10.0 * eps).ln(), log_eps_bar: 0.0, h_bar: 0.0, counter: 0.0, target }
    }

    fn restart(&mut self, eps: f64) {
        *self = Self::new(eps, self.target);
    }

    fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - a);
        let log_eps = self.mu - self.counter.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.counter.powf(-Self::KAPPA);
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Welford running variance for the slow windows.
#[derive(Debug, Clone)]
struct VarianceEstimator {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceEstimator {
    fn new(dim: usize) -> Self {
        VarianceEstimator { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Regularized variance, shrunk toward a small constant.
    fn metric(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Warmup phase boundaries for a given warmup length.
#[derive(Debug, Clone, Copy)]
struct Schedule {
    init_buffer: usize,
    term_buffer: usize,
    base_window: usize,
    warmup: usize,
}

impl Schedule {
    fn new(cfg: &SamplerConfig) -> Self {
        let (mut init, mut term, mut base) = (cfg.init_buffer, cfg.term_buffer, cfg.base_window);
        if init + term + base > cfg.warmup {
            init = (0.15 * cfg.warmup as f64) as usize;
            term = (0.1 * cfg.warmup as f64) as usize;
            base = cfg.warmup - init - term;
        }
        Schedule { init_buffer: init, term_buffer: term, base_window: base, warmup: cfg.warmup }
    }

    /// End iterations (exclusive) of the slow windows.
    fn window_ends(&self) -> Vec<usize> {
        let last = self.warmup - self.term_buffer;
        let mut ends = Vec::new();
        let mut start = self.init_buffer;
        let mut size = self.base_window;
        while start < last {
            let mut end = start + size;
            // stretch the final window when the next one would not fit
            if end + 2 * size > last {
                end = last;
            }
            ends.push(end);
            start = end;
            size *= 2;
        }
        ends
    }
}

/// Output of one chain, on the unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub divergent: Vec<bool>,
    pub accept_stat: Vec<f64>,
    pub n_leapfrog: Vec<usize>,
    pub energy: Vec<f64>,
    /// Energy change between the start and the selected point of each transition.
    pub energy_change: Vec<f64>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub warmup_divergences: usize,
}

fn find_initial_step<T: LogDensity, R: Rng>(
    start: &Point,
    target: &mut T,
    rng: &mut R,
    inv_metric: &[f64],
    mut eps: f64,
) -> f64 {
    let mut z = start.clone();
    z.refresh_momentum(inv_metric, rng);
    let h0 = z.hamiltonian(inv_metric);
    let p0 = z.p.clone();
    let step = |eps: f64, z: &mut Point, target: &mut T| {
        z.clone_from(start);
        z.p.clone_from(&p0);
        z.leapfrog(eps, inv_metric, target);
        h0 - z.hamiltonian(inv_metric)
    };
    let delta = step(eps, &mut z, target);
    let up = delta > 0.8f64.ln();
    for _ in 0..100 {
        let delta = step(eps, &mut z, target);
        if up && !(delta > 0.8f64.ln()) {
            break;
        }
        if !up && delta > 0.8f64.ln() {
            break;
        }
        eps = if up { eps * 2.0 } else { eps * 0.5 };
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e7)
}

/// Runs warmup and sampling for one chain.
pub fn run_chain<T: LogDensity>(
    target: &mut T,
    init: Vec<f64>,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::InvalidParameter(format!("initial point has length {}, expected {dim}", init.len())));
    }
    let mut rng = chain_rng(cfg.seed, chain);
    let mut inv_metric = vec![1.0; dim];
    let mut z = Point::new(init, target);
    if !z.logp.is_finite() {
        return Err(Error::NonFinite(format!("chain {chain}: log density at the initial point is {}", z.logp)));
    }
    let mut eps = find_initial_step(&z, target, &mut rng, &inv_metric, 1.0);
    let mut adapter = StepSizeAdapter::new(eps, cfg.target_accept);
    let schedule = Schedule::new(cfg);
    let ends = schedule.window_ends();
    let mut window = 0usize;
    let mut var = VarianceEstimator::new(dim);
    let term_start = schedule.warmup - schedule.term_buffer;
    let mut term_divergent = 0usize;
    let mut warmup_divergences = 0usize;

    for it in 0..cfg.warmup {
        let info = nuts::transition(&mut z, target, &mut rng, &inv_metric, eps, cfg.max_depth);
        if info.divergent {
            warmup_divergences += 1;
            if it >= term_start {
                term_divergent += 1;
            }
        }
        eps = adapter.update(info.accept_stat);
        if it >= schedule.init_buffer && window < ends.len() {
            var.add(&z.q);
            if it + 1 == ends[window] {
                inv_metric = var.metric();
                var = VarianceEstimator::new(dim);
                window += 1;
                eps = find_initial_step(&z, target, &mut rng, &inv_metric, eps);
                adapter.restart(eps);
            }
        }
    }
    if schedule.term_buffer > 0
        && term_divergent as f64 > cfg.max_divergent_fraction * schedule.term_buffer as f64
    {
        return Err(Error::PersistentDivergence {
            chain,
            divergent: term_divergent,
            window: schedule.term_buffer,
        });
    }
    eps = adapter.final_step();

    let mut out = ChainOutput {
        draws: Vec::with_capacity(cfg.draws),
        divergent: Vec::with_capacity(cfg.draws),
        accept_stat: Vec::with_capacity(cfg.draws),
        n_leapfrog: Vec::with_capacity(cfg.draws),
        energy: Vec::with_capacity(cfg.draws),
        energy_change: Vec::with_capacity(cfg.draws),
        step_size: eps,
        inv_metric: inv_metric.clone(),
        warmup_divergences,
    };
    for _ in 0..cfg.draws {
        let info = nuts::transition(&mut z, target, &mut rng, &inv_metric, eps, cfg.max_depth);
        out.draws.push(z.q.clone());
        out.divergent.push(info.divergent);
        out.accept_stat.push(info.accept_stat);
        out.n_leapfrog.push(info.n_leapfrog);
        out.energy.push(info.energy);
        out.energy_change.push(info.energy - info.initial_energy);
    }
    Ok(out)
}

/// Independent random stream for one chain.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64 + 1);
    rng
}

/// Runs all chains. `init` receives the chain index and a generator
/// dedicated to initialization. Chains run on up to `cfg.threads` threads;
/// the output is the same for any thread count.
pub fn hmc_sample<T, F>(target: &T, cfg: &SamplerConfig, init: F) -> Result<Vec<ChainOutput>>
where
    T: LogDensity + Clone + Sync,
    F: Fn(usize, &mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    let run = |chain: usize| {
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
        init_rng.set_stream(chain as u64 + 1);
        let x0 = init(chain, &mut init_rng);
        let mut t = target.clone();
        run_chain(&mut t, x0, cfg, chain)
    };
    let threads = cfg.threads.max(1).min(cfg.chains);
    if threads == 1 {
        return (0..cfg.chains).map(run).collect();
    }
    let mut results: Vec<Option<Result<ChainOutput>>> = (0..cfg.chains).map(|_| None).collect();
    std::thread::scope(|s| {
        for (worker, slots) in results.chunks_mut(cfg.chains.div_ceil(threads)).enumerate() {
            let run = &run;
            let base = worker * cfg.chains.div_ceil(threads);
            s.spawn(move || {
                for (k, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(run(base + k));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every chain ran")).collect()
}

/// Initial point drawn uniformly from `(-2, 2)` in every coordinate.
pub fn uniform_init(dim: usize) -> impl Fn(usize, &mut ChaCha8Rng) -> Vec<f64> + Sync {
    move |_, rng| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Posterior draws on the constrained scale with per-parameter diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    /// `values[chain][iter][param]`.
    pub values: Vec<Vec<Vec<f64>>>,
    pub divergent: Vec<Vec<bool>>,
    pub step_sizes: Vec<f64>,
    pub summary: Vec<ParamSummary>,
}

impl PosteriorDraws {
    /// Maps each unconstrained draw through `transform` and computes diagnostics.
    pub fn from_chains<F>(names: Vec<String>, chains: &[ChainOutput], transform: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let values: Vec<Vec<Vec<f64>>> =
            chains.iter().map(|c| c.draws.iter().map(|d| transform(d)).collect()).collect();
        for chain in &values {
            for v in chain {
                if v.len() != names.len() {
                    return Err(Error::InvalidParameter("transform output does not match parameter names".into()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("posterior draw contains a non-finite value".into()));
                }
            }
        }
        let summary = diagnostics::summarize(&names, &values);
        Ok(PosteriorDraws {
            names,
            values,
            divergent: chains.iter().map(|c| c.divergent.clone()).collect(),
            step_sizes: chains.iter().map(|c| c.step_size).collect(),
            summary,
        })
    }

    pub fn n_chains(&self) -> usize {
        self.values.len()
    }

    pub fn n_draws(&self) -> usize {
        self.values.first().map_or(0, |c| c.len())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// All draws of one parameter, chains concatenated.
    pub fn column(&self, param: usize) -> Vec<f64> {
        self.values.iter().flat_map(|c| c.iter().map(move |d| d[param])).collect()
    }

    /// Per-chain draws of one parameter.
    pub fn chains_of(&self, param: usize) -> Vec<Vec<f64>> {
        self.values.iter().map(|c| c.iter().map(|d| d[param]).collect()).collect()
    }

    /// Every draw in chain-major order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.values.iter().flat_map(|c| c.iter().map(|d| d.as_slice()))
    }

    pub fn total_divergent(&self) -> usize {
        self.divergent.iter().flatten().filter(|&&d| d).count()
    }

    pub fn max_rhat(&self) -> f64 {
        self.summary.iter().map(|s| s.rhat).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.summary.iter().map(|s| s.ess).fold(f64::INFINITY, f64::min)
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        self.summary.iter().map(|s| s.mean).collect()
    }
}

#[cfg(test)]
mod tests;
