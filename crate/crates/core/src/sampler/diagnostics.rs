//! Effective sample size and split R-hat.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// Posterior summary of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub ess: f64,
    pub rhat: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Biased autocovariance at every lag, computed by zero-padded FFT.
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Multi-chain effective sample size. Autocorrelations are combined across
/// chains and summed in adjacent pairs up to the first negative pair, with
/// the pair sums forced to be non-increasing.
pub fn ess_chains(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    if chains.iter().all(|c| is_constant(c)) {
        return 0.0;
    }
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let var_plus = if m > 1 {
        w * (nf - 1.0) / nf + sample_var(&chain_means)
    } else {
        w * (nf - 1.0) / nf
    };
    if !(var_plus > 0.0) {
        return 0.0;
    }
    let rho = |t: usize| -> f64 {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };
    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    rho_hat[1] = rho(1);
    let mut t = 1;
    while t + 2 < n {
        let a = rho(t + 1);
        let b = rho(t + 2);
        if a + b < 0.0 {
            break;
        }
        rho_hat[t + 1] = a;
        rho_hat[t + 2] = b;
        t += 2;
    }
    let max_t = t;
    // monotone pair sums
    let mut k = 1;
    while k + 2 <= max_t {
        let prev = rho_hat[k - 1] + rho_hat[k];
        if rho_hat[k + 1] + rho_hat[k + 2] > prev {
            rho_hat[k + 1] = prev / 2.0;
            rho_hat[k + 2] = prev / 2.0;
        }
        k += 2;
    }
    let tau = -1.0 + 2.0 * rho_hat[..=max_t].iter().sum::<f64>();
    let tau = tau.max(1.0 / (m as f64 * nf).log10());
    m as f64 * nf / tau
}

/// Effective sample size of a single sequence.
pub fn ess(draws: &[f64]) -> f64 {
    ess_chains(&[draws.to_vec()])
}

/// Integrated autocorrelation time `n / ess` of a single sequence.
pub fn autocorrelation_time(draws: &[f64]) -> f64 {
    draws.len() as f64 / ess(draws)
}

/// Split R-hat: each chain is cut in half and the halves are compared as
/// separate chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if chains.is_empty() || n < 4 {
        return f64::NAN;
    }
    let half = n / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        // drop the middle draw of odd-length chains
        halves.push(&c[..half]);
        halves.push(&c[n - half..n]);
    }
    if halves.iter().any(|h| is_constant(h)) {
        return f64::INFINITY;
    }
    let nf = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = halves.iter().map(|h| sample_var(h)).sum::<f64>() / halves.len() as f64;
    let b = nf * sample_var(&means);
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    (var_plus / w).sqrt()
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summaries for every parameter of `values[chain][iter][param]`.
pub(crate) fn summarize(names: &[String], values: &[Vec<Vec<f64>>]) -> Vec<ParamSummary> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let chains: Vec<Vec<f64>> = values.iter().map(|c| c.iter().map(|d| d[k]).collect()).collect();
            let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
            all.sort_by(f64::total_cmp);
            let sd = if all.len() > 1 { sample_var(&all).sqrt() } else { 0.0 };
            ParamSummary {
                name: name.clone(),
                mean: mean(&all),
                sd,
                q05: quantile_sorted(&all, 0.05),
                q50: quantile_sorted(&all, 0.5),
                q95: quantile_sorted(&all, 0.95),
                ess: ess_chains(&chains),
                rhat: if chains.len() >= 2 || chains.first().is_some_and(|c| c.len() >= 4) {
                    split_rhat(&chains)
                } else {
                    f64::NAN
                },
            }
        })
        .collect()
}
