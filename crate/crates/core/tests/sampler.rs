use metrocast::eval::ks_uniform_sorted;
use metrocast::sampler::{ess, hmc_sample, uniform_init, ChainOutput, LogDensity, SamplerConfig};
use statrs::distribution::{ContinuousCDF, Normal};

/// Zero-mean bivariate normal with unit variances and correlation `r`.
#[derive(Clone)]
struct Correlated(f64);

impl LogDensity for Correlated {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = self.0;
        let k = 1.0 / (1.0 - r * r);
        grad[0] = -k * (x[0] - r * x[1]);
        grad[1] = -k * (x[1] - r * x[0]);
        -0.5 * k * (x[0] * x[0] - 2.0 * r * x[0] * x[1] + x[1] * x[1])
    }
}

/// Twisted Gaussian: `x0 ~ N(0, 100)` and `x1 + b (x0² - 100) ~ N(0, 1)`.
#[derive(Clone)]
struct Banana(f64);

impl LogDensity for Banana {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let b = self.0;
        let u = x[1] + b * (x[0] * x[0] - 100.0);
        grad[0] = -x[0] / 100.0 - u * 2.0 * b * x[0];
        grad[1] = -u;
        -0.5 * x[0] * x[0] / 100.0 - 0.5 * u * u
    }
}

#[derive(Clone)]
struct StdNormal(usize);

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
        }
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
}

fn pooled(chains: &[ChainOutput], i: usize) -> Vec<f64> {
    chains.iter().flat_map(|c| c.draws.iter().map(move |d| d[i])).collect()
}

#[test]
fn correlated_gaussian_covariance_is_recovered() {
    let cfg = SamplerConfig { chains: 4, warmup: 1000, draws: 2000, seed: 3, ..Default::default() };
    let chains = hmc_sample(&Correlated(0.9), &cfg, uniform_init(2)).unwrap();
    let (a, b) = (pooled(&chains, 0), pooled(&chains, 1));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov = |x: &[f64], mx: f64, y: &[f64], my: f64| x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum::<f64>() / (n - 1.0);
    let (vaa, vbb, vab) = (cov(&a, ma, &a, ma), cov(&b, mb, &b, mb), cov(&a, ma, &b, mb));
    for (got, want) in [(vaa, 1.0), (vbb, 1.0), (vab, 0.9)] {
        assert!((got - want).abs() < 0.1 * want, "covariance {got} vs {want}");
    }
}

#[test]
fn banana_has_few_divergences_at_high_target_acceptance() {
    let cfg = SamplerConfig { chains: 4, warmup: 1000, draws: 2000, seed: 5, target_accept: 0.9, ..Default::default() };
    let chains = hmc_sample(&Banana(0.03), &cfg, uniform_init(2)).unwrap();
    let total: usize = chains.iter().map(|c| c.divergent.len()).sum();
    let divergent: usize = chains.iter().map(|c| c.divergent.iter().filter(|&&d| d).count()).sum();
    let rate = divergent as f64 / total as f64;
    assert!(rate < 0.02, "divergence rate {rate}");
    let x0 = pooled(&chains, 0);
    let var = x0.iter().map(|v| v * v).sum::<f64>() / x0.len() as f64;
    assert!((var - 100.0).abs() < 20.0, "x0 variance {var}");
}

#[test]
fn one_dimensional_draws_pass_ks_against_the_target() {
    let cfg = SamplerConfig { chains: 4, warmup: 1000, draws: 10_000, seed: 9, ..Default::default() };
    let chains = hmc_sample(&StdNormal(1), &cfg, uniform_init(1)).unwrap();
    let x = pooled(&chains, 0);
    // thin to roughly independent draws
    let tau = (x.len() as f64 / ess(&x)).ceil().max(1.0) as usize;
    let normal = Normal::standard();
    let mut u: Vec<f64> = x.iter().step_by(tau).map(|&v| normal.cdf(v)).collect();
    u.sort_by(f64::total_cmp);
    assert!(u.len() >= 10_000, "{} thinned draws", u.len());
    let ks = ks_uniform_sorted(&u);
    assert!(ks.p_value > 0.01, "KS statistic {} p {}", ks.statistic, ks.p_value);
}

#[test]
fn energy_change_has_zero_mean() {
    let cfg = SamplerConfig { chains: 4, warmup: 1000, draws: 4000, seed: 13, ..Default::default() };
    let chains = hmc_sample(&StdNormal(10), &cfg, uniform_init(10)).unwrap();
    let de: Vec<f64> = chains.iter().flat_map(|c| c.energy_change.iter().copied()).collect();
    let n = de.len() as f64;
    let mean = de.iter().sum::<f64>() / n;
    let var = de.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / ess(&de).max(1.0)).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean energy change {mean}, standard error {se}");
}
