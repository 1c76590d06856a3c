use super::*;

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

/// Independent normals with very different scales.
#[derive(Clone)]
struct Scaled(Vec<f64>);

impl LogDensity for Scaled {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn log_density(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for ((g, v), s) in grad.iter_mut().zip(x).zip(&self.0) {
            *g = -v / (s * s);
            lp -= 0.5 * v * v / (s * s);
        }
        lp
    }
}

fn small_cfg() -> SamplerConfig {
    SamplerConfig { chains: 4, warmup: 1000, draws: 1000, seed: 11, ..Default::default() }
}

#[test]
fn standard_normal_moments_and_ess() {
    let target = StdNormal(10);
    let cfg = small_cfg();
    let chains = hmc_sample(&target, &cfg, uniform_init(10)).unwrap();
    let names: Vec<String> = (0..10).map(|i| format!("x{i}")).collect();
    let draws = PosteriorDraws::from_chains(names, &chains, |x| x.to_vec()).unwrap();
    for s in &draws.summary {
        assert!(s.mean.abs() < 0.05, "{} mean {}", s.name, s.mean);
        assert!((s.sd * s.sd - 1.0).abs() < 0.1, "{} var {}", s.name, s.sd * s.sd);
        assert!(s.ess > 1000.0, "{} ess {}", s.name, s.ess);
        assert!(s.rhat < 1.01, "{} rhat {}", s.name, s.rhat);
    }
    assert_eq!(draws.total_divergent(), 0);
}

#[test]
fn metric_adapts_to_scales() {
    let scales = vec![0.01, 1.0, 100.0];
    let target = Scaled(scales.clone());
    let cfg = SamplerConfig { chains: 1, draws: 500, ..small_cfg() };
    let chains = hmc_sample(&target, &cfg, uniform_init(3)).unwrap();
    for (m, s) in chains[0].inv_metric.iter().zip(&scales) {
        let ratio = m / (s * s);
        assert!(ratio > 0.3 && ratio < 3.0, "metric {m} for scale {s}");
    }
    let sd: Vec<f64> = (0..3)
        .map(|k| {
            let col: Vec<f64> = chains[0].draws.iter().map(|d| d[k]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt()
        })
        .collect();
    for (got, s) in sd.iter().zip(&scales) {
        assert!((got / s - 1.0).abs() < 0.25, "sd {got} for scale {s}");
    }
}

#[test]
fn same_seed_same_draws_for_any_thread_count() {
    let target = StdNormal(3);
    let cfg = SamplerConfig { chains: 3, warmup: 150, draws: 50, seed: 5, ..Default::default() };
    let a = hmc_sample(&target, &cfg, uniform_init(3)).unwrap();
    let b = hmc_sample(&target, &SamplerConfig { threads: 3, ..cfg.clone() }, uniform_init(3)).unwrap();
    assert_eq!(a, b);
    let c = hmc_sample(&target, &SamplerConfig { seed: 6, ..cfg }, uniform_init(3)).unwrap();
    assert_ne!(a[0].draws, c[0].draws);
}

#[test]
fn chains_use_distinct_streams() {
    let target = StdNormal(2);
    let cfg = SamplerConfig { chains: 2, warmup: 150, draws: 20, ..Default::default() };
    let out = hmc_sample(&target, &cfg, |_, _| vec![0.5, -0.5]).unwrap();
    assert_ne!(out[0].draws, out[1].draws);
}

#[derive(Clone)]
struct Cliff;

impl LogDensity for Cliff {
    fn dim(&self) -> usize {
        1
    }

    /// Finite only on a tiny interval, so almost every step leaves the support.
    fn log_density(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad[0] = -1e8 * x[0];
        if x[0].abs() < 1e-9 {
            -0.5e8 * x[0] * x[0]
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[test]
fn leaving_the_support_counts_as_divergent() {
    let mut t = Cliff;
    let mut rng = chain_rng(1, 0);
    let mut z = Point::new(vec![0.0], &mut t);
    let info = nuts::transition(&mut z, &mut t, &mut rng, &[1.0], 1.0, 5);
    assert!(info.divergent);
    assert_eq!(z.q, vec![0.0]);
}

#[test]
fn bad_config_is_rejected() {
    let target = StdNormal(1);
    let cfg = SamplerConfig { chains: 0, ..Default::default() };
    assert!(matches!(hmc_sample(&target, &cfg, uniform_init(1)), Err(Error::InvalidConfig(_))));
    let cfg = SamplerConfig { target_accept: 1.0, ..Default::default() };
    assert!(cfg.validate().is_err());
}

#[test]
fn window_schedule_covers_slow_phase() {
    let s = Schedule::new(&SamplerConfig::default());
    assert_eq!(s.window_ends(), vec![100, 150, 250, 450, 950]);
    let s = Schedule::new(&SamplerConfig { warmup: 100, ..Default::default() });
    let ends = s.window_ends();
    assert_eq!(*ends.last().unwrap(), 100 - s.term_buffer);
}

#[test]
fn dual_averaging_moves_toward_target() {
    let mut a = StepSizeAdapter::new(1.0, 0.8);
    let mut eps = 1.0;
    for _ in 0..50 {
        eps = a.update(0.2);
    }
    assert!(eps < 1.0);
    let mut a = StepSizeAdapter::new(1.0, 0.8);
    for _ in 0..50 {
        eps = a.update(1.0);
    }
    assert!(eps > 1.0);
}

#[test]
fn draws_file_round_trip_and_thinning() {
    let target = StdNormal(2);
    let cfg = SamplerConfig { chains: 2, warmup: 150, draws: 30, seed: 3, ..Default::default() };
    let chains = hmc_sample(&target, &cfg, uniform_init(2)).unwrap();
    let draws = PosteriorDraws::from_chains(vec!["a".into(), "b".into()], &chains, |x| x.to_vec()).unwrap();
    let mut buf = Vec::new();
    draws.write_csv(&mut buf).unwrap();
    let back = PosteriorDraws::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.values, draws.values);
    assert_eq!(back.divergent, draws.divergent);
    assert_eq!(back.summary, draws.summary);
    assert!(String::from_utf8(buf).unwrap().starts_with("chain,iter,divergent,a,b\n"));
    assert_eq!(draws.thinned(20).len(), 20);
    assert_eq!(draws.thinned(7).len(), 7);
    assert_eq!(draws.thinned(1000).len(), 60);
}
