//! Post-disruption travel-time model.
//!
//! The mean of a record is a global offset plus the reference travel time,
//! headway-imbalance effects at intermediate stations and formation effects
//! keyed by the held station. The skew families subtract the innovation mean
//! so the location stays centred, and link consecutive trains heading to the
//! same destination through a lagged innovation term whose weight grows with
//! the overlap of their remaining journeys.

mod fit;
mod layout;

use std::collections::HashMap;
use std::f64::consts::{FRAC_2_PI, LN_2};

pub use fit::*;
pub use layout::*;

use statrs::function::gamma::ln_gamma;

use crate::dists::special::LN_SQRT_2PI;
use crate::dists::{
    d_delta, delta, normal_ln_pdf_grad, sn_ln_pdf_grad, st_b, st_b_derivative, st_ln_pdf_grad,
    Innovation, LogPdfGrad,
};
use crate::error::{Error, Result};
use crate::features::ObservationRecord;

/// `μ`: offset, reference travel time, headway and formation terms.
pub fn mean_mu(rec: &ObservationRecord, p: &ParameterVector, cfg: &ModelConfig) -> f64 {
    let mut mu = p.t0 + rec.ref_travel;
    for h in &rec.headways {
        mu += p.theta_at(h.station) * h.imbalance;
    }
    for lag in cfg.min_lag..=cfg.max_lag.min(rec.formation.len()) {
        if rec.formation[lag - 1] {
            mu += p.gamma_at(cfg.stations, lag, rec.origin);
        }
    }
    mu
}

/// Mean of the standardized innovation, `E[ε] / ω`.
pub fn innovation_mean_factor(family: Family, alpha: f64, nu: Option<f64>) -> Result<f64> {
    Ok(match family {
        Family::Baseline => 0.0,
        Family::SkewNormal => FRAC_2_PI.sqrt() * delta(alpha),
        Family::SkewT => {
            let nu = nu.ok_or_else(|| Error::InvalidParameter("skew-t needs nu".into()))?;
            st_b(nu)? * delta(alpha)
        }
    })
}

/// Distance used in the scale and skewness forms.
pub fn effective_distance(d: usize, cap: Option<usize>) -> f64 {
    cap.map_or(d, |c| d.min(c)) as f64
}

/// `μ' = μ - E[ε]`, so that the record's expectation is `μ`.
pub fn adjusted_mean(rec: &ObservationRecord, p: &ParameterVector, cfg: &ModelConfig) -> Result<f64> {
    let d = effective_distance(rec.distance(), cfg.distance_cap);
    let mu = mean_mu(rec, p, cfg);
    let scale = p.scale_sq(d).sqrt();
    Ok(mu - scale * innovation_mean_factor(cfg.family, p.skewness(d), p.nu)?)
}

/// Innovation law of a record at the given parameters.
pub fn innovation_law(family: Family, p: &ParameterVector, d: f64) -> Innovation {
    let scale = p.scale_sq(d).sqrt();
    match family {
        Family::Baseline => Innovation::Normal { sd: scale },
        Family::SkewNormal => Innovation::SkewNormal { omega: scale, alpha: p.skewness(d) },
        Family::SkewT => Innovation::SkewT {
            omega: scale,
            alpha: p.skewness(d),
            nu: p.nu.expect("skew-t parameters carry nu"),
        },
    }
}

/// Records heading to one destination in one disruption, lead first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualChain {
    pub disruption_id: i64,
    pub destination: usize,
    /// Indices into the record slice the chain was built from.
    pub members: Vec<usize>,
}

/// Groups records into residual chains by following predecessor links.
pub fn build_chains(records: &[ObservationRecord]) -> Result<Vec<ResidualChain>> {
    let mut by_id: HashMap<u64, usize> = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if by_id.insert(r.record_id, i).is_some() {
            return Err(Error::BrokenChain(format!("duplicate record id {}", r.record_id)));
        }
    }
    let mut successor: Vec<Option<usize>> = vec![None; records.len()];
    for (i, r) in records.iter().enumerate() {
        if r.is_first {
            continue;
        }
        let pid = r
            .predecessor
            .ok_or_else(|| Error::BrokenChain(format!("record {} has no predecessor", r.record_id)))?;
        let p = *by_id.get(&pid).ok_or_else(|| {
            Error::BrokenChain(format!("record {} links to missing record {pid}", r.record_id))
        })?;
        let pr = &records[p];
        if pr.disruption_id != r.disruption_id || pr.destination != r.destination {
            return Err(Error::BrokenChain(format!(
                "record {} links across disruptions or destinations",
                r.record_id
            )));
        }
        if r.pred_origin != Some(pr.origin) {
            return Err(Error::BrokenChain(format!(
                "record {}: predecessor origin {:?} disagrees with record {pid}",
                r.record_id, r.pred_origin
            )));
        }
        if successor[p].replace(i).is_some() {
            return Err(Error::BrokenChain(format!("record {pid} has two successors")));
        }
    }
    let mut chains = Vec::new();
    let mut seen = 0usize;
    for (i, r) in records.iter().enumerate() {
        if !r.is_first {
            continue;
        }
        let mut members = vec![i];
        let mut cur = i;
        while let Some(next) = successor[cur] {
            members.push(next);
            cur = next;
        }
        seen += members.len();
        chains.push(ResidualChain { disruption_id: r.disruption_id, destination: r.destination, members });
    }
    if seen != records.len() {
        return Err(Error::BrokenChain("predecessor links contain a cycle".into()));
    }
    Ok(chains)
}

/// Innovations along one chain: `ε = y - μ' - ρ(overlap) ε_prev`.
pub fn residual_recursion(
    chain: &ResidualChain,
    records: &[ObservationRecord],
    p: &ParameterVector,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(chain.members.len());
    let mut prev: Option<f64> = None;
    for (pos, &i) in chain.members.iter().enumerate() {
        let r = &records[i];
        if r.is_first != (pos == 0) {
            return Err(Error::BrokenChain(format!("record {} out of chain order", r.record_id)));
        }
        let base = r.y - adjusted_mean(r, p, cfg)?;
        let eps = match (prev, r.overlap) {
            (Some(e), Some(ov)) if cfg.family.has_dependence() => base - p.dependence(ov) * e,
            _ => base,
        };
        out.push(eps);
        prev = Some(eps);
    }
    Ok(out)
}

fn ln_half_normal(x: f64, sd: f64) -> f64 {
    LN_2 - LN_SQRT_2PI - sd.ln() - 0.5 * (x / sd).powi(2)
}

fn ln_normal(x: f64, mean: f64, sd: f64) -> f64 {
    -LN_SQRT_2PI - sd.ln() - 0.5 * ((x - mean) / sd).powi(2)
}

/// Flattened design for fast repeated evaluation, rows stored chain by chain.
#[derive(Debug, Clone)]
struct Design {
    y: Vec<f64>,
    offset: Vec<f64>,
    dist: Vec<f64>,
    /// Overlap ratio, `NaN` for chain leads.
    overlap: Vec<f64>,
    term_start: Vec<u32>,
    term_idx: Vec<u32>,
    term_val: Vec<f64>,
    chain_start: Vec<u32>,
    /// Row position → index in the caller's record slice.
    order: Vec<usize>,
}

/// Log posterior over the unconstrained parameter vector.
#[derive(Debug, Clone)]
pub struct Posterior {
    cfg: ModelConfig,
    layout: ParamLayout,
    design: Design,
}

#[derive(Clone)]
struct Scratch {
    eps: Vec<f64>,
    dep: Vec<f64>,
    decay: Vec<f64>,
    lg: Vec<LogPdfGrad>,
    mean_factor: Vec<f64>,
    scale: Vec<f64>,
}

impl Posterior {
    pub fn new(cfg: ModelConfig, records: &[ObservationRecord]) -> Result<Self> {
        cfg.validate()?;
        let layout = cfg.layout();
        let chains = build_chains(records)?;
        let n = records.len();
        let mut d = Design {
            y: Vec::with_capacity(n),
            offset: Vec::with_capacity(n),
            dist: Vec::with_capacity(n),
            overlap: Vec::with_capacity(n),
            term_start: Vec::with_capacity(n + 1),
            term_idx: Vec::new(),
            term_val: Vec::new(),
            chain_start: Vec::with_capacity(chains.len() + 1),
            order: Vec::with_capacity(n),
        };
        d.term_start.push(0);
        for chain in &chains {
            d.chain_start.push(d.y.len() as u32);
            for &i in &chain.members {
                let r = &records[i];
                r.validate()?;
                if r.destination > cfg.stations {
                    return Err(Error::InvalidParameter(format!(
                        "record {} reaches station {} beyond the {}-station line",
                        r.record_id, r.destination, cfg.stations
                    )));
                }
                d.y.push(r.y);
                d.offset.push(r.ref_travel);
                d.dist.push(effective_distance(r.distance(), cfg.distance_cap));
                d.overlap.push(r.overlap.unwrap_or(f64::NAN));
                for h in &r.headways {
                    d.term_idx.push(layout.theta(h.station) as u32);
                    d.term_val.push(h.imbalance);
                }
                for lag in cfg.min_lag..=cfg.max_lag.min(r.formation.len()) {
                    if r.formation[lag - 1] {
                        d.term_idx.push(layout.gamma(lag, r.origin) as u32);
                        d.term_val.push(1.0);
                    }
                }
                d.term_start.push(d.term_idx.len() as u32);
                d.order.push(i);
            }
        }
        d.chain_start.push(d.y.len() as u32);
        Ok(Posterior { cfg, layout, design: d })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn n_records(&self) -> usize {
        self.design.y.len()
    }

    /// Log prior density on the unconstrained scale, Jacobians included.
    pub fn log_prior(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        let pr = &self.cfg.priors;
        let mut lp = 0.0;
        let mut gauss = |i: usize, sd: f64, grad: &mut [f64]| {
            lp += ln_normal(x[i], 0.0, sd);
            grad[i] += -x[i] / (sd * sd);
        };
        gauss(ParamLayout::T0, pr.t0_sd, grad);
        for m in 2..l.stations {
            gauss(l.theta(m), pr.theta_sd, grad);
        }
        for lag in 1..=l.max_lag {
            for j in 1..=l.stations {
                gauss(l.gamma(lag, j), pr.gamma_sd, grad);
            }
        }
        if let Some(i) = l.alpha0() {
            gauss(i, pr.alpha_sd, grad);
            gauss(i + 1, pr.alpha_sd, grad);
            gauss(i + 2, pr.rho_raw_sd, grad);
        }
        // positive parameters sampled on the log scale
        let trunc_norm = (crate::dists::special::std_normal_cdf(pr.omega_mean / pr.omega_sd)).ln();
        for i in [l.log_omega0(), l.log_omega1()] {
            let w = x[i].exp();
            lp += ln_normal(w, pr.omega_mean, pr.omega_sd) - trunc_norm + x[i];
            grad[i] += -(w - pr.omega_mean) / (pr.omega_sd * pr.omega_sd) * w + 1.0;
        }
        if let Some(i) = l.log_lambda() {
            let lam = x[i].exp();
            lp += ln_half_normal(lam, pr.lambda_sd) + x[i];
            grad[i] += -lam * lam / (pr.lambda_sd * pr.lambda_sd) + 1.0;
        }
        if let Some(i) = l.nu_raw() {
            let e = x[i].exp();
            let nu = 1.0 + e;
            lp += pr.nu_shape * pr.nu_rate.ln() - ln_gamma(pr.nu_shape) + (pr.nu_shape - 1.0) * nu.ln()
                - pr.nu_rate * nu
                + x[i];
            grad[i] += ((pr.nu_shape - 1.0) / nu - pr.nu_rate) * e + 1.0;
        }
        lp
    }

    fn scratch(&self) -> Scratch {
        let n = self.n_records();
        Scratch {
            eps: vec![0.0; n],
            dep: vec![0.0; n],
            decay: vec![0.0; n],
            lg: vec![LogPdfGrad::default(); n],
            mean_factor: vec![0.0; n],
            scale: vec![0.0; n],
        }
    }

    /// Log likelihood and its gradient, accumulated into `grad`.
    pub fn log_likelihood(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut s = self.scratch();
        self.log_likelihood_with(x, grad, &mut s)
    }

    fn log_likelihood_with(&self, x: &[f64], grad: &mut [f64], s: &mut Scratch) -> f64 {
        let l = &self.layout;
        let d = &self.design;
        let family = self.cfg.family;
        let omega0 = x[l.log_omega0()].exp();
        let omega1 = x[l.log_omega1()].exp();
        let (alpha0, alpha1) = l.alpha0().map_or((0.0, 0.0), |i| (x[i], x[i + 1]));
        let rho = l.rho_raw().map_or(0.0, |i| rho_from_raw(x[i]));
        let lambda = l.log_lambda().map_or(0.0, |i| x[i].exp());
        let nu = l.nu_raw().map(|i| 1.0 + x[i].exp());
        let (b_nu, db_nu) = match (family, nu) {
            (Family::SkewT, Some(nu)) => match st_b(nu) {
                Ok(b) => (b, st_b_derivative(nu)),
                Err(_) => return f64::NEG_INFINITY,
            },
            _ => (FRAC_2_PI.sqrt(), 0.0),
        };

        let mut ll = 0.0;
        let mut g_omega0 = 0.0;
        let mut g_omega1 = 0.0;
        let mut g_alpha0 = 0.0;
        let mut g_alpha1 = 0.0;
        let mut g_rho = 0.0;
        let mut g_lambda = 0.0;
        let mut g_nu = 0.0;

        for c in d.chain_start.windows(2) {
            let (lo, hi) = (c[0] as usize, c[1] as usize);
            // forward pass
            let mut prev = 0.0;
            for n in lo..hi {
                let mut mu = x[ParamLayout::T0] + d.offset[n];
                let (ts, te) = (d.term_start[n] as usize, d.term_start[n + 1] as usize);
                for t in ts..te {
                    mu += x[d.term_idx[t] as usize] * d.term_val[t];
                }
                let dist = d.dist[n];
                let scale = (omega0 + omega1 * dist).sqrt();
                let alpha = alpha0 + alpha1 * dist;
                let factor = match family {
                    Family::Baseline => 0.0,
                    _ => b_nu * delta(alpha),
                };
                let mut eps = d.y[n] - (mu - scale * factor);
                if n > lo && family.has_dependence() {
                    let decay = (-lambda * d.overlap[n]).exp();
                    let dep = rho * (1.0 - decay);
                    eps -= dep * prev;
                    s.dep[n] = dep;
                    s.decay[n] = decay;
                } else {
                    s.dep[n] = 0.0;
                }
                let lg = match family {
                    Family::Baseline => normal_ln_pdf_grad(eps, scale),
                    Family::SkewNormal => sn_ln_pdf_grad(eps, scale, alpha),
                    Family::SkewT => st_ln_pdf_grad(eps, scale, alpha, nu.unwrap_or(f64::NAN)),
                };
                ll += lg.value;
                s.eps[n] = eps;
                s.lg[n] = lg;
                s.scale[n] = scale;
                s.mean_factor[n] = factor;
                prev = eps;
            }
            // reverse pass: adjoint of each innovation, tail first
            let mut carry = 0.0;
            for n in (lo..hi).rev() {
                let adj = s.lg[n].d_y + carry;
                carry = -s.dep[n] * adj;
                // dL/dμ' = -adj
                let g_mu = -adj;
                grad[ParamLayout::T0] += g_mu;
                let (ts, te) = (d.term_start[n] as usize, d.term_start[n + 1] as usize);
                for t in ts..te {
                    grad[d.term_idx[t] as usize] += g_mu * d.term_val[t];
                }
                let dist = d.dist[n];
                let scale = s.scale[n];
                let lg = &s.lg[n];
                // μ' = μ - scale·factor
                let g_scale = lg.d_omega - g_mu * s.mean_factor[n];
                g_omega0 += g_scale / (2.0 * scale);
                g_omega1 += g_scale * dist / (2.0 * scale);
                if family.has_dependence() {
                    let alpha = alpha0 + alpha1 * dist;
                    let g_alpha = lg.d_alpha - g_mu * scale * b_nu * d_delta(alpha);
                    g_alpha0 += g_alpha;
                    g_alpha1 += g_alpha * dist;
                    if n > lo {
                        let g_dep = -adj * s.eps[n - 1];
                        g_rho += g_dep * (1.0 - s.decay[n]);
                        g_lambda += g_dep * rho * d.overlap[n] * s.decay[n];
                    }
                    if family == Family::SkewT {
                        g_nu += lg.d_nu - g_mu * scale * db_nu * delta(alpha);
                    }
                }
            }
        }

        grad[l.log_omega0()] += g_omega0 * omega0;
        grad[l.log_omega1()] += g_omega1 * omega1;
        if let Some(i) = l.alpha0() {
            grad[i] += g_alpha0;
            grad[i + 1] += g_alpha1;
            grad[i + 2] += g_rho * 0.5 * (1.0 - rho * rho);
            grad[i + 3] += g_lambda * lambda;
        }
        if let (Some(i), Some(nu)) = (l.nu_raw(), nu) {
            grad[i] += g_nu * (nu - 1.0);
        }
        ll
    }

    /// Log posterior and gradient. Non-finite values come back as `-∞`
    /// with a zeroed gradient.
    pub fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut s = self.scratch();
        self.log_density_with(x, grad, &mut s)
    }

    fn log_density_with(&self, x: &[f64], grad: &mut [f64], s: &mut Scratch) -> f64 {
        assert_eq!(x.len(), self.dim());
        grad.iter_mut().for_each(|g| *g = 0.0);
        if x.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let lp = self.log_prior(x, grad) + self.log_likelihood_with(x, grad, s);
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        }
        lp
    }

    /// Innovations at `x`, indexed like the records the posterior was built from.
    pub fn innovations(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.scratch();
        let mut g = vec![0.0; self.dim()];
        self.log_likelihood_with(x, &mut g, &mut s);
        let mut out = vec![f64::NAN; self.n_records()];
        for (row, &i) in self.design.order.iter().enumerate() {
            out[i] = s.eps[row];
        }
        out
    }

    /// A reusable evaluator that keeps its scratch buffers between calls.
    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator { post: self, scratch: self.scratch() }
    }
}

/// Posterior bound to its own working memory.
#[derive(Clone)]
pub struct Evaluator<'a> {
    post: &'a Posterior,
    scratch: Scratch,
}

impl crate::sampler::LogDensity for Evaluator<'_> {
    fn dim(&self) -> usize {
        self.post.dim()
    }

    fn log_density(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.post.log_density_with(x, grad, &mut self.scratch)
    }
}
