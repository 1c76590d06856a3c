//! Skew-normal and skew-t distributions (Azzalini parametrization).
//!
//! Both are location–scale families `Y = ξ + ωZ`. The skew-normal standard
//! variate has density `2 φ(z) Φ(αz)`; the skew-t is the scale mixture
//! `Z = Z₀ / √(V/ν)` with `Z₀ ~ SN(0, 1, α)` and `V ~ χ²_ν`, with density
//! `2 t(z; ν) T(αz √((ν+1)/(ν+z²)); ν+1)`.
//!
//! Besides log densities this module carries the analytic partial
//! derivatives the posterior gradient needs, the moment formulas behind the
//! mean adjustment, samplers, and quadrature-based CDFs and quantiles.

pub mod special;

use std::f64::consts::{FRAC_2_PI, LN_2, PI};

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::quad;
use special::{
    d_ln_student_t_pdf_ddf, digamma, inv_mills, ln_gamma, ln_std_normal_pdf, ln_student_t_cdf,
    ln_student_t_pdf, log_ndtr, Dual,
};

/// `δ = α / √(1 + α²)`.
pub fn delta(alpha: f64) -> f64 {
    alpha / (1.0 + alpha * alpha).sqrt()
}

/// `dδ/dα = (1 + α²)^{-3/2}`.
pub fn d_delta(alpha: f64) -> f64 {
    (1.0 + alpha * alpha).powf(-1.5)
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewNormalParams {
    pub xi: f64,
    pub omega: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewTParams {
    pub xi: f64,
    pub omega: f64,
    pub alpha: f64,
    pub nu: f64,
}

impl SkewNormalParams {
    pub fn new(xi: f64, omega: f64, alpha: f64) -> Result<Self> {
        check_finite("xi", xi)?;
        check_finite("omega", omega)?;
        check_finite("alpha", alpha)?;
        if omega <= 0.0 {
            return Err(Error::InvalidParameter(format!("omega must be positive, got {omega}")));
        }
        Ok(Self { xi, omega, alpha })
    }
}

impl SkewTParams {
    pub fn new(xi: f64, omega: f64, alpha: f64, nu: f64) -> Result<Self> {
        check_finite("xi", xi)?;
        check_finite("omega", omega)?;
        check_finite("alpha", alpha)?;
        check_finite("nu", nu)?;
        if omega <= 0.0 {
            return Err(Error::InvalidParameter(format!("omega must be positive, got {omega}")));
        }
        if nu <= 0.0 {
            return Err(Error::InvalidParameter(format!("nu must be positive, got {nu}")));
        }
        Ok(Self { xi, omega, alpha, nu })
    }
}

/// Log density together with its partial derivatives.
///
/// `d_y` is the derivative with respect to the observation; the derivative
/// with respect to the location is `-d_y`. `d_nu` is zero for families
/// without a degrees-of-freedom parameter.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogPdfGrad {
    pub value: f64,
    pub d_y: f64,
    pub d_omega: f64,
    pub d_alpha: f64,
    pub d_nu: f64,
}

/// Gaussian log density of a centred residual with standard deviation `sd`.
pub fn normal_ln_pdf_grad(resid: f64, sd: f64) -> LogPdfGrad {
    let z = resid / sd;
    LogPdfGrad {
        value: ln_std_normal_pdf(z) - sd.ln(),
        d_y: -z / sd,
        d_omega: (z * z - 1.0) / sd,
        d_alpha: 0.0,
        d_nu: 0.0,
    }
}

/// Skew-normal log density of a residual `y - ξ`, with gradient.
pub fn sn_ln_pdf_grad(resid: f64, omega: f64, alpha: f64) -> LogPdfGrad {
    let z = resid / omega;
    let az = alpha * z;
    let m = inv_mills(az);
    let dz = -z + alpha * m;
    LogPdfGrad {
        value: LN_2 - omega.ln() + ln_std_normal_pdf(z) + log_ndtr(az),
        d_y: dz / omega,
        d_omega: -(1.0 + z * dz) / omega,
        d_alpha: z * m,
        d_nu: 0.0,
    }
}

/// Skew-t log density of a residual `y - ξ`, with gradient.
pub fn st_ln_pdf_grad(resid: f64, omega: f64, alpha: f64, nu: f64) -> LogPdfGrad {
    let z = resid / omega;
    let z2 = z * z;
    let nz = nu + z2;
    let r = ((nu + 1.0) / nz).sqrt();
    let w = alpha * z * r;

    let ln_t = ln_student_t_pdf(z, nu);
    let ln_cdf = ln_student_t_cdf(w, Dual::new(nu + 1.0, 1.0));
    // d ln T(w; n)/dw = t(w; n)/T(w; n)
    let ratio = (ln_student_t_pdf(w, nu + 1.0) - ln_cdf.v).exp();

    let dw_dz = alpha * (nu + 1.0).sqrt() * nu / nz.powf(1.5);
    let dw_dalpha = z * r;
    let dw_dnu = 0.5 * alpha * z / r * (z2 - 1.0) / (nz * nz);

    let dz = -(nu + 1.0) * z / nz + ratio * dw_dz;
    LogPdfGrad {
        value: LN_2 - omega.ln() + ln_t + ln_cdf.v,
        d_y: dz / omega,
        d_omega: -(1.0 + z * dz) / omega,
        d_alpha: ratio * dw_dalpha,
        d_nu: d_ln_student_t_pdf_ddf(z, nu) + ratio * dw_dnu + ln_cdf.d,
    }
}

pub fn sn_logpdf(p: &SkewNormalParams, y: f64) -> Result<f64> {
    check_finite("y", y)?;
    Ok(sn_ln_pdf_grad(y - p.xi, p.omega, p.alpha).value)
}

pub fn st_logpdf(p: &SkewTParams, y: f64) -> Result<f64> {
    check_finite("y", y)?;
    Ok(st_ln_pdf_grad(y - p.xi, p.omega, p.alpha, p.nu).value)
}

/// `E[Y] = ξ + ω √(2/π) δ`.
pub fn sn_mean(p: &SkewNormalParams) -> f64 {
    p.xi + p.omega * FRAC_2_PI.sqrt() * delta(p.alpha)
}

/// `Var[Y] = ω² (1 - 2δ²/π)`.
pub fn sn_var(p: &SkewNormalParams) -> f64 {
    let d = delta(p.alpha);
    p.omega * p.omega * (1.0 - FRAC_2_PI * d * d)
}

/// `ln b(ν)` with `b(ν) = √ν Γ((ν-1)/2) / (√π Γ(ν/2))`.
fn ln_st_b(nu: f64) -> f64 {
    0.5 * nu.ln() + ln_gamma(0.5 * (nu - 1.0)) - 0.5 * PI.ln() - ln_gamma(0.5 * nu)
}

/// `b(ν)`, the skew-t counterpart of `√(2/π)` in the mean.
pub fn st_b(nu: f64) -> Result<f64> {
    if !(nu > 1.0) {
        return Err(Error::InvalidParameter(format!("skew-t mean requires nu > 1, got {nu}")));
    }
    Ok(ln_st_b(nu).exp())
}

/// `d b(ν) / dν`.
pub fn st_b_derivative(nu: f64) -> f64 {
    let b = ln_st_b(nu).exp();
    b * (0.5 / nu + 0.5 * digamma(0.5 * (nu - 1.0)) - 0.5 * digamma(0.5 * nu))
}

/// `b(ν) δ`: mean of the standard skew-t variate.
pub fn st_mean_offset(alpha: f64, nu: f64) -> Result<f64> {
    Ok(st_b(nu)? * delta(alpha))
}

/// `E[Y] = ξ + ω b(ν) δ` for `ν > 1`.
pub fn st_mean(p: &SkewTParams) -> Result<f64> {
    Ok(p.xi + p.omega * st_mean_offset(p.alpha, p.nu)?)
}

/// `Var[Y] = ω² (ν/(ν-2) - b(ν)² δ²)` for `ν > 2`.
pub fn st_var(p: &SkewTParams) -> Result<f64> {
    if !(p.nu > 2.0) {
        return Err(Error::InvalidParameter(format!("skew-t variance requires nu > 2, got {}", p.nu)));
    }
    let m = st_mean_offset(p.alpha, p.nu)?;
    Ok(p.omega * p.omega * (p.nu / (p.nu - 2.0) - m * m))
}

fn std_sn_draw<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> f64 {
    let u0: f64 = StandardNormal.sample(rng);
    let u1: f64 = StandardNormal.sample(rng);
    delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1
}

pub fn sn_sample<R: Rng + ?Sized>(p: &SkewNormalParams, n: usize, rng: &mut R) -> Vec<f64> {
    let d = delta(p.alpha);
    (0..n).map(|_| p.xi + p.omega * std_sn_draw(d, rng)).collect()
}

pub fn st_sample<R: Rng + ?Sized>(p: &SkewTParams, n: usize, rng: &mut R) -> Vec<f64> {
    let d = delta(p.alpha);
    let chi = ChiSquared::new(p.nu).expect("nu validated positive");
    (0..n)
        .map(|_| {
            let z0 = std_sn_draw(d, rng);
            let v: f64 = chi.sample(rng);
            p.xi + p.omega * z0 / (v / p.nu).sqrt()
        })
        .collect()
}

/// One of the three innovation laws the models use, always centred at zero
/// location. `Normal` is parametrized by its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Innovation {
    Normal { sd: f64 },
    SkewNormal { omega: f64, alpha: f64 },
    SkewT { omega: f64, alpha: f64, nu: f64 },
}

const CDF_TOL: f64 = 1e-10;

impl Innovation {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Innovation::Normal { sd } => normal_ln_pdf_grad(x, sd).value,
            Innovation::SkewNormal { omega, alpha } => {
                LN_2 - omega.ln() + ln_std_normal_pdf(x / omega) + log_ndtr(alpha * x / omega)
            }
            Innovation::SkewT { omega, alpha, nu } => {
                let z = x / omega;
                let w = alpha * z * ((nu + 1.0) / (nu + z * z)).sqrt();
                LN_2 - omega.ln()
                    + ln_student_t_pdf(z, nu)
                    + ln_student_t_cdf(w, Dual::constant(nu + 1.0)).v
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Innovation::Normal { sd } => {
                let u: f64 = StandardNormal.sample(rng);
                sd * u
            }
            Innovation::SkewNormal { omega, alpha } => omega * std_sn_draw(delta(alpha), rng),
            Innovation::SkewT { omega, alpha, nu } => {
                let z0 = std_sn_draw(delta(alpha), rng);
                let v: f64 = ChiSquared::new(nu).expect("nu positive").sample(rng);
                omega * z0 / (v / nu).sqrt()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Innovation::Normal { .. } => 0.0,
            Innovation::SkewNormal { omega, alpha } => omega * FRAC_2_PI.sqrt() * delta(alpha),
            Innovation::SkewT { omega, alpha, nu } => {
                omega * st_mean_offset(alpha, nu).unwrap_or(f64::NAN)
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Innovation::Normal { sd } => sd * sd,
            Innovation::SkewNormal { omega, alpha } => {
                sn_var(&SkewNormalParams { xi: 0.0, omega, alpha })
            }
            Innovation::SkewT { omega, alpha, nu } => {
                st_var(&SkewTParams { xi: 0.0, omega, alpha, nu }).unwrap_or(f64::INFINITY)
            }
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            Innovation::Normal { sd } => sd,
            Innovation::SkewNormal { omega, .. } | Innovation::SkewT { omega, .. } => omega,
        }
    }

    /// CDF by adaptive quadrature of the density from `-∞`.
    pub fn cdf(&self, x: f64) -> f64 {
        if let Innovation::Normal { sd } = *self {
            return special::std_normal_cdf(x / sd);
        }
        // integrate the shorter side; densities here are right-skewed more often than not
        let f = |s: f64| self.pdf(s);
        let c = if x <= 0.0 {
            quad::integrate_lower_tail(f, x, CDF_TOL)
        } else {
            1.0 - quad::integrate_upper_tail(f, x, CDF_TOL)
        };
        c.clamp(0.0, 1.0)
    }

    /// CDF at each of the (ascending) points, accumulating panel integrals
    /// between neighbours instead of integrating from `-∞` every time.
    pub fn cdf_sorted(&self, xs: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(xs.len());
        if xs.is_empty() {
            return out;
        }
        if let Innovation::Normal { .. } = self {
            return xs.iter().map(|&x| self.cdf(x)).collect();
        }
        let mut acc = self.cdf(xs[0]);
        out.push(acc);
        for w in xs.windows(2) {
            debug_assert!(w[0] <= w[1]);
            acc += quad::integrate(|s| self.pdf(s), w[0], w[1], CDF_TOL);
            out.push(acc.clamp(0.0, 1.0));
        }
        out
    }

    /// Quantile by bracketing and bisection on the quadrature CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
        let s = self.scale();
        let mut lo = -s;
        let mut hi = s;
        while self.cdf(lo) > p {
            lo *= 2.0;
        }
        while self.cdf(hi) < p {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * s.max(mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}
