use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Innovation law of the travel-time model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Gaussian errors with variance linear in distance; no cross-train term.
    Baseline,
    #[serde(rename = "sn")]
    SkewNormal,
    #[serde(rename = "st")]
    SkewT,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Baseline => "baseline",
            Family::SkewNormal => "sn",
            Family::SkewT => "st",
        }
    }

    pub fn has_dependence(self) -> bool {
        !matches!(self, Family::Baseline)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Family::Baseline),
            "sn" => Ok(Family::SkewNormal),
            "st" => Ok(Family::SkewT),
            other => Err(Error::InvalidConfig(format!("unknown family {other:?}"))),
        }
    }
}

/// Prior hyperparameters. Defaults are the weakly informative choices the
/// model was designed with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub t0_sd: f64,
    pub theta_sd: f64,
    /// Standard deviation; variance 5.
    pub gamma_sd: f64,
    pub omega_mean: f64,
    pub omega_sd: f64,
    pub alpha_sd: f64,
    pub rho_raw_sd: f64,
    /// Half-normal scale on the decay rate.
    pub lambda_sd: f64,
    pub nu_shape: f64,
    pub nu_rate: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            t0_sd: 1.0,
            theta_sd: 1.0,
            gamma_sd: 5f64.sqrt(),
            omega_mean: 1.0,
            omega_sd: 1.0,
            alpha_sd: 1.0,
            rho_raw_sd: 1.0,
            lambda_sd: 1.0,
            nu_shape: 2.0,
            nu_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    /// Number of stations on the line.
    pub stations: usize,
    /// Largest look-ahead distance for formation effects.
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    /// Smallest look-ahead distance that carries a formation effect.
    #[serde(default = "default_min_lag")]
    pub min_lag: usize,
    /// Distances above this are clamped in the scale and skewness forms.
    #[serde(default)]
    pub distance_cap: Option<usize>,
    #[serde(default)]
    pub priors: Priors,
}

fn default_max_lag() -> usize {
    5
}

fn default_min_lag() -> usize {
    1
}

impl ModelConfig {
    pub fn new(family: Family, stations: usize, max_lag: usize) -> Self {
        ModelConfig { family, stations, max_lag, min_lag: 1, distance_cap: None, priors: Priors::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stations < 3 {
            return Err(Error::InvalidConfig(format!("need at least 3 stations, got {}", self.stations)));
        }
        if self.min_lag == 0 || self.min_lag > self.max_lag.max(1) {
            return Err(Error::InvalidConfig(format!(
                "formation lags {}..={} are not a valid range",
                self.min_lag, self.max_lag
            )));
        }
        if self.distance_cap == Some(0) {
            return Err(Error::InvalidConfig("distance cap must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout { family: self.family, stations: self.stations, max_lag: self.max_lag }
    }
}

/// Parameter values on their natural (constrained) scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub t0: f64,
    /// Headway effects for stations `2..=J-1`, index `m - 2`.
    pub theta: Vec<f64>,
    /// Formation effects, index `(l - 1) * J + (j - 1)`.
    pub gamma: Vec<f64>,
    pub omega0: f64,
    pub omega1: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub rho: f64,
    pub lambda: f64,
    pub nu: Option<f64>,
}

impl ParameterVector {
    /// All-zero mean effects with the given distributional parameters.
    pub fn zeros(layout: &ParamLayout) -> Self {
        ParameterVector {
            t0: 0.0,
            theta: vec![0.0; layout.n_theta()],
            gamma: vec![0.0; layout.n_gamma()],
            omega0: 1.0,
            omega1: 1.0,
            alpha0: 0.0,
            alpha1: 0.0,
            rho: 0.0,
            lambda: 1.0,
            nu: (layout.family == Family::SkewT).then_some(5.0),
        }
    }

    pub fn theta_at(&self, station: usize) -> f64 {
        self.theta[station - 2]
    }

    pub fn gamma_at(&self, stations: usize, lag: usize, origin: usize) -> f64 {
        self.gamma[(lag - 1) * stations + (origin - 1)]
    }

    /// Squared scale at distance `d`.
    pub fn scale_sq(&self, d: f64) -> f64 {
        self.omega0 + self.omega1 * d
    }

    pub fn skewness(&self, d: f64) -> f64 {
        self.alpha0 + self.alpha1 * d
    }

    /// Cross-train coefficient at the given overlap ratio.
    pub fn dependence(&self, overlap: f64) -> f64 {
        self.rho * (1.0 - (-self.lambda * overlap).exp())
    }
}

/// Positions of every parameter in the flat unconstrained vector the
/// sampler works on.
///
/// Order: `t0`, `theta[2..J-1]`, `gamma[1..D, 1..J]`, `log omega0`,
/// `log omega1`, then for the skew families `alpha0`, `alpha1`, `rho_raw`,
/// `log lambda`, and `nu_raw` for the skew-t.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub family: Family,
    pub stations: usize,
    pub max_lag: usize,
}

impl ParamLayout {
    pub const T0: usize = 0;

    pub fn n_theta(&self) -> usize {
        self.stations - 2
    }

    pub fn n_gamma(&self) -> usize {
        self.max_lag * self.stations
    }

    pub fn theta(&self, station: usize) -> usize {
        debug_assert!((2..self.stations).contains(&station));
        1 + station - 2
    }

    pub fn gamma(&self, lag: usize, origin: usize) -> usize {
        debug_assert!(lag >= 1 && lag <= self.max_lag && origin >= 1 && origin <= self.stations);
        1 + self.n_theta() + (lag - 1) * self.stations + (origin - 1)
    }

    pub fn log_omega0(&self) -> usize {
        1 + self.n_theta() + self.n_gamma()
    }

    pub fn log_omega1(&self) -> usize {
        self.log_omega0() + 1
    }

    pub fn alpha0(&self) -> Option<usize> {
        self.family.has_dependence().then(|| self.log_omega0() + 2)
    }

    pub fn alpha1(&self) -> Option<usize> {
        self.alpha0().map(|i| i + 1)
    }

    pub fn rho_raw(&self) -> Option<usize> {
        self.alpha0().map(|i| i + 2)
    }

    pub fn log_lambda(&self) -> Option<usize> {
        self.alpha0().map(|i| i + 3)
    }

    pub fn nu_raw(&self) -> Option<usize> {
        (self.family == Family::SkewT).then(|| self.log_omega0() + 6)
    }

    pub fn dim(&self) -> usize {
        self.log_omega0()
            + match self.family {
                Family::Baseline => 2,
                Family::SkewNormal => 6,
                Family::SkewT => 7,
            }
    }

    /// Names of the constrained parameters, in layout order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim());
        out.push("t0".to_string());
        out.extend((2..self.stations).map(|m| format!("theta[{m}]")));
        for l in 1..=self.max_lag {
            out.extend((1..=self.stations).map(|j| format!("gamma[{l},{j}]")));
        }
        out.push("omega0".into());
        out.push("omega1".into());
        if self.family.has_dependence() {
            out.extend(["alpha0", "alpha1", "rho", "lambda"].map(String::from));
        }
        if self.family == Family::SkewT {
            out.push("nu".into());
        }
        out
    }

    pub fn constrain(&self, x: &[f64]) -> ParameterVector {
        assert_eq!(x.len(), self.dim(), "parameter vector has wrong length");
        let g0 = 1 + self.n_theta();
        let at = |i: Option<usize>, f: fn(f64) -> f64, default: f64| i.map_or(default, |i| f(x[i]));
        ParameterVector {
            t0: x[Self::T0],
            theta: x[1..g0].to_vec(),
            gamma: x[g0..g0 + self.n_gamma()].to_vec(),
            omega0: x[self.log_omega0()].exp(),
            omega1: x[self.log_omega1()].exp(),
            alpha0: at(self.alpha0(), |v| v, 0.0),
            alpha1: at(self.alpha1(), |v| v, 0.0),
            rho: at(self.rho_raw(), rho_from_raw, 0.0),
            lambda: at(self.log_lambda(), f64::exp, 1.0),
            nu: self.nu_raw().map(|i| 1.0 + x[i].exp()),
        }
    }

    pub fn unconstrain(&self, p: &ParameterVector) -> Result<Vec<f64>> {
        if p.theta.len() != self.n_theta() || p.gamma.len() != self.n_gamma() {
            return Err(Error::InvalidParameter("parameter dimensions do not match the layout".into()));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        let mut x = Vec::with_capacity(self.dim());
        x.push(p.t0);
        x.extend_from_slice(&p.theta);
        x.extend_from_slice(&p.gamma);
        x.push(positive("omega0", p.omega0)?);
        x.push(positive("omega1", p.omega1)?);
        if self.family.has_dependence() {
            if !(p.rho > -1.0 && p.rho < 1.0) {
                return Err(Error::InvalidParameter(format!("rho must lie in (-1, 1), got {}", p.rho)));
            }
            x.push(p.alpha0);
            x.push(p.alpha1);
            x.push(rho_to_raw(p.rho));
            x.push(positive("lambda", p.lambda)?);
        }
        if self.family == Family::SkewT {
            let nu = p.nu.ok_or_else(|| Error::InvalidParameter("skew-t needs nu".into()))?;
            x.push(positive("nu - 1", nu - 1.0)?);
        }
        Ok(x)
    }

    /// Constrained values in `names()` order.
    pub fn values(&self, p: &ParameterVector) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.push(p.t0);
        out.extend_from_slice(&p.theta);
        out.extend_from_slice(&p.gamma);
        out.push(p.omega0);
        out.push(p.omega1);
        if self.family.has_dependence() {
            out.extend([p.alpha0, p.alpha1, p.rho, p.lambda]);
        }
        if let Some(nu) = p.nu.filter(|_| self.family == Family::SkewT) {
            out.push(nu);
        }
        out
    }

    /// Inverse of [`ParamLayout::values`].
    pub fn from_values(&self, v: &[f64]) -> Result<ParameterVector> {
        if v.len() != self.dim() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameter values, got {}",
                self.dim(),
                v.len()
            )));
        }
        let g0 = 1 + self.n_theta();
        let o = self.log_omega0();
        let dep = self.family.has_dependence();
        Ok(ParameterVector {
            t0: v[0],
            theta: v[1..g0].to_vec(),
            gamma: v[g0..o].to_vec(),
            omega0: v[o],
            omega1: v[o + 1],
            alpha0: if dep { v[o + 2] } else { 0.0 },
            alpha1: if dep { v[o + 3] } else { 0.0 },
            rho: if dep { v[o + 4] } else { 0.0 },
            lambda: if dep { v[o + 5] } else { 1.0 },
            nu: (self.family == Family::SkewT).then(|| v[o + 6]),
        })
    }

    /// One draw from the prior, on the unconstrained scale.
    pub fn sample_prior<R: Rng + ?Sized>(&self, priors: &Priors, rng: &mut R) -> Vec<f64> {
        let normal = |sd: f64| Normal::new(0.0, sd).expect("positive prior scale");
        let mut x = vec![0.0; self.dim()];
        x[Self::T0] = normal(priors.t0_sd).sample(rng);
        for m in 2..self.stations {
            x[self.theta(m)] = normal(priors.theta_sd).sample(rng);
        }
        for l in 1..=self.max_lag {
            for j in 1..=self.stations {
                x[self.gamma(l, j)] = normal(priors.gamma_sd).sample(rng);
            }
        }
        let omega = Normal::new(priors.omega_mean, priors.omega_sd).expect("positive prior scale");
        let positive_draw = |rng: &mut R| loop {
            let v: f64 = omega.sample(rng);
            if v > 0.0 {
                break v;
            }
        };
        x[self.log_omega0()] = positive_draw(rng).ln();
        x[self.log_omega1()] = positive_draw(rng).ln();
        if let Some(i) = self.alpha0() {
            x[i] = normal(priors.alpha_sd).sample(rng);
            x[i + 1] = normal(priors.alpha_sd).sample(rng);
            x[i + 2] = normal(priors.rho_raw_sd).sample(rng);
            let lam: f64 = normal(priors.lambda_sd).sample(rng);
            x[i + 3] = lam.abs().max(1e-8).ln();
        }
        if let Some(i) = self.nu_raw() {
            let g = Gamma::new(priors.nu_shape, 1.0 / priors.nu_rate).expect("valid gamma prior");
            let nu = loop {
                let v: f64 = g.sample(rng);
                if v > 1.0 {
                    break v;
                }
            };
            x[i] = (nu - 1.0).ln();
        }
        x
    }
}

/// `2 logistic(raw) - 1`.
pub fn rho_from_raw(raw: f64) -> f64 {
    (0.5 * raw).tanh()
}

pub fn rho_to_raw(rho: f64) -> f64 {
    2.0 * rho.atanh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_dimensions_and_names_agree() {
        for family in [Family::Baseline, Family::SkewNormal, Family::SkewT] {
            let l = ParamLayout { family, stations: 6, max_lag: 3 };
            assert_eq!(l.names().len(), l.dim());
            assert_eq!(l.names()[l.gamma(2, 4)], "gamma[2,4]");
            assert_eq!(l.names()[l.theta(5)], "theta[5]");
            assert_eq!(l.names()[l.log_omega1()], "omega1");
        }
        let st = ParamLayout { family: Family::SkewT, stations: 27, max_lag: 5 };
        assert_eq!(st.dim(), 1 + 25 + 135 + 7);
        assert_eq!(st.names()[st.nu_raw().unwrap()], "nu");
    }

    #[test]
    fn logistic_rho_transform() {
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        for &r in &[-3.0, -0.2, 0.0, 1.4, 6.0] {
            assert!((rho_from_raw(r) - (2.0 * sigmoid(r) - 1.0)).abs() < 1e-15);
            assert!((rho_to_raw(rho_from_raw(r)) - r).abs() < 1e-12);
        }
    }

    #[test]
    fn constrain_round_trip() {
        let l = ParamLayout { family: Family::SkewT, stations: 5, max_lag: 2 };
        let x = l.sample_prior(&Priors::default(), &mut ChaCha8Rng::seed_from_u64(4));
        let p = l.constrain(&x);
        assert!(p.nu.unwrap() > 1.0 && p.omega0 > 0.0 && p.lambda > 0.0);
        let back = l.unconstrain(&p).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(l.from_values(&l.values(&p)).unwrap(), p);
    }

    #[test]
    fn family_parsing() {
        assert_eq!("st".parse::<Family>().unwrap(), Family::SkewT);
        assert!("gauss".parse::<Family>().is_err());
        assert_eq!(serde_json::to_string(&Family::SkewNormal).unwrap(), "\"sn\"");
    }
}
