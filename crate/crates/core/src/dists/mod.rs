//! Service-time laws and the survival/hazard calculus built on them.
//!
//! Every law is represented by its survival function `S = 1 - G`, density
//! `g`, hazard `h = g / S` and cumulative hazard `-ln S`. Constructors from a
//! [`DistSpec`] rescale so the mean is one unless normalization is switched
//! off.

mod arrival;
mod holder;
mod operators;
pub mod quad;
mod renewal;

pub use arrival::{ArrivalSpec, RateFn};
pub use holder::{holder_check, HolderReport};
pub use operators::{phi_op, psi_h, psi_op};
pub use renewal::{renewal_function, RenewalFunction};

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDistr, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma, gamma_ur, ln_gamma};
use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("unsupported family `{0}`")]
    Unsupported(String),
    #[error("invalid parameter for {family}: {msg}")]
    InvalidParameter { family: &'static str, msg: String },
    #[error("{0} has infinite or zero mean")]
    DegenerateMean(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("renewal recursion diverged at step {0}")]
    Divergence(usize),
}

type Result<T> = std::result::Result<T, DistError>;

/// One branch of a hyper-Erlang mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErlangBranch {
    pub prob: f64,
    pub phases: u32,
    pub rate: f64,
}

/// Named-parameter description of a service law, as found in config files.
///
/// Scale-type parameters are optional: with `normalize = true` (the default)
/// they are overwritten so the mean is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    Exponential {
        #[serde(default)]
        rate: Option<f64>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    Lognormal {
        sigma: f64,
        #[serde(default)]
        mu: Option<f64>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    Weibull {
        shape: f64,
        #[serde(default)]
        scale: Option<f64>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    Gamma {
        shape: f64,
        #[serde(default)]
        rate: Option<f64>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    Pareto {
        shape: f64,
        #[serde(default)]
        scale: Option<f64>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    /// Logistic law conditioned on `[0, ∞)`; `ratio` is location / scale.
    Logistic {
        ratio: f64,
        #[serde(default)]
        scale: Option<f64>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    /// Mixture of Erlang laws (a phase-type subclass).
    HyperErlang {
        branches: Vec<ErlangBranch>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    /// Hazard constant on `[knots[i], knots[i+1])`, last piece extends to ∞.
    PiecewiseHazard {
        knots: Vec<f64>,
        rates: Vec<f64>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    Uniform {
        #[serde(default)]
        width: Option<f64>,
        #[serde(default = "yes")]
        normalize: bool,
    },
}

fn yes() -> bool {
    true
}

impl DistSpec {
    pub fn exponential() -> Self {
        DistSpec::Exponential { rate: None, normalize: true }
    }
    pub fn lognormal(sigma: f64) -> Self {
        DistSpec::Lognormal { sigma, mu: None, normalize: true }
    }
    pub fn gamma(shape: f64) -> Self {
        DistSpec::Gamma { shape, rate: None, normalize: true }
    }
    pub fn weibull(shape: f64) -> Self {
        DistSpec::Weibull { shape, scale: None, normalize: true }
    }
    pub fn pareto(shape: f64) -> Self {
        DistSpec::Pareto { shape, scale: None, normalize: true }
    }
    pub fn uniform() -> Self {
        DistSpec::Uniform { width: None, normalize: true }
    }
}

#[derive(Clone, Debug)]
enum Law {
    Exponential { rate: f64 },
    Lognormal { mu: f64, sigma: f64 },
    Weibull { shape: f64, scale: f64 },
    Gamma { shape: f64, rate: f64, ln_norm: f64 },
    Pareto { shape: f64, scale: f64 },
    Logistic { loc: f64, scale: f64, sf0: f64 },
    HyperErlang { branches: Vec<ErlangBranch> },
    PiecewiseHazard { knots: Vec<f64>, rates: Vec<f64>, cum: Vec<f64> },
    Uniform { width: f64 },
}

/// Tabulated integrated survival, used to sample stationary ages.
#[derive(Clone, Debug)]
struct AgeTable {
    x: Vec<f64>,
    cum: Vec<f64>,
}

/// A service-time law with mean-one normalization and hazard calculus.
///
/// Immutable after construction; the stationary-age table is built lazily
/// and shared.
#[derive(Clone, Debug)]
pub struct ServiceDistribution {
    name: String,
    law: Law,
    mean: f64,
    age_table: OnceLock<AgeTable>,
}

fn bad(family: &'static str, msg: impl Into<String>) -> DistError {
    DistError::InvalidParameter { family, msg: msg.into() }
}

fn positive(family: &'static str, what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(family, format!("{what} must be positive and finite, got {v}")))
    }
}

/// `ln(1 + e^r)` without overflow.
fn softplus(r: f64) -> f64 {
    if r > 30.0 {
        r + (-r).exp()
    } else {
        r.exp().ln_1p()
    }
}

pub fn make_service_dist(spec: &DistSpec) -> Result<ServiceDistribution> {
    ServiceDistribution::from_spec(spec)
}

impl ServiceDistribution {
    pub fn from_spec(spec: &DistSpec) -> Result<Self> {
        let (name, law) = match spec {
            DistSpec::Exponential { rate, normalize } => {
                let rate = if *normalize { 1.0 } else { rate.unwrap_or(1.0) };
                positive("exponential", "rate", rate)?;
                ("exponential".to_string(), Law::Exponential { rate })
            }
            DistSpec::Lognormal { sigma, mu, normalize } => {
                positive("lognormal", "sigma", *sigma)?;
                let mu = if *normalize {
                    -0.5 * sigma * sigma
                } else {
                    mu.ok_or_else(|| bad("lognormal", "mu required when normalize = false"))?
                };
                if !mu.is_finite() {
                    return Err(bad("lognormal", "mu must be finite"));
                }
                (format!("lognormal(sigma={sigma})"), Law::Lognormal { mu, sigma: *sigma })
            }
            DistSpec::Weibull { shape, scale, normalize } => {
                positive("weibull", "shape", *shape)?;
                let scale = if *normalize { 1.0 / gamma(1.0 + 1.0 / shape) } else { scale.unwrap_or(1.0) };
                positive("weibull", "scale", scale)?;
                (format!("weibull(k={shape})"), Law::Weibull { shape: *shape, scale })
            }
            DistSpec::Gamma { shape, rate, normalize } => {
                positive("gamma", "shape", *shape)?;
                let rate = if *normalize { *shape } else { rate.unwrap_or(1.0) };
                positive("gamma", "rate", rate)?;
                let ln_norm = shape * rate.ln() - ln_gamma(*shape);
                (format!("gamma(a={shape})"), Law::Gamma { shape: *shape, rate, ln_norm })
            }
            DistSpec::Pareto { shape, scale, normalize } => {
                positive("pareto", "shape", *shape)?;
                if *shape <= 1.0 {
                    return Err(DistError::DegenerateMean("pareto"));
                }
                let scale = if *normalize { (shape - 1.0) / shape } else { scale.unwrap_or(1.0) };
                positive("pareto", "scale", scale)?;
                (format!("pareto(a={shape})"), Law::Pareto { shape: *shape, scale })
            }
            DistSpec::Logistic { ratio, scale, normalize } => {
                if !ratio.is_finite() {
                    return Err(bad("logistic", "ratio must be finite"));
                }
                let unit_mean = softplus(*ratio) * (1.0 + (-ratio).exp());
                let scale = if *normalize { 1.0 / unit_mean } else { scale.unwrap_or(1.0) };
                positive("logistic", "scale", scale)?;
                let sf0 = 1.0 / (1.0 + (-ratio).exp());
                (format!("logistic(ratio={ratio})"), Law::Logistic { loc: ratio * scale, scale, sf0 })
            }
            DistSpec::HyperErlang { branches, normalize } => {
                if branches.is_empty() {
                    return Err(bad("hyper_erlang", "no branches"));
                }
                let total: f64 = branches.iter().map(|b| b.prob).sum();
                if branches.iter().any(|b| !(b.prob >= 0.0) || b.phases == 0) || (total - 1.0).abs() > 1e-9 {
                    return Err(bad("hyper_erlang", "probabilities must be >= 0 and sum to 1; phases >= 1"));
                }
                for b in branches {
                    positive("hyper_erlang", "rate", b.rate)?;
                }
                let mean: f64 = branches.iter().map(|b| b.prob * b.phases as f64 / b.rate).sum();
                let k = if *normalize { mean } else { 1.0 };
                let branches = branches
                    .iter()
                    .map(|b| ErlangBranch { prob: b.prob / total, phases: b.phases, rate: b.rate * k })
                    .collect();
                ("hyper_erlang".to_string(), Law::HyperErlang { branches })
            }
            DistSpec::PiecewiseHazard { knots, rates, normalize } => {
                if knots.is_empty() || knots[0] != 0.0 || knots.len() != rates.len() {
                    return Err(bad("piecewise_hazard", "knots must start at 0 and match rates in length"));
                }
                if knots.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(bad("piecewise_hazard", "knots must be strictly increasing"));
                }
                if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                    return Err(bad("piecewise_hazard", "rates must be finite and >= 0"));
                }
                if *rates.last().unwrap() <= 0.0 {
                    return Err(DistError::DegenerateMean("piecewise_hazard"));
                }
                let (mut knots, mut rates) = (knots.clone(), rates.clone());
                if *normalize {
                    let m = piecewise_mean(&knots, &rates);
                    knots.iter_mut().for_each(|k| *k /= m);
                    rates.iter_mut().for_each(|r| *r *= m);
                }
                let cum = piecewise_cum(&knots, &rates);
                ("piecewise_hazard".to_string(), Law::PiecewiseHazard { knots, rates, cum })
            }
            DistSpec::Uniform { width, normalize } => {
                let width = if *normalize { 2.0 } else { width.unwrap_or(2.0) };
                positive("uniform", "width", width)?;
                (format!("uniform(0,{width})"), Law::Uniform { width })
            }
        };
        let mean = law_mean(&law);
        if !(mean.is_finite() && mean > 0.0) {
            return Err(DistError::DegenerateMean("service law"));
        }
        Ok(ServiceDistribution { name, law, mean, age_table: OnceLock::new() })
    }

    pub fn exponential() -> Self {
        Self::from_spec(&DistSpec::exponential()).expect("valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Analytic mean (1 for normalized laws).
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Right end of the support; `∞` unless the law is bounded.
    pub fn support_end(&self) -> f64 {
        match &self.law {
            Law::Uniform { width } => *width,
            _ => f64::INFINITY,
        }
    }

    /// Ages where the density jumps; quadrature should split there.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.law {
            Law::Pareto { scale, .. } => vec![*scale],
            Law::PiecewiseHazard { knots, .. } => knots[1..].to_vec(),
            Law::Uniform { width } => vec![*width],
            _ => Vec::new(),
        }
    }

    /// Hazard is bounded on the whole support.
    pub fn has_bounded_hazard(&self) -> bool {
        match &self.law {
            Law::Exponential { .. } | Law::Logistic { .. } | Law::PiecewiseHazard { .. } => true,
            Law::Gamma { shape, .. } => *shape >= 1.0,
            Law::Weibull { shape, .. } => *shape == 1.0,
            Law::HyperErlang { .. } => true,
            // lognormal hazard is bounded but vanishes at 0 and ∞
            Law::Lognormal { .. } => true,
            Law::Pareto { .. } => true,
            Law::Uniform { .. } => false,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.sf(x)
    }

    /// Survival function `1 - G(x)`, computed directly for tail accuracy.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        match &self.law {
            Law::Exponential { rate } => (-rate * x).exp(),
            Law::Lognormal { mu, sigma } => 0.5 * erfc((x.ln() - mu) / (sigma * SQRT_2)),
            Law::Weibull { shape, scale } => (-(x / scale).powf(*shape)).exp(),
            Law::Gamma { shape, rate, .. } => gamma_ur(*shape, rate * x),
            Law::Pareto { shape, scale } => {
                if x <= *scale {
                    1.0
                } else {
                    (scale / x).powf(*shape)
                }
            }
            Law::Logistic { loc, scale, sf0 } => {
                let z = (x - loc) / scale;
                logistic_upper(z) / sf0
            }
            Law::HyperErlang { branches } => branches.iter().map(|b| b.prob * erlang_sf(b.phases, b.rate * x)).sum(),
            Law::PiecewiseHazard { .. } => (-self.cum_hazard(x)).exp(),
            Law::Uniform { width } => (1.0 - x / width).max(0.0),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match &self.law {
            Law::Exponential { rate } => rate * (-rate * x).exp(),
            Law::Lognormal { mu, sigma } => {
                if x == 0.0 {
                    return 0.0;
                }
                let z = (x.ln() - mu) / sigma;
                (-0.5 * z * z).exp() / (x * sigma * (2.0 * PI).sqrt())
            }
            Law::Weibull { shape, scale } => {
                let u = x / scale;
                shape / scale * u.powf(shape - 1.0) * (-u.powf(*shape)).exp()
            }
            Law::Gamma { shape, rate, ln_norm } => {
                if x == 0.0 {
                    return if *shape < 1.0 {
                        f64::INFINITY
                    } else if *shape == 1.0 {
                        *rate
                    } else {
                        0.0
                    };
                }
                (ln_norm + (shape - 1.0) * x.ln() - rate * x).exp()
            }
            Law::Pareto { shape, scale } => {
                if x < *scale {
                    0.0
                } else {
                    shape / x * (scale / x).powf(*shape)
                }
            }
            Law::Logistic { loc, scale, sf0 } => {
                let z = (x - loc) / scale;
                logistic_upper(z) * logistic_upper(-z) / (scale * sf0)
            }
            Law::HyperErlang { branches } => {
                branches.iter().map(|b| b.prob * erlang_density(b.phases, b.rate, x)).sum()
            }
            Law::PiecewiseHazard { .. } => self.hazard(x) * self.sf(x),
            Law::Uniform { width } => {
                if x < *width {
                    1.0 / width
                } else {
                    0.0
                }
            }
        }
    }

    /// Hazard rate `g / (1 - G)`. Infinite at and beyond the support end.
    pub fn hazard(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match &self.law {
            Law::Exponential { rate } => *rate,
            Law::Weibull { shape, scale } => shape / scale * (x / scale).powf(shape - 1.0),
            Law::Pareto { shape, scale } => {
                if x < *scale {
                    0.0
                } else {
                    shape / x
                }
            }
            Law::Logistic { loc, scale, .. } => logistic_upper(-(x - loc) / scale) / scale,
            Law::PiecewiseHazard { knots, rates, .. } => rates[segment(knots, x)],
            Law::Uniform { width } => {
                if x < *width {
                    1.0 / (width - x)
                } else {
                    f64::INFINITY
                }
            }
            Law::Lognormal { mu, sigma } => {
                if x == 0.0 {
                    return 0.0;
                }
                // Mills ratio form; stays accurate when both g and S underflow.
                let z = (x.ln() - mu) / sigma;
                let s = 0.5 * erfc(z / SQRT_2);
                if s > 1e-300 {
                    self.density(x) / s
                } else {
                    z / (x * sigma)
                }
            }
            Law::Gamma { .. } | Law::HyperErlang { .. } => {
                let s = self.sf(x);
                if s > 0.0 {
                    self.density(x) / s
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Cumulative hazard `-ln(1 - G(x))`.
    pub fn cum_hazard(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match &self.law {
            Law::Exponential { rate } => rate * x,
            Law::Weibull { shape, scale } => (x / scale).powf(*shape),
            Law::Pareto { shape, scale } => {
                if x <= *scale {
                    0.0
                } else {
                    shape * (x / scale).ln()
                }
            }
            Law::PiecewiseHazard { knots, rates, cum } => {
                let i = segment(knots, x);
                cum[i] + rates[i] * (x - knots[i])
            }
            Law::Uniform { width } => {
                if x >= *width {
                    f64::INFINITY
                } else {
                    -(-x / width).ln_1p()
                }
            }
            _ => -self.sf(x).ln(),
        }
    }

    /// Survival ratio `S(x + t) / S(x)`, zero where `S(x) = 0`.
    pub fn survival_ratio(&self, x: f64, t: f64) -> f64 {
        let sx = self.sf(x);
        if sx <= 0.0 {
            return 0.0;
        }
        match &self.law {
            Law::Exponential { rate } => (-rate * t).exp(),
            Law::Weibull { .. } | Law::Pareto { .. } | Law::PiecewiseHazard { .. } => {
                (self.cum_hazard(x) - self.cum_hazard(x + t)).exp()
            }
            _ => self.sf(x + t) / sx,
        }
    }

    /// Inverse of the cumulative hazard: smallest `x` with `-ln S(x) >= target`.
    pub fn inv_cum_hazard(&self, target: f64) -> f64 {
        if target <= 0.0 {
            return 0.0;
        }
        match &self.law {
            Law::Exponential { rate } => target / rate,
            Law::Weibull { shape, scale } => scale * target.powf(1.0 / shape),
            Law::Pareto { shape, scale } => scale * (target / shape).exp(),
            Law::Uniform { width } => width * -(-target).exp_m1(),
            Law::PiecewiseHazard { knots, rates, cum } => {
                let i = cum.partition_point(|&c| c <= target).saturating_sub(1);
                knots[i] + (target - cum[i]) / rates[i]
            }
            Law::Lognormal { mu, sigma } => {
                let p = (-target).exp();
                if p > 0.0 {
                    (mu + sigma * SQRT_2 * erfc_inv(2.0 * p)).exp()
                } else {
                    self.invert_numeric(target)
                }
            }
            Law::Logistic { loc, scale, sf0 } => {
                // S(x) = upper(z) / sf0 = e^{-target}  =>  z = ln(1/q - 1)
                let q = sf0 * (-target).exp();
                loc + scale * ((1.0 - q) / q).ln()
            }
            Law::Gamma { .. } | Law::HyperErlang { .. } => self.invert_numeric(target),
        }
    }

    fn invert_numeric(&self, target: f64) -> f64 {
        let mut lo = 0.0;
        let mut hi = self.mean.max(1.0);
        while self.cum_hazard(hi) < target {
            lo = hi;
            hi *= 2.0;
            if hi > 1e300 {
                return hi;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cum_hazard(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Draws one service requirement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.law {
            Law::Lognormal { mu, sigma } => LogNormal::new(*mu, *sigma).unwrap().sample(rng),
            Law::Gamma { shape, rate, .. } => GammaDistr::new(*shape, 1.0 / rate).unwrap().sample(rng),
            Law::HyperErlang { branches } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = &branches[branches.len() - 1];
                for b in branches {
                    acc += b.prob;
                    if u < acc {
                        pick = b;
                        break;
                    }
                }
                GammaDistr::new(pick.phases as f64, 1.0 / pick.rate).unwrap().sample(rng)
            }
            _ => self.inv_cum_hazard(exp1(rng)),
        }
    }

    /// Draws a total service requirement conditioned to exceed `age`.
    pub fn sample_given_age<R: Rng + ?Sized>(&self, rng: &mut R, age: f64) -> f64 {
        if age <= 0.0 {
            return self.sample(rng);
        }
        if let Law::Exponential { rate } = &self.law {
            return age + exp1(rng) / rate;
        }
        let v = self.inv_cum_hazard(self.cum_hazard(age) + exp1(rng));
        // rounding in the inversion must not produce a requirement below the age
        if v > age {
            v
        } else {
            age + f64::EPSILON * age.max(1.0)
        }
    }

    /// Draws an age from the stationary age law with density `S(x) / mean`.
    pub fn sample_stationary_age<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let table = self.age_table.get_or_init(|| self.build_age_table());
        let total = *table.cum.last().unwrap();
        let u: f64 = rng.random::<f64>() * total;
        let j = table.cum.partition_point(|&c| c < u).clamp(1, table.cum.len() - 1);
        let (c0, c1) = (table.cum[j - 1], table.cum[j]);
        let (x0, x1) = (table.x[j - 1], table.x[j]);
        let x = if c1 > c0 { x0 + (x1 - x0) * (u - c0) / (c1 - c0) } else { x0 };
        x.min(self.support_end() * (1.0 - 1e-12))
    }

    fn build_age_table(&self) -> AgeTable {
        let (gl_x, gl_w) = quad::gauss_legendre(6);
        let end = self.support_end();
        let mut x = vec![0.0];
        let mut cum = vec![0.0];
        let mut a: f64 = 0.0;
        loop {
            let step = if a < 20.0 { 0.005 } else { 0.01 * a };
            let b = (a + step).min(end);
            let half = 0.5 * (b - a);
            let mid = a + half;
            let piece: f64 = gl_x.iter().zip(&gl_w).map(|(t, w)| w * half * self.sf(mid + half * t)).sum();
            x.push(b);
            cum.push(cum.last().unwrap() + piece);
            a = b;
            if a >= end || self.sf(a) * a.max(1.0) < 1e-13 || a > 1e12 {
                break;
            }
        }
        AgeTable { x, cum }
    }
}

/// Standard exponential draw.
fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::Exp1.sample(rng)
}

/// `1 / (1 + e^z)`, the logistic upper tail at standardized point `z`.
fn logistic_upper(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

fn erlang_sf(k: u32, y: f64) -> f64 {
    if k == 1 {
        return (-y).exp();
    }
    gamma_ur(k as f64, y)
}

fn erlang_density(k: u32, rate: f64, x: f64) -> f64 {
    if k == 1 {
        return rate * (-rate * x).exp();
    }
    if x == 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    (kf * rate.ln() + (kf - 1.0) * x.ln() - rate * x - ln_gamma(kf)).exp()
}

fn segment(knots: &[f64], x: f64) -> usize {
    knots.partition_point(|&k| k <= x).saturating_sub(1)
}

fn piecewise_cum(knots: &[f64], rates: &[f64]) -> Vec<f64> {
    let mut cum = vec![0.0; knots.len()];
    for i in 1..knots.len() {
        cum[i] = cum[i - 1] + rates[i - 1] * (knots[i] - knots[i - 1]);
    }
    cum
}

fn piecewise_mean(knots: &[f64], rates: &[f64]) -> f64 {
    let cum = piecewise_cum(knots, rates);
    let mut m = 0.0;
    for i in 0..knots.len() {
        let s0 = (-cum[i]).exp();
        if i + 1 < knots.len() {
            let len = knots[i + 1] - knots[i];
            m += if rates[i] > 0.0 { s0 * -(-rates[i] * len).exp_m1() / rates[i] } else { s0 * len };
        } else {
            m += s0 / rates[i];
        }
    }
    m
}

fn law_mean(law: &Law) -> f64 {
    match law {
        Law::Exponential { rate } => 1.0 / rate,
        Law::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        Law::Weibull { shape, scale } => scale * gamma(1.0 + 1.0 / shape),
        Law::Gamma { shape, rate, .. } => shape / rate,
        Law::Pareto { shape, scale } => shape * scale / (shape - 1.0),
        Law::Logistic { loc, scale, .. } => {
            let r = loc / scale;
            scale * softplus(r) * (1.0 + (-r).exp())
        }
        Law::HyperErlang { branches } => branches.iter().map(|b| b.prob * b.phases as f64 / b.rate).sum(),
        Law::PiecewiseHazard { knots, rates, .. } => piecewise_mean(knots, rates),
        Law::Uniform { width } => 0.5 * width,
    }
}

/// Draws a standard normal (re-exported helper for other modules).
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// The specs of every built-in family at representative parameters.
pub fn builtin_specs() -> Vec<DistSpec> {
    vec![
        DistSpec::exponential(),
        DistSpec::lognormal(0.5),
        DistSpec::lognormal(1.0),
        DistSpec::weibull(0.7),
        DistSpec::weibull(2.0),
        DistSpec::gamma(2.0),
        DistSpec::gamma(0.5),
        DistSpec::pareto(2.5),
        DistSpec::Logistic { ratio: 2.0, scale: None, normalize: true },
        DistSpec::HyperErlang {
            branches: vec![
                ErlangBranch { prob: 0.3, phases: 1, rate: 1.0 },
                ErlangBranch { prob: 0.7, phases: 3, rate: 2.0 },
            ],
            normalize: true,
        },
        DistSpec::PiecewiseHazard { knots: vec![0.0, 0.5, 2.0], rates: vec![0.5, 2.0, 1.0], normalize: true },
        DistSpec::uniform(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all() -> Vec<ServiceDistribution> {
        builtin_specs().iter().map(|s| ServiceDistribution::from_spec(s).unwrap()).collect()
    }

    #[test]
    fn exponential_is_memoryless() {
        let d = ServiceDistribution::exponential();
        for &x in &[0.0, 0.3, 2.0, 7.5] {
            assert!((d.cdf(x) - (1.0 - (-x).exp())).abs() < 1e-15);
            assert_eq!(d.hazard(x), 1.0);
        }
    }

    #[test]
    fn mean_is_one_by_quadrature() {
        for d in all() {
            let mut cuts = vec![0.0];
            cuts.extend(d.breakpoints());
            cuts.push(d.support_end().min(50.0));
            cuts.dedup();
            let m = cuts.windows(2).map(|w| quad::integrate(|x| d.sf(x), w[0], w[1], 1e-12)).sum::<f64>()
                + if d.support_end().is_finite() { 0.0 } else { quad::integrate_half_line(|x| d.sf(x), 50.0, 1e-12) };
            assert!((m - 1.0).abs() < 1e-6, "{}: {m}", d.name());
            assert!((d.mean() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hazard_identity_on_grid() {
        for d in all() {
            for i in 0..400 {
                let x = 0.013 + i as f64 * 0.0251;
                let s = d.sf(x);
                if s <= 0.0 {
                    continue;
                }
                let lhs = d.hazard(x) * s;
                let g = d.density(x);
                assert!((lhs - g).abs() <= 1e-10 * g.max(1.0), "{} at {x}: {lhs} vs {g}", d.name());
            }
        }
    }

    #[test]
    fn cdf_monotone_and_starts_at_zero() {
        for d in all() {
            assert_eq!(d.cdf(0.0), 0.0);
            let mut prev = 0.0;
            for i in 0..2000 {
                let c = d.cdf(i as f64 * 0.005);
                assert!(c >= prev - 1e-15, "{}", d.name());
                assert!(d.density(i as f64 * 0.005) >= 0.0);
                prev = c;
            }
        }
    }

    #[test]
    fn cum_hazard_inverts() {
        for d in all() {
            for &t in &[0.01, 0.3, 1.0, 4.0, 20.0] {
                let x = d.inv_cum_hazard(t);
                if x >= d.support_end() {
                    continue;
                }
                assert!((d.cum_hazard(x) - t).abs() < 1e-7 * t.max(1.0), "{}: {t} -> {x}", d.name());
            }
        }
    }

    #[test]
    fn lognormal_hazard_bounded_beyond_start() {
        // Grid max of g/S on a refined grid, compared with the coarser grid.
        let d = make_service_dist(&DistSpec::lognormal(0.5)).unwrap();
        let sup = |n: usize| (0..n).map(|i| d.hazard(0.1 + 30.0 * i as f64 / n as f64)).fold(0.0, f64::max);
        let (coarse, fine) = (sup(3000), sup(30000));
        assert!(fine.is_finite() && fine < 100.0);
        assert!((fine - coarse).abs() < 1e-2 * fine);
    }

    #[test]
    fn sampler_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in all() {
            let n = 200_000;
            let m: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
            // Pareto(2.5) has finite variance; 5e-2 covers every family comfortably
            assert!((m - 1.0).abs() < 5e-2, "{}: {m}", d.name());
        }
    }

    #[test]
    fn conditional_sampler_exceeds_age() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in all() {
            for &a in &[0.2, 1.0, 1.9] {
                for _ in 0..200 {
                    let v = d.sample_given_age(&mut rng, a);
                    assert!(v > a && v <= d.support_end(), "{}", d.name());
                }
            }
        }
    }

    #[test]
    fn stationary_age_mean() {
        // stationary age has mean E[V^2] / 2; exponential -> 1, uniform(0,2) -> 2/3
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (d, want) in
            [(ServiceDistribution::exponential(), 1.0), (make_service_dist(&DistSpec::uniform()).unwrap(), 2.0 / 3.0)]
        {
            let n = 200_000;
            let m: f64 = (0..n).map(|_| d.sample_stationary_age(&mut rng)).sum::<f64>() / n as f64;
            assert!((m - want).abs() < 1e-2, "{}: {m}", d.name());
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(make_service_dist(&DistSpec::pareto(0.9)), Err(DistError::DegenerateMean(_))));
        assert!(make_service_dist(&DistSpec::lognormal(-1.0)).is_err());
        let json = r#"{"family":"cauchy"}"#;
        assert!(serde_json::from_str::<DistSpec>(json).is_err());
    }
}
