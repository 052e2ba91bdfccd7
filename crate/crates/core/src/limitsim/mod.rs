//! Diffusion-limit objects on a time grid: the Gaussian arrival input `Ê`,
//! the white-noise departure field and its stochastic convolutions, the
//! centered many-server map, the limit age functional `ν̂`, the
//! Halfin–Whitt SDE and the stochastic age equation residual.

mod cmse;
mod field;
mod sae;

pub use cmse::{occupancy, solve_cmse, CmseSolution};
pub use field::{conv_h, conv_h_series, field_integral, simulate_field, LimitModel, MartingaleField};
pub use sae::{sae_residual, SaeTestFunction};

use crate::dists::quad::{integrate, integrate_half_line};
use crate::dists::{phi_op, ArrivalSpec, ServiceDistribution};
use crate::fluid::{Density, FluidPath, Regime};
use crate::rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum LimitError {
    #[error("invalid limit input: {0}")]
    Input(String),
    #[error("the fluid path changes regime; the limit map needs a single regime")]
    MixedRegime,
    #[error("hazard rate of {0} is unbounded")]
    UnboundedHazard(String),
}

/// Space-time grid of the limit objects. Age cells have the same width as
/// time cells, so noise transported along characteristics stays on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimitGrid {
    pub dt: f64,
    pub horizon: f64,
    pub x_max: f64,
}

/// Fraction of the total field intensity allowed beyond `x_max`.
pub const TAIL_BUDGET: f64 = 1e-6;

impl LimitGrid {
    pub fn new(dt: f64, horizon: f64, x_max: f64) -> Result<Self, LimitError> {
        if !(dt > 0.0) || !(horizon >= 0.0) || !(x_max > 0.0) {
            return Err(LimitError::Input(format!("bad grid dt={dt} T={horizon} x_max={x_max}")));
        }
        let g = LimitGrid { dt, horizon, x_max };
        if ((horizon / dt).round() * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(LimitError::Input(format!("horizon {horizon} is not a multiple of dt {dt}")));
        }
        Ok(g)
    }

    /// Picks `x_max` so that the intensity beyond it is at most
    /// [`TAIL_BUDGET`] of the total, then rounds the age cell count up to a
    /// multiple of 16 so the grid can be coarsened four times.
    pub fn for_fluid(fluid: &FluidPath, dt: f64, horizon: f64) -> Result<Self, LimitError> {
        let dist = &fluid.service;
        let probe_end = dist.support_end().min(dist.inv_cum_hazard(40.0));
        let probes = (0..=400).map(|i| probe_end * i as f64 / 400.0);
        let w_init = probes.map(|x| fluid.initial_ratio(x)).fold(0.0, f64::max);
        let w_entry = fluid.kbar.windows(2).map(|w| (w[1] - w[0]) / fluid.dt).fold(0.0, f64::max);
        let total = fluid.cumulative_hazard_load().last().copied().unwrap_or(0.0);
        let w = w_init.max(w_entry);
        let mut x_max = if total > 0.0 && w > 0.0 {
            let level = (TAIL_BUDGET * total / (horizon.max(dt) * w)).min(1.0);
            dist.inv_cum_hazard(-level.ln()).min(dist.support_end())
        } else {
            dt
        };
        if w_init == 0.0 {
            // only entries after time 0, whose ages never exceed the horizon
            x_max = x_max.min(horizon);
        }
        let blocks = ((x_max / dt) / 16.0).ceil().max(1.0);
        LimitGrid::new(dt, horizon, blocks * 16.0 * dt)
    }

    pub fn nt(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn nx(&self) -> usize {
        (self.x_max / self.dt).round() as usize
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.nt()).map(|n| n as f64 * self.dt).collect()
    }

    pub fn coarsened(&self) -> LimitGrid {
        let dt = 2.0 * self.dt;
        LimitGrid { dt, horizon: (self.nt() / 2) as f64 * dt, x_max: (self.nx() / 2) as f64 * dt }
    }
}

/// A bounded test function of age.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TestFunction({})", self.name)
    }
}

impl TestFunction {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        TestFunction { name: name.into(), f: Arc::new(f) }
    }
    pub fn one() -> Self {
        Self::new("one", |_| 1.0)
    }
    pub fn hazard(dist: Arc<ServiceDistribution>) -> Self {
        Self::new("hazard", move |x| dist.hazard(x))
    }
    pub fn survival(dist: Arc<ServiceDistribution>) -> Self {
        Self::new("survival", move |x| dist.sf(x))
    }
    pub fn exp_decay() -> Self {
        Self::new("exp_decay", |x: f64| (-x).exp())
    }

    /// Built-in functions by name: `one`, `hazard`, `survival`, `exp_decay`.
    pub fn named(name: &str, dist: &Arc<ServiceDistribution>) -> Option<Self> {
        match name {
            "one" => Some(Self::one()),
            "hazard" => Some(Self::hazard(dist.clone())),
            "survival" => Some(Self::survival(dist.clone())),
            "exp_decay" => Some(Self::exp_decay()),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

/// Initial centered age measure `ν̂₀`.
#[derive(Clone, Default)]
pub enum Nu0Hat {
    /// Started at the fluid limit.
    #[default]
    Zero,
    /// Signed point masses `(age, weight)`.
    Atoms(Vec<(f64, f64)>),
    /// Signed density on `[0, ∞)`.
    Density(Density),
}

impl std::fmt::Debug for Nu0Hat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Nu0Hat::Zero => write!(f, "Zero"),
            Nu0Hat::Atoms(a) => write!(f, "Atoms({a:?})"),
            Nu0Hat::Density(_) => write!(f, "Density(..)"),
        }
    }
}

/// `ν̂₀(Φ_t f)`: the initial centered ages transported to time `t`.
pub fn s_op<F: Fn(f64) -> f64>(nu0: &Nu0Hat, dist: &ServiceDistribution, f: F, t: f64) -> f64 {
    match nu0 {
        Nu0Hat::Zero => 0.0,
        Nu0Hat::Atoms(atoms) => {
            let p = phi_op(dist, &f, t);
            atoms.iter().map(|&(a, w)| w * p(a)).sum()
        }
        Nu0Hat::Density(rho) => {
            let p = phi_op(dist, &f, t);
            let end = dist.support_end();
            let integrand = |x: f64| if x >= end { 0.0 } else { rho(x) * p(x) };
            let mut total = 0.0;
            let mut a = 0.0;
            for b in dist.breakpoints().into_iter().filter(|&b| b > 0.0 && b < end) {
                total += integrate(integrand, a, b, 1e-12);
                a = b;
            }
            total
                + if end.is_finite() {
                    integrate(integrand, a, end, 1e-12)
                } else {
                    integrate_half_line(integrand, a, 1e-12)
                }
        }
    }
}

/// `Γ(K)_t(f) = f(0) K(t) + ∫₀ᵗ K(u) ξ_f(t-u) du` at `t = n dt`.
///
/// Since `ξ_f = (f S)'`, each cell contributes its trapezoid value of `K`
/// times the exact increment of `f S`, so no derivative of `f` is needed.
pub fn gamma_map<F: Fn(f64) -> f64>(k: &[f64], dt: f64, dist: &ServiceDistribution, f: F, n: usize) -> f64 {
    let fs = |m: usize| {
        let y = m as f64 * dt;
        let s = dist.sf(y);
        if s == 0.0 {
            0.0
        } else {
            f(y) * s
        }
    };
    // summed in the same order as the CMSE convolution so that f ≡ 1
    // reproduces v̂ to rounding
    let mut acc = 0.0;
    let mut upper = fs(n);
    for j in 1..=n {
        let lower = fs(n - j);
        acc += 0.5 * (k[j - 1] + k[j]) * (upper - lower);
        upper = lower;
    }
    f(0.0) * k[n] + acc
}

/// `ν̂_t(f) = S_t(f) + Γ(K̂)_t(f) - Ĥ_t(f)` at `t = n dt`.
pub fn hat_nu<F: Fn(f64) -> f64>(
    s_f: f64,
    khat: &[f64],
    h_f: f64,
    dt: f64,
    dist: &ServiceDistribution,
    f: F,
    n: usize,
) -> f64 {
    s_f + gamma_map(khat, dt, dist, f, n) - h_f
}

/// `Ê` on the grid from standard Brownian increments, using exact cell
/// integrals of the variance and drift rates.
pub fn hat_e_from_brownian(arr: &ArrivalSpec, dt: f64, brownian: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; brownian.len() + 1];
    for (k, db) in brownian.iter().enumerate() {
        let (a, b) = (k as f64 * dt, (k + 1) as f64 * dt);
        let sd = (arr.sigma2_integral(a, b) / dt).sqrt();
        e[k + 1] = e[k] + sd * db - arr.beta_integral(a, b);
    }
    e
}

/// `Ê` for sample path `path`; the same draws drive the field's Brownian
/// component, so this agrees with [`simulate_limit`] for equal seeds.
pub fn simulate_hat_e(arr: &ArrivalSpec, grid: &LimitGrid, seed: u64, path: u64, noise_off: bool) -> Vec<f64> {
    let nt = grid.nt();
    let b = if noise_off { vec![0.0; nt] } else { field::brownian_increments(seed, path, nt, grid.dt) };
    hat_e_from_brownian(arr, grid.dt, &b)
}

#[derive(Clone, Debug)]
pub struct LimitPath {
    pub times: Vec<f64>,
    pub ehat: Vec<f64>,
    pub mhat1: Vec<f64>,
    pub hhat1: Vec<f64>,
    pub shat1: Vec<f64>,
    pub khat: Vec<f64>,
    pub xhat: Vec<f64>,
    pub vhat: Vec<f64>,
    pub nuhat: BTreeMap<String, Vec<f64>>,
    pub regime: Regime,
    pub x0: f64,
}

impl LimitPath {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t,Ehat,Mhat1,Hhat1,Khat,Xhat,vhat")?;
        for name in self.nuhat.keys() {
            write!(w, ",nuhat_{name}")?;
        }
        writeln!(w)?;
        for n in 0..self.times.len() {
            write!(
                w,
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                self.times[n], self.ehat[n], self.mhat1[n], self.hhat1[n], self.khat[n], self.xhat[n], self.vhat[n]
            )?;
            for v in self.nuhat.values() {
                write!(w, ",{:?}", v[n])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Assembles every limit object from one field realization.
pub fn limit_path_from_field(
    model: &LimitModel,
    field: &MartingaleField,
    arr: &ArrivalSpec,
    x0: f64,
    nu0: &Nu0Hat,
    tests: &[TestFunction],
) -> Result<LimitPath, LimitError> {
    let dist = &*model.dist;
    let regime = model.fluid.regime;
    let dt = field.dt;
    let nt = field.nt;
    let times: Vec<f64> = (0..=nt).map(|n| n as f64 * dt).collect();
    let ehat = hat_e_from_brownian(arr, dt, &field.brownian);
    let mhat1 = field.cumulative_unit();
    let hhat1 = conv_h_series(field, dist, |_, _| 1.0);
    let shat1: Vec<f64> = times.iter().map(|&t| s_op(nu0, dist, |_| 1.0, t)).collect();
    let z: Vec<f64> = shat1.iter().zip(&hhat1).map(|(s, h)| s - h).collect();
    let sol = solve_cmse(regime, &ehat, x0, &z, dist, dt)?;
    let mut nuhat = BTreeMap::new();
    for tf in tests {
        let h = conv_h_series(field, dist, |_, y| tf.eval(y));
        let vals = (0..=nt)
            .map(|n| hat_nu(s_op(nu0, dist, |x| tf.eval(x), times[n]), &sol.k, h[n], dt, dist, |x| tf.eval(x), n))
            .collect();
        nuhat.insert(tf.name.clone(), vals);
    }
    Ok(LimitPath { times, ehat, mhat1, hhat1, shat1, khat: sol.k, xhat: sol.x, vhat: sol.v, nuhat, regime, x0 })
}

/// Draws a field for `(seed, path)` and assembles the limit path.
#[allow(clippy::too_many_arguments)]
pub fn simulate_limit(
    model: &LimitModel,
    arr: &ArrivalSpec,
    x0: f64,
    nu0: &Nu0Hat,
    tests: &[TestFunction],
    seed: u64,
    path: u64,
    noise_off: bool,
) -> Result<(LimitPath, MartingaleField), LimitError> {
    let field = simulate_field(model, seed, path, noise_off);
    let lp = limit_path_from_field(model, &field, arr, x0, nu0, tests)?;
    Ok((lp, field))
}

const HW_STREAM: u64 = 12;

/// Euler–Maruyama for `dX = (-β - X∧0) dt + √(1+σ²) dW` on `[0, T]`.
pub fn simulate_hw(
    beta: f64,
    sigma2: f64,
    x0: f64,
    dt: f64,
    horizon: f64,
    seed: u64,
    path: u64,
    noise_off: bool,
) -> Vec<f64> {
    let nt = (horizon / dt).round() as usize;
    let mut r = rng::substream(seed, path, HW_STREAM);
    let sd = ((1.0 + sigma2) * dt).sqrt();
    let mut x = Vec::with_capacity(nt + 1);
    let mut cur = x0;
    x.push(cur);
    for _ in 0..nt {
        let noise = if noise_off {
            0.0
        } else {
            let e: f64 = StandardNormal.sample(&mut r);
            sd * e
        };
        cur += (-beta - cur.min(0.0)) * dt + noise;
        x.push(cur);
    }
    x
}

/// Values of `simulate_hw` paths at the requested times (rounded to the grid).
pub fn hw_marginals(beta: f64, sigma2: f64, x0: f64, dt: f64, times: &[f64], paths: u64, seed: u64) -> Vec<Vec<f64>> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let idx: Vec<usize> = times.iter().map(|t| (t / dt).round() as usize).collect();
    let mut out = vec![Vec::with_capacity(paths as usize); times.len()];
    for p in 0..paths {
        let xs = simulate_hw(beta, sigma2, x0, dt, horizon, seed, p, false);
        for (slot, &i) in out.iter_mut().zip(&idx) {
            slot.push(xs[i]);
        }
    }
    out
}

#[cfg(test)]
mod tests;
