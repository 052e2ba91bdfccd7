//! Deterministic fluid limit: total mass, entries into service and the age
//! density, stepped on a uniform time grid.
//!
//! Entries are assumed uniform within each time cell, which turns both
//! convolutions (mass and hazard load) into weighted sums of cell averages
//! of `S` and `g`. Each step solves for the entry increment by a fixed
//! point on "entries = mass in service - initial mass + departures" with
//! non-idling imposed on the mass.

use crate::dists::quad::{FiniteRule, HalfLineRule};
use crate::dists::{ArrivalSpec, ServiceDistribution};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FluidError {
    #[error("invalid fluid input: {0}")]
    Input(String),
    #[error("entry fixed point did not contract at step {step} (last change {delta:e})")]
    NoContraction { step: usize, delta: f64 },
}

pub type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Initial age density of the fluid system.
#[derive(Clone)]
pub enum Nu0 {
    Zero,
    /// `mass · S(x)`, a multiple of the invariant age measure.
    Invariant {
        mass: f64,
    },
    Density(Density),
}

impl std::fmt::Debug for Nu0 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Nu0::Zero => write!(f, "Zero"),
            Nu0::Invariant { mass } => write!(f, "Invariant {{ mass: {mass} }}"),
            Nu0::Density(_) => write!(f, "Density(..)"),
        }
    }
}

#[derive(Clone)]
pub struct FluidInit {
    pub ebar: Density,
    pub x0: f64,
    pub nu0: Nu0,
}

impl FluidInit {
    pub fn new(arrival: &ArrivalSpec, x0: f64, nu0: Nu0) -> Self {
        let a = arrival.clone();
        FluidInit { ebar: Arc::new(move |t| a.fluid_cumulative(t)), x0, nu0 }
    }

    /// Mass `min(x0, 1)` spread as the invariant age density.
    pub fn at_invariant(arrival: &ArrivalSpec, x0: f64) -> Self {
        Self::new(arrival, x0, Nu0::Invariant { mass: x0.min(1.0) })
    }

    pub fn empty(arrival: &ArrivalSpec) -> Self {
        Self::new(arrival, 0.0, Nu0::Zero)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
    Mixed,
}

/// Quadrature of the initial-age terms, done in the current-age variable
/// `y = x + t` so kinks of the service law stay on segment boundaries.
#[derive(Clone)]
struct InitialRule {
    ratio: Option<Density>,
    unit: FiniteRule,
    tail: HalfLineRule,
    breaks: Vec<f64>,
    end: f64,
}

impl InitialRule {
    fn new(dist: &Arc<ServiceDistribution>, nu0: &Nu0) -> Self {
        let ratio: Option<Density> = match nu0 {
            Nu0::Zero => None,
            Nu0::Invariant { mass } => {
                let m = *mass;
                Some(Arc::new(move |_| m))
            }
            Nu0::Density(f) => {
                let f = f.clone();
                let d = dist.clone();
                Some(Arc::new(move |x| {
                    let s = d.sf(x);
                    if s > 0.0 {
                        f(x) / s
                    } else {
                        0.0
                    }
                }))
            }
        };
        let end = dist.support_end();
        InitialRule {
            ratio,
            unit: FiniteRule::new(0.0, 1.0, 7),
            tail: HalfLineRule::new(0.0, 7),
            breaks: dist.breakpoints().into_iter().filter(|b| *b < end).collect(),
            end,
        }
    }

    /// `∫_t^L ratio(y - t) k(y) dy`.
    fn integrate<K: Fn(f64) -> f64>(&self, t: f64, k: K) -> f64 {
        let Some(ratio) = &self.ratio else { return 0.0 };
        let body = |y: f64| {
            let r = ratio(y - t);
            if r == 0.0 {
                0.0
            } else {
                r * k(y)
            }
        };
        let mut cuts = vec![t];
        cuts.extend(self.breaks.iter().copied().filter(|b| *b > t));
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            total += len * self.unit.integrate(|u| body(w[0] + len * u));
        }
        let last = *cuts.last().unwrap();
        if self.end.is_finite() {
            if self.end > last {
                let len = self.end - last;
                total += len * self.unit.integrate(|u| body(last + len * u));
            }
        } else {
            total += self.tail.integrate(|x| body(last + x));
        }
        total
    }

    /// `∫ ν̄₀(x) f(x + t) S(x + t) / S(x) dx`.
    fn eval<F: Fn(f64) -> f64>(&self, dist: &ServiceDistribution, f: F, t: f64) -> f64 {
        self.integrate(t, |y| {
            let s = dist.sf(y);
            if s == 0.0 {
                0.0
            } else {
                f(y) * s
            }
        })
    }

    /// `∫ ν̄₀(x) g(x + t) / S(x) dx`.
    fn hazard_load(&self, dist: &ServiceDistribution, t: f64) -> f64 {
        self.integrate(t, |y| dist.density(y))
    }
}

/// A solved fluid trajectory on the grid `t_n = n dt`.
#[derive(Clone)]
pub struct FluidPath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub xbar: Vec<f64>,
    pub kbar: Vec<f64>,
    /// Mass in service, `min(X̄, 1)`.
    pub bbar: Vec<f64>,
    /// `⟨h, ν̄_t⟩`.
    pub hazard_load: Vec<f64>,
    pub regime: Regime,
    pub service: Arc<ServiceDistribution>,
    pub nu0: Nu0,
    initial: InitialRule,
}

impl std::fmt::Debug for InitialRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "InitialRule")
    }
}

impl std::fmt::Debug for FluidPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FluidPath")
            .field("dt", &self.dt)
            .field("steps", &(self.times.len() - 1))
            .field("regime", &self.regime)
            .finish()
    }
}

pub const REGIME_TOL: f64 = 1e-6;
const PICARD_MAX: usize = 50;
const PICARD_TOL: f64 = 1e-10;

/// Density `S(x)` of the invariant age measure.
pub fn invariant_measure(dist: &ServiceDistribution) -> impl Fn(f64) -> f64 + '_ {
    move |x| dist.sf(x)
}

pub fn solve_fluid(
    init: &FluidInit,
    dist: Arc<ServiceDistribution>,
    horizon: f64,
    dt: f64,
) -> Result<FluidPath, FluidError> {
    if !(dt > 0.0 && horizon > 0.0 && dt <= horizon) {
        return Err(FluidError::Input(format!("need 0 < dt <= T, got dt={dt}, T={horizon}")));
    }
    if !(init.x0 >= 0.0 && init.x0.is_finite()) {
        return Err(FluidError::Input(format!("x0 must be a nonnegative number, got {}", init.x0)));
    }
    let initial = InitialRule::new(&dist, &init.nu0);
    let b0 = initial.eval(&dist, |_| 1.0, 0.0);
    let want = init.x0.min(1.0);
    if (b0 - want).abs() > 1e-6 {
        return Err(FluidError::Input(format!("initial age mass {b0} must equal min(x0, 1) = {want}")));
    }
    let b0 = want;
    let m = (horizon / dt).round() as usize;
    // cell averages of g over age cells [j dt, (j+1) dt]
    let sf_grid: Vec<f64> = (0..=m + 1).map(|j| dist.sf(j as f64 * dt)).collect();
    let gbar: Vec<f64> = (0..=m).map(|j| (sf_grid[j] - sf_grid[j + 1]) / dt).collect();

    let times: Vec<f64> = (0..=m).map(|n| n as f64 * dt).collect();
    let mut xbar = vec![init.x0; m + 1];
    let mut kbar = vec![0.0; m + 1];
    let mut bbar = vec![b0; m + 1];
    let mut hload = vec![0.0; m + 1];
    let mut dk = vec![0.0; m + 1];
    hload[0] = initial.hazard_load(&dist, 0.0);
    let mut a_prev = 0.0;
    for n in 1..=m {
        let t = times[n];
        let h_init = initial.hazard_load(&dist, t);
        let h_hist: f64 = (1..n).map(|j| dk[j] * gbar[n - j]).sum();
        let e_n = (init.ebar)(t);
        let mut guess = dk[n - 1];
        let mut converged = false;
        let mut delta = f64::INFINITY;
        let (mut a_n, mut x_n, mut b_n, mut h_n);
        for _ in 0..PICARD_MAX {
            h_n = h_init + h_hist + guess * gbar[0];
            a_n = a_prev + 0.5 * dt * (hload[n - 1] + h_n);
            x_n = init.x0 + e_n - a_n;
            b_n = x_n.min(1.0);
            let k_n = b_n - b0 + a_n;
            let next = k_n - kbar[n - 1];
            delta = (next - guess).abs();
            guess = next;
            if delta <= PICARD_TOL {
                converged = true;
                break;
            }
        }
        if !converged || !guess.is_finite() {
            return Err(FluidError::NoContraction { step: n, delta });
        }
        // recompute with the converged increment
        h_n = h_init + h_hist + guess * gbar[0];
        a_n = a_prev + 0.5 * dt * (hload[n - 1] + h_n);
        x_n = init.x0 + e_n - a_n;
        b_n = x_n.min(1.0);
        dk[n] = guess;
        kbar[n] = kbar[n - 1] + guess;
        xbar[n] = x_n;
        bbar[n] = b_n;
        hload[n] = h_n;
        a_prev = a_n;
    }
    let mut path = FluidPath {
        dt,
        times,
        xbar,
        kbar,
        bbar,
        hazard_load: hload,
        regime: Regime::Mixed,
        service: dist,
        nu0: init.nu0.clone(),
        initial,
    };
    path.regime = classify_regime(&path, horizon, REGIME_TOL);
    Ok(path)
}

/// Regime of the solution on `[0, T]`.
pub fn classify_regime(path: &FluidPath, horizon: f64, tol: f64) -> Regime {
    let xs: Vec<f64> =
        path.times.iter().zip(&path.xbar).filter(|(t, _)| **t <= horizon + 1e-12).map(|(_, x)| *x).collect();
    let sup = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let inf = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    if sup < 1.0 - tol {
        Regime::Subcritical
    } else if xs.iter().all(|x| (x - 1.0).abs() <= tol) {
        Regime::Critical
    } else if inf > 1.0 + tol {
        Regime::Supercritical
    } else {
        Regime::Mixed
    }
}

/// `⟨f, ν̄_t⟩` at a grid time: transported initial ages plus surviving
/// entries, the latter by the midpoint rule over entry cells.
pub fn fluid_age_eval<F: Fn(f64) -> f64>(path: &FluidPath, f: F, t: f64) -> f64 {
    let dist = &path.service;
    let n = ((t / path.dt).round() as usize).min(path.times.len() - 1);
    let t = path.times[n];
    let init = path.initial.eval(dist, &f, t);
    let entries: f64 = (1..=n)
        .map(|j| {
            let dk = path.kbar[j] - path.kbar[j - 1];
            if dk == 0.0 {
                return 0.0;
            }
            let age = t - path.times[j] + 0.5 * path.dt;
            dk * f(age) * dist.sf(age)
        })
        .sum();
    init + entries
}

impl FluidPath {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn interp(&self, v: &[f64], t: f64) -> f64 {
        let pos = (t / self.dt).clamp(0.0, (self.times.len() - 1) as f64);
        let i = pos.floor() as usize;
        if i + 1 >= v.len() {
            return v[v.len() - 1];
        }
        let w = pos - i as f64;
        v[i] * (1.0 - w) + v[i + 1] * w
    }

    pub fn x_at(&self, t: f64) -> f64 {
        self.interp(&self.xbar, t)
    }
    pub fn k_at(&self, t: f64) -> f64 {
        self.interp(&self.kbar, t)
    }
    pub fn b_at(&self, t: f64) -> f64 {
        self.interp(&self.bbar, t)
    }
    pub fn hazard_load_at(&self, t: f64) -> f64 {
        self.interp(&self.hazard_load, t)
    }

    /// Cumulative hazard load `∫₀ᵗ ⟨h, ν̄_s⟩ ds` on the grid (trapezoid).
    pub fn cumulative_hazard_load(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.times.len()];
        for n in 1..out.len() {
            out[n] = out[n - 1] + 0.5 * self.dt * (self.hazard_load[n - 1] + self.hazard_load[n]);
        }
        out
    }

    /// Weight `w(s, x)` with `ν̄_s(dx) = w(s, x) S(x) dx`: the initial density
    /// ratio transported to age `x` for `x >= s`, the entry rate at `s - x`
    /// otherwise.
    pub fn age_weight(&self, s: f64, x: f64) -> f64 {
        if x >= s {
            self.initial_ratio(x - s)
        } else {
            let j = (((s - x) / self.dt).floor() as usize + 1).min(self.kbar.len() - 1);
            (self.kbar[j] - self.kbar[j - 1]) / self.dt
        }
    }

    /// `ν̄₀(x) / S(x)`.
    pub fn initial_ratio(&self, x: f64) -> f64 {
        match &self.nu0 {
            Nu0::Zero => 0.0,
            Nu0::Invariant { mass } => {
                if self.service.sf(x) > 0.0 {
                    *mass
                } else {
                    0.0
                }
            }
            Nu0::Density(f) => {
                let s = self.service.sf(x);
                if s > 0.0 {
                    f(x) / s
                } else {
                    0.0
                }
            }
        }
    }

    /// Writes `t,Xbar,Kbar,mass,hazard_load` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,Xbar,Kbar,mass,hazard_load")?;
        for n in 0..self.times.len() {
            writeln!(
                w,
                "{:?},{:?},{:?},{:?},{:?}",
                self.times[n], self.xbar[n], self.kbar[n], self.bbar[n], self.hazard_load[n]
            )?;
        }
        Ok(())
    }
}
