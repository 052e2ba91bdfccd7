//! The verification battery. Each check is a plain struct whose defaults
//! are the reference settings; `run` returns one report per statistic.
//! Replicates use per-index random streams, so results do not depend on
//! the number of worker threads.

use super::{
    diffusion_scale, ks_distance, mean_and_se, moment_bound_check, ols_slope, qv_estimate, sample_variance, ScaleError,
    TestReport,
};
use crate::dists::{builtin_specs, renewal_function, ArrivalSpec, DistError, DistSpec, RateFn, ServiceDistribution};
use crate::fluid::{fluid_age_eval, solve_fluid, FluidError, FluidInit, Nu0, Regime};
use crate::limitsim::{
    hw_marginals, limit_path_from_field, sae_residual, simulate_field, solve_cmse, LimitError, LimitGrid, LimitModel,
    Nu0Hat, SaeTestFunction,
};
use crate::microsim::{
    compensator_unit_exact, compensator_unit_grid, representation_residual, shift_consistency_check, simulate,
    InitialCondition, PathRecord, ResidualSampling, SimConfig, SimError,
};
use crate::rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
}

type Reports = Result<Vec<TestReport>, VerifyError>;

fn dist(spec: &DistSpec) -> Result<Arc<ServiceDistribution>, VerifyError> {
    Ok(Arc::new(ServiceDistribution::from_spec(spec)?))
}

/// `x0` customers with stationary ages; ages use a stream of their own.
fn stationary_config(
    n: usize,
    arrival: ArrivalSpec,
    service: Arc<ServiceDistribution>,
    horizon: f64,
    x0: usize,
    seed: u64,
    replicate: u64,
) -> SimConfig {
    let mut cfg = SimConfig::new(n, arrival, service.clone(), horizon);
    cfg.initial = InitialCondition::stationary(&service, n, x0, &mut rng::substream(seed, replicate, 3));
    cfg.seed = seed;
    cfg.replicate = replicate;
    cfg.record_events = false;
    cfg
}

fn ratio_spread(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] / w[0] - 0.5).abs()).fold(0.0, f64::max)
}

fn sup_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Balance identities at every event time over random configurations.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityCheck {
    pub configs: usize,
    pub seeds_per_config: u64,
    pub seed: u64,
}

impl Default for IdentityCheck {
    fn default() -> Self {
        IdentityCheck { configs: 200, seeds_per_config: 10, seed: 1 }
    }
}

impl IdentityCheck {
    pub fn random_config(&self, index: usize) -> Result<SimConfig, VerifyError> {
        let mut r = rng::substream(self.seed, index as u64, 7);
        let specs = builtin_specs();
        let service = dist(&specs[r.random_range(0..specs.len())])?;
        let n: usize = r.random_range(1..=40);
        let lambda: f64 = r.random_range(0.3..1.8);
        // keep the N-system rate positive even at the sinusoid's trough
        let beta: f64 = r.random_range(-1.0..=0.2 * lambda * (n as f64).sqrt());
        let arrival = match r.random_range(0..3) {
            0 => ArrivalSpec::poisson(lambda, beta),
            1 => ArrivalSpec::Renewal { lambda_bar: lambda, beta, sigma2: r.random_range(0.2..3.0) },
            _ => ArrivalSpec::InhomPoisson {
                lambda_bar: RateFn::Sinusoid { mean: lambda, amplitude: 0.5 * lambda, period: 2.0 },
                beta: RateFn::constant(beta),
            },
        };
        let horizon = r.random_range(1.0..6.0);
        let x0 = r.random_range(0..=2 * n);
        let mut cfg = stationary_config(n, arrival, service, horizon, x0, self.seed, index as u64);
        if r.random_bool(0.5) {
            cfg.initial.residual_sampling = ResidualSampling::Fresh;
        }
        Ok(cfg)
    }

    pub fn run(&self) -> Reports {
        let failures: Vec<usize> = (0..self.configs)
            .into_par_iter()
            .map(|c| -> Result<usize, VerifyError> {
                let base = self.random_config(c)?;
                let mut bad = 0;
                for s in 0..self.seeds_per_config {
                    let mut cfg = base.clone();
                    cfg.seed = self.seed.wrapping_add(1000 * s + 1);
                    if simulate(&cfg)?.check_invariants().is_err() {
                        bad += 1;
                    }
                }
                Ok(bad)
            })
            .collect::<Result<_, _>>()?;
        let total = self.configs * self.seeds_per_config as usize;
        Ok(vec![TestReport::at_most(
            "balance identity violations",
            failures.iter().sum::<usize>() as f64,
            0.0,
            total,
            None,
        )])
    }
}

/// Mean zero and `Var M₁(T) = E A₁(T)` for the unit departure martingale.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MartingaleCheck {
    pub n: usize,
    pub horizon: f64,
    pub replicates: usize,
    pub services: Vec<DistSpec>,
    pub seed: u64,
    #[serde(with = "super::threshold")]
    pub mean_sigmas: f64,
    #[serde(with = "super::threshold")]
    pub qv_tolerance: f64,
}

impl Default for MartingaleCheck {
    fn default() -> Self {
        MartingaleCheck {
            n: 50,
            horizon: 5.0,
            replicates: 10_000,
            services: vec![DistSpec::exponential(), DistSpec::lognormal(1.0)],
            seed: 2,
            mean_sigmas: 3.0,
            qv_tolerance: 0.05,
        }
    }
}

impl MartingaleCheck {
    pub fn run(&self) -> Reports {
        let mut out = vec![];
        for spec in &self.services {
            let d = dist(spec)?;
            let arr = ArrivalSpec::poisson(1.0, 0.0);
            let pairs: Vec<(f64, f64)> = (0..self.replicates as u64)
                .into_par_iter()
                .map(|r| -> Result<(f64, f64), VerifyError> {
                    let cfg = stationary_config(self.n, arr.clone(), d.clone(), self.horizon, self.n, self.seed, r);
                    let p = simulate(&cfg)?;
                    let a = compensator_unit_exact(&p, self.horizon);
                    let q = p.departures.iter().filter(|x| x.time <= self.horizon).count() as f64;
                    Ok((q - a, a))
                })
                .collect::<Result<_, _>>()?;
            let m: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let a: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let (mm, se) = mean_and_se(&m);
            let var = sample_variance(&m);
            let (ma, _) = mean_and_se(&a);
            let name = d.name();
            out.push(TestReport::at_most(
                format!("martingale mean/SE {name}"),
                mm.abs() / se,
                self.mean_sigmas,
                m.len(),
                Some(se),
            ));
            out.push(TestReport::at_most(
                format!("martingale |Var M - E A|/Var {name}"),
                (var - ma).abs() / var,
                self.qv_tolerance,
                m.len(),
                None,
            ));
        }
        Ok(out)
    }
}

/// First-order convergence of the age representation and its shifted form
/// as the compensator grid is refined.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentationCheck {
    pub n: usize,
    pub horizon: f64,
    pub dts: Vec<f64>,
    pub service: DistSpec,
    pub shift_start: f64,
    pub paths: u64,
    pub seed: u64,
    #[serde(with = "super::threshold")]
    pub ratio_slack: f64,
}

impl Default for RepresentationCheck {
    fn default() -> Self {
        RepresentationCheck {
            n: 20,
            horizon: 5.0,
            dts: vec![0.04, 0.02, 0.01, 0.005],
            service: DistSpec::lognormal(1.0),
            shift_start: 1.0,
            paths: 4,
            seed: 3,
            ratio_slack: 0.2,
        }
    }
}

impl RepresentationCheck {
    /// Residuals summed over paths, one entry per `dt`: `(from 0, shifted)`.
    pub fn residuals(&self) -> Result<(Vec<f64>, Vec<f64>), VerifyError> {
        let d = dist(&self.service)?;
        let arr = ArrivalSpec::poisson(1.0, 0.0);
        let grid: Vec<f64> = (1..=(self.horizon / 0.5) as usize).map(|i| i as f64 * 0.5).collect();
        let offsets: Vec<f64> = grid.iter().copied().filter(|&u| self.shift_start + u <= self.horizon).collect();
        let mut base = vec![0.0; self.dts.len()];
        let mut shifted = vec![0.0; self.dts.len()];
        for r in 0..self.paths {
            let cfg = stationary_config(self.n, arr.clone(), d.clone(), self.horizon, self.n / 2, self.seed, r);
            let p = simulate(&cfg)?;
            for (i, &dt) in self.dts.iter().enumerate() {
                base[i] += representation_residual(&p, |_| 1.0, &grid, dt)?;
                shifted[i] += shift_consistency_check(&p, self.shift_start, |_| 1.0, &offsets, dt)?;
            }
        }
        Ok((base, shifted))
    }

    pub fn run(&self) -> Reports {
        let (base, shifted) = self.residuals()?;
        let n = self.paths as usize;
        Ok(vec![
            TestReport::at_most("representation |ratio - 1/2|", ratio_spread(&base), self.ratio_slack, n, None),
            TestReport::at_most("shift identity |ratio - 1/2|", ratio_spread(&shifted), self.ratio_slack, n, None),
        ])
    }
}

/// Slope of the fluid-scale sup error against `N` on log-log axes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FllnCheck {
    pub ns: Vec<usize>,
    pub seeds: u64,
    pub horizon: f64,
    pub service: DistSpec,
    pub lambda_bar: f64,
    pub initial_fraction: f64,
    pub fluid_dt: f64,
    pub seed: u64,
    #[serde(with = "super::threshold")]
    pub slope_tolerance: f64,
}

impl Default for FllnCheck {
    fn default() -> Self {
        FllnCheck {
            ns: vec![25, 100, 400],
            seeds: 200,
            horizon: 5.0,
            service: DistSpec::lognormal(1.0),
            lambda_bar: 1.0,
            initial_fraction: 0.5,
            fluid_dt: 1e-3,
            seed: 4,
            slope_tolerance: 0.2,
        }
    }
}

impl FllnCheck {
    /// Mean over seeds of `sup_t |X(t)/N - X̄(t)|` for each `N`.
    pub fn sup_errors(&self) -> Result<Vec<f64>, VerifyError> {
        let d = dist(&self.service)?;
        let arr = ArrivalSpec::poisson(self.lambda_bar, 0.0);
        let frac = self.initial_fraction;
        let init = FluidInit::new(&arr, frac, Nu0::Invariant { mass: frac.min(1.0) });
        let fluid = solve_fluid(&init, d.clone(), self.horizon, self.fluid_dt)?;
        let mut out = vec![];
        for &n in &self.ns {
            let x0 = (frac * n as f64).round() as usize;
            let errs: Vec<f64> = (0..self.seeds)
                .into_par_iter()
                .map(|r| -> Result<f64, VerifyError> {
                    let cfg = stationary_config(n, arr.clone(), d.clone(), self.horizon, x0, self.seed, r);
                    let p = simulate(&cfg)?;
                    Ok(sup_fluid_error(&p, &fluid))
                })
                .collect::<Result<_, _>>()?;
            out.push(errs.iter().sum::<f64>() / errs.len() as f64);
        }
        Ok(out)
    }

    pub fn run(&self) -> Reports {
        let errs = self.sup_errors()?;
        let lx: Vec<f64> = self.ns.iter().map(|&n| (n as f64).ln()).collect();
        let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let slope = ols_slope(&lx, &ly);
        Ok(vec![TestReport::at_most(
            format!("FLLN |slope + 1/2| (slope {slope:.3})"),
            (slope + 0.5).abs(),
            self.slope_tolerance,
            self.seeds as usize * self.ns.len(),
            None,
        )])
    }
}

/// `sup |X/N - X̄|` over event times (both sides of each jump) and the
/// fluid grid.
pub fn sup_fluid_error(p: &PathRecord, fluid: &crate::fluid::FluidPath) -> f64 {
    let n = p.n as f64;
    let mut worst: f64 = 0.0;
    let mut prev = p.states[0].counters.x as f64 / n;
    for s in &p.states {
        let xb = fluid.x_at(s.time.min(p.horizon));
        let cur = s.counters.x as f64 / n;
        worst = worst.max((cur - xb).abs()).max((prev - xb).abs());
        prev = cur;
    }
    for (i, &t) in fluid.times.iter().enumerate() {
        if t > p.horizon {
            break;
        }
        worst = worst.max((p.counters_at(t).x as f64 / n - fluid.xbar[i]).abs());
    }
    worst
}

/// The critical invariant state is a fixed point of the fluid solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluidInvarianceCheck {
    pub dt: f64,
    pub horizon: f64,
    pub services: Vec<DistSpec>,
    #[serde(with = "super::threshold")]
    pub tolerance_in_dt: f64,
}

impl Default for FluidInvarianceCheck {
    fn default() -> Self {
        FluidInvarianceCheck {
            dt: 1e-3,
            horizon: 10.0,
            services: vec![
                DistSpec::exponential(),
                DistSpec::lognormal(1.0),
                DistSpec::gamma(2.0),
                DistSpec::weibull(1.5),
                DistSpec::uniform(),
            ],
            tolerance_in_dt: 10.0,
        }
    }
}

impl FluidInvarianceCheck {
    pub fn run(&self) -> Reports {
        let arr = ArrivalSpec::poisson(1.0, 0.0);
        let mut out = vec![];
        for spec in &self.services {
            let d = dist(spec)?;
            let p = solve_fluid(&FluidInit::at_invariant(&arr, 1.0), d.clone(), self.horizon, self.dt)?;
            let dx = p.xbar.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
            out.push(TestReport::at_most(
                format!("fluid sup|X - 1|/dt {}", d.name()),
                dx / self.dt,
                self.tolerance_in_dt,
                1,
                None,
            ));
            // ⟨f, ν̄*⟩ = ∫ f S, which is 1 for f = 1 and f = h
            let probes: Vec<f64> = (1..=4).map(|i| i as f64 * self.horizon / 4.0).collect();
            let dh = d.clone();
            let ds = d.clone();
            let target_s = crate::dists::quad::integrate_half_line(|x| d.sf(x).powi(2), 0.0, 1e-12);
            let mut worst: f64 = 0.0;
            for &t in &probes {
                worst = worst.max((fluid_age_eval(&p, |_| 1.0, t) - 1.0).abs());
                if d.has_bounded_hazard() {
                    worst = worst.max((fluid_age_eval(&p, |x| dh.hazard(x), t) - 1.0).abs());
                }
                worst = worst.max((fluid_age_eval(&p, |x| ds.sf(x), t) - target_s).abs());
            }
            out.push(TestReport::at_most(
                format!("fluid age functionals /dt {}", d.name()),
                worst / self.dt,
                self.tolerance_in_dt,
                1,
                None,
            ));
        }
        Ok(out)
    }
}

/// M/M/N at the critical invariant state against the Halfin–Whitt SDE.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcltCheck {
    pub n: usize,
    pub beta: f64,
    pub times: Vec<f64>,
    pub replicates: usize,
    pub euler_paths: u64,
    pub euler_dt: f64,
    pub seed: u64,
    #[serde(with = "super::threshold")]
    pub ks_threshold: f64,
    #[serde(with = "super::threshold")]
    pub variance_tolerance: f64,
}

impl Default for FcltCheck {
    fn default() -> Self {
        FcltCheck {
            n: 400,
            beta: 1.0,
            times: vec![1.0, 5.0],
            replicates: 2000,
            euler_paths: 200_000,
            euler_dt: 0.005,
            seed: 6,
            ks_threshold: 0.06,
            variance_tolerance: 0.15,
        }
    }
}

/// Per-time samples: simulated system first, SDE second.
pub type MarginalSamples = (Vec<Vec<f64>>, Vec<Vec<f64>>);

impl FcltCheck {
    pub fn samples(&self) -> Result<MarginalSamples, VerifyError> {
        let d = Arc::new(ServiceDistribution::exponential());
        let arr = ArrivalSpec::poisson(1.0, self.beta);
        let horizon = self.times.iter().copied().fold(0.0, f64::max);
        let fluid = solve_fluid(&FluidInit::at_invariant(&arr, 1.0), d.clone(), horizon, 1e-2)?;
        let fluid_arr = ArrivalSpec::poisson(1.0, 0.0);
        let des: Vec<Vec<f64>> = (0..self.replicates as u64)
            .into_par_iter()
            .map(|r| -> Result<Vec<f64>, VerifyError> {
                let cfg = stationary_config(self.n, arr.clone(), d.clone(), horizon, self.n, self.seed, r);
                let p = simulate(&cfg)?;
                Ok(diffusion_scale(&p, &fluid, &fluid_arr, &self.times)?.values.x)
            })
            .collect::<Result<_, _>>()?;
        let des_by_time = (0..self.times.len()).map(|i| des.iter().map(|v| v[i]).collect()).collect();
        let chunks = 64u64;
        let per = self.euler_paths.div_ceil(chunks);
        let parts: Vec<Vec<Vec<f64>>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let count = per.min(self.euler_paths.saturating_sub(c * per));
                hw_marginals(self.beta, 1.0, 0.0, self.euler_dt, &self.times, count, self.seed.wrapping_add(c + 1))
            })
            .collect();
        let sde = (0..self.times.len()).map(|i| parts.iter().flat_map(|p| p[i].iter().copied()).collect()).collect();
        Ok((des_by_time, sde))
    }

    pub fn run(&self) -> Reports {
        let (des, sde) = self.samples()?;
        let mut out = vec![];
        for (i, &t) in self.times.iter().enumerate() {
            out.push(TestReport::at_most(
                format!("KS(DES, SDE) t={t}"),
                ks_distance(&des[i], &sde[i]),
                self.ks_threshold,
                des[i].len(),
                None,
            ));
        }
        if let Some(i) = self.times.iter().position(|&t| (t - 1.0).abs() < 1e-12) {
            let (vd, vs) = (sample_variance(&des[i]), sample_variance(&sde[i]));
            out.push(TestReport::at_most(
                "Var X(1) DES vs SDE, relative",
                (vd / vs - 1.0).abs(),
                self.variance_tolerance,
                des[i].len(),
                None,
            ));
        }
        Ok(out)
    }
}

/// Realized quadratic variation of the martingale part of the centered
/// queue length, exponential against lognormal service.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InsensitivityCheck {
    pub n: usize,
    pub horizon: f64,
    pub grid_dt: f64,
    pub replicates: u64,
    pub services: Vec<DistSpec>,
    pub seed: u64,
    #[serde(with = "super::threshold")]
    pub tolerance: f64,
}

impl Default for InsensitivityCheck {
    fn default() -> Self {
        InsensitivityCheck {
            n: 400,
            horizon: 5.0,
            grid_dt: 1e-3,
            replicates: 10,
            services: vec![DistSpec::exponential(), DistSpec::lognormal(1.0)],
            seed: 7,
            tolerance: 0.10,
        }
    }
}

impl InsensitivityCheck {
    /// Mean realized QV per service.
    pub fn realized(&self) -> Result<Vec<f64>, VerifyError> {
        let arr = ArrivalSpec::poisson(1.0, 0.0);
        let steps = (self.horizon / self.grid_dt).round() as usize;
        let nf = self.n as f64;
        let mut out = vec![];
        for spec in &self.services {
            let d = dist(spec)?;
            let qvs: Vec<f64> = (0..self.replicates)
                .into_par_iter()
                .map(|r| -> Result<f64, VerifyError> {
                    let cfg = stationary_config(self.n, arr.clone(), d.clone(), self.horizon, self.n, self.seed, r);
                    let p = simulate(&cfg)?;
                    let a = compensator_unit_grid(&p, self.grid_dt, steps);
                    let mart: Vec<f64> = (0..=steps)
                        .map(|j| {
                            let t = j as f64 * self.grid_dt;
                            let c = p.counters_at(t);
                            let arrivals =
                                c.e as f64 - (nf * arr.fluid_cumulative(t) - nf.sqrt() * arr.beta_integral(0.0, t));
                            (arrivals - (c.d as f64 - a[j])) / nf.sqrt()
                        })
                        .collect();
                    Ok(qv_estimate(&mart))
                })
                .collect::<Result<_, _>>()?;
            out.push(qvs.iter().sum::<f64>() / qvs.len() as f64);
        }
        Ok(out)
    }

    pub fn run(&self) -> Reports {
        let qv = self.realized()?;
        let target = 2.0 * self.horizon;
        let reps = self.replicates as usize;
        let mut out = vec![];
        if qv.len() >= 2 {
            out.push(TestReport::at_most(
                "QV relative difference between services",
                (qv[0] / qv[1] - 1.0).abs(),
                self.tolerance,
                reps,
                None,
            ));
        }
        for (spec, v) in self.services.iter().zip(&qv) {
            let name = dist(spec)?.name().to_string();
            out.push(TestReport::at_most(
                format!("QV vs (1+σ²)T {name}"),
                (v / target - 1.0).abs(),
                self.tolerance,
                reps,
                None,
            ));
        }
        Ok(out)
    }
}

/// Upper confidence bounds on moments of the fluid-scaled compensator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentCheck {
    pub n: usize,
    pub replicates: u64,
    pub horizons: Vec<f64>,
    pub services: Vec<DistSpec>,
    pub orders: Vec<u32>,
    pub seed: u64,
}

impl Default for MomentCheck {
    fn default() -> Self {
        MomentCheck {
            n: 100,
            replicates: 1000,
            horizons: vec![1.0, 2.0],
            services: vec![DistSpec::exponential(), DistSpec::gamma(2.0)],
            orders: vec![1, 2, 3],
            seed: 8,
        }
    }
}

impl MomentCheck {
    pub fn run(&self) -> Reports {
        let arr = ArrivalSpec::poisson(1.0, 0.0);
        let mut out = vec![];
        for spec in &self.services {
            let d = dist(spec)?;
            for &t in &self.horizons {
                let paths: Vec<PathRecord> = (0..self.replicates)
                    .into_par_iter()
                    .map(|r| simulate(&stationary_config(self.n, arr.clone(), d.clone(), t, self.n, self.seed, r)))
                    .collect::<Result<_, _>>()?;
                for &k in &self.orders {
                    out.push(moment_bound_check(&paths, &d, t, k)?);
                }
            }
        }
        Ok(out)
    }
}

/// Random perturbations of the CMSE inputs against the Lipschitz bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzCheck {
    pub perturbations: usize,
    pub epsilon: f64,
    pub horizon: f64,
    pub dt: f64,
    pub services: Vec<DistSpec>,
    pub seed: u64,
}

impl Default for LipschitzCheck {
    fn default() -> Self {
        LipschitzCheck {
            perturbations: 100,
            epsilon: 0.05,
            horizon: 2.0,
            dt: 0.01,
            services: vec![DistSpec::exponential(), DistSpec::gamma(2.0), DistSpec::lognormal(1.0)],
            seed: 9,
        }
    }
}

fn random_walk(r: &mut rng::SimRng, steps: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![0.0; steps + 1];
    for j in 1..=steps {
        let z: f64 = StandardNormal.sample(r);
        w[j] = w[j - 1] + dt.sqrt() * z;
    }
    w
}

fn scaled_to(mut v: Vec<f64>, size: f64) -> Vec<f64> {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x *= size / m);
    }
    v
}

impl LipschitzCheck {
    /// Worst ratio of output deviation to `3(1 + U(T)) ε`, and the largest
    /// `|K - E|` seen in the subcritical cases.
    pub fn worst(&self) -> Result<(f64, f64), VerifyError> {
        let steps = (self.horizon / self.dt).round() as usize;
        let regimes = [Regime::Subcritical, Regime::Critical, Regime::Supercritical];
        let mut worst_ratio: f64 = 0.0;
        let mut worst_sub: f64 = 0.0;
        for i in 0..self.perturbations {
            let spec = &self.services[i % self.services.len()];
            let d = dist(spec)?;
            let u = renewal_function(&d, self.horizon, 1e-3)?.at(self.horizon);
            let regime = regimes[(i / self.services.len()) % 3];
            let mut r = rng::substream(self.seed, i as u64, 13);
            let e: Vec<f64> = random_walk(&mut r, steps, self.dt)
                .iter()
                .enumerate()
                .map(|(j, w)| w - 0.3 * j as f64 * self.dt)
                .collect();
            let x0: f64 = match regime {
                Regime::Critical => r.random_range(0.0..1.0),
                _ => r.random_range(-1.0..1.0),
            };
            let v0 = crate::limitsim::occupancy(regime, x0);
            let zw = random_walk(&mut r, steps, self.dt);
            let z: Vec<f64> = zw.iter().map(|w| v0 + 0.5 * w).collect();

            let size: f64 = self.epsilon * r.random_range(0.2..1.0);
            let de = scaled_to(random_walk(&mut r, steps, self.dt), size);
            let dx0 = match regime {
                Regime::Critical => size * r.random_range(0.0..1.0),
                _ => size * r.random_range(-1.0..1.0),
            };
            let dv0 = crate::limitsim::occupancy(regime, x0 + dx0) - v0;
            let dzw = scaled_to(random_walk(&mut r, steps, self.dt), size);
            let e2: Vec<f64> = e.iter().zip(&de).map(|(a, b)| a + b).collect();
            // keep Z(0) = v(0) after the shift of x0
            let z2: Vec<f64> = z.iter().zip(&dzw).map(|(a, b)| a + dv0 + b - dzw[0]).collect();
            let eps = sup_dev(&e, &e2).max(dx0.abs()).max(sup_dev(&z, &z2));

            let a = solve_cmse(regime, &e, x0, &z, &d, self.dt)?;
            let b = solve_cmse(regime, &e2, x0 + dx0, &z2, &d, self.dt)?;
            let dev = sup_dev(&a.k, &b.k).max(sup_dev(&a.x, &b.x)).max(sup_dev(&a.v, &b.v));
            worst_ratio = worst_ratio.max(dev / (3.0 * (1.0 + u) * eps));
            if regime == Regime::Subcritical {
                worst_sub = worst_sub.max(sup_dev(&a.k, &e)).max(sup_dev(&b.k, &e2));
            }
        }
        Ok((worst_ratio, worst_sub))
    }

    pub fn run(&self) -> Reports {
        let (ratio, sub) = self.worst()?;
        Ok(vec![
            TestReport::at_most("CMSE deviation / (3(1+U(T)) eps)", ratio, 1.0, self.perturbations, None),
            TestReport::at_most("subcritical max |K - E|", sub, 0.0, self.perturbations, None),
        ])
    }
}

/// First-order decay of the stochastic age equation residual under grid
/// halving, on one realization aggregated from the finest grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeCheck {
    pub finest_dt: f64,
    pub horizon: f64,
    pub levels: usize,
    pub paths: u64,
    pub seed: u64,
    #[serde(with = "super::threshold")]
    pub ratio_slack: f64,
}

impl Default for SaeCheck {
    fn default() -> Self {
        SaeCheck { finest_dt: 0.01, horizon: 2.0, levels: 3, paths: 3, seed: 10, ratio_slack: 0.2 }
    }
}

impl SaeCheck {
    fn model(&self) -> Result<(LimitModel, ArrivalSpec), VerifyError> {
        let d = Arc::new(ServiceDistribution::exponential());
        let arr = ArrivalSpec::poisson(1.0, 0.0);
        let fluid = solve_fluid(&FluidInit::at_invariant(&arr, 1.0), d, self.horizon, self.finest_dt.min(0.01))?;
        let grid = LimitGrid::for_fluid(&fluid, self.finest_dt, self.horizon)?;
        Ok((LimitModel::new(Arc::new(fluid), grid)?, arr))
    }

    /// Max residual per level, coarsest first, for each test function.
    pub fn residuals(&self) -> Result<Vec<(String, Vec<f64>)>, VerifyError> {
        let (fine, arr) = self.model()?;
        let tests = [SaeTestFunction::one(), SaeTestFunction::exp_decay()];
        let mut totals = vec![vec![0.0; self.levels]; tests.len()];
        for p in 0..self.paths {
            let mut model = fine.clone();
            let mut field = simulate_field(&fine, self.seed, p, false);
            for level in (0..self.levels).rev() {
                let lp = limit_path_from_field(&model, &field, &arr, 0.0, &Nu0Hat::Zero, &[])?;
                for (ti, t) in tests.iter().enumerate() {
                    let r = sae_residual(&field, &lp.khat, &Nu0Hat::Zero, &model.dist, t)?;
                    totals[ti][level] += r.iter().copied().fold(0.0, f64::max);
                }
                if level > 0 {
                    model = model.coarsen();
                    field = field.coarsen();
                }
            }
        }
        Ok(tests.iter().map(|t| t.name.clone()).zip(totals).collect())
    }

    /// Largest residual with all Gaussian draws off and zero inputs.
    pub fn zero_case(&self) -> Result<f64, VerifyError> {
        let (model, _) = self.model()?;
        let field = simulate_field(&model, self.seed, 0, true);
        let k = vec![0.0; field.nt + 1];
        let mut worst: f64 = 0.0;
        for t in [SaeTestFunction::one(), SaeTestFunction::exp_decay()] {
            let r = sae_residual(&field, &k, &Nu0Hat::Zero, &model.dist, &t)?;
            worst = worst.max(r.iter().copied().fold(0.0, f64::max));
        }
        Ok(worst)
    }

    pub fn run(&self) -> Reports {
        let mut out = vec![];
        for (name, res) in self.residuals()? {
            // residuals are stored coarsest first
            let fine_first: Vec<f64> = res.iter().rev().copied().collect();
            let spread = fine_first.windows(2).map(|w| (w[0] / w[1] - 0.5).abs()).fold(0.0, f64::max);
            out.push(TestReport::at_most(
                format!("SAE residual |ratio - 1/2| phi={name}"),
                spread,
                self.ratio_slack,
                self.paths as usize,
                None,
            ));
        }
        out.push(TestReport::at_most("SAE residual, noise off and zero inputs", self.zero_case()?, 0.0, 1, None));
        Ok(out)
    }
}
