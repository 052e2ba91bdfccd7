//! Gaussian white noise on age × time cells with the fluid hazard intensity,
//! and stochastic integrals against it.
//!
//! Cells are square (`dx = dt`). The noise in cell `(i, k)` covers ages
//! `[i dt, (i+1) dt)` and times `[k dt, (k+1) dt)`; its variance is the fluid
//! departure intensity of the cell.

use super::{LimitError, LimitGrid};
use crate::dists::{psi_op, ServiceDistribution};
use crate::fluid::FluidPath;
use crate::rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

const FIELD_STREAM: u64 = 10;
const BROWNIAN_STREAM: u64 = 11;

/// Cell intensities for a fluid solution, shared by every sample path.
#[derive(Clone, Debug)]
pub struct LimitModel {
    pub grid: LimitGrid,
    pub dist: Arc<ServiceDistribution>,
    pub fluid: Arc<FluidPath>,
    /// Row-major `[k * nx + i]`.
    pub intensity: Arc<Vec<f64>>,
}

impl LimitModel {
    pub fn new(fluid: Arc<FluidPath>, grid: LimitGrid) -> Result<Self, LimitError> {
        if fluid.horizon() + 1e-9 < grid.horizon {
            return Err(LimitError::Input(format!(
                "fluid solved to {} but limit horizon is {}",
                fluid.horizon(),
                grid.horizon
            )));
        }
        let dist = fluid.service.clone();
        let (nx, nt, dt) = (grid.nx(), grid.nt(), grid.dt);
        let sf: Vec<f64> = (0..=nx).map(|i| dist.sf(i as f64 * dt)).collect();
        let mut intensity = vec![0.0; nx * nt];
        for k in 0..nt {
            let s = (k as f64 + 0.5) * dt;
            for i in 0..nx {
                let x = (i as f64 + 0.5) * dt;
                let mass = sf[i] - sf[i + 1];
                if mass == 0.0 {
                    continue;
                }
                let v = dt * mass * fluid.age_weight(s, x);
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(LimitError::Input(format!("negative or invalid cell intensity {v} at ({x}, {s})")));
                }
                intensity[k * nx + i] = v;
            }
        }
        Ok(LimitModel { grid, dist, fluid, intensity: Arc::new(intensity) })
    }

    /// The model on a grid twice as coarse (block sums of intensity).
    pub fn coarsen(&self) -> LimitModel {
        let grid = self.grid.coarsened();
        let (nx, nt) = (self.grid.nx(), self.grid.nt());
        LimitModel {
            intensity: Arc::new(block_sum(&self.intensity, nx, nt)),
            grid,
            dist: self.dist.clone(),
            fluid: self.fluid.clone(),
        }
    }

    pub fn total_intensity(&self) -> f64 {
        self.intensity.iter().sum()
    }
}

fn block_sum(v: &[f64], nx: usize, nt: usize) -> Vec<f64> {
    let (cx, ct) = (nx / 2, nt / 2);
    let mut out = vec![0.0; cx * ct];
    for k in 0..ct * 2 {
        for i in 0..cx * 2 {
            out[(k / 2) * cx + i / 2] += v[k * nx + i];
        }
    }
    out
}

/// One realization of the noise and of the arrival Brownian motion.
#[derive(Clone, Debug)]
pub struct MartingaleField {
    pub dt: f64,
    pub nx: usize,
    pub nt: usize,
    /// Row-major `[k * nx + i]`.
    pub increments: Vec<f64>,
    /// Standard Brownian increments over the time cells.
    pub brownian: Vec<f64>,
    pub intensity: Arc<Vec<f64>>,
}

/// Draws the field for sample path `path` of master seed `seed`.
pub fn simulate_field(model: &LimitModel, seed: u64, path: u64, noise_off: bool) -> MartingaleField {
    let (nx, nt, dt) = (model.grid.nx(), model.grid.nt(), model.grid.dt);
    let mut increments = vec![0.0; nx * nt];
    let mut brownian = vec![0.0; nt];
    if !noise_off {
        let mut r = rng::substream(seed, path, FIELD_STREAM);
        for (z, var) in increments.iter_mut().zip(model.intensity.iter()) {
            let e: f64 = StandardNormal.sample(&mut r);
            *z = var.sqrt() * e;
        }
        brownian = brownian_increments(seed, path, nt, dt);
    }
    MartingaleField { dt, nx, nt, increments, brownian, intensity: model.intensity.clone() }
}

pub(crate) fn brownian_increments(seed: u64, path: u64, nt: usize, dt: f64) -> Vec<f64> {
    let mut r = rng::substream(seed, path, BROWNIAN_STREAM);
    let sd = dt.sqrt();
    (0..nt)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut r);
            sd * e
        })
        .collect()
}

impl MartingaleField {
    /// The same realization aggregated onto cells twice as wide.
    pub fn coarsen(&self) -> MartingaleField {
        let brownian = self.brownian.chunks(2).filter(|c| c.len() == 2).map(|c| c[0] + c[1]).collect();
        MartingaleField {
            dt: 2.0 * self.dt,
            nx: self.nx / 2,
            nt: self.nt / 2,
            increments: block_sum(&self.increments, self.nx, self.nt),
            brownian,
            intensity: Arc::new(block_sum(&self.intensity, self.nx, self.nt)),
        }
    }

    fn steps(&self, t: f64) -> usize {
        ((t / self.dt).round() as usize).min(self.nt)
    }

    /// Total noise per time cell, `M̂` of the unit function over each cell.
    pub fn time_marginal(&self) -> Vec<f64> {
        self.increments.chunks(self.nx).map(|row| row.iter().sum()).collect()
    }

    /// `M̂_t(1)` on the grid.
    pub fn cumulative_unit(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nt + 1];
        for (k, m) in self.time_marginal().into_iter().enumerate() {
            out[k + 1] = out[k] + m;
        }
        out
    }
}

/// `M̂_t(φ)`: cell increments weighted by `φ` at cell centres.
pub fn field_integral<P: Fn(f64, f64) -> f64>(field: &MartingaleField, phi: P, t: f64) -> f64 {
    let n = field.steps(t);
    let mut total = 0.0;
    for k in 0..n {
        let s = (k as f64 + 0.5) * field.dt;
        let row = &field.increments[k * field.nx..(k + 1) * field.nx];
        for (i, &dm) in row.iter().enumerate() {
            if dm != 0.0 {
                total += phi((i as f64 + 0.5) * field.dt, s) * dm;
            }
        }
    }
    total
}

/// `Ĥ_t(f) = M̂_t(Ψ_t f)`.
pub fn conv_h<F: Fn(f64) -> f64>(field: &MartingaleField, dist: &ServiceDistribution, f: F, t: f64) -> f64 {
    let psi = psi_op(dist, f, t);
    field_integral(field, psi, t)
}

/// `Ĥ_{t_n}(f_n)` for every grid time at once, where the test function may
/// change with the time index: `f(n, y)` is evaluated at age `y`.
///
/// The noise of cell `(i, k)` reaches age `(i + n - k) dt` at time `t_n`
/// (centre to grid point), so it is accumulated along the label `i - k`
/// and each grid time costs one pass over the labels.
pub fn conv_h_series<F>(field: &MartingaleField, dist: &ServiceDistribution, f: F) -> Vec<f64>
where
    F: Fn(usize, f64) -> f64,
{
    let (nx, nt, dt) = (field.nx, field.nt, field.dt);
    let sf_mid: Vec<f64> = (0..nx).map(|i| dist.sf((i as f64 + 0.5) * dt)).collect();
    let sf_grid: Vec<f64> = (0..=nx + nt).map(|j| dist.sf(j as f64 * dt)).collect();
    // label c = i - k stored at c + nt
    let mut acc = vec![0.0; nx + nt];
    let mut out = vec![0.0; nt + 1];
    for n in 1..=nt {
        let k = n - 1;
        let row = &field.increments[k * nx..(k + 1) * nx];
        for (i, &dm) in row.iter().enumerate() {
            if dm != 0.0 && sf_mid[i] > 0.0 {
                acc[i + nt - k] += dm / sf_mid[i];
            }
        }
        // labels c ≥ -(n-1); age index j = c + n ≥ 1
        let mut h = 0.0;
        for idx in (nt + 1 - n)..(nx + nt) {
            let a = acc[idx];
            if a == 0.0 {
                continue;
            }
            let j = idx + n - nt;
            let s = sf_grid[j];
            if s > 0.0 {
                h += f(n, j as f64 * dt) * s * a;
            }
        }
        out[n] = h;
    }
    out
}
