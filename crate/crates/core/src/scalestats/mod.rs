//! Fluid and diffusion scaling of simulated paths, and the statistics used
//! to compare them with the limit objects.

pub mod verify;

use crate::dists::{renewal_function, ArrivalSpec, DistError, ServiceDistribution};
use crate::fluid::FluidPath;
use crate::microsim::{compensator_unit_exact, PathRecord};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// `E, X, K, D` and mass in service on a time grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Series {
    pub e: Vec<f64>,
    pub x: Vec<f64>,
    pub k: Vec<f64>,
    pub d: Vec<f64>,
    pub mass: Vec<f64>,
}

impl Series {
    fn map2(&self, other: &Series, f: impl Fn(f64, f64) -> f64) -> Series {
        let m = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect();
        Series {
            e: m(&self.e, &other.e),
            x: m(&self.x, &other.x),
            k: m(&self.k, &other.k),
            d: m(&self.d, &other.d),
            mass: m(&self.mass, &other.mass),
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Series {
        self.map2(self, |a, _| f(a))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Scaling {
    /// `Y / N`.
    Fluid,
    /// `√N (Y / N - Ȳ)`, keeping the centring `Ȳ`.
    Diffusion { centre: Series },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaledPath {
    pub n: usize,
    pub times: Vec<f64>,
    pub values: Series,
    pub scaling: Scaling,
}

#[derive(Debug, thiserror::Error)]
pub enum ScaleError {
    #[error("time {0} outside the path or fluid horizon")]
    Grid(f64),
}

/// Raw counters at `times`, right-continuous.
pub fn raw_series(path: &PathRecord, times: &[f64]) -> Result<Series, ScaleError> {
    let mut s = Series::default();
    for &t in times {
        if !(0.0..=path.horizon).contains(&t) {
            return Err(ScaleError::Grid(t));
        }
        let c = path.counters_at(t);
        s.e.push(c.e as f64);
        s.x.push(c.x as f64);
        s.k.push(c.k as f64);
        s.d.push(c.d as f64);
        s.mass.push(c.in_service as f64);
    }
    Ok(s)
}

pub fn fluid_scale(path: &PathRecord, times: &[f64]) -> Result<ScaledPath, ScaleError> {
    let n = path.n as f64;
    Ok(ScaledPath {
        n: path.n,
        times: times.to_vec(),
        values: raw_series(path, times)?.map(|v| v / n),
        scaling: Scaling::Fluid,
    })
}

/// Fluid values at `times`; `D̄ = X̄(0) - X̄ + Ē`.
pub fn fluid_series(fluid: &FluidPath, arrival: &ArrivalSpec, times: &[f64]) -> Result<Series, ScaleError> {
    let x0 = fluid.xbar[0];
    let mut s = Series::default();
    for &t in times {
        if t < 0.0 || t > fluid.horizon() + 1e-12 {
            return Err(ScaleError::Grid(t));
        }
        let (e, x) = (arrival.fluid_cumulative(t), fluid.x_at(t));
        s.e.push(e);
        s.x.push(x);
        s.k.push(fluid.k_at(t));
        s.d.push(x0 - x + e);
        s.mass.push(fluid.b_at(t));
    }
    Ok(s)
}

pub fn diffusion_scale(
    path: &PathRecord,
    fluid: &FluidPath,
    arrival: &ArrivalSpec,
    times: &[f64],
) -> Result<ScaledPath, ScaleError> {
    let n = path.n as f64;
    let centre = fluid_series(fluid, arrival, times)?;
    let root = n.sqrt();
    let values = raw_series(path, times)?.map2(&centre, |raw, c| root * (raw / n - c));
    Ok(ScaledPath { n: path.n, times: times.to_vec(), values, scaling: Scaling::Diffusion { centre } })
}

impl ScaledPath {
    /// Raw counters recovered from the scaled values. Counters are integers,
    /// so rounding removes the floating-point residue and the recovery is exact.
    pub fn unscale(&self) -> Series {
        let n = self.n as f64;
        match &self.scaling {
            Scaling::Fluid => self.values.map(|v| (v * n).round()),
            Scaling::Diffusion { centre } => self.values.map2(centre, |v, c| ((v / n.sqrt() + c) * n).round()),
        }
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs nonempty samples");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at level 5%.
pub fn ks_critical_5pct(na: usize, nb: usize) -> f64 {
    1.358 * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt()
}

/// Realized quadratic variation `Σ (ΔX)²` of a gridded path.
pub fn qv_estimate(path: &[f64]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub value: f64,
    #[serde(with = "threshold")]
    pub threshold: f64,
    pub pass: bool,
    pub replicates: usize,
    pub standard_error: Option<f64>,
}

impl TestReport {
    /// A statistic that passes when `value <= threshold`.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64, replicates: usize, se: Option<f64>) -> Self {
        TestReport { name: name.into(), value, threshold, pass: value <= threshold, replicates, standard_error: se }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: value={:.6} threshold={:.6} n={}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold,
            self.replicates
        )
    }
}

/// Threshold fields as JSON: a number, or `"inf"` for a check that cannot fail.
pub mod threshold {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(v),
            Raw::Text(t) => match t.to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
            },
        }
    }
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let (m, _) = mean_and_se(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Replicate count from which the normal approximation is used.
pub const NORMAL_APPROX_MIN: usize = 1000;
const BOOTSTRAP_RESAMPLES: usize = 2000;

/// One-sided 95% upper confidence bound on the mean: normal approximation
/// from [`NORMAL_APPROX_MIN`] replicates, percentile bootstrap below.
pub fn upper_confidence_95(xs: &[f64], seed: u64) -> (f64, f64) {
    let (m, se) = mean_and_se(xs);
    if xs.len() >= NORMAL_APPROX_MIN {
        return (m + 1.645 * se, se);
    }
    if xs.len() < 2 {
        return (m, se);
    }
    let mut r = rng::stream(seed, 0);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..xs.len()).map(|_| xs[r.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    (means[(0.95 * BOOTSTRAP_RESAMPLES as f64) as usize], se)
}

/// Upper confidence bound on `E[(A₁(T)/N)^k]` against `k! U(T)^k`.
pub fn moment_bound_check(
    paths: &[PathRecord],
    dist: &ServiceDistribution,
    horizon: f64,
    k: u32,
) -> Result<TestReport, DistError> {
    assert!((1..=3).contains(&k), "moment order must be 1, 2 or 3");
    let u = renewal_function(dist, horizon, (horizon / 2000.0).min(1e-3))?.at(horizon);
    let factorial = (1..=k).product::<u32>() as f64;
    let bound = factorial * u.powi(k as i32);
    let xs: Vec<f64> = paths.iter().map(|p| (compensator_unit_exact(p, horizon) / p.n as f64).powi(k as i32)).collect();
    let (ucb, se) = if xs.is_empty() { (0.0, 0.0) } else { upper_confidence_95(&xs, k as u64) };
    Ok(TestReport::at_most(
        format!("moment k={k} {} T={horizon}", dist.name()),
        ucb,
        bound,
        xs.len(),
        Some(se).filter(|s| s.is_finite()),
    ))
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
