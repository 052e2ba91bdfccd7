//! Renewal function `U = Σ_{n≥0} G^{*n}` via the renewal equation
//! `U(t) = 1 + ∫₀ᵗ U(t - s) dG(s)`.
//!
//! The Stieltjes form is stepped with the trapezoid rule on each cell, using
//! cell increments of `G` rather than density values so laws with a singular
//! density at the origin are handled.

use super::{DistError, ServiceDistribution};

#[derive(Clone, Debug)]
pub struct RenewalFunction {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl RenewalFunction {
    pub fn horizon(&self) -> f64 {
        self.dt * (self.values.len() - 1) as f64
    }

    /// Linear interpolation; clamps to the grid.
    pub fn at(&self, t: f64) -> f64 {
        let pos = (t / self.dt).max(0.0);
        let i = pos.floor() as usize;
        if i + 1 >= self.values.len() {
            return *self.values.last().unwrap();
        }
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

pub fn renewal_function(dist: &ServiceDistribution, horizon: f64, dt: f64) -> Result<RenewalFunction, DistError> {
    if !(dt > 0.0) || !(horizon >= 0.0) || (horizon > 0.0 && dt > horizon) {
        return Err(DistError::InvalidInput(format!("need 0 < dt <= T, got dt={dt}, T={horizon}")));
    }
    let n = (horizon / dt).round() as usize;
    let cdf: Vec<f64> = (0..=n).map(|k| dist.cdf(k as f64 * dt)).collect();
    let inc: Vec<f64> = (0..=n).map(|k| if k == 0 { 0.0 } else { cdf[k] - cdf[k - 1] }).collect();
    let mut u = vec![0.0; n + 1];
    u[0] = 1.0;
    for m in 1..=n {
        let mut acc = 1.0 + 0.5 * u[m - 1] * inc[1];
        for k in 2..=m {
            acc += 0.5 * (u[m - k] + u[m - k + 1]) * inc[k];
        }
        let denom = 1.0 - 0.5 * inc[1];
        let v = acc / denom;
        if !v.is_finite() || denom <= 0.0 {
            return Err(DistError::Divergence(m));
        }
        u[m] = v.max(u[m - 1]);
    }
    Ok(RenewalFunction { dt, values: u })
}

#[cfg(test)]
mod tests {
    use super::super::DistSpec;
    use super::*;

    /// Σₙ P(Poisson(rate t) ≥ shape·n): the renewal function of a Gamma law
    /// with integer shape, from the Erlang convolution closure.
    fn erlang_series(shape: u32, rate: f64, t: f64) -> f64 {
        let lam = rate * t;
        let mut pmf = vec![(-lam).exp()];
        for j in 1..400 {
            let p = pmf[j - 1] * lam / j as f64;
            pmf.push(p);
        }
        let tail = |m: usize| -> f64 { 1.0 - pmf[..m.min(pmf.len())].iter().sum::<f64>() };
        (0..100).map(|n| tail(shape as usize * n).max(0.0)).sum()
    }

    #[test]
    fn starts_at_one_and_monotone() {
        for spec in super::super::builtin_specs() {
            let d = ServiceDistribution::from_spec(&spec).unwrap();
            let r = renewal_function(&d, 3.0, 1e-2).unwrap();
            assert_eq!(r.values[0], 1.0);
            assert!(r.values.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn exponential_is_linear() {
        let d = ServiceDistribution::exponential();
        let r = renewal_function(&d, 1.0, 1e-3).unwrap();
        assert!((r.at(1.0) - 2.0).abs() < 1e-3);
        for (k, v) in r.values.iter().enumerate() {
            assert!((v - (1.0 + k as f64 * 1e-3)).abs() < 1e-3);
        }
        assert!((erlang_series(1, 1.0, 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_two_matches_series() {
        let d = ServiceDistribution::from_spec(&DistSpec::gamma(2.0)).unwrap();
        let r = renewal_function(&d, 2.0, 1e-3).unwrap();
        let oracle = erlang_series(2, 2.0, 2.0);
        assert!((oracle - (2.75 + (-8.0f64).exp() / 4.0)).abs() < 1e-12);
        assert!((r.at(2.0) - oracle).abs() < 1e-3, "{} vs {oracle}", r.at(2.0));
    }

    #[test]
    fn rejects_bad_step() {
        let d = ServiceDistribution::exponential();
        assert!(renewal_function(&d, 1.0, 0.0).is_err());
        assert!(renewal_function(&d, 1.0, 2.0).is_err());
    }
}
