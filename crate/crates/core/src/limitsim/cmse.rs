//! The centered many-server map: `(Ê, x̂₀, Z) ↦ (K̂, X̂, v̂)`.
//!
//! Eliminating `K` and `v` leaves a Volterra equation for `X` alone,
//!
//! ```text
//! X(t) = (x0 - v0) S(t) + Z(t) + E(t) - ∫ g(t-s) E(s) ds + ∫ g(t-s) F(X(s)) ds
//! ```
//!
//! with `F = 0`, `x⁺` or the identity in the sub-, critical and supercritical
//! regimes and `v0 = Z(0)`. Convolutions against `g` use cellwise trapezoid
//! values of the integrand times exact increments of `G`, which is the same
//! weight set the Γ map uses with `f ≡ 1`. Each step has a scalar equation in
//! `X_n` that is piecewise linear, so it is solved in closed form.

use super::LimitError;
use crate::dists::ServiceDistribution;
use crate::fluid::Regime;

#[derive(Clone, Debug, PartialEq)]
pub struct CmseSolution {
    pub k: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// Nonlinearity of the Volterra form: `X - v` as a function of `X`.
fn excess(regime: Regime, x: f64) -> f64 {
    match regime {
        Regime::Subcritical => 0.0,
        Regime::Critical => x.max(0.0),
        _ => x,
    }
}

/// `v = X - F(X)`, the limit of the centered number in service.
pub fn occupancy(regime: Regime, x: f64) -> f64 {
    match regime {
        Regime::Subcritical => x,
        Regime::Critical => x.min(0.0),
        _ => 0.0,
    }
}

/// `dG[m] = S((m-1) dt) - S(m dt)` for `m = 1..=nt`; index 0 unused.
pub(crate) fn cell_masses(dist: &ServiceDistribution, dt: f64, nt: usize) -> (Vec<f64>, Vec<f64>) {
    let sf: Vec<f64> = (0..=nt).map(|m| dist.sf(m as f64 * dt)).collect();
    let mut dg = vec![0.0; nt + 1];
    for m in 1..=nt {
        dg[m] = sf[m - 1] - sf[m];
    }
    (sf, dg)
}

/// `∫₀^{t_n} g(t_n - s) y(s) ds` for every `n`.
pub(crate) fn g_convolution(y: &[f64], dg: &[f64]) -> Vec<f64> {
    let nt = y.len() - 1;
    let mut out = vec![0.0; nt + 1];
    for n in 1..=nt {
        let mut acc = 0.0;
        for j in 1..=n {
            acc += 0.5 * (y[j - 1] + y[j]) * dg[n - j + 1];
        }
        out[n] = acc;
    }
    out
}

pub fn solve_cmse(
    regime: Regime,
    ehat: &[f64],
    x0: f64,
    z: &[f64],
    dist: &ServiceDistribution,
    dt: f64,
) -> Result<CmseSolution, LimitError> {
    if matches!(regime, Regime::Mixed) {
        return Err(LimitError::MixedRegime);
    }
    if ehat.is_empty() || ehat.len() != z.len() {
        return Err(LimitError::Input(format!("path lengths differ: E has {}, Z has {}", ehat.len(), z.len())));
    }
    if !(dt > 0.0) {
        return Err(LimitError::Input(format!("dt must be positive, got {dt}")));
    }
    let v0 = occupancy(regime, x0);
    if (z[0] - v0).abs() > 1e-9 * (1.0 + v0.abs()) {
        return Err(LimitError::Input(format!(
            "Z(0) = {} is inconsistent with x0 = {x0}: the regime requires {v0}",
            z[0]
        )));
    }
    let nt = ehat.len() - 1;
    let (sf, dg) = cell_masses(dist, dt, nt);
    let ce = g_convolution(ehat, &dg);
    let r: Vec<f64> = (0..=nt).map(|n| (x0 - v0) * sf[n] + z[n] + ehat[n] - ce[n]).collect();

    let mut x = vec![0.0; nt + 1];
    let mut fx = vec![0.0; nt + 1];
    x[0] = r[0];
    fx[0] = excess(regime, x[0]);
    let c = 0.5 * dg.get(1).copied().unwrap_or(0.0);
    for n in 1..=nt {
        let mut known = 0.5 * fx[n - 1] * dg[1];
        for j in 1..n {
            known += 0.5 * (fx[j - 1] + fx[j]) * dg[n - j + 1];
        }
        let y = r[n] + known;
        let xn = match regime {
            Regime::Subcritical => y,
            Regime::Critical if y < 0.0 => y,
            _ => y / (1.0 - c),
        };
        x[n] = xn;
        fx[n] = excess(regime, xn);
    }
    let k = match regime {
        // no idle-server correction below criticality
        Regime::Subcritical => ehat.to_vec(),
        _ => (0..=nt).map(|n| ehat[n] + x0 - v0 - fx[n]).collect(),
    };
    let v = x.iter().map(|&xn| occupancy(regime, xn)).collect();
    Ok(CmseSolution { k, x, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::{renewal_function, DistSpec};

    fn exp() -> ServiceDistribution {
        ServiceDistribution::exponential()
    }

    #[test]
    fn zero_inputs_give_zero() {
        for r in [Regime::Subcritical, Regime::Critical, Regime::Supercritical] {
            let z = vec![0.0; 51];
            let s = solve_cmse(r, &z, 0.0, &z, &exp(), 0.02).unwrap();
            assert!(s.k.iter().chain(&s.x).chain(&s.v).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mixed_and_inconsistent_inputs_rejected() {
        let z = vec![0.0; 5];
        assert!(matches!(solve_cmse(Regime::Mixed, &z, 0.0, &z, &exp(), 0.1), Err(LimitError::MixedRegime)));
        // subcritical needs Z(0) = x0
        assert!(solve_cmse(Regime::Subcritical, &z, 1.0, &z, &exp(), 0.1).is_err());
        assert!(solve_cmse(Regime::Critical, &z, 1.0, &z, &exp(), 0.1).is_ok());
        assert!(solve_cmse(Regime::Critical, &z, -1.0, &z, &exp(), 0.1).is_err());
    }

    #[test]
    fn subcritical_k_is_e() {
        let e: Vec<f64> = (0..=100).map(|n| (n as f64 * 0.37).sin()).collect();
        let z: Vec<f64> = (0..=100).map(|n| 0.5 + 0.1 * n as f64).collect();
        let s = solve_cmse(Regime::Subcritical, &e, 0.5, &z, &exp(), 0.01).unwrap();
        assert_eq!(s.k, e);
        assert_eq!(s.v, s.x);
    }

    #[test]
    fn balance_equations_hold_on_grid() {
        let d = ServiceDistribution::from_spec(&DistSpec::lognormal(1.0)).unwrap();
        let dt = 0.01;
        let e: Vec<f64> = (0..=300).map(|n| (n as f64 * 0.05).sin() - 0.01 * n as f64).collect();
        for (regime, x0) in [(Regime::Critical, 0.3), (Regime::Supercritical, -0.4)] {
            let z: Vec<f64> = (0..=300).map(|n| occupancy(regime, x0) + 0.2 * (n as f64 * 0.02).cos() - 0.2).collect();
            let s = solve_cmse(regime, &e, x0, &z, &d, dt).unwrap();
            let (_, dg) = cell_masses(&d, dt, 300);
            let ck = g_convolution(&s.k, &dg);
            let v0 = s.v[0];
            for n in 0..=300 {
                // v = Z + K - ∫gK
                assert!((s.v[n] - (z[n] + s.k[n] - ck[n])).abs() < 1e-12);
                // K = E + x0 - X + v - v(0)
                assert!((s.k[n] - (e[n] + x0 - s.x[n] + s.v[n] - v0)).abs() < 1e-12);
                assert_eq!(s.v[n], occupancy(regime, s.x[n]));
            }
            assert_eq!(s.k[0], 0.0);
        }
    }

    #[test]
    fn lipschitz_bound_on_smooth_perturbation() {
        let d = ServiceDistribution::from_spec(&DistSpec::gamma(2.0)).unwrap();
        let (dt, nt) = (0.01, 200);
        let u = renewal_function(&d, 2.0, 1e-3).unwrap().at(2.0);
        let e: Vec<f64> = (0..=nt).map(|n| (n as f64 * 0.03).sin()).collect();
        let z = vec![0.0; nt + 1];
        let eps = 0.05;
        let e2: Vec<f64> = e.iter().enumerate().map(|(n, v)| v + eps * (n as f64 * 0.1).cos()).collect();
        let z2: Vec<f64> = (0..=nt).map(|n| eps * (n as f64 * 0.07).sin()).collect();
        let a = solve_cmse(Regime::Critical, &e, 0.1, &z, &d, dt).unwrap();
        let b = solve_cmse(Regime::Critical, &e2, 0.1 + eps, &z2, &d, dt).unwrap();
        let dev = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let worst = dev(&a.k, &b.k).max(dev(&a.x, &b.x)).max(dev(&a.v, &b.v));
        assert!(worst <= 3.0 * (1.0 + u) * eps, "{worst} vs {}", 3.0 * (1.0 + u) * eps);
    }

    #[test]
    fn supercritical_exponential_is_ode() {
        // F = id, exponential: X' = E' - E + ... ; with E ≡ 0, Z ≡ 0 the
        // solution stays at x0.
        let z = vec![0.0; 101];
        let s = solve_cmse(Regime::Supercritical, &z, 0.7, &z, &exp(), 0.01).unwrap();
        for &x in &s.x {
            assert!((x - 0.7).abs() < 1e-12, "{x}");
        }
    }
}
