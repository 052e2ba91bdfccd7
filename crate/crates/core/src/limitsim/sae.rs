//! Residual of the stochastic age equation along a simulated limit path.
//!
//! Left side: `ν̂_t(φ(·, t))` from the operator representation. Right side:
//! `ν̂₀(φ(·, 0)) + ∫₀ᵗ ν̂_s(φ_x + φ_s - φ h) ds - M̂_t(φ) + ∫₀ᵗ φ(0, s) dK̂(s)`,
//! with the time integral by the left-endpoint rule. That rule is the
//! leading error, `dt/2` times the change of the integrand, so the residual
//! is first order in `dt` on a fixed realization.

use super::{conv_h_series, gamma_map, s_op, LimitError, MartingaleField, Nu0Hat};
use crate::dists::ServiceDistribution;
use std::sync::Arc;

type Bivariate = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A test function `φ(x, s)` together with `φ_x + φ_s`.
#[derive(Clone)]
pub struct SaeTestFunction {
    pub name: String,
    pub phi: Bivariate,
    pub transport: Bivariate,
}

impl SaeTestFunction {
    pub fn one() -> Self {
        SaeTestFunction { name: "one".into(), phi: Arc::new(|_, _| 1.0), transport: Arc::new(|_, _| 0.0) }
    }

    pub fn exp_decay() -> Self {
        SaeTestFunction {
            name: "exp_decay".into(),
            phi: Arc::new(|x: f64, _| (-x).exp()),
            transport: Arc::new(|x: f64, _| -(-x).exp()),
        }
    }
}

/// `|LHS - RHS|` at every grid time.
pub fn sae_residual(
    field: &MartingaleField,
    khat: &[f64],
    nu0: &Nu0Hat,
    dist: &ServiceDistribution,
    test: &SaeTestFunction,
) -> Result<Vec<f64>, LimitError> {
    if !dist.has_bounded_hazard() {
        return Err(LimitError::UnboundedHazard(dist.name().to_string()));
    }
    let (nt, dt) = (field.nt, field.dt);
    if khat.len() != nt + 1 {
        return Err(LimitError::Input(format!("K has {} points, grid has {}", khat.len(), nt + 1)));
    }
    let t = |n: usize| n as f64 * dt;
    let phi = &test.phi;
    let drift = |x: f64, s: f64| {
        let p = phi(x, s);
        (test.transport)(x, s) - if p == 0.0 { 0.0 } else { p * dist.hazard(x) }
    };

    let h_phi = conv_h_series(field, dist, |n, y| phi(y, t(n)));
    let h_drift = conv_h_series(field, dist, |n, y| drift(y, t(n)));

    // M̂_{t_n}(φ) with centre weights, cumulative in n
    let mut m_phi = vec![0.0; nt + 1];
    for k in 0..nt {
        let s = (k as f64 + 0.5) * dt;
        let row = &field.increments[k * field.nx..(k + 1) * field.nx];
        let inc: f64 = row
            .iter()
            .enumerate()
            .filter(|(_, &dm)| dm != 0.0)
            .map(|(i, &dm)| phi((i as f64 + 0.5) * dt, s) * dm)
            .sum();
        m_phi[k + 1] = m_phi[k] + inc;
    }

    let nu_drift: Vec<f64> = (0..=nt)
        .map(|n| {
            let s_n = t(n);
            s_op(nu0, dist, |x| drift(x, s_n), s_n) + gamma_map(khat, dt, dist, |x| drift(x, s_n), n) - h_drift[n]
        })
        .collect();

    let start = s_op(nu0, dist, |x| phi(x, 0.0), 0.0);
    let mut drift_integral = 0.0;
    let mut entry_integral = 0.0;
    let mut out = vec![0.0; nt + 1];
    for n in 0..=nt {
        if n > 0 {
            drift_integral += nu_drift[n - 1] * dt;
            entry_integral += 0.5 * (phi(0.0, t(n - 1)) + phi(0.0, t(n))) * (khat[n] - khat[n - 1]);
        }
        let tn = t(n);
        let lhs = s_op(nu0, dist, |x| phi(x, tn), tn) + gamma_map(khat, dt, dist, |x| phi(x, tn), n) - h_phi[n];
        let rhs = start + drift_integral - m_phi[n] + entry_integral;
        out[n] = (lhs - rhs).abs();
    }
    Ok(out)
}
