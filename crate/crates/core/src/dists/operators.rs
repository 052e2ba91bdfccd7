//! Survival-shift operators.
//!
//! `phi_op(f, t)` transports a test function `t` units of age forward and
//! weights it by the probability of surviving that long; `psi_op` is the
//! two-variable version whose shift shrinks to zero at the terminal time.

use super::ServiceDistribution;

/// `x ↦ f(x + t) S(x + t) / S(x)`; zero where `S(x) = 0`.
pub fn phi_op<'a, F>(dist: &'a ServiceDistribution, f: F, t: f64) -> impl Fn(f64) -> f64 + 'a
where
    F: Fn(f64) -> f64 + 'a,
{
    move |x| {
        if t == 0.0 {
            return if dist.sf(x) > 0.0 { f(x) } else { 0.0 };
        }
        let r = dist.survival_ratio(x, t);
        if r == 0.0 {
            0.0
        } else {
            f(x + t) * r
        }
    }
}

/// `(x, s) ↦ f(x + (t - s)⁺) S(x + (t - s)⁺) / S(x)`.
pub fn psi_op<'a, F>(dist: &'a ServiceDistribution, f: F, t: f64) -> impl Fn(f64, f64) -> f64 + 'a
where
    F: Fn(f64) -> f64 + 'a,
{
    move |x, s| {
        let u = (t - s).max(0.0);
        if dist.sf(x) <= 0.0 {
            return 0.0;
        }
        if u == 0.0 {
            return f(x);
        }
        let r = dist.survival_ratio(x, u);
        if r == 0.0 {
            0.0
        } else {
            f(x + u) * r
        }
    }
}

/// `S(x) / S(x - t)` when `t <= x`, otherwise `S(x)`.
pub fn psi_h(dist: &ServiceDistribution, x: f64, t: f64) -> f64 {
    if dist.sf(x) <= 0.0 {
        return 0.0;
    }
    if t <= x {
        dist.survival_ratio(x - t, t)
    } else {
        dist.sf(x)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{builtin_specs, DistSpec, ServiceDistribution};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laws() -> Vec<ServiceDistribution> {
        builtin_specs().iter().map(|s| ServiceDistribution::from_spec(s).unwrap()).collect()
    }

    #[test]
    fn phi_zero_is_identity() {
        let d = ServiceDistribution::from_spec(&DistSpec::lognormal(0.8)).unwrap();
        let f = |x: f64| (3.0 * x).sin();
        let p = phi_op(&d, f, 0.0);
        for i in 0..50 {
            let x = i as f64 * 0.1;
            assert_eq!(p(x), f(x));
        }
    }

    #[test]
    fn exponential_phi_of_one() {
        let d = ServiceDistribution::exponential();
        let p = phi_op(&d, |_| 1.0, 0.7);
        for i in 0..20 {
            assert!((p(i as f64 * 0.37) - (-0.7f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn semigroup_on_random_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = |x: f64| 1.0 / (1.0 + x * x);
        for d in laws() {
            for _ in 0..200 {
                let x: f64 = rng.random::<f64>() * 1.9;
                let s: f64 = rng.random::<f64>() * 0.05;
                let t: f64 = rng.random::<f64>() * 0.05;
                let lhs = phi_op(&d, phi_op(&d, f, s), t)(x);
                let rhs = phi_op(&d, f, s + t)(x);
                assert!((lhs - rhs).abs() < 1e-12, "{}: {lhs} vs {rhs}", d.name());
            }
        }
    }

    #[test]
    fn psi_phi_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = |x: f64| (-x).exp() + 0.5;
        for d in laws() {
            for _ in 0..200 {
                let x: f64 = rng.random::<f64>() * 1.9;
                let s: f64 = rng.random::<f64>() * 0.05;
                let t: f64 = rng.random::<f64>() * 0.05;
                let u: f64 = rng.random::<f64>() * s;
                let lhs = psi_op(&d, phi_op(&d, f, t), s)(x, u);
                let rhs = psi_op(&d, f, s + t)(x, u);
                assert!((lhs - rhs).abs() < 1e-12, "{}", d.name());
            }
        }
    }

    #[test]
    fn psi_terminal_time_and_sup_bound() {
        let f = |x: f64| (2.0 * x).cos();
        for d in laws() {
            let p = psi_op(&d, f, 1.3);
            for i in 0..40 {
                let x = i as f64 * 0.045;
                assert_eq!(p(x, 1.3), f(x));
                for j in 0..10 {
                    assert!(p(x, j as f64 * 0.1).abs() <= 1.0 + 1e-15);
                }
            }
        }
        let e = ServiceDistribution::exponential();
        let p = psi_op(&e, |_| 1.0, 2.0);
        assert!((p(0.4, 0.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((p(3.0, 0.0) - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn psi_h_boundary_values_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for d in laws() {
            for i in 0..20 {
                let v = i as f64 * 0.09;
                assert_eq!(psi_h(&d, 0.0, v), 1.0);
                assert_eq!(psi_h(&d, v, 0.0), if d.sf(v) > 0.0 { 1.0 } else { 0.0 });
            }
            for _ in 0..300 {
                let x: f64 = rng.random::<f64>() * 1.5;
                let s: f64 = rng.random::<f64>() * 0.4;
                let u: f64 = rng.random::<f64>() * s;
                let lhs = psi_h(&d, x + s - u, s) / psi_h(&d, x, u);
                let rhs = d.sf(x + s - u) / d.sf(x);
                assert!((lhs - rhs).abs() < 1e-12 * rhs.max(1.0), "{}", d.name());
                // bounded by one and nonincreasing in t
                let a = psi_h(&d, x, u);
                let b = psi_h(&d, x, s);
                assert!(a <= 1.0 + 1e-15 && b <= a + 1e-15);
            }
        }
        let e = ServiceDistribution::exponential();
        for &(x, t) in &[(0.5, 0.2), (0.5, 0.9), (2.0, 2.0)] {
            assert!((psi_h(&e, x, t) - (-t.min(x)).exp()).abs() < 1e-15);
        }
    }
}
