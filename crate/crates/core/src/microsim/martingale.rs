//! Departure martingales and the pathwise age representation.
//!
//! The counting part is an exact sum over departures. Compensators integrate
//! over every service spell on a grid aligned at the start time; pieces are
//! also cut at entry and exit times. Each piece is sampled at a fixed
//! fraction [`SAMPLE_OFFSET`] of its length, strictly before its right end,
//! so the hazard is never evaluated at an age the customer did not reach.
//! The rule is first order with a leading constant `1/2 - SAMPLE_OFFSET`.

use super::{PathRecord, SimError};

/// Position of the sample point inside each quadrature piece.
pub const SAMPLE_OFFSET: f64 = 0.4;

/// `Σ_j f(a_j)` over the ages in a snapshot.
pub fn eval_age_functional<F: Fn(f64) -> f64>(ages: &[f64], f: F) -> f64 {
    ages.iter().map(|&a| f(a)).sum()
}

/// `∫_{s0}^{s1} Σ_{j in service at r} integrand(age_j(r), r) dr` by the
/// per-spell offset rule.
fn spell_quadrature<F>(path: &PathRecord, s0: f64, s1: f64, dt: f64, integrand: F) -> Result<f64, SimError>
where
    F: Fn(f64, f64) -> f64,
{
    let mut total = 0.0;
    for sp in &path.spells {
        let a = sp.entry.max(s0);
        let b = sp.exit.min(s1);
        if b <= a {
            continue;
        }
        let mut p = a;
        loop {
            let k = ((p - s0) / dt).floor();
            let mut q = s0 + (k + 1.0) * dt;
            if q <= p {
                q = s0 + (k + 2.0) * dt;
            }
            let q = q.min(b);
            let r = p + SAMPLE_OFFSET * (q - p);
            let v = integrand(r - sp.entry, r);
            if !v.is_finite() {
                return Err(SimError::UnboundedHazard { age: r - sp.entry, time: r });
            }
            total += v * (q - p);
            if q >= b {
                break;
            }
            p = q;
        }
    }
    Ok(total)
}

/// `A_φ(t) = ∫₀ᵗ ⟨φ(·, s) h, ν_s⟩ ds`.
pub fn compensator<P>(path: &PathRecord, phi: P, t: f64, dt: f64) -> Result<f64, SimError>
where
    P: Fn(f64, f64) -> f64,
{
    let dist = &path.service;
    spell_quadrature(path, 0.0, t, dt, |age, s| {
        let v = phi(age, s);
        if v == 0.0 {
            0.0
        } else {
            v * dist.hazard(age)
        }
    })
}

/// `A_1(t)` exactly, as a sum of cumulative-hazard increments over spells.
pub fn compensator_unit_exact(path: &PathRecord, t: f64) -> f64 {
    let dist = &path.service;
    path.spells
        .iter()
        .filter_map(|sp| {
            let a = sp.entry.max(0.0);
            let b = sp.exit.min(t);
            (b > a).then(|| dist.cum_hazard(b - sp.entry) - dist.cum_hazard(a - sp.entry))
        })
        .sum()
}

/// `A_1` at every grid time `j dt`, `j = 0..=steps`, exactly.
pub fn compensator_unit_grid(path: &PathRecord, dt: f64, steps: usize) -> Vec<f64> {
    let dist = &path.service;
    let end = steps as f64 * dt;
    let mut inc = vec![0.0; steps + 1];
    for sp in &path.spells {
        let a = sp.entry.max(0.0);
        let b = sp.exit.min(end);
        if b <= a {
            continue;
        }
        let mut j = (a / dt).floor() as usize;
        let mut lo = a;
        let mut lo_h = dist.cum_hazard(lo - sp.entry);
        while lo < b && j < steps {
            let hi = ((j + 1) as f64 * dt).min(b);
            let hi_h = dist.cum_hazard(hi - sp.entry);
            inc[j + 1] += hi_h - lo_h;
            lo = hi;
            lo_h = hi_h;
            j += 1;
        }
    }
    for j in 1..=steps {
        inc[j] += inc[j - 1];
    }
    inc
}

/// `Q_φ(t) = Σ_{departures τ ≤ t} φ(age at τ, τ)`.
pub fn departure_sum<P: Fn(f64, f64) -> f64>(path: &PathRecord, phi: P, t: f64) -> f64 {
    path.departures.iter().take_while(|d| d.time <= t).map(|d| phi(d.age, d.time)).sum()
}

/// `M_φ(t) = Q_φ(t) - A_φ(t)`.
pub fn martingale<P>(path: &PathRecord, phi: P, t: f64, dt: f64) -> Result<f64, SimError>
where
    P: Fn(f64, f64) -> f64,
{
    Ok(departure_sum(path, &phi, t) - compensator(path, &phi, t, dt)?)
}

/// Worst discrepancy over `offsets` between `⟨f, ν_{s+u}⟩` and its
/// representation from time `s`: transported ages present at `s`, plus
/// surviving entries after `s`, minus the departure martingale of the
/// survival-shifted test function.
pub fn shift_consistency_check<F>(path: &PathRecord, s: f64, f: F, offsets: &[f64], dt: f64) -> Result<f64, SimError>
where
    F: Fn(f64) -> f64,
{
    let dist = &path.service;
    let start_ages = path.ages_at(s);
    let mut worst: f64 = 0.0;
    for &u in offsets {
        let t = s + u;
        if t > path.horizon + 1e-12 {
            return Err(SimError::Config(format!("check time {t} beyond horizon {}", path.horizon)));
        }
        let shifted = |age: f64, lag: f64| -> f64 {
            if lag <= 0.0 {
                return f(age);
            }
            let r = dist.survival_ratio(age, lag);
            if r == 0.0 {
                0.0
            } else {
                f(age + lag) * r
            }
        };
        let direct = eval_age_functional(&path.ages_at(t), &f);
        let transported: f64 = start_ages.iter().map(|&a| shifted(a, u)).sum();
        let entries: f64 =
            path.service_starts().filter(|&th| th > s && th <= t).map(|th| dist.sf(t - th) * f(t - th)).sum();
        let counted: f64 =
            path.departures.iter().filter(|d| d.time > s && d.time <= t).map(|d| shifted(d.age, t - d.time)).sum();
        let comp = spell_quadrature(path, s, t, dt, |age, r| {
            let v = shifted(age, t - r);
            if v == 0.0 {
                0.0
            } else {
                v * dist.hazard(age)
            }
        })?;
        let rep = transported + entries - (counted - comp);
        worst = worst.max((direct - rep).abs());
    }
    Ok(worst)
}

/// The shift check from time 0: `⟨f, ν_t⟩` against its representation by
/// initial ages, entries and the departure martingale.
pub fn representation_residual<F>(path: &PathRecord, f: F, grid: &[f64], dt: f64) -> Result<f64, SimError>
where
    F: Fn(f64) -> f64,
{
    shift_consistency_check(path, 0.0, f, grid, dt)
}

#[cfg(test)]
mod tests {
    use super::super::{simulate, InitialCondition, SimConfig};
    use super::*;
    use crate::dists::{ArrivalSpec, DistSpec, ServiceDistribution};
    use crate::rng;
    use std::sync::Arc;

    fn run(n: usize, dist: ServiceDistribution, lambda: f64, horizon: f64, seed: u64) -> PathRecord {
        let dist = Arc::new(dist);
        let mut cfg = SimConfig::new(n, ArrivalSpec::poisson(lambda, 0.0), dist.clone(), horizon);
        let mut r = rng::stream(seed, 1_000);
        cfg.initial = InitialCondition::stationary(&dist, n, n / 2, &mut r);
        cfg.seed = seed;
        simulate(&cfg).unwrap()
    }

    #[test]
    fn age_functional_basics() {
        assert_eq!(eval_age_functional(&[0.5, 1.5], |x| x), 2.0);
        assert_eq!(eval_age_functional(&[], |x: f64| x.exp()), 0.0);
        assert_eq!(eval_age_functional(&[0.1, 0.2, 0.3], |_| 1.0), 3.0);
    }

    #[test]
    fn exponential_unit_compensator_is_busy_time() {
        let p = run(8, ServiceDistribution::exponential(), 0.9, 4.0, 1);
        // occupied-server time from the state log
        let mut busy = 0.0;
        for w in p.states.windows(2) {
            busy += w[0].counters.in_service as f64 * (w[1].time - w[0].time);
        }
        let last = p.states.last().unwrap();
        busy += last.counters.in_service as f64 * (4.0 - last.time);
        let a = compensator(&p, |_, _| 1.0, 4.0, 0.37).unwrap();
        assert!((a - busy).abs() < 1e-9, "{a} vs {busy}");
        assert!((compensator_unit_exact(&p, 4.0) - busy).abs() < 1e-9);
    }

    #[test]
    fn grid_compensator_matches_pointwise() {
        let d = ServiceDistribution::from_spec(&DistSpec::lognormal(1.0)).unwrap();
        let p = run(12, d, 1.0, 3.0, 5);
        let g = compensator_unit_grid(&p, 0.01, 300);
        for j in [0, 1, 55, 300] {
            assert!((g[j] - compensator_unit_exact(&p, j as f64 * 0.01)).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_path_zero_compensator() {
        let cfg = SimConfig::new(3, ArrivalSpec::none(), Arc::new(ServiceDistribution::exponential()), 2.0);
        let p = simulate(&cfg).unwrap();
        assert_eq!(compensator(&p, |_, _| 1.0, 2.0, 0.1).unwrap(), 0.0);
        assert_eq!(martingale(&p, |_, _| 1.0, 2.0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn no_departures_means_minus_compensator() {
        let d = Arc::new(ServiceDistribution::from_spec(&DistSpec::uniform()).unwrap());
        let mut cfg = SimConfig::new(2, ArrivalSpec::none(), d, 0.05);
        cfg.initial = InitialCondition { x0: 2, initial_ages: vec![0.0, 0.0], residual_sampling: Default::default() };
        let p = simulate(&cfg).unwrap();
        if p.departures.is_empty() {
            let a = compensator(&p, |x, _| 1.0 + x, 0.05, 0.01).unwrap();
            assert_eq!(martingale(&p, |x, _| 1.0 + x, 0.05, 0.01).unwrap(), -a);
        }
    }

    #[test]
    fn lognormal_compensator_first_order() {
        let d = ServiceDistribution::from_spec(&DistSpec::lognormal(1.0)).unwrap();
        let p = run(10, d, 1.0, 5.0, 2);
        let a: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|&dt| compensator(&p, |_, _| 1.0, 5.0, dt).unwrap()).collect();
        let exact = compensator_unit_exact(&p, 5.0);
        let e1 = (a[0] - exact).abs();
        let e2 = (a[1] - exact).abs();
        let e3 = (a[2] - exact).abs();
        assert!(e2 / e1 > 0.3 && e2 / e1 < 0.7, "{e1} {e2}");
        assert!(e3 / e2 > 0.3 && e3 / e2 < 0.7, "{e2} {e3}");
        // Richardson self-consistency: successive differences shrink like dt
        assert!((a[1] - a[2]).abs() < 0.7 * (a[0] - a[1]).abs());
    }

    #[test]
    fn representation_exponential_small_residual() {
        let p = run(20, ServiceDistribution::exponential(), 1.0, 5.0, 3);
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 * 0.5).collect();
        let dt = 1e-3;
        let r = representation_residual(&p, |_| 1.0, &grid, dt).unwrap();
        assert!(r <= 5.0 * dt, "{r}");
        // s = 0 shift check is the same computation
        assert_eq!(r, shift_consistency_check(&p, 0.0, |_| 1.0, &grid, dt).unwrap());
    }

    #[test]
    fn representation_before_first_start_is_exact() {
        let dist = Arc::new(ServiceDistribution::exponential());
        let cfg = SimConfig::new(4, ArrivalSpec::poisson(0.5, 0.0), dist, 10.0);
        let p = simulate(&cfg).unwrap();
        let first = p.service_starts().next().unwrap_or(10.0);
        let grid = [0.0, 0.5 * first, 0.99 * first];
        assert_eq!(representation_residual(&p, |x| x.cos(), &grid, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn shift_check_exponential() {
        let p = run(20, ServiceDistribution::exponential(), 1.0, 5.0, 4);
        let grid: Vec<f64> = (1..=8).map(|i| i as f64 * 0.5).collect();
        let dt = 1e-3;
        assert!(shift_consistency_check(&p, 1.0, |_| 1.0, &grid, dt).unwrap() <= 5.0 * dt);
        let d = p.service.clone();
        let phi_half = move |x: f64| d.survival_ratio(x, 0.5);
        assert!(shift_consistency_check(&p, 1.0, phi_half, &grid, dt).unwrap() <= 5.0 * dt);
    }
}
