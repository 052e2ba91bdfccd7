//! Randomised invariants across the public API.

use msq_core::dists::{builtin_specs, phi_op, psi_op, ArrivalSpec, ServiceDistribution};
use msq_core::fluid::Regime;
use msq_core::limitsim::solve_cmse;
use msq_core::microsim::{simulate, InitialCondition, SimConfig};
use msq_core::rng::substream;
use msq_core::scalestats::{fluid_scale, ks_distance, raw_series};
use proptest::prelude::*;
use std::sync::Arc;

fn law(idx: usize) -> ServiceDistribution {
    let specs = builtin_specs();
    ServiceDistribution::from_spec(&specs[idx % specs.len()]).unwrap()
}

fn run(n: usize, idx: usize, load: f64, fill: f64, seed: u64) -> msq_core::microsim::PathRecord {
    let service = Arc::new(law(idx));
    let mut cfg = SimConfig::new(n, ArrivalSpec::poisson(load, 0.0), service.clone(), 4.0);
    let x0 = (fill * n as f64).round() as usize;
    cfg.initial = InitialCondition::stationary(&service, n, x0, &mut substream(seed, 0, 3));
    cfg.seed = seed;
    simulate(&cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn balance_identities_hold_on_random_systems(
        n in 1usize..30, idx in 0usize..16, load in 0.2f64..1.8, fill in 0.0f64..1.6, seed in any::<u64>()
    ) {
        let path = run(n, idx, load, fill, seed);
        prop_assert_eq!(path.check_invariants(), Ok(()));
        for st in &path.states {
            let c = st.counters;
            prop_assert_eq!(c.in_service, c.x.min(n as u64));
            prop_assert_eq!(c.x + c.d, path.x0 as u64 + c.e);
        }
    }

    #[test]
    fn fluid_scaling_round_trips(n in 1usize..40, idx in 0usize..16, seed in any::<u64>()) {
        let path = run(n, idx, 1.0, 0.5, seed);
        let times: Vec<f64> = (0..=8).map(|i| i as f64 * 0.5).collect();
        let raw = raw_series(&path, &times).unwrap();
        prop_assert_eq!(fluid_scale(&path, &times).unwrap().unscale(), raw);
    }

    #[test]
    fn survival_shift_is_a_semigroup(idx in 0usize..16, x in 0.0f64..3.0, s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let d = law(idx);
        prop_assume!(d.sf(x + s + t) > 1e-8);
        let f = |y: f64| (1.0 + y).ln() + 0.3;
        let lhs = phi_op(&d, phi_op(&d, f, t), s)(x);
        let rhs = phi_op(&d, f, s + t)(x);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn two_variable_shift_reduces_to_lagged_shift(idx in 0usize..16, x in 0.0f64..3.0, s in 0.0f64..2.0, t in 0.0f64..4.0) {
        let d = law(idx);
        prop_assume!(d.sf(x) > 0.0);
        let f = |y: f64| (-y).exp();
        let lhs = psi_op(&d, f, t)(x, s);
        let rhs = phi_op(&d, f, (t - s).max(0.0))(x);
        prop_assert!((lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn ks_distance_is_a_symmetric_fraction(
        a in prop::collection::vec(-5.0f64..5.0, 1..60), b in prop::collection::vec(-5.0f64..5.0, 1..60)
    ) {
        let ab = ks_distance(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, ks_distance(&b, &a));
        prop_assert_eq!(ks_distance(&a, &a), 0.0);
    }

    #[test]
    fn subcritical_idle_correction_vanishes(
        e in prop::collection::vec(-2.0f64..2.0, 2..80), x0 in -3.0f64..3.0, idx in 0usize..16
    ) {
        let d = law(idx);
        let mut z = vec![0.0; e.len()];
        z[0] = x0;
        let sol = solve_cmse(Regime::Subcritical, &e, x0, &z, &d, 0.05).unwrap();
        prop_assert_eq!(sol.k, e);
    }

    #[test]
    fn cmse_is_lipschitz_in_its_inputs(
        e in prop::collection::vec(-2.0f64..2.0, 41), bump in prop::collection::vec(-0.1f64..0.1, 41),
        x0 in -2.0f64..2.0, idx in 0usize..16, critical in any::<bool>()
    ) {
        let d = law(idx);
        let regime = if critical { Regime::Critical } else { Regime::Supercritical };
        let v0 = msq_core::limitsim::occupancy(regime, x0);
        let mut z = vec![0.0; e.len()];
        z[0] = v0;
        let e2: Vec<f64> = e.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let a = solve_cmse(regime, &e, x0, &z, &d, 0.05).unwrap();
        let b = solve_cmse(regime, &e2, x0, &z, &d, 0.05).unwrap();
        let input = bump.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let output = a.x.iter().zip(&b.x).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        // horizon 2 with unit-mean service: the Gronwall constant stays below e^2 + 1
        prop_assert!(output <= (2.0f64.exp() + 2.0) * input + 1e-12, "{output} vs {input}");
    }
}
