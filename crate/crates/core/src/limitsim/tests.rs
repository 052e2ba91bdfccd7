use super::*;
use crate::dists::{DistSpec, RateFn};
use crate::fluid::{solve_fluid, FluidInit};

fn exp() -> Arc<ServiceDistribution> {
    Arc::new(ServiceDistribution::exponential())
}

fn model_at(dist: Arc<ServiceDistribution>, init: FluidInit, dt: f64, horizon: f64) -> LimitModel {
    let fluid = solve_fluid(&init, dist, horizon, dt.min(0.01)).unwrap();
    let grid = LimitGrid::for_fluid(&fluid, dt, horizon).unwrap();
    LimitModel::new(Arc::new(fluid), grid).unwrap()
}

fn critical(dist: Arc<ServiceDistribution>, dt: f64, horizon: f64) -> (LimitModel, ArrivalSpec) {
    let arr = ArrivalSpec::poisson(1.0, 0.0);
    let m = model_at(dist, FluidInit::at_invariant(&arr, 1.0), dt, horizon);
    (m, arr)
}

fn var(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
    cov / (var(a) * var(b)).sqrt()
}

#[test]
fn gamma_map_linear_k_exponential() {
    let dt = 0.01;
    let k: Vec<f64> = (0..=100).map(|n| n as f64 * dt).collect();
    let v = gamma_map(&k, dt, &exp(), |_| 1.0, 100);
    // 1 - ∫₀¹ u e^{u-1} du and the integral equals e^{-1}
    assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-4, "{v}");
    assert_eq!(gamma_map(&[0.0; 101], dt, &exp(), |x: f64| x.cos(), 100), 0.0);
}

#[test]
fn gamma_map_unit_function_is_k_minus_convolution() {
    let d = ServiceDistribution::from_spec(&DistSpec::lognormal(1.0)).unwrap();
    let dt = 0.02;
    let k: Vec<f64> = (0..=150).map(|n| (n as f64 * 0.1).sin()).collect();
    for n in [0, 1, 17, 150] {
        let direct = k[n]
            - (1..=n)
                .map(|j| 0.5 * (k[j - 1] + k[j]) * (d.cdf((n - j + 1) as f64 * dt) - d.cdf((n - j) as f64 * dt)))
                .sum::<f64>();
        assert!((gamma_map(&k, dt, &d, |_| 1.0, n) - direct).abs() < 1e-12);
    }
}

#[test]
fn s_op_examples() {
    let e = exp();
    assert_eq!(s_op(&Nu0Hat::Zero, &e, |x: f64| x.sin(), 1.3), 0.0);
    let atoms = Nu0Hat::Atoms(vec![(0.5, 1.0), (1.0, -1.0)]);
    for t in [0.0, 0.4, 2.0] {
        assert!(s_op(&atoms, &e, |_| 1.0, t).abs() < 1e-15);
    }
    let ln = ServiceDistribution::from_spec(&DistSpec::lognormal(1.0)).unwrap();
    assert!((s_op(&Nu0Hat::Atoms(vec![(0.0, 1.0)]), &ln, |_| 1.0, 1.0) - ln.sf(1.0)).abs() < 1e-15);
    // invariant density: ∫ S(x) S(x+t)/S(x) dx = e^{-t}
    let e2 = e.clone();
    let dens = Nu0Hat::Density(Arc::new(move |x| e2.sf(x)));
    assert!((s_op(&dens, &e, |_| 1.0, 0.7) - (-0.7f64).exp()).abs() < 1e-10);
}

#[test]
fn hw_noise_off_odes() {
    let dt = 1e-3;
    let x = simulate_hw(0.0, 1.0, -1.0, dt, 3.0, 1, 0, true);
    for (n, v) in x.iter().enumerate() {
        let t = n as f64 * dt;
        assert!((v + (-t).exp()).abs() <= 5.0 * dt);
    }
    let x = simulate_hw(1.0, 1.0, 1.0, dt, 3.0, 1, 0, true);
    for (n, v) in x.iter().enumerate() {
        let t = n as f64 * dt;
        let exact = if t <= 1.0 { 1.0 - t } else { (-(t - 1.0)).exp() - 1.0 };
        assert!((v - exact).abs() <= 5.0 * dt, "t={t}: {v} vs {exact}");
    }
}

#[test]
fn hw_quadratic_variation_scales_with_one_plus_sigma2() {
    let dt = 1e-4;
    let x = simulate_hw(0.5, 1.0, 0.0, dt, 1.0, 9, 0, false);
    let qv: f64 = x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    assert!((qv - 2.0).abs() < 0.1, "{qv}");
}

#[test]
fn hat_e_variances() {
    let grid = LimitGrid::new(0.1, 1.0, 1.0).unwrap();
    let paths = 100_000;
    let plain = ArrivalSpec::Renewal { lambda_bar: 1.0, beta: 0.0, sigma2: 1.0 };
    let ends: Vec<f64> = (0..paths).map(|p| *simulate_hat_e(&plain, &grid, 5, p, false).last().unwrap()).collect();
    assert!((var(&ends) - 1.0).abs() < 0.02, "{}", var(&ends));

    let inhom = ArrivalSpec::InhomPoisson {
        lambda_bar: RateFn::Affine { intercept: 1.0, slope: 1.0 },
        beta: RateFn::constant(0.0),
    };
    let ends: Vec<f64> = (0..paths).map(|p| *simulate_hat_e(&inhom, &grid, 6, p, false).last().unwrap()).collect();
    assert!((var(&ends) - 1.5).abs() < 0.03, "{}", var(&ends));

    let drift = ArrivalSpec::Renewal { lambda_bar: 1.0, beta: 2.0, sigma2: 1.0 };
    let e = simulate_hat_e(&drift, &grid, 1, 0, true);
    for (n, v) in e.iter().enumerate() {
        assert!((v + 2.0 * n as f64 * 0.1).abs() < 1e-12);
    }
}

#[test]
fn field_variances_match_intensity_functionals() {
    let (model, arr) = critical(exp(), 0.1, 1.0);
    assert!((model.total_intensity() - 1.0).abs() < 1e-5, "{}", model.total_intensity());
    let d = model.dist.clone();
    let paths = 100_000;
    let (mut m1, mut h1, mut mexp, mut lo, mut hi, mut e1) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for p in 0..paths {
        let f = simulate_field(&model, 3, p, false);
        m1.push(*f.cumulative_unit().last().unwrap());
        h1.push(*conv_h_series(&f, &d, |_, _| 1.0).last().unwrap());
        mexp.push(field_integral(&f, |x, _| (-x).exp(), 1.0));
        lo.push(field_integral(&f, |x, _| if x < 0.5 { 1.0 } else { 0.0 }, 1.0));
        hi.push(field_integral(&f, |x, _| if x >= 0.5 { 1.0 } else { 0.0 }, 1.0));
        e1.push(*hat_e_from_brownian(&arr, f.dt, &f.brownian).last().unwrap());
    }
    assert!((var(&m1) - 1.0).abs() < 0.02, "M(1) {}", var(&m1));
    let target_h = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((var(&h1) / target_h - 1.0).abs() < 0.02, "H(1) {} vs {target_h}", var(&h1));
    assert!((var(&mexp) * 3.0 - 1.0).abs() < 0.02, "M(e^-x) {}", var(&mexp));
    let se = 1.0 / (paths as f64).sqrt();
    assert!(corr(&lo, &hi).abs() < 3.0 * se);
    assert!(corr(&e1, &m1).abs() < 3.0 * se);
}

#[test]
fn field_edge_cases() {
    let (model, _) = critical(exp(), 0.05, 1.0);
    let f = simulate_field(&model, 1, 0, false);
    assert_eq!(conv_h(&f, &model.dist, |_| 1.0, 0.0), 0.0);
    assert_eq!(field_integral(&f, |_, _| 0.0, 1.0), 0.0);
    let sum: f64 = f.increments.iter().sum();
    assert!((field_integral(&f, |_, _| 1.0, 1.0) - sum).abs() < 1e-12);
    // characteristic sweep equals the direct Ψ_t route
    let series = conv_h_series(&f, &model.dist, |_, y| (-y).exp() + 0.5);
    for n in [1, 7, 20] {
        let direct = conv_h(&f, &model.dist, |y: f64| (-y).exp() + 0.5, n as f64 * 0.05);
        assert!((series[n] - direct).abs() < 1e-12, "{n}: {} vs {direct}", series[n]);
    }

    let grid0 = LimitGrid::new(0.05, 0.0, 1.0).unwrap();
    let m0 = LimitModel::new(model.fluid.clone(), grid0).unwrap();
    let f0 = simulate_field(&m0, 1, 0, false);
    assert!(f0.increments.iter().all(|&v| v == 0.0) && f0.brownian.is_empty());
}

#[test]
fn coarsening_preserves_totals() {
    let (model, _) = critical(exp(), 0.05, 1.0);
    let f = simulate_field(&model, 2, 0, false);
    let c = f.coarsen();
    assert_eq!(c.nt, f.nt / 2);
    assert!((c.cumulative_unit()[c.nt] - f.cumulative_unit()[f.nt]).abs() < 1e-12);
    assert!((c.brownian.iter().sum::<f64>() - f.brownian.iter().sum::<f64>()).abs() < 1e-12);
    let cm = model.coarsen();
    assert_eq!(*cm.intensity, *c.intensity);
}

#[test]
fn limit_path_identities_critical() {
    let d = ServiceDistribution::from_spec(&DistSpec::lognormal(1.0)).unwrap();
    let d = Arc::new(d);
    let (model, arr) = critical(d.clone(), 0.05, 2.0);
    let tests = vec![TestFunction::one(), TestFunction::survival(d.clone()), TestFunction::exp_decay()];
    for x0 in [0.0, 0.6] {
        let (lp, field) = simulate_limit(&model, &arr, x0, &Nu0Hat::Zero, &tests, 11, 0, false).unwrap();
        let ck = {
            let (_, dg) = cmse::cell_masses(&d, 0.05, field.nt);
            cmse::g_convolution(&lp.khat, &dg)
        };
        for n in 0..lp.times.len() {
            // ν̂(1) equals v̂
            assert!((lp.nuhat["one"][n] - lp.vhat[n]).abs() < 1e-12);
            // K = E + x0 - X∨0
            assert!((lp.khat[n] - (lp.ehat[n] + x0 - lp.xhat[n].max(0.0))).abs() < 1e-12);
            // X = x0 + E - M(1) - D̃
            let dtilde = 0.0 - lp.shat1[n] - lp.mhat1[n] + lp.hhat1[n] + ck[n];
            assert!((lp.xhat[n] - (x0 + lp.ehat[n] - lp.mhat1[n] - dtilde)).abs() < 1e-12);
        }
        // f = 1 - G via the direct operator route
        for n in [5, 40] {
            let t = n as f64 * 0.05;
            let dd = d.clone();
            let route = s_op(&Nu0Hat::Zero, &d, |x| dd.sf(x), t) + gamma_map(&lp.khat, 0.05, &d, |x| d.sf(x), n)
                - conv_h(&field, &d, |x| d.sf(x), t);
            assert!((route - lp.nuhat["survival"][n]).abs() < 1e-10);
        }
    }
}

#[test]
fn drift_identity_exponential_critical() {
    let (model, arr) = critical(exp(), 0.05, 2.0);
    let tests = vec![TestFunction::hazard(model.dist.clone())];
    let (lp, _) = simulate_limit(&model, &arr, 0.0, &Nu0Hat::Zero, &tests, 4, 0, false).unwrap();
    let (mut a, mut b) = (0.0, 0.0);
    for n in 1..lp.times.len() {
        a += 0.5 * 0.05 * (lp.nuhat["hazard"][n - 1] + lp.nuhat["hazard"][n]);
        b += 0.5 * 0.05 * (lp.xhat[n - 1].min(0.0) + lp.xhat[n].min(0.0));
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn subcritical_and_supercritical_bookkeeping() {
    let d = Arc::new(ServiceDistribution::from_spec(&DistSpec::gamma(2.0)).unwrap());
    let half = ArrivalSpec::poisson(0.5, 0.0);
    let model = model_at(d.clone(), FluidInit::empty(&half), 0.05, 2.0);
    assert_eq!(model.fluid.regime, Regime::Subcritical);
    let (lp, _) = simulate_limit(&model, &half, 0.0, &Nu0Hat::Zero, &[], 8, 0, false).unwrap();
    assert_eq!(lp.khat, lp.ehat);

    let one = ArrivalSpec::poisson(1.0, 0.0);
    let model = model_at(d, FluidInit::at_invariant(&one, 2.0), 0.05, 2.0);
    assert_eq!(model.fluid.regime, Regime::Supercritical);
    let (lp, _) = simulate_limit(&model, &one, 0.3, &Nu0Hat::Zero, &[], 8, 0, false).unwrap();
    for n in 0..lp.times.len() {
        assert!((lp.khat[n] - (lp.ehat[n] + 0.3 - lp.xhat[n])).abs() < 1e-12);
        assert_eq!(lp.vhat[n], 0.0);
    }
}

#[test]
fn sae_zero_inputs_exact() {
    let (model, _) = critical(exp(), 0.05, 1.0);
    let field = simulate_field(&model, 1, 0, true);
    let k = vec![0.0; field.nt + 1];
    for t in [SaeTestFunction::one(), SaeTestFunction::exp_decay()] {
        let r = sae_residual(&field, &k, &Nu0Hat::Zero, &model.dist, &t).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn sae_rejects_unbounded_hazard() {
    let d = Arc::new(ServiceDistribution::from_spec(&DistSpec::weibull(0.5)).unwrap());
    let (model, _) = critical(d, 0.1, 1.0);
    let field = simulate_field(&model, 1, 0, true);
    let k = vec![0.0; field.nt + 1];
    assert!(matches!(
        sae_residual(&field, &k, &Nu0Hat::Zero, &model.dist, &SaeTestFunction::one()),
        Err(LimitError::UnboundedHazard(_))
    ));
}

#[test]
fn sae_residual_first_order() {
    let (fine, arr) = critical(exp(), 0.01, 2.0);
    let field = simulate_field(&fine, 21, 0, false);
    let models = [fine.clone(), fine.coarsen(), fine.coarsen().coarsen()];
    let fields = [field.clone(), field.coarsen(), field.coarsen().coarsen()];
    for test in [SaeTestFunction::one(), SaeTestFunction::exp_decay()] {
        let mut worst = vec![];
        for (m, f) in models.iter().zip(&fields) {
            let lp = limit_path_from_field(m, f, &arr, 0.0, &Nu0Hat::Zero, &[]).unwrap();
            let r = sae_residual(f, &lp.khat, &Nu0Hat::Zero, &m.dist, &test).unwrap();
            worst.push(r.iter().copied().fold(0.0, f64::max));
        }
        // coarse to fine
        let r1 = worst[1] / worst[2];
        let r2 = worst[0] / worst[1];
        assert!((0.3..=0.7).contains(&r1) && (0.3..=0.7).contains(&r2), "{}: {worst:?}", test.name);
    }
}

#[test]
fn grid_tail_budget() {
    let (model, _) = critical(exp(), 0.05, 1.0);
    // S(x_max) ≤ 1e-6 for the invariant exponential start
    assert!(model.dist.sf(model.grid.x_max) <= 1e-6);
    assert_eq!(model.grid.nx() % 16, 0);
    let half = ArrivalSpec::poisson(0.5, 0.0);
    let m = model_at(exp(), FluidInit::empty(&half), 0.05, 1.0);
    assert!(m.grid.x_max <= 1.0 + 16.0 * 0.05);
}
