mod common;

use std::f64::consts::TAU;

use chemobranch::field::Field;
use chemobranch::macroscopic::{
    observed_order, solve_pks, AdvectionScheme, DiffusionScheme, PksOptions,
};
use chemobranch::micro::Discretization;
use chemobranch::model::{Drift, FieldInit, ModelParams, RateFn};
use chemobranch::Error;
use common::quiet_1d;

fn cosine_density(p: &ModelParams, amp: f64, mode: f64) -> Field {
    let l = p.extent;
    Field::from_fn(p.grid().unwrap(), 0.0, |x| (1.0 + amp * (TAU * mode * x.0[0] / l).cos()) / l)
}

/// Coupled, nonlinear, smooth 1-d data.
fn coupled_1d(dt: f64) -> ModelParams {
    ModelParams {
        sigma: 0.7,
        diffusion: 0.5,
        decay: 1.0,
        alpha: 2.0,
        lambda_bar: 2.0,
        birth: RateFn::Logistic { max: 0.8, steepness: 4.0, midpoint: 0.3 },
        death: RateFn::Constant { value: 0.3 },
        drift: Drift::Chemotaxis { chi: 1.5, g_sat: 2.0 },
        rho0: FieldInit::Cosine { offset: 0.3, amp: 0.2, mode: 1, axis: 0 },
        grid_n: 64,
        extent: 8.0,
        dt,
        horizon: 1.0,
        ..Default::default()
    }
}

#[test]
fn pure_heat_flow_decays_fourier_mode() {
    let p = ModelParams { sigma: 0.9, ..quiet_1d() };
    let disc = Discretization::new(&p).unwrap();
    let p0 = cosine_density(&p, 0.5, 3.0);
    let sol = solve_pks(&p, &disc, p0, Field::zeros(p.grid().unwrap(), 0.0), PksOptions::default()).unwrap();
    let k = TAU * 3.0 / p.extent;
    let rate = 0.5 * p.sigma * p.sigma * k * k;
    for (n, f) in sol.p.iter().enumerate() {
        let t = n as f64 * p.dt;
        let amp = f
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * (TAU * 3.0 * i as f64 / p.grid_n as f64).cos())
            .sum::<f64>()
            * 2.0
            / p.grid_n as f64
            * p.extent;
        assert!((amp - 0.5 * (-rate * t).exp()).abs() < 1e-6, "t={t} amp={amp}");
    }
}

#[test]
fn constant_rate_grows_mass_exponentially() {
    let c = 0.7;
    let p = ModelParams {
        lambda_bar: 1.0,
        birth: RateFn::Constant { value: c },
        alpha: 1.0,
        rho0: FieldInit::Constant { value: 0.2 },
        ..quiet_1d()
    };
    let disc = Discretization::new(&p).unwrap();
    let sol = solve_pks(&p, &disc, cosine_density(&p, 0.4, 2.0), p.rho0.sample(&p.grid().unwrap()), PksOptions::default()).unwrap();
    for (n, m) in sol.masses().into_iter().enumerate() {
        let exact = (c * n as f64 * p.dt).exp();
        assert!((m / exact - 1.0).abs() < 1e-8, "step {n}: {m} vs {exact}");
    }
}

#[test]
fn decoupled_field_is_free_evolution() {
    // alpha = 0: rho only feels its own semigroup
    let p = ModelParams {
        alpha: 0.0,
        birth: RateFn::Constant { value: 0.3 },
        lambda_bar: 0.5,
        drift: Drift::Chemotaxis { chi: 1.0, g_sat: 1.0 },
        rho0: FieldInit::Cosine { offset: 0.5, amp: 0.4, mode: 2, axis: 0 },
        ..quiet_1d()
    };
    let disc = Discretization::new(&p).unwrap();
    let rho0 = p.rho0.sample(&p.grid().unwrap());
    let sol = solve_pks(&p, &disc, cosine_density(&p, 0.2, 1.0), rho0, PksOptions::default()).unwrap();
    let k = TAU * 2.0 / p.extent;
    for f in &sol.rho {
        let decay = (-(p.diffusion * k * k + p.decay) * f.time).exp();
        for (i, v) in f.values.iter().enumerate() {
            let x = i as f64 * p.extent / p.grid_n as f64;
            let exact = (-p.decay * f.time).exp() * 0.5 + 0.4 * decay * (k * x).cos();
            assert!((v - exact).abs() < 1e-12);
        }
    }
}

#[test]
fn mass_law_residual_is_second_order() {
    // d/dt int p = int lambda p. Per-step residual of the trapezoid rule
    // on the computed solution, compared across dt, dt/2.
    let residual = |dt: f64| {
        let p = coupled_1d(dt);
        let disc = Discretization::new(&p).unwrap();
        let sol = solve_pks(&p, &disc, cosine_density(&p, 0.5, 1.0), p.rho0.sample(&p.grid().unwrap()), PksOptions { advection: AdvectionScheme::Upwind, ..Default::default() }).unwrap();
        let growth = |n: usize| {
            let (pf, rf) = (&sol.p[n], &sol.rho[n]);
            let h = p.extent / p.grid_n as f64;
            pf.values
                .iter()
                .zip(&rf.values)
                .enumerate()
                .map(|(i, (pv, rv))| {
                    let x = chemobranch::Point([i as f64 * h, 0.0]);
                    p.net_rate(&x, *rv) * pv * h
                })
                .sum::<f64>()
        };
        let m = sol.masses();
        (0..p.steps())
            .map(|n| (m[n + 1] - m[n] - 0.5 * dt * (growth(n) + growth(n + 1))).abs())
            .fold(0.0, f64::max)
    };
    let (r1, r2) = (residual(0.02), residual(0.01));
    // local residual O(dt^3): ratio ~ 8
    assert!(r1 < 1e-4, "residual {r1}");
    assert!(r1 / r2 > 5.0, "ratio {}", r1 / r2);
}

#[test]
fn observed_order_is_two() {
    let run = |dt: f64| {
        let p = coupled_1d(dt);
        let disc = Discretization::new(&p).unwrap();
        let sol = solve_pks(&p, &disc, cosine_density(&p, 0.5, 1.0), p.rho0.sample(&p.grid().unwrap()), PksOptions { advection: AdvectionScheme::Upwind, ..Default::default() }).unwrap();
        let mut v = sol.p.last().unwrap().values.clone();
        v.extend(&sol.rho.last().unwrap().values);
        v
    };
    let q = observed_order(&run(0.02), &run(0.01), &run(0.005));
    assert!((1.8..=2.2).contains(&q), "order {q}");
}

#[test]
fn upwind_keeps_density_nonnegative() {
    // smooth data with a nearly empty region, steep field gradient, and a
    // discontinuous death rate
    let p = ModelParams {
        drift: Drift::Chemotaxis { chi: 4.0, g_sat: 10.0 },
        rho0: FieldInit::Cosine { offset: 1.0, amp: 1.0, mode: 2, axis: 0 },
        birth: RateFn::Constant { value: 0.5 },
        death: RateFn::Indicator { value: 1.0, axis: 0, lo: 0.0, hi: 4.0 },
        lambda_bar: 2.0,
        alpha: 3.0,
        ..coupled_1d(0.01)
    };
    let disc = Discretization::new(&p).unwrap();
    let p0 = Field::from_fn(p.grid().unwrap(), 0.0, |x| {
        let y = (x.0[0] - 1.5 + 4.0).rem_euclid(8.0) - 4.0;
        (-y * y / 0.3).exp()
    });
    let rho0 = p.rho0.sample(&p.grid().unwrap());
    let solve = |p: &ModelParams, diffusion| {
        let opts = PksOptions { advection: AdvectionScheme::Upwind, diffusion };
        solve_pks(p, &disc, p0.clone(), rho0.clone(), opts).unwrap()
    };
    // lattice heat flow: every sub-step is a positive map
    for f in &solve(&p, DiffusionScheme::Lattice).p {
        assert!(f.min() >= -1e-14 * f.sup_norm(), "t={} min={}", f.time, f.min());
    }
    // spectral heat flow with smooth rates and a resolved aggregate:
    // undershoots stay at the level of the unresolved spectral tail
    let smooth = ModelParams {
        death: RateFn::Cosine { base: 0.5, amp: 0.5, axis: 0, period: 8.0 },
        drift: Drift::Chemotaxis { chi: 1.0, g_sat: 10.0 },
        ..p.clone()
    };
    for f in &solve(&smooth, DiffusionScheme::Spectral).p {
        assert!(f.min() >= -1e-6 * f.sup_norm(), "t={} min={}", f.time, f.min());
    }
}

#[test]
fn cfl_violation_reports_required_step() {
    let p = ModelParams {
        drift: Drift::Constant { velocity: [30.0, 0.0] },
        dt: 0.05,
        ..coupled_1d(0.05)
    };
    let disc = Discretization::new(&p).unwrap();
    let err = solve_pks(&p, &disc, cosine_density(&p, 0.5, 1.0), p.rho0.sample(&p.grid().unwrap()), PksOptions { advection: AdvectionScheme::Upwind, ..Default::default() }).unwrap_err();
    match err {
        Error::CflViolation { cfl, required_dt } => {
            assert!(cfl > 1.0);
            assert!(required_dt < 0.05 && required_dt > 0.0);
        }
        e => panic!("unexpected {e}"),
    }
    // auto mode switches to the remap and stays conservative
    let sol = solve_pks(&p, &disc, cosine_density(&p, 0.5, 1.0), p.rho0.sample(&p.grid().unwrap()), PksOptions::default()).unwrap();
    assert!(sol.used_semi_lagrangian);
    let m = sol.masses();
    assert!(m.iter().all(|x| x.is_finite() && *x > 0.0));
    assert!(sol.p.iter().all(|f| f.min() >= 0.0));
}

#[test]
fn rejects_mismatched_grid() {
    let p = quiet_1d();
    let disc = Discretization::new(&p).unwrap();
    let other = chemobranch::grid::GridSpec::new(1, 32, p.extent).unwrap();
    let err = solve_pks(&p, &disc, Field::zeros(other, 0.0), Field::zeros(p.grid().unwrap(), 0.0), PksOptions::default()).unwrap_err();
    assert!(matches!(err, Error::GridMismatch(_)));
}
