mod common;

use std::f64::consts::TAU;

use rayon::prelude::*;

use chemobranch::lineage::LineageIndex;
use chemobranch::measure::Estimate;
use chemobranch::meanfield::{
    estimate_mu, free_evolution, hybrid_pairing, simulate_hybrid_ensemble, simulate_mass_ensemble,
    simulate_mass_particle, solve_selfconsistent_field, MassParticlePath, SelfConsistentMode,
};
use chemobranch::micro::{simulate_hybrid, simulate_microscopic, Discretization, Recording};
use chemobranch::model::{Drift, FieldInit, InitialLaw, ModelParams, RateFn};
use chemobranch::noise::{NoiseUniverse, Purpose};
use chemobranch::path::{FieldPath, PreparedPath};
use chemobranch::{Error, Point};
use common::quiet_1d;

/// Coupled 1-d model with smooth rates and chemotaxis.
fn coupled() -> ModelParams {
    ModelParams {
        sigma: 0.8,
        diffusion: 0.5,
        decay: 1.0,
        alpha: 1.5,
        lambda_bar: 1.5,
        birth: RateFn::Logistic { max: 0.9, steepness: 3.0, midpoint: 0.4 },
        death: RateFn::Cosine { base: 0.3, amp: 0.2, axis: 0, period: 8.0 },
        drift: Drift::Chemotaxis { chi: 1.0, g_sat: 2.0 },
        rho0: FieldInit::Cosine { offset: 0.4, amp: 0.3, mode: 1, axis: 0 },
        mu0: InitialLaw::Gaussian { center: [4.0, 0.0], std: 1.0 },
        grid_n: 64,
        extent: 8.0,
        dt: 0.02,
        horizon: 1.0,
        ..Default::default()
    }
}

fn macro_path(p: &ModelParams, disc: &Discretization) -> PreparedPath {
    let sc = solve_selfconsistent_field(p, disc, SelfConsistentMode::Macroscopic).unwrap();
    sc.rho.prepare(&disc.spectral, p.dt, p.steps()).unwrap()
}

fn bump(center: f64, radius: f64, l: f64) -> impl Fn(&Point) -> f64 + Sync {
    move |x: &Point| {
        let d = (x.0[0] - center + 0.5 * l).rem_euclid(l) - 0.5 * l;
        let r = d / radius;
        if r.abs() < 1.0 {
            (1.0 - 1.0 / (1.0 - r * r)).exp()
        } else {
            0.0
        }
    }
}

#[test]
fn constant_rate_mass_is_exact() {
    let c = 0.4;
    let p = ModelParams {
        birth: RateFn::Constant { value: c },
        lambda_bar: 0.5,
        ..quiet_1d()
    };
    let disc = Discretization::new(&p).unwrap();
    let path = macro_path(&p, &disc);
    let u = NoiseUniverse::new(3, 1);
    let m = simulate_mass_particle(&p, &path, &u, 1).unwrap();
    for (k, mk) in m.m.iter().enumerate() {
        let exact = (c * k as f64 * p.dt).exp();
        assert!((mk / exact - 1.0).abs() < 1e-12);
    }
    let zero = simulate_mass_particle(&quiet_1d(), &path, &u, 1).unwrap();
    assert!(zero.m.iter().all(|&m| m == 1.0));
}

#[test]
fn mass_stays_within_rate_bounds() {
    let p = coupled();
    let disc = Discretization::new(&p).unwrap();
    let path = macro_path(&p, &disc);
    let ens = simulate_mass_ensemble(&p, &path, &NoiseUniverse::new(8, 1), 300).unwrap();
    for e in &ens {
        assert_eq!(e.m[0], 1.0);
        for (k, m) in e.m.iter().enumerate() {
            let t = k as f64 * p.dt;
            assert!(*m >= (-p.lambda_bar * t).exp() && *m <= (p.lambda_bar * t).exp());
        }
    }
}

#[test]
fn indicator_rate_matches_occupancy_oracle() {
    // E[M(T)] = E exp(c * time spent in A); the oracle integrates the
    // occupancy of independent Brownian paths on a 10x finer time grid.
    let c = 0.8;
    let p = ModelParams {
        birth: RateFn::Indicator { value: c, axis: 0, lo: 0.0, hi: 5.0 },
        lambda_bar: 1.0,
        mu0: InitialLaw::Uniform,
        ..quiet_1d()
    };
    let disc = Discretization::new(&p).unwrap();
    let path = macro_path(&p, &disc);
    let ens = simulate_mass_ensemble(&p, &path, &NoiseUniverse::new(21, 1), 10_000).unwrap();
    let mc: Vec<f64> = ens.iter().map(|e| *e.m.last().unwrap()).collect();

    let oracle_u = NoiseUniverse::new(22, 1);
    let fine = 10;
    let h = p.dt / fine as f64;
    let grid = p.grid().unwrap();
    let occ: Vec<f64> = (1..=10_000u32)
        .into_par_iter()
        .map(|r| {
            let key = oracle_u.key(LineageIndex::root(r), Purpose::Wiener);
            let mut x = InitialLaw::Uniform.sample(&oracle_u, &grid, r, Purpose::Init);
            let mut occ = 0.0;
            for k in 0..p.steps() * fine {
                x.0[0] += p.sigma * oracle_u.wiener_step(key, k as u64, h).0[0];
                if grid.wrap(&x).0[0] < 5.0 {
                    occ += h;
                }
            }
            (c * occ).exp()
        })
        .collect();
    let (a, b) = (Estimate::from_samples(&mc), Estimate::from_samples(&occ));
    assert!(a.agrees_with(&b, 3.0), "{a:?} vs {b:?}");
}

#[test]
fn estimate_mu_definitions() {
    let x = vec![Point([1.0, 0.0]), Point([2.0, 0.0])];
    let one = MassParticlePath { dt: 0.1, x: x.clone(), m: vec![1.0, 1.0] };
    let mu = estimate_mu(std::slice::from_ref(&one)).unwrap();
    assert_eq!(mu.measures[1].atoms, vec![(Point([2.0, 0.0]), 1.0)]);
    let two = MassParticlePath { dt: 0.1, x, m: vec![1.0, 3.0] };
    let mu = estimate_mu(&[one, two]).unwrap();
    assert_eq!(mu.measures[1].total_mass(), 2.0);
    assert_eq!(mu.pairing(1, |_| 1.0).mean, 2.0);
    assert!(matches!(estimate_mu(&[]), Err(Error::EmptyEnsemble)));
}

#[test]
fn decoupled_field_is_free_evolution_in_both_modes() {
    let p = ModelParams {
        alpha: 0.0,
        rho0: FieldInit::Cosine { offset: 0.5, amp: 0.3, mode: 2, axis: 0 },
        birth: RateFn::Constant { value: 0.2 },
        lambda_bar: 0.5,
        ..quiet_1d()
    };
    let disc = Discretization::new(&p).unwrap();
    let free = free_evolution(&p, &disc, &p.rho0.sample(&disc.spectral.grid)).unwrap();
    let m = solve_selfconsistent_field(&p, &disc, SelfConsistentMode::Macroscopic).unwrap();
    assert_eq!(m.rho, free);
    let picard = SelfConsistentMode::Picard {
        ensemble: 50,
        tol: 1e-12,
        max_iters: 3,
        universe: NoiseUniverse::new(1, 1),
    };
    let pc = solve_selfconsistent_field(&p, &disc, picard).unwrap();
    assert_eq!(pc.rho, free);
    assert_eq!(pc.gaps, vec![0.0]);
}

#[test]
fn uniform_population_gives_zero_mode_ode() {
    // dm/dt = -r m + alpha / L, m(0) = m0
    let p = ModelParams {
        alpha: 2.0,
        decay: 0.7,
        rho0: FieldInit::Constant { value: 0.1 },
        mu0: InitialLaw::Uniform,
        ..quiet_1d()
    };
    let disc = Discretization::new(&p).unwrap();
    let sc = solve_selfconsistent_field(&p, &disc, SelfConsistentMode::Macroscopic).unwrap();
    let src = p.alpha / p.extent;
    for f in &sc.rho.fields {
        let e = (-p.decay * f.time).exp();
        let exact = 0.1 * e + src / p.decay * (1.0 - e);
        assert!((f.max_dev(exact)) < 1e-12, "t={}", f.time);
    }
    let density = sc.density.unwrap();
    assert!((density.last().unwrap().max_dev(1.0 / p.extent)) < 1e-12);
}

trait MaxDev {
    fn max_dev(&self, v: f64) -> f64;
}

impl MaxDev for chemobranch::field::Field {
    fn max_dev(&self, v: f64) -> f64 {
        self.values.iter().map(|x| (x - v).abs()).fold(0.0, f64::max)
    }
}

#[test]
fn picard_agrees_with_macroscopic_solve() {
    let p = coupled();
    let disc = Discretization::new(&p).unwrap();
    let macro_rho = solve_selfconsistent_field(&p, &disc, SelfConsistentMode::Macroscopic).unwrap().rho;
    let picard = |seed| {
        solve_selfconsistent_field(
            &p,
            &disc,
            SelfConsistentMode::Picard {
                ensemble: 4000,
                tol: 1e-9,
                max_iters: 30,
                universe: NoiseUniverse::new(seed, 1),
            },
        )
        .unwrap()
    };
    let (a, b) = (picard(1), picard(2));
    // contraction: gaps decrease after the first iteration
    for w in a.gaps[1..].windows(2) {
        assert!(w[1] < w[0], "gaps {:?}", a.gaps);
    }
    let sup = |x: &FieldPath, y: &FieldPath| {
        x.fields
            .iter()
            .zip(&y.fields)
            .flat_map(|(f, g)| f.values.iter().zip(&g.values).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max)
    };
    // Monte-Carlo band: the spread between two independent ensembles
    let band = sup(&a.rho, &b.rho);
    assert!(band > 0.0);
    let err = sup(&a.rho, &macro_rho).max(sup(&b.rho, &macro_rho));
    assert!(err < 3.0 * band, "err {err} band {band}");
}

#[test]
fn picard_reports_stall() {
    let p = coupled();
    let disc = Discretization::new(&p).unwrap();
    let mode = SelfConsistentMode::Picard {
        ensemble: 100,
        tol: 0.0,
        max_iters: 2,
        universe: NoiseUniverse::new(1, 1),
    };
    match solve_selfconsistent_field(&p, &disc, mode) {
        Err(Error::PicardStalled { iters: 2, gap }) => assert!(gap > 0.0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn hybrid_with_microscopic_field_reproduces_line_one() {
    let p = coupled();
    let u = NoiseUniverse::new(77, 1);
    let micro = simulate_microscopic(&p, 30, u, Recording::default()).unwrap();
    let disc = Discretization::new(&p).unwrap();
    let path = FieldPath::new(p.dt, micro.fields.clone())
        .prepare(&disc.spectral, p.dt, p.steps())
        .unwrap();
    let hybrid = simulate_hybrid(&p, &path, u, 1).unwrap();
    let line = micro.restrict(1).unwrap();
    assert_eq!(hybrid.snapshots, line.snapshots);
    assert_eq!(hybrid.events, line.events);
}

#[test]
fn hybrid_without_rates_is_one_diffusing_particle() {
    let p = quiet_1d();
    let disc = Discretization::new(&p).unwrap();
    let path = macro_path(&p, &disc);
    let h = simulate_hybrid(&p, &path, NoiseUniverse::new(4, 1), 3).unwrap();
    assert!(h.events.is_empty());
    assert!(h.snapshots.iter().all(|s| s.cells.len() == 1));
}

#[test]
fn first_event_follows_survival_law() {
    // P(root has an event before T) = E[1 - exp(-int (lambda_b + lambda_d) ds)]
    // along the root's own path, rebuilt from its Wiener stream.
    let p = coupled();
    let disc = Discretization::new(&p).unwrap();
    let path = macro_path(&p, &disc);
    let u = NoiseUniverse::new(31, 1);
    let grid = p.grid().unwrap();
    let diffs: Vec<f64> = (1..=4000u32)
        .into_par_iter()
        .map(|line| {
            let h = simulate_hybrid(&p, &path, u, line).unwrap();
            let root = LineageIndex::root(line);
            let hit = h.events.iter().any(|e| e.idx == root);
            let key = u.key(root, Purpose::Wiener);
            let mut x = p.mu0.sample(&u, &grid, line, Purpose::Init);
            let mut hazard = 0.0;
            for k in 0..p.steps() {
                let interp = path.step(k);
                let b = p.drift.eval(&x, &interp.eval_grad(&x).unwrap());
                let dw = u.wiener_step(key, k as u64, p.dt);
                x.0[0] += b.0[0] * p.dt + p.sigma * dw.0[0];
                let xw = grid.wrap(&x);
                let rho = interp.eval(&xw).unwrap();
                hazard += (p.birth.eval(&xw, rho) + p.death.eval(&xw, rho)) * p.dt;
            }
            f64::from(u8::from(hit)) - (1.0 - (-hazard).exp())
        })
        .collect();
    let d = Estimate::from_samples(&diffs);
    assert!(d.mean.abs() <= 3.0 * d.se, "{d:?}");
}

#[test]
fn mass_particles_and_branching_have_the_same_mean() {
    let p = coupled();
    let disc = Discretization::new(&p).unwrap();
    let path = macro_path(&p, &disc);
    let u = NoiseUniverse::new(5, 1);
    let mu = estimate_mu(&simulate_mass_ensemble(&p, &path, &u, 4000).unwrap()).unwrap();
    let runs = simulate_hybrid_ensemble(&p, &path, &u, 800).unwrap();
    let phis = [bump(2.0, 2.0, 8.0), bump(4.0, 1.5, 8.0), bump(6.0, 2.0, 8.0)];
    for k in [p.steps() / 2, p.steps()] {
        for phi in &phis {
            let a = mu.pairing(k, phi);
            let b = hybrid_pairing(&runs, k, phi);
            assert!(a.agrees_with(&b, 3.0), "step {k}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn weak_equation_residual_vanishes_on_average() {
    // <phi, xi_T> - <phi, xi_0> - int <(sigma^2/2) phi'' + b phi' + lambda phi, xi_s> ds
    let p = coupled();
    let disc = Discretization::new(&p).unwrap();
    let path = macro_path(&p, &disc);
    let grid = p.grid().unwrap();
    let l = p.extent;
    let w = TAU / l;
    let phi = |x: &Point| (w * x.0[0]).sin() + 0.5 * (2.0 * w * x.0[0]).cos();
    let dphi = |x: &Point| w * (w * x.0[0]).cos() - w * (2.0 * w * x.0[0]).sin();
    let d2phi = |x: &Point| -w * w * (w * x.0[0]).sin() - 2.0 * w * w * (2.0 * w * x.0[0]).cos();
    let runs = simulate_hybrid_ensemble(&p, &path, &NoiseUniverse::new(12, 1), 2000).unwrap();
    let res: Vec<f64> = runs
        .par_iter()
        .map(|run| {
            let gen = |k: usize| -> f64 {
                let interp = path.step(k);
                run.snapshots[k]
                    .cells
                    .iter()
                    .map(|(_, x)| {
                        let xw = grid.wrap(x);
                        let (rho, g) = interp.eval_both(&xw).unwrap();
                        let b = p.drift.eval(&xw, &g).0[0];
                        0.5 * p.sigma * p.sigma * d2phi(x) + b * dphi(x) + p.net_rate(&xw, rho) * phi(x)
                    })
                    .sum()
            };
            let pair = |k: usize| run.snapshots[k].cells.iter().map(|(_, x)| phi(x)).sum::<f64>();
            let n = p.steps();
            let integral: f64 = (0..n).map(|k| 0.5 * p.dt * (gen(k) + gen(k + 1))).sum();
            pair(n) - pair(0) - integral
        })
        .collect();
    let e = Estimate::from_samples(&res);
    assert!(e.mean.abs() <= 4.0 * e.se, "{e:?}");
}
