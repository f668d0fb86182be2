mod common;

use rayon::prelude::*;

use chemobranch::field::{FieldInterp, Kernel};
use chemobranch::grid::Spectral;
use chemobranch::micro::{
    lineage_restriction, microscopic_system, simulate_microscopic, Discretization, EventKind,
    Recording,
};
use chemobranch::model::{Drift, FieldInit, InitialLaw, ModelParams, RateFn};
use chemobranch::noise::NoiseUniverse;
use chemobranch::{Error, Point};
use common::{mean_se, quiet_1d};

#[test]
fn no_rates_no_events() {
    let p = ModelParams {
        alpha: 1.0,
        drift: Drift::Chemotaxis { chi: 1.0, g_sat: 1.0 },
        rho0: FieldInit::Cosine { offset: 1.0, amp: 0.5, mode: 1, axis: 0 },
        ..quiet_1d()
    };
    let traj = simulate_microscopic(&p, 40, NoiseUniverse::new(1, 1), Recording::default()).unwrap();
    assert!(traj.events.is_empty());
    assert!(traj.live_counts().iter().all(|&c| c == 40));
    assert_eq!(traj.snapshots.len(), p.steps() + 1);
    assert_eq!(traj.fields.len(), p.steps() + 1);
}

#[test]
fn free_particles_have_brownian_variance() {
    // oracle: Var(X_T - X_0) = sigma^2 T per coordinate
    let p = ModelParams {
        sigma: 0.8,
        dim: 2,
        grid_n: 16,
        ..quiet_1d()
    };
    let base = NoiseUniverse::new(99, 2);
    let disc = Discretization::new(&p).unwrap();
    let disp: Vec<[f64; 2]> = (0..10_000u64)
        .into_par_iter()
        .map(|r| {
            let mut sys = microscopic_system(&p, &disc, 1, base.replica(r), false).unwrap();
            let x0 = sys.live_cells().next().unwrap().1;
            for _ in 0..p.steps() {
                sys.step().unwrap();
            }
            let x1 = sys.live_cells().next().unwrap().1;
            [x1.0[0] - x0.0[0], x1.0[1] - x0.0[1]]
        })
        .collect();
    let target = p.sigma * p.sigma * p.horizon;
    for c in 0..2 {
        let xs: Vec<f64> = disp.iter().map(|d| d[c]).collect();
        let (m, _) = mean_se(&xs);
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
        assert!((var - target).abs() / target < 0.05, "coord {c}: var {var} vs {target}");
    }
}

#[test]
fn constant_death_thins_exponentially() {
    let c = 0.7;
    let p = ModelParams {
        death: RateFn::Constant { value: c },
        lambda_bar: 1.0,
        ..quiet_1d()
    };
    let n0 = 20;
    let base = NoiseUniverse::new(5, 1);
    let disc = Discretization::new(&p).unwrap();
    let survivors: Vec<f64> = (0..2000u64)
        .into_par_iter()
        .map(|r| {
            let mut sys = microscopic_system(&p, &disc, n0, base.replica(r), false).unwrap();
            for _ in 0..p.steps() {
                sys.step().unwrap();
            }
            sys.live_count() as f64
        })
        .collect();
    let (m, se) = mean_se(&survivors);
    let expected = f64::from(n0) * (-c * p.horizon).exp();
    assert!((m - expected).abs() < 3.0 * se, "{m} ± {se} vs {expected}");
}

#[test]
fn yule_domination() {
    let p = ModelParams {
        birth: RateFn::Constant { value: 0.6 },
        death: RateFn::Constant { value: 0.3 },
        lambda_bar: 1.0,
        ..quiet_1d()
    };
    let n0 = 10;
    let reps = 400;
    let base = NoiseUniverse::new(77, 1);
    let disc = Discretization::new(&p).unwrap();
    let sups: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut sys = microscopic_system(&p, &disc, n0, base.replica(r), false).unwrap();
            let mut best = sys.live_count();
            for _ in 0..p.steps() {
                sys.step().unwrap();
                best = best.max(sys.live_count());
            }
            best as f64 / f64::from(n0)
        })
        .collect();
    let (m, _) = mean_se(&sups);
    let bound = (p.lambda_bar * p.horizon).exp() * (1.0 + 4.0 / (reps as f64).sqrt());
    assert!(m <= bound, "{m} > {bound}");
}

#[test]
fn thinning_only_branches_inside_region() {
    let lb = 0.99;
    let p = ModelParams {
        birth: RateFn::Indicator { value: lb, axis: 0, lo: 0.0, hi: 10.0 },
        lambda_bar: 1.0,
        horizon: 2.0,
        ..quiet_1d()
    };
    let traj = simulate_microscopic(&p, 200, NoiseUniverse::new(11, 1), Recording { fields: false }).unwrap();
    let g = p.grid().unwrap();
    let branches: Vec<_> = traj.events.iter().filter(|e| e.kind == EventKind::Branch).collect();
    assert!(branches.len() > 50);
    for e in branches {
        let x = g.wrap(&e.position).0[0];
        assert!((0.0..10.0).contains(&x), "branch at {x}");
    }
    assert!(traj.events.iter().all(|e| e.kind == EventKind::Branch));
}

#[test]
fn runs_are_reproducible_and_lines_are_coupled() {
    let p = ModelParams {
        birth: RateFn::Constant { value: 0.5 },
        death: RateFn::Cosine { base: 0.3, amp: 0.2, axis: 0, period: 20.0 },
        drift: Drift::Chemotaxis { chi: 2.0, g_sat: 1.0 },
        rho0: FieldInit::Cosine { offset: 1.0, amp: 0.8, mode: 1, axis: 0 },
        lambda_bar: 1.1,
        ..quiet_1d()
    };
    let u = NoiseUniverse::new(2024, 1);
    let a = simulate_microscopic(&p, 30, u, Recording::default()).unwrap();
    let b = simulate_microscopic(&p, 30, u, Recording::default()).unwrap();
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(a.events, b.events);
    assert_eq!(a.fields, b.fields);

    // alpha = 0: adding a founder leaves the other lines untouched
    let c = simulate_microscopic(&p, 31, u, Recording::default()).unwrap();
    for line in 1..=30 {
        let ra = lineage_restriction(&a, line).unwrap();
        let rc = lineage_restriction(&c, line).unwrap();
        assert_eq!(ra.snapshots, rc.snapshots);
        assert_eq!(ra.events, rc.events);
    }
}

#[test]
fn restriction_partitions_population() {
    let p = ModelParams {
        birth: RateFn::Constant { value: 0.8 },
        death: RateFn::Constant { value: 0.1 },
        lambda_bar: 1.0,
        ..quiet_1d()
    };
    let traj = simulate_microscopic(&p, 5, NoiseUniverse::new(3, 1), Recording { fields: false }).unwrap();
    let parts: Vec<_> = (1..=5).map(|i| lineage_restriction(&traj, i).unwrap()).collect();
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let total: usize = parts.iter().map(|r| r.snapshots[k].cells.len()).sum();
        assert_eq!(total, snap.cells.len());
    }
    let ev: usize = parts.iter().map(|r| r.events.len()).sum();
    assert_eq!(ev, traj.events.len());
    assert!(matches!(lineage_restriction(&traj, 6), Err(Error::NoSuchLine { .. })));

    let single = simulate_microscopic(&p, 1, NoiseUniverse::new(3, 1), Recording { fields: false }).unwrap();
    let r = lineage_restriction(&single, 1).unwrap();
    assert_eq!(r.snapshots, single.snapshots);
    assert_eq!(r.events, single.events);
}

#[test]
fn genealogy_has_sibling_symmetry() {
    let p = ModelParams {
        birth: RateFn::Constant { value: 0.9 },
        death: RateFn::Constant { value: 0.05 },
        lambda_bar: 1.0,
        horizon: 2.0,
        ..quiet_1d()
    };
    let traj = simulate_microscopic(&p, 10, NoiseUniverse::new(8, 1), Recording { fields: false }).unwrap();
    let last = traj.state_at(traj.snapshots.len() - 1);
    assert!(last.siblings_consistent());
    assert!(traj.genealogy.len() > 20);
    // daughters are born where the mother was when she branched
    for e in traj.events.iter().filter(|e| e.kind == EventKind::Branch) {
        let (a, b) = e.idx.children().unwrap();
        assert_eq!(traj.genealogy[&a].birth, e.time);
        assert_eq!(traj.genealogy[&b].birth, e.time);
        assert_eq!(traj.genealogy[&e.idx].death, e.time);
    }
    for w in traj.events.windows(2) {
        assert!(w[0].time <= w[1].time);
    }
}

#[test]
fn population_cap_is_enforced() {
    let p = ModelParams {
        birth: RateFn::Constant { value: 0.95 },
        lambda_bar: 1.0,
        population_cap: 40,
        horizon: 3.0,
        ..quiet_1d()
    };
    let r = simulate_microscopic(&p, 30, NoiseUniverse::new(1, 1), Recording { fields: false });
    assert!(matches!(r, Err(Error::PopulationExplosion { cap: 40, .. })));
}

#[test]
fn field_gradient_respects_lipschitz_budget() {
    let p = ModelParams {
        alpha: 1.0,
        birth: RateFn::Constant { value: 0.4 },
        drift: Drift::Chemotaxis { chi: 1.0, g_sat: 2.0 },
        rho0: FieldInit::Cosine { offset: 0.5, amp: 0.3, mode: 2, axis: 0 },
        mu0: InitialLaw::Gaussian { center: [10.0, 0.0], std: 1.0 },
        lambda_bar: 1.0,
        grid_n: 128,
        ..quiet_1d()
    };
    let traj = simulate_microscopic(&p, 100, NoiseUniverse::new(4, 1), Recording::default()).unwrap();
    let sp = Spectral::new(p.grid().unwrap());
    let kernel = p.kernel(&sp).unwrap();
    let grad_sup = |f: &chemobranch::field::Field| {
        let g = chemobranch::field::grid_gradient(&sp, f);
        g[0].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let g0 = grad_sup(&traj.fields[0]);
    let max_mass = traj.live_counts().iter().max().copied().unwrap() as f64 / 100.0;
    for (k, f) in traj.fields.iter().enumerate() {
        let t = k as f64 * p.dt;
        let budget = g0 + p.alpha * t * kernel.grad_sup() * max_mass;
        assert!(grad_sup(f) <= 1.1 * budget, "step {k}");
    }
    let _ = Kernel::grad_sup;
}

#[test]
fn zero_mode_follows_exact_mass_balance() {
    // mean rho: m' = -r m + alpha * mean(source); per step with the midpoint
    // source this is exact: m1 = e^{-r dt} m0 + alpha (1 - e^{-r dt})/r * s
    let p = ModelParams {
        alpha: 1.5,
        birth: RateFn::Constant { value: 0.5 },
        rho0: FieldInit::Constant { value: 0.2 },
        lambda_bar: 1.0,
        ..quiet_1d()
    };
    let traj = simulate_microscopic(&p, 50, NoiseUniverse::new(12, 1), Recording::default()).unwrap();
    let vol = p.extent;
    for k in 0..p.steps() {
        let s0 = traj.snapshots[k].cells.len() as f64 / 50.0 / vol;
        let s1 = traj.snapshots[k + 1].cells.len() as f64 / 50.0 / vol;
        let e = (-p.decay * p.dt).exp();
        let expected = e * traj.fields[k].mean() + p.alpha * (1.0 - e) / p.decay * 0.5 * (s0 + s1);
        assert!((traj.fields[k + 1].mean() - expected).abs() < 1e-12);
    }
}

#[test]
fn weak_form_residual_averages_out() {
    // <phi, xi_T> - <phi, xi_0> - int <B phi + lambda phi, xi_s> ds has mean 0,
    // B phi = sigma^2/2 phi'' + b(x, grad rho) phi'
    let p = ModelParams {
        alpha: 1.0,
        birth: RateFn::Constant { value: 0.6 },
        death: RateFn::Cosine { base: 0.2, amp: 0.15, axis: 0, period: 20.0 },
        drift: Drift::Chemotaxis { chi: 1.5, g_sat: 1.0 },
        rho0: FieldInit::Cosine { offset: 1.0, amp: 0.5, mode: 1, axis: 0 },
        mu0: InitialLaw::Gaussian { center: [10.0, 0.0], std: 1.5 },
        lambda_bar: 1.0,
        dt: 0.01,
        ..quiet_1d()
    };
    let c = 10.0;
    let w = 3.0;
    let phi = |x: f64| (-((x - c) / w).powi(2)).exp();
    let dphi = |x: f64| -2.0 * (x - c) / (w * w) * phi(x);
    let d2phi = |x: f64| (4.0 * (x - c).powi(2) / w.powi(4) - 2.0 / (w * w)) * phi(x);
    let sp = Spectral::new(p.grid().unwrap());
    let base = NoiseUniverse::new(31, 1);
    let n0 = 20u32;
    let residuals: Vec<f64> = (0..600u64)
        .into_par_iter()
        .map(|r| {
            let traj = simulate_microscopic(&p, n0, base.replica(r), Recording::default()).unwrap();
            let g = p.grid().unwrap();
            let integrand = |k: usize| -> f64 {
                let it = FieldInterp::new(&sp, &traj.fields[k]);
                traj.snapshots[k]
                    .cells
                    .iter()
                    .map(|(_, x)| {
                        let xw = g.wrap(x);
                        let (v, gr) = it.eval_both(&xw).unwrap();
                        let b = p.drift.eval(&xw, &gr).0[0];
                        let lam = p.net_rate(&xw, v);
                        let y = x.0[0];
                        0.5 * p.sigma * p.sigma * d2phi(y) + b * dphi(y) + lam * phi(y)
                    })
                    .sum::<f64>()
                    / f64::from(n0)
            };
            let pair = |k: usize| traj.snapshots[k].cells.iter().map(|(_, x)| phi(x.0[0])).sum::<f64>() / f64::from(n0);
            let steps = p.steps();
            let mut integral = 0.0;
            for k in 0..steps {
                integral += 0.5 * (integrand(k) + integrand(k + 1)) * p.dt;
            }
            pair(steps) - pair(0) - integral
        })
        .collect();
    let (m, se) = mean_se(&residuals);
    assert!(m.abs() < 4.0 * se, "residual mean {m} ± {se}");
    let _ = Point::default();
}
