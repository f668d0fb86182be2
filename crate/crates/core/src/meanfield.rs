//! Mean-field limits: the mass-weighted particle `(X, M)`, its mean measure,
//! ensembles of the single-line hybrid model, and the self-consistent field.
//!
//! The drift written `F` in some statements of the hybrid model is the same
//! function `b` used everywhere else.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{deposit, grid_gradient, semigroup_step, Field};
use crate::lineage::LineageIndex;
use crate::macroscopic::{solve_pks, PksOptions};
use crate::measure::{EmpiricalMeasure, Estimate};
use crate::micro::{advance_rho, simulate_hybrid, Discretization, MicroTrajectory};
use crate::model::ModelParams;
use crate::noise::{NoiseUniverse, Purpose};
use crate::path::{FieldPath, PreparedPath};
use crate::state::Point;

/// Position and mass of one `(X, M)` particle at the step times.
#[derive(Clone, Debug, PartialEq)]
pub struct MassParticlePath {
    pub dt: f64,
    pub x: Vec<Point>,
    pub m: Vec<f64>,
}

/// `X` by Euler-Maruyama in the field, `M_{k+1} = M_k exp(lambda dt)` with
/// the rate taken at the end-of-step position and the field at `t_k` (the
/// convention of the branching engine, so that `E[M]` and the expected
/// branching population agree step by step).
///
/// Replica `k` uses the streams of line `k` with the mass-particle purposes,
/// so it never shares noise with the branching models.
pub fn simulate_mass_particle(
    params: &ModelParams,
    path: &PreparedPath,
    universe: &NoiseUniverse,
    replica: u32,
) -> Result<MassParticlePath> {
    let grid = params.grid()?;
    let steps = params.steps();
    if path.steps() < steps {
        return Err(Error::InvalidParams(format!(
            "field path covers {} steps, need {steps}",
            path.steps()
        )));
    }
    let dt = params.dt;
    let mut x = params.mu0.sample(universe, &grid, replica, Purpose::MassInit);
    let wiener = universe.key(LineageIndex::root(replica), Purpose::MassWiener);
    let mut log_m = 0.0;
    let mut out = MassParticlePath {
        dt,
        x: Vec::with_capacity(steps + 1),
        m: Vec::with_capacity(steps + 1),
    };
    out.x.push(x);
    out.m.push(1.0);
    for k in 0..steps {
        let interp = path.step(k);
        let g = if params.drift.is_zero() {
            Point::default()
        } else {
            interp.eval_grad(&x)?
        };
        let b = params.drift.eval(&x, &g);
        let dw = universe.wiener_step(wiener, k as u64, dt);
        for a in 0..grid.dim {
            x.0[a] += b.0[a] * dt + params.sigma * dw.0[a];
        }
        let xw = grid.wrap(&x);
        let lambda = if params.birth.is_zero() && params.death.is_zero() {
            0.0
        } else {
            let (v, g) = interp.eval_both(&xw)?;
            params.net_rate(&xw, params.lambda_arg.select(v, &g))
        };
        log_m += lambda * dt;
        let m = log_m.exp();
        if !x.is_finite() || !m.is_finite() {
            return Err(Error::NonFiniteState(format!("mass particle {replica} at step {k}")));
        }
        out.x.push(x);
        out.m.push(m);
    }
    Ok(out)
}

/// Replicas `1..=replicas`, in order.
pub fn simulate_mass_ensemble(
    params: &ModelParams,
    path: &PreparedPath,
    universe: &NoiseUniverse,
    replicas: u32,
) -> Result<Vec<MassParticlePath>> {
    (1..=replicas)
        .into_par_iter()
        .map(|r| simulate_mass_particle(params, path, universe, r))
        .collect()
}

/// Monte-Carlo estimate of the mean measure at each step time: atoms
/// `(X_k(t), M_k(t) / K)` over the ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanMeasurePath {
    pub dt: f64,
    pub measures: Vec<EmpiricalMeasure>,
}

impl MeanMeasurePath {
    pub fn replicas(&self) -> usize {
        self.measures.first().map_or(0, |m| m.atoms.len())
    }

    /// `<phi, mu_t>` at step `k` with its standard error over replicas.
    pub fn pairing<F: Fn(&Point) -> f64>(&self, k: usize, phi: F) -> Estimate {
        let m = &self.measures[k];
        let n = m.atoms.len() as f64;
        let xs: Vec<f64> = m.atoms.iter().map(|(x, w)| n * w * phi(x)).collect();
        Estimate::from_samples(&xs)
    }

    /// `kappa * mu_t` on the grid for every step.
    pub fn smoothed(&self, disc: &Discretization) -> Result<Vec<Field>> {
        self.measures
            .par_iter()
            .enumerate()
            .map(|(k, m)| deposit(m, &disc.kernel, k as f64 * self.dt))
            .collect()
    }
}

pub fn estimate_mu(ensemble: &[MassParticlePath]) -> Result<MeanMeasurePath> {
    let first = ensemble.first().ok_or(Error::EmptyEnsemble)?;
    let w = 1.0 / ensemble.len() as f64;
    let measures = (0..first.x.len())
        .map(|k| {
            EmpiricalMeasure::new(ensemble.iter().map(|p| (p.x[k], p.m[k] * w)).collect())
        })
        .collect();
    Ok(MeanMeasurePath {
        dt: first.dt,
        measures,
    })
}

/// Independent hybrid runs on lines `1..=replicas` of one universe.
pub fn simulate_hybrid_ensemble(
    params: &ModelParams,
    path: &PreparedPath,
    universe: &NoiseUniverse,
    replicas: u32,
) -> Result<Vec<MicroTrajectory>> {
    (1..=replicas)
        .into_par_iter()
        .map(|line| simulate_hybrid(params, path, *universe, line))
        .collect()
}

/// `<phi, E xi_t>` at step `k` estimated from hybrid runs.
pub fn hybrid_pairing<F: Fn(&Point) -> f64>(runs: &[MicroTrajectory], k: usize, phi: F) -> Estimate {
    let xs: Vec<f64> = runs
        .iter()
        .map(|r| r.snapshots[k].cells.iter().map(|(_, x)| phi(x)).sum())
        .collect();
    Estimate::from_samples(&xs)
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum SelfConsistentMode {
    /// Coupled deterministic solve of the density/field system.
    #[default]
    Macroscopic,
    /// Fixed-point iteration `rho -> mu[rho] -> rho` with an `(X, M)`
    /// ensemble. The same noise is reused in every iteration, so the map is
    /// deterministic and the gaps measure its contraction.
    Picard {
        ensemble: u32,
        tol: f64,
        max_iters: usize,
        universe: NoiseUniverse,
    },
}

#[derive(Clone, Debug)]
pub struct SelfConsistentField {
    pub rho: FieldPath,
    /// Density path of the macroscopic solve.
    pub density: Option<Vec<Field>>,
    /// Iteration gaps `sup_t (|d rho|_inf + |d grad rho|_inf)` (Picard).
    pub gaps: Vec<f64>,
}

pub fn solve_selfconsistent_field(
    params: &ModelParams,
    disc: &Discretization,
    mode: SelfConsistentMode,
) -> Result<SelfConsistentField> {
    params.validate()?;
    let grid = disc.spectral.grid;
    let rho0 = params.rho0.sample(&grid);
    match mode {
        SelfConsistentMode::Macroscopic => {
            let p0 = params.mu0.density(&grid, &disc.kernel)?;
            let sol = solve_pks(params, disc, p0, rho0, PksOptions::default())?;
            Ok(SelfConsistentField {
                rho: sol.rho_path(),
                density: Some(sol.p),
                gaps: Vec::new(),
            })
        }
        SelfConsistentMode::Picard {
            ensemble,
            tol,
            max_iters,
            universe,
        } => {
            if ensemble == 0 {
                return Err(Error::EmptyEnsemble);
            }
            let mut rho = free_evolution(params, disc, &rho0)?;
            let mut gaps = Vec::new();
            for _ in 0..max_iters {
                let prepared = rho.prepare(&disc.spectral, params.dt, params.steps())?;
                let paths = simulate_mass_ensemble(params, &prepared, &universe, ensemble)?;
                let sources = estimate_mu(&paths)?.smoothed(disc)?;
                let next = rho_from_sources(params, disc, &rho0, &sources)?;
                let gap = path_gap(disc, &rho, &next);
                gaps.push(gap);
                rho = next;
                if gap < tol {
                    return Ok(SelfConsistentField {
                        rho,
                        density: None,
                        gaps,
                    });
                }
            }
            Err(Error::PicardStalled {
                iters: max_iters,
                gap: gaps.last().copied().unwrap_or(f64::INFINITY),
            })
        }
    }
}

/// `S_t rho0` on the step grid.
pub fn free_evolution(params: &ModelParams, disc: &Discretization, rho0: &Field) -> Result<FieldPath> {
    let zero = Field::zeros(rho0.grid, 0.0);
    let mut fields = vec![rho0.clone()];
    for k in 0..params.steps() {
        let mut next = semigroup_step(
            &disc.spectral,
            &fields[k],
            &zero,
            params.dt,
            params.field_constants(),
        )?;
        next.time = (k + 1) as f64 * params.dt;
        fields.push(next);
    }
    Ok(FieldPath::new(params.dt, fields))
}

/// Field path driven by the given smoothed sources, one per step time.
pub fn rho_from_sources(
    params: &ModelParams,
    disc: &Discretization,
    rho0: &Field,
    sources: &[Field],
) -> Result<FieldPath> {
    let mut fields = vec![rho0.clone()];
    for k in 0..params.steps() {
        let mut next = advance_rho(&disc.spectral, &fields[k], &sources[k], &sources[k + 1], params)?;
        next.time = (k + 1) as f64 * params.dt;
        fields.push(next);
    }
    Ok(FieldPath::new(params.dt, fields))
}

/// `sup_t (|a - b|_inf + |grad a - grad b|_inf)` over the stored slices.
pub fn path_gap(disc: &Discretization, a: &FieldPath, b: &FieldPath) -> f64 {
    a.fields
        .par_iter()
        .zip(&b.fields)
        .map(|(fa, fb)| field_gap(disc, fa, fb))
        .reduce(|| 0.0, f64::max)
}

/// `|a - b|_inf + |grad a - grad b|_inf` on the grid nodes.
pub fn field_gap(disc: &Discretization, a: &Field, b: &Field) -> f64 {
    let diff = Field {
        grid: a.grid,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
        time: a.time,
    };
    let grad = grid_gradient(&disc.spectral, &diff);
    let gsup = (0..diff.values.len())
        .map(|i| grad.iter().map(|g| g[i] * g[i]).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    diff.sup_norm() + gsup
}
