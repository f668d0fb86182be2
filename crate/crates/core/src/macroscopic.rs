//! Deterministic solver for the density/chemoattractant system
//!
//! ```text
//! d_t p   = (sigma^2/2) Lap p - div(p b(x, grad rho)) + lambda(x, rho) p
//! d_t rho = D Lap rho - r rho + alpha kappa * p
//! ```
//!
//! The transport term has the sign of the Fokker-Planck equation of the
//! particles (`dX = b dt + sigma dW`).
//!
//! One step of length `dt`:
//! 1. predict `rho` at the half step with the source `kappa * p_n` frozen,
//! 2. advance `p` over `dt` with that field frozen, by the symmetric split
//!    `R(dt/2) A(dt/2) H(dt) A(dt/2) R(dt/2)` (reaction exact pointwise,
//!    heat flow exact in Fourier space, advection by SSP-RK2 upwind or
//!    semi-Lagrangian remap),
//! 3. advance `rho` over `dt` with the source averaged between `kappa * p_n`
//!    and `kappa * p_{n+1}`, the same update the particle model uses.
//!
//! All sub-steps are second order, so the scheme is second order in `dt`.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{grid_gradient, semigroup_step, Field};
use crate::grid::{GridSpec, Spectral};
use crate::meanfield::MeanMeasurePath;
use crate::micro::{advance_rho, Discretization};
use crate::model::ModelParams;
use crate::path::FieldPath;
use crate::state::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AdvectionScheme {
    /// Upwind while the CFL number is at most 0.8, semi-Lagrangian above.
    #[default]
    Auto,
    Upwind,
    SemiLagrangian,
}

/// CFL number above which `Auto` switches to semi-Lagrangian transport.
pub const AUTO_SWITCH_CFL: f64 = 0.8;

/// Heat flow of the density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DiffusionScheme {
    /// Exact in Fourier space. Keeps `p >= 0` only up to Gibbs-type
    /// undershoots of order of the unresolved spectral tail.
    #[default]
    Spectral,
    /// Exact exponential of the nearest-neighbour Laplacian: second order
    /// in space and positivity preserving.
    Lattice,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PksOptions {
    pub advection: AdvectionScheme,
    pub diffusion: DiffusionScheme,
}

#[derive(Clone, Debug)]
pub struct PksSolution {
    pub dt: f64,
    pub p: Vec<Field>,
    pub rho: Vec<Field>,
    /// Largest advection CFL number met during the solve.
    pub max_cfl: f64,
    /// Whether any step used semi-Lagrangian transport.
    pub used_semi_lagrangian: bool,
}

impl PksSolution {
    pub fn rho_path(&self) -> FieldPath {
        FieldPath::new(self.dt, self.rho.clone())
    }

    pub fn masses(&self) -> Vec<f64> {
        self.p.iter().map(Field::integral).collect()
    }
}

/// Solves over `[0, T]` from the given initial density and field.
pub fn solve_pks(
    params: &ModelParams,
    disc: &Discretization,
    p0: Field,
    rho0: Field,
    options: PksOptions,
) -> Result<PksSolution> {
    params.validate()?;
    let sp = &*disc.spectral;
    p0.grid.check_same(&sp.grid)?;
    rho0.grid.check_same(&sp.grid)?;
    let dt = params.dt;
    let steps = params.steps();
    let mut sol = PksSolution {
        dt,
        p: Vec::with_capacity(steps + 1),
        rho: Vec::with_capacity(steps + 1),
        max_cfl: 0.0,
        used_semi_lagrangian: false,
    };
    let mut p = p0;
    let mut rho = rho0;
    let mut src = disc.kernel.convolve(sp, &p)?;
    sol.p.push(p.clone());
    sol.rho.push(rho.clone());
    for k in 0..steps {
        let t_next = (k + 1) as f64 * dt;
        let rho_half = semigroup_step(sp, &rho, &src, 0.5 * dt, params.field_constants())?;
        let coeffs = Coefficients::at_nodes(params, sp, &rho_half);
        let (next_p, cfl, sl) = density_step(params, sp, &coeffs, &p, dt, options)?;
        sol.max_cfl = sol.max_cfl.max(cfl);
        sol.used_semi_lagrangian |= sl;
        p = next_p;
        p.time = t_next;
        let next_src = disc.kernel.convolve(sp, &p)?;
        rho = advance_rho(sp, &rho, &src, &next_src, params)?;
        rho.time = t_next;
        src = next_src;
        if p.values.iter().any(|v| !v.is_finite()) || rho.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(format!("PKS solve at step {k}")));
        }
        sol.p.push(p.clone());
        sol.rho.push(rho.clone());
    }
    Ok(sol)
}

/// Drift velocity (per axis) and net growth rate at the nodes for a frozen
/// field.
struct Coefficients {
    velocity: Vec<Vec<f64>>,
    growth: Vec<f64>,
}

impl Coefficients {
    fn at_nodes(params: &ModelParams, sp: &Spectral, rho: &Field) -> Self {
        let g = &sp.grid;
        let grad = grid_gradient(sp, rho);
        let mut velocity = vec![vec![0.0; g.len()]; g.dim];
        let mut growth = vec![0.0; g.len()];
        for i in 0..g.len() {
            let x = g.node(i);
            let mut gr = [0.0; 2];
            for a in 0..g.dim {
                gr[a] = grad[a][i];
            }
            let gr = Point(gr);
            let b = params.drift.eval(&x, &gr);
            for a in 0..g.dim {
                velocity[a][i] = b.0[a];
            }
            let s = params.lambda_arg.select(rho.values[i], &gr);
            growth[i] = params.net_rate(&x, s);
        }
        Self { velocity, growth }
    }
}

/// Advances `p` by `dt` with frozen coefficients. Returns the new density,
/// the CFL number of the full step and whether semi-Lagrangian transport
/// was used.
fn density_step(
    params: &ModelParams,
    sp: &Spectral,
    coeffs: &Coefficients,
    p: &Field,
    dt: f64,
    options: PksOptions,
) -> Result<(Field, f64, bool)> {
    let PksOptions {
        advection: scheme,
        diffusion,
    } = options;
    let g = &sp.grid;
    let cfl = outflow_cfl(g, &coeffs.velocity, dt);
    let semi_lagrangian = match scheme {
        AdvectionScheme::Auto => cfl > AUTO_SWITCH_CFL,
        AdvectionScheme::Upwind => {
            if cfl > 1.0 {
                return Err(Error::CflViolation {
                    cfl,
                    required_dt: dt / cfl,
                });
            }
            false
        }
        AdvectionScheme::SemiLagrangian => true,
    };
    let half = 0.5 * dt;
    let mut v = p.values.clone();
    react(&mut v, &coeffs.growth, half);
    if !params.drift.is_zero() {
        v = advect(g, &coeffs.velocity, &v, half, semi_lagrangian);
    }
    let symbol = match diffusion {
        DiffusionScheme::Spectral => sp.ksq(),
        DiffusionScheme::Lattice => sp.lattice_ksq(),
    };
    v = heat(sp, v, symbol, 0.5 * params.sigma * params.sigma, dt);
    if !params.drift.is_zero() {
        v = advect(g, &coeffs.velocity, &v, half, semi_lagrangian);
    }
    react(&mut v, &coeffs.growth, half);
    Ok((
        Field {
            grid: p.grid,
            values: v,
            time: p.time + dt,
        },
        cfl,
        semi_lagrangian && !params.drift.is_zero(),
    ))
}

fn react(v: &mut [f64], growth: &[f64], tau: f64) {
    for (x, l) in v.iter_mut().zip(growth) {
        *x *= (l * tau).exp();
    }
}

fn heat(sp: &Spectral, v: Vec<f64>, symbol: &[f64], coef: f64, tau: f64) -> Vec<f64> {
    let spec: Vec<Complex64> = sp
        .forward(&v)
        .into_iter()
        .zip(symbol)
        .map(|(c, k2)| c * (-coef * k2 * tau).exp())
        .collect();
    sp.inverse(spec)
}

/// Face velocity between node `i` and its `+1` neighbour along `axis`.
fn neighbour(g: &GridSpec, i: usize, axis: usize, delta: isize) -> usize {
    let n = g.n as isize;
    match (g.dim, axis) {
        (1, _) => ((i as isize + delta).rem_euclid(n)) as usize,
        (_, 0) => {
            let (r, c) = ((i / g.n) as isize, (i % g.n) as isize);
            (((r + delta).rem_euclid(n)) * n + c) as usize
        }
        _ => {
            let (r, c) = ((i / g.n) as isize, (i % g.n) as isize);
            (r * n + (c + delta).rem_euclid(n)) as usize
        }
    }
}

/// `dt` times the largest total outflow rate of a cell, over `h`.
fn outflow_cfl(g: &GridSpec, vel: &[Vec<f64>], dt: f64) -> f64 {
    let h = g.spacing();
    let mut worst: f64 = 0.0;
    for i in 0..g.len() {
        let mut out = 0.0;
        for (a, va) in vel.iter().enumerate() {
            let right = 0.5 * (va[i] + va[neighbour(g, i, a, 1)]);
            let left = 0.5 * (va[neighbour(g, i, a, -1)] + va[i]);
            out += right.max(0.0) + (-left).max(0.0);
        }
        worst = worst.max(out);
    }
    worst * dt / h
}

/// `-div(p v)` by first-order upwind fluxes.
fn upwind_rhs(g: &GridSpec, vel: &[Vec<f64>], p: &[f64]) -> Vec<f64> {
    let h = g.spacing();
    let mut rhs = vec![0.0; p.len()];
    for (a, va) in vel.iter().enumerate() {
        for i in 0..p.len() {
            let j = neighbour(g, i, a, 1);
            let u = 0.5 * (va[i] + va[j]);
            let flux = u.max(0.0) * p[i] + u.min(0.0) * p[j];
            rhs[i] -= flux / h;
            rhs[j] += flux / h;
        }
    }
    rhs
}

fn advect(g: &GridSpec, vel: &[Vec<f64>], p: &[f64], tau: f64, semi_lagrangian: bool) -> Vec<f64> {
    if semi_lagrangian {
        return remap(g, vel, p, tau);
    }
    // SSP-RK2 (Heun)
    let k1 = upwind_rhs(g, vel, p);
    let stage: Vec<f64> = p.iter().zip(&k1).map(|(x, d)| x + tau * d).collect();
    let k2 = upwind_rhs(g, vel, &stage);
    p.iter()
        .zip(&stage)
        .zip(&k2)
        .map(|((x, s), d)| 0.5 * x + 0.5 * (s + tau * d))
        .collect()
}

/// Conservative forward semi-Lagrangian transport: the mass of each node
/// is carried along a midpoint-rule characteristic and spread onto the
/// surrounding nodes with (bi)linear weights.
fn remap(g: &GridSpec, vel: &[Vec<f64>], p: &[f64], tau: f64) -> Vec<f64> {
    let h = g.spacing();
    let n = g.n as i64;
    let interp_v = |x: &Point| -> Point {
        let mut out = [0.0; 2];
        for (a, va) in vel.iter().enumerate() {
            out[a] = linear_sample(g, va, x);
        }
        Point(out)
    };
    let mut out = vec![0.0; p.len()];
    for i in 0..p.len() {
        if p[i] == 0.0 {
            continue;
        }
        let x0 = g.node(i);
        let v0 = Point([vel[0][i], if g.dim > 1 { vel[1][i] } else { 0.0 }]);
        let mut mid = x0;
        for a in 0..g.dim {
            mid.0[a] += 0.5 * tau * v0.0[a];
        }
        let vm = interp_v(&g.wrap(&mid));
        let mut x1 = x0;
        for a in 0..g.dim {
            x1.0[a] += tau * vm.0[a];
        }
        let x1 = g.wrap(&x1);
        let s0 = x1.0[0] / h;
        let (i0, f0) = (s0.floor() as i64, s0 - s0.floor());
        match g.dim {
            1 => {
                out[i0.rem_euclid(n) as usize] += (1.0 - f0) * p[i];
                out[(i0 + 1).rem_euclid(n) as usize] += f0 * p[i];
            }
            _ => {
                let s1 = x1.0[1] / h;
                let (i1, f1) = (s1.floor() as i64, s1 - s1.floor());
                for (di, wi) in [(0, 1.0 - f0), (1, f0)] {
                    for (dj, wj) in [(0, 1.0 - f1), (1, f1)] {
                        let r = (i0 + di).rem_euclid(n);
                        let c = (i1 + dj).rem_euclid(n);
                        out[(r * n + c) as usize] += wi * wj * p[i];
                    }
                }
            }
        }
    }
    out
}

fn linear_sample(g: &GridSpec, v: &[f64], x: &Point) -> f64 {
    let h = g.spacing();
    let n = g.n as i64;
    let s0 = x.0[0] / h;
    let (i0, f0) = (s0.floor() as i64, s0 - s0.floor());
    match g.dim {
        1 => (1.0 - f0) * v[i0.rem_euclid(n) as usize] + f0 * v[(i0 + 1).rem_euclid(n) as usize],
        _ => {
            let s1 = x.0[1] / h;
            let (i1, f1) = (s1.floor() as i64, s1 - s1.floor());
            let at = |r: i64, c: i64| v[(r.rem_euclid(n) * n + c.rem_euclid(n)) as usize];
            (1.0 - f0) * ((1.0 - f1) * at(i0, i1) + f1 * at(i0, i1 + 1))
                + f0 * ((1.0 - f1) * at(i0 + 1, i1) + f1 * at(i0 + 1, i1 + 1))
        }
    }
}

/// One line of a PDE / Monte-Carlo comparison.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ComparisonRow {
    pub step: usize,
    pub time: f64,
    pub phi: usize,
    pub pde: f64,
    pub mc: f64,
    pub se: f64,
    /// `|pde - mc| <= k se`.
    pub within: bool,
}

/// `<phi, p_t>` against the Monte-Carlo `<phi, mu_t>` at the given steps,
/// each difference judged against `k` standard errors.
pub fn compare_with_monte_carlo(
    density: &[Field],
    mc: &MeanMeasurePath,
    phis: &[&(dyn Fn(&Point) -> f64 + Sync)],
    steps: &[usize],
    k: f64,
) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for &step in steps {
        let p = &density[step];
        let h = p.grid.cell_volume();
        for (j, phi) in phis.iter().enumerate() {
            let pde: f64 = p
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| v * phi(&p.grid.node(i)))
                .sum::<f64>()
                * h;
            let est = mc.pairing(step, phi);
            rows.push(ComparisonRow {
                step,
                time: p.time,
                phi: j,
                pde,
                mc: est.mean,
                se: est.se,
                within: (pde - est.mean).abs() <= k * est.se,
            });
        }
    }
    rows
}

/// Observed order of accuracy from solutions at `dt`, `dt/2`, `dt/4`:
/// `log2(|u1 - u2| / |u2 - u4|)` in the sup norm.
pub fn observed_order(coarse: &[f64], mid: &[f64], fine: &[f64]) -> f64 {
    let e1 = coarse.iter().zip(mid).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let e2 = mid.iter().zip(fine).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    (e1 / e2).log2()
}
