//! Periodic grids on the torus `[0, L)^d` and the FFT machinery on them.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::state::{Point, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub extent: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, extent: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("n = {n} must be a power of two >= 4")));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::InvalidGrid(format!("extent {extent} must be positive")));
        }
        Ok(Self { dim, extent, n })
    }

    pub fn spacing(&self) -> f64 {
        self.extent / self.n as f64
    }

    /// Volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node coordinates of flat index `i` (row-major, last axis fastest).
    pub fn node(&self, i: usize) -> Point {
        let h = self.spacing();
        match self.dim {
            1 => Point([i as f64 * h, 0.0]),
            _ => Point([(i / self.n) as f64 * h, (i % self.n) as f64 * h]),
        }
    }

    pub fn wrap(&self, p: &Point) -> Point {
        let mut q = *p;
        for x in q.0.iter_mut().take(self.dim) {
            *x = x.rem_euclid(self.extent);
            // rem_euclid can round up to the extent itself
            if *x >= self.extent {
                *x = 0.0;
            }
        }
        q
    }

    /// Minimum-image displacement `a - b` on the torus.
    pub fn displacement(&self, a: &Point, b: &Point) -> Point {
        let mut d = [0.0; MAX_DIM];
        for (c, v) in d.iter_mut().enumerate().take(self.dim) {
            let mut x = (a.0[c] - b.0[c]).rem_euclid(self.extent);
            if x > 0.5 * self.extent {
                x -= self.extent;
            }
            *v = x;
        }
        Point(d)
    }

    /// Signed angular wavenumber of FFT index `j` on one axis.
    pub fn wavenumber(&self, j: usize) -> f64 {
        let s = if j <= self.n / 2 { j as f64 } else { j as f64 - self.n as f64 };
        2.0 * PI * s / self.extent
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Forward/inverse FFT plans plus per-mode wavenumbers for one grid.
#[derive(Clone)]
pub struct Spectral {
    pub grid: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    ksq: Vec<f64>,
    lattice_ksq: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.n);
        let inv = planner.plan_fft_inverse(grid.n);
        let ksq = (0..grid.len())
            .map(|i| {
                let (a, b) = mode_indices(&grid, i);
                let ka = grid.wavenumber(a);
                let kb = b.map(|b| grid.wavenumber(b)).unwrap_or(0.0);
                ka * ka + kb * kb
            })
            .collect();
        let h = grid.spacing();
        let lattice_ksq = (0..grid.len())
            .map(|i| {
                let (a, b) = mode_indices(&grid, i);
                let s = |j: usize| (2.0 / h * (0.5 * grid.wavenumber(j) * h).sin()).powi(2);
                s(a) + b.map(s).unwrap_or(0.0)
            })
            .collect();
        Self {
            grid,
            fwd,
            inv,
            ksq,
            lattice_ksq,
        }
    }

    /// |k|^2 for each flat mode index.
    pub fn ksq(&self) -> &[f64] {
        &self.ksq
    }

    /// Symbol of minus the nearest-neighbour discrete Laplacian,
    /// `sum_a (2/h sin(k_a h / 2))^2`.
    pub fn lattice_ksq(&self) -> &[f64] {
        &self.lattice_ksq
    }

    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, &self.fwd);
        buf
    }

    /// Inverse transform including the 1/N normalization; returns the real part.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, &self.inv);
        let norm = 1.0 / self.grid.len() as f64;
        spec.into_iter().map(|c| c.re * norm).collect()
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n;
        plan.process(buf);
        if self.grid.dim == 2 {
            let mut t = transpose(buf, n);
            plan.process(&mut t);
            buf.copy_from_slice(&transpose(&t, n));
        }
    }

    /// Spectral partial derivatives on the grid; the Nyquist mode is dropped.
    pub fn gradient(&self, spec: &[Complex64]) -> Vec<Vec<f64>> {
        let g = &self.grid;
        (0..g.dim)
            .map(|axis| {
                let d: Vec<Complex64> = spec
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let (a, b) = mode_indices(g, i);
                        let j = if axis == 0 { a } else { b.unwrap() };
                        if j == g.n / 2 {
                            Complex64::new(0.0, 0.0)
                        } else {
                            c * Complex64::new(0.0, g.wavenumber(j))
                        }
                    })
                    .collect();
                self.inverse(d)
            })
            .collect()
    }
}

/// Per-axis FFT indices of flat mode `i`.
pub(crate) fn mode_indices(grid: &GridSpec, i: usize) -> (usize, Option<usize>) {
    match grid.dim {
        1 => (i, None),
        _ => (i / grid.n, Some(i % grid.n)),
    }
}

fn transpose(buf: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); buf.len()];
    for r in 0..n {
        for c in 0..n {
            out[c * n + r] = buf[r * n + c];
        }
    }
    out
}
