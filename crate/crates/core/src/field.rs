//! The chemoattractant on a periodic grid.
//!
//! `rho` solves `d_t rho = D Lap rho - r rho + alpha (kappa * xi)`. Between
//! grid updates the source is frozen and the step is taken in mild form,
//! `rho(t+dt) = S_dt rho(t) + alpha int_0^dt S_(dt-s) source ds`, with both
//! the semigroup and the Duhamel integral applied exactly per Fourier mode.
//! The same `kappa` serves as the deposit kernel for particles and the
//! convolution kernel for densities.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Spectral};
use crate::measure::EmpiricalMeasure;
use crate::state::{fmt_f64, Point};

/// Grid samples of a scalar field at time `time`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub time: f64,
}

impl Field {
    pub fn zeros(grid: GridSpec, time: f64) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            time,
        }
    }

    pub fn from_fn<F: Fn(&Point) -> f64>(grid: GridSpec, time: f64, f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self { grid, values, time }
    }

    /// Riemann sum over the torus (spectrally accurate for smooth periodic data).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.grid.dim {
            1 => writeln!(w, "x,value")?,
            _ => writeln!(w, "x,y,value")?,
        }
        for (i, v) in self.values.iter().enumerate() {
            let p = self.grid.node(i);
            for x in p.coords(self.grid.dim) {
                write!(w, "{},", fmt_f64(*x))?;
            }
            writeln!(w, "{}", fmt_f64(*v))?;
        }
        Ok(())
    }

    /// Binary snapshot: `d: u64, n: u64, L: f64, t: f64` then the row-major
    /// payload, all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.grid.dim as u64).to_le_bytes())?;
        w.write_all(&(self.grid.n as u64).to_le_bytes())?;
        w.write_all(&self.grid.extent.to_le_bytes())?;
        w.write_all(&self.time.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word).map_err(|e| Error::Parse {
                line: 0,
                msg: e.to_string(),
            })?;
            Ok(word)
        };
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let extent = f64::from_le_bytes(next(&mut r)?);
        let time = f64::from_le_bytes(next(&mut r)?);
        let grid = GridSpec::new(dim, n, extent)?;
        let values = (0..grid.len())
            .map(|_| next(&mut r).map(f64::from_le_bytes))
            .collect::<Result<_>>()?;
        Ok(Self { grid, values, time })
    }
}

/// Periodized Gaussian mollifier of width `width`, normalized to unit mass
/// on the grid.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub grid: GridSpec,
    pub width: f64,
    reach: usize,
    norm_1d: f64,
    samples: Vec<f64>,
    spectrum: Vec<Complex64>,
}

/// Gaussian tails beyond this many widths are dropped (< 1e-31 relative).
const KERNEL_CUTOFF: f64 = 12.0;

impl Kernel {
    pub fn gaussian(spectral: &Spectral, width: f64) -> Result<Self> {
        let grid = spectral.grid;
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidParams(format!("kernel width {width} must be positive")));
        }
        let h = grid.spacing();
        let reach = (KERNEL_CUTOFF * width / h).ceil() as usize;
        let mut k = Self {
            grid,
            width,
            reach,
            norm_1d: 1.0,
            samples: Vec::new(),
            spectrum: Vec::new(),
        };
        let raw: f64 = k.profile(0.0).iter().map(|(_, v)| v).sum();
        k.norm_1d = 1.0 / (raw * h);
        let mut samples = vec![0.0; grid.len()];
        k.splat(&mut samples, &Point::default(), 1.0);
        k.spectrum = spectral.forward(&samples);
        k.samples = samples;
        Ok(k)
    }

    /// Default width: four grid cells.
    pub fn default_for(spectral: &Spectral) -> Result<Self> {
        Self::gaussian(spectral, 4.0 * spectral.grid.spacing())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Kernel value at a displacement (periodized, unit mass).
    pub fn value(&self, disp: &Point) -> f64 {
        let mut v = 1.0;
        for c in 0..self.grid.dim {
            let x = disp.0[c];
            let mut s = 0.0;
            let l = self.grid.extent;
            let m = (KERNEL_CUTOFF * self.width / l).ceil() as i64 + 1;
            for img in -m..=m {
                let y = x + img as f64 * l;
                s += (-0.5 * (y / self.width).powi(2)).exp();
            }
            v *= s * self.norm_1d;
        }
        v
    }

    /// Max of |grad kappa| (attained at one width from the centre).
    pub fn grad_sup(&self) -> f64 {
        let w = self.width;
        let peak_1d = self.norm_1d;
        let slope_1d = self.norm_1d * (-0.5f64).exp() / w;
        slope_1d * peak_1d.powi(self.grid.dim as i32 - 1)
    }

    /// Unnormalized 1-d Gaussian weights for nodes near coordinate `x`, as
    /// (node index mod n, weight).
    fn profile(&self, x: f64) -> Vec<(usize, f64)> {
        let h = self.grid.spacing();
        let n = self.grid.n as i64;
        let c = (x / h).floor() as i64;
        let r = self.reach as i64;
        (c - r..=c + r + 1)
            .map(|j| {
                let d = (j as f64 * h - x) / self.width;
                (j.rem_euclid(n) as usize, (-0.5 * d * d).exp())
            })
            .collect()
    }

    fn splat(&self, out: &mut [f64], x: &Point, w: f64) {
        let n = self.grid.n;
        let p0 = self.profile(x.0[0]);
        let s0 = w * self.norm_1d;
        match self.grid.dim {
            1 => {
                for (j, v) in p0 {
                    out[j] += s0 * v;
                }
            }
            _ => {
                let p1 = self.profile(x.0[1]);
                let s1 = self.norm_1d;
                for &(j0, v0) in &p0 {
                    let row = &mut out[j0 * n..(j0 + 1) * n];
                    let a = s0 * v0 * s1;
                    for &(j1, v1) in &p1 {
                        row[j1] += a * v1;
                    }
                }
            }
        }
    }

    /// `kappa * f` for a grid function `f`, by spectral convolution.
    pub fn convolve(&self, spectral: &Spectral, f: &Field) -> Result<Field> {
        self.grid.check_same(&f.grid)?;
        let vol = self.grid.cell_volume();
        let fh = spectral.forward(&f.values);
        let prod = fh
            .iter()
            .zip(&self.spectrum)
            .map(|(a, b)| a * b * vol)
            .collect();
        Ok(Field {
            grid: f.grid,
            values: spectral.inverse(prod),
            time: f.time,
        })
    }
}

/// Atoms per deposit chunk. Chunks are summed in order, so the result does
/// not depend on the number of threads.
const DEPOSIT_CHUNK: usize = 512;

/// `kappa * measure` sampled at the grid nodes, with atoms wrapped onto the
/// torus.
pub fn deposit(measure: &EmpiricalMeasure, kernel: &Kernel, time: f64) -> Result<Field> {
    let grid = kernel.grid;
    if let Some((p, _)) = measure.atoms.iter().find(|(p, w)| !p.is_finite() || !w.is_finite()) {
        return Err(Error::NonFiniteAtom(p.coords(grid.dim).to_vec()));
    }
    let partials: Vec<Vec<f64>> = measure
        .atoms
        .par_chunks(DEPOSIT_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; grid.len()];
            for (p, w) in chunk {
                kernel.splat(&mut acc, &grid.wrap(p), *w);
            }
            acc
        })
        .collect();
    let mut values = vec![0.0; grid.len()];
    for part in partials {
        for (v, a) in values.iter_mut().zip(part) {
            *v += a;
        }
    }
    Ok(Field { grid, values, time })
}

/// Field-equation constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldConstants {
    pub diffusion: f64,
    pub decay: f64,
    pub alpha: f64,
}

/// One mild-form step of length `dt` with the source frozen.
pub fn semigroup_step(
    spectral: &Spectral,
    rho: &Field,
    source: &Field,
    dt: f64,
    c: FieldConstants,
) -> Result<Field> {
    rho.grid.check_same(&spectral.grid)?;
    rho.grid.check_same(&source.grid)?;
    let rh = spectral.forward(&rho.values);
    let sh = spectral.forward(&source.values);
    let next: Vec<Complex64> = rh
        .iter()
        .zip(&sh)
        .zip(spectral.ksq())
        .map(|((r, s), ksq)| {
            let a = c.diffusion * ksq + c.decay;
            let decay = (-a * dt).exp();
            let duhamel = if a > 0.0 { -(-a * dt).exp_m1() / a } else { dt };
            r * decay + s * (c.alpha * duhamel)
        })
        .collect();
    Ok(Field {
        grid: rho.grid,
        values: spectral.inverse(next),
        time: rho.time + dt,
    })
}

/// Trigonometric interpolant of a field: `eval_grad` is the exact gradient
/// of the function `eval` evaluates.
#[derive(Clone, Debug)]
pub struct FieldInterp {
    grid: GridSpec,
    values: Vec<f64>,
    coeffs: Vec<Complex64>,
}

impl FieldInterp {
    pub fn new(spectral: &Spectral, field: &Field) -> Self {
        let norm = 1.0 / field.grid.len() as f64;
        let first = field.values[0];
        let coeffs = if field.values.iter().all(|&v| v == first) {
            // keep constant fields exactly flat
            let mut c = vec![Complex64::new(0.0, 0.0); field.grid.len()];
            c[0] = Complex64::new(first, 0.0);
            c
        } else {
            spectral
                .forward(&field.values)
                .into_iter()
                .map(|c| c * norm)
                .collect()
        };
        Self {
            grid: field.grid,
            values: field.values.clone(),
            coeffs,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn check(&self, x: &Point) -> Result<Point> {
        if !x.is_finite() {
            return Err(Error::NonFiniteQuery(x.coords(self.grid.dim).to_vec()));
        }
        Ok(self.grid.wrap(x))
    }

    /// Flat node index if `x` sits exactly on a node.
    fn node_at(&self, x: &Point) -> Option<usize> {
        let h = self.grid.spacing();
        let mut flat = 0;
        for c in 0..self.grid.dim {
            let j = (x.0[c] / h).round();
            if j * h != x.0[c] {
                return None;
            }
            flat = flat * self.grid.n + (j as usize % self.grid.n);
        }
        Some(flat)
    }

    pub fn eval(&self, x: &Point) -> Result<f64> {
        let x = self.check(x)?;
        if let Some(i) = self.node_at(&x) {
            return Ok(self.values[i]);
        }
        Ok(self.eval_wrapped(&x).0)
    }

    pub fn eval_grad(&self, x: &Point) -> Result<Point> {
        let x = self.check(x)?;
        Ok(self.eval_wrapped(&x).1)
    }

    /// Value and gradient together (one pass over the coefficients).
    pub fn eval_both(&self, x: &Point) -> Result<(f64, Point)> {
        let x = self.check(x)?;
        let (v, g) = self.eval_wrapped(&x);
        Ok((self.node_at(&x).map(|i| self.values[i]).unwrap_or(v), g))
    }

    fn eval_wrapped(&self, x: &Point) -> (f64, Point) {
        let n = self.grid.n;
        match self.grid.dim {
            1 => {
                let (b, db) = basis(&self.grid, x.0[0]);
                let mut v = 0.0;
                let mut g = 0.0;
                for j in 0..n {
                    let c = self.coeffs[j];
                    v += (c * b[j]).re;
                    g += (c * db[j]).re;
                }
                (v, Point([g, 0.0]))
            }
            _ => {
                let (b0, db0) = basis(&self.grid, x.0[0]);
                let (b1, db1) = basis(&self.grid, x.0[1]);
                let mut v = 0.0;
                let mut g0 = 0.0;
                let mut g1 = 0.0;
                for j0 in 0..n {
                    let row = &self.coeffs[j0 * n..(j0 + 1) * n];
                    let mut s = Complex64::new(0.0, 0.0);
                    let mut ds = Complex64::new(0.0, 0.0);
                    for j1 in 0..n {
                        s += row[j1] * b1[j1];
                        ds += row[j1] * db1[j1];
                    }
                    v += (b0[j0] * s).re;
                    g0 += (db0[j0] * s).re;
                    g1 += (b0[j0] * ds).re;
                }
                (v, Point([g0, g1]))
            }
        }
    }
}

/// Per-axis basis functions and their derivatives at coordinate `x`:
/// `exp(i k_j x)` for ordinary modes and `cos(k_N x)` for the Nyquist mode.
fn basis(grid: &GridSpec, x: f64) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = grid.n;
    let k1 = 2.0 * PI / grid.extent;
    let w = Complex64::from_polar(1.0, k1 * x);
    let mut b = vec![Complex64::new(0.0, 0.0); n];
    let mut db = vec![Complex64::new(0.0, 0.0); n];
    let mut cur = Complex64::new(1.0, 0.0);
    for j in 0..n / 2 {
        b[j] = cur;
        if j > 0 {
            b[n - j] = cur.conj();
        }
        cur *= w;
    }
    let kn = k1 * (n / 2) as f64;
    b[n / 2] = Complex64::new((kn * x).cos(), 0.0);
    for j in 0..n {
        db[j] = if j == n / 2 {
            Complex64::new(-kn * (kn * x).sin(), 0.0)
        } else {
            b[j] * Complex64::new(0.0, grid.wavenumber(j))
        };
    }
    (b, db)
}

/// Grid gradient of a field by spectral differentiation.
pub fn grid_gradient(spectral: &Spectral, field: &Field) -> Vec<Vec<f64>> {
    spectral.gradient(&spectral.forward(&field.values))
}

