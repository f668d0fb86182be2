//! Time series of fields, as produced by the macroscopic or self-consistent
//! solvers and consumed by the hybrid models.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Field, FieldInterp};
use crate::grid::Spectral;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldPath {
    pub dt: f64,
    pub fields: Vec<Field>,
}

impl FieldPath {
    pub fn new(dt: f64, fields: Vec<Field>) -> Self {
        Self { dt, fields }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.fields.len().saturating_sub(1)) as f64
    }

    /// Field at time `t`: the stored slice when `t` is on the time grid,
    /// linear interpolation between neighbouring slices otherwise.
    pub fn at(&self, t: f64) -> Result<Field> {
        let s = t / self.dt;
        let last = self.fields.len() - 1;
        if s < -1e-9 || s > last as f64 + 1e-9 {
            return Err(Error::InvalidParams(format!(
                "time {t} outside field path [0, {}]",
                self.horizon()
            )));
        }
        let k = s.round();
        if (s - k).abs() <= 1e-9 * s.abs().max(1.0) {
            return Ok(self.fields[k as usize].clone());
        }
        let k0 = (s.floor() as usize).min(last - 1);
        let w = s - k0 as f64;
        let (a, b) = (&self.fields[k0], &self.fields[k0 + 1]);
        Ok(Field {
            grid: a.grid,
            values: a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| (1.0 - w) * x + w * y)
                .collect(),
            time: t,
        })
    }

    /// Resamples onto the step grid `k dt`, `k = 0..=steps`, and builds an
    /// interpolant per slice.
    pub fn prepare(&self, spectral: &Spectral, dt: f64, steps: usize) -> Result<PreparedPath> {
        let fields = (0..=steps)
            .map(|k| self.at(k as f64 * dt))
            .collect::<Result<Vec<_>>>()?;
        let interps = fields
            .par_iter()
            .map(|f| FieldInterp::new(spectral, f))
            .collect();
        Ok(PreparedPath { dt, interps })
    }
}

/// Field path on a simulation's step grid, ready for point evaluation.
#[derive(Clone, Debug)]
pub struct PreparedPath {
    pub dt: f64,
    pub interps: Vec<FieldInterp>,
}

impl PreparedPath {
    pub fn step(&self, k: usize) -> &FieldInterp {
        &self.interps[k.min(self.interps.len() - 1)]
    }

    pub fn steps(&self) -> usize {
        self.interps.len() - 1
    }
}
