//! Weighted atomic measures and their pairing with test functions.

use crate::state::{Point, PopulationState};

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EmpiricalMeasure {
    pub atoms: Vec<(Point, f64)>,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<(Point, f64)>) -> Self {
        Self { atoms }
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    pub fn integrate<F: Fn(&Point) -> f64>(&self, phi: F) -> f64 {
        self.atoms.iter().map(|(x, w)| w * phi(x)).sum()
    }
}

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Default, serde::Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// Sample mean and `sd / sqrt(n)` (unbiased variance; `se = 0` for a
    /// single sample).
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self { mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }

    /// `|self - other| <= k * sqrt(se1^2 + se2^2)`.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.se.hypot(other.se)
    }
}

/// One atom of weight `1/n0` per live cell, in lineage order.
pub fn empirical(pop: &PopulationState, n0: u32) -> EmpiricalMeasure {
    let w = 1.0 / f64::from(n0);
    EmpiricalMeasure {
        atoms: pop.live().map(|(_, p)| (*p, w)).collect(),
    }
}
