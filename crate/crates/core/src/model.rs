//! Model constants and the registry of rate, drift and initial-condition
//! functions.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{deposit, Field, FieldConstants, Kernel};
use crate::grid::{GridSpec, Spectral};
use crate::lineage::LineageIndex;
use crate::measure::EmpiricalMeasure;
use crate::noise::{NoiseUniverse, Purpose};
use crate::state::Point;

/// A nonnegative rate `lambda(x, s)`, where `s` is the field argument
/// (`rho(x)` or `|grad rho(x)|`, see [`LambdaArg`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateFn {
    Zero,
    Constant { value: f64 },
    /// `value` on the slab `lo <= x[axis] < hi` of the wrapped coordinate.
    Indicator { value: f64, axis: usize, lo: f64, hi: f64 },
    /// `max / (1 + exp(-steepness (s - midpoint)))`.
    Logistic { max: f64, steepness: f64, midpoint: f64 },
    /// `base + amp cos(2 pi x[axis] / period)`.
    Cosine { base: f64, amp: f64, axis: usize, period: f64 },
}

impl RateFn {
    /// `x` must already be wrapped onto the torus.
    pub fn eval(&self, x: &Point, s: f64) -> f64 {
        match *self {
            RateFn::Zero => 0.0,
            RateFn::Constant { value } => value,
            RateFn::Indicator { value, axis, lo, hi } => {
                if (lo..hi).contains(&x.0[axis]) {
                    value
                } else {
                    0.0
                }
            }
            RateFn::Logistic {
                max,
                steepness,
                midpoint,
            } => max / (1.0 + (-steepness * (s - midpoint)).exp()),
            RateFn::Cosine {
                base,
                amp,
                axis,
                period,
            } => base + amp * (TAU * x.0[axis] / period).cos(),
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            RateFn::Zero => 0.0,
            RateFn::Constant { value } | RateFn::Indicator { value, .. } => value,
            RateFn::Logistic { max, .. } => max,
            RateFn::Cosine { base, amp, .. } => base + amp.abs(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup() == 0.0
    }

    fn validate(&self, name: &str, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(format!("{name}: {m}")));
        match *self {
            RateFn::Zero => Ok(()),
            RateFn::Constant { value } if !(value >= 0.0 && value.is_finite()) => {
                bad(format!("rate {value} must be nonnegative"))
            }
            RateFn::Indicator { value, axis, lo, hi } => {
                if !(value >= 0.0 && value.is_finite()) {
                    bad(format!("rate {value} must be nonnegative"))
                } else if axis >= dim {
                    bad(format!("axis {axis} out of range"))
                } else if !(lo < hi) {
                    bad("empty slab".into())
                } else {
                    Ok(())
                }
            }
            RateFn::Logistic { max, steepness, .. } if !(max >= 0.0 && steepness.is_finite()) => {
                bad("logistic needs max >= 0".into())
            }
            RateFn::Cosine {
                base,
                amp,
                axis,
                period,
            } => {
                if base < amp.abs() {
                    bad("cosine rate must stay nonnegative (base >= |amp|)".into())
                } else if axis >= dim || !(period > 0.0) {
                    bad("bad cosine axis or period".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Drift `b(x, g)` with `g = grad rho(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Zero,
    Constant { velocity: [f64; 2] },
    /// `chi g / sqrt(1 + (|g| / g_sat)^2)`, bounded by `chi g_sat`.
    Chemotaxis { chi: f64, g_sat: f64 },
}

impl Drift {
    #[inline]
    pub fn eval(&self, _x: &Point, g: &Point) -> Point {
        match *self {
            Drift::Zero => Point::default(),
            Drift::Constant { velocity } => Point(velocity),
            Drift::Chemotaxis { chi, g_sat } => {
                let gn = g.0[0].hypot(g.0[1]);
                let s = chi / (1.0 + (gn / g_sat).powi(2)).sqrt();
                Point([s * g.0[0], s * g.0[1]])
            }
        }
    }

    pub fn bound(&self) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Constant { velocity } => velocity[0].hypot(velocity[1]),
            Drift::Chemotaxis { chi, g_sat } => chi.abs() * g_sat,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.bound() == 0.0
    }
}

/// Which field quantity the rates see.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaArg {
    #[default]
    Rho,
    GradRhoNorm,
}

impl LambdaArg {
    #[inline]
    pub fn select(&self, value: f64, grad: &Point) -> f64 {
        match self {
            LambdaArg::Rho => value,
            LambdaArg::GradRhoNorm => grad.0[0].hypot(grad.0[1]),
        }
    }
}

/// Law `mu_0` of the founders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Uniform,
    Gaussian { center: [f64; 2], std: f64 },
    Dirac { at: [f64; 2] },
}

impl InitialLaw {
    /// Position drawn from the stream `(line, purpose)`; the same line
    /// always gets the same founder position.
    pub fn sample(&self, universe: &NoiseUniverse, grid: &GridSpec, line: u32, purpose: Purpose) -> Point {
        let key = universe.key(LineageIndex::root(line), purpose);
        let mut p = [0.0; 2];
        for (c, v) in p.iter_mut().enumerate().take(grid.dim) {
            *v = match *self {
                InitialLaw::Uniform => key.uniform(c as u64) * grid.extent,
                InitialLaw::Gaussian { center, std } => center[c] + std * key.normal(c as u64),
                InitialLaw::Dirac { at } => at[c],
            };
        }
        grid.wrap(&Point(p))
    }

    /// Grid density of `mu_0` (unit mass). A Dirac mass is replaced by the
    /// mollifier centred at the point.
    pub fn density(&self, grid: &GridSpec, kernel: &Kernel) -> Result<Field> {
        Ok(match *self {
            InitialLaw::Uniform => {
                let v = 1.0 / grid.extent.powi(grid.dim as i32);
                Field::from_fn(*grid, 0.0, |_| v)
            }
            InitialLaw::Gaussian { center, std } => {
                let c = Point(center);
                let mut f = Field::from_fn(*grid, 0.0, |x| {
                    let mut v = 1.0;
                    for a in 0..grid.dim {
                        let mut s = 0.0;
                        for img in -3i32..=3 {
                            let y = x.0[a] - c.0[a] + f64::from(img) * grid.extent;
                            s += (-0.5 * (y / std).powi(2)).exp();
                        }
                        v *= s;
                    }
                    v
                });
                let mass = f.integral();
                f.values.iter_mut().for_each(|v| *v /= mass);
                f
            }
            InitialLaw::Dirac { at } => {
                deposit(&EmpiricalMeasure::new(vec![(Point(at), 1.0)]), kernel, 0.0)?
            }
        })
    }
}

/// Initial chemoattractant profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldInit {
    Zero,
    Constant { value: f64 },
    /// `offset + amp cos(2 pi mode x[axis] / L)`.
    Cosine { offset: f64, amp: f64, mode: u32, axis: usize },
}

impl FieldInit {
    pub fn sample(&self, grid: &GridSpec) -> Field {
        match *self {
            FieldInit::Zero => Field::zeros(*grid, 0.0),
            FieldInit::Constant { value } => Field::from_fn(*grid, 0.0, |_| value),
            FieldInit::Cosine {
                offset,
                amp,
                mode,
                axis,
            } => Field::from_fn(*grid, 0.0, |x| {
                offset + amp * (TAU * f64::from(mode) * x.0[axis] / grid.extent).cos()
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub sigma: f64,
    pub diffusion: f64,
    pub decay: f64,
    pub alpha: f64,
    pub lambda_bar: f64,
    pub birth: RateFn,
    pub death: RateFn,
    pub drift: Drift,
    pub lambda_arg: LambdaArg,
    /// Mollifier width in grid cells.
    pub kernel_cells: f64,
    pub dim: usize,
    pub grid_n: usize,
    pub extent: f64,
    pub dt: f64,
    pub horizon: f64,
    pub population_cap: usize,
    pub mu0: InitialLaw,
    pub rho0: FieldInit,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            diffusion: 1.0,
            decay: 1.0,
            alpha: 1.0,
            lambda_bar: 1.0,
            birth: RateFn::Zero,
            death: RateFn::Zero,
            drift: Drift::Zero,
            lambda_arg: LambdaArg::Rho,
            kernel_cells: 4.0,
            dim: 1,
            grid_n: 128,
            extent: 10.0,
            dt: 0.01,
            horizon: 1.0,
            population_cap: 1_000_000,
            mu0: InitialLaw::Uniform,
            rho0: FieldInit::Zero,
        }
    }
}

impl ModelParams {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.dim, self.grid_n, self.extent)
    }

    pub fn field_constants(&self) -> FieldConstants {
        FieldConstants {
            diffusion: self.diffusion,
            decay: self.decay,
            alpha: self.alpha,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn kernel(&self, spectral: &Spectral) -> Result<Kernel> {
        Kernel::gaussian(spectral, self.kernel_cells * spectral.grid.spacing())
    }

    /// Net growth rate `lambda_b - lambda_d`.
    #[inline]
    pub fn net_rate(&self, x: &Point, s: f64) -> f64 {
        self.birth.eval(x, s) - self.death.eval(x, s)
    }

    /// Checks positivity of the constants, the rate bound
    /// `sup(lambda_b + lambda_d) < lambda_bar`, and the discretization.
    /// `alpha = 0` is accepted (decoupled field).
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("sigma", self.sigma),
            ("D", self.diffusion),
            ("r", self.decay),
            ("lambda_bar", self.lambda_bar),
            ("dt", self.dt),
            ("T", self.horizon),
            ("kernel.width", self.kernel_cells),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            problems.push(format!("alpha = {} must be nonnegative", self.alpha));
        }
        if let Err(e) = self.grid() {
            problems.push(e.to_string());
        }
        for (name, r) in [("birth", &self.birth), ("death", &self.death)] {
            if let Err(e) = r.validate(name, self.dim) {
                problems.push(e.to_string());
            }
        }
        let total = self.birth.sup() + self.death.sup();
        if total >= self.lambda_bar {
            problems.push(format!(
                "sup(lambda_b + lambda_d) = {total} must be < lambda_bar = {}",
                self.lambda_bar
            ));
        }
        if !self.drift.bound().is_finite() {
            problems.push("drift bound must be finite".into());
        }
        if self.dt > 0.0 && self.horizon > 0.0 {
            let steps = self.horizon / self.dt;
            if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                problems.push(format!("T = {} is not a multiple of dt = {}", self.horizon, self.dt));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelParams::default().validate().unwrap();
    }

    #[test]
    fn rate_bound_is_strict() {
        let p = ModelParams {
            birth: RateFn::Constant { value: 0.6 },
            death: RateFn::Constant { value: 0.4 },
            lambda_bar: 1.0,
            ..Default::default()
        };
        let e = p.validate().unwrap_err().to_string();
        assert!(e.contains("lambda_bar"), "{e}");
    }

    #[test]
    fn collects_all_problems() {
        let p = ModelParams {
            sigma: -1.0,
            decay: 0.0,
            horizon: 1.005,
            ..Default::default()
        };
        let e = p.validate().unwrap_err().to_string();
        assert!(e.contains("sigma") && e.contains("r = 0") && e.contains("multiple of dt"), "{e}");
    }

    #[test]
    fn chemotactic_drift_saturates() {
        let d = Drift::Chemotaxis { chi: 2.0, g_sat: 0.5 };
        let v = d.eval(&Point::default(), &Point([1e6, 0.0]));
        assert!((v.0[0] - 1.0).abs() < 1e-6);
        assert!(v.0[0] <= d.bound());
        let small = d.eval(&Point::default(), &Point([1e-4, 0.0]));
        assert!((small.0[0] - 2e-4).abs() < 1e-10);
    }

    #[test]
    fn rates() {
        let ind = RateFn::Indicator {
            value: 0.7,
            axis: 0,
            lo: 0.0,
            hi: 5.0,
        };
        assert_eq!(ind.eval(&Point([4.9, 0.0]), 0.0), 0.7);
        assert_eq!(ind.eval(&Point([5.0, 0.0]), 0.0), 0.0);
        let lg = RateFn::Logistic {
            max: 1.0,
            steepness: 3.0,
            midpoint: 0.2,
        };
        assert!((lg.eval(&Point::default(), 0.2) - 0.5).abs() < 1e-15);
        let cosine = RateFn::Cosine {
            base: 0.5,
            amp: 0.6,
            axis: 0,
            period: 1.0,
        };
        assert!(cosine.validate("b", 1).is_err());
    }

    #[test]
    fn gaussian_density_has_unit_mass() {
        let g = GridSpec::new(1, 64, 10.0).unwrap();
        let sp = Spectral::new(g);
        let k = Kernel::default_for(&sp).unwrap();
        let law = InitialLaw::Gaussian {
            center: [3.0, 0.0],
            std: 0.8,
        };
        assert!((law.density(&g, &k).unwrap().integral() - 1.0).abs() < 1e-12);
        let dirac = InitialLaw::Dirac { at: [2.0, 0.0] };
        assert!((dirac.density(&g, &k).unwrap().integral() - 1.0).abs() < 1e-10);
    }
}
