//! Experiment configuration: flat `key = value` text with dotted sections.
//!
//! ```text
//! # comment
//! model.lambda_bar = 1.5
//! birth.kind = logistic
//! birth.max = 0.9
//! grid.n = 64
//! run.n0_list = 16, 64, 256
//! ```
//!
//! Unknown keys are rejected. `model.lambda_bar` is required (the rate
//! bound must be declared); everything else has a default.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::macroscopic::{AdvectionScheme, DiffusionScheme, PksOptions};
use crate::model::{Drift, FieldInit, InitialLaw, LambdaArg, ModelParams, RateFn};

/// Settings of an experiment run beyond the model itself.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub seed: u64,
    pub n0: u32,
    pub n0_list: Vec<u32>,
    pub replicas: u32,
    /// `(X, M)` ensemble size.
    pub ensemble: u32,
    pub epsilon_list: Vec<f64>,
    pub deltas: Vec<f64>,
    pub picard: bool,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    /// Also solve at `dt/2` and `dt/4` and report the observed order.
    pub order_check: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            n0: 100,
            n0_list: vec![16, 64, 256, 1024],
            replicas: 20,
            ensemble: 1000,
            epsilon_list: vec![0.05, 0.2],
            deltas: Vec::new(),
            picard: false,
            picard_tol: 1e-6,
            picard_max_iters: 50,
            order_check: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub run: RunSettings,
    pub pks: PksOptions,
    /// Normalized `key=value` lines, sorted.
    pub canonical: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_pairs(text)?;
        let mut r = Reader {
            kv: &kv,
            used: Default::default(),
            problems: Vec::new(),
        };
        let d = ModelParams::default();
        let run_d = RunSettings::default();
        let lambda_bar = match r.raw("model.lambda_bar") {
            Some(_) => r.f64("model.lambda_bar", f64::NAN),
            None => {
                r.problems.push("model.lambda_bar: required field is missing".into());
                f64::NAN
            }
        };
        let dim = r.usize("grid.d", d.dim);
        let params = ModelParams {
            sigma: r.f64("model.sigma", d.sigma),
            diffusion: r.f64("model.D", d.diffusion),
            decay: r.f64("model.r", d.decay),
            alpha: r.f64("model.alpha", d.alpha),
            lambda_bar,
            lambda_arg: match r.choice("model.lambda_arg", &["rho", "grad_rho_norm"], "rho") {
                "grad_rho_norm" => LambdaArg::GradRhoNorm,
                _ => LambdaArg::Rho,
            },
            birth: r.rate("birth"),
            death: r.rate("death"),
            drift: r.drift(),
            kernel_cells: r.f64("kernel.width", d.kernel_cells),
            dim,
            grid_n: r.usize("grid.n", d.grid_n),
            extent: r.f64("grid.L", d.extent),
            dt: r.f64("time.dt", d.dt),
            horizon: r.f64("time.T", d.horizon),
            population_cap: r.usize("run.cap", d.population_cap),
            mu0: r.init(),
            rho0: r.rho0(),
        };
        let run = RunSettings {
            seed: r.u64("run.seed", run_d.seed),
            n0: r.u32("run.n0", run_d.n0),
            n0_list: r.list("run.n0_list", run_d.n0_list.clone()),
            replicas: r.u32("run.replicas", run_d.replicas),
            ensemble: r.u32("run.ensemble", run_d.ensemble),
            epsilon_list: r.list("run.epsilon_list", run_d.epsilon_list.clone()),
            deltas: r.list("run.deltas", run_d.deltas.clone()),
            picard: r.choice("run.mode", &["macroscopic", "picard"], "macroscopic") == "picard",
            picard_tol: r.f64("run.picard_tol", run_d.picard_tol),
            picard_max_iters: r.usize("run.picard_max_iters", run_d.picard_max_iters),
            order_check: r.bool("macro.order_check", false),
        };
        let pks = PksOptions {
            advection: match r.choice("macro.advection", &["auto", "upwind", "semi_lagrangian"], "auto") {
                "upwind" => AdvectionScheme::Upwind,
                "semi_lagrangian" => AdvectionScheme::SemiLagrangian,
                _ => AdvectionScheme::Auto,
            },
            diffusion: match r.choice("macro.diffusion", &["spectral", "lattice"], "spectral") {
                "lattice" => DiffusionScheme::Lattice,
                _ => DiffusionScheme::Spectral,
            },
        };
        for k in kv.keys() {
            if !r.used.contains(k.as_str()) {
                r.problems.push(format!("{k}: unknown key"));
            }
        }
        if !(1..=2).contains(&dim) {
            r.problems.push(format!("grid.d: must be 1 or 2, got {dim}"));
        }
        if r.problems.is_empty() {
            if let Err(e) = params.validate() {
                r.problems.push(e.to_string());
            }
        }
        if !r.problems.is_empty() {
            return Err(Error::ConfigInvalid(r.problems));
        }
        let canonical = kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        Ok(Self {
            params,
            run,
            pks,
            canonical,
        })
    }

    /// SHA-256 of the normalized configuration, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            msg: format!("expected key = value, got `{line}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse {
                line: n + 1,
                msg: "empty key".into(),
            });
        }
        if kv.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Parse {
                line: n + 1,
                msg: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(kv)
}

struct Reader<'a> {
    kv: &'a BTreeMap<String, String>,
    used: std::collections::BTreeSet<&'a str>,
    problems: Vec<String>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &str) -> Option<&'a str> {
        let (k, v) = self.kv.get_key_value(key)?;
        self.used.insert(k.as_str());
        Some(v.as_str())
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, default: T) -> T {
        match self.raw(key) {
            None => default,
            Some(v) => v.parse().unwrap_or_else(|_| {
                self.problems.push(format!("{key}: cannot parse `{v}`"));
                default
            }),
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> f64 {
        self.parsed(key, default)
    }

    fn usize(&mut self, key: &str, default: usize) -> usize {
        self.parsed(key, default)
    }

    fn u32(&mut self, key: &str, default: u32) -> u32 {
        self.parsed(key, default)
    }

    fn u64(&mut self, key: &str, default: u64) -> u64 {
        self.parsed(key, default)
    }

    fn bool(&mut self, key: &str, default: bool) -> bool {
        self.parsed(key, default)
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, default: Vec<T>) -> Vec<T> {
        match self.raw(key) {
            None => default,
            Some(v) => {
                let parsed: std::result::Result<Vec<T>, _> =
                    v.split(',').map(|s| s.trim().parse::<T>()).collect();
                parsed.unwrap_or_else(|_| {
                    self.problems.push(format!("{key}: cannot parse list `{v}`"));
                    default
                })
            }
        }
    }

    fn choice(&mut self, key: &str, options: &[&'static str], default: &'static str) -> &'static str {
        match self.raw(key) {
            None => default,
            Some(v) => options.iter().copied().find(|o| *o == v).unwrap_or_else(|| {
                self.problems
                    .push(format!("{key}: `{v}` is not one of {}", options.join(", ")));
                default
            }),
        }
    }

    fn point(&mut self, key: &str) -> [f64; 2] {
        let v: Vec<f64> = self.list(key, vec![0.0, 0.0]);
        match v.as_slice() {
            [x] => [*x, 0.0],
            [x, y] => [*x, *y],
            _ => {
                self.problems.push(format!("{key}: expected 1 or 2 coordinates"));
                [0.0, 0.0]
            }
        }
    }

    fn rate(&mut self, s: &str) -> RateFn {
        let key = |f: &str| format!("{s}.{f}");
        match self.choice(&key("kind"), &["zero", "constant", "indicator", "logistic", "cosine"], "zero") {
            "constant" => RateFn::Constant {
                value: self.f64(&key("value"), 0.0),
            },
            "indicator" => RateFn::Indicator {
                value: self.f64(&key("value"), 0.0),
                axis: self.usize(&key("axis"), 0),
                lo: self.f64(&key("lo"), 0.0),
                hi: self.f64(&key("hi"), 0.0),
            },
            "logistic" => RateFn::Logistic {
                max: self.f64(&key("max"), 0.0),
                steepness: self.f64(&key("steepness"), 1.0),
                midpoint: self.f64(&key("midpoint"), 0.0),
            },
            "cosine" => RateFn::Cosine {
                base: self.f64(&key("base"), 0.0),
                amp: self.f64(&key("amp"), 0.0),
                axis: self.usize(&key("axis"), 0),
                period: self.f64(&key("period"), 1.0),
            },
            _ => RateFn::Zero,
        }
    }

    fn drift(&mut self) -> Drift {
        match self.choice("drift.kind", &["zero", "constant", "chemotaxis"], "zero") {
            "constant" => Drift::Constant {
                velocity: self.point("drift.velocity"),
            },
            "chemotaxis" => {
                if self.raw("drift.g_sat").is_none() {
                    self.problems
                        .push("drift.g_sat: required for chemotaxis (declares the drift bound)".into());
                }
                Drift::Chemotaxis {
                    chi: self.f64("drift.chi", 1.0),
                    g_sat: self.f64("drift.g_sat", 1.0),
                }
            }
            _ => Drift::Zero,
        }
    }

    fn init(&mut self) -> InitialLaw {
        match self.choice("init.kind", &["uniform", "gaussian", "dirac"], "uniform") {
            "gaussian" => InitialLaw::Gaussian {
                center: self.point("init.center"),
                std: self.f64("init.std", 1.0),
            },
            "dirac" => InitialLaw::Dirac {
                at: self.point("init.at"),
            },
            _ => InitialLaw::Uniform,
        }
    }

    fn rho0(&mut self) -> FieldInit {
        match self.choice("rho0.kind", &["zero", "constant", "cosine"], "zero") {
            "constant" => FieldInit::Constant {
                value: self.f64("rho0.value", 0.0),
            },
            "cosine" => FieldInit::Cosine {
                offset: self.f64("rho0.offset", 0.0),
                amp: self.f64("rho0.amp", 0.0),
                mode: self.u32("rho0.mode", 1),
                axis: self.usize("rho0.axis", 0),
            },
            _ => FieldInit::Zero,
        }
    }
}
