//! Numerical diagnostics of the limit theorems: the vague distance between
//! measures, hydrodynamic-limit and pathwise-coupling experiments, and the
//! Yule bound on the population size.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::GridSpec;
use crate::measure::{EmpiricalMeasure, Estimate};
use crate::meanfield::{field_gap, solve_selfconsistent_field, SelfConsistentField, SelfConsistentMode};
use crate::micro::{hybrid_system, microscopic_system, Discretization, Event};
use crate::model::ModelParams;
use crate::noise::NoiseUniverse;
use crate::path::{FieldPath, PreparedPath};
use crate::state::{fmt_f64, state_distance, Point};

/// `psi(|x - c| / R)` with `psi(r) = exp(1 - 1/(1 - r^2))` on `r < 1`;
/// peak value 1 at the centre, distance measured on the torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub center: Point,
    pub radius: f64,
}

/// Test functions `phi_k` with weights `2^-(k+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunctionBank {
    grid: GridSpec,
    bumps: Vec<Bump>,
}

impl TestFunctionBank {
    pub fn new(grid: GridSpec, bumps: Vec<Bump>) -> Result<Self> {
        for b in &bumps {
            if !(b.radius > 0.0 && b.radius < 0.5 * grid.extent) {
                return Err(Error::InvalidParams(format!(
                    "bump radius {} must lie in (0, L/2)",
                    b.radius
                )));
            }
        }
        Ok(Self { grid, bumps })
    }

    /// Eight bumps at two scales: radius `L/4` and `L/8` around four
    /// centres (a row of four in 1-d, a 2x2 lattice in 2-d).
    pub fn default_for(grid: GridSpec) -> Self {
        let l = grid.extent;
        let centers: Vec<Point> = match grid.dim {
            1 => (0..4).map(|j| Point([(j as f64 + 0.5) * l / 4.0, 0.0])).collect(),
            _ => (0..4)
                .map(|j| Point([((j / 2) as f64 + 0.5) * l / 2.0, ((j % 2) as f64 + 0.5) * l / 2.0]))
                .collect(),
        };
        let bumps = [l / 4.0, l / 8.0]
            .iter()
            .flat_map(|&radius| centers.iter().map(move |&center| Bump { center, radius }))
            .collect();
        Self { grid, bumps }
    }

    pub fn len(&self) -> usize {
        self.bumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bumps.is_empty()
    }

    pub fn weight(&self, k: usize) -> f64 {
        0.5f64.powi(k as i32 + 1)
    }

    pub fn eval(&self, k: usize, x: &Point) -> f64 {
        let b = &self.bumps[k];
        let d = self.grid.displacement(x, &b.center);
        let r2 = (d.0[0] * d.0[0] + d.0[1] * d.0[1]) / (b.radius * b.radius);
        if r2 < 1.0 {
            (1.0 - 1.0 / (1.0 - r2)).exp()
        } else {
            0.0
        }
    }

    /// `<phi_k, m>` for every `k`.
    pub fn pairings<M: Pairable + ?Sized>(&self, m: &M) -> Vec<f64> {
        (0..self.len()).map(|k| m.pair(&|x| self.eval(k, x))).collect()
    }
}

/// Anything a test function can be integrated against.
pub trait Pairable {
    fn pair(&self, phi: &dyn Fn(&Point) -> f64) -> f64;
}

impl Pairable for EmpiricalMeasure {
    fn pair(&self, phi: &dyn Fn(&Point) -> f64) -> f64 {
        self.integrate(phi)
    }
}

/// A density on the grid, integrated by the periodic trapezoid rule.
impl Pairable for Field {
    fn pair(&self, phi: &dyn Fn(&Point) -> f64) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * phi(&self.grid.node(i)))
            .sum();
        s * self.grid.cell_volume()
    }
}

/// `sum_k 2^-(k+1) min(1, |<phi_k, mu - nu>|)`.
pub fn vague_distance<A: Pairable + ?Sized, B: Pairable + ?Sized>(
    mu: &A,
    nu: &B,
    bank: &TestFunctionBank,
) -> f64 {
    distance_from_pairings(bank, &bank.pairings(mu), &bank.pairings(nu))
}

pub fn distance_from_pairings(bank: &TestFunctionBank, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(k, (x, y))| bank.weight(k) * (x - y).abs().min(1.0))
        .sum()
}

/// Wilson score interval at 95%: `(p_hat, lo, hi)`.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64, f64) {
    const Z: f64 = 1.959_963_984_540_054;
    if n == 0 {
        return (f64::NAN, 0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    (p, (centre - half).max(0.0), (centre + half).min(1.0))
}

/// Least-squares slope and `R^2` of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub kind: String,
    pub n0: u32,
    /// `None` for rows aggregated over replicas.
    pub replica: Option<u32>,
    pub stat: String,
    pub value: f64,
    pub se: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl ReportRow {
    fn value(kind: &str, n0: u32, replica: Option<u32>, stat: &str, value: f64) -> Self {
        Self {
            kind: kind.into(),
            n0,
            replica,
            stat: stat.into(),
            value,
            se: None,
            lo: None,
            hi: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    pub summary: BTreeMap<String, Value>,
}

pub const REPORT_HEADER: &str = "kind,n0,replica,stat,value,se,lo,hi";

impl ConvergenceReport {
    /// CSV with the fixed header; `preamble` lines are written first as
    /// `# ` comments.
    pub fn write_csv<W: Write>(&self, mut w: W, preamble: &[String]) -> std::io::Result<()> {
        for p in preamble {
            writeln!(w, "# {p}")?;
        }
        writeln!(w, "{REPORT_HEADER}")?;
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.kind,
                r.n0,
                r.replica.map(|x| x.to_string()).unwrap_or_else(|| "all".into()),
                r.stat,
                fmt_f64(r.value),
                opt(r.se),
                opt(r.lo),
                opt(r.hi)
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary is plain data")
    }

    /// Aggregated rows of one kind and statistic, in `n0` order.
    pub fn aggregate(&self, kind: &str, stat: &str) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.replica.is_none() && r.kind == kind && r.stat == stat)
            .collect()
    }

    fn push_estimate(&mut self, kind: &str, n0: u32, values: &[f64]) {
        let e = Estimate::from_samples(values);
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
        self.rows.push(ReportRow {
            se: Some(e.se),
            ..ReportRow::value(kind, n0, None, "mean", e.mean)
        });
        self.rows.push(ReportRow::value(kind, n0, None, "q50", q(0.5)));
        self.rows.push(ReportRow::value(kind, n0, None, "q90", q(0.9)));
    }

    fn push_probability(&mut self, kind: &str, n0: u32, stat: &str, hits: usize, n: usize) {
        let (p, lo, hi) = wilson_interval(hits, n);
        self.rows.push(ReportRow {
            lo: Some(lo),
            hi: Some(hi),
            ..ReportRow::value(kind, n0, None, stat, p)
        });
    }
}

/// Mean-field reference shared by the experiments.
struct Reference {
    disc: Discretization,
    solution: SelfConsistentField,
    prepared: PreparedPath,
}

impl Reference {
    fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let disc = Discretization::new(params)?;
        let solution = solve_selfconsistent_field(params, &disc, SelfConsistentMode::Macroscopic)?;
        let prepared = solution.rho.prepare(&disc.spectral, params.dt, params.steps())?;
        Ok(Self {
            disc,
            solution,
            prepared,
        })
    }
}

fn check_lists(n0_list: &[u32], replicas: u32) -> Result<()> {
    if n0_list.is_empty() || n0_list.contains(&0) || replicas == 0 {
        return Err(Error::InvalidParams(
            "need a nonempty list of positive n0 and at least one replica".into(),
        ));
    }
    Ok(())
}

/// For each `n0` and replica: `sup_t d_M(xi_t, mu_bar_t)` and
/// `sup_t (|rho^n0 - rho|_inf + |grad rho^n0 - grad rho|_inf)` over the step
/// times, against the macroscopic solution. Replica `r` runs on
/// `universe.replica(r)`.
pub fn measure_convergence_experiment(
    params: &ModelParams,
    n0_list: &[u32],
    replicas: u32,
    universe: &NoiseUniverse,
) -> Result<ConvergenceReport> {
    check_lists(n0_list, replicas)?;
    let reference = Reference::new(params)?;
    let bank = TestFunctionBank::default_for(reference.disc.spectral.grid);
    let density = reference.solution.density.as_ref().expect("macroscopic solve has a density");
    let target: Vec<Vec<f64>> = density.par_iter().map(|p| bank.pairings(p)).collect();
    let rho = &reference.solution.rho.fields;

    let mut report = ConvergenceReport::default();
    let mut mean_dm = Vec::new();
    let mut mean_field = Vec::new();
    for &n0 in n0_list {
        let per: Vec<(f64, f64)> = (0..replicas)
            .into_par_iter()
            .map(|r| -> Result<(f64, f64)> {
                let mut sys =
                    microscopic_system(params, &reference.disc, n0, universe.replica(u64::from(r)), false)?;
                let mut dm: f64 = 0.0;
                let mut fe: f64 = 0.0;
                for k in 0..=params.steps() {
                    if k > 0 {
                        sys.step()?;
                    }
                    let xi = sys.measure();
                    dm = dm.max(distance_from_pairings(&bank, &bank.pairings(&xi), &target[k]));
                    let field = sys.field().expect("coupled system has a field");
                    fe = fe.max(field_gap(&reference.disc, field, &rho[k]));
                }
                Ok((dm, fe))
            })
            .collect::<Result<_>>()?;
        for (r, (dm, fe)) in per.iter().enumerate() {
            report.rows.push(ReportRow::value("d_M", n0, Some(r as u32), "sup_t", *dm));
            report.rows.push(ReportRow::value("field", n0, Some(r as u32), "sup_t", *fe));
        }
        let dms: Vec<f64> = per.iter().map(|x| x.0).collect();
        let fes: Vec<f64> = per.iter().map(|x| x.1).collect();
        report.push_estimate("d_M", n0, &dms);
        report.push_estimate("field", n0, &fes);
        mean_dm.push(Estimate::from_samples(&dms).mean);
        mean_field.push(Estimate::from_samples(&fes).mean);
    }
    let xs: Vec<f64> = n0_list.iter().map(|&n| f64::from(n)).collect();
    let strictly_decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let s = &mut report.summary;
    s.insert("experiment".into(), "measure_convergence".into());
    s.insert("n0_list".into(), n0_list.into());
    s.insert("replicas".into(), replicas.into());
    s.insert("mean_d_M".into(), mean_dm.clone().into());
    s.insert("mean_field_error".into(), mean_field.clone().into());
    if n0_list.len() > 1 {
        s.insert("d_M_loglog_slope".into(), loglog_slope(&xs, &mean_dm).into());
        s.insert("field_loglog_slope".into(), loglog_slope(&xs, &mean_field).into());
    }
    s.insert("d_M_strictly_decreasing".into(), strictly_decreasing(&mean_dm).into());
    s.insert("field_strictly_decreasing".into(), strictly_decreasing(&mean_field).into());
    Ok(report)
}

fn line_events(events: &[Event], line: u32) -> Vec<(crate::LineageIndex, crate::micro::EventKind, u64)> {
    events
        .iter()
        .filter(|e| e.idx.line() == line)
        .map(|e| (e.idx, e.kind, e.time.to_bits()))
        .collect()
}

/// Line 1 of the `n0`-particle system against the hybrid line 1 driven by
/// the mean-field field, both on `universe.replica(r)`: per replica the
/// supremum over step times of `d_X` and whether the event lists differ;
/// per `n0` the exceedance probabilities `P(S > eps)` with Wilson intervals.
pub fn coupling_experiment(
    params: &ModelParams,
    n0_list: &[u32],
    replicas: u32,
    epsilon_list: &[f64],
    universe: &NoiseUniverse,
) -> Result<ConvergenceReport> {
    check_lists(n0_list, replicas)?;
    let reference = Reference::new(params)?;
    let mut report = ConvergenceReport::default();
    let mut exceed: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    let mut mismatch = Vec::new();
    for &n0 in n0_list {
        let per: Vec<(f64, bool)> = (0..replicas)
            .into_par_iter()
            .map(|r| -> Result<(f64, bool)> {
                let u = universe.replica(u64::from(r));
                let mut micro = microscopic_system(params, &reference.disc, n0, u, false)?;
                let mut hybrid = hybrid_system(params, &reference.prepared, u, 1, false)?;
                let mut s = state_distance(&micro.line_state(1), &hybrid.line_state(1))?;
                for _ in 0..params.steps() {
                    micro.step()?;
                    hybrid.step()?;
                    s = s.max(state_distance(&micro.line_state(1), &hybrid.line_state(1))?);
                }
                let differ = line_events(micro.events(), 1) != line_events(hybrid.events(), 1);
                Ok((s, differ))
            })
            .collect::<Result<_>>()?;
        for (r, (s, m)) in per.iter().enumerate() {
            report.rows.push(ReportRow::value("coupling", n0, Some(r as u32), "sup_t_d_X", *s));
            report
                .rows
                .push(ReportRow::value("mismatch", n0, Some(r as u32), "event_lists_differ", f64::from(u8::from(*m))));
        }
        let ss: Vec<f64> = per.iter().map(|x| x.0).collect();
        report.push_estimate("coupling", n0, &ss);
        for &eps in epsilon_list {
            let hits = ss.iter().filter(|&&s| s > eps).count();
            let stat = format!("P(S>{})", fmt_f64(eps));
            report.push_probability("coupling", n0, &stat, hits, ss.len());
            exceed.entry(stat).or_default().push(wilson_interval(hits, ss.len()));
        }
        let hits = per.iter().filter(|x| x.1).count();
        report.push_probability("mismatch", n0, "P(mismatch)", hits, per.len());
        mismatch.push(wilson_interval(hits, per.len()).0);
    }
    let s = &mut report.summary;
    s.insert("experiment".into(), "coupling".into());
    s.insert("n0_list".into(), n0_list.into());
    s.insert("replicas".into(), replicas.into());
    s.insert("epsilon_list".into(), epsilon_list.into());
    let mut monotone = serde_json::Map::new();
    for (stat, ivs) in &exceed {
        monotone.insert(stat.clone(), overlapping_monotone(ivs).into());
        s.insert(stat.clone(), ivs.iter().map(|x| x.0).collect::<Vec<_>>().into());
    }
    s.insert("non_increasing".into(), Value::Object(monotone));
    s.insert("P(mismatch)".into(), mismatch.into());
    Ok(report)
}

/// Consecutive estimates either do not increase or have overlapping
/// intervals.
pub fn overlapping_monotone(ivs: &[(f64, f64, f64)]) -> bool {
    ivs.windows(2).all(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].2)
}

/// Two hybrid runs of line 1 on `universe.replica(r)`, one driven by the
/// mean-field `rho` and one by `rho + delta`: the probability that their
/// event lists differ, per `delta`, with a linear fit through the origin
/// region (slope, intercept, `R^2`).
pub fn perturbation_response(
    params: &ModelParams,
    deltas: &[f64],
    replicas: u32,
    universe: &NoiseUniverse,
) -> Result<ConvergenceReport> {
    check_lists(&[1], replicas)?;
    let reference = Reference::new(params)?;
    let mut report = ConvergenceReport::default();
    let mut probs = Vec::new();
    for &delta in deltas {
        let shifted = FieldPath::new(
            params.dt,
            reference
                .solution
                .rho
                .fields
                .iter()
                .map(|f| Field {
                    values: f.values.iter().map(|v| v + delta).collect(),
                    ..f.clone()
                })
                .collect(),
        )
        .prepare(&reference.disc.spectral, params.dt, params.steps())?;
        let differ: Vec<bool> = (0..replicas)
            .into_par_iter()
            .map(|r| -> Result<bool> {
                let u = universe.replica(u64::from(r));
                let mut a = hybrid_system(params, &reference.prepared, u, 1, false)?;
                let mut b = hybrid_system(params, &shifted, u, 1, false)?;
                for _ in 0..params.steps() {
                    a.step()?;
                    b.step()?;
                }
                Ok(line_events(a.events(), 1) != line_events(b.events(), 1))
            })
            .collect::<Result<_>>()?;
        let hits = differ.iter().filter(|&&d| d).count();
        report.push_probability("perturbation", 1, &format!("P(mismatch|delta={})", fmt_f64(delta)), hits, differ.len());
        probs.push(wilson_interval(hits, differ.len()).0);
    }
    let (slope, intercept, r2) = linear_fit(deltas, &probs);
    let s = &mut report.summary;
    s.insert("experiment".into(), "perturbation".into());
    s.insert("deltas".into(), deltas.into());
    s.insert("P(mismatch)".into(), probs.into());
    s.insert("slope".into(), slope.into());
    s.insert("intercept".into(), intercept.into());
    s.insert("r2".into(), r2.into());
    Ok(report)
}

/// `sup_{t <= T} live_t / n0` per replica; passes iff the mean minus three
/// standard errors does not exceed `exp(lambda_bar T)`.
pub fn yule_bound_check(
    params: &ModelParams,
    n0: u32,
    replicas: u32,
    universe: &NoiseUniverse,
) -> Result<ConvergenceReport> {
    if replicas < 100 {
        return Err(Error::InvalidParams(format!("yule check needs at least 100 replicas, got {replicas}")));
    }
    check_lists(&[n0], replicas)?;
    params.validate()?;
    let disc = Discretization::new(params)?;
    let sups: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut sys = microscopic_system(params, &disc, n0, universe.replica(u64::from(r)), false)?;
            let mut sup = sys.live_count();
            for _ in 0..params.steps() {
                sys.step()?;
                sup = sup.max(sys.live_count());
            }
            Ok(sup as f64 / f64::from(n0))
        })
        .collect::<Result<_>>()?;
    let mut report = ConvergenceReport::default();
    for (r, v) in sups.iter().enumerate() {
        report.rows.push(ReportRow::value("yule", n0, Some(r as u32), "sup_t_live/n0", *v));
    }
    report.push_estimate("yule", n0, &sups);
    let e = Estimate::from_samples(&sups);
    let bound = (params.lambda_bar * params.horizon).exp();
    let s = &mut report.summary;
    s.insert("experiment".into(), "yule".into());
    s.insert("n0".into(), n0.into());
    s.insert("replicas".into(), replicas.into());
    s.insert("mean".into(), e.mean.into());
    s.insert("se".into(), e.se.into());
    s.insert("bound".into(), bound.into());
    s.insert("pass".into(), (e.mean - 3.0 * e.se <= bound).into());
    Ok(report)
}
