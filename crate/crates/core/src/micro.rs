//! The individual-based model: founder lines of branching diffusions whose
//! drift follows the chemoattractant gradient, with Poisson-thinned
//! branching and death, coupled to the field through the mollified
//! empirical measure.
//!
//! A step of length `dt` runs in a fixed order:
//! 1. evaluate `grad rho(t_k)` at the current positions,
//! 2. move every live cell by Euler-Maruyama,
//! 3. resolve the clock events in `[t_k, t_{k+1})` using the end-of-step
//!    positions and the field at `t_k`,
//! 4. deposit the new empirical measure and advance the field.
//!
//! The same engine runs the hybrid model; only the [`FieldDriver`] differs.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{deposit, semigroup_step, Field, FieldInterp, Kernel};
use crate::grid::{GridSpec, Spectral};
use crate::lineage::LineageIndex;
use crate::measure::EmpiricalMeasure;
use crate::model::ModelParams;
use crate::noise::{ClockCursor, NoiseUniverse, Purpose, StreamKey};
use crate::path::PreparedPath;
use crate::state::{CellRecord, Point, PopulationState};

/// Cells per parallel work unit.
const PAR_MIN_LEN: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Branch,
    Death,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub idx: LineageIndex,
    pub kind: EventKind,
    /// Position used to evaluate the rates (end of the step).
    pub position: Point,
}

/// Supplies `rho(t_k)` to the engine and advances it.
pub trait FieldDriver {
    fn interp(&self) -> &FieldInterp;
    fn field(&self) -> Option<&Field>;
    /// Moves the field from step `k` to `k + 1` given the empirical measure
    /// at `t_{k+1}`.
    fn advance(&mut self, measure: &EmpiricalMeasure, k: usize) -> Result<()>;
}

/// Field driven by the particles themselves. The source over a step is the
/// average of the deposits at its two ends.
pub struct CoupledField {
    spectral: Arc<Spectral>,
    kernel: Arc<Kernel>,
    params: ModelParams,
    rho: Field,
    interp: FieldInterp,
    source: Field,
}

impl CoupledField {
    pub fn new(
        spectral: Arc<Spectral>,
        kernel: Arc<Kernel>,
        params: &ModelParams,
        rho0: Field,
        initial: &EmpiricalMeasure,
    ) -> Result<Self> {
        let source = deposit(initial, &kernel, 0.0)?;
        let interp = FieldInterp::new(&spectral, &rho0);
        Ok(Self {
            spectral,
            kernel,
            params: params.clone(),
            rho: rho0,
            interp,
            source,
        })
    }
}

/// Mean of two sources; shared by every solver that advances `rho`.
pub(crate) fn midpoint_source(a: &Field, b: &Field) -> Field {
    Field {
        grid: a.grid,
        values: a.values.iter().zip(&b.values).map(|(x, y)| 0.5 * (x + y)).collect(),
        time: a.time,
    }
}

/// `rho_{k+1} = S_dt rho_k + alpha int S (source_k + source_{k+1}) / 2`.
pub fn advance_rho(
    spectral: &Spectral,
    rho: &Field,
    source_now: &Field,
    source_next: &Field,
    params: &ModelParams,
) -> Result<Field> {
    let src = midpoint_source(source_now, source_next);
    semigroup_step(spectral, rho, &src, params.dt, params.field_constants())
}

impl FieldDriver for CoupledField {
    fn interp(&self) -> &FieldInterp {
        &self.interp
    }

    fn field(&self) -> Option<&Field> {
        Some(&self.rho)
    }

    fn advance(&mut self, measure: &EmpiricalMeasure, k: usize) -> Result<()> {
        let t_next = (k + 1) as f64 * self.params.dt;
        let next_source = deposit(measure, &self.kernel, t_next)?;
        let mut rho = advance_rho(&self.spectral, &self.rho, &self.source, &next_source, &self.params)?;
        rho.time = t_next;
        self.interp = FieldInterp::new(&self.spectral, &rho);
        self.rho = rho;
        self.source = next_source;
        Ok(())
    }
}

/// A given deterministic field path (hybrid model).
pub struct PrescribedField<'a> {
    path: &'a PreparedPath,
    k: usize,
}

impl<'a> PrescribedField<'a> {
    pub fn new(path: &'a PreparedPath) -> Self {
        Self { path, k: 0 }
    }
}

impl FieldDriver for PrescribedField<'_> {
    fn interp(&self) -> &FieldInterp {
        self.path.step(self.k)
    }

    fn field(&self) -> Option<&Field> {
        None
    }

    fn advance(&mut self, _measure: &EmpiricalMeasure, k: usize) -> Result<()> {
        self.k = k + 1;
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct LiveCell {
    idx: LineageIndex,
    pos: Point,
    wiener: StreamKey,
    clock: ClockCursor,
}

/// What happened to one cell (and any descendants born within the step).
#[derive(Default)]
struct StepOutcome {
    survivors: Vec<LiveCell>,
    events: Vec<Event>,
    births: Vec<(LineageIndex, f64)>,
}

pub struct BranchingSystem<F: FieldDriver> {
    params: ModelParams,
    grid: GridSpec,
    universe: NoiseUniverse,
    n0: u32,
    live: Vec<LiveCell>,
    genealogy: Option<BTreeMap<LineageIndex, CellRecord>>,
    events: Vec<Event>,
    step: usize,
    field: F,
}

impl<F: FieldDriver> BranchingSystem<F> {
    /// Founders of `lines` at positions drawn from `mu0` with the per-line
    /// init streams. `n0` normalizes the empirical measure; `make_field`
    /// receives the initial measure.
    pub fn new(
        params: &ModelParams,
        universe: NoiseUniverse,
        lines: &[u32],
        n0: u32,
        keep_genealogy: bool,
        make_field: impl FnOnce(&EmpiricalMeasure) -> Result<F>,
    ) -> Result<Self> {
        params.validate()?;
        let grid = params.grid()?;
        if universe.dim != grid.dim {
            return Err(Error::DimensionMismatch {
                left: universe.dim,
                right: grid.dim,
            });
        }
        let mut live: Vec<LiveCell> = lines
            .iter()
            .map(|&i| {
                let idx = LineageIndex::root(i);
                LiveCell {
                    idx,
                    pos: params.mu0.sample(&universe, &grid, i, Purpose::Init),
                    wiener: universe.key(idx, Purpose::Wiener),
                    clock: universe.clock(idx, params.lambda_bar),
                }
            })
            .collect();
        live.sort_by_key(|c| c.idx);
        let genealogy = keep_genealogy.then(|| {
            live.iter()
                .map(|c| {
                    (
                        c.idx,
                        CellRecord {
                            position: Some(c.pos),
                            birth: 0.0,
                            death: f64::INFINITY,
                        },
                    )
                })
                .collect()
        });
        let m0 = measure_of(&live, n0);
        let field = make_field(&m0)?;
        Ok(Self {
            params: params.clone(),
            grid,
            universe,
            n0,
            live,
            genealogy,
            events: Vec::new(),
            step: 0,
            field,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.params.dt
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    pub fn n0(&self) -> u32 {
        self.n0
    }

    pub fn field(&self) -> Option<&Field> {
        self.field.field()
    }

    pub fn driver(&self) -> &F {
        &self.field
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Live cells in lineage order.
    pub fn live_cells(&self) -> impl Iterator<Item = (LineageIndex, Point)> + '_ {
        self.live.iter().map(|c| (c.idx, c.pos))
    }

    /// Empirical measure with weights `1/n0`, atoms in lineage order.
    pub fn measure(&self) -> EmpiricalMeasure {
        measure_of(&self.live, self.n0)
    }

    /// Current state: live cells, plus dead records when the genealogy is kept.
    pub fn state(&self) -> PopulationState {
        let mut s = PopulationState::new(self.grid.dim, self.time());
        if let Some(g) = &self.genealogy {
            for (idx, rec) in g {
                s.cells.insert(*idx, *rec);
            }
        }
        for c in &self.live {
            s.cells.insert(
                c.idx,
                CellRecord {
                    position: Some(c.pos),
                    birth: self
                        .genealogy
                        .as_ref()
                        .and_then(|g| g.get(&c.idx))
                        .map(|r| r.birth)
                        .unwrap_or(0.0),
                    death: f64::INFINITY,
                },
            );
        }
        s
    }

    /// Live cells of one founder line as a population state.
    pub fn line_state(&self, line: u32) -> PopulationState {
        let mut s = PopulationState::new(self.grid.dim, self.time());
        for c in self.live.iter().filter(|c| c.idx.line() == line) {
            s.cells.insert(
                c.idx,
                CellRecord {
                    position: Some(c.pos),
                    birth: 0.0,
                    death: f64::INFINITY,
                },
            );
        }
        s
    }

    pub fn genealogy(&self) -> Option<&BTreeMap<LineageIndex, CellRecord>> {
        self.genealogy.as_ref()
    }

    /// Advances one step of length `dt`; returns the events of the step in
    /// time order.
    pub fn step(&mut self) -> Result<&[Event]> {
        let k = self.step;
        let dt = self.params.dt;
        let t1 = (k + 1) as f64 * dt;
        let params = &self.params;
        let universe = &self.universe;
        let grid = &self.grid;
        let interp = self.field.interp();

        // (1) + (2): drift from the field at t_k, then move
        let sigma = params.sigma;
        let moved: Result<()> = self
            .live
            .par_iter_mut()
            .with_min_len(PAR_MIN_LEN)
            .try_for_each(|c| {
                let g = if params.drift.is_zero() {
                    Point::default()
                } else {
                    interp.eval_grad(&c.pos)?
                };
                let b = params.drift.eval(&c.pos, &g);
                let dw = universe.wiener_step(c.wiener, k as u64, dt);
                let mut p = c.pos;
                for a in 0..grid.dim {
                    p.0[a] += b.0[a] * dt + sigma * dw.0[a];
                }
                if !p.is_finite() {
                    return Err(Error::NonFiniteState(format!("cell {} at step {k}", c.idx)));
                }
                c.pos = p;
                Ok(())
            });
        moved?;

        // (3): clock events, each cell independently
        let no_events = params.birth.is_zero() && params.death.is_zero();
        let outcomes: Vec<StepOutcome> = self
            .live
            .par_drain(..)
            .with_min_len(PAR_MIN_LEN)
            .map(|cell| {
                if no_events {
                    let mut cell = cell;
                    cell.clock.skip_before(t1);
                    return Ok(StepOutcome {
                        survivors: vec![cell],
                        ..Default::default()
                    });
                }
                resolve_cell(cell, t1, params, universe, grid, interp)
            })
            .collect::<Result<_>>()?;

        let mut events = Vec::new();
        let mut live = Vec::with_capacity(outcomes.iter().map(|o| o.survivors.len()).sum());
        for o in outcomes {
            live.extend(o.survivors);
            if let Some(g) = self.genealogy.as_mut() {
                for (idx, birth) in &o.births {
                    g.insert(
                        *idx,
                        CellRecord {
                            position: None,
                            birth: *birth,
                            death: f64::INFINITY,
                        },
                    );
                }
                for ev in &o.events {
                    if let Some(r) = g.get_mut(&ev.idx) {
                        r.death = ev.time;
                        r.position = None;
                    }
                }
            }
            events.extend(o.events);
        }
        live.sort_unstable_by_key(|c| c.idx);
        if live.len() > params.population_cap {
            return Err(Error::PopulationExplosion {
                live: live.len(),
                cap: params.population_cap,
            });
        }
        if let Some(g) = self.genealogy.as_mut() {
            for c in &live {
                if let Some(r) = g.get_mut(&c.idx) {
                    r.position = Some(c.pos);
                }
            }
        }
        self.live = live;
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.idx.cmp(&b.idx)));
        let first_new = self.events.len();
        self.events.extend(events);

        // (4): field
        let m = self.measure();
        self.field.advance(&m, k)?;
        self.step += 1;
        Ok(&self.events[first_new..])
    }

    /// Drops dead records from the genealogy.
    pub fn compact(&mut self) {
        if let Some(g) = self.genealogy.as_mut() {
            g.retain(|_, r| r.position.is_some());
        }
    }
}

fn measure_of(live: &[LiveCell], n0: u32) -> EmpiricalMeasure {
    let w = 1.0 / f64::from(n0);
    EmpiricalMeasure::new(live.iter().map(|c| (c.pos, w)).collect())
}

/// Processes the clock events of `cell` up to `t1`, recursing into
/// daughters born within the step. Rates use the cell's end-of-step
/// position and the field at the start of the step.
fn resolve_cell(
    cell: LiveCell,
    t1: f64,
    params: &ModelParams,
    universe: &NoiseUniverse,
    grid: &GridSpec,
    interp: &FieldInterp,
) -> Result<StepOutcome> {
    let mut out = StepOutcome::default();
    // all cells spawned from this one share its position, hence its rates
    let mut rates: Option<(f64, f64)> = None;
    let mut rates_at = |x: &Point| -> Result<(f64, f64)> {
        if let Some(r) = rates {
            return Ok(r);
        }
        let xw = grid.wrap(x);
        let (v, g) = interp.eval_both(&xw)?;
        let s = params.lambda_arg.select(v, &g);
        let lb = params.birth.eval(&xw, s);
        let ld = params.death.eval(&xw, s);
        rates = Some((lb, lb + ld));
        Ok((lb, lb + ld))
    };
    let mut stack = vec![cell];
    while let Some(mut c) = stack.pop() {
        let mut fate = None;
        while let Some(ev) = c.clock.next_before(t1) {
            let (lb, total) = rates_at(&c.pos)?;
            if ev.mark <= lb {
                fate = Some((ev.time, EventKind::Branch));
                break;
            } else if ev.mark <= total {
                fate = Some((ev.time, EventKind::Death));
                break;
            }
        }
        match fate {
            None => out.survivors.push(c),
            Some((time, kind)) => {
                out.events.push(Event {
                    time,
                    idx: c.idx,
                    kind,
                    position: c.pos,
                });
                if kind == EventKind::Branch {
                    let (a, b) = c.idx.children()?;
                    for idx in [b, a] {
                        let mut clock = universe.clock(idx, params.lambda_bar);
                        clock.skip_before(time);
                        out.births.push((idx, time));
                        stack.push(LiveCell {
                            idx,
                            pos: c.pos,
                            wiener: universe.key(idx, Purpose::Wiener),
                            clock,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Positions of the live cells after step `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub cells: Vec<(LineageIndex, Point)>,
}

/// Output of [`simulate_microscopic`]: a snapshot at every multiple of
/// `dt` (positions only change at step boundaries, so the state at an
/// event time is the snapshot closing that step), the event log, the full
/// genealogy and optionally the field at every step.
#[derive(Clone, Debug)]
pub struct MicroTrajectory {
    pub dim: usize,
    pub n0: u32,
    pub lines: Vec<u32>,
    pub snapshots: Vec<Snapshot>,
    pub fields: Vec<Field>,
    pub events: Vec<Event>,
    pub genealogy: BTreeMap<LineageIndex, CellRecord>,
}

impl MicroTrajectory {
    /// Population state at snapshot `k`, with records of cells born by then.
    pub fn state_at(&self, k: usize) -> PopulationState {
        let snap = &self.snapshots[k];
        let mut s = PopulationState::new(self.dim, snap.time);
        for (idx, rec) in &self.genealogy {
            if rec.birth <= snap.time {
                s.cells.insert(
                    *idx,
                    CellRecord {
                        position: None,
                        ..*rec
                    },
                );
            }
        }
        for (idx, p) in &snap.cells {
            let rec = s.cells.entry(*idx).or_insert(CellRecord {
                position: None,
                birth: 0.0,
                death: f64::INFINITY,
            });
            rec.position = Some(*p);
        }
        s
    }

    pub fn live_counts(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.cells.len()).collect()
    }

    /// Sub-trajectory of one founder line.
    pub fn restrict(&self, line: u32) -> Result<MicroTrajectory> {
        if !self.lines.contains(&line) {
            return Err(Error::NoSuchLine { line, n0: self.n0 });
        }
        Ok(MicroTrajectory {
            dim: self.dim,
            n0: self.n0,
            lines: vec![line],
            snapshots: self
                .snapshots
                .iter()
                .map(|s| Snapshot {
                    step: s.step,
                    time: s.time,
                    cells: s.cells.iter().filter(|(i, _)| i.line() == line).copied().collect(),
                })
                .collect(),
            fields: self.fields.clone(),
            events: self.events.iter().filter(|e| e.idx.line() == line).copied().collect(),
            genealogy: self
                .genealogy
                .iter()
                .filter(|(i, _)| i.line() == line)
                .map(|(i, r)| (*i, *r))
                .collect(),
        })
    }

    pub fn write_snapshots_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        use crate::state::fmt_f64;
        let coords = ["x1", "x2"];
        writeln!(w, "step,time,line,word_bits,word_len,{}", coords[..self.dim].join(","))?;
        for s in &self.snapshots {
            for (idx, p) in &s.cells {
                write!(w, "{},{},{},{},{}", s.step, fmt_f64(s.time), idx.line(), idx.word_bits(), idx.word_len())?;
                for x in p.coords(self.dim) {
                    write!(w, ",{}", fmt_f64(*x))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn write_events_csv<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        write_events_csv(&self.events, w)
    }
}

pub fn write_events_csv<W: std::io::Write>(events: &[Event], mut w: W) -> std::io::Result<()> {
    writeln!(w, "time,line,word_bits,word_len,kind")?;
    for e in events {
        let kind = match e.kind {
            EventKind::Branch => "branch",
            EventKind::Death => "death",
        };
        writeln!(
            w,
            "{},{},{},{},{kind}",
            crate::state::fmt_f64(e.time),
            e.idx.line(),
            e.idx.word_bits(),
            e.idx.word_len()
        )?;
    }
    Ok(())
}

/// Shared grid machinery for one parameter set.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub spectral: Arc<Spectral>,
    pub kernel: Arc<Kernel>,
}

impl Discretization {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let spectral = Arc::new(Spectral::new(params.grid()?));
        let kernel = Arc::new(params.kernel(&spectral)?);
        Ok(Self { spectral, kernel })
    }
}

/// Options for recording a microscopic run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Recording {
    pub fields: bool,
}

impl Default for Recording {
    fn default() -> Self {
        Self { fields: true }
    }
}

/// Builds the coupled system with founders `1..=n0`.
pub fn microscopic_system(
    params: &ModelParams,
    disc: &Discretization,
    n0: u32,
    universe: NoiseUniverse,
    keep_genealogy: bool,
) -> Result<BranchingSystem<CoupledField>> {
    let lines: Vec<u32> = (1..=n0).collect();
    let rho0 = params.rho0.sample(&disc.spectral.grid);
    BranchingSystem::new(params, universe, &lines, n0, keep_genealogy, |m0| {
        CoupledField::new(disc.spectral.clone(), disc.kernel.clone(), params, rho0, m0)
    })
}

/// Runs the individual-based model with `n0` founders over `[0, T]`.
pub fn simulate_microscopic(
    params: &ModelParams,
    n0: u32,
    universe: NoiseUniverse,
    recording: Recording,
) -> Result<MicroTrajectory> {
    let disc = Discretization::new(params)?;
    let mut sys = microscopic_system(params, &disc, n0, universe, true)?;
    let mut traj = MicroTrajectory {
        dim: params.dim,
        n0,
        lines: (1..=n0).collect(),
        snapshots: Vec::with_capacity(params.steps() + 1),
        fields: Vec::new(),
        events: Vec::new(),
        genealogy: BTreeMap::new(),
    };
    record(&mut traj, &sys, recording);
    for _ in 0..params.steps() {
        sys.step()?;
        record(&mut traj, &sys, recording);
    }
    traj.events = sys.events().to_vec();
    traj.genealogy = sys.genealogy().cloned().unwrap_or_default();
    Ok(traj)
}

fn record<F: FieldDriver>(traj: &mut MicroTrajectory, sys: &BranchingSystem<F>, rec: Recording) {
    traj.snapshots.push(Snapshot {
        step: sys.step_index(),
        time: sys.time(),
        cells: sys.live_cells().collect(),
    });
    if rec.fields {
        if let Some(f) = sys.field() {
            traj.fields.push(f.clone());
        }
    }
}

/// Sub-trajectory of founder line `line`.
pub fn lineage_restriction(traj: &MicroTrajectory, line: u32) -> Result<MicroTrajectory> {
    traj.restrict(line)
}

/// Single-line branching diffusion driven by a given field path, using the
/// Wiener processes and clocks of line `line`.
pub fn hybrid_system<'a>(
    params: &ModelParams,
    path: &'a PreparedPath,
    universe: NoiseUniverse,
    line: u32,
    keep_genealogy: bool,
) -> Result<BranchingSystem<PrescribedField<'a>>> {
    BranchingSystem::new(params, universe, &[line], 1, keep_genealogy, |_| {
        Ok(PrescribedField::new(path))
    })
}

/// Runs the hybrid model for one line over `[0, T]`.
pub fn simulate_hybrid(
    params: &ModelParams,
    path: &PreparedPath,
    universe: NoiseUniverse,
    line: u32,
) -> Result<MicroTrajectory> {
    if path.steps() < params.steps() {
        return Err(Error::InvalidParams(format!(
            "field path covers {} steps, need {}",
            path.steps(),
            params.steps()
        )));
    }
    let mut sys = hybrid_system(params, path, universe, line, true)?;
    let mut traj = MicroTrajectory {
        dim: params.dim,
        n0: 1,
        lines: vec![line],
        snapshots: Vec::with_capacity(params.steps() + 1),
        fields: Vec::new(),
        events: Vec::new(),
        genealogy: BTreeMap::new(),
    };
    let rec = Recording { fields: false };
    record(&mut traj, &sys, rec);
    for _ in 0..params.steps() {
        sys.step()?;
        record(&mut traj, &sys, rec);
    }
    traj.events = sys.events().to_vec();
    traj.genealogy = sys.genealogy().cloned().unwrap_or_default();
    Ok(traj)
}
