//! Population state: a finite map from lineage index to position-or-dead,
//! the metric on such states, and the line-oriented text format used for
//! trajectory dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lineage::LineageIndex;

pub const MAX_DIM: usize = 2;

/// A point of R^d, d <= 2. Unused coordinates are kept at zero so norms
/// can be taken over the full array.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point(pub [f64; MAX_DIM]);

impl Point {
    pub fn from_slice(xs: &[f64]) -> Self {
        let mut p = [0.0; MAX_DIM];
        p[..xs.len()].copy_from_slice(xs);
        Point(p)
    }

    pub fn coords(&self, dim: usize) -> &[f64] {
        &self.0[..dim]
    }

    pub fn dist(&self, other: &Point) -> f64 {
        let dx = self.0[0] - other.0[0];
        let dy = self.0[1] - other.0[1];
        dx.hypot(dy)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// One cell of the genealogy. `position` is `None` for the dead state φ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellRecord {
    pub position: Option<Point>,
    pub birth: f64,
    pub death: f64,
}

impl CellRecord {
    pub fn alive_at(&self, t: f64) -> bool {
        self.birth <= t && t < self.death
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationState {
    pub dim: usize,
    pub time: f64,
    pub cells: BTreeMap<LineageIndex, CellRecord>,
}

impl PopulationState {
    pub fn new(dim: usize, time: f64) -> Self {
        Self {
            dim,
            time,
            cells: BTreeMap::new(),
        }
    }

    /// Inserts a record; the position is forced to φ when `time` lies
    /// outside the cell's lifetime.
    pub fn insert(&mut self, idx: LineageIndex, mut rec: CellRecord) {
        if !rec.alive_at(self.time) {
            rec.position = None;
        }
        self.cells.insert(idx, rec);
    }

    pub fn live(&self) -> impl Iterator<Item = (&LineageIndex, &Point)> {
        self.cells
            .iter()
            .filter_map(|(i, r)| r.position.as_ref().map(|p| (i, p)))
    }

    pub fn live_count(&self) -> usize {
        self.live().count()
    }

    /// Drops records of dead cells.
    pub fn compact(&mut self) {
        self.cells.retain(|_, r| r.position.is_some());
    }

    /// Sub-population of a single founder line.
    pub fn restrict_line(&self, line: u32) -> PopulationState {
        let lo = LineageIndex::root(line);
        let cells = self
            .cells
            .range(lo..)
            .take_while(|(i, _)| i.line() == line)
            .map(|(i, r)| (*i, *r))
            .collect();
        PopulationState {
            dim: self.dim,
            time: self.time,
            cells,
        }
    }

    /// Every non-root record has its sibling with the same birth time.
    pub fn siblings_consistent(&self) -> bool {
        self.cells.iter().all(|(idx, rec)| {
            if idx.is_root() {
                return true;
            }
            let sib = LineageIndex::new(idx.line(), idx.word_bits() ^ 1, idx.word_len())
                .expect("same length");
            matches!(self.cells.get(&sib), Some(s) if s.birth == rec.birth)
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# time={} dim={}", fmt_f64(self.time), self.dim);
        for (idx, rec) in &self.cells {
            let _ = write!(
                out,
                "{} {} {} {} {}",
                idx.line(),
                idx.word_bits(),
                idx.word_len(),
                fmt_f64(rec.birth),
                fmt_f64(rec.death)
            );
            match &rec.position {
                Some(p) => {
                    for x in p.coords(self.dim) {
                        let _ = write!(out, " {}", fmt_f64(*x));
                    }
                }
                None => out.push_str(" dead"),
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut time = None;
        let mut dim = None;
        let mut cells = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: &str| Error::Parse {
                line: ln + 1,
                msg: msg.to_string(),
            };
            if let Some(h) = line.strip_prefix('#') {
                for tok in h.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("time=") {
                        time = Some(parse_f64(v).ok_or_else(|| perr("bad time"))?);
                    } else if let Some(v) = tok.strip_prefix("dim=") {
                        dim = Some(v.parse::<usize>().map_err(|_| perr("bad dim"))?);
                    }
                }
                continue;
            }
            let d = dim.ok_or_else(|| perr("record before dim header"))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < 6 {
                return Err(perr("too few fields"));
            }
            let lineno: u32 = toks[0].parse().map_err(|_| perr("bad line"))?;
            let bits: u64 = toks[1].parse().map_err(|_| perr("bad word bits"))?;
            let len: u32 = toks[2].parse().map_err(|_| perr("bad word length"))?;
            let birth = parse_f64(toks[3]).ok_or_else(|| perr("bad birth"))?;
            let death = parse_f64(toks[4]).ok_or_else(|| perr("bad death"))?;
            let position = if toks[5] == "dead" {
                None
            } else {
                if toks.len() != 5 + d {
                    return Err(perr("coordinate count does not match dim"));
                }
                let xs: Option<Vec<f64>> = toks[5..].iter().map(|t| parse_f64(t)).collect();
                Some(Point::from_slice(&xs.ok_or_else(|| perr("bad coordinate"))?))
            };
            let idx = LineageIndex::new(lineno, bits, len).map_err(|e| perr(&e.to_string()))?;
            cells.insert(idx, CellRecord { position, birth, death });
        }
        Ok(PopulationState {
            dim: dim.unwrap_or(1),
            time: time.unwrap_or(0.0),
            cells,
        })
    }
}

/// Sup over the union of indices of |x - y|, with |x - φ| = 1 and
/// |φ - φ| = 0. Indices missing from one state count as φ there.
pub fn state_distance(a: &PopulationState, b: &PopulationState) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    let mut ia = a.live().peekable();
    let mut ib = b.live().peekable();
    let mut d: f64 = 0.0;
    loop {
        match (ia.peek(), ib.peek()) {
            (None, None) => break,
            (Some(_), None) | (None, Some(_)) => {
                d = d.max(1.0);
                break;
            }
            (Some((ka, pa)), Some((kb, pb))) => match ka.cmp(kb) {
                std::cmp::Ordering::Equal => {
                    d = d.max(pa.dist(pb));
                    ia.next();
                    ib.next();
                }
                _ => {
                    d = d.max(1.0);
                    if ka < kb {
                        ia.next();
                    } else {
                        ib.next();
                    }
                }
            },
        }
    }
    Ok(d)
}

/// Shortest round-trip representation; infinities as `inf`/`-inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

pub fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}
