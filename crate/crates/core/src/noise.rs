//! Lineage-addressed noise.
//!
//! Every random number is a pure function of
//! `(master_seed, line, word, purpose, counter)`, so the Wiener increments
//! and Poisson clocks of cell `(i, j)` are the same whichever model (or how
//! many founders, or how many threads) consumes them. This is what makes
//! the particle, hybrid and mass-particle models pathwise coupled.
//!
//! Clocks are rate-`lambda_bar` Poisson processes with uniform marks on
//! `[0, lambda_bar]`, generated by exponential gaps anchored at `t = 0`.
//! Changing `lambda_bar` changes every clock.

use std::f64::consts::TAU;

use crate::lineage::LineageIndex;
use crate::state::{Point, MAX_DIM};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn fmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Wiener = 1,
    ClockTime = 2,
    ClockMark = 3,
    Init = 4,
    MassWiener = 5,
    MassInit = 6,
}

/// Key of one stream; draws are addressed by a counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        let z = fmix(counter.wrapping_mul(GOLDEN) ^ self.0);
        fmix(z.wrapping_add(self.0.rotate_left(29)))
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal number `j` of the stream (Box-Muller on uniform pairs).
    #[inline]
    pub fn normal(&self, j: u64) -> f64 {
        let pair = j / 2;
        let u1 = self.uniform(2 * pair);
        let u2 = self.uniform(2 * pair + 1);
        let r = (-2.0 * u1.ln()).sqrt();
        if j % 2 == 0 {
            r * (TAU * u2).cos()
        } else {
            r * (TAU * u2).sin()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseUniverse {
    pub master_seed: u64,
    pub dim: usize,
}

impl NoiseUniverse {
    pub fn new(master_seed: u64, dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        Self { master_seed, dim }
    }

    /// An independent universe for Monte-Carlo replica `r`.
    pub fn replica(&self, r: u64) -> Self {
        Self {
            master_seed: fmix(self.master_seed ^ fmix(r.wrapping_add(0x5851_f42d_4c95_7f2d))),
            dim: self.dim,
        }
    }

    pub fn key(&self, idx: LineageIndex, purpose: Purpose) -> StreamKey {
        let mut h = fmix(self.master_seed.wrapping_add(GOLDEN));
        h = fmix(h ^ u64::from(idx.line()).wrapping_mul(0xd6e8_feb8_6659_fd93));
        h = fmix(h ^ idx.word_bits());
        h = fmix(h ^ (u64::from(idx.word_len()) << 8 | purpose as u64));
        StreamKey(h)
    }

    /// Increment of the Wiener process of `idx` over step `k`, i.e. over
    /// `[k dt, (k+1) dt)`.
    #[inline]
    pub fn wiener_step(&self, key: StreamKey, k: u64, dt: f64) -> Point {
        let s = dt.sqrt();
        let mut p = [0.0; MAX_DIM];
        for (c, v) in p.iter_mut().enumerate().take(self.dim) {
            *v = s * key.normal(k * self.dim as u64 + c as u64);
        }
        Point(p)
    }

    pub fn wiener_increments(
        &self,
        idx: LineageIndex,
        steps: std::ops::Range<u64>,
        dt: f64,
    ) -> Vec<Point> {
        let key = self.key(idx, Purpose::Wiener);
        steps.map(|k| self.wiener_step(key, k, dt)).collect()
    }

    pub fn clock(&self, idx: LineageIndex, lambda_bar: f64) -> ClockCursor {
        ClockCursor::new(
            self.key(idx, Purpose::ClockTime),
            self.key(idx, Purpose::ClockMark),
            lambda_bar,
        )
    }

    /// Events of the clock of `idx` with times in `[t0, t1)`.
    pub fn clock_events(
        &self,
        idx: LineageIndex,
        t0: f64,
        t1: f64,
        lambda_bar: f64,
    ) -> Vec<ClockEvent> {
        let mut c = self.clock(idx, lambda_bar);
        c.skip_before(t0);
        let mut out = Vec::new();
        while let Some(ev) = c.next_before(t1) {
            out.push(ev);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClockEvent {
    pub time: f64,
    pub mark: f64,
}

/// Sequential reader of one clock, anchored at the origin.
#[derive(Clone, Copy, Debug)]
pub struct ClockCursor {
    time_key: StreamKey,
    mark_key: StreamKey,
    lambda_bar: f64,
    n: u64,
    next_time: f64,
}

impl ClockCursor {
    fn new(time_key: StreamKey, mark_key: StreamKey, lambda_bar: f64) -> Self {
        assert!(lambda_bar > 0.0);
        let first = -time_key.uniform(0).ln() / lambda_bar;
        Self {
            time_key,
            mark_key,
            lambda_bar,
            n: 0,
            next_time: first,
        }
    }

    pub fn peek_time(&self) -> f64 {
        self.next_time
    }

    fn advance(&mut self) -> ClockEvent {
        let ev = ClockEvent {
            time: self.next_time,
            mark: self.lambda_bar * self.mark_key.uniform(self.n),
        };
        self.n += 1;
        self.next_time += -self.time_key.uniform(self.n).ln() / self.lambda_bar;
        ev
    }

    /// Discards events strictly before `t`.
    pub fn skip_before(&mut self, t: f64) {
        while self.next_time < t {
            self.advance();
        }
    }

    /// Next event if its time is `< t_end`.
    pub fn next_before(&mut self, t_end: f64) -> Option<ClockEvent> {
        (self.next_time < t_end).then(|| self.advance())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u() -> NoiseUniverse {
        NoiseUniverse::new(20240611, 2)
    }

    #[test]
    fn increments_replay() {
        let idx = LineageIndex::from_symbols(3, &[1, 0]).unwrap();
        let a = u().wiener_increments(idx, 5..50, 0.01);
        let b = u().wiener_increments(idx, 5..50, 0.01);
        assert_eq!(a, b);
        let c = u().wiener_increments(idx, 10..20, 0.01);
        assert_eq!(&a[5..15], &c[..]);
        let other = u().wiener_increments(idx.child(0).unwrap(), 5..50, 0.01);
        assert_ne!(a, other);
    }

    #[test]
    fn empty_window() {
        let idx = LineageIndex::root(1);
        assert!(u().clock_events(idx, 1.0, 1.0, 2.0).is_empty());
    }

    #[test]
    fn restriction_is_exact() {
        let uni = u();
        for line in 1..200 {
            let idx = LineageIndex::root(line);
            let long = uni.clock_events(idx, 0.5, 7.0, 3.0);
            let short = uni.clock_events(idx, 0.5, 4.0, 3.0);
            let filtered: Vec<_> = long.into_iter().filter(|e| e.time < 4.0).collect();
            assert_eq!(filtered, short);
        }
    }

    #[test]
    fn events_increase_and_marks_in_range() {
        let ev = u().clock_events(LineageIndex::root(9), 0.0, 50.0, 1.5);
        assert!(ev.windows(2).all(|w| w[0].time < w[1].time));
        assert!(ev.iter().all(|e| e.mark > 0.0 && e.mark < 1.5));
    }
}
