//! Ulam-Harris labels for cells: a founder line number plus a binary word
//! recording the sequence of daughter choices since the founder.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// Deepest supported genealogy.
pub const MAX_WORD_LEN: u32 = 64;

/// Identity `(i, j)` of a cell.
///
/// The word is packed with its first symbol in the most significant used
/// bit, so for equal lengths numeric order of `bits` is lexicographic order
/// of the words.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct LineageIndex {
    line: u32,
    len: u32,
    bits: u64,
}

impl LineageIndex {
    /// Founder of line `line` (empty word).
    pub fn root(line: u32) -> Self {
        Self { line, len: 0, bits: 0 }
    }

    pub fn new(line: u32, bits: u64, len: u32) -> Result<Self> {
        if len > MAX_WORD_LEN {
            return Err(Error::WordTooDeep { max: MAX_WORD_LEN });
        }
        let bits = if len == 64 { bits } else { bits & ((1u64 << len) - 1) };
        Ok(Self { line, len, bits })
    }

    /// Builds an index from a word given as a slice of 0/1 symbols.
    pub fn from_symbols(line: u32, symbols: &[u8]) -> Result<Self> {
        let mut idx = Self::root(line);
        for &s in symbols {
            idx = idx.child(s)?;
        }
        Ok(idx)
    }

    pub fn line(&self) -> u32 {
        self.line
    }

    pub fn word_len(&self) -> u32 {
        self.len
    }

    pub fn word_bits(&self) -> u64 {
        self.bits
    }

    pub fn is_root(&self) -> bool {
        self.len == 0
    }

    pub fn symbols(&self) -> Vec<u8> {
        (0..self.len)
            .map(|k| ((self.bits >> (self.len - 1 - k)) & 1) as u8)
            .collect()
    }

    pub fn child(&self, symbol: u8) -> Result<Self> {
        if self.len >= MAX_WORD_LEN {
            return Err(Error::WordTooDeep { max: MAX_WORD_LEN });
        }
        Ok(Self {
            line: self.line,
            len: self.len + 1,
            bits: (self.bits << 1) | u64::from(symbol & 1),
        })
    }

    /// The two daughters `j0` and `j1`.
    pub fn children(&self) -> Result<(Self, Self)> {
        Ok((self.child(0)?, self.child(1)?))
    }

    /// The mother cell, i.e. the word with its last symbol removed.
    pub fn parent(&self) -> Result<Self> {
        if self.len == 0 {
            return Err(Error::RootHasNoParent);
        }
        Ok(Self {
            line: self.line,
            len: self.len - 1,
            bits: self.bits >> 1,
        })
    }
}

impl Ord for LineageIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.line, self.len, self.bits).cmp(&(other.line, other.len, other.bits))
    }
}

impl PartialOrd for LineageIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LineageIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, ∅", self.line)?;
        for s in self.symbols() {
            write!(f, "{s}")?;
        }
        write!(f, ")")
    }
}
