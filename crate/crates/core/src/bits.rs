//! Row-major bit matrices packed into little-endian `u64` words.
//!
//! Column `c` of a row lives in word `c / 64` at bit position `c % 64`
//! (least significant bit first). Bits past the last column of a row are
//! always zero.

use crate::error::{Error, Result};

/// Number of bits per storage word.
pub const WORD_BITS: usize = 64;

/// Words needed to hold `bits` bits.
#[inline]
pub const fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

/// Mask selecting the valid bits of the final word of a `bits`-wide row.
#[inline]
pub(crate) fn tail_mask(bits: usize) -> u64 {
    match bits % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

/// T×L hash codes; bit 1 encodes +1 and bit 0 encodes −1.
pub type HashCodeMatrix = BitMatrix;

/// T×F ideal binary masks.
pub type MaskMatrix = BitMatrix;

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = words_for(cols);
        Self {
            rows,
            cols,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    /// Wraps already packed words, rejecting wrong lengths or set padding bits.
    pub fn from_words(rows: usize, cols: usize, words: Vec<u64>) -> Result<Self> {
        let words_per_row = words_for(cols);
        if words.len() != rows * words_per_row {
            return Err(Error::ShapeMismatch(format!(
                "{} words for {rows}x{cols} bits (expected {})",
                words.len(),
                rows * words_per_row
            )));
        }
        let m = Self {
            rows,
            cols,
            words_per_row,
            words,
        };
        if !m.padding_is_zero() {
            return Err(Error::OutOfRange("padding bits set".into()));
        }
        Ok(m)
    }

    /// Packs a row-major slice of booleans.
    pub fn pack(rows: usize, cols: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} bits for a {rows}x{cols} matrix",
                bits.len()
            )));
        }
        let mut m = Self::zeros(rows, cols);
        for (r, row_bits) in bits.chunks(cols.max(1)).enumerate().take(rows) {
            let row = m.row_mut(r);
            for (c, &b) in row_bits.iter().enumerate() {
                if b {
                    row[c / WORD_BITS] |= 1 << (c % WORD_BITS);
                }
            }
        }
        Ok(m)
    }

    /// Expands back to a row-major slice of booleans.
    pub fn unpack(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            out.extend((0..self.cols).map(|c| self.get(r, c)));
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        debug_assert!(c < self.cols);
        self.row(r)[c / WORD_BITS] >> (c % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        assert!(
            c < self.cols,
            "column {c} out of range for width {}",
            self.cols
        );
        let word = &mut self.row_mut(r)[c / WORD_BITS];
        let bit = 1u64 << (c % WORD_BITS);
        if value {
            *word |= bit;
        } else {
            *word &= !bit;
        }
    }

    /// Number of set bits in row `r`.
    pub fn row_count_ones(&self, r: usize) -> u32 {
        self.row(r).iter().map(|w| w.count_ones()).sum()
    }

    pub fn padding_is_zero(&self) -> bool {
        if self.words_per_row == 0 {
            return true;
        }
        let mask = !tail_mask(self.cols);
        (0..self.rows).all(|r| self.row(r)[self.words_per_row - 1] & mask == 0)
    }

    /// New matrix made of the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut words = Vec::with_capacity(indices.len() * self.words_per_row);
        for &i in indices {
            words.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            words_per_row: self.words_per_row,
            words,
        }
    }

    /// Appends the rows of `other` below `self`.
    pub fn append(&mut self, other: &BitMatrix) -> Result<()> {
        if other.cols != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "cannot stack {}-bit rows onto {}-bit rows",
                other.cols, self.cols
            )));
        }
        self.words.extend_from_slice(&other.words);
        self.rows += other.rows;
        Ok(())
    }
}

/// Number of differing bits between two packed rows of equal length.
#[inline]
pub fn hamming_distance_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}
