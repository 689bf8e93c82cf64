//! Packed two-dimensional bit arrays.
//!
//! Rows are stored independently, each padded to a whole number of `u64`
//! words, so that circular column shifts (the rotation axis of polar iris
//! data) operate on one row at a time. Padding bits are always zero.

use serde::{Deserialize, Serialize};

const WORD: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bitmap {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bitmap")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("ones", &self.count_ones())
            .finish()
    }
}

impl Bitmap {
    /// All-zero bitmap.
    pub fn new(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(WORD);
        Self {
            rows,
            cols,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        let mut b = Self::new(rows, cols);
        if value {
            b.words.iter_mut().for_each(|w| *w = u64::MAX);
            b.clear_padding();
        }
        b
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut b = Self::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if f(r, c) {
                    b.set(r, c, true);
                }
            }
        }
        b
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
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.rows && col < self.cols);
        let w = self.words[row * self.words_per_row + col / WORD];
        (w >> (col % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        debug_assert!(row < self.rows && col < self.cols);
        let w = &mut self.words[row * self.words_per_row + col / WORD];
        let bit = 1u64 << (col % WORD);
        if value {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Fraction of set bits; zero for an empty bitmap.
    pub fn coverage(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.len() as f64
        }
    }

    pub fn row_words(&self, row: usize) -> &[u64] {
        &self.words[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn not(&self) -> Bitmap {
        let mut out = self.clone();
        out.words.iter_mut().for_each(|w| *w = !*w);
        out.clear_padding();
        out
    }

    pub fn and(&self, other: &Bitmap) -> Bitmap {
        assert_eq!(self.dims(), other.dims(), "bitmap dimension mismatch");
        let mut out = self.clone();
        for (o, w) in out.words.iter_mut().zip(&other.words) {
            *o &= *w;
        }
        out
    }

    /// Circular column shift: `out[r][c] = self[r][(c + shift) mod cols]`.
    pub fn rotate_cols(&self, shift: i64) -> Bitmap {
        let mut out = Bitmap::new(self.rows, self.cols);
        self.rotate_cols_into(shift, &mut out);
        out
    }

    /// As [`Bitmap::rotate_cols`], writing into a preallocated bitmap of the
    /// same dimensions.
    pub fn rotate_cols_into(&self, shift: i64, out: &mut Bitmap) {
        assert_eq!(self.dims(), out.dims());
        if self.cols == 0 {
            return;
        }
        let s = shift.rem_euclid(self.cols as i64) as usize;
        for r in 0..self.rows {
            let src = self.row_words(r);
            let base = r * self.words_per_row;
            for w in 0..self.words_per_row {
                let start_col = w * WORD;
                let n = WORD.min(self.cols - start_col);
                out.words[base + w] = read_circular(src, self.cols, (start_col + s) % self.cols, n);
            }
        }
    }

    fn clear_padding(&mut self) {
        let rem = self.cols % WORD;
        if rem == 0 || self.words_per_row == 0 {
            return;
        }
        let mask = (1u64 << rem) - 1;
        for r in 0..self.rows {
            self.words[r * self.words_per_row + self.words_per_row - 1] &= mask;
        }
    }
}

/// Reads `n <= 64` bits starting at `start` from a circular bit string of
/// length `len`.
#[inline]
fn read_circular(src: &[u64], len: usize, start: usize, n: usize) -> u64 {
    if start + n <= len {
        read_bits(src, start, n)
    } else {
        let first = len - start;
        let lo = read_bits(src, start, first);
        let hi = read_bits(src, 0, n - first);
        lo | (hi << first)
    }
}

#[inline]
fn read_bits(src: &[u64], start: usize, n: usize) -> u64 {
    if n == 0 {
        return 0;
    }
    let idx = start / WORD;
    let off = start % WORD;
    let mut v = src[idx] >> off;
    if off != 0 && off + n > WORD {
        v |= src[idx + 1] << (WORD - off);
    }
    if n == WORD {
        v
    } else {
        v & ((1u64 << n) - 1)
    }
}
