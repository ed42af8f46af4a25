//! Blank-straddled targets, fixed-slot decoding and canonical resizing.
//!
//! A block of `N` symbols is predicted as `2N + 1` positions. Even positions
//! (0, 2, ..., 2N) are blanks between symbols and odd positions
//! (1, 3, ..., 2N - 1) carry the symbols themselves.

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::lexicon::{SymbolLexicon, BLANK};

/// Height of every network input.
pub const CANONICAL_HEIGHT: usize = 32;
/// Width allotted to each symbol in the canonical representation.
pub const SYMBOL_WIDTH: usize = 128;

/// Row-stochastic `(2N + 1) x N_s` matrix of per-position symbol
/// distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbSequence {
    rows: usize,
    symbols: usize,
    data: Vec<f64>,
}

impl ProbSequence {
    pub fn new(rows: usize, symbols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || symbols == 0 || data.len() != rows * symbols {
            return Err(Error::MalformedSequence(format!(
                "{rows} rows x {symbols} symbols with {} values",
                data.len()
            )));
        }
        Ok(ProbSequence { rows, symbols, data })
    }

    /// One-hot rows for the given class indices.
    pub fn one_hot(classes: &[usize], symbols: usize) -> Result<Self> {
        let mut data = vec![0.0; classes.len() * symbols];
        for (r, &c) in classes.iter().enumerate() {
            if c >= symbols {
                return Err(Error::MalformedSequence(format!("class {c} out of range {symbols}")));
            }
            data[r * symbols + c] = 1.0;
        }
        Self::new(classes.len(), symbols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.symbols..(r + 1) * self.symbols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.symbols..(r + 1) * self.symbols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Number of symbol slots `N`, when the row count is a valid `2N + 1`.
    pub fn slot_count(&self) -> Result<usize> {
        if self.rows < 3 || self.rows % 2 == 0 {
            return Err(Error::MalformedSequence(format!(
                "{} rows; expected an odd count of at least 3",
                self.rows
            )));
        }
        Ok((self.rows - 1) / 2)
    }

    /// The `N` symbol-slot rows (odd positions).
    pub fn symbol_slots(&self) -> Result<Vec<&[f64]>> {
        let n = self.slot_count()?;
        Ok((0..n).map(|i| self.row(2 * i + 1)).collect())
    }

    pub fn argmax_row(&self, r: usize) -> usize {
        argmax(self.row(r))
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class sequence `<b>, s1, <b>, ..., sN, <b>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignedTarget(Vec<usize>);

impl AlignedTarget {
    pub fn classes(&self) -> &[usize] {
        &self.0
    }

    pub fn symbol_count(&self) -> usize {
        (self.0.len() - 1) / 2
    }
}

pub fn encode_alignment(label: &str, lexicon: &SymbolLexicon) -> Result<AlignedTarget> {
    let symbols = lexicon.encode(label)?;
    if symbols.is_empty() {
        return Err(Error::SymbolCount(0));
    }
    let mut out = Vec::with_capacity(2 * symbols.len() + 1);
    out.push(BLANK);
    for s in symbols {
        out.push(s);
        out.push(BLANK);
    }
    Ok(AlignedTarget(out))
}

/// Reads the argmax of every symbol slot; a blank argmax drops the slot.
/// Blank-slot rows are never consulted.
pub fn decode_alignment(probs: &ProbSequence, lexicon: &SymbolLexicon) -> Result<String> {
    if probs.symbols() != lexicon.len() {
        return Err(Error::MalformedSequence(format!(
            "{} columns for a lexicon of {}",
            probs.symbols(),
            lexicon.len()
        )));
    }
    let n = probs.slot_count()?;
    Ok((0..n)
        .filter_map(|i| lexicon.symbol(probs.argmax_row(2 * i + 1)))
        .collect())
}

/// Bilinear resize to exactly `32 x 128N`, intensities clamped to `[0, 1]`.
pub fn resize_canonical(image: &GrayImage, n: usize) -> Result<GrayImage> {
    if n < 1 {
        return Err(Error::SymbolCount(n));
    }
    if image.is_empty() {
        return Err(Error::Shape("cannot resize an empty image".into()));
    }
    Ok(image.resize(CANONICAL_HEIGHT, SYMBOL_WIDTH * n))
}

/// Fixed `32 x 128` view used by the vocabulary, length and context networks.
pub fn resize_context(image: &GrayImage) -> GrayImage {
    image.resize(CANONICAL_HEIGHT, SYMBOL_WIDTH)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> SymbolLexicon {
        SymbolLexicon::default_lexicon()
    }

    #[test]
    fn encode_straddles_symbols_with_blanks() {
        let l = lex();
        let t = encode_alignment("cat", &l).unwrap();
        let idx = |c| l.index_of(c).unwrap();
        assert_eq!(t.classes(), &[0, idx('c'), 0, idx('a'), 0, idx('t'), 0]);
        assert_eq!(encode_alignment("a", &l).unwrap().classes().len(), 3);
        assert_eq!(encode_alignment("9/10/1966", &l).unwrap().classes().len(), 19);
    }

    #[test]
    fn encode_rejects_unknown_and_empty() {
        let l = lex();
        assert!(matches!(
            encode_alignment("ab\u{263a}", &l),
            Err(Error::UnknownSymbol { symbol: '\u{263a}', position: 2 })
        ));
        assert!(encode_alignment("", &l).is_err());
    }

    #[test]
    fn decode_reads_symbol_slots() {
        let l = lex();
        let idx = |c| l.index_of(c).unwrap();
        let p = ProbSequence::one_hot(&[0, idx('t'), 0, idx('o'), 0], l.len()).unwrap();
        assert_eq!(decode_alignment(&p, &l).unwrap(), "to");
        let p = ProbSequence::one_hot(&[0, idx('i'), 0, 0, 0], l.len()).unwrap();
        assert_eq!(decode_alignment(&p, &l).unwrap(), "i");
    }

    #[test]
    fn decode_rejects_even_row_counts() {
        let l = lex();
        let p = ProbSequence::one_hot(&[0, 1, 0, 1], l.len()).unwrap();
        assert!(decode_alignment(&p, &l).is_err());
        let p = ProbSequence::one_hot(&[0], l.len()).unwrap();
        assert!(decode_alignment(&p, &l).is_err());
    }

    #[test]
    fn canonical_resize_shapes() {
        let img = GrayImage::filled(17, 93, 0.25);
        let out = resize_canonical(&img, 2).unwrap();
        assert_eq!((out.height(), out.width()), (32, 256));
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
        let exact = GrayImage::from_fn(32, 384, |y, x| ((y * 31 + x * 7) % 13) as f32 / 13.0);
        assert_eq!(resize_canonical(&exact, 3).unwrap(), exact);
        assert!(matches!(resize_canonical(&img, 0), Err(Error::SymbolCount(0))));
    }
}
