//! Symbol lexicon: the class list of the symbol network.
//!
//! Class 0 is always the blank `<b>`. The file form is UTF-8 text with one
//! symbol per line; line `k` (0-based) is class `k` and line 0 is the literal
//! token `<b>`.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const BLANK_TOKEN: &str = "<b>";
pub const BLANK: usize = 0;

/// Visible symbols of the default lexicon: digits, Latin letters, the accented
/// letters of French, Spanish and German, and common punctuation and currency.
const DEFAULT_VISIBLE: &str = concat!(
    "0123456789",
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ",
    "abcdefghijklmnopqrstuvwxyz",
    "àâäæçéèêëîïôöœùûüÿñáíóúß",
    "!\"#$%&'()*+,-./:;<=>?@[\\]^_{|}~`",
    "¿¡€£",
);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolLexicon {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl SymbolLexicon {
    /// Builds a lexicon from visible symbols; the blank is prepended.
    pub fn new(visible: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut symbols = vec!['\0'];
        let mut index = HashMap::new();
        for c in visible {
            if c == '\0' || c.is_whitespace() {
                return Err(Error::Lexicon(format!("symbol {c:?} is not allowed")));
            }
            if index.insert(c, symbols.len()).is_some() {
                return Err(Error::Lexicon(format!("duplicate symbol {c:?}")));
            }
            symbols.push(c);
        }
        if symbols.len() < 2 {
            return Err(Error::Lexicon("lexicon has no visible symbols".into()));
        }
        Ok(SymbolLexicon { symbols, index })
    }

    /// The 123-class lexicon (122 visible symbols plus blank).
    pub fn default_lexicon() -> Self {
        Self::new(DEFAULT_VISIBLE.chars()).expect("default lexicon is valid")
    }

    /// Number of classes including the blank.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// `None` for the blank.
    pub fn symbol(&self, index: usize) -> Option<char> {
        (index != BLANK).then(|| self.symbols.get(index).copied()).flatten()
    }

    pub fn visible(&self) -> &[char] {
        &self.symbols[1..]
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// Maps a string to class indices, naming the first unknown character.
    pub fn encode(&self, s: &str) -> Result<Vec<usize>> {
        s.chars()
            .enumerate()
            .map(|(position, c)| self.index_of(c).ok_or(Error::UnknownSymbol { symbol: c, position }))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(BLANK_TOKEN);
        out.push('\n');
        for c in self.visible() {
            out.push(*c);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(BLANK_TOKEN) => {}
            other => {
                return Err(Error::Lexicon(format!(
                    "first line must be {BLANK_TOKEN}, found {other:?}"
                )))
            }
        }
        let mut visible = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut chars = line.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => visible.push(c),
                _ => {
                    return Err(Error::Lexicon(format!(
                        "line {} must hold exactly one symbol, found {line:?}",
                        n + 1
                    )))
                }
            }
        }
        Self::new(visible)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lexicon_has_123_classes() {
        let lex = SymbolLexicon::default_lexicon();
        assert_eq!(lex.len(), 123);
        assert_eq!(lex.symbol(BLANK), None);
        for c in "9/10/1966(246)344-9702+$&.@é".chars() {
            assert!(lex.contains(c), "{c}");
        }
    }

    #[test]
    fn text_form_roundtrips() {
        let lex = SymbolLexicon::default_lexicon();
        let text = lex.to_text();
        assert!(text.starts_with("<b>\n0\n"));
        assert_eq!(SymbolLexicon::parse(&text).unwrap(), lex);
    }

    #[test]
    fn rejects_duplicates_and_bad_files() {
        assert!(SymbolLexicon::new("aba".chars()).is_err());
        assert!(SymbolLexicon::parse("a\nb\n").is_err());
        assert!(SymbolLexicon::parse("<b>\nab\n").is_err());
    }

    #[test]
    fn encode_names_unknown_symbol() {
        let lex = SymbolLexicon::new("abc".chars()).unwrap();
        assert_eq!(lex.encode("cab").unwrap(), vec![3, 1, 2]);
        match lex.encode("abz") {
            Err(Error::UnknownSymbol { symbol, position }) => {
                assert_eq!((symbol, position), ('z', 2));
            }
            other => panic!("{other:?}"),
        }
    }
}
