//! Polyline skeletons for every symbol of the default lexicon.
//!
//! Coordinates are in glyph units: `x` runs from 0 to the advance width, `y`
//! from 0 (cap height) down to 6 (baseline) and 8 (descender). Lowercase
//! x-height is at `y = 2`. Strokes are separated by `;`, points by spaces.

/// A glyph as strokes of `(x, y)` points plus its advance width.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub width: f64,
    pub strokes: Vec<Vec<(f64, f64)>>,
}

fn base(c: char) -> Option<(f64, &'static str)> {
    let w4 = 4.0;
    Some(match c {
        '0' => (w4, "1,0 3,0 4,1 4,5 3,6 1,6 0,5 0,1 1,0; 3.5,0.8 0.5,5.2"),
        '1' => (w4, "1,1 2,0 2,6; 1,6 3,6"),
        '2' => (w4, "0,1 1,0 3,0 4,1 4,2 0,6 4,6"),
        '3' => (w4, "0,0 4,0 2,2.5 3,2.5 4,3.5 4,5 3,6 1,6 0,5"),
        '4' => (w4, "3,6 3,0 0,4 4,4"),
        '5' => (w4, "4,0 0,0 0,2.5 3,2.5 4,3.5 4,5 3,6 0,6"),
        '6' => (w4, "3.5,0 1,0 0,1.5 0,5 1,6 3,6 4,5 4,3.5 3,2.5 1,2.5 0,3.5"),
        '7' => (w4, "0,0 4,0 1.5,6"),
        '8' => (w4, "1,0 3,0 4,1 4,2 3,3 1,3 0,4 0,5 1,6 3,6 4,5 4,4 3,3; 1,3 0,2 0,1 1,0"),
        '9' => (w4, "4,2.5 3,3.5 1,3.5 0,2.5 0,1 1,0 3,0 4,1 4,5 3,6 0.5,6"),
        'A' => (w4, "0,6 2,0 4,6; 0.7,4 3.3,4"),
        'B' => (w4, "0,6 0,0 3,0 4,0.8 4,2.2 3,3 0,3; 3,3 4,3.8 4,5.2 3,6 0,6"),
        'C' => (w4, "4,1 3,0 1,0 0,1 0,5 1,6 3,6 4,5"),
        'D' => (w4, "0,0 0,6 2.5,6 4,4.5 4,1.5 2.5,0 0,0"),
        'E' => (w4, "4,0 0,0 0,6 4,6; 0,3 3,3"),
        'F' => (w4, "4,0 0,0 0,6; 0,3 3,3"),
        'G' => (w4, "4,1 3,0 1,0 0,1 0,5 1,6 3,6 4,5 4,3.5 2.5,3.5"),
        'H' => (w4, "0,0 0,6; 4,0 4,6; 0,3 4,3"),
        'I' => (3.0, "0.5,0 2.5,0; 1.5,0 1.5,6; 0.5,6 2.5,6"),
        'J' => (w4, "1,0 4,0; 3,0 3,5 2,6 1,6 0,5"),
        'K' => (w4, "0,0 0,6; 4,0 0,3.5; 1.2,2.7 4,6"),
        'L' => (w4, "0,0 0,6 4,6"),
        'M' => (5.0, "0,6 0,0 2.5,3.5 5,0 5,6"),
        'N' => (w4, "0,6 0,0 4,6 4,0"),
        'O' => (w4, "1,0 3,0 4,1 4,5 3,6 1,6 0,5 0,1 1,0"),
        'P' => (w4, "0,6 0,0 3,0 4,1 4,2 3,3 0,3"),
        'Q' => (w4, "1,0 3,0 4,1 4,5 3,6 1,6 0,5 0,1 1,0; 2.5,4.5 4,6.5"),
        'R' => (w4, "0,6 0,0 3,0 4,1 4,2 3,3 0,3; 2,3 4,6"),
        'S' => (w4, "4,1 3,0 1,0 0,1 0,2 1,3 3,3 4,4 4,5 3,6 1,6 0,5"),
        'T' => (w4, "0,0 4,0; 2,0 2,6"),
        'U' => (w4, "0,0 0,5 1,6 3,6 4,5 4,0"),
        'V' => (w4, "0,0 2,6 4,0"),
        'W' => (5.0, "0,0 1.2,6 2.5,2.5 3.8,6 5,0"),
        'X' => (w4, "0,0 4,6; 4,0 0,6"),
        'Y' => (w4, "0,0 2,3 4,0; 2,3 2,6"),
        'Z' => (w4, "0,0 4,0 0,6 4,6"),
        'a' => (w4, "0.5,2 3,2 3.5,2.5 3.5,6; 3.5,3.5 1,3.5 0,4.3 0,5.3 1,6 2.5,6 3.5,5"),
        'b' => (w4, "0,0 0,6; 0,3 1,2 3,2 4,3 4,5 3,6 1,6 0,5"),
        'c' => (w4, "4,2.5 3,2 1,2 0,3 0,5 1,6 3,6 4,5.5"),
        'd' => (w4, "4,0 4,6; 4,3 3,2 1,2 0,3 0,5 1,6 3,6 4,5"),
        'e' => (w4, "0,4 4,4 4,3 3,2 1,2 0,3 0,5 1,6 3,6 4,5.5"),
        'f' => (3.5, "3.5,0.5 3,0 2,0 1.2,0.8 1.2,6; 0,2.5 3,2.5"),
        'g' => (w4, "4,2 4,7 3,8 1,8 0,7.3; 4,3 3,2 1,2 0,3 0,4.5 1,5.5 3,5.5 4,4.5"),
        'h' => (w4, "0,0 0,6; 0,3 1,2 3,2 4,3 4,6"),
        'i' => (2.0, "1,2 1,6; 1,0.6 1,0.9"),
        'j' => (3.0, "2,2 2,7 1,8 0,7.5; 2,0.6 2,0.9"),
        'k' => (3.5, "0,0 0,6; 3.5,2 0,4.5; 1.2,3.7 3.5,6"),
        'l' => (2.0, "1,0 1,5.5 1.5,6"),
        'm' => (4.4, "0,6 0,2; 0,3 0.8,2 1.6,2 2.2,3 2.2,6; 2.2,3 3,2 3.7,2 4.4,3 4.4,6"),
        'n' => (w4, "0,6 0,2; 0,3 1,2 3,2 4,3 4,6"),
        'o' => (w4, "1,2 3,2 4,3 4,5 3,6 1,6 0,5 0,3 1,2"),
        'p' => (w4, "0,2 0,8; 0,3 1,2 3,2 4,3 4,5 3,6 1,6 0,5"),
        'q' => (w4, "4,2 4,8; 4,3 3,2 1,2 0,3 0,5 1,6 3,6 4,5"),
        'r' => (3.5, "0,2 0,6; 0,3.5 1.5,2 3,2 3.5,2.5"),
        's' => (3.5, "3.5,2.5 2.5,2 1,2 0,2.8 1,3.8 2.5,4.2 3.5,5 2.5,6 1,6 0,5.5"),
        't' => (3.0, "1.5,0.5 1.5,5.5 2,6 3,6; 0.3,2 3,2"),
        'u' => (w4, "0,2 0,5 1,6 3,6 4,5; 4,2 4,6"),
        'v' => (w4, "0,2 2,6 4,2"),
        'w' => (5.0, "0,2 1.2,6 2.5,3.5 3.8,6 5,2"),
        'x' => (w4, "0,2 4,6; 4,2 0,6"),
        'y' => (w4, "0,2 2,6; 4,2 1.5,8 0.5,8"),
        'z' => (w4, "0,2 4,2 0,6 4,6"),
        'ı' => (2.0, "1,2 1,6"),
        'æ' => (6.0, "0.3,2 2,2 2.8,2.8 2.8,6; 2.8,3.5 0.8,3.5 0,4.3 0,5.3 0.8,6 2.8,5.3; 2.8,4 6,4 6,3 5,2 3.8,2 2.8,3; 2.8,5 3.8,6 5,6 6,5.5"),
        'œ' => (6.0, "1,2 2,2 3,3 3,5 2,6 1,6 0,5 0,3 1,2; 3,4 6,4 6,3 5,2 4,2 3,3; 3,5 4,6 5,6 6,5.5"),
        'ç' => (w4, "4,2.5 3,2 1,2 0,3 0,5 1,6 3,6 4,5.5; 2,6 2,6.8 2.8,7.3 1.8,8"),
        'ß' => (w4, "0,6 0,1 1,0 2.5,0 3.3,0.8 3.3,1.8 2,3 3.5,3.8 4,4.8 3.3,5.8 2,6"),
        '!' => (2.0, "1,0 1,4.2; 1,5.6 1,6"),
        '"' => (3.0, "0.7,0 0.7,1.5; 2.3,0 2.3,1.5"),
        '#' => (w4, "1.3,0.5 0.7,5.5; 3.3,0.5 2.7,5.5; 0,2 4,2; 0,4 4,4"),
        '$' => (w4, "4,1.5 3,1 1,1 0,2 1,3 3,3 4,4 3,5 1,5 0,4.5; 2,0 2,6"),
        '%' => (w4, "0,6 4,0; 0.5,0.3 1.3,0.3 1.3,1.5 0.5,1.5 0.5,0.3; 2.7,4.5 3.5,4.5 3.5,5.7 2.7,5.7 2.7,4.5"),
        '&' => (w4, "4,6 1,2 1,1 1.8,0 2.6,1 2.6,1.8 0,4 0,5 1,6 2.3,6 4,4"),
        '\'' => (2.0, "1,0 1,1.5"),
        '(' => (2.5, "2,0 1,1 0.6,3 1,5 2,6"),
        ')' => (2.5, "0.5,0 1.5,1 1.9,3 1.5,5 0.5,6"),
        '*' => (w4, "2,1 2,5; 0.3,2 3.7,4; 3.7,2 0.3,4"),
        '+' => (w4, "2,1.5 2,5.5; 0,3.5 4,3.5"),
        ',' => (2.0, "1,5.5 1,6.3 0.5,7"),
        '-' => (w4, "0.5,3.5 3.5,3.5"),
        '.' => (2.0, "1,5.6 1,6"),
        '/' => (3.0, "0,6 3,0"),
        ':' => (2.0, "1,2.4 1,2.8; 1,5.6 1,6"),
        ';' => (2.0, "1,2.4 1,2.8; 1,5.5 1,6.3 0.5,7"),
        '<' => (w4, "4,1 0,3.5 4,6"),
        '=' => (w4, "0,2.5 4,2.5; 0,4.5 4,4.5"),
        '>' => (w4, "0,1 4,3.5 0,6"),
        '?' => (w4, "0,1 1,0 3,0 4,1 4,2 2,3.5 2,4.5; 2,5.6 2,6"),
        '@' => (4.2, "3,3.5 3,2 1.5,2 1,3 1,4 1.7,4.8 3,4.2 3,2.5; 3,4.2 4,4.5 4.2,3 4,1 3,0 1,0 0,1 0,5 1,6 3.5,6"),
        '[' => (2.5, "2,0 0.7,0 0.7,6 2,6"),
        '\\' => (3.0, "0,0 3,6"),
        ']' => (2.5, "0.5,0 1.8,0 1.8,6 0.5,6"),
        '^' => (w4, "0,2 2,0 4,2"),
        '_' => (w4, "0,6.5 4,6.5"),
        '{' => (2.6, "2.3,0 1.5,0 1,0.8 1,2.5 0.3,3 1,3.5 1,5.2 1.5,6 2.3,6"),
        '|' => (2.0, "1,0 1,7"),
        '}' => (2.6, "0.3,0 1.1,0 1.6,0.8 1.6,2.5 2.3,3 1.6,3.5 1.6,5.2 1.1,6 0.3,6"),
        '~' => (w4, "0,3.8 1,3 2,3.5 3,4 4,3.2"),
        '`' => (2.0, "0.5,0 1.5,1"),
        '¿' => (w4, "4,5 3,6 1,6 0,5 0,4 2,2.5 2,1.5; 2,0.4 2,0"),
        '¡' => (2.0, "1,6 1,1.8; 1,0.4 1,0"),
        '€' => (w4, "4,1 3,0 1.5,0 0.7,1 0.7,5 1.5,6 3,6 4,5; 0,2.5 2.8,2.5; 0,3.8 2.8,3.8"),
        '£' => (w4, "3.8,1 3,0 2,0 1.2,1 1.2,6; 0,6 4,6; 0,3 2.8,3"),
        _ => return None,
    })
}

#[derive(Clone, Copy)]
enum Accent {
    Acute,
    Grave,
    Circumflex,
    Diaeresis,
    Tilde,
}

impl Accent {
    /// Strokes relative to the horizontal centre of the base glyph.
    fn strokes(self) -> &'static str {
        match self {
            Accent::Acute => "-0.5,1.6 0.8,0.2",
            Accent::Grave => "-0.8,0.2 0.5,1.6",
            Accent::Circumflex => "-1,1.6 0,0.4 1,1.6",
            Accent::Diaeresis => "-0.8,0.6 -0.8,1; 0.8,0.6 0.8,1",
            Accent::Tilde => "-1.5,1.2 -0.7,0.5 0.5,1.2 1.5,0.5",
        }
    }
}

fn composite(c: char) -> Option<(char, Accent)> {
    use Accent::*;
    Some(match c {
        'à' => ('a', Grave),
        'â' => ('a', Circumflex),
        'ä' => ('a', Diaeresis),
        'á' => ('a', Acute),
        'é' => ('e', Acute),
        'è' => ('e', Grave),
        'ê' => ('e', Circumflex),
        'ë' => ('e', Diaeresis),
        'î' => ('ı', Circumflex),
        'ï' => ('ı', Diaeresis),
        'í' => ('ı', Acute),
        'ô' => ('o', Circumflex),
        'ö' => ('o', Diaeresis),
        'ó' => ('o', Acute),
        'ù' => ('u', Grave),
        'û' => ('u', Circumflex),
        'ü' => ('u', Diaeresis),
        'ú' => ('u', Acute),
        'ÿ' => ('y', Diaeresis),
        'ñ' => ('n', Tilde),
        _ => return None,
    })
}

fn parse(strokes: &str, dx: f64) -> Vec<Vec<(f64, f64)>> {
    strokes
        .split(';')
        .map(|stroke| {
            stroke
                .split_whitespace()
                .map(|p| {
                    let (x, y) = p.split_once(',').expect("point is x,y");
                    (x.parse::<f64>().unwrap() + dx, y.parse::<f64>().unwrap())
                })
                .collect()
        })
        .collect()
}

/// Skeleton for `c`, or `None` when the renderer has no shape for it.
pub fn skeleton(c: char) -> Option<Skeleton> {
    if let Some((width, s)) = base(c) {
        return Some(Skeleton {
            width,
            strokes: parse(s, 0.0),
        });
    }
    let (b, accent) = composite(c)?;
    let (width, s) = base(b)?;
    let mut strokes = parse(s, 0.0);
    strokes.extend(parse(accent.strokes(), width / 2.0));
    Some(Skeleton { width, strokes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::SymbolLexicon;

    #[test]
    fn every_default_symbol_has_a_skeleton() {
        for &c in SymbolLexicon::default_lexicon().visible() {
            let s = skeleton(c).unwrap_or_else(|| panic!("no skeleton for {c:?}"));
            assert!(s.strokes.iter().all(|st| !st.is_empty()));
            for st in &s.strokes {
                for &(x, y) in st {
                    assert!((-0.5..=s.width + 0.5).contains(&x), "{c:?} x={x}");
                    assert!((-0.5..=8.5).contains(&y), "{c:?} y={y}");
                }
            }
        }
    }

    #[test]
    fn distinct_symbols_have_distinct_skeletons() {
        let lex = SymbolLexicon::default_lexicon();
        let all: Vec<_> = lex.visible().iter().map(|&c| skeleton(c).unwrap()).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j], "{:?} vs {:?}", lex.visible()[i], lex.visible()[j]);
            }
        }
    }
}
