//! Character error rate and dictionary matching.
//!
//! Tables are indexed `[i][j]` with `i` over label prefixes and `j` over
//! prediction prefixes. Moving down (consuming a label character only) is a
//! deletion, moving right (consuming a prediction character only) is an
//! insertion.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::align::ProbSequence;
use crate::error::{Error, Result};
use crate::lexicon::{SymbolLexicon, BLANK};

/// Allowed deviation of a probability row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Full dynamic-programming table of [`cer`].
#[derive(Clone, Debug, PartialEq)]
pub struct CerTable {
    rows: usize,
    cols: usize,
    cells: Vec<f64>,
}

impl CerTable {
    fn new(rows: usize, cols: usize) -> Self {
        CerTable {
            rows,
            cols,
            cells: vec![0.0; rows * cols],
        }
    }

    /// `l + 1`, label prefixes.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// `h + 1`, prediction prefixes.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.cols + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.cells[i * self.cols + j] = v;
    }

    /// Bottom-right cell.
    pub fn total(&self) -> f64 {
        self.get(self.rows - 1, self.cols - 1)
    }
}

/// Counts along one optimal alignment path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditBreakdown {
    pub replaced: usize,
    /// Label characters missing from the prediction.
    pub deleted: usize,
    /// Prediction characters absent from the label.
    pub inserted: usize,
}

impl EditBreakdown {
    pub fn total(&self) -> usize {
        self.replaced + self.deleted + self.inserted
    }
}

pub fn cer_table(pred: &str, label: &str) -> CerTable {
    let p: Vec<char> = pred.chars().collect();
    let l: Vec<char> = label.chars().collect();
    let mut t = CerTable::new(l.len() + 1, p.len() + 1);
    for i in 0..=l.len() {
        t.set(i, 0, i as f64);
    }
    for j in 0..=p.len() {
        t.set(0, j, j as f64);
    }
    for i in 1..=l.len() {
        for j in 1..=p.len() {
            let diag = t.get(i - 1, j - 1) + if l[i - 1] == p[j - 1] { 0.0 } else { 1.0 };
            let del = t.get(i - 1, j) + 1.0;
            let ins = t.get(i, j - 1) + 1.0;
            t.set(i, j, diag.min(del).min(ins));
        }
    }
    t
}

/// Levenshtein distance between prediction and label.
pub fn cer(pred: &str, label: &str) -> usize {
    let p: Vec<char> = pred.chars().collect();
    let l: Vec<char> = label.chars().collect();
    // two-row version of `cer_table`
    let mut prev: Vec<usize> = (0..=p.len()).collect();
    let mut cur = vec![0; p.len() + 1];
    for i in 1..=l.len() {
        cur[0] = i;
        for j in 1..=p.len() {
            let diag = prev[j - 1] + usize::from(l[i - 1] != p[j - 1]);
            cur[j] = diag.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[p.len()]
}

/// Traces one optimal path back from the final cell, preferring the diagonal,
/// then deletion, then insertion.
pub fn cer_breakdown(pred: &str, label: &str) -> EditBreakdown {
    let p: Vec<char> = pred.chars().collect();
    let l: Vec<char> = label.chars().collect();
    let t = cer_table(pred, label);
    let mut out = EditBreakdown::default();
    let (mut i, mut j) = (l.len(), p.len());
    while i > 0 || j > 0 {
        let here = t.get(i, j);
        if i > 0 && j > 0 {
            let miss = l[i - 1] != p[j - 1];
            if t.get(i - 1, j - 1) + f64::from(u8::from(miss)) == here {
                out.replaced += usize::from(miss);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && t.get(i - 1, j) + 1.0 == here {
            out.deleted += 1;
            i -= 1;
        } else {
            out.inserted += 1;
            j -= 1;
        }
    }
    out
}

/// A matching dictionary with occurrence counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<(String, u64)>,
}

impl Vocabulary {
    pub fn new(entries: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let entries: Vec<(String, u64)> = entries.into_iter().collect();
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut seen = HashSet::new();
        for (w, _) in &entries {
            if !seen.insert(w.as_str()) {
                return Err(Error::Config(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Vocabulary { entries })
    }

    /// Every word with count 1.
    pub fn uniform<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(words.into_iter().map(|w| (w.into(), 1)))
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, word: &str) -> Option<u64> {
        self.entries.iter().find(|(w, _)| w == word).map(|&(_, c)| c)
    }

    /// Parses `word<TAB>count` lines. A line without a tab counts as 1; blank
    /// lines are skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (word, count) = match line.split_once('\t') {
                Some((w, c)) => {
                    let c = c.trim().parse::<u64>().map_err(|e| Error::Parse {
                        path: origin.to_path_buf(),
                        line: n + 1,
                        message: format!("bad count {c:?}: {e}"),
                    })?;
                    (w, c)
                }
                None => (line, 1),
            };
            entries.push((word.to_string(), count));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (w, c) in &self.entries {
            let _ = writeln!(s, "{w}\t{c}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Rejects words with symbols outside `lexicon`.
    pub fn check_lexicon(&self, lexicon: &SymbolLexicon) -> Result<()> {
        for (w, _) in &self.entries {
            lexicon.encode(w)?;
        }
        Ok(())
    }
}

/// Picks the entry minimising `score`; ties go to the higher count, then the
/// lexicographically smaller word.
fn select<'v>(vocab: &'v Vocabulary, mut score: impl FnMut(&str, u64) -> Result<f64>) -> Result<(&'v str, f64)> {
    let mut best: Option<(&str, u64, f64)> = None;
    for (w, c) in &vocab.entries {
        let s = score(w, *c)?;
        let better = match best {
            None => true,
            Some((bw, bc, bs)) => s < bs || (s == bs && (*c > bc || (*c == bc && w.as_str() < bw))),
        };
        if better {
            best = Some((w, *c, s));
        }
    }
    let (w, _, s) = best.ok_or(Error::EmptyVocabulary)?;
    Ok((w, s))
}

/// Dictionary word nearest to `pred` in discrete CER, with its distance.
pub fn vocab_match<'v>(pred: &str, vocab: &'v Vocabulary) -> Result<(&'v str, usize)> {
    let (w, s) = select(vocab, |w, _| Ok(cer(pred, w) as f64))?;
    Ok((w, s as usize))
}

/// Dictionary word minimising [`frequency_score`] with the discrete CER of
/// `pred` in place of the probabilistic one, with its score.
pub fn frequency_match<'v>(pred: &str, vocab: &'v Vocabulary) -> Result<(&'v str, f64)> {
    select(vocab, |w, c| Ok(frequency_score(cer(pred, w) as f64, c)))
}

/// Which skip-label cost [`prob_cer`] uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProbCerVariant {
    /// Skipping a label character costs 1; no prediction slot is consumed.
    #[default]
    Corrected,
    /// Skipping label character `i` while at slot `j` costs `1 - P_j(L_i)`,
    /// the literal published form.
    Published,
}

/// Errors unless every row sums to 1 within [`ROW_SUM_TOLERANCE`].
pub fn check_rows(rows: &[&[f64]]) -> Result<()> {
    for (r, row) in rows.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Unnormalized { row: r, sum });
        }
    }
    Ok(())
}

/// Probabilistic CER over the symbol-slot distributions `slots` (one row
/// per predicted symbol).
pub fn prob_cer(slots: &[&[f64]], label: &str, lexicon: &SymbolLexicon) -> Result<f64> {
    prob_cer_with(slots, label, lexicon, ProbCerVariant::Corrected)
}

pub fn prob_cer_with(slots: &[&[f64]], label: &str, lexicon: &SymbolLexicon, variant: ProbCerVariant) -> Result<f64> {
    check_rows(slots)?;
    for row in slots {
        if row.len() != lexicon.len() {
            return Err(Error::MalformedSequence(format!(
                "row of {} entries for a lexicon of {}",
                row.len(),
                lexicon.len()
            )));
        }
    }
    let label = lexicon.encode(label)?;
    let h = slots.len();
    let mut prev = vec![0.0; h + 1];
    for j in 1..=h {
        prev[j] = prev[j - 1] + 1.0 - slots[j - 1][BLANK];
    }
    let mut cur = vec![0.0; h + 1];
    for (i, &li) in label.iter().enumerate() {
        cur[0] = (i + 1) as f64;
        for j in 1..=h {
            let slot = slots[j - 1];
            let diag = prev[j - 1] + 1.0 - slot[li];
            let skip_pred = cur[j - 1] + 1.0 - slot[BLANK];
            let skip_label = prev[j]
                + match variant {
                    ProbCerVariant::Corrected => 1.0,
                    ProbCerVariant::Published => 1.0 - slot[li],
                };
            cur[j] = diag.min(skip_pred).min(skip_label);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[h])
}

/// `prob_cer + 1 / (1 + count)`.
pub fn frequency_score(prob_cer: f64, count: u64) -> f64 {
    prob_cer + 1.0 / (1.0 + count as f64)
}

/// Dictionary word minimising [`frequency_score`] over the symbol slots of
/// `probs`, with its score.
pub fn prob_vocab_match<'v>(probs: &ProbSequence, vocab: &'v Vocabulary, lexicon: &SymbolLexicon) -> Result<(&'v str, f64)> {
    let slots = probs.symbol_slots()?;
    prob_vocab_match_slots(&slots, vocab, lexicon)
}

pub fn prob_vocab_match_slots<'v>(slots: &[&[f64]], vocab: &'v Vocabulary, lexicon: &SymbolLexicon) -> Result<(&'v str, f64)> {
    check_rows(slots)?;
    select(vocab, |w, c| Ok(frequency_score(prob_cer(slots, w, lexicon)?, c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn naive(a: &[char], b: &[char]) -> usize {
        match (a, b) {
            ([], _) => b.len(),
            (_, []) => a.len(),
            ([x, ra @ ..], [y, rb @ ..]) => {
                let sub = naive(ra, rb) + usize::from(x != y);
                sub.min(naive(ra, b) + 1).min(naive(a, rb) + 1)
            }
        }
    }

    fn naive_str(a: &str, b: &str) -> usize {
        naive(&a.chars().collect::<Vec<_>>(), &b.chars().collect::<Vec<_>>())
    }

    #[test]
    fn worked_examples() {
        assert_eq!(cer("tymme", "time"), 2);
        assert_eq!(cer("", "abc"), 3);
        assert_eq!(cer("kitten", "sitting"), naive_str("kitten", "sitting"));
        assert_eq!(cer("kitten", "sitting"), 3);
        let t = cer_table("tymme", "time");
        assert_eq!((t.rows(), t.cols()), (5, 6));
        assert_eq!(t.total(), 2.0);
    }

    #[test]
    fn breakdowns() {
        let b = cer_breakdown("tymme", "time");
        assert_eq!(b, EditBreakdown { replaced: 1, deleted: 0, inserted: 1 });
        assert_eq!(cer_breakdown("abc", "abc"), EditBreakdown::default());
        assert_eq!(cer_breakdown("", "ab"), EditBreakdown { replaced: 0, deleted: 2, inserted: 0 });
        assert_eq!(cer_breakdown("ab", ""), EditBreakdown { replaced: 0, deleted: 0, inserted: 2 });
    }

    #[test]
    fn vocab_match_examples() {
        let v = Vocabulary::uniform(["time", "tame", "thyme"]).unwrap();
        let (w, d) = vocab_match("tyme", &v).unwrap();
        let best = ["time", "tame", "thyme"].iter().map(|w| naive_str("tyme", w)).min().unwrap();
        assert_eq!(d, best);
        assert_eq!(naive_str("tyme", w), best);
        assert_eq!(vocab_match("tame", &v).unwrap(), ("tame", 0));
        let one = Vocabulary::uniform(["zzz"]).unwrap();
        assert_eq!(vocab_match("abc", &one).unwrap().0, "zzz");
        assert!(matches!(Vocabulary::uniform(Vec::<String>::new()), Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn vocab_ties_prefer_count_then_order() {
        let v = Vocabulary::new([("bb".to_string(), 1), ("ba".to_string(), 5), ("ab".to_string(), 5)]).unwrap();
        assert_eq!(vocab_match("aa", &v).unwrap().0, "ab");
    }

    fn lex4() -> SymbolLexicon {
        SymbolLexicon::new(['a', 'b', 'c']).unwrap()
    }

    #[test]
    fn single_slot_diagonal() {
        let l = lex4();
        let row = [0.0, 0.9, 0.05, 0.05];
        let v = prob_cer(&[&row], "a", &l).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_rows_rejected() {
        let l = lex4();
        let row = [0.0, 0.9, 0.05, 0.0];
        assert!(matches!(prob_cer(&[&row], "a", &l), Err(Error::Unnormalized { row: 0, .. })));
    }

    /// Exact rational re-implementation of the recurrence.
    fn rational_prob_cer(slots: &[Vec<BigRational>], label: &[usize], variant: ProbCerVariant) -> BigRational {
        let one = BigRational::from_integer(1.into());
        let h = slots.len();
        let mut c = vec![vec![BigRational::from_integer(0.into()); h + 1]; label.len() + 1];
        for (i, row) in c.iter_mut().enumerate() {
            row[0] = BigRational::from_integer((i as i64).into());
        }
        for j in 1..=h {
            c[0][j] = &c[0][j - 1] + &one - &slots[j - 1][BLANK];
        }
        for i in 1..=label.len() {
            for j in 1..=h {
                let p = &slots[j - 1];
                let diag = &c[i - 1][j - 1] + &one - &p[label[i - 1]];
                let skip_pred = &c[i][j - 1] + &one - &p[BLANK];
                let skip_label = match variant {
                    ProbCerVariant::Corrected => &c[i - 1][j] + &one,
                    ProbCerVariant::Published => &c[i - 1][j] + &one - &p[label[i - 1]],
                };
                c[i][j] = diag.min(skip_pred).min(skip_label);
            }
        }
        c[label.len()][h].clone()
    }

    fn to_f64(r: &BigRational) -> f64 {
        use num_traits::ToPrimitive;
        r.to_f64().unwrap()
    }

    #[test]
    fn uniform_two_slots_matches_rational_oracle() {
        let l = lex4();
        let q = BigRational::new(1.into(), 4.into());
        let slots = vec![vec![q.clone(); 4], vec![q; 4]];
        let rows = [[0.25; 4], [0.25; 4]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        for variant in [ProbCerVariant::Corrected, ProbCerVariant::Published] {
            let want = rational_prob_cer(&slots, &l.encode("ab").unwrap(), variant);
            let got = prob_cer_with(&refs, "ab", &l, variant).unwrap();
            assert!((got - to_f64(&want)).abs() < 1e-12, "{variant:?}");
        }
        // two diagonal steps at 0.75 each
        assert!((prob_cer(&refs, "ab", &l).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn frequency_term() {
        assert_eq!(frequency_score(0.0, 0), 1.0);
        let l = lex4();
        let row = [0.0, 0.5, 0.5, 0.0];
        let v = Vocabulary::new([("a".to_string(), 1), ("b".to_string(), 10)]).unwrap();
        assert_eq!(prob_vocab_match_slots(&[&row], &v, &l).unwrap().0, "b");
    }

    #[test]
    fn vocabulary_tsv_roundtrip() {
        let v = Vocabulary::new([("time".to_string(), 3), ("été".to_string(), 0)]).unwrap();
        let back = Vocabulary::parse(&v.to_tsv(), Path::new("mem")).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::parse("a\tx\n", Path::new("mem")).is_err());
        assert!(Vocabulary::parse("a\t1\na\t2\n", Path::new("mem")).is_err());
    }

    fn rational_row(weights: &[u32]) -> (Vec<f64>, Vec<BigRational>) {
        let total: u32 = weights.iter().sum();
        let exact: Vec<BigRational> =
            weights.iter().map(|&w| BigRational::new((w as i64).into(), (total as i64).into())).collect();
        (exact.iter().map(to_f64).collect(), exact)
    }

    proptest! {
        #[test]
        fn cer_is_a_metric(a in "[abc]{0,7}", b in "[abc]{0,7}", c in "[abc]{0,7}") {
            prop_assert_eq!(cer(&a, &b), cer(&b, &a));
            prop_assert!(cer(&a, &c) <= cer(&a, &b) + cer(&b, &c));
            prop_assert_eq!(cer(&a, &b) == 0, a == b);
            prop_assert_eq!(cer(&a, &b), naive_str(&a, &b));
            prop_assert_eq!(cer_breakdown(&a, &b).total(), cer(&a, &b));
        }

        #[test]
        fn table_is_lipschitz(a in "[abc]{0,6}", b in "[abc]{0,6}") {
            let t = cer_table(&a, &b);
            prop_assert_eq!(t.get(0, 0), 0.0);
            for i in 0..t.rows() {
                for j in 0..t.cols() {
                    if i > 0 { prop_assert!((t.get(i, j) - t.get(i - 1, j)).abs() <= 1.0); }
                    if j > 0 { prop_assert!((t.get(i, j) - t.get(i, j - 1)).abs() <= 1.0); }
                }
            }
        }

        #[test]
        fn prob_cer_matches_rational_oracle(
            weights in prop::collection::vec(prop::collection::vec(0u32..5, 4), 1..5),
            label in "[abc]{0,5}",
        ) {
            prop_assume!(weights.iter().all(|w| w.iter().sum::<u32>() > 0));
            let l = lex4();
            let (rows, exact): (Vec<_>, Vec<_>) = weights.iter().map(|w| rational_row(w)).unzip();
            let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
            let enc = l.encode(&label).unwrap();
            for variant in [ProbCerVariant::Corrected, ProbCerVariant::Published] {
                let got = prob_cer_with(&refs, &label, &l, variant).unwrap();
                prop_assert!((got - to_f64(&rational_prob_cer(&exact, &enc, variant))).abs() < 1e-9);
            }
        }

        #[test]
        fn single_slot_score_decreases_with_probability(p in 0.0f64..1.0, q in 0.0f64..1.0) {
            prop_assume!(p < q);
            let l = lex4();
            let row = |x: f64| [0.0, x, 1.0 - x, 0.0];
            let (rp, rq) = (row(p), row(q));
            let sp = prob_cer(&[&rp], "a", &l).unwrap();
            let sq = prob_cer(&[&rq], "a", &l).unwrap();
            prop_assert!((sp - (1.0 - p)).abs() < 1e-12);
            prop_assert!(sq < sp);
        }

        #[test]
        fn match_ignores_vocabulary_order(
            words in prop::collection::hash_set("[abc]{1,4}", 1..6),
            counts in prop::collection::vec(0u64..4, 6),
            weights in prop::collection::vec(prop::collection::vec(1u32..5, 4), 1..4),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let l = lex4();
            let entries: Vec<(String, u64)> = words.into_iter().zip(counts).collect();
            let rows: Vec<Vec<f64>> = weights.iter().map(|w| rational_row(w).0).collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
            let v = Vocabulary::new(entries.clone()).unwrap();
            let mut shuffled = entries;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let s = Vocabulary::new(shuffled).unwrap();
            prop_assert_eq!(
                prob_vocab_match_slots(&refs, &v, &l).unwrap().0,
                prob_vocab_match_slots(&refs, &s, &l).unwrap().0
            );
        }
    }
}
