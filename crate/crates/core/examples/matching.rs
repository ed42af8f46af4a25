//! Edit distance, its DP table, and dictionary matching of both discrete
//! strings and per-slot probability sequences.

use wordblock::align::ProbSequence;
use wordblock::lexicon::SymbolLexicon;
use wordblock::matching::{cer, cer_breakdown, cer_table, frequency_match, prob_vocab_match, vocab_match, Vocabulary};

/// A distribution over the lexicon; empty means certain blank.
fn row(lexicon: &SymbolLexicon, dist: &[(char, f64)]) -> Vec<f64> {
    let mut r = vec![0.0; lexicon.len()];
    if dist.is_empty() {
        r[0] = 1.0;
    }
    for &(c, p) in dist {
        r[lexicon.index_of(c).unwrap()] = p;
    }
    r
}

fn main() -> wordblock::Result<()> {
    let (pred, label) = ("tymme", "time");
    let table = cer_table(pred, label);
    println!("cer({pred:?}, {label:?}) = {}", cer(pred, label));
    print!("      ");
    for c in pred.chars() {
        print!("{c:>3}");
    }
    println!();
    for i in 0..table.rows() {
        let head = if i == 0 { ' ' } else { label.chars().nth(i - 1).unwrap() };
        print!("{head:>3}");
        for j in 0..table.cols() {
            print!("{:>3}", table.get(i, j));
        }
        println!();
    }
    println!("{:?}", cer_breakdown(pred, label));

    let vocab = Vocabulary::new([("time".to_string(), 120), ("tome".to_string(), 3), ("tame".to_string(), 1)])?;
    let (w, d) = vocab_match("tyme", &vocab)?;
    println!("nearest to \"tyme\": {w} at distance {d}");
    let (w, s) = frequency_match("tame", &vocab)?;
    println!("frequency-weighted match for \"tame\": {w} (score {s:.4})");

    // three symbol slots, each unsure between two letters
    let lexicon = SymbolLexicon::new("aeimot".chars())?;
    let mut data = row(&lexicon, &[]);
    for slot in [[('t', 0.9), ('i', 0.1)], [('a', 0.55), ('o', 0.45)], [('m', 0.8), ('e', 0.2)]] {
        data.extend(row(&lexicon, &slot));
        data.extend(row(&lexicon, &[]));
    }
    let probs = ProbSequence::new(7, lexicon.len(), data)?;
    let vocab = Vocabulary::new([("tam".to_string(), 1), ("tom".to_string(), 50)])?;
    let (w, s) = prob_vocab_match(&probs, &vocab, &lexicon)?;
    println!("probabilistic match: {w} (score {s:.4})");
    Ok(())
}
