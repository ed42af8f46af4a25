//! Runs the three-stage recognizer on held-out desk blocks, with and
//! without dictionary matching.
//!
//! `cargo run --release --example predict -- [BUNDLE_DIR]` after the `train`
//! example has written a bundle.

use std::path::PathBuf;

use wordblock::matching::Vocabulary;
use wordblock::models::ModelBundle;
use wordblock::pipeline::{desk_data, predict_block, DeskConfig, PredictOptions, DESK_WORDS};

fn main() -> wordblock::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| PathBuf::from("target/desk-bundle"), PathBuf::from);
    let bundle = ModelBundle::load(&dir).inspect_err(|_| {
        eprintln!("no bundle in {}; run `cargo run --release --example train` first", dir.display())
    })?;
    let data = desk_data(&DeskConfig::default())?;
    let vocab = Vocabulary::uniform(DESK_WORDS)?;
    // the desk bundle leaves the vocabulary network untrained
    let opts = PredictOptions { vocab_stage: false, known_length: None };
    println!("{:<8} {:<8} {:<8} {:<8} {}", "label", "length", "raw", "matched", "score");
    for (input, label, image) in data.holdout.iter().take(12) {
        let r = predict_block(input, image, &bundle, Some(&vocab), &opts)?;
        println!(
            "{label:<8} {:<8} {:<8} {:<8} {:.3}",
            r.predicted_len.unwrap_or(0),
            r.raw,
            r.text(),
            r.score.unwrap_or(f64::NAN)
        );
    }
    let (_, _, image) = &data.holdout[0];
    let gated = predict_block("first", image, &bundle, None, &PredictOptions::default())?;
    println!("with stage 1 on: {:?} via {:?} (confidence {:.3})", gated.text(), gated.stage_used, gated.confidence.unwrap());
    Ok(())
}
