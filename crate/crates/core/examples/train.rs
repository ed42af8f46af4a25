//! Trains the length and symbol networks on the desk-scale synthetic task,
//! reports CER/WER on training and held-out blocks, and saves the bundle.
//!
//! `cargo run --release --example train -- [BUNDLE_DIR] [SYMBOL_ITERATIONS]`
//!
//! The default 800 symbol iterations take roughly ten minutes on one core.

use std::path::PathBuf;
use std::time::Instant;

use wordblock::pipeline::{desk_data, run_desk, DeskConfig, EvalReport};

fn show(name: &str, r: &EvalReport) {
    println!(
        "{name:<16} CER {:>6.2}%  WER {:>6.2}%  length accuracy {:.3}",
        100.0 * r.cer_rate,
        100.0 * r.wer,
        r.length_accuracy.unwrap_or(f64::NAN)
    );
}

fn main() -> wordblock::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| PathBuf::from("target/desk-bundle"), PathBuf::from);
    let mut cfg = DeskConfig::default();
    if let Some(n) = args.next() {
        cfg.symbol_iterations = n.parse().expect("SYMBOL_ITERATIONS must be an integer");
        cfg.lr_drop_iteration = cfg.symbol_iterations * 3 / 4;
    }
    let start = Instant::now();
    let data = desk_data(&cfg)?;
    println!("{} training and {} held-out blocks", data.train.len(), data.holdout.len());
    let outcome = run_desk(&cfg, &data, |target, r| {
        if r.iteration % 100 == 0 {
            println!("{target:?} iteration {:>4}  loss {:.4}  {:.0}s", r.iteration, r.loss, start.elapsed().as_secs_f64());
        }
    })?;
    show("train", &outcome.train);
    show("held-out", &outcome.holdout);
    show("held-out matched", &outcome.holdout_matched);
    outcome.bundle.save(&out)?;
    outcome.symbol_log.write_csv(&out.join("loss_symbol.csv"))?;
    println!("bundle saved to {} after {:.0}s", out.display(), start.elapsed().as_secs_f64());
    Ok(())
}
