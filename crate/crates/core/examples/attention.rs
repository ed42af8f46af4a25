//! Learns soft attention over slanted and noisy variants of each block
//! jointly with the symbol network, then ensembles two forward passes.

use wordblock::datagen::make_variant_family;
use wordblock::models::ModelBundle;
use wordblock::pipeline::{
    attention_combine, desk_data, ensemble_average, train, AttentionConfig, DeskConfig, Sample, Target, TrainOptions,
    DESK_WORDS,
};
use wordblock::align::{resize_canonical, resize_context};

fn main() -> wordblock::Result<()> {
    let cfg = DeskConfig { train_samples: 64, holdout_samples: 0, ..DeskConfig::default() };
    let data = desk_data(&cfg)?;
    let (_, label, image) = &data.train[0];
    let slants = vec![-12.0, 0.0, 12.0];
    let noise = vec![0.0, 0.08];
    let family = make_variant_family(image, &slants, &noise, 0);
    let blended = attention_combine(&family, &[0.0, 2.0, 0.0, 0.0, 0.0, 0.0])?;
    println!("{label:?}: {} variants, blend mean ink {:.4}", family.len(), blended.mean());

    let mut bundle = ModelBundle::init(DESK_WORDS.iter().map(|w| w.to_string()).collect(), 6, data.generator.lexicon().clone(), 0.25, 0)?;
    let samples: Vec<Sample> = data.train.iter().map(|(_, l, i)| Sample { label: l.clone(), image: i.clone() }).collect();
    let opts = TrainOptions { attention: Some(AttentionConfig { slants, noise }) };
    let log = train(&mut bundle, Target::Symbol, &[samples], &cfg.train_config(40), &opts, |_, _| Ok(()))?;
    let weights = log.attention.expect("attention enabled").weights();
    println!("learned variant weights: {:?}", weights.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>());

    let context = resize_context(image);
    let n = label.chars().count();
    let a = bundle.symbol_forward(&resize_canonical(image, n)?, &context)?;
    let b = bundle.symbol_forward(&resize_canonical(&family[0], n)?, &context)?;
    let avg = ensemble_average(&[a, b])?;
    println!("ensembled output {} x {}", avg.rows(), avg.symbols());
    Ok(())
}
