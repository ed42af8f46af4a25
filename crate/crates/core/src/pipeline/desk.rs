//! A CPU-sized end-to-end experiment: a 12-symbol lexicon, three synthetic
//! writers, a 40-word dictionary, length and symbol networks trained from
//! scratch, evaluated on training and held-out blocks.

use serde::{Deserialize, Serialize};

use super::eval::{evaluate_samples, EvalOptions, EvalReport, LabelledImage};
use super::predict::PredictOptions;
use super::train::{train, LossRecord, Sample, Target, TrainLog, TrainOptions};
use crate::datagen::{DatasetSpec, Generator, GlyphSource};
use crate::error::Result;
use crate::matching::Vocabulary;
use crate::models::ModelBundle;
use crate::nn::TrainConfig;

pub const DESK_SYMBOLS: &str = "acdehilnorst";

pub const DESK_WORDS: [&str; 40] = [
    "a", "an", "and", "as", "at", "to", "so", "do", "no", "on", "or", "in", "is", "it", "the", "this", "that", "hat",
    "cat", "rat", "hot", "not", "note", "tone", "one", "done", "stone", "nose", "rose", "lion", "salt", "tiles",
    "dance", "horse", "shirt", "cold", "hold", "drain", "snail", "ten",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub train_samples: usize,
    /// Drawn from the same generator after the training samples.
    pub holdout_samples: usize,
    pub data_seed: u64,
    pub glyph_seed: u64,
    pub writers: u32,
    pub glyph_variants: usize,
    pub width_mult: f64,
    pub model_seed: u64,
    pub length_iterations: u64,
    pub symbol_iterations: u64,
    pub learning_rate: f64,
    pub lr_drop_iteration: u64,
    pub batch_size: usize,
    pub l2_lambda: f64,
    pub train_seed: u64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            train_samples: 500,
            holdout_samples: 100,
            data_seed: 7,
            glyph_seed: 1,
            writers: 3,
            glyph_variants: 3,
            width_mult: 0.25,
            model_seed: 3,
            length_iterations: 100,
            symbol_iterations: 800,
            learning_rate: 0.003,
            lr_drop_iteration: 600,
            batch_size: 8,
            l2_lambda: 0.0005,
            train_seed: 5,
        }
    }
}

impl DeskConfig {
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            samples: self.train_samples + self.holdout_samples,
            seed: self.data_seed,
            symbols: Some(DESK_SYMBOLS.into()),
            dictionary: DESK_WORDS.iter().map(|w| w.to_string()).collect(),
            glyphs: GlyphSource::Synthetic { writers: self.writers, variants: self.glyph_variants, seed: self.glyph_seed },
            holdout_fraction: 0.0,
            ..DatasetSpec::default()
        }
    }

    pub fn train_config(&self, iterations: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            dropped_rate: self.learning_rate / 10.0,
            lr_drop_iteration: self.lr_drop_iteration,
            batch_size: self.batch_size,
            batch_composition: vec![self.batch_size],
            total_iterations: iterations,
            rng_seed: self.train_seed,
            width_mult: self.width_mult,
            l2_lambda: self.l2_lambda,
            ..TrainConfig::default()
        }
    }
}

/// Training and held-out blocks.
pub struct DeskData {
    pub generator: Generator,
    pub train: Vec<LabelledImage>,
    pub holdout: Vec<LabelledImage>,
}

pub fn desk_data(cfg: &DeskConfig) -> Result<DeskData> {
    let generator = Generator::new(cfg.dataset_spec())?;
    let mut all = (0..cfg.train_samples + cfg.holdout_samples)
        .map(|i| generator.sample(i).map(|(e, img)| (e.image, e.label, img)))
        .collect::<Result<Vec<LabelledImage>>>()?;
    let holdout = all.split_off(cfg.train_samples);
    Ok(DeskData { generator, train: all, holdout })
}

pub struct DeskOutcome {
    pub bundle: ModelBundle,
    pub length_log: TrainLog,
    pub symbol_log: TrainLog,
    /// Stages 2 and 3, no dictionary.
    pub train: EvalReport,
    pub holdout: EvalReport,
    /// Held-out blocks with stage-3 output matched against the dictionary.
    pub holdout_matched: EvalReport,
}

/// Trains the length then the symbol network on `data.train` and evaluates.
/// The vocabulary network is left untrained and stage 1 is disabled.
pub fn run_desk(
    cfg: &DeskConfig,
    data: &DeskData,
    mut progress: impl FnMut(Target, &LossRecord),
) -> Result<DeskOutcome> {
    let words: Vec<String> = DESK_WORDS.iter().map(|w| w.to_string()).collect();
    let lexicon = data.generator.lexicon().clone();
    let max_len = data.generator.spec().length_range.1;
    let mut bundle = ModelBundle::init(words.clone(), max_len, lexicon, cfg.width_mult, cfg.model_seed)?;
    let samples: Vec<Sample> =
        data.train.iter().map(|(_, label, image)| Sample { label: label.clone(), image: image.clone() }).collect();
    let sources = [samples];
    let opts = TrainOptions::default();
    let mut logs = Vec::new();
    for (target, iterations) in [(Target::Length, cfg.length_iterations), (Target::Symbol, cfg.symbol_iterations)] {
        let config = cfg.train_config(iterations);
        logs.push(train(&mut bundle, target, &sources, &config, &opts, |r, _| {
            progress(target, r);
            Ok(())
        })?);
    }
    let eval = EvalOptions { predict: PredictOptions { vocab_stage: false, known_length: None }, ..EvalOptions::default() };
    let vocab = Vocabulary::uniform(words)?;
    let (train_report, _) = evaluate_samples(&data.train, &bundle, None, &eval)?;
    let (holdout, _) = evaluate_samples(&data.holdout, &bundle, None, &eval)?;
    let (holdout_matched, _) = evaluate_samples(&data.holdout, &bundle, Some(&vocab), &eval)?;
    let symbol_log = logs.pop().unwrap();
    let length_log = logs.pop().unwrap();
    Ok(DeskOutcome { bundle, length_log, symbol_log, train: train_report, holdout, holdout_matched })
}
