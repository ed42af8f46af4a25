//! Mini-batch SGD for each of the three networks.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionWeights;
use crate::align::{encode_alignment, resize_canonical, resize_context};
use crate::datagen::{image_path, make_variant_family, mix, read_manifest, Split};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::models::ModelBundle;
use crate::nn::{Mode, Sgd, TrainConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Vocab,
    Length,
    Symbol,
}

/// A labelled block image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub label: String,
    pub image: GrayImage,
}

/// Loads the manifest entries of `split` (all entries when `None`).
pub fn load_samples(manifest: &Path, split: Option<Split>) -> Result<Vec<Sample>> {
    read_manifest(manifest)?
        .into_iter()
        .filter(|e| split.is_none_or(|s| s == e.split))
        .map(|e| {
            let (image, _) = GrayImage::load(&image_path(manifest, &e))?;
            Ok(Sample { label: e.label, image })
        })
        .collect()
}

/// Slant and noise grid for the attention variant family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub slants: Vec<f64>,
    pub noise: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    /// Learn attention logits over a variant family jointly with the symbol
    /// network. Off by default.
    pub attention: Option<AttentionConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
    /// Samples left out because their label is not a vocabulary class.
    pub skipped: usize,
    pub attention: Option<AttentionWeights>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct Prepared {
    context: GrayImage,
    class: usize,
    block: Option<GrayImage>,
    target: Vec<usize>,
    family: Vec<GrayImage>,
}

fn prepare(bundle: &ModelBundle, target: Target, samples: &[Sample], opts: &TrainOptions, seed: u64) -> Result<(Vec<Prepared>, usize)> {
    let mut out = Vec::with_capacity(samples.len());
    let mut skipped = 0;
    for (i, s) in samples.iter().enumerate() {
        let n = s.label.chars().count();
        let context = resize_context(&s.image);
        match target {
            Target::Vocab => match bundle.words.iter().position(|w| *w == s.label) {
                Some(class) => out.push(Prepared { context, class, block: None, target: vec![], family: vec![] }),
                None => skipped += 1,
            },
            Target::Length => {
                if n == 0 || n > bundle.max_len {
                    return Err(Error::Config(format!(
                        "label {:?} has {n} symbols; the length network covers 1..={}",
                        s.label, bundle.max_len
                    )));
                }
                out.push(Prepared { context, class: n - 1, block: None, target: vec![], family: vec![] });
            }
            Target::Symbol => {
                let aligned = encode_alignment(&s.label, &bundle.lexicon)?;
                let block = resize_canonical(&s.image, n)?;
                let family = match &opts.attention {
                    Some(a) => make_variant_family(&block, &a.slants, &a.noise, mix(&[seed, i as u64])),
                    None => vec![],
                };
                out.push(Prepared {
                    context,
                    class: 0,
                    block: Some(block),
                    target: aligned.classes().to_vec(),
                    family,
                });
            }
        }
    }
    Ok((out, skipped))
}

/// Endless per-source reshuffled epochs.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Trains one network of `bundle` in place.
///
/// Every batch takes `config.batch_composition[s]` samples from `sources[s]`.
/// `on_iteration` runs after each update; it can write checkpoints.
pub fn train(
    bundle: &mut ModelBundle,
    target: Target,
    sources: &[Vec<Sample>],
    config: &TrainConfig,
    opts: &TrainOptions,
    mut on_iteration: impl FnMut(&LossRecord, &ModelBundle) -> Result<()>,
) -> Result<TrainLog> {
    config.validate()?;
    if sources.len() != config.batch_composition.len() {
        return Err(Error::Config(format!(
            "{} sources for a batch composition of {}",
            sources.len(),
            config.batch_composition.len()
        )));
    }
    let mut prepared = Vec::with_capacity(sources.len());
    let mut skipped = 0;
    for (s, samples) in sources.iter().enumerate() {
        let (p, k) = prepare(bundle, target, samples, opts, mix(&[config.rng_seed, s as u64]))?;
        if p.is_empty() && config.batch_composition[s] > 0 {
            return Err(Error::Config(format!("source {s} has no usable samples")));
        }
        skipped += k;
        prepared.push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut cyclers: Vec<Cycler> = prepared
        .iter()
        .map(|p| Cycler { pos: p.len(), order: (0..p.len()).collect() })
        .collect();

    let mut attention = match (&opts.attention, target) {
        (Some(a), Target::Symbol) => Some(AttentionWeights::new(a.slants.len() * a.noise.len())),
        _ => None,
    };
    let mut log = TrainLog { skipped, ..TrainLog::default() };
    let (mut sgd_a, mut sgd_b, mut sgd_c) = match target {
        Target::Vocab => (Sgd::new(&bundle.vocab.net), None, None),
        Target::Length => (Sgd::new(&bundle.length.net), None, None),
        Target::Symbol => (
            Sgd::new(&bundle.symbol.context),
            Some(Sgd::new(&bundle.symbol.block)),
            Some(Sgd::new(&bundle.symbol.classifier)),
        ),
    };

    for it in 0..config.total_iterations {
        let mut batch: Vec<&Prepared> = Vec::with_capacity(config.batch_size);
        for (s, &count) in config.batch_composition.iter().enumerate() {
            for _ in 0..count {
                batch.push(&prepared[s][cyclers[s].next(&mut rng)]);
            }
        }
        let loss = match target {
            Target::Vocab | Target::Length => {
                let clf = if target == Target::Vocab { &mut bundle.vocab } else { &mut bundle.length };
                let images: Vec<GrayImage> = batch.iter().map(|p| p.context.clone()).collect();
                let classes: Vec<usize> = batch.iter().map(|p| p.class).collect();
                let (loss, grads) = clf.train_batch(&images, &classes)?;
                sgd_a.step(&mut clf.net, &grads, config, it)?;
                loss
            }
            Target::Symbol => {
                let blocks: Vec<Tensor> = match &attention {
                    Some(a) => batch.iter().map(|p| a.combine(&p.family).map(|b| b.to_tensor())).collect::<Result<_>>()?,
                    None => batch.iter().map(|p| p.block.as_ref().expect("symbol sample").to_tensor()).collect(),
                };
                let contexts: Vec<Tensor> = batch.iter().map(|p| p.context.to_tensor()).collect();
                let targets: Vec<Vec<usize>> = batch.iter().map(|p| p.target.clone()).collect();
                let sym = &mut bundle.symbol;
                let (loss, grads, traces) = sym.loss_and_grads(blocks, contexts, &targets, Mode::Train, attention.is_some())?;
                sym.update_running_stats(&traces);
                sgd_a.step(&mut sym.context, &grads.context, config, it)?;
                sgd_b.as_mut().unwrap().step(&mut sym.block, &grads.block, config, it)?;
                sgd_c.as_mut().unwrap().step(&mut sym.classifier, &grads.classifier, config, it)?;
                if let (Some(a), Some(dx)) = (attention.as_mut(), grads.block_input) {
                    let mut g = vec![0.0; a.logits.len()];
                    for (p, d) in batch.iter().zip(&dx) {
                        let up: Vec<f64> = d.data().iter().map(|&v| v as f64).collect();
                        for (acc, v) in g.iter_mut().zip(a.backward(&p.family, &up)?) {
                            *acc += v;
                        }
                    }
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteGradient("attention.logits".into()));
                    }
                    a.step(&g, config.lr_at(it), config.momentum);
                }
                loss
            }
        };
        if !loss.is_finite() {
            return Err(Error::Config(format!("loss diverged at iteration {it}")));
        }
        let record = LossRecord { iteration: it, loss, lr: config.lr_at(it) };
        on_iteration(&record, bundle)?;
        log.records.push(record);
    }
    log.attention = attention;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{compose_block, synth_glyph_bank, AugmentConfig};
    use crate::lexicon::SymbolLexicon;

    fn setup() -> (ModelBundle, Vec<Sample>) {
        let lex = SymbolLexicon::new("ab".chars()).unwrap();
        let bank = synth_glyph_bank(&lex, 1, 1, 0).unwrap();
        let samples: Vec<Sample> = ["a", "ab", "ba", "b"]
            .iter()
            .enumerate()
            .map(|(i, l)| Sample {
                label: l.to_string(),
                image: compose_block(l, 0, &bank, &AugmentConfig::off(), i as u64).unwrap().image,
            })
            .collect();
        let bundle = ModelBundle::init(vec!["ab".into(), "ba".into()], 3, lex, 0.0625, 1).unwrap();
        (bundle, samples)
    }

    fn config(iters: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            dropped_rate: 0.001,
            batch_size: 2,
            batch_composition: vec![2],
            total_iterations: iters,
            rng_seed: 4,
            width_mult: 0.0625,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        for target in [Target::Vocab, Target::Length, Target::Symbol] {
            let (mut a, samples) = setup();
            let mut b = a.clone();
            let la = train(&mut a, target, &[samples.clone()], &config(3), &TrainOptions::default(), |_, _| Ok(())).unwrap();
            let lb = train(&mut b, target, &[samples], &config(3), &TrainOptions::default(), |_, _| Ok(())).unwrap();
            assert_eq!(la, lb, "{target:?}");
            assert_eq!(la.records.len(), 3);
            if target == Target::Vocab {
                assert_eq!(la.skipped, 2);
            }
        }
    }

    #[test]
    fn composition_must_match_sources() {
        let (mut bundle, samples) = setup();
        let r = train(&mut bundle, Target::Length, &[samples.clone(), samples], &config(1), &TrainOptions::default(), |_, _| Ok(()));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn overlong_and_foreign_labels_rejected() {
        let (mut bundle, mut samples) = setup();
        samples[0].label = "abab".into();
        let r = train(&mut bundle, Target::Length, &[samples.clone()], &config(1), &TrainOptions::default(), |_, _| Ok(()));
        assert!(matches!(r, Err(Error::Config(_))));
        samples[0].label = "c".into();
        let r = train(&mut bundle, Target::Symbol, &[samples], &config(1), &TrainOptions::default(), |_, _| Ok(()));
        assert!(matches!(r, Err(Error::UnknownSymbol { symbol: 'c', .. })));
    }

    #[test]
    fn attention_logits_move() {
        let (mut bundle, samples) = setup();
        let opts = TrainOptions {
            attention: Some(AttentionConfig { slants: vec![-10.0, 0.0, 10.0], noise: vec![0.0] }),
        };
        let log = train(&mut bundle, Target::Symbol, &[samples], &config(3), &opts, |_, _| Ok(())).unwrap();
        let a = log.attention.unwrap();
        assert_eq!(a.logits.len(), 3);
        assert!(a.logits.iter().any(|&l| l != 0.0));
        assert!((a.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_log_csv() {
        let log = TrainLog {
            records: vec![LossRecord { iteration: 0, loss: 1.5, lr: 0.01 }],
            ..TrainLog::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        log.write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "iteration,loss,lr\n0,1.5,0.01\n");
    }
}
