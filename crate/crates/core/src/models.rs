//! The three recognizers: Vocabulary CNN, Length CNN and the dual-stream
//! Symbol CNN, plus the bundle that stores them together.
//!
//! All three share one convolutional trunk layout:
//!
//! ```text
//! C(64)-C(64)-C(64)-P-C(128)-C(128)-C(256)-P-C(256)-C(512)-C(512)-P
//! ```
//!
//! with 3x3 "same" convolutions, each followed by batch norm and ReLU, taking
//! a 32x128 input down to a 4x16 map. Depths scale with the width multiplier.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{argmax, ProbSequence, CANONICAL_HEIGHT, SYMBOL_WIDTH};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::lexicon::SymbolLexicon;
use crate::nn::layers::{fc_backward, fc_forward, softmax_cross_entropy, softmax_in_place};
use crate::nn::{Checkpoint, GradCheckable, Gradients, LayerSpec, Mode, Network, NetworkSpec};
use crate::tensor::{Real, Tensor};

/// Vocabulary CNN acceptance threshold: a stage-1 answer is used only when
/// its confidence is strictly greater than this.
pub const DEFAULT_CONFIDENCE_GATE: f64 = 0.7;

const TRUNK: [&[usize]; 3] = [&[64, 64, 64], &[128, 128, 256], &[256, 512, 512]];
const COLLAPSE_DEPTH: usize = 256;
const CONTEXT_FEATURES: usize = 1024;

/// Scaled depth, never below 4.
pub fn scaled(depth: usize, width_mult: f64) -> usize {
    ((depth as f64 * width_mult).round() as usize).max(4)
}

fn conv_bn_relu(layers: &mut Vec<LayerSpec>, depth: usize) {
    layers.push(LayerSpec::conv3(depth));
    layers.push(LayerSpec::BatchNorm);
    layers.push(LayerSpec::ReLU);
}

/// The shared trunk; with `max_out` a conv + batch norm + MaxOut(2) block
/// follows every pool.
fn trunk(width_mult: f64, max_out: bool) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for stage in TRUNK {
        for &d in stage {
            conv_bn_relu(&mut layers, scaled(d, width_mult));
        }
        layers.push(LayerSpec::MaxPool);
        if max_out {
            let d = scaled(*stage.last().unwrap(), width_mult);
            layers.push(LayerSpec::conv3(2 * d));
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::MaxOut { pieces: 2 });
        }
    }
    layers
}

fn classifier_head(layers: &mut Vec<LayerSpec>, width_mult: f64, classes: usize) {
    layers.push(LayerSpec::conv_valid(scaled(COLLAPSE_DEPTH, width_mult), 4, 16));
    layers.push(LayerSpec::BatchNorm);
    layers.push(LayerSpec::ReLU);
    layers.push(LayerSpec::FullyConnected { outputs: classes });
    layers.push(LayerSpec::Softmax);
}

fn fixed_input() -> Vec<usize> {
    vec![1, CANONICAL_HEIGHT, SYMBOL_WIDTH]
}

pub fn build_vocab_cnn(word_count: usize, width_mult: f64) -> Result<NetworkSpec> {
    if word_count == 0 {
        return Err(Error::Config("vocabulary CNN needs at least one word class".into()));
    }
    let mut layers = trunk(width_mult, false);
    classifier_head(&mut layers, width_mult, word_count);
    NetworkSpec::new("vocab", layers, fixed_input())
}

/// Class `k` (0-based) means a block of `k + 1` symbols.
pub fn build_length_cnn(max_len: usize, width_mult: f64) -> Result<NetworkSpec> {
    if max_len == 0 {
        return Err(Error::Config("length CNN needs max_len >= 1".into()));
    }
    let mut layers = trunk(width_mult, true);
    classifier_head(&mut layers, width_mult, max_len);
    NetworkSpec::new("length", layers, fixed_input())
}

/// Specs of the three parts of the dual-stream symbol network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolSpec {
    /// Fixed 32x128 view -> trunk -> FC(features).
    pub context: NetworkSpec,
    /// 32x128N view -> trunk -> 4x8 conv with stride (1, 8) and width
    /// padding 4, giving `2N + 1` positions of `features` channels.
    pub block: NetworkSpec,
    /// Shared per-position FC(N_s) applied after the streams are summed.
    pub classifier: NetworkSpec,
    pub features: usize,
}

impl SymbolSpec {
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.context.digest());
        h.update(self.block.digest());
        h.update(self.classifier.digest());
        h.finalize().into()
    }
}

pub fn build_symbol_cnn(lexicon: &SymbolLexicon, width_mult: f64) -> Result<SymbolSpec> {
    let features = scaled(CONTEXT_FEATURES, width_mult);
    let mut context = trunk(width_mult, false);
    context.push(LayerSpec::FullyConnected { outputs: features });
    let context = NetworkSpec::new("symbol.context", context, fixed_input())?;

    let mut block = trunk(width_mult, false);
    block.push(LayerSpec::Conv {
        depth: features,
        kernel: [4, 8],
        stride: [1, 8],
        padding: [0, 4],
    });
    block.push(LayerSpec::BatchNorm);
    block.push(LayerSpec::ReLU);
    let block = NetworkSpec::new("symbol.block", block, fixed_input())?.fully_convolutional(SYMBOL_WIDTH);

    let classifier = NetworkSpec::new(
        "symbol.classifier",
        vec![LayerSpec::FullyConnected { outputs: lexicon.len() }],
        vec![features],
    )?;
    Ok(SymbolSpec {
        context,
        block,
        classifier,
        features,
    })
}

fn check_fixed(image: &GrayImage) -> Result<()> {
    if image.height() != CANONICAL_HEIGHT || image.width() != SYMBOL_WIDTH {
        return Err(Error::LayerShape {
            index: 0,
            kind: "input",
            expected: fixed_input(),
            actual: vec![1, image.height(), image.width()],
        });
    }
    Ok(())
}

/// Number of symbol slots a block image encodes, from its width.
pub fn block_symbols(width: usize) -> Result<usize> {
    if width == 0 || width % SYMBOL_WIDTH != 0 {
        return Err(Error::BlockWidth(width));
    }
    Ok(width / SYMBOL_WIDTH)
}

/// A classifier over a fixed 32x128 input (vocabulary or length network).
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T = f32> {
    pub net: Network<T>,
}

impl<T: Real> Classifier<T> {
    /// Softmax probabilities for one 32x128 image.
    pub fn probabilities(&self, image: &GrayImage) -> Result<Vec<f64>> {
        check_fixed(image)?;
        let out = self.net.forward(&[image.to_tensor()], Mode::Infer)?;
        Ok(out[0].data().iter().map(|v| v.as_f64()).collect())
    }

    /// Argmax class (first wins ties) and its probability.
    pub fn predict(&self, image: &GrayImage) -> Result<(usize, f64)> {
        let p = self.probabilities(image)?;
        let k = argmax(&p);
        Ok((k, p[k]))
    }

    /// Mean cross-entropy over a batch; accumulates gradients and returns the
    /// loss. Updates batch-norm running statistics.
    pub fn train_batch(&mut self, images: &[GrayImage], classes: &[usize]) -> Result<(f64, Gradients<T>)> {
        let input: Vec<Tensor<T>> = images
            .iter()
            .map(|img| check_fixed(img).map(|_| img.to_tensor()))
            .collect::<Result<_>>()?;
        let upto = self.net.spec.logit_layers();
        let trace = self.net.forward_trace(input, Mode::Train, upto)?;
        let k = *self.net.spec.output_shape.last().unwrap();
        let inv = 1.0 / images.len() as f64;
        let mut loss = 0.0;
        let mut upstream = Vec::with_capacity(images.len());
        for (y, &c) in trace.output().iter().zip(classes) {
            let (l, g) = softmax_cross_entropy(y.data(), k, &[c]);
            loss += l * inv;
            let g = g.into_iter().map(|v| v * T::from_f64(inv)).collect();
            upstream.push(Tensor::from_vec(y.shape(), g)?);
        }
        let (_, grads) = self.net.backward(&trace, upstream, false)?;
        self.net.update_running_stats(&trace);
        Ok((loss, grads))
    }
}

/// Gradients of the three symbol-network parts.
#[derive(Clone, Debug)]
pub struct SymbolGradients<T> {
    pub context: Gradients<T>,
    pub block: Gradients<T>,
    pub classifier: Gradients<T>,
    /// Gradient with respect to each block image, when requested.
    pub block_input: Option<Vec<Tensor<T>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolNet<T = f32> {
    pub spec: SymbolSpec,
    pub context: Network<T>,
    pub block: Network<T>,
    pub classifier: Network<T>,
}

/// Logits of one sample: `positions x classes`, plus the summed features.
struct SymbolForward<T> {
    logits: Vec<Vec<T>>,
    features: Vec<Vec<T>>,
}

impl<T: Real> SymbolNet<T> {
    pub fn init(spec: SymbolSpec, seed: u64) -> Self {
        SymbolNet {
            context: Network::init(spec.context.clone(), seed),
            block: Network::init(spec.block.clone(), seed.wrapping_add(1)),
            classifier: Network::init(spec.classifier.clone(), seed.wrapping_add(2)),
            spec,
        }
    }

    pub fn cast<U: Real>(&self) -> SymbolNet<U> {
        SymbolNet {
            spec: self.spec.clone(),
            context: self.context.cast(),
            block: self.block.cast(),
            classifier: self.classifier.cast(),
        }
    }

    pub fn classes(&self) -> usize {
        self.spec.classifier.output_shape[0]
    }

    fn combine(&self, ctx: &[Tensor<T>], blk: &[Tensor<T>]) -> SymbolForward<T> {
        let f = self.spec.features;
        let k = self.classes();
        let w = self.classifier.layers[0].params[0].data();
        let b = self.classifier.layers[0].params[1].data();
        let mut logits = Vec::with_capacity(ctx.len());
        let mut features = Vec::with_capacity(ctx.len());
        for (c, x) in ctx.iter().zip(blk) {
            let p = x.shape()[2];
            // [f, 1, p] -> [p, f] with the context vector broadcast to every position
            let mut feat = vec![T::zero(); p * f];
            for fi in 0..f {
                let cv = c.data()[fi];
                for pi in 0..p {
                    feat[pi * f + fi] = x.data()[fi * p + pi] + cv;
                }
            }
            logits.push(fc_forward(&feat, p, f, k, w, b));
            features.push(feat);
        }
        SymbolForward { logits, features }
    }

    fn check_pair(block: &GrayImage, context: &GrayImage) -> Result<usize> {
        check_fixed(context)?;
        if block.height() != CANONICAL_HEIGHT {
            return Err(Error::LayerShape {
                index: 0,
                kind: "input",
                expected: vec![1, CANONICAL_HEIGHT, block.width()],
                actual: vec![1, block.height(), block.width()],
            });
        }
        block_symbols(block.width())
    }

    /// Pre-softmax logits, `(2N + 1) x N_s`, row-major.
    pub fn logits(&self, block: &GrayImage, context: &GrayImage) -> Result<Vec<T>> {
        Self::check_pair(block, context)?;
        let ctx = self.context.forward(&[context.to_tensor()], Mode::Infer)?;
        let blk = self.block.forward(&[block.to_tensor()], Mode::Infer)?;
        Ok(self.combine(&ctx, &blk).logits.pop().unwrap())
    }

    pub fn forward(&self, block: &GrayImage, context: &GrayImage) -> Result<ProbSequence> {
        let logits = self.logits(block, context)?;
        let k = self.classes();
        let rows = logits.len() / k;
        let mut data: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
        data.chunks_mut(k).for_each(softmax_in_place);
        ProbSequence::new(rows, k, data)
    }

    /// Forward-only value of [`SymbolNet::loss_and_grads`].
    pub fn loss(&self, blocks: &[Tensor<T>], contexts: &[Tensor<T>], targets: &[Vec<usize>], mode: Mode) -> Result<f64> {
        Ok(self.loss_branches(blocks, contexts, targets, mode)?.0)
    }

    /// [`SymbolNet::loss`] with the branch hash of both streams.
    pub fn loss_branches(
        &self,
        blocks: &[Tensor<T>],
        contexts: &[Tensor<T>],
        targets: &[Vec<usize>],
        mode: Mode,
    ) -> Result<(f64, u64)> {
        let (ctx, hc) = self.context.forward_branches(contexts, mode, self.context.layers.len())?;
        let (blk, hb) = self.block.forward_branches(blocks, mode, self.block.layers.len())?;
        let fwd = self.combine(&ctx, &blk);
        let k = self.classes();
        let mut loss = 0.0;
        for (logits, target) in fwd.logits.iter().zip(targets) {
            if target.len() * k != logits.len() {
                return Err(Error::Shape(format!("target of {} positions for {} logits", target.len(), logits.len())));
            }
            loss += softmax_cross_entropy(logits, k, target).0;
        }
        Ok((loss / blocks.len() as f64, hc ^ hb.rotate_left(1)))
    }

    /// Summed per-position cross-entropy, averaged over the batch, with
    /// gradients for every part. `targets[i]` has `2N_i + 1` classes.
    pub fn loss_and_grads(
        &self,
        blocks: Vec<Tensor<T>>,
        contexts: Vec<Tensor<T>>,
        targets: &[Vec<usize>],
        mode: Mode,
        want_block_input: bool,
    ) -> Result<(f64, SymbolGradients<T>, [crate::nn::Trace<T>; 2])> {
        let batch = blocks.len();
        if contexts.len() != batch || targets.len() != batch {
            return Err(Error::Shape(format!(
                "symbol batch: {batch} blocks, {} contexts, {} targets",
                contexts.len(),
                targets.len()
            )));
        }
        let ctx_trace = self.context.forward_trace(contexts, mode, self.context.layers.len())?;
        let blk_trace = self.block.forward_trace(blocks, mode, self.block.layers.len())?;
        let fwd = self.combine(ctx_trace.output(), blk_trace.output());
        let f = self.spec.features;
        let k = self.classes();
        let inv = T::from_f64(1.0 / batch as f64);
        let w = self.classifier.layers[0].params[0].data();

        let mut loss = 0.0;
        let mut dw = vec![T::zero(); k * f];
        let mut db = vec![T::zero(); k];
        let mut dctx = Vec::with_capacity(batch);
        let mut dblk = Vec::with_capacity(batch);
        for ((logits, feat), target) in fwd.logits.iter().zip(&fwd.features).zip(targets) {
            let p = logits.len() / k;
            if target.len() != p {
                return Err(Error::Shape(format!(
                    "target of {} positions for an output of {p}",
                    target.len()
                )));
            }
            let (l, mut g) = softmax_cross_entropy(logits, k, target);
            loss += l / batch as f64;
            g.iter_mut().for_each(|v| *v *= inv);
            let (sw, sb, dfeat) = fc_backward(feat, &g, p, f, k, w, true);
            dw.iter_mut().zip(sw).for_each(|(a, b)| *a += b);
            db.iter_mut().zip(sb).for_each(|(a, b)| *a += b);
            let dfeat = dfeat.unwrap();
            let mut dc = vec![T::zero(); f];
            let mut dx = vec![T::zero(); f * p];
            for pi in 0..p {
                for fi in 0..f {
                    let v = dfeat[pi * f + fi];
                    dx[fi * p + pi] = v;
                    dc[fi] += v;
                }
            }
            dctx.push(Tensor::from_vec(&[f], dc)?);
            dblk.push(Tensor::from_vec(&[f, 1, p], dx)?);
        }
        let (_, context) = self.context.backward(&ctx_trace, dctx, false)?;
        let (block_input, block) = self.block.backward(&blk_trace, dblk, want_block_input)?;
        let classifier = vec![vec![Tensor::from_vec(&[k, f], dw)?, Tensor::from_vec(&[k], db)?]];
        Ok((
            loss,
            SymbolGradients {
                context,
                block,
                classifier,
                block_input,
            },
            [ctx_trace, blk_trace],
        ))
    }

    pub fn update_running_stats(&mut self, traces: &[crate::nn::Trace<T>; 2]) {
        self.context.update_running_stats(&traces[0]);
        self.block.update_running_stats(&traces[1]);
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = self.context.named_tensors_mut();
        out.extend(self.block.named_tensors_mut());
        out.extend(self.classifier.named_tensors_mut());
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.context.named_tensors();
        out.extend(self.block.named_tensors());
        out.extend(self.classifier.named_tensors());
        out
    }
}

/// Everything the three-stage recognizer needs.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub words: Vec<String>,
    pub vocab: Classifier,
    pub max_len: usize,
    pub length: Classifier,
    pub lexicon: SymbolLexicon,
    pub symbol: SymbolNet,
    pub confidence_gate: f64,
    pub width_mult: f64,
}

/// `manifest.json` of a bundle directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub word_classes: Vec<String>,
    /// Length classes are `1..=max_len`.
    pub max_len: usize,
    pub lexicon_file: String,
    pub confidence_gate: f64,
    pub width_mult: f64,
    pub vocab_checkpoint: String,
    pub length_checkpoint: String,
    pub symbol_checkpoint: String,
}

impl ModelBundle {
    pub fn init(words: Vec<String>, max_len: usize, lexicon: SymbolLexicon, width_mult: f64, seed: u64) -> Result<Self> {
        let vocab = Classifier {
            net: Network::init(build_vocab_cnn(words.len(), width_mult)?, seed),
        };
        let length = Classifier {
            net: Network::init(build_length_cnn(max_len, width_mult)?, seed.wrapping_add(10)),
        };
        let symbol = SymbolNet::init(build_symbol_cnn(&lexicon, width_mult)?, seed.wrapping_add(20));
        Ok(ModelBundle {
            words,
            vocab,
            max_len,
            length,
            lexicon,
            symbol,
            confidence_gate: DEFAULT_CONFIDENCE_GATE,
            width_mult,
        })
    }

    /// Stage 1: best word class and its confidence for a 32x128 image.
    pub fn vocab_predict(&self, image: &GrayImage) -> Result<(String, f64)> {
        let (k, conf) = self.vocab.predict(image)?;
        Ok((self.words[k].clone(), conf))
    }

    /// Stage 2: predicted symbol count in `1..=max_len`.
    pub fn length_predict(&self, image: &GrayImage) -> Result<usize> {
        Ok(self.length.predict(image)?.0 + 1)
    }

    /// Stage 3: per-position distributions for a 32x128N block and its
    /// 32x128 context view.
    pub fn symbol_forward(&self, block: &GrayImage, context: &GrayImage) -> Result<ProbSequence> {
        self.symbol.forward(block, context)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = BundleManifest {
            format_version: 1,
            word_classes: self.words.clone(),
            max_len: self.max_len,
            lexicon_file: "lexicon.txt".into(),
            confidence_gate: self.confidence_gate,
            width_mult: self.width_mult,
            vocab_checkpoint: "vocab.ckpt".into(),
            length_checkpoint: "length.ckpt".into(),
            symbol_checkpoint: "symbol.ckpt".into(),
        };
        self.lexicon.save(&dir.join(&manifest.lexicon_file))?;
        Checkpoint::from_named(self.vocab.net.spec.digest(), self.vocab.net.named_tensors())
            .save(&dir.join(&manifest.vocab_checkpoint))?;
        Checkpoint::from_named(self.length.net.spec.digest(), self.length.net.named_tensors())
            .save(&dir.join(&manifest.length_checkpoint))?;
        Checkpoint::from_named(self.symbol.spec.digest(), self.symbol.named_tensors())
            .save(&dir.join(&manifest.symbol_checkpoint))?;
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path: PathBuf = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if m.format_version != 1 {
            return Err(Error::Config(format!("unsupported bundle version {}", m.format_version)));
        }
        let lexicon = SymbolLexicon::load(&dir.join(&m.lexicon_file))?;
        let mut bundle = ModelBundle::init(m.word_classes, m.max_len, lexicon, m.width_mult, 0)?;
        bundle.confidence_gate = m.confidence_gate;
        let digest = bundle.vocab.net.spec.digest();
        Checkpoint::load(&dir.join(&m.vocab_checkpoint))?.restore(digest, bundle.vocab.net.named_tensors_mut())?;
        let digest = bundle.length.net.spec.digest();
        Checkpoint::load(&dir.join(&m.length_checkpoint))?.restore(digest, bundle.length.net.named_tensors_mut())?;
        let digest = bundle.symbol.spec.digest();
        Checkpoint::load(&dir.join(&m.symbol_checkpoint))?.restore(digest, bundle.symbol.named_tensors_mut())?;
        Ok(bundle)
    }
}

/// Symbol network, batch and aligned targets as a gradient-check problem.
/// Checks every parameter of the three parts and the block images.
pub struct SymbolProblem {
    pub net: SymbolNet<f64>,
    pub blocks: Vec<Tensor<f64>>,
    pub contexts: Vec<Tensor<f64>>,
    pub targets: Vec<Vec<usize>>,
    pub mode: Mode,
}

impl GradCheckable for SymbolProblem {
    fn loss_and_grads(&self) -> Result<(f64, Vec<(String, Tensor<f64>)>)> {
        let (loss, g, _) =
            self.net
                .loss_and_grads(self.blocks.clone(), self.contexts.clone(), &self.targets, self.mode, true)?;
        let names = self
            .net
            .context
            .param_names()
            .into_iter()
            .chain(self.net.block.param_names())
            .chain(self.net.classifier.param_names());
        let tensors = g.context.into_iter().chain(g.block).chain(g.classifier).flatten();
        let mut named: Vec<(String, Tensor<f64>)> = names.zip(tensors).collect();
        for (i, t) in g.block_input.unwrap_or_default().into_iter().enumerate() {
            named.push((format!("block_input.{i}"), t));
        }
        Ok((loss, named))
    }

    fn loss(&self) -> Result<f64> {
        self.net.loss(&self.blocks, &self.contexts, &self.targets, self.mode)
    }

    fn loss_and_branches(&self) -> Result<(f64, Option<u64>)> {
        let (l, h) = self.net.loss_branches(&self.blocks, &self.contexts, &self.targets, self.mode)?;
        Ok((l, Some(h)))
    }

    fn perturb(&mut self, tensor: usize, index: usize, delta: f64) {
        let mut k = tensor;
        for net in [&mut self.net.context, &mut self.net.block, &mut self.net.classifier] {
            for layer in &mut net.layers {
                if k < layer.params.len() {
                    layer.params[k].data_mut()[index] += delta;
                    return;
                }
                k -= layer.params.len();
            }
        }
        self.blocks[k].data_mut()[index] += delta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_cnn_trace_at_full_width() {
        let spec = build_vocab_cnn(1100, 1.0).unwrap();
        assert_eq!(spec.output_shape, vec![1100]);
        let shapes = spec.shapes_for(&[1, 32, 128]).unwrap();
        // after the three pools the map is 4x16 with 512 channels
        let pools: Vec<_> = spec
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::MaxPool))
            .map(|(i, _)| shapes[i + 1].clone())
            .collect();
        assert_eq!(pools, vec![vec![64, 16, 64], vec![256, 8, 32], vec![512, 4, 16]]);
        let collapse = spec.layers.iter().position(|l| matches!(l, LayerSpec::Conv { kernel: [4, 16], .. })).unwrap();
        assert_eq!(shapes[collapse + 1], vec![256, 1, 1]);
        assert_eq!(build_vocab_cnn(800, 1.0).unwrap().output_shape, vec![800]);
        let convs = spec.layers.iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count();
        assert_eq!(convs, 10);
    }

    #[test]
    fn every_conv_is_followed_by_batch_norm() {
        for spec in [build_vocab_cnn(10, 0.25).unwrap(), build_length_cnn(16, 0.25).unwrap()] {
            for (i, l) in spec.layers.iter().enumerate() {
                if matches!(l, LayerSpec::Conv { .. }) {
                    assert_eq!(spec.layers[i + 1], LayerSpec::BatchNorm);
                }
            }
        }
    }

    #[test]
    fn length_cnn_inserts_max_out_after_pools() {
        let spec = build_length_cnn(16, 0.25).unwrap();
        assert_eq!(spec.output_shape, vec![16]);
        let maxouts = spec.layers.iter().filter(|l| matches!(l, LayerSpec::MaxOut { .. })).count();
        assert_eq!(maxouts, 3);
        assert_eq!(build_length_cnn(1, 0.25).unwrap().output_shape, vec![1]);
        assert!(build_length_cnn(0, 0.25).is_err());
    }

    #[test]
    fn width_mult_has_floor_of_four() {
        assert_eq!(scaled(64, 0.25), 16);
        assert_eq!(scaled(64, 0.01), 4);
    }

    #[test]
    fn symbol_head_gives_2n_plus_1_positions() {
        let lex = SymbolLexicon::default_lexicon();
        let spec = build_symbol_cnn(&lex, 1.0).unwrap();
        for n in 1..=16 {
            let out = spec.block.output_shape_for(&[1, 32, 128 * n]).unwrap();
            assert_eq!(out, vec![1024, 1, 2 * n + 1]);
        }
        assert_eq!(spec.context.output_shape, vec![1024]);
        assert_eq!(spec.classifier.output_shape, vec![123]);
        assert!(spec.block.output_shape_for(&[1, 32, 200]).is_err());
    }

    #[test]
    fn symbol_forward_rejects_bad_width() {
        let lex = SymbolLexicon::new("ab".chars()).unwrap();
        let net = SymbolNet::<f32>::init(build_symbol_cnn(&lex, 0.02).unwrap(), 0);
        let ctx = GrayImage::new(32, 128);
        assert!(matches!(net.forward(&GrayImage::new(32, 200), &ctx), Err(Error::BlockWidth(200))));
    }
}
