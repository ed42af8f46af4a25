//! Three-stage recognition of a single word block.

use serde::{Deserialize, Serialize};

use crate::align::{decode_alignment, resize_canonical, resize_context, ProbSequence};
use crate::error::Result;
use crate::image::GrayImage;
use crate::lexicon::SymbolLexicon;
use crate::matching::{prob_vocab_match, Vocabulary};
use crate::models::ModelBundle;

/// The three recognizer stages. [`ModelBundle`] is the real implementation;
/// tests substitute instrumented ones.
pub trait Stages: Sync {
    /// Best word and its confidence for a 32x128 image.
    fn vocab_predict(&self, context: &GrayImage) -> Result<(String, f64)>;
    /// Symbol count for a 32x128 image.
    fn length_predict(&self, context: &GrayImage) -> Result<usize>;
    fn symbol_forward(&self, block: &GrayImage, context: &GrayImage) -> Result<ProbSequence>;
    fn lexicon(&self) -> &SymbolLexicon;
    fn confidence_gate(&self) -> f64;
}

impl Stages for ModelBundle {
    fn vocab_predict(&self, context: &GrayImage) -> Result<(String, f64)> {
        ModelBundle::vocab_predict(self, context)
    }

    fn length_predict(&self, context: &GrayImage) -> Result<usize> {
        ModelBundle::length_predict(self, context)
    }

    fn symbol_forward(&self, block: &GrayImage, context: &GrayImage) -> Result<ProbSequence> {
        ModelBundle::symbol_forward(self, block, context)
    }

    fn lexicon(&self) -> &SymbolLexicon {
        &self.lexicon
    }

    fn confidence_gate(&self) -> f64 {
        self.confidence_gate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Vocabulary,
    Symbol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub input: String,
    pub stage_used: Stage,
    /// Vocabulary word (stage 1) or decoded symbol string (stage 3).
    pub raw: String,
    /// Dictionary word chosen by probabilistic matching, if enabled.
    pub matched: Option<String>,
    /// Stage-1 confidence; `None` when the stage is disabled.
    pub confidence: Option<f64>,
    /// Frequency-weighted probabilistic score of `matched`.
    pub score: Option<f64>,
    pub predicted_len: Option<usize>,
}

impl PredictionRecord {
    /// The string the recognizer reports.
    pub fn text(&self) -> &str {
        self.matched.as_deref().unwrap_or(&self.raw)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictOptions {
    /// Run the vocabulary network and honour its gate.
    pub vocab_stage: bool,
    /// Bypass the length network and use this symbol count.
    pub known_length: Option<usize>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            vocab_stage: true,
            known_length: None,
        }
    }
}

/// Stage 1 answers when its confidence exceeds the gate; otherwise the block
/// is resized to `32 x 128N` with the predicted `N` and decoded by the symbol
/// network, then optionally matched against `vocab`.
pub fn predict_block<S: Stages + ?Sized>(
    input: &str,
    image: &GrayImage,
    stages: &S,
    vocab: Option<&Vocabulary>,
    opts: &PredictOptions,
) -> Result<PredictionRecord> {
    let context = resize_context(image);
    let mut confidence = None;
    if opts.vocab_stage {
        let (word, conf) = stages.vocab_predict(&context)?;
        confidence = Some(conf);
        if conf > stages.confidence_gate() {
            return Ok(PredictionRecord {
                input: input.to_string(),
                stage_used: Stage::Vocabulary,
                raw: word,
                matched: None,
                confidence,
                score: None,
                predicted_len: None,
            });
        }
    }
    let n = match opts.known_length {
        Some(n) => n,
        None => stages.length_predict(&context)?,
    };
    let block = resize_canonical(image, n)?;
    let probs = stages.symbol_forward(&block, &context)?;
    let raw = decode_alignment(&probs, stages.lexicon())?;
    let (matched, score) = match vocab {
        Some(v) => {
            let (w, s) = prob_vocab_match(&probs, v, stages.lexicon())?;
            (Some(w.to_string()), Some(s))
        }
        None => (None, None),
    };
    Ok(PredictionRecord {
        input: input.to_string(),
        stage_used: Stage::Symbol,
        raw,
        matched,
        confidence,
        score,
        predicted_len: Some(n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::encode_alignment;
    use crate::matching::{frequency_score, prob_cer};

    /// Fixed-output stages: stage 1 reports `confidence`, stage 3 emits a
    /// sharpened version of `text`.
    pub(crate) struct Scripted {
        pub lexicon: SymbolLexicon,
        pub confidence: f64,
        pub text: String,
    }

    impl Stages for Scripted {
        fn vocab_predict(&self, _: &GrayImage) -> Result<(String, f64)> {
            Ok(("the".into(), self.confidence))
        }
        fn length_predict(&self, _: &GrayImage) -> Result<usize> {
            Ok(self.text.chars().count())
        }
        fn symbol_forward(&self, block: &GrayImage, _: &GrayImage) -> Result<ProbSequence> {
            assert_eq!(block.width(), 128 * self.text.chars().count());
            let t = encode_alignment(&self.text, &self.lexicon)?;
            let k = self.lexicon.len();
            let mut data = vec![0.02 / (k - 1) as f64; t.classes().len() * k];
            for (r, &c) in t.classes().iter().enumerate() {
                data[r * k + c] = 0.98;
            }
            ProbSequence::new(t.classes().len(), k, data)
        }
        fn lexicon(&self) -> &SymbolLexicon {
            &self.lexicon
        }
        fn confidence_gate(&self) -> f64 {
            0.7
        }
    }

    fn scripted(confidence: f64, text: &str) -> Scripted {
        Scripted {
            lexicon: SymbolLexicon::default_lexicon(),
            confidence,
            text: text.into(),
        }
    }

    #[test]
    fn gate_is_strict() {
        let img = GrayImage::filled(40, 90, 0.0);
        for (c, stage) in [(0.69, Stage::Symbol), (0.70, Stage::Symbol), (0.71, Stage::Vocabulary)] {
            let r = predict_block("x", &img, &scripted(c, "tymme"), None, &PredictOptions::default()).unwrap();
            assert_eq!(r.stage_used, stage, "confidence {c}");
        }
    }

    #[test]
    fn unconstrained_output_passes_through() {
        let img = GrayImage::filled(40, 90, 0.0);
        let r = predict_block("x", &img, &scripted(0.1, "+6091620"), None, &PredictOptions::default()).unwrap();
        assert_eq!((r.raw.as_str(), r.text()), ("+6091620", "+6091620"));
        assert_eq!(r.predicted_len, Some(8));
    }

    #[test]
    fn matching_replaces_raw_string() {
        let img = GrayImage::filled(40, 90, 0.0);
        let vocab = Vocabulary::new([("time".to_string(), 5), ("tame".to_string(), 1)]).unwrap();
        let s = scripted(0.1, "tymme");
        let r = predict_block("x", &img, &s, Some(&vocab), &PredictOptions::default()).unwrap();
        assert_eq!(r.raw, "tymme");
        assert_eq!(r.text(), "time");
        let probs = s.symbol_forward(&resize_canonical(&img, 5).unwrap(), &img).unwrap();
        let slots = probs.symbol_slots().unwrap();
        for (w, c) in vocab.entries() {
            let score = frequency_score(prob_cer(&slots, w, &s.lexicon).unwrap(), *c);
            assert!(r.score.unwrap() <= score);
        }
    }
}
