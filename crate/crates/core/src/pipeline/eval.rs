//! Corpus evaluation: CER, WER and per-stage usage.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::predict::{predict_block, PredictOptions, PredictionRecord, Stage, Stages};
use crate::datagen::{image_path, read_manifest, Split};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::matching::{cer, Vocabulary};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub vocabulary: usize,
    pub symbol: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub total_ms: f64,
    pub mean_ms_per_sample: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Manifest entries whose image could not be read.
    pub missing: usize,
    /// Sum of per-sample edit distances.
    pub total_cer: usize,
    /// Mean edit distance per sample.
    pub mean_cer: f64,
    pub label_chars: usize,
    /// `total_cer / label_chars`.
    pub cer_rate: f64,
    /// Fraction of samples whose final string differs from the label.
    pub wer: f64,
    /// Fraction of stage-3 samples whose predicted length equals the label's.
    pub length_accuracy: Option<f64>,
    pub stage_counts: StageCounts,
    pub runtime: Runtime,
}

impl EvalReport {
    /// The report with timing zeroed, for determinism comparisons.
    pub fn without_runtime(&self) -> EvalReport {
        EvalReport { runtime: Runtime::default(), ..self.clone() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleResult {
    pub label: String,
    pub record: PredictionRecord,
    pub cer: usize,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    input: &'a str,
    label: &'a str,
    prediction: &'a str,
    raw: &'a str,
    stage: Stage,
    predicted_len: Option<usize>,
    confidence: Option<f64>,
    cer: usize,
    correct: bool,
}

pub fn write_results_csv(results: &[SampleResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in results {
        w.serialize(CsvRow {
            input: &r.record.input,
            label: &r.label,
            prediction: r.record.text(),
            raw: &r.record.raw,
            stage: r.record.stage_used,
            predicted_len: r.record.predicted_len,
            confidence: r.record.confidence,
            cer: r.cer,
            correct: r.record.text() == r.label,
        })
        .map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub predict: PredictOptions,
    /// Restrict to one manifest split.
    pub split: Option<Split>,
    /// Give stage 3 the true symbol count instead of the predicted one.
    pub oracle_length: bool,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

/// An input reference, its label and its image.
pub type LabelledImage = (String, String, GrayImage);

/// Runs [`predict_block`] on every sample, spread over worker threads;
/// results keep input order.
pub fn evaluate_samples<S: Stages + ?Sized>(
    samples: &[LabelledImage],
    stages: &S,
    vocab: Option<&Vocabulary>,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<SampleResult>)> {
    let start = Instant::now();
    let threads = match opts.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .clamp(1, samples.len().max(1));
    let chunk = samples.len().div_ceil(threads).max(1);
    let run = |part: &[LabelledImage]| -> Result<Vec<SampleResult>> {
        part.iter()
            .map(|(input, label, image)| {
                let mut p = opts.predict.clone();
                if opts.oracle_length {
                    p.known_length = Some(label.chars().count());
                }
                let record = predict_block(input, image, stages, vocab, &p)?;
                Ok(SampleResult { cer: cer(record.text(), label), label: label.clone(), record })
            })
            .collect()
    };
    let parts: Vec<Result<Vec<SampleResult>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples.chunks(chunk).map(|c| scope.spawn(move || run(c))).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let mut results = Vec::with_capacity(samples.len());
    for p in parts {
        results.extend(p?);
    }
    let mut report = summarize(&results);
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    report.runtime = Runtime {
        total_ms,
        mean_ms_per_sample: if results.is_empty() { 0.0 } else { total_ms / results.len() as f64 },
    };
    Ok((report, results))
}

/// Aggregates per-sample results; timing is left at zero.
pub fn summarize(results: &[SampleResult]) -> EvalReport {
    let n = results.len();
    let total_cer: usize = results.iter().map(|r| r.cer).sum();
    let label_chars: usize = results.iter().map(|r| r.label.chars().count()).sum();
    let wrong = results.iter().filter(|r| r.record.text() != r.label).count();
    let mut stage_counts = StageCounts::default();
    let (mut len_ok, mut len_total) = (0, 0);
    for r in results {
        match r.record.stage_used {
            Stage::Vocabulary => stage_counts.vocabulary += 1,
            Stage::Symbol => {
                stage_counts.symbol += 1;
                len_total += 1;
                len_ok += usize::from(r.record.predicted_len == Some(r.label.chars().count()));
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    EvalReport {
        samples: n,
        missing: 0,
        total_cer,
        mean_cer: ratio(total_cer, n),
        label_chars,
        cer_rate: ratio(total_cer, label_chars),
        wer: ratio(wrong, n),
        length_accuracy: (len_total > 0).then(|| ratio(len_ok, len_total)),
        stage_counts,
        runtime: Runtime::default(),
    }
}

/// Evaluates the entries of a manifest. Unreadable images are logged and
/// counted in `missing`.
pub fn evaluate<S: Stages + ?Sized>(
    manifest: &Path,
    stages: &S,
    vocab: Option<&Vocabulary>,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<SampleResult>)> {
    let mut samples = Vec::new();
    let mut missing = 0;
    for e in read_manifest(manifest)? {
        if opts.split.is_some_and(|s| s != e.split) {
            continue;
        }
        let path = image_path(manifest, &e);
        match GrayImage::load(&path) {
            Ok((img, _)) => samples.push((e.image, e.label, img)),
            Err(err @ (Error::Image { .. } | Error::Io { .. })) => {
                log::warn!("excluded: {err}");
                missing += 1;
            }
            Err(err) => return Err(err),
        }
    }
    let (mut report, results) = evaluate_samples(&samples, stages, vocab, opts)?;
    report.missing = missing;
    Ok((report, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::ProbSequence;
    use crate::lexicon::SymbolLexicon;

    /// Echoes a fixed string for every image.
    struct Echo(SymbolLexicon, String);

    impl Stages for Echo {
        fn vocab_predict(&self, _: &GrayImage) -> Result<(String, f64)> {
            Ok((String::new(), 0.0))
        }
        fn length_predict(&self, _: &GrayImage) -> Result<usize> {
            Ok(self.1.chars().count())
        }
        fn symbol_forward(&self, block: &GrayImage, _: &GrayImage) -> Result<ProbSequence> {
            let n = block.width() / 128;
            let mut classes = vec![0];
            for c in self.1.chars().chain(std::iter::repeat('a')).take(n) {
                classes.push(self.0.index_of(c).unwrap());
                classes.push(0);
            }
            ProbSequence::one_hot(&classes, self.0.len())
        }
        fn lexicon(&self) -> &SymbolLexicon {
            &self.0
        }
        fn confidence_gate(&self) -> f64 {
            0.7
        }
    }

    fn echo(s: &str) -> Echo {
        Echo(SymbolLexicon::default_lexicon(), s.into())
    }

    fn sample(label: &str) -> LabelledImage {
        ("x.png".into(), label.into(), GrayImage::filled(32, 100, 0.0))
    }

    #[test]
    fn perfect_predictions() {
        let (r, _) = evaluate_samples(&[sample("time"), sample("time")], &echo("time"), None, &EvalOptions::default()).unwrap();
        assert_eq!((r.wer, r.mean_cer, r.total_cer), (0.0, 0.0, 0));
        assert_eq!(r.stage_counts, StageCounts { vocabulary: 0, symbol: 2 });
    }

    #[test]
    fn single_sample_cer() {
        let (r, res) = evaluate_samples(&[sample("time")], &echo("tymme"), None, &EvalOptions::default()).unwrap();
        assert_eq!(res[0].cer, 2);
        assert_eq!((r.total_cer, r.wer, r.label_chars), (2, 1.0, 4));
        assert_eq!(r.cer_rate, 0.5);
        assert_eq!(r.length_accuracy, Some(0.0));
    }

    #[test]
    fn oracle_length_and_determinism() {
        let opts = EvalOptions { oracle_length: true, threads: 3, ..EvalOptions::default() };
        let samples: Vec<_> = ["ab", "abc", "a", "abcd"].iter().map(|l| sample(l)).collect();
        let (a, ra) = evaluate_samples(&samples, &echo("abcd"), None, &opts).unwrap();
        let (b, rb) = evaluate_samples(&samples, &echo("abcd"), None, &opts).unwrap();
        assert_eq!(a.without_runtime(), b.without_runtime());
        assert_eq!(ra, rb);
        assert_eq!(a.wer, 0.0);
        assert_eq!(ra.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), ["ab", "abc", "a", "abcd"]);
    }

    #[test]
    fn missing_images_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let spec = crate::datagen::DatasetSpec {
            samples: 3,
            dictionary: vec!["ab".into()],
            glyphs: crate::datagen::GlyphSource::Synthetic { writers: 1, variants: 1, seed: 0 },
            ..Default::default()
        };
        let entries = crate::datagen::gen_dataset(&spec, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(&entries[1].image)).unwrap();
        let (r, res) = evaluate(&dir.path().join("manifest.jsonl"), &echo("ab"), None, &EvalOptions::default()).unwrap();
        assert_eq!((r.samples, r.missing, r.wer), (2, 1, 0.0));
        let csv_path = dir.path().join("per_sample.csv");
        write_results_csv(&res, &csv_path).unwrap();
        let text = std::fs::read_to_string(csv_path).unwrap();
        assert!(text.starts_with("input,label,prediction,raw,stage,predicted_len,confidence,cer,correct\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
