//! Dataset specs, generation and manifests.
//!
//! A generated directory holds `images/NNNNNN.png`, `manifest.jsonl`,
//! `dataset_spec.json` (the spec with every default filled in) and
//! `lexicon.txt`. Each manifest line is a JSON object:
//!
//! | field    | type   | meaning                                   |
//! |----------|--------|-------------------------------------------|
//! | index    | int    | sample index                              |
//! | image    | string | path relative to the manifest             |
//! | label    | string | exact composed string                     |
//! | writer   | int    | glyph bank writer id                      |
//! | seed     | int    | per-sample generation seed                |
//! | source   | string | `dictionary`, `alphanumeric` or `numeric` |
//! | split    | string | `train` or `holdout`                      |
//! | augment  | object | drawn augmentation parameters             |

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::compose::{compose_block, AugmentConfig, BlockDraw};
use super::glyphs::{load_glyph_bank, synth_glyph_bank, GlyphBank};
use super::mix;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::lexicon::SymbolLexicon;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelMix {
    pub dictionary: f64,
    pub alphanumeric: f64,
    pub numeric: f64,
}

impl Default for LabelMix {
    fn default() -> Self {
        LabelMix {
            dictionary: 1.0,
            alphanumeric: 0.0,
            numeric: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Dictionary,
    Alphanumeric,
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Holdout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum GlyphSource {
    Synthetic { writers: u32, variants: usize, seed: u64 },
    /// Directory bank; gaps are filled from the stroke font when `supplement`
    /// is set.
    Directory { path: PathBuf, supplement: bool, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub samples: usize,
    pub seed: u64,
    pub mix: LabelMix,
    /// Inclusive symbol-count range for generated labels.
    pub length_range: (usize, usize),
    /// Longest block the length network can represent.
    pub max_len: usize,
    /// Writer ids to draw from; empty means every writer in the bank.
    pub writers: Vec<u32>,
    pub dictionary: Vec<String>,
    /// Visible lexicon symbols; `None` selects the default lexicon.
    pub symbols: Option<String>,
    pub glyphs: GlyphSource,
    pub augment: AugmentConfig,
    pub holdout_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            samples: 100,
            seed: 0,
            mix: LabelMix::default(),
            length_range: (1, 6),
            max_len: 16,
            writers: Vec::new(),
            dictionary: Vec::new(),
            symbols: None,
            glyphs: GlyphSource::Synthetic { writers: 3, variants: 3, seed: 0 },
            augment: AugmentConfig::default(),
            holdout_fraction: 0.0,
        }
    }
}

impl DatasetSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn lexicon(&self) -> Result<SymbolLexicon> {
        match &self.symbols {
            Some(s) => SymbolLexicon::new(s.chars()),
            None => Ok(SymbolLexicon::default_lexicon()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mix;
        let parts = [m.dictionary, m.alphanumeric, m.numeric];
        if parts.iter().any(|p| !(*p >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("label mix proportions must be non-negative and sum to 1".into()));
        }
        let (lo, hi) = self.length_range;
        if lo < 1 || lo > hi || hi > self.max_len {
            return Err(Error::Config(format!(
                "length range ({lo}, {hi}) must satisfy 1 <= low <= high <= max_len {}",
                self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1]".into()));
        }
        self.augment.validate()
    }

    pub fn glyph_bank(&self, lexicon: &SymbolLexicon) -> Result<GlyphBank> {
        match &self.glyphs {
            GlyphSource::Synthetic { writers, variants, seed } => synth_glyph_bank(lexicon, *writers, *variants, *seed),
            GlyphSource::Directory { path, supplement, seed } => {
                let mut bank = load_glyph_bank(path, lexicon)?;
                if *supplement {
                    bank.supplement(lexicon, *seed, 1)?;
                }
                Ok(bank)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub image: String,
    pub label: String,
    pub writer: u32,
    pub seed: u64,
    pub source: LabelSource,
    pub split: Split,
    pub augment: BlockDraw,
}

/// Per-class counts `round(p * total)` by largest remainder; ties go to the
/// earlier class.
pub fn allocate(proportions: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

pub struct Generator {
    spec: DatasetSpec,
    lexicon: SymbolLexicon,
    bank: GlyphBank,
    writers: Vec<u32>,
    dictionary: Vec<String>,
    alphanumeric: Vec<char>,
    numeric: Vec<char>,
    sources: Vec<LabelSource>,
}

impl Generator {
    pub fn new(spec: DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let lexicon = spec.lexicon()?;
        let bank = spec.glyph_bank(&lexicon)?;
        Self::with_bank(spec, lexicon, bank)
    }

    pub fn with_bank(spec: DatasetSpec, lexicon: SymbolLexicon, bank: GlyphBank) -> Result<Self> {
        spec.validate()?;
        let writers = if spec.writers.is_empty() { bank.writers() } else { spec.writers.clone() };
        if writers.is_empty() {
            return Err(Error::EmptyGlyphBank);
        }
        let (lo, hi) = spec.length_range;
        let dictionary: Vec<String> = spec
            .dictionary
            .iter()
            .filter(|w| (lo..=hi).contains(&w.chars().count()))
            .cloned()
            .collect();
        let alphanumeric: Vec<char> = lexicon.visible().iter().copied().filter(char::is_ascii_alphanumeric).collect();
        let numeric: Vec<char> = lexicon.visible().iter().copied().filter(char::is_ascii_digit).collect();
        let counts = allocate(&[spec.mix.dictionary, spec.mix.alphanumeric, spec.mix.numeric], spec.samples);
        for (n, pool, name) in [
            (counts[0], dictionary.len(), "dictionary words in the length range"),
            (counts[1], alphanumeric.len(), "alphanumeric symbols"),
            (counts[2], numeric.len(), "digits"),
        ] {
            if n > 0 && pool == 0 {
                return Err(Error::Config(format!("mix requests {n} samples but there are no {name}")));
            }
        }
        let needed = dictionary.iter().flat_map(|w| w.chars()).chain(if counts[1] > 0 { alphanumeric.clone() } else { vec![] }).chain(
            if counts[2] > 0 { numeric.clone() } else { vec![] },
        );
        for c in needed {
            if !lexicon.contains(c) {
                return Err(Error::UnknownSymbol { symbol: c, position: 0 });
            }
            for &w in &writers {
                if bank.glyphs(w, c).is_none() {
                    return Err(Error::MissingGlyph { symbol: c, writer: w });
                }
            }
        }
        let mut sources = Vec::with_capacity(spec.samples);
        for (n, s) in counts.iter().zip([LabelSource::Dictionary, LabelSource::Alphanumeric, LabelSource::Numeric]) {
            sources.extend(std::iter::repeat_n(s, *n));
        }
        sources.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[spec.seed, 0x50_u64])));
        Ok(Generator {
            spec,
            lexicon,
            bank,
            writers,
            dictionary,
            alphanumeric,
            numeric,
            sources,
        })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn lexicon(&self) -> &SymbolLexicon {
        &self.lexicon
    }

    pub fn bank(&self) -> &GlyphBank {
        &self.bank
    }

    pub fn len(&self) -> usize {
        self.spec.samples
    }

    pub fn is_empty(&self) -> bool {
        self.spec.samples == 0
    }

    pub fn sample_seed(&self, index: usize) -> u64 {
        mix(&[self.spec.seed, index as u64])
    }

    pub fn split(&self, index: usize) -> Split {
        if unit(mix(&[self.spec.seed, index as u64, 0x5911])) < self.spec.holdout_fraction {
            Split::Holdout
        } else {
            Split::Train
        }
    }

    /// Composes sample `index`; a pure function of the spec and the index.
    pub fn sample(&self, index: usize) -> Result<(ManifestEntry, GrayImage)> {
        let seed = self.sample_seed(index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = self.sources[index];
        let writer = *self.writers.choose(&mut rng).expect("writers non-empty");
        let (lo, hi) = self.spec.length_range;
        let label: String = match source {
            LabelSource::Dictionary => self.dictionary.choose(&mut rng).expect("dictionary non-empty").clone(),
            LabelSource::Alphanumeric | LabelSource::Numeric => {
                let pool = if source == LabelSource::Numeric { &self.numeric } else { &self.alphanumeric };
                let n = rng.random_range(lo..=hi);
                (0..n).map(|_| *pool.choose(&mut rng).unwrap()).collect()
            }
        };
        let block = compose_block(&label, writer, &self.bank, &self.spec.augment, seed)?;
        let entry = ManifestEntry {
            index,
            image: format!("images/{index:06}.png"),
            label,
            writer,
            seed,
            source,
            split: self.split(index),
            augment: block.draw,
        };
        Ok((entry, block.image))
    }
}

/// Writes the dataset described by `spec` into `out` and returns the manifest.
pub fn gen_dataset(spec: &DatasetSpec, out: &Path) -> Result<Vec<ManifestEntry>> {
    let generator = Generator::new(spec.clone())?;
    write_dataset(&generator, out)
}

pub fn write_dataset(generator: &Generator, out: &Path) -> Result<Vec<ManifestEntry>> {
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let spec_path = out.join("dataset_spec.json");
    let spec_json = serde_json::to_string_pretty(generator.spec()).expect("spec serializes");
    std::fs::write(&spec_path, spec_json + "\n").map_err(|e| Error::io(&spec_path, e))?;
    generator.lexicon().save(&out.join("lexicon.txt"))?;

    let samples = compose_all(generator)?;
    let manifest_path = out.join("manifest.jsonl");
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
    let mut entries = Vec::with_capacity(samples.len());
    for (entry, image) in samples {
        image.save_png(&out.join(&entry.image))?;
        let line = serde_json::to_string(&entry).expect("entry serializes");
        writeln!(manifest, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
        entries.push(entry);
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(entries)
}

/// Composes every sample, spread over the available cores; results come back
/// in index order.
fn compose_all(generator: &Generator) -> Result<Vec<(ManifestEntry, GrayImage)>> {
    let n = generator.len();
    let threads = std::thread::available_parallelism().map_or(1, |t| t.get()).min(n.max(1));
    let chunk = n.div_ceil(threads.max(1)).max(1);
    let parts: Vec<Result<Vec<_>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| scope.spawn(move || (start..(start + chunk).min(n)).map(|i| generator.sample(i)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("composition thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Reads a manifest; image paths stay relative to its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Absolute path of an entry's image.
pub fn image_path(manifest: &Path, entry: &ManifestEntry) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(&entry.image)
}
