use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use wordblock::datagen::{gen_dataset, DatasetSpec, Split};
use wordblock::image::GrayImage;
use wordblock::lexicon::SymbolLexicon;
use wordblock::matching::{frequency_match, Vocabulary};
use wordblock::models::ModelBundle;
use wordblock::nn::TrainConfig;
use wordblock::pipeline::{
    evaluate, layer_checks, load_samples, network_checks, predict_block, train, write_results_csv, EvalOptions,
    PredictOptions, Target, TrainOptions,
};
use wordblock::{Error, Result};

#[derive(Parser)]
#[command(name = "wordblock", version, about = "Word-block handwriting recognizer")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON spec.
    Datagen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network of a bundle; creates the bundle if `out` is empty.
    Train {
        /// Training job JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
        /// Bundle directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Recognize one image; prints a JSON record.
    Predict {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// `word<TAB>count` file for matching stage-3 output.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        no_vocab_stage: bool,
    },
    /// Evaluate a bundle on a manifest; prints the JSON report.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-sample CSV path.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<Split>,
        #[arg(long)]
        no_vocab_stage: bool,
        /// Give stage 3 the true symbol count.
        #[arg(long)]
        oracle_length: bool,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Match predicted strings (one per line) against a vocabulary; CSV out.
    Match {
        #[arg(long)]
        vocab: PathBuf,
        /// Input file; stdin when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Finite-difference check of every layer kind and the full networks.
    Gradcheck {
        #[arg(long, default_value_t = 0.25)]
        width_mult: f64,
        /// Coordinates sampled per tensor of the full networks.
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Training job file. Relative paths resolve against the file's directory.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainJob {
    config: TrainConfig,
    /// One manifest per batch-composition entry.
    sources: Vec<PathBuf>,
    #[serde(default = "train_split")]
    split: Option<Split>,
    /// Word classes; defaults to the first source's dictionary.
    #[serde(default)]
    words: Option<Vec<String>>,
    #[serde(default = "default_max_len")]
    max_len: usize,
    /// Visible symbols; defaults to the first source's lexicon.
    #[serde(default)]
    symbols: Option<String>,
    #[serde(default)]
    options: TrainOptions,
    /// Save the bundle every this many iterations; 0 disables.
    #[serde(default)]
    checkpoint_every: u64,
}

fn train_split() -> Option<Split> {
    Some(Split::Train)
}

fn default_max_len() -> usize {
    16
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn load_vocab(path: Option<&PathBuf>) -> Result<Option<Vocabulary>> {
    path.map(|p| Vocabulary::load(p)).transpose()
}

fn run_train(
    job_path: &Path,
    target: Target,
    out: &Path,
    seed: Option<u64>,
    iterations: Option<u64>,
    learning_rate: Option<f64>,
) -> Result<()> {
    let mut job: TrainJob = read_json(job_path)?;
    let base = job_path.parent().unwrap_or(Path::new("."));
    let sources: Vec<PathBuf> = job.sources.iter().map(|s| base.join(s)).collect();
    let first = sources.first().ok_or_else(|| Error::Config("training job lists no sources".into()))?;
    let data_dir = first.parent().unwrap_or(Path::new("."));
    if let Some(s) = seed {
        job.config.rng_seed = s;
    }
    if let Some(n) = iterations {
        job.config.total_iterations = n;
    }
    if let Some(lr) = learning_rate {
        job.config.learning_rate = lr;
    }
    let mut bundle = if out.join("manifest.json").exists() {
        log::info!("continuing {}", out.display());
        ModelBundle::load(out)?
    } else {
        let words = match job.words.take() {
            Some(w) => w,
            None => DatasetSpec::load(&data_dir.join("dataset_spec.json"))?.dictionary,
        };
        let lexicon = match &job.symbols {
            Some(s) => SymbolLexicon::new(s.chars())?,
            None => SymbolLexicon::load(&data_dir.join("lexicon.txt"))?,
        };
        ModelBundle::init(words, job.max_len, lexicon, job.config.width_mult, job.config.rng_seed)?
    };
    let data: Vec<_> = sources.iter().map(|m| load_samples(m, job.split)).collect::<Result<_>>()?;
    let every = job.checkpoint_every;
    let log = train(&mut bundle, target, &data, &job.config, &job.options, |r, b| {
        if r.iteration % 100 == 0 {
            log::info!("iteration {} loss {:.4} lr {}", r.iteration, r.loss, r.lr);
        }
        if every > 0 && (r.iteration + 1) % every == 0 {
            b.save(out)?;
        }
        Ok(())
    })?;
    if log.skipped > 0 {
        log::warn!("{} samples skipped", log.skipped);
    }
    bundle.save(out)?;
    let name = format!("loss_{}.csv", serde_json::to_value(target).expect("target serializes").as_str().unwrap());
    log.write_csv(&out.join(name))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Datagen { spec, out } => {
            let mut spec = DatasetSpec::load(&spec)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let entries = gen_dataset(&spec, &out)?;
            log::info!("{} samples written to {}", entries.len(), out.display());
        }
        Command::Train { config, target, out, iterations, learning_rate } => {
            run_train(&config, target, &out, cli.seed, iterations, learning_rate)?
        }
        Command::Predict { image, bundle, vocab, no_vocab_stage } => {
            let bundle = ModelBundle::load(&bundle)?;
            let vocab = load_vocab(vocab.as_ref())?;
            let (img, _) = GrayImage::load(&image)?;
            let opts = PredictOptions { vocab_stage: !no_vocab_stage, known_length: None };
            let record = predict_block(&image.display().to_string(), &img, &bundle, vocab.as_ref(), &opts)?;
            println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
        }
        Command::Eval { manifest, bundle, vocab, out, csv, split, no_vocab_stage, oracle_length, threads } => {
            let bundle = ModelBundle::load(&bundle)?;
            let vocab = load_vocab(vocab.as_ref())?;
            let opts = EvalOptions {
                predict: PredictOptions { vocab_stage: !no_vocab_stage, known_length: None },
                split,
                oracle_length,
                threads,
            };
            let (report, results) = evaluate(&manifest, &bundle, vocab.as_ref(), &opts)?;
            match out {
                Some(p) => report.save(&p)?,
                None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
            }
            if let Some(p) = csv {
                write_results_csv(&results, &p)?;
            }
        }
        Command::Match { vocab, input } => {
            let vocab = Vocabulary::load(&vocab)?;
            let reader: Box<dyn BufRead> = match &input {
                Some(p) => Box::new(std::io::BufReader::new(std::fs::File::open(p).map_err(|e| Error::io(p, e))?)),
                None => Box::new(std::io::stdin().lock()),
            };
            let mut w = csv::Writer::from_writer(std::io::stdout());
            let stdout = Path::new("<stdout>");
            w.write_record(["input", "matched_word", "score"]).map_err(|e| Error::io(stdout, e.into()))?;
            for line in reader.lines() {
                let line = line.map_err(|e| Error::io(Path::new("<input>"), e))?;
                let (word, score) = frequency_match(&line, &vocab)?;
                w.write_record([line.as_str(), word, &score.to_string()]).map_err(|e| Error::io(stdout, e.into()))?;
            }
            w.flush().map_err(|e| Error::io(stdout, e))?;
        }
        Command::Gradcheck { width_mult, samples, tolerance } => {
            let seed = cli.seed.unwrap_or(0);
            let mut reports = layer_checks(tolerance, seed)?;
            reports.extend(network_checks(width_mult, samples, tolerance, seed)?);
            let mut out = std::io::stdout().lock();
            let mut ok = true;
            for r in &reports {
                let status = if r.report.passed() { "ok" } else { "FAIL" };
                ok &= r.report.passed();
                let checked: usize = r.report.entries.iter().map(|e| e.checked).sum();
                let kinks: usize = r.report.entries.iter().map(|e| e.kinks).sum();
                let _ = writeln!(
                    out,
                    "{:<16} {:>4}  max rel error {:.2e}  checked {checked}  kinks skipped {kinks}",
                    r.name,
                    status,
                    r.report.max_rel_error()
                );
                for f in r.report.failures() {
                    let _ = writeln!(out, "    {} {:.2e}", f.name, f.max_rel_error);
                }
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
