//! Command-line entry point wiring the full pipeline:
//! mine -> prompts -> train -> eval -> analyze, plus the synthetic benchmark
//! generator and the loss-weight sweep.
//!
//! Every command writes a run manifest next to its primary output, routes
//! all randomness through `--seed` (falling back to `PLTR_SEED`, then the
//! config file, then the built-in default), and logs line-delimited JSON
//! events to stderr. Re-running a command with identical inputs, config,
//! and seed reproduces its outputs byte for byte.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Once;

use clap::{Args, Parser, Subcommand};

use crate::corpus::{parse_conll, Corpus, ParseOptions, Split, TagScheme};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, evaluate_ood, length_bucket_report, similarity_report, ModelEmbedder, ModelTagger,
    TaggingMode,
};
use crate::manifest::ManifestBuilder;
use crate::neural::EncoderModel;
use crate::prompting::prompt_example;
use crate::synth::{entity_overlap, generate, SynthSpec};
use crate::training::{train, train_baseline, TrainConfig, TrainState};
use crate::trf::{extract_trfs, TrfSet};

#[derive(Parser)]
#[command(
    name = "pltr",
    version,
    about = "Few-shot cross-domain NER with mined type-related features and per-example prompts"
)]
struct Cli {
    /// Seed for all randomness; overrides PLTR_SEED and config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch-parallel stages (results are identical for
    /// any value).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Tag scheme of column-formatted inputs.
    #[arg(long, default_value = "BIOES")]
    scheme: String,
    /// Repair invalid tag walks instead of rejecting the file.
    #[arg(long)]
    repair: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Mine per-type features from a training corpus.
    Mine {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        rho: f64,
        #[arg(long, default_value_t = 120)]
        l: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Generate prompted examples for a corpus with a trained model.
    Prompts {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        trfs: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        corpus_args: CorpusArgs,
    },
    /// Train the joint model (or the no-prompt baseline).
    Train {
        /// JSON file carrying any subset of the training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Mined features; required unless --baseline.
        #[arg(long)]
        trfs: Option<PathBuf>,
        /// Train the standard no-prompt tagger instead.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Evaluate a checkpoint on a test corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Prompt each test sentence using these features before tagging.
        #[arg(long)]
        trfs: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = "fine_tune")]
        mode: String,
        /// Remap labels outside --known-types to O before scoring.
        #[arg(long)]
        ood: bool,
        /// Comma-separated known entity types (defaults to the checkpoint's
        /// type inventory).
        #[arg(long)]
        known_types: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Sentence-length error buckets or cross-domain similarity.
    Analyze {
        #[arg(long, conflicts_with = "similarity")]
        buckets: bool,
        #[arg(long)]
        similarity: bool,
        #[arg(long)]
        model: PathBuf,
        /// Test corpus for --buckets.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Corpora for --similarity.
        #[arg(long)]
        domain_a: Option<PathBuf>,
        #[arg(long)]
        domain_b: Option<PathBuf>,
        /// Render entity prompts before encoding / tagging.
        #[arg(long)]
        trfs: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = "fine_tune")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Generate the synthetic cross-domain benchmark.
    Synth {
        /// JSON file carrying any subset of the benchmark specification.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train across a grid of loss weights and report the dev-best alpha.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        alpha_grid: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        trfs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
}

/// Flag-level overrides for the training configuration; flags beat the
/// config file, which beats built-in defaults.
#[derive(Args, Clone, Default)]
struct TrainOverrides {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    warmup_ratio: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    word_dropout: Option<f64>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.l {
            cfg.l = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.warmup_ratio {
            cfg.warmup_ratio = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.word_dropout {
            cfg.word_dropout = v;
        }
        if let Some(mode) = &self.mode {
            cfg.mode = parse_mode(mode)?;
        }
        if let Some(v) = self.dim {
            cfg.model.dim = v;
        }
        if let Some(v) = self.depth {
            cfg.model.depth = v;
        }
        if let Some(v) = self.heads {
            cfg.model.heads = v;
        }
        if let Some(v) = self.max_len {
            cfg.model.max_len = v;
        }
        Ok(())
    }
}

fn parse_mode(s: &str) -> Result<TaggingMode> {
    match s {
        "fine_tune" => Ok(TaggingMode::FineTune),
        "prompt_tune" => Ok(TaggingMode::PromptTune),
        _ => Err(Error::Validation(format!(
            "unknown mode {s:?} (expected fine_tune or prompt_tune)"
        ))),
    }
}

struct JsonLogger;

impl log::Log for JsonLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= log::Level::Info
    }

    fn log(&self, record: &log::Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let event = serde_json::json!({
            "level": record.level().to_string().to_lowercase(),
            "target": record.target(),
            "msg": record.args().to_string(),
        });
        let mut stderr = std::io::stderr().lock();
        let _ = writeln!(stderr, "{event}");
    }

    fn flush(&self) {}
}

static LOGGER: JsonLogger = JsonLogger;
static LOGGER_INIT: Once = Once::new();

fn init_logging() {
    LOGGER_INIT.call_once(|| {
        let _ = log::set_logger(&LOGGER);
        log::set_max_level(log::LevelFilter::Info);
    });
}

/// Parse and run; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version with code 0; usage errors go to
            // stderr with code 2
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

fn resolve_seed(flag: Option<u64>, config_seed: u64) -> u64 {
    if let Some(s) = flag {
        return s;
    }
    if let Some(env) = std::env::var_os("PLTR_SEED") {
        if let Some(parsed) = env.to_str().and_then(|s| s.parse().ok()) {
            return parsed;
        }
        log::warn!("ignoring unparsable PLTR_SEED");
    }
    config_seed
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn load_corpus(path: &Path, args: &CorpusArgs, split: Split) -> Result<Corpus> {
    let text = read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Corpus::from_jsonl(&text, split);
    }
    let scheme: TagScheme = args.scheme.parse()?;
    let opts = ParseOptions {
        repair: args.repair,
        allow_empty: false,
        split,
        domain_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default(),
    };
    parse_conll(&text, scheme, &opts)
}

fn load_trfs(path: &Path) -> Result<TrfSet> {
    TrfSet::from_json(&read_to_string(path)?)
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => Ok(serde_json::from_str(&read_to_string(p)?)?),
        None => Ok(TrainConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Validation("--threads must be >= 1".into()));
    }
    // results are thread-count independent; the pool only affects wall time
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();

    match cli.command {
        Command::Mine { train, rho, l, out, corpus } => {
            let seed = resolve_seed(cli.seed, 0);
            let mut manifest = ManifestBuilder::new(
                "mine",
                seed,
                serde_json::json!({
                    "rho": rho, "l": l,
                    "scheme": corpus.scheme, "repair": corpus.repair,
                }),
            );
            manifest.record_input(&train)?;
            let corpus_data = load_corpus(&train, &corpus, Split::Train)?;
            let trfs = extract_trfs(&corpus_data, rho, l)?;
            write_atomic(&out, &trfs.to_json()?)?;
            manifest.record_output(&out)?;
            manifest.write(&out)?;
            log::info!(
                "mined features for {} types from {} sentences",
                trfs.type_order.len(),
                corpus_data.len()
            );
            Ok(())
        }
        Command::Prompts { corpus, trfs, k, model, out, corpus_args } => {
            let seed = resolve_seed(cli.seed, 0);
            let mut manifest = ManifestBuilder::new(
                "prompts",
                seed,
                serde_json::json!({"k": k, "scheme": corpus_args.scheme}),
            );
            manifest.record_input(&corpus)?;
            manifest.record_input(&trfs)?;
            manifest.record_input(&model)?;
            let corpus_data = load_corpus(&corpus, &corpus_args, Split::Test)?;
            let trf_set = load_trfs(&trfs)?;
            let encoder = EncoderModel::load(&model)?;
            let mut lines = String::new();
            for sentence in corpus_data.sentences() {
                let example = prompt_example(&encoder, sentence, &trf_set, k)?;
                lines.push_str(&serde_json::to_string(&example)?);
                lines.push('\n');
            }
            write_atomic(&out, &lines)?;
            manifest.record_output(&out)?;
            manifest.write(&out)?;
            log::info!("prompted {} sentences", corpus_data.len());
            Ok(())
        }
        Command::Train {
            config,
            train: train_path,
            dev,
            trfs,
            baseline,
            out_dir,
            corpus,
            overrides,
        } => {
            let mut cfg = load_train_config(config.as_deref())?;
            overrides.apply(&mut cfg)?;
            cfg.seed = resolve_seed(cli.seed, cfg.seed);
            if baseline {
                cfg.prompts = false;
                cfg.alpha = 1.0;
            }
            let mut manifest =
                ManifestBuilder::new("train", cfg.seed, serde_json::to_value(&cfg)?);
            manifest.record_input(&train_path)?;
            manifest.record_input(&dev)?;
            let train_corpus = load_corpus(&train_path, &corpus, Split::Train)?;
            let dev_corpus = load_corpus(&dev, &corpus, Split::Dev)?;

            let state = if baseline {
                train_baseline(&train_corpus, &dev_corpus, &cfg)?
            } else {
                let trfs_path = trfs.ok_or_else(|| {
                    Error::Validation("--trfs is required unless --baseline is set".into())
                })?;
                manifest.record_input(&trfs_path)?;
                let trf_set = load_trfs(&trfs_path)?;
                train(&train_corpus, &dev_corpus, &trf_set, &cfg)?
            };
            write_train_outputs(&out_dir, &state, manifest)?;
            println!(
                "best dev micro-F1 {:.4} at epoch {}",
                state.best_dev_f1, state.best_epoch
            );
            Ok(())
        }
        Command::Eval { model, test, trfs, k, mode, ood, known_types, out, corpus } => {
            let seed = resolve_seed(cli.seed, 0);
            let mode = parse_mode(&mode)?;
            let mut manifest = ManifestBuilder::new(
                "eval",
                seed,
                serde_json::json!({
                    "k": k, "ood": ood, "mode": mode, "known_types": known_types,
                }),
            );
            manifest.record_input(&model)?;
            manifest.record_input(&test)?;
            let encoder = EncoderModel::load(&model)?;
            let test_corpus = load_corpus(&test, &corpus, Split::Test)?;
            let trf_set = match &trfs {
                Some(p) => {
                    manifest.record_input(p)?;
                    Some(load_trfs(p)?)
                }
                None => None,
            };
            let tagger = ModelTagger { model: &encoder, trfs: trf_set.as_ref(), k, mode };
            let report = if ood {
                let known: BTreeSet<String> = match known_types {
                    Some(csv) => csv.split(',').map(|s| s.trim().to_string()).collect(),
                    None => encoder.labels.types().iter().cloned().collect(),
                };
                evaluate_ood(&tagger, &test_corpus, &known)?
            } else {
                evaluate(&tagger, &test_corpus)?
            };
            write_atomic(&out, &serde_json::to_string_pretty(&report)?)?;
            manifest.record_output(&out)?;
            manifest.write(&out)?;
            println!("micro-F1 {:.4}", report.micro_f1);
            Ok(())
        }
        Command::Analyze {
            buckets,
            similarity,
            model,
            test,
            domain_a,
            domain_b,
            trfs,
            k,
            mode,
            out,
            corpus,
        } => {
            let seed = resolve_seed(cli.seed, 0);
            let mode = parse_mode(&mode)?;
            let mut manifest = ManifestBuilder::new(
                "analyze",
                seed,
                serde_json::json!({
                    "buckets": buckets, "similarity": similarity, "k": k, "mode": mode,
                }),
            );
            manifest.record_input(&model)?;
            let encoder = EncoderModel::load(&model)?;
            let trf_set = match &trfs {
                Some(p) => {
                    manifest.record_input(p)?;
                    Some(load_trfs(p)?)
                }
                None => None,
            };
            let value = if buckets {
                let test_path = test
                    .ok_or_else(|| Error::Validation("--buckets requires --test".into()))?;
                manifest.record_input(&test_path)?;
                let test_corpus = load_corpus(&test_path, &corpus, Split::Test)?;
                let tagger = ModelTagger { model: &encoder, trfs: trf_set.as_ref(), k, mode };
                let report = length_bucket_report(&tagger, &test_corpus)?;
                serde_json::json!({ "length_buckets": report })
            } else if similarity {
                let (a, b) = match (domain_a, domain_b) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(Error::Validation(
                            "--similarity requires --domain-a and --domain-b".into(),
                        ))
                    }
                };
                manifest.record_input(&a)?;
                manifest.record_input(&b)?;
                let corpus_a = load_corpus(&a, &corpus, Split::Test)?;
                let corpus_b = load_corpus(&b, &corpus, Split::Test)?;
                let embedder = ModelEmbedder { model: &encoder, trfs: trf_set.as_ref(), k };
                let mean = similarity_report(&embedder, &corpus_a, &corpus_b, seed)?;
                serde_json::json!({
                    "mean_cosine": mean,
                    "with_prompts": trf_set.is_some(),
                })
            } else {
                return Err(Error::Validation("analyze needs --buckets or --similarity".into()));
            };
            write_atomic(&out, &serde_json::to_string_pretty(&value)?)?;
            manifest.record_output(&out)?;
            manifest.write(&out)?;
            println!("{value}");
            Ok(())
        }
        Command::Synth { spec, out_dir } => {
            let mut spec_value: SynthSpec = match &spec {
                Some(p) => serde_json::from_str(&read_to_string(p)?)?,
                None => SynthSpec::default(),
            };
            spec_value.seed = resolve_seed(cli.seed, spec_value.seed);
            let mut manifest =
                ManifestBuilder::new("synth", spec_value.seed, serde_json::to_value(&spec_value)?);
            if let Some(p) = &spec {
                manifest.record_input(p)?;
            }
            let bench = generate(&spec_value)?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
            let files = [
                ("source_train.conll", bench.source_train.to_conll()),
                ("source_dev.conll", bench.source_dev.to_conll()),
                ("source_test.conll", bench.source_test.to_conll()),
                ("target_test.conll", bench.target_test.to_conll()),
            ];
            for (name, contents) in &files {
                let path = out_dir.join(name);
                write_atomic(&path, contents)?;
                manifest.record_output(&path)?;
            }
            let manifest_path = out_dir.join("synth_manifest.json");
            write_atomic(&manifest_path, &serde_json::to_string_pretty(&bench.manifest)?)?;
            manifest.record_output(&manifest_path)?;
            manifest.write(&manifest_path)?;
            println!(
                "entity overlap source-train vs target-test: {:.4}",
                entity_overlap(&bench.source_train, &bench.target_test)
            );
            Ok(())
        }
        Command::Sweep {
            alpha_grid,
            config,
            train: train_path,
            dev,
            trfs,
            out,
            corpus,
            overrides,
        } => {
            if alpha_grid.is_empty() {
                return Err(Error::Validation("--alpha-grid must be non-empty".into()));
            }
            let mut base_cfg = load_train_config(config.as_deref())?;
            overrides.apply(&mut base_cfg)?;
            base_cfg.seed = resolve_seed(cli.seed, base_cfg.seed);
            let mut manifest = ManifestBuilder::new(
                "sweep",
                base_cfg.seed,
                serde_json::json!({
                    "alpha_grid": alpha_grid,
                    "config": serde_json::to_value(&base_cfg)?,
                }),
            );
            manifest.record_input(&train_path)?;
            manifest.record_input(&dev)?;
            manifest.record_input(&trfs)?;
            let train_corpus = load_corpus(&train_path, &corpus, Split::Train)?;
            let dev_corpus = load_corpus(&dev, &corpus, Split::Dev)?;
            let trf_set = load_trfs(&trfs)?;

            let mut rows = Vec::new();
            let mut best: Option<(f64, f64)> = None;
            for &alpha in &alpha_grid {
                let mut cfg = base_cfg.clone();
                cfg.alpha = alpha;
                let state = train(&train_corpus, &dev_corpus, &trf_set, &cfg)?;
                log::info!("alpha {alpha}: dev micro-F1 {:.4}", state.best_dev_f1);
                rows.push(serde_json::json!({
                    "alpha": alpha,
                    "dev_micro_f1": state.best_dev_f1,
                    "best_epoch": state.best_epoch,
                }));
                if best.is_none_or(|(_, f)| state.best_dev_f1 > f) {
                    best = Some((alpha, state.best_dev_f1));
                }
            }
            let (best_alpha, best_f1) = best.expect("non-empty grid");
            let value = serde_json::json!({
                "results": rows,
                "best_alpha": best_alpha,
                "best_dev_micro_f1": best_f1,
            });
            write_atomic(&out, &serde_json::to_string_pretty(&value)?)?;
            manifest.record_output(&out)?;
            manifest.write(&out)?;
            println!("best alpha {best_alpha} (dev micro-F1 {best_f1:.4})");
            Ok(())
        }
    }
}

fn write_train_outputs(
    out_dir: &Path,
    state: &TrainState,
    mut manifest: ManifestBuilder,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let model_path = out_dir.join("model.json");
    state.model.save(&model_path)?;
    let trace = serde_json::json!({
        "best_dev_micro_f1": state.best_dev_f1,
        "best_epoch": state.best_epoch,
        "epochs_run": state.epochs_run,
        "steps": state.step_trace,
        "epochs": state.epoch_trace,
    });
    let trace_path = out_dir.join("trace.json");
    write_atomic(&trace_path, &serde_json::to_string_pretty(&trace)?)?;
    manifest.record_output(&model_path)?;
    manifest.record_output(&trace_path)?;
    manifest.write(&model_path)?;
    Ok(())
}
