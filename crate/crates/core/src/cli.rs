//! Command-line front end. Every subcommand resolves its settings from
//! flags, then the optional config file, then built-in defaults, and writes
//! a run manifest next to its outputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::KvConfig;
use crate::corpus::{load_corpus, write_atomic, Corpus, LanguageTag, Split};
use crate::error::{Error, Result};
use crate::generator::{
    fill_placeholders, generate, placeholder_ratio, record_tokens, CommandMlm, GenerationConfig, GenerationRecord,
    IdentityFiller, MaskFiller, MlmFiller, UnigramFiller,
};
use crate::lexicon::{coverage, load_lexicon, BilingualLexicon, StopWords};
use crate::metrics::{perplexity, render_table, scoring_pairs, zero_sup_percentage, MetricsReport, WordVectorTable};
use crate::model::{init_from_mlm, ModelConfig, Seq2Seq};
use crate::switcher::{build_views, derive_seed, pseudo_target_pass, view_records, SwitchConfig};
use crate::synthetic::{self, SyntheticConfig};
use crate::trainer::{build_vocab, fit, TrainConfig};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "XLZERO_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "xlzero", version, about = "Zero-shot cross-lingual dialogue generation")]
pub struct Cli {
    /// `key = value` config file; flags override its entries.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-language corpus and lexicon.
    Synth(SynthArgs),
    /// Expand a corpus into source, pseudo-target and code-switched views.
    BuildCorpus(BuildCorpusArgs),
    /// Report lexicon coverage of a corpus.
    Coverage(CoverageArgs),
    /// Train a generator.
    Train(TrainArgs),
    /// Generate responses with beam search and fill placeholders.
    Generate(GenerateArgs),
    /// Score generated responses.
    Evaluate(EvaluateArgs),
    /// Compare zero-shot and supervised metric reports.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct LexiconArgs {
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Source language of the lexicon.
    #[arg(long)]
    pub src: Option<LanguageTag>,
    /// Target language of the lexicon.
    #[arg(long)]
    pub tgt: Option<LanguageTag>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub valid_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub lexicon_coverage: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BuildCorpusArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub lex: LexiconArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Literal pseudocode behaviour for code-switching.
    #[arg(long)]
    pub strict_algorithm1: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub lex: LexiconArgs,
    /// One stop word per line; defaults to the built-in list for the source
    /// language.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub no_stopwords: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training split.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[command(flatten)]
    pub lex: LexiconArgs,
    /// Masked-LM encoder bundle to initialize from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_positions: Option<usize>,
    /// Gumbel-Softmax temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub hard_gumbel: bool,
    /// Replaces the default contrastive multiplier.
    #[arg(long)]
    pub contrastive_scale: Option<f64>,
    #[arg(long)]
    pub normalize_negatives: bool,
    #[arg(long)]
    pub resample_per_epoch: bool,
    #[arg(long)]
    pub strict_algorithm1: bool,
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dialogues to answer.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Tag used for the histories and to start decoding.
    #[arg(long)]
    pub tag: Option<LanguageTag>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub length_alpha: Option<f64>,
    /// Shortest response, in tokens, before the end marker is allowed.
    #[arg(long)]
    pub min_len: Option<usize>,
    /// identity, unigram or mlm.
    #[arg(long)]
    pub filler: Option<String>,
    /// Training split whose pseudo-target responses feed the unigram filler.
    #[arg(long)]
    pub filler_corpus: Option<PathBuf>,
    #[command(flatten)]
    pub lex: LexiconArgs,
    /// Masked-LM command for the mlm filler (JSON lines on stdin/stdout).
    #[arg(long)]
    pub mlm_command: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Generation output file.
    #[arg(long)]
    pub generations: PathBuf,
    /// Word vectors for the embedding metrics.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// With --corpus, also reports perplexity.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub tag: Option<LanguageTag>,
    /// Score raw responses instead of filled ones.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub smoothing: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub zero: PathBuf,
    #[arg(long)]
    pub sup: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolved settings and input hashes of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
}

/// Hex SHA-256 of a file, or of every file under a directory in path order.
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update(std::fs::read(&f).map_err(|e| Error::io(&f, e))?);
        }
    } else {
        h.update(std::fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Flag, then config entry, then default. Every resolved value is recorded.
struct Resolver {
    file: KvConfig,
    resolved: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
}

impl Resolver {
    fn new(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::default(),
        };
        Ok(Resolver {
            file,
            resolved: BTreeMap::new(),
            inputs: BTreeMap::new(),
        })
    }

    fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file.get(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file.get(key)?,
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    /// A switch that is on if the flag is given or the config says `true`.
    fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.file.get::<bool>(key)?.unwrap_or(false);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn path(&mut self, key: &str, flag: Option<&Path>) -> Option<PathBuf> {
        let p = flag.map(Path::to_path_buf).or_else(|| self.file.get_str(key).map(PathBuf::from));
        if let Some(p) = &p {
            self.resolved.insert(key.to_string(), p.display().to_string());
        }
        p
    }

    fn input(&mut self, key: &str, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        self.inputs.insert(format!("{key}:{}", path.display()), hash_path(path)?);
        Ok(())
    }

    fn manifest(self, command: &str, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: self.resolved,
            inputs: self.inputs,
        }
    }
}

/// `out.manifest.json` for a file output, `out/run_manifest.json` for a
/// directory.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("run_manifest.json")
    } else {
        let name = out.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
        out.with_file_name(format!("{name}.manifest.json"))
    }
}

fn write_manifest(out: &Path, m: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m)?;
    write_atomic(&manifest_path(out), text.as_bytes())
}

fn lexicon_from(r: &mut Resolver, args: &LexiconArgs) -> Result<BilingualLexicon> {
    let src = r.value("src", args.src, LanguageTag::En)?;
    let tgt = r.value("tgt", args.tgt, LanguageTag::De)?;
    let path = r
        .path("lexicon", args.lexicon.as_deref())
        .ok_or_else(|| Error::Config("a lexicon is required (--lexicon)".into()))?;
    r.input("lexicon", &path)?;
    load_lexicon(&path, src, tgt)
}

fn switch_config(r: &mut Resolver, seed: u64, k: Option<usize>, tau: Option<f64>, strict: bool) -> Result<SwitchConfig> {
    let d = SwitchConfig::default();
    let cfg = SwitchConfig {
        k: r.value("k", k, d.k)?,
        tau: r.value("tau", tau, d.tau)?,
        seed,
        strict_algorithm1: r.switch("strict_algorithm1", strict)?,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// Pseudo-target renderings of the training responses, the reference text
/// for the unigram filler.
pub fn pseudo_target_responses(corpus: &Corpus, lex: &BilingualLexicon, placeholder: &str, seed: u64) -> Vec<Vec<String>> {
    corpus
        .examples
        .iter()
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &e.id, 0));
            pseudo_target_pass(&e.response, lex, placeholder, &mut rng).0
        })
        .collect()
}

fn run_synth(r: &mut Resolver, seed: u64, a: &SynthArgs) -> Result<()> {
    let d = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        seed,
        train_size: r.value("train_size", a.train_size, d.train_size)?,
        valid_size: r.value("valid_size", a.valid_size, d.valid_size)?,
        test_size: r.value("test_size", a.test_size, d.test_size)?,
        coverage: r.value("lexicon_coverage", a.lexicon_coverage, d.coverage)?,
        ..d
    };
    let data = synthetic::generate(&cfg)?;
    let files = data.save(&a.out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn run_build_corpus(r: &mut Resolver, seed: u64, a: &BuildCorpusArgs) -> Result<()> {
    r.input("corpus", &a.corpus)?;
    let corpus = load_corpus(&a.corpus, Split::Train)?;
    let lex = lexicon_from(r, &a.lex)?;
    let sw = switch_config(r, seed, a.k, a.tau, a.strict_algorithm1)?;
    let mut out = String::new();
    for ex in &corpus.examples {
        let set = build_views(ex, &lex, &sw)?;
        for rec in view_records(&ex.id, &set) {
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
    }
    write_atomic(&a.out, out.as_bytes())?;
    // the augmented file must load back as a dialogue corpus
    let back = load_corpus(&a.out, Split::Train)?;
    if back.len() != corpus.len() * (2 * sw.k + 1) {
        return Err(Error::Shape(format!("wrote {} views, expected {}", back.len(), corpus.len() * (2 * sw.k + 1))));
    }
    println!("{} views from {} dialogues -> {}", back.len(), corpus.len(), a.out.display());
    Ok(())
}

fn run_coverage(r: &mut Resolver, a: &CoverageArgs) -> Result<()> {
    r.input("corpus", &a.corpus)?;
    let corpus = load_corpus(&a.corpus, Split::Train)?;
    let lex = lexicon_from(r, &a.lex)?;
    let stop = if r.switch("no_stopwords", a.no_stopwords)? {
        StopWords::none()
    } else if let Some(p) = r.path("stopwords", a.stopwords.as_deref()) {
        r.input("stopwords", &p)?;
        StopWords::load(&p)?
    } else {
        StopWords::for_language(lex.source_language)
    };
    let rep = coverage(&lex, &corpus, &stop)?;
    let text = rep.to_kv();
    print!("{text}");
    if let Some(out) = &a.out {
        write_atomic(out, text.as_bytes())?;
    }
    Ok(())
}

fn run_train(r: &mut Resolver, seed: u64, a: &TrainArgs) -> Result<()> {
    r.input("corpus", &a.corpus)?;
    r.input("valid", &a.valid)?;
    let train = load_corpus(&a.corpus, Split::Train)?;
    let valid = load_corpus(&a.valid, Split::Valid)?;
    let lex = lexicon_from(r, &a.lex)?;
    let md = ModelConfig::default();
    let td = TrainConfig::default();
    let model_cfg = ModelConfig {
        layers: r.value("layers", a.layers, md.layers)?,
        heads: r.value("heads", a.heads, md.heads)?,
        hidden_dim: r.value("hidden_dim", a.hidden_dim, md.hidden_dim)?,
        ffn_dim: r.value("ffn_dim", a.ffn_dim, md.ffn_dim)?,
        max_positions: r.value("max_positions", a.max_positions, md.max_positions)?,
        temperature: r.value("temperature", a.temperature, md.temperature)?,
        hard_gumbel: r.switch("hard_gumbel", a.hard_gumbel)?,
        seed,
        ..md
    };
    let cfg = TrainConfig {
        batch_size: r.value("batch_size", a.batch_size, td.batch_size)?,
        learning_rate: r.value("lr", a.lr, td.learning_rate)?,
        epochs: r.value("epochs", a.epochs, td.epochs)?,
        seed,
        switch: switch_config(r, seed, a.k, a.tau, a.strict_algorithm1)?,
        model: model_cfg.clone(),
        resample_per_epoch: r.switch("resample_per_epoch", a.resample_per_epoch)?,
        contrastive_scale: r.optional("contrastive_scale", a.contrastive_scale)?,
        normalize_negatives: r.switch("normalize_negatives", a.normalize_negatives)?,
        clip_norm: r.optional("clip_norm", a.clip_norm)?,
        max_steps: r.optional("max_steps", a.max_steps)?,
        ..td
    };
    let init = r.path("checkpoint", a.checkpoint.as_deref());
    if let Some(p) = &init {
        r.input("checkpoint", p)?;
    }
    let vocab = build_vocab(&[&train, &valid], &lex);
    let (model, warnings) = init_from_mlm(init.as_deref(), model_cfg, vocab)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let report = fit(&cfg, model, &train, &valid, &lex, &a.out, a.resume)?;
    println!(
        "{} steps; best validation perplexity {:.4}; best checkpoint {}",
        report.steps,
        report.best_ppl,
        report.best_checkpoint.display()
    );
    Ok(())
}

fn run_generate(r: &mut Resolver, seed: u64, a: &GenerateArgs) -> Result<()> {
    r.input("checkpoint", &a.checkpoint)?;
    r.input("corpus", &a.corpus)?;
    let model = Seq2Seq::load(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus, Split::Test)?;
    let d = GenerationConfig::default();
    let gen = GenerationConfig {
        beam_size: r.value("beam", a.beam, d.beam_size)?,
        max_len: r.value("max_len", a.max_len, d.max_len)?,
        length_alpha: r.value("length_alpha", a.length_alpha, d.length_alpha)?,
        min_len: r.value("min_len", a.min_len, d.min_len)?,
    };
    let tag = r.value("tag", a.tag, LanguageTag::Pt)?;
    let placeholder = SwitchConfig::default().placeholder;
    let kind = r.value("filler", a.filler.clone(), "unigram".to_string())?;
    let filler: Box<dyn MaskFiller> = match kind.as_str() {
        "identity" => Box::new(IdentityFiller),
        "unigram" => {
            let path = r
                .path("filler_corpus", a.filler_corpus.as_deref())
                .ok_or_else(|| Error::Config("the unigram filler needs --filler-corpus".into()))?;
            r.input("filler_corpus", &path)?;
            let train = load_corpus(&path, Split::Train)?;
            let lex = lexicon_from(r, &a.lex)?;
            Box::new(UnigramFiller::from_sequences(&pseudo_target_responses(&train, &lex, &placeholder, seed)))
        }
        "mlm" => {
            let cmd = r
                .optional("mlm_command", a.mlm_command.clone())?
                .ok_or_else(|| Error::Config("the mlm filler needs --mlm-command".into()))?;
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| Error::Config("empty --mlm-command".into()))?;
            Box::new(MlmFiller {
                mlm: CommandMlm {
                    program,
                    args: parts.collect(),
                },
            })
        }
        other => return Err(Error::Config(format!("unknown filler `{other}` (identity, unigram, mlm)"))),
    };
    let records = generate(&model, &corpus.examples, tag, &gen, filler.as_ref(), &placeholder)?;
    let mut out = String::new();
    for rec in &records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    write_atomic(&a.out, out.as_bytes())?;
    let before = placeholder_ratio(&record_tokens(&records, false), &placeholder).unwrap_or(0.0);
    let after = placeholder_ratio(&record_tokens(&records, true), &placeholder).unwrap_or(0.0);
    println!(
        "{} responses -> {}; placeholder ratio {:.4} before filling, {:.4} after",
        records.len(),
        a.out.display(),
        before,
        after
    );
    Ok(())
}

fn run_evaluate(r: &mut Resolver, a: &EvaluateArgs) -> Result<()> {
    r.input("generations", &a.generations)?;
    let records = read_generations(&a.generations)?;
    if records.is_empty() {
        return Err(Error::EmptyCorpus(a.generations.clone()));
    }
    let raw = r.switch("raw", a.raw)?;
    let smoothing = r.switch("smoothing", a.smoothing)?;
    let cands = record_tokens(&records, !raw);
    let refs: Vec<Vec<String>> = records
        .iter()
        .map(|g| g.reference.split_whitespace().map(str::to_string).collect())
        .collect();
    let vectors = match r.path("vectors", a.vectors.as_deref()) {
        Some(p) => {
            r.input("vectors", &p)?;
            Some(WordVectorTable::load(&p)?)
        }
        None => None,
    };
    let mut report = MetricsReport::compute(&cands, &refs, vectors.as_ref(), smoothing)?;
    report.placeholder_ratio = placeholder_ratio(&cands, &SwitchConfig::default().placeholder).ok();
    let ckpt = r.path("checkpoint", a.checkpoint.as_deref());
    let corpus = r.path("corpus", a.corpus.as_deref());
    if let (Some(ckpt), Some(corpus)) = (ckpt, corpus) {
        r.input("checkpoint", &ckpt)?;
        r.input("corpus", &corpus)?;
        let model = Seq2Seq::load(&ckpt)?;
        let split = load_corpus(&corpus, Split::Test)?;
        let tag = r.value("tag", a.tag, LanguageTag::Pt)?;
        let pairs = scoring_pairs(&split.examples, model.vocab(), Some(tag));
        report.ppl = Some(perplexity(&model, &pairs, 32)?);
    }
    let text = report.to_kv();
    write_atomic(&a.out, text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn run_compare(r: &mut Resolver, a: &CompareArgs) -> Result<()> {
    r.input("zero", &a.zero)?;
    r.input("sup", &a.sup)?;
    let zero = MetricsReport::load(&a.zero)?;
    let sup = MetricsReport::load(&a.sup)?;
    let table = zero_sup_percentage(&zero, &sup);
    let text = render_table(&zero, &sup, &table);
    print!("{text}");
    if let Some(out) = &a.out {
        write_atomic(out, text.as_bytes())?;
    }
    Ok(())
}

/// Parses `args` and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut r = Resolver::new(cli.config.as_deref())?;
    let seed = r.value("seed", cli.seed, 0u64)?;
    let (name, out): (&str, Option<PathBuf>) = match &cli.command {
        Command::Synth(a) => {
            run_synth(&mut r, seed, a)?;
            ("synth", Some(a.out.clone()))
        }
        Command::BuildCorpus(a) => {
            run_build_corpus(&mut r, seed, a)?;
            ("build-corpus", Some(a.out.clone()))
        }
        Command::Coverage(a) => {
            run_coverage(&mut r, a)?;
            ("coverage", a.out.clone())
        }
        Command::Train(a) => {
            run_train(&mut r, seed, a)?;
            ("train", Some(a.out.clone()))
        }
        Command::Generate(a) => {
            run_generate(&mut r, seed, a)?;
            ("generate", Some(a.out.clone()))
        }
        Command::Evaluate(a) => {
            run_evaluate(&mut r, a)?;
            ("evaluate", Some(a.out.clone()))
        }
        Command::Compare(a) => {
            run_compare(&mut r, a)?;
            ("compare", a.out.clone())
        }
    };
    if let Some(out) = out {
        write_manifest(&out, &r.manifest(name, seed))?;
    }
    Ok(())
}

/// Entry point for the binary: returns the process exit status.
pub fn main_with(args: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Fills a response outside of generation, for scripting.
pub fn fill_with<F: MaskFiller + ?Sized>(filler: &F, history: &[String], response: &[String]) -> Vec<String> {
    fill_placeholders(filler, history, response, &SwitchConfig::default().placeholder).tokens
}
