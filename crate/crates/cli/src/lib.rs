//! Command implementations behind the `exlab` binary.

pub mod runfile;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use exlab::complexity;
use exlab::corpus::{self, Corpus};
use exlab::generation::{self, DecodeMode, SamplerSpec, Strategy};
use exlab::io::{sha256_hex, write_atomic};
use exlab::training::{self, median};
use exlab::{checkpoint, Error, Result, SublayerKind, Vocab};

use crate::runfile::{Provenance, RunFile};

#[derive(Debug, Parser)]
#[command(name = "exlab", version, about = "Train and compare attention and Extractor language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean every .txt file of a directory into a corpus directory.
    PrepareData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Learn a byte-pair vocabulary from a corpus directory.
    TrainTokenizer {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 5000)]
        vocab_size: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a model from a run file.
    Train(TrainArgs),
    /// Sample a continuation of a prompt.
    Generate(GenerateArgs),
    /// Operation counts, parameter counts and critical paths.
    Complexity(ComplexityArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sublayer: Option<SublayerKind>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub num_batches: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Print the running cost every this many batches (0 for never).
    #[arg(long, default_value_t = 1000)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Run file whose output directory holds the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub prompt: String,
    #[arg(long, default_value_t = 50)]
    pub tokens: usize,
    #[arg(long, conflicts_with_all = ["top_k", "greedy"])]
    pub top_p: Option<f64>,
    #[arg(long, conflicts_with = "greedy")]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write `step,token_id,nucleus_size` rows here.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Run a full forward pass for every token instead of using caches.
    #[arg(long)]
    pub recompute: bool,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    /// Training-phase counts of the six compared sublayers.
    #[arg(long)]
    pub table7: bool,
    /// CSV of counts over a grid of sizes.
    #[arg(long)]
    pub grid: bool,
    /// Use the literal-loop counter for --grid.
    #[arg(long, requires = "grid")]
    pub measured: bool,
    #[arg(long)]
    pub critical_path: bool,
    #[arg(long, default_value_t = 128)]
    pub d: u64,
    #[arg(long, default_value_t = 128)]
    pub l: u64,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    pub grid_d: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub grid_l: Vec<u64>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::PrepareData { input, output } => prepare_data(&input, &output, out),
        Command::TrainTokenizer { corpus, vocab_size, output } => train_tokenizer(&corpus, vocab_size, &output, out),
        Command::Train(args) => train(&args, out),
        Command::Generate(args) => generate(&args, out),
        Command::Complexity(args) => complexity_report(&args, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn prepare_data(input: &Path, output: &Path, out: &mut dyn Write) -> Result<()> {
    let corpus = Corpus::load_dir(input)?;
    corpus.save_dir(output)?;
    let bytes: usize = corpus.documents.iter().map(String::len).sum();
    emit(
        out,
        &format!(
            "{} documents, {bytes} bytes, sha256 {}\n",
            corpus.documents.len(),
            corpus.sha256()
        ),
    )
}

fn train_tokenizer(corpus_dir: &Path, size: usize, output: &Path, out: &mut dyn Write) -> Result<()> {
    let corpus = Corpus::load_dir(corpus_dir)?;
    let vocab = Vocab::train(&corpus.documents, size)?;
    vocab.save(output)?;
    let (_, stats) = corpus::encode_corpus(&corpus, &vocab);
    emit(
        out,
        &format!(
            "vocabulary {} tokens; corpus {} tokens ({} without begin-of-text markers)\n",
            vocab.len(),
            stats.tokens,
            stats.tokens_without_specials
        ),
    )
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut rf = RunFile::load(&args.config)?;
    if let Some(seed) = args.seed {
        rf.train.seed = seed;
    }
    if let Some(kind) = args.sublayer {
        rf.model.sublayer = kind;
    }
    if let Some(h) = args.heads {
        rf.model.heads = h;
    }
    if let Some(n) = args.num_batches {
        rf.train.num_batches = n;
    }
    if let Some(dir) = &args.out_dir {
        rf.out_dir = dir.clone();
    }
    rf.train.validate()?;

    let vocab_text = std::fs::read_to_string(&rf.vocab).map_err(|e| Error::io(&rf.vocab, e))?;
    let vocab = Vocab::from_text(&vocab_text)?;
    let model_cfg = rf.model.resolve(vocab.len())?;
    let corpus = Corpus::load_dir(&rf.corpus)?;
    let (stream, _) = corpus::encode_corpus(&corpus, &vocab);
    let provenance = Provenance {
        corpus_sha256: corpus.sha256(),
        vocab_sha256: sha256_hex(vocab_text.as_bytes()),
        stream_tokens: stream.len(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    if let Some(want) = &rf.provenance {
        if want.corpus_sha256 != provenance.corpus_sha256 || want.vocab_sha256 != provenance.vocab_sha256 {
            return Err(Error::Data("corpus or vocabulary differs from the one recorded in the run file".into()));
        }
        if want.code_version != provenance.code_version {
            log::warn!(
                "run file was recorded by version {}, this is {}",
                want.code_version,
                provenance.code_version
            );
        }
    }

    let log_every = args.log_every;
    let outcome = if rf.train.num_batches == 0 {
        training::TrainOutcome {
            model: exlab::Model::init(model_cfg, rf.train.seed)?,
            log: training::CostLog::new(),
            hashes: Vec::new(),
        }
    } else {
        let mut recent = Vec::new();
        training::train(model_cfg, &rf.train, &stream, |r| {
            recent.push(r.cost);
            if log_every > 0 && r.batch % log_every == 0 {
                eprintln!("batch {:>7}  median cost {:.4}", r.batch, median(&recent));
                recent.clear();
            }
        })?
    };

    std::fs::create_dir_all(&rf.out_dir).map_err(|e| Error::io(&rf.out_dir, e))?;
    let mut hashes = String::from("batch,hash\n");
    for (i, h) in outcome.hashes.iter().enumerate() {
        hashes.push_str(&format!("{},{h}\n", i + 1));
    }
    write_atomic(&rf.out_dir.join("batch_hashes.csv"), hashes.as_bytes())?;
    outcome.log.save(&rf.out_dir.join("costlog.csv"))?;
    checkpoint::save(&outcome.model, &rf.out_dir.join("checkpoint.bin"))?;

    let mut manifest = rf.clone();
    for p in [&mut manifest.corpus, &mut manifest.vocab, &mut manifest.out_dir] {
        *p = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
    }
    manifest.provenance = Some(provenance);
    write_atomic(&rf.out_dir.join("manifest.toml"), manifest.to_toml()?.as_bytes())?;

    let costs = outcome.log.costs();
    let summary = match costs.len() {
        0 => "no batches trained\n".to_string(),
        n => {
            let tail = median(&costs[n.saturating_sub(500)..]);
            format!(
                "{n} batches; median cost of the last {} batches {tail:.4} (perplexity {:.2})\n",
                n.min(500),
                tail.exp()
            )
        }
    };
    emit(out, &summary)
}

fn generate(args: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let rf = args.config.as_deref().map(RunFile::load).transpose()?;
    let checkpoint = match (&args.checkpoint, &rf) {
        (Some(p), _) => p.clone(),
        (None, Some(rf)) => rf.out_dir.join("checkpoint.bin"),
        (None, None) => return Err(Error::Parse("--checkpoint or --config is required".into())),
    };
    let vocab = match (&args.vocab, &rf) {
        (Some(p), _) => p.clone(),
        (None, Some(rf)) => rf.vocab.clone(),
        (None, None) => return Err(Error::Parse("--vocab or --config is required".into())),
    };
    let mut spec = match rf.as_ref().and_then(|r| r.sampler.as_ref()) {
        Some(s) => s.spec()?,
        None => SamplerSpec::top_p(0.6, 0),
    };
    if let Some(p) = args.top_p {
        spec.strategy = Strategy::TopP { p };
    }
    if let Some(k) = args.top_k {
        spec.strategy = Strategy::TopK { k };
    }
    if args.greedy {
        spec.strategy = Strategy::Greedy;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let model = checkpoint::load(&checkpoint)?;
    let vocab = Vocab::load(&vocab)?;
    let mode = if args.recompute { DecodeMode::Recompute } else { DecodeMode::Cached };
    let g = generation::generate(&model, &vocab, &args.prompt, args.tokens, &spec, mode)?;
    if let Some(path) = &args.transcript {
        g.save_transcript(path)?;
    }
    emit(out, &g.text)?;
    emit(out, "\n")
}

fn complexity_report(args: &ComplexityArgs, out: &mut dyn Write) -> Result<()> {
    let nothing = !(args.table7 || args.grid || args.critical_path);
    if args.table7 || nothing {
        emit(out, &complexity::table7_text(args.d, args.l)?)?;
    }
    if args.grid {
        emit(out, &complexity::grid_csv(&args.grid_d, &args.grid_l, args.measured)?)?;
    }
    if args.critical_path {
        for kind in SublayerKind::ALL {
            let path = complexity::critical_path(kind);
            let tag = if path.derived { " (derived)" } else { "" };
            emit(out, &format!("{kind}: {} stages{tag}: {path}\n", path.len()))?;
        }
    }
    Ok(())
}
