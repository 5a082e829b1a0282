//! Command-line front end: corpus and alignment file handling around
//! `alignkit-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "alignkit", version, about = "Word alignment from sentence-pair scorers")]
pub struct Cli {
    /// Flat TOML file; key `foo-bar` sets the default of ALIGNKIT_FOO_BAR
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Print the command-line interface as JSON and exit
    #[arg(long, global = true)]
    pub help_json: bool,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args, Clone)]
pub struct CorpusArgs {
    /// Source sentences, one per line
    #[arg(long)]
    pub src: PathBuf,
    /// Target sentences, one per line
    #[arg(long)]
    pub tgt: PathBuf,
    /// Source subword segmentation, one line per sentence
    #[arg(long)]
    pub subwords_src: Option<PathBuf>,
    /// Target subword segmentation, one line per sentence
    #[arg(long)]
    pub subwords_tgt: Option<PathBuf>,
    /// Continuation marker in subword files
    #[arg(long, default_value = "@@", env = "ALIGNKIT_SEPARATOR")]
    pub separator: String,
}

#[derive(Debug, Args, Clone)]
pub struct DimsArgs {
    /// Source sentences, used only for alignment dimensions
    #[arg(long, requires = "tgt")]
    pub src: Option<PathBuf>,
    /// Target sentences, used only for alignment dimensions
    #[arg(long, requires = "src")]
    pub tgt: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train a lexical translation model with EM
    TrainIbm {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Model file to write
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5, env = "ALIGNKIT_ITERS")]
        iters: usize,
        /// Diagonal tension; 0 gives plain Model 1
        #[arg(long, default_value_t = 0.0, env = "ALIGNKIT_LAMBDA")]
        lambda: f64,
    },
    /// Viterbi alignments of a trained lexical model, one Pharaoh line per pair
    AlignIbm {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Model file from train-ibm
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute a soft alignment matrix per sentence pair
    Score {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// m1, m2a, m2b, m3aa, m3ab, m3ba, m3bb, attn-max, attn-avg or ibm-posterior
        #[arg(long, env = "ALIGNKIT_METHOD")]
        method: String,
        /// builtin:<model file> or external:<shell command>
        #[arg(long, env = "ALIGNKIT_SCORER")]
        scorer: Option<String>,
        /// Attention records to use instead of asking the scorer
        #[arg(long)]
        attention: Option<PathBuf>,
        /// Seconds to wait for each reply from an external scorer
        #[arg(long, default_value_t = 60.0, env = "ALIGNKIT_TIMEOUT")]
        timeout: f64,
        /// Requests in flight to an external scorer
        #[arg(long, default_value_t = 256, env = "ALIGNKIT_WINDOW")]
        window: usize,
        /// Score file to write; standard output when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn score files into Pharaoh alignments
    Extract {
        /// Score file; repeat to pair with several extractors
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        /// a1, a2:<alpha>, a3:<alpha> or a4:<alpha>; repeatable
        #[arg(long = "extractor", required = true)]
        extractors: Vec<String>,
        /// How to combine the alignments of several extractors
        #[arg(long, default_value = "intersect", env = "ALIGNKIT_COMBINE")]
        combine: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combine forward and reverse direction scores or alignments
    Symmetrize {
        /// Source-to-target score file (Pharaoh file with --hard)
        #[arg(long)]
        fwd: PathBuf,
        /// Target-to-source score file (Pharaoh file with --hard)
        #[arg(long)]
        rev: PathBuf,
        /// reverse, add, multiply, intersect or linear
        #[arg(long)]
        method: String,
        /// Linear coefficients b0,b1,b2
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        betas: Option<Vec<f64>>,
        /// Fit the linear coefficients against this gold file
        #[arg(long)]
        fit_gold: Option<PathBuf>,
        /// Extractor applied to each direction before intersecting
        #[arg(long, default_value = "a1")]
        extractor: String,
        /// Inputs are Pharaoh files (intersect only)
        #[arg(long)]
        hard: bool,
        #[command(flatten)]
        dims: DimsArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precision, recall and AER of a hypothesis against gold
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        /// Gold alignments: i-j sure, i?j possible
        #[arg(long)]
        gold: PathBuf,
        /// Average per sentence instead of over all links
        #[arg(long = "macro")]
        macro_average: bool,
        #[command(flatten)]
        dims: DimsArgs,
    },
    /// Corpus metrics of one extractor over several alphas
    Sweep {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// a1, a2, a3 or a4
        #[arg(long)]
        extractor: String,
        /// Comma-separated alphas
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        /// CSV file to write; standard output when absent
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Feature tables and the feed-forward ensemble
    #[command(subcommand)]
    Ensemble(EnsembleCmd),
    /// Write a synthetic parallel corpus with its alignment
    Generate {
        /// Directory for src.txt, tgt.txt, src.sub, tgt.sub, gold.txt, dict.tsv
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 500)]
        sentences: usize,
        #[arg(long, default_value_t = 26)]
        vocab: usize,
        #[arg(long, default_value_t = 3)]
        min_len: usize,
        #[arg(long, default_value_t = 8)]
        max_len: usize,
        #[arg(long, default_value_t = 1, env = "ALIGNKIT_SEED")]
        seed: u64,
    },
    /// Serve a lexical model over the scorer protocol on stdin/stdout
    Serve {
        #[arg(long)]
        model: PathBuf,
    },
}

// Parsed once per process; variant size is irrelevant.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
pub enum EnsembleCmd {
    /// Write one feature row per (sentence, i, j)
    Features {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        m1: Option<PathBuf>,
        #[arg(long)]
        m2b: Option<PathBuf>,
        #[arg(long)]
        m3aa: Option<PathBuf>,
        #[arg(long)]
        m3bb: Option<PathBuf>,
        /// Score file from attn-avg
        #[arg(long)]
        attention_avg: Option<PathBuf>,
        /// Pharaoh file from the lexical aligner
        #[arg(long)]
        fastalign: Option<PathBuf>,
        /// m1 score file of the reverse direction (target rows)
        #[arg(long)]
        m1_reverse: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a feature file with gold marks
    Train {
        #[arg(long)]
        features: PathBuf,
        /// Model file to write
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30, env = "ALIGNKIT_EPOCHS")]
        epochs: usize,
        #[arg(long, default_value_t = 0.01, env = "ALIGNKIT_LEARNING_RATE")]
        learning_rate: f64,
        #[arg(long, default_value_t = 256, env = "ALIGNKIT_BATCH_SIZE")]
        batch_size: usize,
        #[arg(long, default_value_t = 0, env = "ALIGNKIT_SEED")]
        seed: u64,
        /// Share of sentences held out to pick the epoch
        #[arg(long, default_value_t = 0.1, env = "ALIGNKIT_VALIDATION_FRACTION")]
        validation_fraction: f64,
        /// sure or sure-possible
        #[arg(long, default_value = "sure-possible", env = "ALIGNKIT_LABELS")]
        labels: String,
    },
    /// Align the sentences of a feature file with a trained model
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    if args.iter().skip(1).any(|a| a == "--help-json") {
        println!("{}", config::help_json(Cli::command()));
        return 0;
    }
    if let Some(path) = config::config_path(&args) {
        match config::config_env(&path) {
            // Single-threaded at this point.
            Ok(vars) => vars.into_iter().for_each(|(k, v)| std::env::set_var(k, v)),
            Err(e) => {
                eprintln!("alignkit: {e}");
                return e.exit_code();
            }
        }
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("alignkit: {e}");
            e.exit_code()
        }
    }
}
