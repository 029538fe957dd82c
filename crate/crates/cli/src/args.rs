use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "tinytok",
    version,
    about = "Corpus, tokenizer and model diagnostics for small-story datasets"
)]
pub struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel steps (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Directory that receives every output file.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_name = "LEVEL")]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Duplicate, overlap and merge audits over story JSONL files.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Tokenize text or measure fertility.
    #[command(subcommand)]
    Tok(TokCmd),
    /// Rényi entropy of a corpus' token distribution.
    Entropy(EntropyArgs),
    /// Morpheme-boundary alignment score.
    Morph(MorphArgs),
    /// Pairwise lexical-overlap metrics between stories.
    Diversity(DiversityArgs),
    /// Generate unique story prompts from a lexicon.
    Promptgen(PromptgenArgs),
    /// Run prompts through a completion provider.
    Generate(GenerateArgs),
    /// Statistics over judge scores.
    #[command(subcommand)]
    Judgestats(JudgeCmd),
    /// Spectral diagnostics of weight matrices.
    Spectral(SpectralArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Corpus(CorpusCmd::Dedup(_)) => "corpus-dedup",
            Command::Corpus(CorpusCmd::Overlap(_)) => "corpus-overlap",
            Command::Corpus(CorpusCmd::Merge(_)) => "corpus-merge",
            Command::Tok(TokCmd::Encode(_)) => "tok-encode",
            Command::Tok(TokCmd::Fertility(_)) => "tok-fertility",
            Command::Entropy(_) => "entropy",
            Command::Morph(_) => "morph",
            Command::Diversity(_) => "diversity",
            Command::Promptgen(_) => "promptgen",
            Command::Generate(_) => "generate",
            Command::Judgestats(JudgeCmd::Summary(_)) => "judgestats-summary",
            Command::Judgestats(JudgeCmd::Corr(_)) => "judgestats-corr",
            Command::Judgestats(JudgeCmd::Gaps(_)) => "judgestats-gaps",
            Command::Judgestats(JudgeCmd::Hist(_)) => "judgestats-hist",
            Command::Spectral(_) => "spectral",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    Dedup(DedupArgs),
    Overlap(OverlapArgs),
    Merge(MergeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DedupArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// train, validation or unsplit
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Also write the first occurrence of every story here.
    #[arg(long)]
    pub write_unique: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct OverlapArgs {
    #[arg(long)]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MergeArgs {
    #[arg(long)]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Merged JSONL.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum TokCmd {
    Encode(EncodeArgs),
    Fertility(FertilityArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    /// Directory holding vocab.json and merges.txt.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long, conflicts_with = "input")]
    pub text: Option<String>,
    /// One text per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FertilityArgs {
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EntropyArgs {
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Order of the entropy; repeatable.
    #[arg(long = "alpha", allow_negative_numbers = true)]
    pub alphas: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub log_base: Option<f64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MorphArgs {
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// JSONL of {"word", "morphemes"}.
    #[arg(long)]
    pub morph_set: Option<PathBuf>,
    /// subset or exact
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub leading_space: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DiversityArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `all` or `random:<k>`
    #[arg(long)]
    pub pairs: Option<String>,
    /// Add this value to zero n-gram matches in BLEU.
    #[arg(long)]
    pub bleu_epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PromptgenArgs {
    /// Directory with nouns.txt, verbs.txt, adjectives.txt, features.json.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lang: Option<String>,
    /// strict or quad-only
    #[arg(long)]
    pub mode: Option<String>,
    /// Split sampling across this many workers by noun range.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also estimate the rejected-draw count over this many seeded trials.
    #[arg(long)]
    pub estimate_trials: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// mock or http
    #[arg(long)]
    pub provider: Option<String>,
    /// Provider settings file (required for http).
    #[arg(long)]
    pub provider_config: Option<PathBuf>,
    /// Orchestrator settings file.
    #[arg(long = "config", value_name = "FILE")]
    pub orchestrator_config: Option<PathBuf>,
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Continue from an existing ledger instead of starting over.
    #[arg(long)]
    pub resume: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum JudgeCmd {
    Summary(JudgeArgs),
    Corr(JudgeArgs),
    Gaps(JudgeArgs),
    Hist(JudgeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct JudgeArgs {
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Restrict to these metrics; repeatable.
    #[arg(long = "metric")]
    pub metrics: Vec<String>,
    /// Two-tailed significance level for the critical r.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectralArgs {
    /// JSON object mapping layer names to matrix files.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Fix the tail cutoff instead of fitting it.
    #[arg(long)]
    pub lambda_min: Option<f64>,
    /// CSV summary; the JSON report sits next to it.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}
