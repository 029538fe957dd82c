mod args;
mod commands;
mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::Value;
use tinytok_core::{Error, Result};

use args::{Cli, Command, CorpusCmd, JudgeCmd, TokCmd};
use output::Ctx;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

fn root_config(cli: &Cli) -> Result<Value> {
    let Some(path) = &cli.config else {
        return Ok(Value::Object(Default::default()));
    };
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&raw).map_err(|e| Error::format(path, e.to_string()))?;
    if !v.is_object() {
        return Err(Error::format(path, "run configuration must be a JSON object"));
    }
    Ok(v)
}

fn run(cli: Cli) -> Result<()> {
    let config = root_config(&cli)?;
    let level = cli
        .log_level
        .clone()
        .or_else(|| config.get("log_level").and_then(Value::as_str).map(str::to_owned))
        .unwrap_or_else(|| "warn".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .try_init()
        .map_err(|e| Error::invalid("--log-level", e.to_string()))?;

    let seed = cli
        .seed
        .or_else(|| config.get("seed").and_then(Value::as_u64))
        .unwrap_or(0);
    let threads = cli
        .threads
        .or_else(|| config.get("threads").and_then(Value::as_u64).map(|t| t as usize));
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::invalid("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Numerical(e.to_string()))?;
    }
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| config.get("out_dir").and_then(Value::as_str).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    let mut ctx = Ctx::new(cli.command.name(), out_dir, seed, config)?;
    match &cli.command {
        Command::Corpus(CorpusCmd::Dedup(a)) => commands::corpus_dedup(&mut ctx, a),
        Command::Corpus(CorpusCmd::Overlap(a)) => commands::corpus_overlap(&mut ctx, a),
        Command::Corpus(CorpusCmd::Merge(a)) => commands::corpus_merge(&mut ctx, a),
        Command::Tok(TokCmd::Encode(a)) => commands::tok_encode(&mut ctx, a),
        Command::Tok(TokCmd::Fertility(a)) => commands::tok_fertility(&mut ctx, a),
        Command::Entropy(a) => commands::entropy(&mut ctx, a),
        Command::Morph(a) => commands::morph(&mut ctx, a),
        Command::Diversity(a) => commands::diversity(&mut ctx, a),
        Command::Promptgen(a) => commands::promptgen(&mut ctx, a),
        Command::Generate(a) => commands::generate(&mut ctx, a),
        Command::Judgestats(JudgeCmd::Summary(a)) => commands::judge_summary(&mut ctx, a),
        Command::Judgestats(JudgeCmd::Corr(a)) => commands::judge_corr(&mut ctx, a),
        Command::Judgestats(JudgeCmd::Gaps(a)) => commands::judge_gaps(&mut ctx, a),
        Command::Judgestats(JudgeCmd::Hist(a)) => commands::judge_hist(&mut ctx, a),
        Command::Spectral(a) => commands::spectral(&mut ctx, a),
    }
}
