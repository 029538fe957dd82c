use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tinytok_core::corpus::{self, SkipReport, Split, StoryCorpus};
use tinytok_core::diversity::{self, BleuConfig, DiversityOptions, Pairing, Smoothing};
use tinytok_core::entropy;
use tinytok_core::genorch::{self, OrchestratorConfig, ProviderConfig, RunPaths};
use tinytok_core::judgestats::{self, Metric};
use tinytok_core::morph::{self, Criterion, MorphOptions};
use tinytok_core::promptgen::{self, PromptLexicon, UniquenessMode};
use tinytok_core::spectral::{self, LambdaMin, Manifest};
use tinytok_core::tokenize::{self, TokenizerModel};
use tinytok_core::{Error, Result};

use crate::args::*;
use crate::output::{require, sibling, Ctx};

pub static CANCEL: AtomicBool = AtomicBool::new(false);

fn load_tokenizer(ctx: &mut Ctx, dir: &Path) -> Result<TokenizerModel> {
    for f in ["vocab.json", "merges.txt", "tokenizer-options.json"] {
        let p = dir.join(f);
        if p.exists() {
            ctx.input(&p)?;
        }
    }
    TokenizerModel::load_dir(dir)
}

fn load_stories(ctx: &mut Ctx, path: &Path, split: Split) -> Result<(StoryCorpus, SkipReport)> {
    ctx.input(path)?;
    let (c, skips) = corpus::load_corpus(path, split)?;
    if skips.count() > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), skips.count());
    }
    Ok((c, skips))
}

#[derive(Debug, Serialize, Deserialize)]
struct DedupSettings {
    input: Option<PathBuf>,
    #[serde(default = "unsplit")]
    split: String,
    #[serde(default = "dedup_out")]
    out: PathBuf,
    write_unique: Option<PathBuf>,
}

fn unsplit() -> String {
    "unsplit".into()
}

fn dedup_out() -> PathBuf {
    "corpus-dedup.json".into()
}

pub fn corpus_dedup(ctx: &mut Ctx, args: &DedupArgs) -> Result<()> {
    let s: DedupSettings = ctx.settings(args)?;
    let input = require(s.input.clone(), "--input")?;
    let (c, skipped) = load_stories(ctx, &input, s.split.parse()?)?;
    let report = corpus::dedup_report(&c);
    if let Some(u) = &s.write_unique {
        let unique = corpus::merge_dedup(&c, &StoryCorpus::default());
        corpus::write_corpus(&unique, &ctx.out_path(u)?)?;
    }
    ctx.write_report(&s.out, &json!({"dedup": report, "skipped": skipped}), &s)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct OverlapSettings {
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    #[serde(default = "overlap_out")]
    out: PathBuf,
}

fn overlap_out() -> PathBuf {
    "corpus-overlap.json".into()
}

pub fn corpus_overlap(ctx: &mut Ctx, args: &OverlapArgs) -> Result<()> {
    let s: OverlapSettings = ctx.settings(args)?;
    let (a, sa) = load_stories(ctx, &require(s.a.clone(), "--a")?, Split::Train)?;
    let (b, sb) = load_stories(ctx, &require(s.b.clone(), "--b")?, Split::Validation)?;
    let overlap = corpus::split_overlap(&a, &b);
    let result = json!({
        "overlap": overlap,
        "a_total": a.len(),
        "b_total": b.len(),
        "skipped_a": sa,
        "skipped_b": sb,
    });
    ctx.write_report(&s.out, &result, &s)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MergeSettings {
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    #[serde(default = "merge_out")]
    out: PathBuf,
    #[serde(default = "merge_report")]
    report: PathBuf,
}

fn merge_out() -> PathBuf {
    "merged.jsonl".into()
}

fn merge_report() -> PathBuf {
    "corpus-merge.json".into()
}

pub fn corpus_merge(ctx: &mut Ctx, args: &MergeArgs) -> Result<()> {
    let s: MergeSettings = ctx.settings(args)?;
    let (a, _) = load_stories(ctx, &require(s.a.clone(), "--a")?, Split::Unsplit)?;
    let (b, _) = load_stories(ctx, &require(s.b.clone(), "--b")?, Split::Unsplit)?;
    let merged = corpus::merge_dedup(&a, &b);
    corpus::write_corpus(&merged, &ctx.out_path(&s.out)?)?;
    let result = json!({
        "a_total": a.len(),
        "b_total": b.len(),
        "merged": merged.len(),
        "dropped": a.len() + b.len() - merged.len(),
    });
    ctx.write_report(&s.report, &result, &s)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EncodeSettings {
    tokenizer: Option<PathBuf>,
    text: Option<String>,
    input: Option<PathBuf>,
    #[serde(default = "encode_out")]
    out: PathBuf,
}

fn encode_out() -> PathBuf {
    "tok-encode.json".into()
}

pub fn tok_encode(ctx: &mut Ctx, args: &EncodeArgs) -> Result<()> {
    let s: EncodeSettings = ctx.settings(args)?;
    let model = load_tokenizer(ctx, &require(s.tokenizer.clone(), "--tokenizer")?)?;
    let texts: Vec<String> = match (&s.text, &s.input) {
        (Some(t), _) => vec![t.clone()],
        (None, Some(p)) => {
            ctx.input(p)?;
            fs::read_to_string(p)
                .map_err(|e| Error::io(p, e))?
                .lines()
                .map(str::to_owned)
                .collect()
        }
        (None, None) => return Err(Error::invalid("--text", "give --text or --input")),
    };
    let results = texts
        .iter()
        .map(|t| {
            let ids = model.encode(t)?;
            let tokens: Vec<&str> = ids.iter().map(|&i| model.token(i).unwrap_or("")).collect();
            Ok(json!({"text": t, "ids": ids, "tokens": tokens}))
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.write_report(&s.out, &json!({"tokenizer": model.name(), "results": results}), &s)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct FertilitySettings {
    tokenizer: Option<PathBuf>,
    corpus: Option<PathBuf>,
    #[serde(default = "fertility_out")]
    out: PathBuf,
}

fn fertility_out() -> PathBuf {
    "tok-fertility.json".into()
}

pub fn tok_fertility(ctx: &mut Ctx, args: &FertilityArgs) -> Result<()> {
    let s: FertilitySettings = ctx.settings(args)?;
    let model = load_tokenizer(ctx, &require(s.tokenizer.clone(), "--tokenizer")?)?;
    let (c, skipped) = load_stories(ctx, &require(s.corpus.clone(), "--corpus")?, Split::Unsplit)?;
    let report = tokenize::fertility(&model, &c)?;
    let result = json!({
        "tokenizer": model.name(),
        "stories": c.len(),
        "fertility": report,
        "skipped": skipped,
    });
    ctx.write_report(&s.out, &result, &s)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EntropySettings {
    tokenizer: Option<PathBuf>,
    corpus: Option<PathBuf>,
    #[serde(default = "default_alphas")]
    alphas: Vec<f64>,
    #[serde(default = "two")]
    log_base: f64,
    #[serde(default = "entropy_out")]
    out: PathBuf,
}

fn default_alphas() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 2.5]
}

fn two() -> f64 {
    2.0
}

fn entropy_out() -> PathBuf {
    "entropy.json".into()
}

pub fn entropy(ctx: &mut Ctx, args: &EntropyArgs) -> Result<()> {
    let s: EntropySettings = ctx.settings(args)?;
    if let Some(a) = s.alphas.iter().find(|a| !a.is_finite() || **a <= 0.0) {
        return Err(Error::invalid("--alpha", format!("{a} is not a positive order")));
    }
    if !s.log_base.is_finite() || s.log_base <= 1.0 {
        return Err(Error::invalid("--log-base", format!("{} must exceed 1", s.log_base)));
    }
    let model = load_tokenizer(ctx, &require(s.tokenizer.clone(), "--tokenizer")?)?;
    let (c, skipped) = load_stories(ctx, &require(s.corpus.clone(), "--corpus")?, Split::Unsplit)?;
    let dist = entropy::build_distribution(&model, &c)?;
    let rows = entropy::entropy_sweep(&dist, &s.alphas, s.log_base)?;
    let result = json!({
        "tokenizer": model.name(),
        "log_base": s.log_base,
        "entropy": rows,
        "vocab_observed": dist.support(),
        "vocab_size": model.vocab_size(),
        "total_tokens": dist.total(),
        "skipped": skipped,
    });
    ctx.write_report(&s.out, &result, &s)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MorphSettings {
    tokenizer: Option<PathBuf>,
    morph_set: Option<PathBuf>,
    #[serde(default)]
    criterion: Criterion,
    #[serde(default)]
    leading_space: bool,
    #[serde(default = "morph_out")]
    out: PathBuf,
}

fn morph_out() -> PathBuf {
    "morph.json".into()
}

pub fn morph(ctx: &mut Ctx, args: &MorphArgs) -> Result<()> {
    let s: MorphSettings = ctx.settings(args)?;
    let model = load_tokenizer(ctx, &require(s.tokenizer.clone(), "--tokenizer")?)?;
    let set = require(s.morph_set.clone(), "--morph-set")?;
    ctx.input(&set)?;
    let (entries, skipped) = morph::load_morph_set(&set)?;
    let opts = MorphOptions {
        criterion: s.criterion,
        leading_space: s.leading_space,
    };
    let report = morph::morph_score(&model, &entries, &opts)?;
    let result = json!({"tokenizer": model.name(), "morph_score": report, "skipped": skipped});
    ctx.write_report(&s.out, &result, &s)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DiversitySettings {
    corpus: Option<PathBuf>,
    pairs: Option<String>,
    bleu_epsilon: Option<f64>,
    seed: Option<u64>,
    #[serde(default = "diversity_out")]
    out: PathBuf,
}

fn diversity_out() -> PathBuf {
    "diversity.json".into()
}

pub fn diversity(ctx: &mut Ctx, args: &DiversityArgs) -> Result<()> {
    let s: DiversitySettings = ctx.settings(args)?;
    let (c, skipped) = load_stories(ctx, &require(s.corpus.clone(), "--corpus")?, Split::Unsplit)?;
    let pairing: Pairing = match &s.pairs {
        Some(p) => p.parse()?,
        None => {
            let available = c.len() * c.len().saturating_sub(1) / 2;
            if available <= 1000 {
                Pairing::All
            } else {
                Pairing::Random(1000)
            }
        }
    };
    let smoothing = match s.bleu_epsilon {
        Some(e) if e.is_finite() && e > 0.0 => Smoothing::Epsilon(e),
        Some(e) => return Err(Error::invalid("--bleu-epsilon", format!("{e} must be positive"))),
        None => Smoothing::None,
    };
    let seed = s.seed.unwrap_or(ctx.seed);
    let opts = DiversityOptions {
        bleu: BleuConfig {
            smoothing,
            ..BleuConfig::default()
        },
        external: Vec::new(),
    };
    let report = diversity::diversity_report_with(&c, pairing, seed, &opts)?;
    let mut csv = String::from("metric,mean,std\n");
    for m in &report.summary {
        csv.push_str(&format!("{},{},{}\n", m.metric, m.mean, m.std));
    }
    ctx.write_text(&sibling(&s.out, "csv"), &csv)?;
    let result = json!({"pairing": pairing, "seed": seed, "diversity": report, "skipped": skipped});
    ctx.write_report(&s.out, &result, &s)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptgenSettings {
    lexicon: Option<PathBuf>,
    target: Option<usize>,
    seed: Option<u64>,
    #[serde(default = "hindi")]
    lang: String,
    #[serde(default)]
    mode: UniquenessMode,
    workers: Option<usize>,
    estimate_trials: Option<usize>,
    #[serde(default = "prompts_out")]
    out: PathBuf,
    #[serde(default = "promptgen_report")]
    report: PathBuf,
}

fn hindi() -> String {
    "hi".into()
}

fn prompts_out() -> PathBuf {
    "prompts.jsonl".into()
}

fn promptgen_report() -> PathBuf {
    "promptgen.json".into()
}

pub fn promptgen(ctx: &mut Ctx, args: &PromptgenArgs) -> Result<()> {
    // `--mode` arrives as free text; normalize before the typed settings see it
    let mut s: PromptgenSettings = {
        let mode = match &args.mode {
            Some(m) => Some(m.parse::<UniquenessMode>()?),
            None => None,
        };
        let mut v = serde_json::to_value(args).expect("flags serialize");
        v["mode"] = serde_json::to_value(mode).expect("mode serializes");
        ctx.settings(&v)?
    };
    let dir = require(s.lexicon.clone(), "--lexicon")?;
    let target = require(s.target, "--target")?;
    s.seed = Some(s.seed.unwrap_or(ctx.seed));
    let seed = s.seed.expect("set above");
    for f in ["nouns.txt", "verbs.txt", "adjectives.txt", "features.json"] {
        ctx.input(&dir.join(f))?;
    }
    let lex = PromptLexicon::load(&dir, &s.lang)?;
    let batch = match s.workers {
        Some(w) if w > 1 => promptgen::generate_prompts_partitioned(&lex, target, seed, s.mode, w)?,
        _ => promptgen::generate_prompts(&lex, target, seed, s.mode)?,
    };
    let rendered = batch.render(&lex, &s.lang)?;
    let mut lines = String::new();
    for p in &rendered {
        lines.push_str(&serde_json::to_string(p).expect("prompt serializes"));
        lines.push('\n');
    }
    ctx.write_text(&s.out, &lines)?;
    let sizes = lex.sizes();
    let estimate = match s.estimate_trials {
        Some(t) => Some(promptgen::dedup_rate_estimate(sizes, target, t, seed, s.mode)?),
        None => None,
    };
    let result = json!({
        "lexicon": sizes,
        "mode": s.mode,
        "capacity": sizes.capacity(s.mode),
        "prompts": rendered.len(),
        "duplicate_count": batch.duplicate_count,
        "draws": batch.draws,
        "expected_duplicates": promptgen::expected_duplicates(sizes.capacity(s.mode), target as u64),
        "estimate": estimate,
    });
    ctx.write_report(&s.report, &result, &s)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct GenerateSettings {
    prompts: Option<PathBuf>,
    #[serde(default = "mock")]
    provider: String,
    provider_config: Option<PathBuf>,
    orchestrator_config: Option<PathBuf>,
    #[serde(default = "ledger_out")]
    ledger: PathBuf,
    #[serde(default)]
    resume: bool,
    #[serde(default = "stories_out")]
    out: PathBuf,
    #[serde(default = "generate_report")]
    report: PathBuf,
}

fn mock() -> String {
    "mock".into()
}

fn ledger_out() -> PathBuf {
    "ledger.jsonl".into()
}

fn stories_out() -> PathBuf {
    "stories.jsonl".into()
}

fn generate_report() -> PathBuf {
    "generate.json".into()
}

pub fn generate(ctx: &mut Ctx, args: &GenerateArgs) -> Result<()> {
    let s: GenerateSettings = ctx.settings(args)?;
    let prompts_path = require(s.prompts.clone(), "--prompts")?;
    ctx.input(&prompts_path)?;
    let prompts = genorch::load_prompts(&prompts_path)?;

    let provider_cfg = match (&s.provider_config, s.provider.as_str()) {
        (Some(p), kind) => {
            ctx.input(p)?;
            let cfg = ProviderConfig::load(p)?;
            let matches = matches!(
                (&cfg, kind),
                (ProviderConfig::Mock { .. }, "mock") | (ProviderConfig::Http(_), "http")
            );
            if !matches {
                return Err(Error::invalid(
                    "--provider",
                    format!("{kind} does not match the kind in {}", p.display()),
                ));
            }
            cfg
        }
        (None, "mock") => ProviderConfig::Mock {
            fail_first: 0,
            latency_ms: 0,
            permanent_prompts: Vec::new(),
        },
        (None, "http") => {
            return Err(Error::invalid(
                "--provider-config",
                "the http provider needs a config file",
            ))
        }
        (None, other) => {
            return Err(Error::invalid(
                "--provider",
                format!("expected mock or http, got {other:?}"),
            ))
        }
    };
    let provider = provider_cfg.build()?;

    let mut orch = match &s.orchestrator_config {
        Some(p) => {
            ctx.input(p)?;
            let raw = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut v: Value = serde_json::from_str(&raw).map_err(|e| Error::format(p, e.to_string()))?;
            if v.get("seed").is_none() {
                v["seed"] = json!(ctx.seed);
            }
            serde_json::from_value::<OrchestratorConfig>(v).map_err(|e| Error::format(p, e.to_string()))?
        }
        None => OrchestratorConfig {
            seed: ctx.seed,
            ..OrchestratorConfig::default()
        },
    };
    orch.validate()?;
    if orch.parallelism > rayon::current_num_threads().max(1) * 64 {
        orch.parallelism = rayon::current_num_threads() * 64;
    }

    let paths = RunPaths {
        ledger: ctx.out_path(&s.ledger)?,
        output: ctx.out_path(&s.out)?,
    };
    let _ = ctrlc::set_handler(|| CANCEL.store(true, Ordering::SeqCst));
    let (summary, ledger) = if s.resume && paths.ledger.exists() {
        genorch::resume(&prompts, provider.as_ref(), &orch, &paths, &CANCEL)?
    } else {
        genorch::run_generation(&prompts, provider.as_ref(), &orch, &paths, &CANCEL)?
    };
    let failures: BTreeMap<&String, &String> = ledger.failed.iter().map(|(k, v)| (k, &v.reason)).collect();
    let result = json!({
        "provider": provider.name(),
        "submitted": summary.submitted,
        "completed": summary.completed,
        "failed": summary.failed,
        "pending": summary.pending,
        "cancelled": summary.cancelled,
        "provider_calls": summary.stats.provider_calls,
        "cache_hits": summary.stats.cache_hits,
        "retries": summary.stats.retries,
        "failures": failures,
        "orchestrator": orch,
    });
    ctx.write_report(&s.report, &result, &s)?;
    if summary.cancelled {
        return Err(Error::Provider(format!(
            "interrupted with {} prompts pending; rerun with --resume",
            summary.pending
        )));
    }
    if summary.failed > 0 {
        return Err(Error::Provider(format!(
            "{} prompts failed permanently",
            summary.failed
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct JudgeSettings {
    scores: Option<PathBuf>,
    #[serde(default)]
    metrics: Vec<String>,
    #[serde(default = "p_default")]
    p: f64,
    #[serde(default = "ten")]
    bins: usize,
    out: Option<PathBuf>,
}

fn p_default() -> f64 {
    0.001
}

fn ten() -> usize {
    10
}

fn selected(names: &[String]) -> Result<Vec<Metric>> {
    if names.is_empty() {
        return Ok(Metric::ALL.to_vec());
    }
    names.iter().map(|n| n.parse()).collect()
}

fn load_judge(ctx: &mut Ctx, args: &JudgeArgs) -> Result<(JudgeSettings, Vec<judgestats::ScoreRecord>, SkipReport)> {
    let s: JudgeSettings = ctx.settings(args)?;
    let path = require(s.scores.clone(), "--scores")?;
    ctx.input(&path)?;
    let (records, skipped) = judgestats::load_scores(&path)?;
    if skipped.count() > 0 {
        log::warn!("{}: skipped {} records", path.display(), skipped.count());
    }
    Ok((s, records, skipped))
}

fn judge_out(s: &JudgeSettings, default: &str) -> PathBuf {
    s.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

pub fn judge_summary(ctx: &mut Ctx, args: &JudgeArgs) -> Result<()> {
    let (s, records, skipped) = load_judge(ctx, args)?;
    let metrics = selected(&s.metrics)?;
    let summaries = metrics
        .iter()
        .map(|&m| judgestats::summary_stats(&records, m))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = summaries.iter().map(|x| x.mean).collect();
    let stds: Option<Vec<f64>> = summaries.iter().map(|x| x.std).collect();
    let mean_std = match stds {
        Some(stds) if metrics.len() >= 3 => match judgestats::mean_std_correlation(&means, &stds) {
            Ok(r) => json!(r),
            Err(Error::UndefinedCorrelation(why)) => json!({"undefined": why}),
            Err(e) => return Err(e),
        },
        _ => Value::Null,
    };
    let result = json!({
        "n": records.len(),
        "summary": summaries,
        "mean_std_correlation": mean_std,
        "skipped": skipped,
    });
    ctx.write_report(&judge_out(&s, "judgestats-summary.json"), &result, &s)?;
    Ok(())
}

pub fn judge_corr(ctx: &mut Ctx, args: &JudgeArgs) -> Result<()> {
    let (s, records, skipped) = load_judge(ctx, args)?;
    let metrics = selected(&s.metrics)?;
    if metrics.len() < 2 {
        return Err(Error::invalid("--metric", "correlation needs two metrics"));
    }
    let mut rows = Vec::new();
    for (i, &a) in metrics.iter().enumerate() {
        for &b in &metrics[i + 1..] {
            let row = match judgestats::pearson_with_t(&records, a, b) {
                Ok(c) => {
                    let mut v = serde_json::to_value(&c).expect("correlation serializes");
                    v["a"] = json!(a);
                    v["b"] = json!(b);
                    v["p_value"] = json!(c.p_value());
                    v
                }
                Err(Error::UndefinedCorrelation(why)) => json!({"a": a, "b": b, "r": null, "undefined": why}),
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
    }
    let critical = if records.len() >= 3 {
        Some(judgestats::critical_r(records.len(), s.p)?)
    } else {
        None
    };
    let result = json!({
        "n": records.len(),
        "p": s.p,
        "critical_r": critical,
        "correlations": rows,
        "skipped": skipped,
    });
    ctx.write_report(&judge_out(&s, "judgestats-corr.json"), &result, &s)?;
    Ok(())
}

pub fn judge_gaps(ctx: &mut Ctx, args: &JudgeArgs) -> Result<()> {
    let (s, records, skipped) = load_judge(ctx, args)?;
    let g = judgestats::gap_matrix(&records)?;
    let out = judge_out(&s, "judgestats-gaps.json");
    let mut csv = String::from("metric");
    for m in &g.metrics {
        csv.push_str(&format!(",{m}"));
    }
    csv.push('\n');
    for (m, row) in g.metrics.iter().zip(&g.gaps) {
        csv.push_str(m.name());
        for v in row {
            csv.push_str(&format!(",{v:.6}"));
        }
        csv.push('\n');
    }
    ctx.write_text(&sibling(&out, "csv"), &csv)?;
    ctx.write_report(&out, &json!({"n": records.len(), "gaps": g, "skipped": skipped}), &s)?;
    Ok(())
}

pub fn judge_hist(ctx: &mut Ctx, args: &JudgeArgs) -> Result<()> {
    let (s, records, skipped) = load_judge(ctx, args)?;
    let out = judge_out(&s, "judgestats-hist.json");
    let mut dists = Vec::new();
    for m in selected(&s.metrics)? {
        let d = judgestats::distribution_export(&records, m, s.bins)?;
        ctx.write_text(&sibling(&out, &format!("{m}.bins.csv")), &d.bins_csv())?;
        ctx.write_text(&sibling(&out, &format!("{m}.quantiles.csv")), &d.quantiles_csv())?;
        dists.push(d);
    }
    ctx.write_report(
        &out,
        &json!({"n": records.len(), "distributions": dists, "skipped": skipped}),
        &s,
    )?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SpectralSettings {
    manifest: Option<PathBuf>,
    lambda_min: Option<f64>,
    #[serde(default = "spectral_out")]
    out: PathBuf,
}

fn spectral_out() -> PathBuf {
    "spectral.csv".into()
}

pub fn spectral(ctx: &mut Ctx, args: &SpectralArgs) -> Result<()> {
    let s: SpectralSettings = ctx.settings(args)?;
    let path = require(s.manifest.clone(), "--manifest")?;
    ctx.input(&path)?;
    let manifest = Manifest::load(&path)?;
    for (_, p) in &manifest.layers {
        ctx.input(p)?;
    }
    let mode = match s.lambda_min {
        Some(x) if x.is_finite() && x > 0.0 => LambdaMin::Fixed(x),
        Some(x) => return Err(Error::invalid("--lambda-min", format!("{x} must be positive"))),
        None => LambdaMin::Fitted,
    };
    let reports = spectral::analyze_manifest(&manifest, mode)?;
    ctx.write_text(&s.out, &spectral::reports_csv(&reports))?;
    let flagged = reports.iter().filter(|r| r.under_trained).count();
    let alphas: Vec<f64> = reports.iter().filter_map(|r| r.powerlaw_alpha).collect();
    let result = json!({
        "layers": reports,
        "under_trained": flagged,
        "mean_alpha": if alphas.is_empty() { None } else { Some(alphas.iter().sum::<f64>() / alphas.len() as f64) },
        "mean_stable_rank": reports.iter().map(|r| r.stable_rank).sum::<f64>() / reports.len().max(1) as f64,
    });
    ctx.write_report(&s.out.with_extension("json"), &result, &s)?;
    Ok(())
}
