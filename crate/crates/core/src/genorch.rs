//! Batch story generation against a pluggable completion provider.
//!
//! A fixed pool of workers pulls prompts from a shared queue. Requests pass
//! through a shared rate limiter and an LRU cache keyed by prompt text, and
//! transient failures are retried with exponential backoff. Every finished
//! prompt is appended to a ledger file that doubles as the checkpoint: a
//! later [`resume`] skips whatever the ledger already holds, and the story
//! file is always rebuilt from the ledger in input order.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use lru::LruCache;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::promptgen::RenderedPrompt;
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_tokens: 1024,
            temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderRequest {
    pub id: String,
    pub prompt: String,
    pub params: GenParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderError {
    RateLimited { retry_after_ms: Option<u64> },
    Transient(String),
    Permanent(String),
}

impl std::fmt::Display for ProviderError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProviderError::RateLimited { .. } => f.write_str("rate limited"),
            ProviderError::Transient(m) => write!(f, "transient: {m}"),
            ProviderError::Permanent(m) => write!(f, "permanent: {m}"),
        }
    }
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, req: &ProviderRequest) -> std::result::Result<String, ProviderError>;
}

/// Deterministic provider for tests and dry runs. The first `fail_first`
/// attempts for each distinct prompt fail transiently; prompts listed in
/// `permanent` always fail permanently. Stories are a pure function of the
/// prompt text.
#[derive(Debug, Default)]
pub struct ScriptedMock {
    pub fail_first: u32,
    pub permanent: HashSet<String>,
    pub latency: Duration,
    calls: AtomicU64,
    attempts: Mutex<HashMap<String, u32>>,
    log: Mutex<Vec<Instant>>,
}

const MOCK_WORDS: &[&str] = &[
    "the", "little", "bird", "sang", "under", "a", "big", "tree", "and", "her", "friend", "rabbit", "ran", "home",
    "happy", "sun", "was", "warm", "they", "shared", "bread", "with", "old", "turtle", "river", "soft", "wind",
    "played", "near", "garden", "one", "day", "found", "small", "blue", "stone", "kind", "helped", "everyone",
    "smiled", "laughed", "night", "stars", "bright", "slept", "mother", "called", "back", "learned", "to",
];

impl ScriptedMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn failing_first(n: u32) -> Self {
        ScriptedMock {
            fail_first: n,
            ..Self::default()
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Start times of every call, in call order.
    pub fn call_log(&self) -> Vec<Instant> {
        self.log.lock().expect("mock log").clone()
    }

    pub fn story_for(prompt: &str) -> String {
        let digest = text::dedup_key(prompt);
        let mut rng = ChaCha8Rng::from_seed(digest);
        let slots = crate::promptgen::extract_slots(prompt);
        let mut out = String::new();
        for p in 0..3 {
            if p > 0 {
                out.push_str("\n\n");
            }
            let n = rng.random_range(12..24);
            let mut words: Vec<&str> = (0..n)
                .map(|_| MOCK_WORDS[rng.random_range(0..MOCK_WORDS.len())])
                .collect();
            if let Some((noun, verb, adj, feat)) = &slots {
                let slot = [noun, verb, adj, feat][p % 4].as_str();
                let at = rng.random_range(0..words.len());
                words.insert(at, slot);
            }
            out.push_str(&words.join(" "));
            out.push('.');
        }
        out
    }
}

impl Provider for ScriptedMock {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, req: &ProviderRequest) -> std::result::Result<String, ProviderError> {
        self.log.lock().expect("mock log").push(Instant::now());
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        if self.permanent.contains(&req.prompt) {
            return Err(ProviderError::Permanent("scripted permanent failure".into()));
        }
        let attempt = {
            let mut a = self.attempts.lock().expect("mock attempts");
            let e = a.entry(req.prompt.clone()).or_insert(0);
            *e += 1;
            *e
        };
        if attempt <= self.fail_first {
            return Err(ProviderError::Transient(format!("scripted failure {attempt}")));
        }
        Ok(Self::story_for(&req.prompt))
    }
}

/// Generic JSON-over-HTTP adapter. The request body is `extra_body` with
/// the prompt and generation parameters written into the configured
/// fields; the story is read from `response_pointer` (a JSON pointer).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    #[serde(default)]
    pub auth_header: Option<String>,
    /// Environment variable holding the auth header value.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_prompt_field")]
    pub prompt_field: String,
    #[serde(default)]
    pub max_tokens_field: Option<String>,
    #[serde(default)]
    pub temperature_field: Option<String>,
    #[serde(default = "default_pointer")]
    pub response_pointer: String,
    #[serde(default)]
    pub extra_body: serde_json::Map<String, serde_json::Value>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_prompt_field() -> String {
    "prompt".into()
}

fn default_pointer() -> String {
    "/story".into()
}

fn default_timeout() -> u64 {
    60_000
}

pub struct HttpProvider {
    config: HttpProviderConfig,
    auth: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self> {
        let auth = match &config.auth_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::invalid("auth_env", format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpProvider { config, auth, agent })
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &ProviderRequest) -> std::result::Result<String, ProviderError> {
        let mut body = self.config.extra_body.clone();
        body.insert(self.config.prompt_field.clone(), req.prompt.clone().into());
        if let Some(f) = &self.config.max_tokens_field {
            body.insert(f.clone(), req.params.max_tokens.into());
        }
        if let Some(f) = &self.config.temperature_field {
            body.insert(f.clone(), req.params.temperature.into());
        }
        let mut builder = self.agent.post(&self.config.endpoint);
        if let (Some(h), Some(v)) = (&self.config.auth_header, &self.auth) {
            builder = builder.header(h.as_str(), v.as_str());
        }
        let resp = builder.send_json(serde_json::Value::Object(body));
        let mut resp = resp.map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            429 => {
                let retry_after_ms = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(|secs| secs * 1000);
                return Err(ProviderError::RateLimited { retry_after_ms });
            }
            500.. => return Err(ProviderError::Transient(format!("HTTP {status}"))),
            400.. => return Err(ProviderError::Permanent(format!("HTTP {status}"))),
            _ => {}
        }
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Transient(format!("response body: {e}")))?;
        let story = value
            .pointer(&self.config.response_pointer)
            .ok_or_else(|| ProviderError::Permanent(format!("response lacks {}", self.config.response_pointer)))?;
        // models asked for {"story": ...} sometimes return it as a string
        let story = match story {
            serde_json::Value::String(s) => match serde_json::from_str::<serde_json::Value>(s) {
                Ok(serde_json::Value::Object(o)) => o
                    .get("story")
                    .and_then(|v| v.as_str())
                    .map(str::to_owned)
                    .unwrap_or_else(|| s.clone()),
                _ => s.clone(),
            },
            other => {
                return Err(ProviderError::Permanent(format!(
                    "story field is not a string: {other}"
                )))
            }
        };
        Ok(story)
    }
}

/// Contents of a provider config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    Mock {
        #[serde(default)]
        fail_first: u32,
        #[serde(default)]
        latency_ms: u64,
        #[serde(default)]
        permanent_prompts: Vec<String>,
    },
    Http(HttpProviderConfig),
}

impl ProviderConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn build(&self) -> Result<Arc<dyn Provider>> {
        Ok(match self {
            ProviderConfig::Mock {
                fail_first,
                latency_ms,
                permanent_prompts,
            } => Arc::new(ScriptedMock {
                fail_first: *fail_first,
                latency: Duration::from_millis(*latency_ms),
                permanent: permanent_prompts.iter().cloned().collect(),
                ..ScriptedMock::default()
            }),
            ProviderConfig::Http(c) => Arc::new(HttpProvider::new(c.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub jitter_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_backoff_ms: 500,
            jitter_ms: 100,
        }
    }
}

impl RetryPolicy {
    /// Delay before retrying after failed attempt `k` (1-based):
    /// base·2^(k−1) shifted by a jitter drawn uniformly from ±jitter_ms.
    pub fn delay(&self, k: u32, rng: &mut impl Rng) -> Duration {
        let base = self
            .base_backoff_ms
            .saturating_mul(1u64 << (k.saturating_sub(1)).min(20)) as i64;
        let j = self.jitter_ms as i64;
        let shift = if j > 0 { rng.random_range(-j..=j) } else { 0 };
        Duration::from_millis((base + shift).max(0) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub parallelism: usize,
    pub rps_limit: f64,
    pub retry: RetryPolicy,
    pub checkpoint_every: usize,
    /// 0 disables the cache.
    pub cache_capacity: usize,
    pub params: GenParams,
    /// Seeds backoff jitter.
    pub seed: u64,
    /// On resume, ask again for prompts that previously failed permanently.
    pub retry_failed: bool,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            parallelism: 4,
            rps_limit: 5.0,
            retry: RetryPolicy::default(),
            checkpoint_every: 100,
            cache_capacity: 10_000,
            params: GenParams::default(),
            seed: 0,
            retry_failed: false,
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::invalid("parallelism", "must be at least 1"));
        }
        if !self.rps_limit.is_finite() || self.rps_limit <= 0.0 {
            return Err(Error::invalid("rps_limit", "must be a positive number"));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::invalid("max_attempts", "must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// Sliding-window limiter: at most `k = max(1, ⌊rps⌋)` grants in any
/// window of `max(1 s, k/rps)`, which bounds every 1-second window by rps.
pub struct RateLimiter {
    k: usize,
    window: Duration,
    grants: Mutex<VecDeque<Instant>>,
}

const WINDOW_MARGIN: Duration = Duration::from_millis(20);

impl RateLimiter {
    pub fn new(rps: f64) -> Self {
        let k = (rps.floor() as usize).max(1);
        let window = Duration::from_secs_f64((k as f64 / rps).max(1.0)) + WINDOW_MARGIN;
        RateLimiter {
            k,
            window,
            grants: Mutex::new(VecDeque::with_capacity(k)),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut g = self.grants.lock().expect("rate limiter");
                let now = Instant::now();
                while g.front().is_some_and(|&t| now.duration_since(t) >= self.window) {
                    g.pop_front();
                }
                if g.len() < self.k {
                    g.push_back(now);
                    return;
                }
                self.window - now.duration_since(*g.front().expect("full window"))
            };
            std::thread::sleep(wait);
        }
    }
}

/// Largest number of instants falling in any half-open window of `width`.
pub fn max_in_window(times: &[Instant], width: Duration) -> usize {
    let mut t = times.to_vec();
    t.sort();
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..t.len() {
        while t[hi].duration_since(t[lo]) >= width {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}

type Outcome = std::result::Result<String, String>;

#[derive(Default)]
struct Slot {
    done: Mutex<Option<Outcome>>,
    ready: Condvar,
}

impl Slot {
    fn wait(&self) -> Outcome {
        let mut g = self.done.lock().expect("cache slot");
        while g.is_none() {
            g = self.ready.wait(g).expect("cache slot");
        }
        g.clone().expect("filled")
    }

    fn fill(&self, o: Outcome) {
        *self.done.lock().expect("cache slot") = Some(o);
        self.ready.notify_all();
    }
}

/// Prompt-text cache. A prompt being fetched is present as an unfilled
/// slot, so concurrent requests for the same text wait for one call.
struct PromptCache {
    inner: Option<Mutex<LruCache<String, Arc<Slot>>>>,
}

enum Lookup {
    Hit(Arc<Slot>),
    Owner(Option<Arc<Slot>>),
}

impl PromptCache {
    fn new(capacity: usize) -> Self {
        PromptCache {
            inner: NonZeroUsize::new(capacity).map(|c| Mutex::new(LruCache::new(c))),
        }
    }

    fn lookup(&self, prompt: &str) -> Lookup {
        let Some(m) = &self.inner else {
            return Lookup::Owner(None);
        };
        let mut c = m.lock().expect("cache");
        if let Some(s) = c.get(prompt) {
            return Lookup::Hit(Arc::clone(s));
        }
        let slot = Arc::new(Slot::default());
        c.put(prompt.to_owned(), Arc::clone(&slot));
        Lookup::Owner(Some(slot))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryRecordOut {
    pub id: String,
    pub prompt_id: String,
    pub story: String,
}

pub fn story_id(prompt_id: &str) -> String {
    format!("story-{prompt_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LedgerLine {
    Header {
        prompts_sha256: String,
        submitted: usize,
    },
    Done {
        id: String,
        story: String,
        attempts: u32,
        cached: bool,
    },
    Failed {
        id: String,
        reason: String,
        attempts: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DoneEntry {
    pub story: String,
    pub attempts: u32,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailedEntry {
    pub reason: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub provider_calls: u64,
    pub cache_hits: u64,
    /// Attempts beyond the first, summed over prompts finished in this run.
    pub retries: u64,
    pub elapsed_ms: u64,
}

/// In-memory view of the ledger file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunLedger {
    pub prompts_sha256: String,
    pub submitted: usize,
    pub completed: BTreeMap<String, DoneEntry>,
    pub failed: BTreeMap<String, FailedEntry>,
    /// Byte offsets of the ledger file at each durable checkpoint.
    pub checkpoint_offsets: Vec<u64>,
    pub stats: RunStats,
}

impl RunLedger {
    pub fn pending<'a>(&self, prompts: &'a [RenderedPrompt]) -> Vec<&'a RenderedPrompt> {
        prompts
            .iter()
            .filter(|p| !self.completed.contains_key(&p.id) && !self.failed.contains_key(&p.id))
            .collect()
    }

    fn apply(&mut self, line: LedgerLine) {
        match line {
            LedgerLine::Header { .. } => {}
            LedgerLine::Done {
                id,
                story,
                attempts,
                cached,
            } => {
                self.failed.remove(&id);
                self.completed.insert(
                    id,
                    DoneEntry {
                        story,
                        attempts,
                        cached,
                    },
                );
            }
            LedgerLine::Failed { id, reason, attempts } => {
                if !self.completed.contains_key(&id) {
                    self.failed.insert(id, FailedEntry { reason, attempts });
                }
            }
        }
    }

    /// Reads a ledger file. A final line cut short by a crash is dropped
    /// (and the file truncated to the last complete record); damage
    /// anywhere else is an error.
    pub fn load(path: &Path) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message: m,
        };
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut ledger = RunLedger::default();
        let mut offset = 0usize;
        let mut header = false;
        let mut lineno = 0;
        while offset < raw.len() {
            lineno += 1;
            let end = raw[offset..].iter().position(|&b| b == b'\n').map(|i| offset + i);
            let Some(end) = end else {
                log::warn!("{}: dropping incomplete trailing record", path.display());
                let f = OpenOptions::new()
                    .write(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                f.set_len(offset as u64).map_err(|e| Error::io(path, e))?;
                break;
            };
            let line =
                std::str::from_utf8(&raw[offset..end]).map_err(|_| bad(format!("line {lineno} is not UTF-8")))?;
            let rec: LedgerLine = serde_json::from_str(line).map_err(|e| bad(format!("line {lineno}: {e}")))?;
            match (&rec, header) {
                (
                    LedgerLine::Header {
                        prompts_sha256,
                        submitted,
                    },
                    false,
                ) => {
                    ledger.prompts_sha256 = prompts_sha256.clone();
                    ledger.submitted = *submitted;
                    header = true;
                }
                (LedgerLine::Header { .. }, true) => return Err(bad(format!("line {lineno}: second header"))),
                (_, false) => return Err(bad("missing header".into())),
                _ => ledger.apply(rec),
            }
            offset = end + 1;
        }
        if !header {
            return Err(bad("missing header".into()));
        }
        Ok(ledger)
    }
}

/// Digest binding a ledger to the prompt list it was produced from.
pub fn prompts_digest(prompts: &[RenderedPrompt]) -> String {
    let mut buf = Vec::new();
    for p in prompts {
        buf.extend_from_slice(p.id.as_bytes());
        buf.push(0);
        buf.extend_from_slice(p.prompt.as_bytes());
        buf.push(b'\n');
    }
    text::sha256_hex(&buf)
}

pub fn load_prompts(path: &Path) -> Result<Vec<RenderedPrompt>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: RenderedPrompt =
            serde_json::from_str(line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        if !seen.insert(p.id.clone()) {
            return Err(Error::format(path, format!("line {}: duplicate id {:?}", i + 1, p.id)));
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub ledger: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub submitted: usize,
    pub completed: usize,
    pub failed: usize,
    pub pending: usize,
    pub cancelled: bool,
    pub stats: RunStats,
}

struct LedgerWriter {
    file: BufWriter<File>,
    path: PathBuf,
    since_sync: usize,
    every: usize,
    offset: u64,
}

impl LedgerWriter {
    fn append(&mut self, line: &LedgerLine, ledger: &mut RunLedger) -> Result<()> {
        let mut s = serde_json::to_string(line).expect("ledger line serializes");
        s.push('\n');
        self.file
            .write_all(s.as_bytes())
            .map_err(|e| Error::io(&self.path, e))?;
        self.offset += s.len() as u64;
        self.since_sync += 1;
        if self.since_sync >= self.every {
            self.sync(ledger)?;
        }
        Ok(())
    }

    fn sync(&mut self, ledger: &mut RunLedger) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.file.get_ref().sync_data().map_err(|e| Error::io(&self.path, e))?;
        self.since_sync = 0;
        ledger.checkpoint_offsets.push(self.offset);
        Ok(())
    }
}

/// Starts a fresh run, replacing any existing ledger.
pub fn run_generation(
    prompts: &[RenderedPrompt],
    provider: &dyn Provider,
    config: &OrchestratorConfig,
    paths: &RunPaths,
    cancel: &AtomicBool,
) -> Result<(RunSummary, RunLedger)> {
    config.validate()?;
    let mut ledger = RunLedger {
        prompts_sha256: prompts_digest(prompts),
        submitted: prompts.len(),
        ..RunLedger::default()
    };
    let file = File::create(&paths.ledger).map_err(|e| Error::io(&paths.ledger, e))?;
    let mut writer = LedgerWriter {
        file: BufWriter::new(file),
        path: paths.ledger.clone(),
        since_sync: 0,
        every: config.checkpoint_every,
        offset: 0,
    };
    let header = LedgerLine::Header {
        prompts_sha256: ledger.prompts_sha256.clone(),
        submitted: prompts.len(),
    };
    writer.append(&header, &mut ledger)?;
    writer.sync(&mut ledger)?;
    drive(prompts, provider, config, paths, cancel, ledger, writer)
}

/// Continues the run recorded in `paths.ledger`. Prompts already in the
/// ledger are not requested again.
pub fn resume(
    prompts: &[RenderedPrompt],
    provider: &dyn Provider,
    config: &OrchestratorConfig,
    paths: &RunPaths,
    cancel: &AtomicBool,
) -> Result<(RunSummary, RunLedger)> {
    config.validate()?;
    let mut ledger = RunLedger::load(&paths.ledger)?;
    let digest = prompts_digest(prompts);
    if ledger.prompts_sha256 != digest {
        return Err(Error::Checkpoint {
            path: paths.ledger.clone(),
            message: format!(
                "prompt list digest {digest} does not match the checkpoint's {}",
                ledger.prompts_sha256
            ),
        });
    }
    if config.retry_failed {
        ledger.failed.clear();
    }
    let offset = fs::metadata(&paths.ledger)
        .map_err(|e| Error::io(&paths.ledger, e))?
        .len();
    let file = OpenOptions::new()
        .append(true)
        .open(&paths.ledger)
        .map_err(|e| Error::io(&paths.ledger, e))?;
    let writer = LedgerWriter {
        file: BufWriter::new(file),
        path: paths.ledger.clone(),
        since_sync: 0,
        every: config.checkpoint_every,
        offset,
    };
    drive(prompts, provider, config, paths, cancel, ledger, writer)
}

struct Finished {
    id: String,
    line: LedgerLine,
    provider_calls: u64,
    cache_hit: bool,
}

fn request_with_retries(
    p: &RenderedPrompt,
    provider: &dyn Provider,
    config: &OrchestratorConfig,
    limiter: &RateLimiter,
    cancel: &AtomicBool,
) -> (Option<Outcome>, u32) {
    let req = ProviderRequest {
        id: p.id.clone(),
        prompt: p.prompt.clone(),
        params: config.params.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(
        config.seed ^ u64::from_le_bytes(text::dedup_key(&p.id)[..8].try_into().expect("8 bytes")),
    );
    let mut attempt = 0;
    loop {
        attempt += 1;
        limiter.acquire();
        let err = match provider.complete(&req) {
            Ok(story) => return (Some(Ok(story)), attempt),
            Err(ProviderError::Permanent(m)) => return (Some(Err(m)), attempt),
            Err(e) => e,
        };
        if attempt >= config.retry.max_attempts {
            return (Some(Err(format!("{err} after {attempt} attempts"))), attempt);
        }
        let mut delay = config.retry.delay(attempt, &mut rng);
        if let ProviderError::RateLimited {
            retry_after_ms: Some(ms),
        } = err
        {
            delay = delay.max(Duration::from_millis(ms));
        }
        log::debug!("{}: attempt {attempt} failed ({err}), retrying in {delay:?}", p.id);
        let until = Instant::now() + delay;
        while Instant::now() < until {
            if cancel.load(Ordering::SeqCst) {
                return (None, attempt);
            }
            std::thread::sleep((until - Instant::now()).min(Duration::from_millis(25)));
        }
    }
}

fn process(
    p: &RenderedPrompt,
    provider: &dyn Provider,
    config: &OrchestratorConfig,
    limiter: &RateLimiter,
    cache: &PromptCache,
    cancel: &AtomicBool,
) -> Option<Finished> {
    let (outcome, attempts, calls, hit) = match cache.lookup(&p.prompt) {
        Lookup::Hit(slot) => (Some(slot.wait()), 0, 0, true),
        Lookup::Owner(slot) => {
            let (o, attempts) = request_with_retries(p, provider, config, limiter, cancel);
            if let Some(s) = slot {
                // an abandoned request still has to release its waiters
                s.fill(o.clone().unwrap_or_else(|| Err("cancelled".into())));
            }
            (o, attempts, attempts as u64, false)
        }
    };
    let outcome = outcome?;
    if hit && outcome.as_ref().is_err_and(|e| e == "cancelled") {
        return None;
    }
    let line = match outcome {
        Ok(story) => LedgerLine::Done {
            id: p.id.clone(),
            story,
            attempts,
            cached: hit,
        },
        Err(reason) => LedgerLine::Failed {
            id: p.id.clone(),
            reason,
            attempts,
        },
    };
    Some(Finished {
        id: p.id.clone(),
        line,
        provider_calls: calls,
        cache_hit: hit,
    })
}

fn drive(
    prompts: &[RenderedPrompt],
    provider: &dyn Provider,
    config: &OrchestratorConfig,
    paths: &RunPaths,
    cancel: &AtomicBool,
    mut ledger: RunLedger,
    mut writer: LedgerWriter,
) -> Result<(RunSummary, RunLedger)> {
    let started = Instant::now();
    let pending = ledger.pending(prompts);
    let limiter = RateLimiter::new(config.rps_limit);
    let cache = PromptCache::new(config.cache_capacity);
    let next = AtomicUsize::new(0);
    let mut stats = RunStats::default();
    let (tx, rx) = mpsc::channel::<Finished>();
    let write_result: Result<()> = std::thread::scope(|scope| {
        for _ in 0..config.parallelism.min(pending.len().max(1)) {
            let tx = tx.clone();
            let (next, pending, limiter, cache) = (&next, &pending, &limiter, &cache);
            scope.spawn(move || loop {
                if cancel.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = pending.get(i) else { break };
                if let Some(done) = process(p, provider, config, limiter, cache, cancel) {
                    if tx.send(done).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        // single consumer: the only writer of the ledger file
        for f in rx {
            stats.provider_calls += f.provider_calls;
            stats.cache_hits += f.cache_hit as u64;
            if let LedgerLine::Done { attempts, .. } | LedgerLine::Failed { attempts, .. } = &f.line {
                stats.retries += attempts.saturating_sub(1) as u64;
            }
            if let Err(e) = writer.append(&f.line, &mut ledger) {
                cancel.store(true, Ordering::SeqCst);
                return Err(e);
            }
            log::trace!("finished {}", f.id);
            ledger.apply(f.line);
        }
        Ok(())
    });
    write_result?;
    writer.sync(&mut ledger)?;
    write_stories(prompts, &ledger, &paths.output)?;
    stats.elapsed_ms = started.elapsed().as_millis() as u64;
    ledger.stats = stats.clone();
    let completed = prompts.iter().filter(|p| ledger.completed.contains_key(&p.id)).count();
    let failed = prompts.iter().filter(|p| ledger.failed.contains_key(&p.id)).count();
    let summary = RunSummary {
        submitted: prompts.len(),
        completed,
        failed,
        pending: prompts.len() - completed - failed,
        cancelled: cancel.load(Ordering::SeqCst),
        stats,
    };
    Ok((summary, ledger))
}

/// Rewrites the story file from the ledger, in prompt order, atomically.
fn write_stories(prompts: &[RenderedPrompt], ledger: &RunLedger, path: &Path) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        for p in prompts {
            if let Some(d) = ledger.completed.get(&p.id) {
                let rec = StoryRecordOut {
                    id: story_id(&p.id),
                    prompt_id: p.id.clone(),
                    story: d.story.clone(),
                };
                serde_json::to_writer(&mut w, &rec).expect("story serializes");
                w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        w.get_ref().sync_data().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
