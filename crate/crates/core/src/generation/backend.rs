//! Generation backends: an OpenAI-style chat-completions client, a
//! content-addressed replay store and the deterministic stub oracle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::stub::{StubOracle, StubParams};
use super::ChunkQuery;
use crate::error::BackendError;
use crate::store::{content_hash, write_atomic};

pub const API_KEY_ENV: &str = "KGP_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Replay,
    #[serde(alias = "stub")]
    StubOracle,
}

impl std::str::FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendKind::Http),
            "replay" => Ok(BackendKind::Replay),
            "stub" | "stub_oracle" => Ok(BackendKind::StubOracle),
            other => Err(BackendError::Config(format!("unknown backend `{other}`"))),
        }
    }
}

fn default_temperature() -> f64 {
    0.7
}
fn default_max_retries() -> u32 {
    5
}
fn default_timeout() -> f64 {
    120.0
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub replay_dir: Option<PathBuf>,
    /// Replay only: upstream backend used to fill misses, which are then
    /// recorded into the store.
    #[serde(default)]
    pub record: Option<Box<BackendConfig>>,
    #[serde(default)]
    pub stub: StubParams,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint: None,
            model: None,
            temperature: default_temperature(),
            max_retries: default_max_retries(),
            timeout_secs: default_timeout(),
            backoff_base_ms: default_backoff_ms(),
            max_in_flight: default_in_flight(),
            replay_dir: None,
            record: None,
            stub: StubParams::default(),
        }
    }

    pub fn stub(params: StubParams) -> Self {
        Self { stub: params, ..Self::new(BackendKind::StubOracle) }
    }

    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        Self { replay_dir: Some(dir.into()), ..Self::new(BackendKind::Replay) }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_in_flight < 1 {
            return Err(BackendError::Config("max_in_flight must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::Config("temperature must be non-negative".into()));
        }
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() || self.model.is_none() => {
                Err(BackendError::Config("http backend needs `endpoint` and `model`".into()))
            }
            BackendKind::Replay if self.replay_dir.is_none() => {
                Err(BackendError::Config("replay backend needs `replay_dir`".into()))
            }
            _ => Ok(()),
        }
    }

    /// Reads a backend config from a TOML file; a relative `replay_dir`
    /// resolves against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: BackendConfig =
            toml::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(dir), Some(base)) = (&cfg.replay_dir, path.parent()) {
            if dir.is_relative() {
                cfg.replay_dir = Some(base.join(dir));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config as recorded in reports. The API key never appears; only
    /// whether one was found in the environment.
    pub fn describe(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if self.kind == BackendKind::Http {
            let has_key = std::env::var(API_KEY_ENV).map(|k| !k.is_empty()).unwrap_or(false);
            v["api_key"] = json!(if has_key { "<redacted>" } else { "<unset>" });
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendFailure {
    pub attempts: u32,
    pub error: BackendError,
}

impl From<BackendError> for BackendFailure {
    fn from(error: BackendError) -> Self {
        Self { attempts: 1, error }
    }
}

/// The generation boundary. Implementations must be callable from several
/// worker threads at once.
pub trait Backend: Send + Sync {
    fn complete(&self, query: &ChunkQuery) -> Result<Completion, BackendFailure>;
}

pub fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn Backend>, BackendError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Http => Box::new(HttpBackend::new(cfg)?),
        BackendKind::Replay => {
            let store = ReplayStore::open(cfg.replay_dir.as_ref().expect("validated"))?;
            let upstream = cfg.record.as_deref().map(build_backend).transpose()?;
            Box::new(ReplayBackend { store, upstream })
        }
        BackendKind::StubOracle => Box::new(StubOracle::new(&cfg.stub)?),
    })
}

/// One call through a freshly built backend.
pub fn backend_generate(query: &ChunkQuery, cfg: &BackendConfig) -> Result<String, BackendError> {
    let backend = build_backend(cfg)?;
    backend.complete(query).map(|c| c.text).map_err(|f| f.error)
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    max_retries: u32,
    backoff_base: Duration,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = cfg.endpoint.clone().ok_or_else(|| BackendError::Config("missing endpoint".into()))?;
        let url = if endpoint.trim_end_matches('/').ends_with("/chat/completions") {
            endpoint
        } else {
            format!("{}/chat/completions", endpoint.trim_end_matches('/'))
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            url,
            model: cfg.model.clone().unwrap_or_default(),
            temperature: cfg.temperature,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            max_retries: cfg.max_retries,
            backoff_base: Duration::from_millis(cfg.backoff_base_ms),
        })
    }

    fn attempt(&self, prompt: &str) -> Result<String, BackendError> {
        let payload = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.client.post(&self.url).json(&payload);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status { status: status.as_u16(), body });
        }
        let v: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| BackendError::Malformed(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("no choices[0].message.content in response".into()))
    }

    /// Delay before retry number `retry` (0-based): base · 2^retry, ±25% jitter.
    fn backoff(&self, retry: u32) -> Duration {
        let base = self.backoff_base.as_secs_f64() * 2f64.powi(retry as i32);
        let jitter = rand::rng().random_range(0.75..=1.25);
        Duration::from_secs_f64(base * jitter)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, query: &ChunkQuery) -> Result<Completion, BackendFailure> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&query.text) {
                Ok(text) => return Ok(Completion { text, attempts }),
                Err(e) if e.is_retryable() && attempts <= self.max_retries => {
                    tracing::warn!(chunk = query.index, attempts, error = %e, "retrying");
                    std::thread::sleep(self.backoff(attempts - 1));
                }
                Err(error) => return Err(BackendFailure { attempts, error }),
            }
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    entries: BTreeMap<String, String>,
}

/// Directory of `<hash>.txt` response files, the prompts they answer under
/// `prompts/<hash>.txt`, and `manifest.json` mapping hash → prompt file.
pub struct ReplayStore {
    dir: PathBuf,
}

// Process-wide: several stores may point at the same directory (one per
// concurrent sweep cell), and the manifest is read-modify-write.
static MANIFEST_LOCK: Mutex<()> = Mutex::new(());

impl ReplayStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(dir.join("prompts")).map_err(|e| BackendError::Store(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn response_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.txt"))
    }

    pub fn get(&self, hash: &str) -> Result<Option<String>, BackendError> {
        match std::fs::read(self.response_path(hash)) {
            Ok(bytes) => String::from_utf8(bytes)
                .map(Some)
                .map_err(|e| BackendError::Store(format!("response {hash} is not UTF-8: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(BackendError::Store(e.to_string())),
        }
    }

    pub fn put(&self, prompt: &str, response: &str) -> Result<String, BackendError> {
        let hash = content_hash(prompt);
        let store_err = |e: std::io::Error| BackendError::Store(e.to_string());
        let prompt_rel = format!("prompts/{hash}.txt");
        write_atomic(&self.dir.join(&prompt_rel), prompt.as_bytes()).map_err(store_err)?;
        write_atomic(&self.response_path(&hash), response.as_bytes()).map_err(store_err)?;
        let _guard = MANIFEST_LOCK.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.dir.join("manifest.json");
        let mut manifest: Manifest = match std::fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s).map_err(|e| BackendError::Store(format!("manifest: {e}")))?,
            Err(_) => Manifest::default(),
        };
        if manifest.entries.get(&hash) != Some(&prompt_rel) {
            manifest.entries.insert(hash.clone(), prompt_rel);
            let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
            write_atomic(&path, text.as_bytes()).map_err(store_err)?;
        }
        Ok(hash)
    }
}

pub struct ReplayBackend {
    store: ReplayStore,
    upstream: Option<Box<dyn Backend>>,
}

impl Backend for ReplayBackend {
    fn complete(&self, query: &ChunkQuery) -> Result<Completion, BackendFailure> {
        let hash = content_hash(&query.text);
        if let Some(text) = self.store.get(&hash)? {
            return Ok(Completion { text, attempts: 1 });
        }
        match &self.upstream {
            None => Err(BackendError::ReplayMiss { hash }.into()),
            Some(up) => {
                let c = up.complete(query)?;
                self.store.put(&query.text, &c.text)?;
                Ok(c)
            }
        }
    }
}
