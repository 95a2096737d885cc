//! Engine configuration: one TOML document holding every knob of a run,
//! with relative paths resolved against the file's directory and backend
//! URLs/keys overridable from the environment.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Engine, Mode, QaConfig};
use crate::backends::http::{HttpBackendConfig, HttpChat, HttpEmbedder, HttpReranker};
use crate::backends::mock::{
    ChatFallback, ChatScript, IdentityReranker, MockChat, MockEmbedder, OverlapReranker, UnreachableBackend,
};
use crate::backends::{ApiKey, BackendError, ChatBackend, EmbeddingBackend, RerankBackend};
use crate::corpus::{load_corpus, load_questions, Corpus, CorpusError, Question};
use crate::dense::{Cascade, CascadeConfig, FirstStage, RetrievalError, VectorStore};
use crate::eval::ProximityConfig;
use crate::qa::{PromptTemplates, QaError};
use crate::sparse::{IndexError, SparseConfig, TfidfIndex, Variant};

pub const ENV_EMBED_URL: &str = "ENGINE_EMBED_URL";
pub const ENV_RERANK_URL: &str = "ENGINE_RERANK_URL";
pub const ENV_CHAT_URL: &str = "ENGINE_CHAT_URL";
pub const ENV_API_KEY: &str = "ENGINE_API_KEY";

pub const SPARSE_INDEX_FILE: &str = "sparse_index.json";
pub const VECTOR_STORE_FILE: &str = "vector_store.json";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{what} not found: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Template(#[from] QaError),
}

/// Failure while building indices or backends for a valid config.
#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub variant: Variant,
    #[serde(flatten)]
    pub sparse: SparseConfig,
    #[serde(flatten)]
    pub cascade: CascadeConfig,
    pub use_reranker: bool,
    pub embed_batch_size: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            variant: Variant::Char,
            sparse: SparseConfig::default(),
            cascade: CascadeConfig::default(),
            use_reranker: true,
            embed_batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
    Unreachable,
    /// Rerank only: skip the second stage.
    None,
    /// Rerank only: keep the first-stage order.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub url: Option<String>,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_in_flight: usize,
    /// Mock embedder dimension.
    pub dimension: usize,
    /// Mock chat script, a JSON file.
    pub script: Option<PathBuf>,
    /// Mock chat behaviour for unscripted requests.
    pub fallback: ChatFallback,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            url: None,
            model: String::new(),
            timeout_secs: 60.0,
            max_retries: 2,
            initial_backoff_ms: 250,
            max_in_flight: 4,
            dimension: 64,
            script: None,
            fallback: ChatFallback::Lexical,
        }
    }
}

impl BackendSection {
    fn http_config(&self, what: &str) -> Result<HttpBackendConfig, ConfigError> {
        let url = self
            .url
            .clone()
            .ok_or_else(|| ConfigError::Invalid(format!("{what} backend of kind http needs a url")))?;
        let mut cfg = HttpBackendConfig::new(url, self.model.clone());
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()).map(ApiKey::new);
        cfg.timeout = Duration::try_from_secs_f64(self.timeout_secs)
            .map_err(|e| ConfigError::Invalid(format!("{what} timeout_secs: {e}")))?;
        cfg.max_retries = self.max_retries;
        cfg.initial_backoff = Duration::from_millis(self.initial_backoff_ms);
        cfg.max_in_flight = self.max_in_flight.max(1);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsSection {
    pub embedding: BackendSection,
    pub rerank: BackendSection,
    pub chat: BackendSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Run label in comparison reports; defaults to the config file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub corpus: PathBuf,
    pub questions: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Worker threads; defaults to the CPU count.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub allow_empty_pages: bool,
    /// Directory with `<qa.template>.toml`; the built-in set is used otherwise.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub backends: BackendsSection,
    #[serde(default)]
    pub qa: QaConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub proximity: ProximityConfig,
}

fn default_seed() -> u64 {
    42
}

impl EngineConfig {
    /// Reads, resolves relative paths, applies environment overrides and
    /// validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: EngineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if cfg.name.is_none() {
            cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.corpus);
        join(&mut self.questions);
        join(&mut self.output_dir);
        if let Some(d) = self.templates_dir.as_mut() {
            join(d);
        }
        for b in [&mut self.backends.embedding, &mut self.backends.rerank, &mut self.backends.chat] {
            if let Some(s) = b.script.as_mut() {
                join(s);
            }
        }
    }

    /// Environment URLs switch the matching backend to http.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        for (key, section) in [
            (ENV_EMBED_URL, &mut self.backends.embedding),
            (ENV_RERANK_URL, &mut self.backends.rerank),
            (ENV_CHAT_URL, &mut self.backends.chat),
        ] {
            if let Some(url) = var(key).filter(|u| !u.is_empty()) {
                section.kind = BackendKind::Http;
                section.url = Some(url);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (what, path) in [("corpus", &self.corpus), ("questions", &self.questions)] {
            if !path.is_file() {
                return Err(ConfigError::MissingPath { what, path: path.clone() });
            }
        }
        if let Some(script) = &self.backends.chat.script {
            if !script.is_file() {
                return Err(ConfigError::MissingPath {
                    what: "chat script",
                    path: script.clone(),
                });
            }
        }
        self.retrieval
            .cascade
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.retrieval.sparse.hybrid_weight) {
            return Err(ConfigError::Invalid("hybrid_weight must be in [0, 1]".into()));
        }
        self.agent
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.proximity.window == 0 {
            return Err(ConfigError::Invalid("proximity window must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Invalid("workers must be >= 1".into()));
        }
        for (what, b) in [
            ("embedding", &self.backends.embedding),
            ("rerank", &self.backends.rerank),
            ("chat", &self.backends.chat),
        ] {
            match b.kind {
                BackendKind::Http => {
                    b.http_config(what)?;
                }
                BackendKind::None | BackendKind::Identity if what != "rerank" => {
                    return Err(ConfigError::Invalid(format!("{what} backend cannot be of kind {:?}", b.kind)));
                }
                BackendKind::Mock if what == "embedding" && b.dimension == 0 => {
                    return Err(ConfigError::Invalid("mock embedding dimension must be positive".into()));
                }
                _ => {}
            }
        }
        self.templates()?;
        Ok(())
    }

    pub fn templates(&self) -> Result<PromptTemplates, ConfigError> {
        Ok(match &self.templates_dir {
            Some(dir) => PromptTemplates::load(dir, &self.qa.template)?,
            None => PromptTemplates::builtin(&self.qa.template)?,
        })
    }

    pub fn run_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "run".into())
    }

    pub fn needs_sparse(&self) -> bool {
        self.retrieval.cascade.first_stage == FirstStage::Sparse
    }

    pub fn needs_store(&self) -> bool {
        self.retrieval.cascade.first_stage == FirstStage::Dense
    }
}

fn embedder(cfg: &EngineConfig) -> Result<Box<dyn EmbeddingBackend>, SetupError> {
    let b = &cfg.backends.embedding;
    Ok(match b.kind {
        BackendKind::Mock => Box::new(MockEmbedder::new(b.dimension, cfg.seed)),
        BackendKind::Http => Box::new(HttpEmbedder::new(b.http_config("embedding")?)?),
        _ => Box::new(UnreachableBackend),
    })
}

fn reranker(cfg: &EngineConfig) -> Result<Option<Box<dyn RerankBackend>>, SetupError> {
    if !cfg.retrieval.use_reranker {
        return Ok(None);
    }
    let b = &cfg.backends.rerank;
    Ok(match b.kind {
        BackendKind::None => None,
        BackendKind::Mock => Some(Box::new(OverlapReranker)),
        BackendKind::Identity => Some(Box::new(IdentityReranker)),
        BackendKind::Http => Some(Box::new(HttpReranker::new(b.http_config("rerank")?)?)),
        BackendKind::Unreachable => Some(Box::new(UnreachableBackend)),
    })
}

fn chat(cfg: &EngineConfig) -> Result<Box<dyn ChatBackend>, SetupError> {
    let b = &cfg.backends.chat;
    Ok(match b.kind {
        BackendKind::Mock => {
            let script = match &b.script {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    ChatScript::from_json(&text).map_err(|e| ConfigError::Parse {
                        path: path.clone(),
                        message: e.to_string(),
                    })?
                }
                None => ChatScript::default(),
            };
            Box::new(MockChat::new(script, b.fallback.clone(), cfg.seed))
        }
        BackendKind::Http => Box::new(HttpChat::new(b.http_config("chat")?)?),
        _ => Box::new(UnreachableBackend),
    })
}

/// Loaded data, indices and backends for one config.
pub struct Runtime {
    pub config: EngineConfig,
    pub corpus: Corpus,
    pub questions: Vec<Question>,
    pub templates: PromptTemplates,
    pub sparse: Option<TfidfIndex>,
    local: Option<TfidfIndex>,
    pub store: Option<VectorStore>,
    pub embedder: Box<dyn EmbeddingBackend>,
    pub reranker: Option<Box<dyn RerankBackend>>,
    pub chat: Box<dyn ChatBackend>,
}

impl Runtime {
    /// Loads the corpus and questions and builds what the first stage needs.
    /// Index files already in the output directory are reused when they
    /// match the corpus and config.
    pub fn build(config: EngineConfig) -> Result<Self, SetupError> {
        let corpus = load_corpus(&config.corpus, config.allow_empty_pages).map_err(ConfigError::from)?;
        let questions = load_questions(&config.questions).map_err(ConfigError::from)?;
        let templates = config.templates()?;
        let embedder = embedder(&config)?;
        let sparse = if config.needs_sparse() {
            Some(Self::sparse_index(&config, &corpus)?)
        } else {
            None
        };
        let local = match &sparse {
            Some(s) if s.variant == Variant::Char => None,
            _ => Some(TfidfIndex::build(&corpus, Variant::Char, config.retrieval.sparse)?),
        };
        let store = if config.needs_store() {
            Some(Self::vector_store(&config, &corpus, embedder.as_ref())?)
        } else {
            None
        };
        Ok(Self {
            reranker: reranker(&config)?,
            chat: chat(&config)?,
            config,
            corpus,
            questions,
            templates,
            sparse,
            local,
            store,
            embedder,
        })
    }

    fn sparse_index(config: &EngineConfig, corpus: &Corpus) -> Result<TfidfIndex, SetupError> {
        let path = config.output_dir.join(SPARSE_INDEX_FILE);
        if let Ok(index) = TfidfIndex::load(&path) {
            let same_keys = index.keys.iter().eq(corpus.pages().iter().map(|p| &p.key));
            if same_keys && index.variant == config.retrieval.variant && index.config == config.retrieval.sparse {
                return Ok(index);
            }
        }
        Ok(TfidfIndex::build(corpus, config.retrieval.variant, config.retrieval.sparse)?)
    }

    fn vector_store(
        config: &EngineConfig,
        corpus: &Corpus,
        embedder: &dyn EmbeddingBackend,
    ) -> Result<VectorStore, SetupError> {
        let path = config.output_dir.join(VECTOR_STORE_FILE);
        // Stored vectors only describe the embedder that produced them, so a
        // cached store is reused for mock embeddings only when the
        // dimensions agree; real backends always re-embed.
        if config.backends.embedding.kind == BackendKind::Mock {
            if let Ok(store) = VectorStore::load(&path) {
                let pages = corpus.pages().iter().filter(|p| !p.text.trim().is_empty()).map(|p| &p.key);
                if store.dimension() == config.backends.embedding.dimension && store.keys().iter().eq(pages) {
                    return Ok(store);
                }
            }
        }
        Ok(VectorStore::build(corpus, embedder, config.retrieval.embed_batch_size)?)
    }

    /// Character index used by the baseline and by fallbacks.
    pub fn local_index(&self) -> &TfidfIndex {
        self.local
            .as_ref()
            .or(self.sparse.as_ref())
            .expect("either the sparse index is a char index or a local one was built")
    }

    pub fn cascade(&self) -> Cascade<'_> {
        Cascade {
            config: self.config.retrieval.cascade,
            corpus: &self.corpus,
            sparse: self.sparse.as_ref(),
            store: self.store.as_ref(),
            embedder: Some(self.embedder.as_ref()),
            reranker: self.reranker.as_deref(),
        }
    }

    pub fn engine(&self, mode: Mode) -> Engine<'_> {
        Engine {
            mode,
            corpus: &self.corpus,
            cascade: self.cascade(),
            chat: self.chat.as_ref(),
            embedder: Some(self.embedder.as_ref()),
            fallback_index: self.local_index(),
            templates: &self.templates,
            qa: &self.config.qa,
            agent: &self.config.agent,
        }
    }
}
