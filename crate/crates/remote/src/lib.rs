//! HTTP backend for model servers speaking the guidedec JSON protocol.
//!
//! Endpoints:
//!
//! | method | path                         | body / response                                  |
//! |--------|------------------------------|--------------------------------------------------|
//! | GET    | `/v1/info`                   | [`ServerInfo`]                                   |
//! | GET    | `/v1/vocab?model={ar\|mlm}`  | JSON array of token strings in id order          |
//! | GET    | `/v1/merges?model={ar\|mlm}` | JSON array of `"left right"` merge rules by rank |
//! | POST   | `/v1/ar_scores`              | `{"context_ids": [..]}` → `{"scores": [..]}`     |
//! | POST   | `/v1/mlm_scores`             | `{"left_ids": [..], "right_ids": [..]}` → `{"scores": [..]}` |
//!
//! Scoring calls carry ids only. Tokenization happens client-side with a
//! byte-level BPE tokenizer rebuilt from the served vocabulary and merges.

use std::time::Duration;

use guidedec::{AutoregressiveModel, ByteLevelBpe, MaskedModel, ScoreVector, TokenId, Vocabulary};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BACKEND_URL_ENV: &str = "GUIDEDEC_BACKEND_URL";

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("{method} {path} returned HTTP {status}: {body}")]
    Status {
        method: &'static str,
        path: String,
        status: u16,
        body: String,
    },

    #[error("transport error: {0}")]
    Transport(#[from] ureq::Error),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Engine(#[from] guidedec::Error),
}

impl From<RemoteError> for guidedec::Error {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Engine(inner) => inner,
            other => guidedec::Error::Backend(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, RemoteError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub ar_model_name: String,
    pub mlm_model_name: String,
    pub ar_vocab_size: usize,
    pub mlm_vocab_size: usize,
    /// Whether score vectors are log-probabilities.
    pub normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ar,
    Mlm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ar => "ar",
            ModelKind::Mlm => "mlm",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ArScoresRequest<'a> {
    pub context_ids: &'a [TokenId],
}

#[derive(Debug, Serialize)]
pub struct MlmScoresRequest<'a> {
    pub left_ids: &'a [TokenId],
    pub right_ids: &'a [TokenId],
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScoresResponse {
    pub scores: Vec<f64>,
    /// Set by servers that cut the left context to fit the model window.
    #[serde(default)]
    pub truncated: bool,
}

/// Thin blocking client over one server.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    /// Uses `GUIDEDEC_BACKEND_URL` when `base_url` is empty.
    pub fn from_url_or_env(base_url: &str) -> Result<Self> {
        if !base_url.is_empty() {
            return Ok(Self::new(base_url));
        }
        match std::env::var(BACKEND_URL_ENV) {
            Ok(url) if !url.is_empty() => Ok(Self::new(&url)),
            _ => Err(RemoteError::Protocol(format!(
                "no backend URL given and {BACKEND_URL_ENV} is not set"
            ))),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    fn check(
        method: &'static str,
        path: &str,
        mut resp: ureq::http::Response<ureq::Body>,
    ) -> Result<ureq::http::Response<ureq::Body>> {
        let status = resp.status().as_u16();
        if status == 200 {
            return Ok(resp);
        }
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        Err(RemoteError::Status {
            method,
            path: path.to_string(),
            status,
            body,
        })
    }

    fn get_json<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        model: Option<ModelKind>,
    ) -> Result<T> {
        let mut req = self.agent.get(self.url(path));
        if let Some(m) = model {
            req = req.query("model", m.as_str());
        }
        let mut resp = Self::check("GET", path, req.call()?)?;
        Ok(resp.body_mut().read_json()?)
    }

    fn post_json<B: Serialize, T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T> {
        let resp = self.agent.post(self.url(path)).send_json(body)?;
        let mut resp = Self::check("POST", path, resp)?;
        Ok(resp.body_mut().read_json()?)
    }

    pub fn info(&self) -> Result<ServerInfo> {
        self.get_json("/v1/info", None)
    }

    pub fn vocab(&self, model: ModelKind) -> Result<Vocabulary> {
        let tokens: Vec<String> = self.get_json("/v1/vocab", Some(model))?;
        Ok(Vocabulary::new(tokens)?)
    }

    pub fn merges(&self, model: ModelKind) -> Result<Vec<(String, String)>> {
        let rules: Vec<String> = self.get_json("/v1/merges", Some(model))?;
        Ok(ByteLevelBpe::parse_merges(
            rules.iter().map(String::as_str),
        )?)
    }

    pub fn ar_scores(&self, context_ids: &[TokenId]) -> Result<ScoresResponse> {
        self.post_json("/v1/ar_scores", &ArScoresRequest { context_ids })
    }

    pub fn mlm_scores(
        &self,
        left_ids: &[TokenId],
        right_ids: &[TokenId],
    ) -> Result<ScoresResponse> {
        self.post_json(
            "/v1/mlm_scores",
            &MlmScoresRequest {
                left_ids,
                right_ids,
            },
        )
    }
}

fn to_scores(resp: ScoresResponse, expected: usize) -> guidedec::Result<ScoreVector> {
    let scores = ScoreVector::new(resp.scores)?;
    scores.check_len(expected)?;
    Ok(scores)
}

#[derive(Debug, Clone)]
pub struct RemoteArModel {
    client: RemoteClient,
    vocab: Vocabulary,
    normalized: bool,
}

impl AutoregressiveModel for RemoteArModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn normalized(&self) -> bool {
        self.normalized
    }

    fn score(&self, context: &[TokenId]) -> guidedec::Result<ScoreVector> {
        to_scores(self.client.ar_scores(context)?, self.vocab.len())
    }
}

#[derive(Debug, Clone)]
pub struct RemoteMaskedModel {
    client: RemoteClient,
    vocab: Vocabulary,
    normalized: bool,
}

impl MaskedModel for RemoteMaskedModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn normalized(&self) -> bool {
        self.normalized
    }

    fn score_masked(&self, left: &[TokenId], right: &[TokenId]) -> guidedec::Result<ScoreVector> {
        to_scores(self.client.mlm_scores(left, right)?, self.vocab.len())
    }
}

/// Both served models with their tokenizers.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    pub info: ServerInfo,
    pub ar: RemoteArModel,
    pub ar_tokenizer: ByteLevelBpe,
    pub mlm: RemoteMaskedModel,
    pub mlm_tokenizer: ByteLevelBpe,
}

impl RemoteBackend {
    /// Fetches info, vocabularies and merges, and checks that the declared
    /// vocabulary sizes match what is served.
    pub fn connect(client: RemoteClient) -> Result<Self> {
        let info = client.info()?;
        let ar_vocab = client.vocab(ModelKind::Ar)?;
        let mlm_vocab = client.vocab(ModelKind::Mlm)?;
        for (kind, declared, served) in [
            ("ar", info.ar_vocab_size, ar_vocab.len()),
            ("mlm", info.mlm_vocab_size, mlm_vocab.len()),
        ] {
            if declared != served {
                return Err(RemoteError::Protocol(format!(
                    "{kind} vocabulary: /v1/info declares {declared} tokens, /v1/vocab serves {served}"
                )));
            }
        }
        let ar_tokenizer = ByteLevelBpe::new(ar_vocab.clone(), client.merges(ModelKind::Ar)?);
        let mlm_tokenizer = ByteLevelBpe::new(mlm_vocab.clone(), client.merges(ModelKind::Mlm)?);
        Ok(Self {
            ar: RemoteArModel {
                client: client.clone(),
                vocab: ar_vocab,
                normalized: info.normalized,
            },
            mlm: RemoteMaskedModel {
                client,
                vocab: mlm_vocab,
                normalized: info.normalized,
            },
            info,
            ar_tokenizer,
            mlm_tokenizer,
        })
    }
}
