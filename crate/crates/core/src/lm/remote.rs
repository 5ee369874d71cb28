//! HTTP client for the `auglm/1` model-service protocol.
//!
//! Transport failures and 5xx responses are retried with exponential
//! backoff; 4xx responses are passed through immediately. Contract checks
//! (result counts, candidate membership, protocol version) are enforced on
//! the client side.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{LanguageModel, LmScore, TextPair};
use crate::embed::{EmbeddingMatrix, EmbeddingProvider};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: &str = "auglm/1";

#[derive(Clone, Debug)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    /// Attempts after the first one.
    pub retries: usize,
    pub backoff: Duration,
    pub timeout: Duration,
    /// Largest number of pairs/texts sent in one request.
    pub max_batch: usize,
    pub max_new_tokens: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            retries: 3,
            backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(120),
            max_batch: 64,
            max_new_tokens: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceInfo {
    pub protocol: String,
    pub model: String,
    pub embed_dim: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<f32>>,
}

#[derive(Serialize)]
struct PairsRequest<'a> {
    pairs: &'a [TextPair],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<LmScore>,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    input: &'a str,
    candidates: Option<&'a [String]>,
    max_new_tokens: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Serialize)]
struct TrainRequest<'a> {
    pairs: &'a [TextPair],
    lr: f64,
}

#[derive(Deserialize)]
struct TrainResponse {
    loss: f64,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

pub struct RemoteClient {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
    info: ServiceInfo,
}

impl RemoteClient {
    /// Builds the client and checks `/v1/info` for a matching protocol.
    pub fn connect(config: RemoteConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport {
                url: config.endpoint.clone(),
                attempts: 0,
                msg: e.to_string(),
            })?;
        let mut client = RemoteClient {
            config,
            http,
            info: ServiceInfo {
                protocol: String::new(),
                model: String::new(),
                embed_dim: 0,
            },
        };
        let info: ServiceInfo = client.call("/v1/info", None::<&()>)?;
        if info.protocol != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "service speaks {:?}, client expects {PROTOCOL_VERSION:?}",
                info.protocol
            )));
        }
        client.info = info;
        Ok(client)
    }

    pub fn info(&self) -> &ServiceInfo {
        &self.info
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn call<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<R> {
        let url = format!("{}{}", self.config.endpoint, path);
        let attempts = self.config.retries + 1;
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let factor = 1u32 << (attempt - 1).min(16);
                std::thread::sleep(self.config.backoff * factor);
            }
            let req = match body {
                Some(b) => self.http.post(&url).json(b),
                None => self.http.get(&url),
            };
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{url}: attempt {} failed: {e}", attempt + 1);
                    last_err = Some(Error::Transport {
                        url: url.clone(),
                        attempts: attempt + 1,
                        msg: e.to_string(),
                    });
                    continue;
                }
            };
            let status = resp.status();
            let text = resp.text().map_err(|e| Error::Transport {
                url: url.clone(),
                attempts: attempt + 1,
                msg: e.to_string(),
            })?;
            if status.is_success() {
                return serde_json::from_str(&text)
                    .map_err(|e| Error::Protocol(format!("{url}: malformed response body: {e}")));
            }
            let msg = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            let err = Error::Service {
                status: status.as_u16(),
                msg,
            };
            if status.is_server_error() {
                log::warn!("{url}: attempt {} got {status}", attempt + 1);
                last_err = Some(err);
                continue;
            }
            return Err(err);
        }
        Err(last_err.expect("at least one attempt"))
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        let mut rows = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.max_batch.max(1)) {
            let resp: EmbedResponse = self.call("/v1/embed", Some(&EmbedRequest { texts: chunk }))?;
            if resp.dim != self.info.embed_dim {
                return Err(Error::Protocol(format!(
                    "/v1/embed returned dim {}, /v1/info announced {}",
                    resp.dim, self.info.embed_dim
                )));
            }
            if resp.embeddings.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "/v1/embed returned {} rows for {} texts",
                    resp.embeddings.len(),
                    chunk.len()
                )));
            }
            rows.extend(resp.embeddings);
        }
        EmbeddingMatrix::from_rows(&rows, self.info.embed_dim)
            .map_err(|e| Error::Protocol(format!("/v1/embed: {e}")))
    }
}

impl EmbeddingProvider for RemoteClient {
    fn dim(&self) -> usize {
        self.info.embed_dim
    }

    fn embed(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        self.embed_texts(texts)
    }
}

impl LanguageModel for RemoteClient {
    fn score(&self, pairs: &[TextPair]) -> Result<Vec<LmScore>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.config.max_batch.max(1)) {
            let resp: ScoreResponse = self.call("/v1/score", Some(&PairsRequest { pairs: chunk }))?;
            if resp.scores.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "/v1/score returned {} scores for {} pairs",
                    resp.scores.len(),
                    chunk.len()
                )));
            }
            if let Some(s) = resp.scores.iter().find(|s| !(s.log_likelihood <= 0.0)) {
                return Err(Error::Protocol(format!(
                    "/v1/score returned log-likelihood {} (must be <= 0)",
                    s.log_likelihood
                )));
            }
            out.extend(resp.scores);
        }
        Ok(out)
    }

    fn generate(&self, input: &str, candidates: Option<&[String]>) -> Result<String> {
        if candidates.is_some_and(|c| c.is_empty()) {
            return Err(Error::Invalid("generation needs a nonempty candidate list".into()));
        }
        let resp: GenerateResponse = self.call(
            "/v1/generate",
            Some(&GenerateRequest {
                input,
                candidates,
                max_new_tokens: self.config.max_new_tokens,
            }),
        )?;
        if let Some(c) = candidates {
            if !c.contains(&resp.text) {
                return Err(Error::Protocol(format!(
                    "/v1/generate returned {:?}, not one of the {} candidates",
                    resp.text,
                    c.len()
                )));
            }
        }
        Ok(resp.text)
    }

    fn train_step(&mut self, pairs: &[TextPair], lr: f64) -> Result<f64> {
        let resp: TrainResponse = self.call("/v1/train_step", Some(&TrainRequest { pairs, lr }))?;
        if !resp.loss.is_finite() {
            return Err(Error::NonFinite(format!("remote train_step loss {}", resp.loss)));
        }
        Ok(resp.loss)
    }

    fn state_digest(&self) -> Result<String> {
        Ok(format!("remote:{}:{}", self.config.endpoint, self.info.model))
    }
}
