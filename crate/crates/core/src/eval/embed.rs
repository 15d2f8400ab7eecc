use std::collections::BTreeMap;

use async_trait::async_trait;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddedText, EvalError, Result};

/// Lowercased runs of alphanumeric characters; punctuation and whitespace
/// separate tokens and are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    async fn embed(&self, text: &str) -> Result<EmbeddedText>;
}

/// Offline embedder: each token gets a fixed pseudo-random unit vector
/// seeded from a hash of the token.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 64, seed: 0 }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(EvalError::Precondition("embedding dimension must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    pub fn vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

#[async_trait]
impl Embedder for HashEmbedder {
    fn name(&self) -> &str {
        "hash"
    }

    async fn embed(&self, text: &str) -> Result<EmbeddedText> {
        let tokens = tokenize(text);
        let vectors = tokens.iter().map(|t| self.vector(t)).collect();
        EmbeddedText::new(tokens, vectors)
    }
}

/// One basis vector per vocabulary token, so distinct tokens are orthogonal.
#[derive(Debug, Clone, Default)]
pub struct OneHotEmbedder {
    vocabulary: BTreeMap<String, usize>,
}

impl OneHotEmbedder {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocabulary = BTreeMap::new();
        for text in texts {
            for t in tokenize(text) {
                let next = vocabulary.len();
                vocabulary.entry(t).or_insert(next);
            }
        }
        Self { vocabulary }
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }
}

#[async_trait]
impl Embedder for OneHotEmbedder {
    fn name(&self) -> &str {
        "one-hot"
    }

    async fn embed(&self, text: &str) -> Result<EmbeddedText> {
        let tokens = tokenize(text);
        let mut vectors = Vec::with_capacity(tokens.len());
        for t in &tokens {
            let i = *self
                .vocabulary
                .get(t)
                .ok_or_else(|| EvalError::Embedder(format!("token {t:?} not in vocabulary")))?;
            let mut v = vec![0.0; self.dim()];
            v[i] = 1.0;
            vectors.push(v);
        }
        EmbeddedText::new(tokens, vectors)
    }
}

pub const EMBED_URL_ENV: &str = "AIRLENS_EMBED_URL";
pub const EMBED_KEY_ENV: &str = "AIRLENS_EMBED_API_KEY";

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    tokens: Vec<String>,
    embeddings: Vec<Vec<f64>>,
}

/// Contextual token embeddings from an HTTP service.
///
/// Protocol: `POST <url>` with `{"text": ...}`, answered by
/// `{"tokens": [...], "embeddings": [[...], ...]}`.
pub struct HttpEmbedder {
    http: reqwest::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpEmbedder {
    pub fn new(url: &str, api_key: Option<String>) -> Result<Self> {
        crate::airdata::install_tls_provider();
        let http = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| EvalError::Embedder(e.to_string()))?;
        Ok(Self {
            http,
            url: url.to_string(),
            api_key,
        })
    }

    pub fn from_env() -> Result<Self> {
        let url = std::env::var(EMBED_URL_ENV)
            .ok()
            .filter(|u| !u.is_empty())
            .ok_or_else(|| EvalError::Embedder(format!("{EMBED_URL_ENV} is not set")))?;
        Self::new(&url, std::env::var(EMBED_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn name(&self) -> &str {
        "http"
    }

    async fn embed(&self, text: &str) -> Result<EmbeddedText> {
        let mut req = self.http.post(&self.url).json(&EmbedRequest { text });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| EvalError::Embedder(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(EvalError::Embedder(format!("status {status}: {body}")));
        }
        let body: EmbedResponse = resp.json().await.map_err(|e| EvalError::Embedder(e.to_string()))?;
        EmbeddedText::new(body.tokens, body.embeddings)
    }
}
