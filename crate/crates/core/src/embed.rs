//! Text embedders: a deterministic feature-hashing embedder for tests and
//! offline use, and an HTTP client for an external embedding service.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::client::{ClientError, RetryPolicy};

pub const DEFAULT_DIMENSION: usize = 256;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EmbedError {
    #[error("embedding service failed: {0}")]
    Client(#[from] ClientError),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("service returned {got} embeddings for {expected} texts")]
    Count { expected: usize, got: usize },
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    /// One vector per input text, each of length [`Embedder::dimension`].
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

impl<E: Embedder + ?Sized> Embedder for std::sync::Arc<E> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        (**self).embed(texts)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bag-of-words feature hashing: lowercase, split on non-alphanumeric
/// chars, add 1 to bucket `fnv1a64(token) % dimension` per token, then
/// L2-normalize. Text without tokens maps to the unit vector `e0`.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut counts = vec![0f64; self.dimension];
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            counts[(fnv1a64(token.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            let mut e0 = vec![0f32; self.dimension];
            e0[0] = 1.0;
            return e0;
        }
        counts.iter().map(|c| (c / norm) as f32).collect()
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbedResponse {
    OpenAi { data: Vec<EmbedDatum> },
    Bare(Vec<Vec<f32>>),
}

#[derive(Deserialize)]
struct EmbedDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

/// Client for an OpenAI-compatible `/embeddings` endpoint. Requests are sent
/// in batches of at most `batch_size` texts, each retried under the policy.
/// Bare JSON arrays of vectors (as returned by text-embeddings-inference
/// `/embed`) are accepted too.
pub struct HttpEmbedder {
    http: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dimension: usize,
    batch_size: usize,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        batch_size: usize,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, EmbedError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            dimension,
            batch_size: batch_size.max(1),
            retry,
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn embed_batch(&self, batch: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let parsed = self.retry.run(|_| {
            let mut req = self.http.post(&self.endpoint).json(&EmbedRequest {
                model: &self.model,
                input: batch,
            });
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
            let status = resp.status();
            if !status.is_success() {
                return Err(ClientError::Status {
                    status: status.as_u16(),
                    body: resp.text().unwrap_or_default(),
                });
            }
            resp.json::<EmbedResponse>().map_err(|e| ClientError::Parse(e.to_string()))
        })?;
        let vectors = match parsed {
            EmbedResponse::Bare(v) => v,
            EmbedResponse::OpenAi { mut data } => {
                data.sort_by_key(|d| d.index.unwrap_or(usize::MAX));
                data.into_iter().map(|d| d.embedding).collect()
            }
        };
        if vectors.len() != batch.len() {
            return Err(EmbedError::Count {
                expected: batch.len(),
                got: vectors.len(),
            });
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != self.dimension) {
            return Err(EmbedError::Dimension {
                expected: self.dimension,
                got: bad.len(),
            });
        }
        Ok(vectors)
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(chunk)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
    }

    fn one(e: &HashingEmbedder, t: &str) -> Vec<f32> {
        e.embed(&[t.to_string()]).unwrap().remove(0)
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn deterministic_and_order_invariant() {
        let e = HashingEmbedder::default();
        assert_eq!(one(&e, "theorem"), one(&e, "theorem"));
        assert_eq!(one(&e, "a b"), one(&e, "b a"));
        assert_eq!(one(&e, "Prime, NUMBERS!"), one(&e, "prime numbers"));
        let v = one(&e, "theorem");
        assert_eq!(v.len(), 256);
        let norm: f64 = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_maps_to_e0() {
        let e = HashingEmbedder::new(8);
        assert_eq!(one(&e, " ,;- "), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn related_phrases_score_higher() {
        let e = HashingEmbedder::default();
        let q = one(&e, "prime numbers theorem");
        let near = cos(&q, &one(&e, "prime number theorem"));
        let far = cos(&q, &one(&e, "elliptic curve rank"));
        assert!(near > far, "{near} vs {far}");
    }
}
