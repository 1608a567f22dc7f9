//! Embedding providers mapping keyframes to fixed-dimension vectors.

use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use crate::http::JsonClient;

/// What gets embedded for a keyframe: its image, or the raw state row when
/// the trajectory carries no frames.
#[derive(Debug, Clone, Copy)]
pub enum EmbedInput<'a> {
    Image(&'a Path),
    StateRow(&'a [f64]),
}

pub trait EmbeddingProvider: Send + Sync {
    /// Output dimension; fixed for the lifetime of the provider.
    fn dim(&self) -> usize;

    /// Deterministic embedding of one input.
    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f64>, String>;

    /// False if calls must not overlap; callers then go through [`Serialized`].
    fn concurrent(&self) -> bool {
        true
    }
}

/// Identity on state rows.
#[derive(Debug, Clone, Copy)]
pub struct StateEmbedder {
    pub dim: usize,
}

impl EmbeddingProvider for StateEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f64>, String> {
        match input {
            EmbedInput::StateRow(row) if row.len() == self.dim => Ok(row.to_vec()),
            EmbedInput::StateRow(row) => Err(format!(
                "state row has {} entries, provider expects {}",
                row.len(),
                self.dim
            )),
            EmbedInput::Image(p) => Err(format!(
                "state embedder cannot embed image {}",
                p.display()
            )),
        }
    }
}

/// Downsampled grayscale pixels, mean-normalized.
#[derive(Debug, Clone, Copy)]
pub struct PixelEmbedder {
    pub side: u32,
}

impl Default for PixelEmbedder {
    fn default() -> Self {
        Self { side: 8 }
    }
}

impl EmbeddingProvider for PixelEmbedder {
    fn dim(&self) -> usize {
        (self.side * self.side) as usize
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f64>, String> {
        let EmbedInput::Image(path) = input else {
            return Err("pixel embedder requires image frames".into());
        };
        let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let small = img
            .grayscale()
            .resize_exact(self.side, self.side, image::imageops::FilterType::Triangle)
            .to_luma8();
        let mut v: Vec<f64> = small.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        Ok(v)
    }
}

/// Client for an external embedding service.
///
/// Request: `{"inputs": [...]}` where each input is a base64 string (image
/// bytes) or a float array (state row). Response: `{"embeddings": [[...]]}`.
#[derive(Debug)]
pub struct HttpEmbeddingClient {
    client: JsonClient,
    dim: usize,
}

impl HttpEmbeddingClient {
    pub fn new(url: impl Into<String>, dim: usize, timeout: Duration, max_retries: u32) -> Self {
        Self {
            client: JsonClient::new(url, timeout, max_retries, None),
            dim,
        }
    }

    fn encode(input: EmbedInput<'_>) -> Result<Value, String> {
        match input {
            EmbedInput::StateRow(row) => Ok(json!(row)),
            EmbedInput::Image(path) => {
                let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
                Ok(json!(base64::engine::general_purpose::STANDARD.encode(bytes)))
            }
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingClient {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f64>, String> {
        let body = json!({ "inputs": [Self::encode(input)?] });
        let resp = self.client.post(&body).map_err(|e| e.to_string())?;
        let first = resp
            .get("embeddings")
            .and_then(Value::as_array)
            .and_then(|a| a.first())
            .and_then(Value::as_array)
            .ok_or_else(|| format!("malformed embedding response: {resp}"))?;
        let v: Vec<f64> = first
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| format!("non-numeric embedding entry {x}")))
            .collect::<Result<_, _>>()?;
        if v.len() != self.dim {
            return Err(format!("embedding has {} entries, expected {}", v.len(), self.dim));
        }
        Ok(v)
    }
}

/// Serializes calls to a provider that is not safe for concurrent use.
pub struct Serialized<P> {
    inner: P,
    lock: Mutex<()>,
}

impl<P: EmbeddingProvider> Serialized<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            lock: Mutex::new(()),
        }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for Serialized<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f64>, String> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        self.inner.embed(input)
    }

    fn concurrent(&self) -> bool {
        true
    }
}
