//! Chat and embedding client contracts plus small wrappers.

use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::ingest::FrameRef;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("empty model response")]
    Empty,
    #[error("embedding dimension {got} does not match expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("cannot attach frame {0}: {1}")]
    Frame(String, String),
    #[error("{0}")]
    Other(String),
}

impl ClientError {
    /// Whether a retry has a chance of succeeding.
    pub fn is_transient(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A chat-completion model. Vision input is passed as frame references.
pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str, images: &[FrameRef], temperature: f64) -> Result<String, ClientError>;
}

/// A text embedding model returning unit-normalized vectors of a fixed
/// dimension.
pub trait EmbeddingClient: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError>;
    fn dim(&self) -> usize;
}

impl<C: ChatClient + ?Sized> ChatClient for std::sync::Arc<C> {
    fn complete(&self, prompt: &str, images: &[FrameRef], temperature: f64) -> Result<String, ClientError> {
        (**self).complete(prompt, images, temperature)
    }
}

impl<E: EmbeddingClient + ?Sized> EmbeddingClient for std::sync::Arc<E> {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        (**self).embed(text)
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
}

/// Counts calls passing through to the inner client.
pub struct CountingChat<C> {
    inner: C,
    calls: AtomicUsize,
}

impl<C> CountingChat<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<C: ChatClient> ChatClient for CountingChat<C> {
    fn complete(&self, prompt: &str, images: &[FrameRef], temperature: f64) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt, images, temperature)
    }
}

pub(crate) fn l2_normalize(v: &mut [f64]) -> Result<(), ClientError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(ClientError::Malformed("zero or non-finite embedding".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}
