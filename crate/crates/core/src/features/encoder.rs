//! Contextual text encoders for the embedding channel.

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::FeatureError;

/// Token-by-hidden-unit output of a contextual encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }
}

/// A pre-trained bidirectional text encoder run in inference mode.
///
/// `embed` must be deterministic. Empty text yields a single row holding the
/// start-token representation.
pub trait ContextualEncoder: Send + Sync {
    fn id(&self) -> String;
    fn width(&self) -> usize;
    fn max_len(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingMatrix, FeatureError>;
}

pub fn embed_text(text: &str, encoder: &dyn ContextualEncoder) -> Result<EmbeddingMatrix, FeatureError> {
    encoder.embed(text)
}

/// Hash-based stand-in encoder for tests and provider-free runs.
///
/// Tokens are the whitespace-separated chunks of the text (the empty text
/// becomes the single token `[CLS]`). Entry `(t, j)` is derived from
/// `SHA-256(token ++ 0x1F ++ decimal(j))`: the first eight digest bytes are
/// read as a big-endian `u64` `h`, and the value is `(h >> 11) / 2^53 * 2 - 1`,
/// which lies in `[-1, 1)`. Inputs longer than `max_len` tokens are cut.
#[derive(Debug, Clone, Copy)]
pub struct StubEncoder {
    pub width: usize,
    pub max_len: usize,
}

impl Default for StubEncoder {
    fn default() -> Self {
        StubEncoder { width: 8, max_len: 512 }
    }
}

pub const START_TOKEN: &str = "[CLS]";

impl StubEncoder {
    pub fn value(token: &str, j: usize) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(token.as_bytes());
        hasher.update([0x1f]);
        hasher.update(j.to_string().as_bytes());
        let digest = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        let h = u64::from_be_bytes(head);
        (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

impl ContextualEncoder for StubEncoder {
    fn id(&self) -> String {
        format!("stub-sha256@1/w{}", self.width)
    }

    fn width(&self) -> usize {
        self.width
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn embed(&self, text: &str) -> Result<EmbeddingMatrix, FeatureError> {
        let mut tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            tokens.push(START_TOKEN);
        }
        if tokens.len() > self.max_len {
            log::warn!("encoder input truncated from {} to {} tokens", tokens.len(), self.max_len);
            tokens.truncate(self.max_len);
        }
        let data = Array2::from_shape_fn((tokens.len(), self.width), |(t, j)| Self::value(tokens[t], j));
        Ok(EmbeddingMatrix { data })
    }
}
