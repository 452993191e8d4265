//! Prompt tokenization and the frozen toy text encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Placeholder string bound to a learned style token.
pub const PLACEHOLDER: &str = "<*>";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Bos,
    Eos,
    Placeholder,
    Word(String),
}

/// Lowercased whitespace split with surrounding punctuation stripped.
/// Every sequence is wrapped in `Bos … Eos`, so `""` tokenizes to two tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = vec![Token::Bos];
    for raw in text.split_whitespace() {
        let trimmed = raw.trim_matches(|c: char| matches!(c, ',' | '.' | ';' | ':' | '!' | '?' | '"' | '\''));
        if trimmed.is_empty() {
            continue;
        }
        if trimmed == PLACEHOLDER {
            tokens.push(Token::Placeholder);
        } else {
            tokens.push(Token::Word(trimmed.to_lowercase()));
        }
    }
    tokens.push(Token::Eos);
    tokens
}

/// A sequence of per-token embedding vectors, `len × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEmbedding {
    dim: usize,
    data: Vec<f64>,
}

impl PromptEmbedding {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn token_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mean over token positions.
    pub fn pooled(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut out = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (o, v) in out.iter_mut().zip(self.token(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

/// Frozen text encoder adapter.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Context-free embedding of a single token (before positional terms).
    fn token_embedding(&self, token: &Token) -> Vec<f64>;

    /// Positional term added at sequence position `pos`.
    fn positional(&self, pos: usize) -> Vec<f64>;

    /// Stable identifier of the frozen weights, used as a checksum.
    fn fingerprint(&self) -> String;

    /// Embeds a token sequence; `splice` overrides the token-level embedding
    /// at every placeholder position.
    fn embed_tokens(&self, tokens: &[Token], splice: Option<&[f64]>) -> Result<PromptEmbedding> {
        let dim = self.dim();
        if let Some(v) = splice {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
        }
        let mut data = Vec::with_capacity(tokens.len() * dim);
        for (pos, tok) in tokens.iter().enumerate() {
            let base = match (tok, splice) {
                (Token::Placeholder, Some(v)) => v.to_vec(),
                _ => self.token_embedding(tok),
            };
            data.extend(base.iter().zip(self.positional(pos)).map(|(a, b)| a + b));
        }
        PromptEmbedding::new(dim, data)
    }

    fn encode(&self, text: &str) -> Result<PromptEmbedding> {
        self.embed_tokens(&tokenize(text), None)
    }

    /// Token-level embedding of a single word, used to initialize style tokens.
    fn word_embedding(&self, word: &str) -> Vec<f64> {
        self.token_embedding(&Token::Word(word.to_lowercase()))
    }
}

pub const DEFAULT_EMBED_DIM: usize = 8;

/// Hash-seeded embedding table: every word gets a fixed Gaussian vector
/// derived from the encoder seed and the word itself. Positional terms are
/// small deterministic sinusoids. The encoder has no trainable state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyTextEncoder {
    dim: usize,
    seed: u64,
}

impl ToyTextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn key(token: &Token) -> String {
        match token {
            Token::Bos => "\u{1}bos".into(),
            Token::Eos => "\u{1}eos".into(),
            Token::Placeholder => "\u{1}placeholder".into(),
            Token::Word(w) => w.clone(),
        }
    }
}

impl TextEncoder for ToyTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn token_embedding(&self, token: &Token) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(Self::key(token).as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    fn positional(&self, pos: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|d| 0.1 * ((pos as f64 + 1.0) * (d as f64 + 1.0) * 0.37).sin())
            .collect()
    }

    fn fingerprint(&self) -> String {
        format!("toy-text-{}-{}", self.dim, self.seed)
    }
}
