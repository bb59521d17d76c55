//! Frozen text encoder: a deterministic tokenizer and a hash-seeded
//! embedding table with no trainable state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numcore::Tensor;

pub const NULL_TOKEN: &str = "⌀";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextEncoderConfig {
    pub max_tokens: usize,
    pub dim: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self { max_tokens: 64, dim: 48 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn null() -> Self {
        Self(vec![NULL_TOKEN.to_string()])
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || c.is_ascii_punctuation()
}

/// Lowercases, splits on whitespace and punctuation and keeps at most
/// `max_tokens` tokens. Text without any token maps to the null token.
pub fn tokenize(text: &str, max_tokens: usize) -> TokenSeq {
    let toks: Vec<String> = text
        .split(is_separator)
        .filter(|t| !t.is_empty())
        .take(max_tokens.max(1))
        .map(str::to_lowercase)
        .collect();
    if toks.is_empty() {
        TokenSeq::null()
    } else {
        TokenSeq(toks)
    }
}

/// Stable 64-bit token hash: the first eight bytes of SHA-256.
pub fn token_hash(token: &str) -> u64 {
    let d = Sha256::digest(token.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Fixed vector of a token: Gaussian draws rescaled to unit mean square, so
/// every row has norm `sqrt(dim)`.
pub fn token_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(token_hash(token));
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let ms = raw.iter().map(|x| x * x).sum::<f64>() / dim as f64;
    let k = 1.0 / ms.sqrt();
    raw.into_iter().map(|x| x * k).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
}

impl TextEncoder {
    pub fn new(config: TextEncoderConfig) -> Self {
        Self { config }
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        tokenize(text, self.config.max_tokens)
    }

    /// `N_t × d_t` matrix, one row per token.
    pub fn embed(&self, tokens: &TokenSeq) -> Tensor {
        let dim = self.config.dim;
        let mut data = Vec::with_capacity(tokens.len() * dim);
        for t in tokens.tokens() {
            data.extend(token_vector(t, dim));
        }
        Tensor::new(&[tokens.len(), dim], data).expect("nonempty token sequence")
    }

    pub fn encode(&self, text: &str) -> Tensor {
        self.embed(&self.tokenize(text))
    }

    /// SHA-256 over the embedding rows of `vocab`, in the given order.
    pub fn table_hash<'a>(&self, vocab: impl IntoIterator<Item = &'a str>) -> String {
        let mut h = Sha256::new();
        for tok in vocab {
            h.update(tok.as_bytes());
            h.update([0u8]);
            for v in token_vector(tok, self.config.dim) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("High over north-west", 64).tokens(), ["high", "over", "north", "west"]);
        assert_eq!(tokenize("", 64).tokens(), [NULL_TOKEN]);
        assert_eq!(tokenize(" ,;. ", 64).tokens(), [NULL_TOKEN]);
        assert_eq!(tokenize("a b c d", 2).tokens(), ["a", "b"]);
        assert_eq!(tokenize("z: Strong maximum +2.3", 64).tokens(), ["z", "strong", "maximum", "2", "3"]);
    }

    #[test]
    fn repeated_tokens_share_rows() {
        let enc = TextEncoder::default();
        let m = enc.encode("ridge trough ridge");
        assert_eq!(m.shape(), [3, 48]);
        assert_eq!(m.row(0), m.row(2));
        assert_ne!(m.row(0), m.row(1));
    }

    #[test]
    fn embedding_is_reproducible() {
        let enc = TextEncoder::default();
        let a = enc.encode("z: moderate maximum +1.2 near center");
        let b = enc.encode("z: moderate maximum +1.2 near center");
        assert_eq!(a, b);
        assert_eq!(enc.table_hash(["z", "near"]), enc.table_hash(["z", "near"]));
        assert_ne!(enc.table_hash(["z", "near"]), enc.table_hash(["near", "z"]));
    }

    #[test]
    fn row_norms_concentrate() {
        let dim = 48;
        let root = (dim as f64).sqrt();
        for i in 0..10_000 {
            let v = token_vector(&format!("tok{i}"), dim);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n >= 0.5 * root && n <= 1.5 * root, "token {i}: norm {n}");
        }
    }

    #[test]
    fn coordinates_look_standard_normal() {
        let n = 10_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for i in 0..n {
            let v = token_vector(&format!("w{i}"), 48);
            sum += v[7];
            sq += v[7] * v[7];
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn mock_vocabulary_has_no_hash_collisions() {
        let mut words: Vec<String> = ["weak", "moderate", "strong", "maximum", "minimum", "near", "circulation", "may",
            "turn", "the", "clockwise", "counterclockwise", "north", "south", "east", "west", "center", "z", "t", "u", "v",
            "cause", "causes", "force", "forces", "produce", "will", "downstream", "ridging", "warming", "stronger",
            "winds", NULL_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        words.extend((0..100).map(|d| d.to_string()));
        let mut hashes: Vec<u64> = words.iter().map(|w| token_hash(w)).collect();
        hashes.sort_unstable();
        hashes.dedup();
        assert_eq!(hashes.len(), words.len());
    }
}
