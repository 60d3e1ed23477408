//! Clinical prompt rendering and text encoders.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed::{derive_seed, fnv1a};
use crate::tensor::Tensor;

pub const DEFAULT_TEXT_WIDTH: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("prompt field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("unknown encode mode `{0}` (expected sentence or tokens)")]
    UnknownMode(String),
    #[error("no embedding for prompt `{0}`")]
    MissingEmbedding(String),
    #[error("embedding file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("encoder does not support {0:?} mode")]
    Unsupported(EncodeMode),
    #[error("embedding file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextPrompt {
    pub location: String,
    pub system: String,
    pub series: String,
    pub rendered: String,
}

/// `"<location> <system> <series>"`, e.g. `"Bottom-45 OSSTEM R"`.
pub fn render_prompt(location: &str, system: &str, series: &str) -> Result<TextPrompt, TextError> {
    for (name, v) in [("location", location), ("system", system), ("series", series)] {
        if v.trim().is_empty() {
            return Err(TextError::EmptyField(name));
        }
    }
    Ok(TextPrompt {
        location: location.to_string(),
        system: system.to_string(),
        series: series.to_string(),
        rendered: format!("{location} {system} {series}"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeMode {
    /// One row for the whole prompt.
    #[default]
    Sentence,
    /// One row per whitespace token.
    Tokens,
}

impl FromStr for EncodeMode {
    type Err = TextError;
    fn from_str(s: &str) -> Result<Self, TextError> {
        match s {
            "sentence" => Ok(Self::Sentence),
            "tokens" => Ok(Self::Tokens),
            other => Err(TextError::UnknownMode(other.to_string())),
        }
    }
}

/// Encoded prompt, `[t, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vectors: Tensor,
}

impl TextEmbedding {
    pub fn tokens(&self) -> usize {
        self.vectors.rows()
    }

    pub fn width(&self) -> usize {
        self.vectors.cols()
    }

    pub fn zeros(tokens: usize, width: usize) -> Self {
        Self { vectors: Tensor::zeros(&[tokens, width]) }
    }
}

pub trait TextEncoder: Send + Sync {
    fn width(&self) -> usize;
    fn encode(&self, prompt: &TextPrompt, mode: EncodeMode) -> Result<TextEmbedding, TextError>;
}

/// Maps each token to a seeded pseudo-random unit vector.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    width: usize,
    seed: u64,
}

impl Default for HashEncoder {
    fn default() -> Self {
        Self::new(DEFAULT_TEXT_WIDTH, 0)
    }
}

impl HashEncoder {
    pub fn new(width: usize, seed: u64) -> Self {
        Self { width, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[fnv1a(token.as_bytes())]));
        let v: Vec<f64> = (0..self.width).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalized(v)
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl TextEncoder for HashEncoder {
    fn width(&self) -> usize {
        self.width
    }

    fn encode(&self, prompt: &TextPrompt, mode: EncodeMode) -> Result<TextEmbedding, TextError> {
        let rows: Vec<Vec<f64>> = prompt.rendered.split_whitespace().map(|t| self.token_vector(t)).collect();
        if rows.is_empty() {
            return Err(TextError::EmptyField("rendered"));
        }
        let vectors = match mode {
            EncodeMode::Tokens => Tensor::from_vec(&[rows.len(), self.width], rows.concat()).expect("layout"),
            EncodeMode::Sentence => {
                let mut avg = vec![0.0; self.width];
                for r in &rows {
                    avg.iter_mut().zip(r).for_each(|(a, x)| *a += x / rows.len() as f64);
                }
                Tensor::from_vec(&[1, self.width], normalized(avg)).expect("layout")
            }
        };
        Ok(TextEmbedding { vectors })
    }
}

/// Precomputed sentence embeddings, one `prompt<TAB>x1 x2 ...` record per line.
#[derive(Debug, Clone)]
pub struct FileEncoder {
    width: usize,
    table: HashMap<String, Vec<f64>>,
}

impl FileEncoder {
    pub fn parse(text: &str) -> Result<Self, TextError> {
        let mut table = HashMap::new();
        let mut width = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (prompt, rest) = line
                .split_once('\t')
                .ok_or_else(|| TextError::Parse { line: line_no, msg: "missing tab separator".into() })?;
            let values = rest
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TextError::Parse { line: line_no, msg: e.to_string() })?;
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(TextError::Parse { line: line_no, msg: "expected finite floats".into() });
            }
            match width {
                None => width = Some(values.len()),
                Some(w) if w != values.len() => {
                    return Err(TextError::Parse {
                        line: line_no,
                        msg: format!("width {} differs from {w}", values.len()),
                    })
                }
                _ => {}
            }
            table.insert(prompt.to_string(), values);
        }
        Ok(Self { width: width.unwrap_or(DEFAULT_TEXT_WIDTH), table })
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl TextEncoder for FileEncoder {
    fn width(&self) -> usize {
        self.width
    }

    fn encode(&self, prompt: &TextPrompt, mode: EncodeMode) -> Result<TextEmbedding, TextError> {
        if mode != EncodeMode::Sentence {
            return Err(TextError::Unsupported(mode));
        }
        let v = self.table.get(&prompt.rendered).ok_or_else(|| TextError::MissingEmbedding(prompt.rendered.clone()))?;
        Ok(TextEmbedding { vectors: Tensor::from_vec(&[1, self.width], v.clone()).expect("layout") })
    }
}
