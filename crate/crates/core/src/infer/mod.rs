//! Answer generation: decoding configuration, the [`Generator`] abstraction
//! with mock and HTTP backends, top-k answer collection, and batch runs.

mod batch;
mod http;
mod mock;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::normalize_answer;
use crate::kg::QueryKey;

pub use batch::{read_predictions, run_batch, BatchOptions, BatchSummary};
pub use http::{HttpGenerator, RetryPolicy};
pub use mock::{MockOracle, MockSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub mode: DecodeMode,
    pub top_p: f32,
    pub top_k: u32,
    pub num_return_sequences: usize,
    pub max_new_tokens: u32,
    pub temperature: f32,
}

impl GenerationConfig {
    /// Sampling off, top-k 1: one deterministic answer.
    pub fn greedy() -> Self {
        GenerationConfig {
            mode: DecodeMode::Greedy,
            top_p: 1.0,
            top_k: 1,
            num_return_sequences: 1,
            max_new_tokens: 64,
            temperature: 0.0,
        }
    }

    pub fn sampled(num_return_sequences: usize) -> Self {
        GenerationConfig {
            mode: DecodeMode::Sampled,
            top_p: 0.95,
            top_k: 20,
            num_return_sequences: num_return_sequences.max(1),
            max_new_tokens: 64,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.mode == DecodeMode::Greedy && self.num_return_sequences != 1 {
            return Err("greedy decoding returns exactly one sequence".into());
        }
        if self.num_return_sequences == 0 {
            return Err("num_return_sequences must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.top_p) || self.top_p == 0.0 {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        Ok(())
    }
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self::sampled(1)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub key: QueryKey,
    pub prompt: &'a str,
    /// Index of this call within a query's collection loop.
    pub attempt: u32,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GenerateError {
    #[error("endpoint exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("endpoint rejected request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed endpoint reply: {0}")]
    Malformed(String),
}

impl GenerateError {
    pub fn is_exhaustion(&self) -> bool {
        matches!(self, GenerateError::Exhausted { .. })
    }
}

pub trait Generator: Send + Sync {
    fn generate(
        &self,
        req: &GenerationRequest<'_>,
        cfg: &GenerationConfig,
    ) -> Result<Vec<String>, GenerateError>;

    /// Short description recorded in output headers.
    fn describe(&self) -> String;
}

/// How repeated samples become a ranked list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ranking {
    /// Earliest first appearance ranks highest.
    #[default]
    FirstOccurrence,
    /// Most frequent first, ties broken by first appearance.
    Frequency,
}

/// First non-empty line, without surrounding quotes or punctuation.
pub fn extract_answer(generation: &str) -> String {
    let line = generation
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    line.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '.' | ',' | ';' | ':' | '!' | '*')
    })
    .to_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub key: QueryKey,
    pub answers: Vec<String>,
    pub raw_generations: Vec<String>,
    pub latency_ms: u128,
    pub endpoint: String,
    /// Fewer than k distinct answers after the attempt cap.
    pub short: bool,
    pub error: Option<GenerateError>,
}

fn rank(generations: &[String], ranking: Ranking) -> Vec<String> {
    // (normalized, surface of first occurrence, count, first index)
    let mut seen: Vec<(String, String, usize, usize)> = Vec::new();
    for (i, g) in generations.iter().enumerate() {
        let surface = extract_answer(g);
        let norm = normalize_answer(&surface);
        if norm.is_empty() {
            continue;
        }
        match seen.iter_mut().find(|e| e.0 == norm) {
            Some(entry) => entry.2 += 1,
            None => seen.push((norm, surface, 1, i)),
        }
    }
    if ranking == Ranking::Frequency {
        seen.sort_by(|a, b| b.2.cmp(&a.2).then(a.3.cmp(&b.3)));
    }
    seen.into_iter().map(|e| e.1).collect()
}

/// Collects up to `k` distinct answers. `k = 1` issues a single greedy call;
/// larger `k` samples in batches of `cfg.num_return_sequences` until `k`
/// distinct answers appear or `3k` generations have been drawn.
pub fn predict_top_k(
    generator: &dyn Generator,
    key: QueryKey,
    prompt: &str,
    k: usize,
    cfg: &GenerationConfig,
    ranking: Ranking,
) -> Prediction {
    let started = Instant::now();
    let k = k.max(1);
    let mut generations = Vec::new();
    let mut error = None;
    let mut answers;

    if k == 1 {
        let greedy = GenerationConfig::greedy();
        let req = GenerationRequest {
            key,
            prompt,
            attempt: 0,
        };
        match generator.generate(&req, &greedy) {
            Ok(mut gens) => {
                gens.truncate(1);
                generations = gens;
            }
            Err(e) => error = Some(e),
        }
        answers = rank(&generations, ranking);
    } else {
        let cap = 3 * k;
        let mut attempt = 0;
        answers = Vec::new();
        while answers.len() < k && generations.len() < cap {
            let batch = cfg.num_return_sequences.min(cap - generations.len());
            let call_cfg = GenerationConfig {
                mode: DecodeMode::Sampled,
                num_return_sequences: batch,
                ..cfg.clone()
            };
            let req = GenerationRequest {
                key,
                prompt,
                attempt,
            };
            attempt += 1;
            match generator.generate(&req, &call_cfg) {
                Ok(gens) if gens.is_empty() => {
                    error = Some(GenerateError::Malformed("no generations returned".into()));
                    break;
                }
                Ok(mut gens) => {
                    gens.truncate(batch);
                    generations.extend(gens);
                }
                Err(e) => {
                    error = Some(e);
                    break;
                }
            }
            answers = rank(&generations, ranking);
        }
    }

    let short = error.is_none() && answers.len() < k;
    answers.truncate(k);
    Prediction {
        key,
        answers,
        raw_generations: generations,
        latency_ms: started.elapsed().as_millis(),
        endpoint: generator.describe(),
        short,
        error,
    }
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: u64,
    pub split: crate::kg::Split,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub short: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionLine {
    pub fn key(&self) -> QueryKey {
        QueryKey {
            split: self.split,
            id: self.id,
        }
    }
}

impl From<&Prediction> for PredictionLine {
    fn from(p: &Prediction) -> Self {
        PredictionLine {
            id: p.key.id,
            split: p.key.split,
            answers: p.answers.clone(),
            short: p.short,
            error: p.error.as_ref().map(ToString::to_string),
        }
    }
}
