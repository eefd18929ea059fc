//! Prompt composition and instruction-data emitters.
//!
//! A prompt is up to three parts joined by newlines, in fixed order:
//!
//! ```text
//! Please complete this triple: (h, r, ?). h means <description>
//! Please give an answer outside the list: [e1, e2, ...]
//! The neighbors of h are as follows: (h, r1, e1), (h, r2, e2, r3, e3)
//! ```
//!
//! Empty parts are left out entirely.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, KnowledgeGraph, Query, QueryKey, Split};
use crate::subgraph::{self, ContextOptions, ContextPath, MAX_DEPTH};

pub const NEGATIVE_HEADER: &str = "Please give an answer outside the list:";
pub const NEIGHBOR_HEADER_PREFIX: &str = "The neighbors of ";
pub const NEIGHBOR_HEADER_SUFFIX: &str = " are as follows:";
pub const PART_SEPARATOR: &str = "\n";

/// Basic-question templates. Placeholders: `{anchor}`, `{relation}`,
/// `{time}` (empty, or ` at <timestamp>` for temporal queries) and, in the
/// description clause, `{description}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Templates {
    pub forward: String,
    pub backward: String,
    pub description: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            forward: "Please complete this triple: ({anchor}, {relation}, ?){time}.".into(),
            backward: "Please complete this triple: (?, {relation}, {anchor}){time}.".into(),
            description: " {anchor} means {description}".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub use_negatives: bool,
    pub use_neighbors: bool,
    pub use_descriptions: bool,
    /// Path depth of the neighbor context.
    pub p: usize,
    /// Total negatives + neighbors injected per prompt.
    #[serde(alias = "M")]
    pub budget: usize,
    pub seed: u64,
    pub char_cap: usize,
    pub templates: Templates,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            use_negatives: true,
            use_neighbors: true,
            use_descriptions: false,
            p: 1,
            budget: 100,
            seed: 0,
            char_cap: 8_000,
            templates: Templates::default(),
        }
    }
}

impl PromptConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PromptConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > MAX_DEPTH {
            return Err(Error::Config(format!("p must be in 0..={MAX_DEPTH}, got {}", self.p)));
        }
        if self.char_cap == 0 {
            return Err(Error::Config("char_cap must be positive".into()));
        }
        Ok(())
    }

    /// Short digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }

    pub fn context_options(&self) -> ContextOptions {
        ContextOptions {
            use_negatives: self.use_negatives,
            use_neighbors: self.use_neighbors,
            depth: self.p,
            budget: self.budget,
            seed: self.seed,
        }
    }
}

/// Entity descriptions keyed by the identifier used in the dataset files.
#[derive(Debug, Default, Clone)]
pub struct Descriptions(HashMap<String, String>);

impl Descriptions {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut map = HashMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (entity, desc) = line.split_once('\t').ok_or_else(|| Error::Malformed {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "expected `entity \\t description`".into(),
            })?;
            map.insert(entity.to_owned(), desc.to_owned());
        }
        Ok(Descriptions(map))
    }

    pub fn insert(&mut self, entity: impl Into<String>, desc: impl Into<String>) {
        self.0.insert(entity.into(), desc.into());
    }

    pub fn get(&self, kg: &KnowledgeGraph, e: EntityId) -> Option<&str> {
        let raw = kg.entities().name(e.0)?;
        self.0
            .get(raw)
            .or_else(|| self.0.get(kg.entity_name(e)))
            .map(String::as_str)
    }
}

pub fn render_basic(
    kg: &KnowledgeGraph,
    q: &Query,
    description: Option<&str>,
    templates: &Templates,
) -> String {
    let anchor = kg.entity_name(q.anchor);
    let time = q
        .timestamp
        .map(|t| format!(" at {}", kg.timestamp(t)))
        .unwrap_or_default();
    let template = match q.direction {
        Direction::Forward => &templates.forward,
        Direction::Backward => &templates.backward,
    };
    let mut text = template
        .replace("{anchor}", anchor)
        .replace("{relation}", kg.relation_name(q.relation))
        .replace("{time}", &time);
    if let Some(desc) = description {
        text.push_str(
            &templates
                .description
                .replace("{anchor}", anchor)
                .replace("{description}", desc),
        );
    }
    text
}

pub fn render_negatives(kg: &KnowledgeGraph, negatives: &[EntityId]) -> String {
    if negatives.is_empty() {
        return String::new();
    }
    let list: Vec<&str> = negatives.iter().map(|e| kg.entity_name(*e)).collect();
    format!("{NEGATIVE_HEADER} [{}]", list.join(", "))
}

/// One-hop paths print as the stored triple, so an incoming edge reads
/// `(x, r, e)`. Longer paths print as a walk from the anchor, with hops taken
/// against the stored direction written `inverse of r`. Temporal hops carry
/// their timestamp after the entity.
pub fn render_path(kg: &KnowledgeGraph, path: &ContextPath) -> String {
    let ts = |h: &subgraph::Hop| h.timestamp.map(|t| kg.timestamp(t));
    if let [hop] = path.hops.as_slice() {
        let (head, tail) = if hop.reversed {
            (hop.entity, path.anchor)
        } else {
            (path.anchor, hop.entity)
        };
        let mut parts = vec![
            kg.entity_name(head),
            kg.relation_name(hop.relation),
            kg.entity_name(tail),
        ];
        parts.extend(ts(hop));
        return format!("({})", parts.join(", "));
    }

    let mut parts = vec![kg.entity_name(path.anchor).to_owned()];
    for hop in &path.hops {
        let rel = kg.relation_name(hop.relation);
        parts.push(if hop.reversed {
            format!("inverse of {rel}")
        } else {
            rel.to_owned()
        });
        parts.push(kg.entity_name(hop.entity).to_owned());
        if let Some(t) = ts(hop) {
            parts.push(t.to_owned());
        }
    }
    format!("({})", parts.join(", "))
}

pub fn neighbor_header(kg: &KnowledgeGraph, anchor: EntityId) -> String {
    format!(
        "{NEIGHBOR_HEADER_PREFIX}{}{NEIGHBOR_HEADER_SUFFIX}",
        kg.entity_name(anchor)
    )
}

pub fn render_neighbors(kg: &KnowledgeGraph, anchor: EntityId, paths: &[ContextPath]) -> String {
    if paths.is_empty() {
        return String::new();
    }
    let body: Vec<String> = paths.iter().map(|p| render_path(kg, p)).collect();
    format!("{} {}", neighbor_header(kg, anchor), body.join(", "))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptParts {
    pub basic: String,
    pub negative: Option<String>,
    pub neighbors: Option<String>,
}

impl PromptParts {
    pub fn compose(&self) -> String {
        let mut parts = vec![self.basic.as_str()];
        parts.extend(self.negative.as_deref());
        parts.extend(self.neighbors.as_deref());
        parts.join(PART_SEPARATOR)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRecord {
    pub key: QueryKey,
    pub direction: Direction,
    pub prompt: String,
    pub answer: String,
    pub parts: PromptParts,
    pub config_hash: String,
    pub negatives: usize,
    pub neighbors: usize,
    /// Neighbor paths were dropped to respect the character cap.
    pub truncated: bool,
}

/// Builds the record for one query. Neighbor paths are dropped from the end
/// until the prompt fits `cfg.char_cap`; negatives are never dropped.
pub fn build_record(
    kg: &KnowledgeGraph,
    q: &Query,
    cfg: &PromptConfig,
    config_hash: &str,
    descriptions: Option<&Descriptions>,
) -> Result<PromptRecord> {
    let ctx = subgraph::extract(kg, q, &cfg.context_options())?;
    let desc = if cfg.use_descriptions {
        descriptions.and_then(|d| d.get(kg, q.anchor))
    } else {
        None
    };
    let basic = render_basic(kg, q, desc, &cfg.templates);
    let negative = Some(render_negatives(kg, &ctx.merged.negatives)).filter(|s| !s.is_empty());

    let sep = PART_SEPARATOR.chars().count();
    let mut used = basic.chars().count() + negative.as_ref().map_or(0, |n| sep + n.chars().count());
    let paths = &ctx.merged.neighbors;
    let mut kept = 0;
    if !paths.is_empty() {
        let header = neighbor_header(kg, q.anchor).chars().count();
        let mut len = sep + header;
        for (i, p) in paths.iter().enumerate() {
            // " " before the first path, ", " between paths
            let add = render_path(kg, p).chars().count() + if i == 0 { 1 } else { 2 };
            if used + len + add > cfg.char_cap {
                break;
            }
            len += add;
            kept += 1;
        }
        if kept > 0 {
            used += len;
        }
    }
    let truncated = kept < paths.len() || used > cfg.char_cap;
    let neighbors =
        Some(render_neighbors(kg, q.anchor, &paths[..kept])).filter(|s| !s.is_empty());

    let parts = PromptParts {
        basic,
        negative,
        neighbors,
    };
    Ok(PromptRecord {
        key: q.key,
        direction: q.direction,
        prompt: parts.compose(),
        answer: kg.entity_name(q.gold).to_owned(),
        parts,
        config_hash: config_hash.to_owned(),
        negatives: ctx.merged.negatives.len(),
        neighbors: kept,
        truncated,
    })
}

/// One record per query of `split`, ordered by query id.
pub fn build_dataset(
    kg: &KnowledgeGraph,
    split: Split,
    cfg: &PromptConfig,
    descriptions: Option<&Descriptions>,
) -> Result<Vec<PromptRecord>> {
    cfg.validate()?;
    let hash = cfg.hash();
    kg.build_queries(split)
        .par_iter()
        .map(|q| build_record(kg, q, cfg, &hash, descriptions))
        .collect()
}

/// First line of every pipeline file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineHeader {
    pub kind: String,
    pub dataset: String,
    pub split: Split,
    pub config_hash: String,
    pub records: usize,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    #[serde(rename = "_meta")]
    meta: PipelineHeader,
}

/// One line of the pipeline file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineLine {
    pub id: u64,
    pub split: Split,
    pub direction: Direction,
    pub prompt: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl PipelineLine {
    pub fn key(&self) -> QueryKey {
        QueryKey {
            split: self.split,
            id: self.id,
        }
    }
}

impl From<&PromptRecord> for PipelineLine {
    fn from(r: &PromptRecord) -> Self {
        PipelineLine {
            id: r.key.id,
            split: r.key.split,
            direction: r.direction,
            prompt: r.prompt.clone(),
            answer: r.answer.clone(),
            truncated: r.truncated,
        }
    }
}

#[derive(Serialize)]
struct TrainerLine<'a> {
    instruction: &'a str,
    input: &'a str,
    output: &'a str,
}

pub fn write_pipeline<W: Write>(
    mut out: W,
    dataset: &str,
    split: Split,
    config_hash: &str,
    records: &[PromptRecord],
) -> Result<()> {
    let mut sorted: Vec<&PromptRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.key);
    let header = HeaderLine {
        meta: PipelineHeader {
            kind: "pipeline".into(),
            dataset: dataset.to_owned(),
            split,
            config_hash: config_hash.to_owned(),
            records: records.len(),
        },
    };
    let io = |e| Error::io("<pipeline output>", e);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io)?;
    for r in sorted {
        serde_json::to_writer(&mut out, &PipelineLine::from(r))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// `{"instruction", "input", "output"}` lines for adapter fine-tuning.
pub fn write_trainer<W: Write>(mut out: W, records: &[PromptRecord]) -> Result<()> {
    let mut sorted: Vec<&PromptRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.key);
    let io = |e| Error::io("<trainer output>", e);
    for r in sorted {
        let line = TrainerLine {
            instruction: &r.prompt,
            input: "",
            output: &r.answer,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_pipeline(path: &Path) -> Result<(Option<PipelineHeader>, Vec<PipelineLine>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut lines = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with("{\"_meta\"") {
            let h: HeaderLine = serde_json::from_str(&line)?;
            header = Some(h.meta);
            continue;
        }
        let rec: PipelineLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        lines.push(rec);
    }
    Ok((header, lines))
}
