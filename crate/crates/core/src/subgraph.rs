//! Per-query subgraph partitioning.
//!
//! For a query `(e, r, ?)` (or `(?, r, e)`) the train triples around `e`
//! split into two disjoint groups:
//!
//! * negatives: other known answers to the same `(e, r)`, gold removed;
//! * neighbors: every other train triple incident to `e`, optionally
//!   extended into simple paths of up to `p` hops.
//!
//! [`merge_budget`] then fills a budget of `M` slots, negatives first.
//! Everything here reads only the train adjacency indexes.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{
    Direction, EntityId, Incidence, KnowledgeGraph, Query, QueryKey, RelationId, TimeId,
    TripleIdx,
};

pub const DEFAULT_RADIUS: u32 = 5;
pub const MAX_DEPTH: usize = 5;
pub const PATH_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoGraph {
    pub center: EntityId,
    pub triples: Vec<TripleIdx>,
}

/// Train triples with at least one endpoint within `radius` undirected hops
/// of `center`, ordered by triple index. `radius = 0` gives exactly the
/// triples incident to `center`.
pub fn ego_graph(kg: &KnowledgeGraph, center: EntityId, radius: u32) -> Result<EgoGraph> {
    let reached = kg.distances_within(center, radius)?;
    let mut triples = BTreeSet::new();
    for e in reached.keys() {
        triples.extend(kg.incident(*e).iter().map(|inc| inc.triple));
    }
    Ok(EgoGraph {
        center,
        triples: triples.into_iter().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSet {
    pub query: QueryKey,
    pub entities: Vec<EntityId>,
}

impl NegativeSet {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// True when `inc`, seen from the query anchor, answers the query's `(e, r)`.
fn is_query_edge(q: &Query, inc: &Incidence) -> bool {
    inc.relation == q.relation
        && match q.direction {
            Direction::Forward => !inc.reversed,
            Direction::Backward => inc.reversed || inc.other == q.anchor,
        }
}

/// Known train answers to the query's `(e, r)` minus the gold entity, sorted
/// by entity id. Temporal facts match across all timestamps.
pub fn negatives(kg: &KnowledgeGraph, q: &Query) -> NegativeSet {
    let edges = match q.direction {
        Direction::Forward => kg.out_edges(q.anchor),
        Direction::Backward => kg.in_edges(q.anchor),
    };
    let entities: BTreeSet<EntityId> = edges
        .iter()
        .filter(|e| e.relation == q.relation && e.other != q.gold)
        .map(|e| e.other)
        .collect();
    NegativeSet {
        query: q.key,
        entities: entities.into_iter().collect(),
    }
}

/// Train triples incident to the anchor, minus those answering the query's
/// `(e, r)` (the negatives and, for train queries, the gold edge itself).
pub fn neighbor_triples(kg: &KnowledgeGraph, q: &Query) -> Vec<Incidence> {
    kg.incident(q.anchor)
        .iter()
        .filter(|inc| !is_query_edge(q, inc))
        .copied()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub triple: TripleIdx,
    pub relation: RelationId,
    pub entity: EntityId,
    /// The hop walks the stored triple from tail to head.
    pub reversed: bool,
    pub timestamp: Option<TimeId>,
}

impl From<&Incidence> for Hop {
    fn from(inc: &Incidence) -> Self {
        Hop {
            triple: inc.triple,
            relation: inc.relation,
            entity: inc.other,
            reversed: inc.reversed,
            timestamp: inc.timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextPath {
    pub anchor: EntityId,
    pub hops: Vec<Hop>,
}

impl ContextPath {
    pub fn end(&self) -> EntityId {
        self.hops.last().map_or(self.anchor, |h| h.entity)
    }

    fn visits(&self, e: EntityId) -> bool {
        self.anchor == e || self.hops.iter().any(|h| h.entity == e)
    }
}

/// Simple paths of 1..=`depth` hops starting at the anchor, emitted shortest
/// first. The first hop is a neighbor triple; later hops may use any train
/// edge in either direction. Enumeration stops at [`PATH_CAP`] paths.
pub fn context_paths(kg: &KnowledgeGraph, q: &Query, depth: usize) -> Result<Vec<ContextPath>> {
    if depth > MAX_DEPTH {
        return Err(Error::Config(format!(
            "path depth {depth} exceeds maximum {MAX_DEPTH}"
        )));
    }
    let mut out = Vec::new();
    if depth == 0 {
        return Ok(out);
    }

    for inc in neighbor_triples(kg, q) {
        if out.len() == PATH_CAP {
            return Ok(out);
        }
        // self-loops would revisit the anchor
        if inc.other == q.anchor {
            continue;
        }
        out.push(ContextPath {
            anchor: q.anchor,
            hops: vec![Hop::from(&inc)],
        });
    }

    let mut level_start = 0;
    for _ in 1..depth {
        let level_end = out.len();
        for i in level_start..level_end {
            let tip = out[i].end();
            for inc in kg.incident(tip) {
                if out.len() == PATH_CAP {
                    return Ok(out);
                }
                if out[i].visits(inc.other) {
                    continue;
                }
                let mut path = out[i].clone();
                path.hops.push(Hop::from(inc));
                out.push(path);
            }
        }
        level_start = level_end;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedContext {
    pub negatives: Vec<EntityId>,
    pub neighbors: Vec<ContextPath>,
    pub budget: usize,
}

impl MergedContext {
    pub fn len(&self) -> usize {
        self.negatives.len() + self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sampler for one query, independent of the order queries are visited in.
pub fn query_rng(seed: u64, key: QueryKey) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key.stream());
    rng
}

/// Uniform sample of `amount` items, kept in their original relative order.
fn sample_ordered<T: Clone>(rng: &mut ChaCha8Rng, items: &[T], amount: usize) -> Vec<T> {
    if amount >= items.len() {
        return items.to_vec();
    }
    let mut picked = index::sample(rng, items.len(), amount).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// Fills `budget` slots: if the negatives alone fill it, a uniform sample of
/// them and nothing else; otherwise all negatives plus a uniform sample of
/// paths for the remaining slots.
pub fn merge_budget(
    negs: &NegativeSet,
    paths: &[ContextPath],
    budget: usize,
    seed: u64,
) -> MergedContext {
    let mut rng = query_rng(seed, negs.query);
    if negs.len() >= budget {
        return MergedContext {
            negatives: sample_ordered(&mut rng, &negs.entities, budget),
            neighbors: Vec::new(),
            budget,
        };
    }
    let room = budget - negs.len();
    MergedContext {
        negatives: negs.entities.clone(),
        neighbors: sample_ordered(&mut rng, paths, room),
        budget,
    }
}

/// Everything the prompt builder needs for one query.
#[derive(Debug, Clone)]
pub struct SubgraphContext {
    pub query: Query,
    pub negatives: NegativeSet,
    pub paths: Vec<ContextPath>,
    pub merged: MergedContext,
}

/// Which parts feed the merge; disabled parts contribute nothing and leave
/// the whole budget to the other.
#[derive(Debug, Clone, Copy)]
pub struct ContextOptions {
    pub use_negatives: bool,
    pub use_neighbors: bool,
    pub depth: usize,
    pub budget: usize,
    pub seed: u64,
}

pub fn extract(kg: &KnowledgeGraph, q: &Query, opts: &ContextOptions) -> Result<SubgraphContext> {
    kg.check_entity(q.anchor)?;
    let negatives = if opts.use_negatives {
        negatives(kg, q)
    } else {
        NegativeSet {
            query: q.key,
            entities: Vec::new(),
        }
    };
    let paths = if opts.use_neighbors {
        context_paths(kg, q, opts.depth)?
    } else {
        Vec::new()
    };
    let merged = merge_budget(&negatives, &paths, opts.budget, opts.seed);
    Ok(SubgraphContext {
        query: *q,
        negatives,
        paths,
        merged,
    })
}

#[derive(Serialize)]
struct DebugHop<'a> {
    relation: &'a str,
    entity: &'a str,
    reversed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<&'a str>,
}

#[derive(Serialize)]
struct DebugRecord<'a> {
    id: u64,
    split: &'a str,
    negatives: Vec<&'a str>,
    paths: Vec<Vec<DebugHop<'a>>>,
    merged: DebugMerged<'a>,
}

#[derive(Serialize)]
struct DebugMerged<'a> {
    negatives: Vec<&'a str>,
    paths: Vec<Vec<DebugHop<'a>>>,
}

/// One-line JSON dump of a context, for inspection and golden files.
pub fn debug_json(kg: &KnowledgeGraph, ctx: &SubgraphContext) -> String {
    let names = |es: &[EntityId]| es.iter().map(|e| kg.entity_name(*e)).collect::<Vec<_>>();
    let paths = |ps: &[ContextPath]| {
        ps.iter()
            .map(|p| {
                p.hops
                    .iter()
                    .map(|h| DebugHop {
                        relation: kg.relation_name(h.relation),
                        entity: kg.entity_name(h.entity),
                        reversed: h.reversed,
                        timestamp: h.timestamp.map(|t| kg.timestamp(t)),
                    })
                    .collect()
            })
            .collect::<Vec<_>>()
    };
    let rec = DebugRecord {
        id: ctx.query.key.id,
        split: ctx.query.key.split.as_str(),
        negatives: names(&ctx.negatives.entities),
        paths: paths(&ctx.paths),
        merged: DebugMerged {
            negatives: names(&ctx.merged.negatives),
            paths: paths(&ctx.merged.neighbors),
        },
    };
    serde_json::to_string(&rec).expect("debug record serializes")
}
