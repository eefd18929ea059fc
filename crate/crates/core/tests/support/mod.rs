//! Test support shared by the property tests and the acceptance target:
//! random graphs, brute-force enumerators, and a text-level leakage scan.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::io::Cursor;
use std::path::Path;

use kgprompt_core::kg::{
    Direction, EntityId, KgBuilder, KgFormat, KnowledgeGraph, Query, Split, TripleIdx,
};
use kgprompt_core::prompt::{PipelineLine, NEGATIVE_HEADER, NEIGHBOR_HEADER_PREFIX, NEIGHBOR_HEADER_SUFFIX};
use kgprompt_core::subgraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ENTITIES: usize = 300;
pub const MAX_TRIPLES: usize = 2000;

fn pick(rng: &mut ChaCha8Rng, n: usize) -> usize {
    // mild skew so some (entity, relation) pairs repeat
    rng.gen_range(0..n).min(rng.gen_range(0..n))
}

/// Tab-separated train/valid/test rows with no fact in two splits.
pub struct Rows {
    pub train: String,
    pub valid: String,
    pub test: String,
}

pub fn random_rows(seed: u64, entities: usize, relations: usize, train: usize, valid: usize, test: usize) -> Rows {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut draw = |n: usize| {
        let mut rows = Vec::new();
        let mut tries = 0;
        while rows.len() < n && tries < n * 20 {
            tries += 1;
            let fact = (
                pick(&mut rng, entities),
                rng.gen_range(0..relations),
                pick(&mut rng, entities),
            );
            if seen.insert(fact) {
                rows.push(format!("e{}\tr{}\te{}\n", fact.0, fact.1, fact.2));
            }
        }
        rows.concat()
    };
    let train = draw(train);
    let valid = draw(valid);
    let test = draw(test);
    Rows { train, valid, test }
}

impl Rows {
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("train.txt"), &self.train)?;
        std::fs::write(dir.join("valid.txt"), &self.valid)?;
        std::fs::write(dir.join("test.txt"), &self.test)
    }

    pub fn build(&self) -> KnowledgeGraph {
        let mut b = KgBuilder::new(KgFormat::Static);
        for (split, text) in [
            (Split::Train, &self.train),
            (Split::Valid, &self.valid),
            (Split::Test, &self.test),
        ] {
            b.read_split(split, Cursor::new(text.as_bytes()), Path::new(split.as_str()))
                .expect("synthetic rows parse");
        }
        b.build()
    }
}

/// Random static graph: at most 300 entities and 2,000 train triples, plus
/// held-out valid/test triples that never duplicate a train fact.
pub fn random_graph(seed: u64) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entities = rng.gen_range(20..=MAX_ENTITIES);
    let relations = rng.gen_range(1..=8);
    let train = rng.gen_range(entities / 2..=(entities * 6).min(MAX_TRIPLES));
    let heldout = (train / 10).max(5);
    random_rows(rng.gen(), entities, relations, train, heldout / 2, heldout).build()
}

/// Queries from every split, so train queries (whose gold edge is in the
/// graph) are covered too.
pub fn all_queries(kg: &KnowledgeGraph) -> Vec<Query> {
    Split::ALL.iter().flat_map(|s| kg.build_queries(*s)).collect()
}

pub fn brute_negatives(kg: &KnowledgeGraph, q: &Query) -> Vec<EntityId> {
    let mut out = BTreeSet::new();
    for t in kg.triples(Split::Train) {
        if t.relation != q.relation {
            continue;
        }
        let (side, other) = match q.direction {
            Direction::Forward => (t.head, t.tail),
            Direction::Backward => (t.tail, t.head),
        };
        if side == q.anchor && other != q.gold {
            out.insert(other);
        }
    }
    out.into_iter().collect()
}

/// `(triple, other endpoint, reversed)`; a self-loop counts once, unreversed.
pub type BruteHop = (TripleIdx, EntityId, bool);

/// Incidence lists rebuilt from a single scan of the train triples.
pub struct Brute<'a> {
    pub kg: &'a KnowledgeGraph,
    touching: Vec<Vec<BruteHop>>,
}

impl<'a> Brute<'a> {
    pub fn new(kg: &'a KnowledgeGraph) -> Self {
        let mut touching = vec![Vec::new(); kg.entity_count()];
        for (i, t) in kg.triples(Split::Train).iter().enumerate() {
            let idx = TripleIdx(i as u32);
            touching[t.head.0 as usize].push((idx, t.tail, false));
            if t.tail != t.head {
                touching[t.tail.0 as usize].push((idx, t.head, true));
            }
        }
        Brute { kg, touching }
    }

    fn touching(&self, e: EntityId) -> &[BruteHop] {
        &self.touching[e.0 as usize]
    }
}

pub fn brute_neighbors(b: &Brute, q: &Query) -> Vec<BruteHop> {
    let train = b.kg.triples(Split::Train);
    b.touching(q.anchor)
        .iter()
        .copied()
        .filter(|&(idx, _, _)| {
            let t = &train[idx.0 as usize];
            let answers_query = t.relation == q.relation
                && match q.direction {
                    Direction::Forward => t.head == q.anchor,
                    Direction::Backward => t.tail == q.anchor,
                };
            !answers_query
        })
        .collect()
}

/// Every simple path of 1..=`depth` hops, sorted.
pub fn brute_paths(b: &Brute, q: &Query, depth: usize) -> Vec<Vec<BruteHop>> {
    fn grow(
        b: &Brute,
        path: &mut Vec<BruteHop>,
        visited: &mut Vec<EntityId>,
        depth: usize,
        out: &mut Vec<Vec<BruteHop>>,
    ) {
        if path.len() == depth {
            return;
        }
        let tip = *visited.last().unwrap();
        for &hop in b.touching(tip) {
            if visited.contains(&hop.1) {
                continue;
            }
            path.push(hop);
            visited.push(hop.1);
            out.push(path.clone());
            grow(b, path, visited, depth, out);
            path.pop();
            visited.pop();
        }
    }

    let mut out = Vec::new();
    if depth == 0 {
        return out;
    }
    for first in brute_neighbors(b, q) {
        if first.1 == q.anchor {
            continue;
        }
        let mut path = vec![first];
        let mut visited = vec![q.anchor, first.1];
        out.push(path.clone());
        grow(b, &mut path, &mut visited, depth, &mut out);
    }
    out.sort();
    out
}

/// Compares the library against the brute-force enumerators for one query
/// and depths 0..=2. Returns one message per disagreement.
pub fn oracle_mismatches(b: &Brute, q: &Query) -> Vec<String> {
    let kg = b.kg;
    let mut errs = Vec::new();
    let negs = subgraph::negatives(kg, q);
    let want = brute_negatives(kg, q);
    if negs.entities != want {
        errs.push(format!("{}: negatives {:?} != {:?}", q.key, negs.entities, want));
    }

    let got: Vec<BruteHop> = subgraph::neighbor_triples(kg, q)
        .iter()
        .map(|i| (i.triple, i.other, i.reversed))
        .collect();
    let want = brute_neighbors(b, q);
    if got != want {
        errs.push(format!("{}: neighbor_triples {:?} != {:?}", q.key, got, want));
    }

    for depth in 0..=2 {
        let paths = subgraph::context_paths(kg, q, depth).expect("depth within limit");
        if paths.len() >= subgraph::PATH_CAP {
            errs.push(format!("{}: path cap reached at p={depth}", q.key));
            continue;
        }
        let mut got: Vec<Vec<BruteHop>> = paths
            .iter()
            .map(|p| {
                assert_eq!(p.anchor, q.anchor);
                p.hops.iter().map(|h| (h.triple, h.entity, h.reversed)).collect()
            })
            .collect();
        got.sort();
        let want = brute_paths(b, q, depth);
        if got != want {
            errs.push(format!(
                "{}: context_paths p={depth}: {} paths vs {} expected",
                q.key,
                got.len(),
                want.len()
            ));
        }
    }
    errs
}

/// Plain BFS distance without a cap.
pub fn brute_distance(kg: &KnowledgeGraph, from: EntityId, to: EntityId) -> Option<u32> {
    let n = kg.entity_count();
    let mut adj = vec![Vec::new(); n];
    for t in kg.triples(Split::Train) {
        adj[t.head.0 as usize].push(t.tail.0 as usize);
        adj[t.tail.0 as usize].push(t.head.0 as usize);
    }
    let mut dist = vec![u32::MAX; n];
    dist[from.0 as usize] = 0;
    let mut queue = VecDeque::from([from.0 as usize]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == u32::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (dist[to.0 as usize] != u32::MAX).then_some(dist[to.0 as usize])
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct LeakReport {
    pub prompts: usize,
    /// Prompts mentioning a fact found only in valid/test.
    pub heldout_references: usize,
    /// Prompts mentioning a fact absent from every split.
    pub unknown_references: usize,
    pub gold_in_negatives: usize,
    pub unparsed: usize,
}

impl LeakReport {
    pub fn clean(&self) -> bool {
        self.heldout_references == 0
            && self.unknown_references == 0
            && self.gold_in_negatives == 0
            && self.unparsed == 0
    }
}

type Fact = (String, String, String);

fn facts(kg: &KnowledgeGraph, split: Split) -> HashSet<Fact> {
    kg.triples(split)
        .iter()
        .map(|t| {
            (
                kg.entity_name(t.head).to_owned(),
                kg.relation_name(t.relation).to_owned(),
                kg.entity_name(t.tail).to_owned(),
            )
        })
        .collect()
}

/// Facts named by one rendered path: a 1-hop path is the stored triple, a
/// longer one is a walk whose `inverse of r` steps run tail to head.
fn path_facts(tuple: &str) -> Option<Vec<Fact>> {
    let tokens: Vec<&str> = tuple.split(", ").collect();
    if tokens.len() == 3 {
        return Some(vec![(tokens[0].into(), tokens[1].into(), tokens[2].into())]);
    }
    if tokens.len() < 5 || tokens.len().is_multiple_of(2) {
        return None;
    }
    let mut out = Vec::new();
    for step in tokens[1..].chunks(2) {
        let from = out
            .last()
            .map(|f: &(Fact, bool)| if f.1 { f.0 .0.clone() } else { f.0 .2.clone() })
            .unwrap_or_else(|| tokens[0].to_owned());
        let (rel, to) = (step[0], step[1]);
        out.push(match rel.strip_prefix("inverse of ") {
            Some(r) => ((to.into(), r.into(), from), true),
            None => ((from, rel.into(), to.into()), false),
        });
    }
    Some(out.into_iter().map(|f| f.0).collect())
}

/// Scans rendered prompts (static graphs whose names contain no `, `).
pub fn leakage_scan(kg: &KnowledgeGraph, lines: &[PipelineLine]) -> LeakReport {
    let train = facts(kg, Split::Train);
    let mut heldout = facts(kg, Split::Valid);
    heldout.extend(facts(kg, Split::Test));

    let mut report = LeakReport::default();
    for line in lines {
        report.prompts += 1;
        let (mut leaked, mut unknown, mut gold, mut bad) = (false, false, false, false);
        for part in line.prompt.split('\n') {
            if let Some(rest) = part.strip_prefix(NEGATIVE_HEADER) {
                match rest.trim().strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                    Some(list) => gold |= list.split(", ").any(|e| e == line.answer),
                    None => bad = true,
                }
            } else if let Some(rest) = part.strip_prefix(NEIGHBOR_HEADER_PREFIX) {
                let Some((_, body)) = rest.split_once(NEIGHBOR_HEADER_SUFFIX) else {
                    bad = true;
                    continue;
                };
                let body = body.trim();
                let Some(inner) = body.strip_prefix('(').and_then(|b| b.strip_suffix(')')) else {
                    bad = true;
                    continue;
                };
                for tuple in inner.split("), (") {
                    match path_facts(tuple) {
                        Some(fs) => {
                            for f in fs {
                                if !train.contains(&f) {
                                    if heldout.contains(&f) {
                                        leaked = true;
                                    } else {
                                        unknown = true;
                                    }
                                }
                            }
                        }
                        None => bad = true,
                    }
                }
            }
        }
        report.heldout_references += leaked as usize;
        report.unknown_references += unknown as usize;
        report.gold_in_negatives += gold as usize;
        report.unparsed += bad as usize;
    }
    report
}
