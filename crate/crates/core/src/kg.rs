//! Knowledge graph storage: interned vocabularies, dataset splits, and the
//! train-only adjacency indexes everything else reads from.
//!
//! Vocabularies cover every split so that test-only entities can still be
//! named as gold answers. The adjacency indexes are built from the train split
//! alone, which is what keeps validation and test facts out of any context
//! handed to a model.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeId(pub u32);

/// Position of a triple inside the train split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripleIdx(pub u32);

/// String interner handing out dense ids in insertion order.
#[derive(Debug, Default, Clone)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub timestamp: Option<TimeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(h, r, ?)`: the head is known, the tail is predicted.
    Forward,
    /// `(?, r, t)`: the tail is known, the head is predicted.
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    pub fn reverse(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

/// Globally unique handle of a query: ids are unique within a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryKey {
    pub split: Split,
    pub id: u64,
}

impl QueryKey {
    /// Stream number for the per-query sampler.
    pub fn stream(self) -> u64 {
        ((self.split.index() as u64) << 62) | (self.id & ((1 << 62) - 1))
    }
}

impl fmt::Display for QueryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.split, self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub key: QueryKey,
    pub anchor: EntityId,
    pub relation: RelationId,
    pub direction: Direction,
    pub timestamp: Option<TimeId>,
    pub gold: EntityId,
}

impl Query {
    pub fn forward(key: QueryKey, triple: &Triple) -> Self {
        Query {
            key,
            anchor: triple.head,
            relation: triple.relation,
            direction: Direction::Forward,
            timestamp: triple.timestamp,
            gold: triple.tail,
        }
    }

    pub fn backward(key: QueryKey, triple: &Triple) -> Self {
        Query {
            key,
            anchor: triple.tail,
            relation: triple.relation,
            direction: Direction::Backward,
            timestamp: triple.timestamp,
            gold: triple.head,
        }
    }

    /// The triple this query was derived from.
    pub fn triple(&self) -> Triple {
        let (head, tail) = match self.direction {
            Direction::Forward => (self.anchor, self.gold),
            Direction::Backward => (self.gold, self.anchor),
        };
        Triple {
            head,
            relation: self.relation,
            tail,
            timestamp: self.timestamp,
        }
    }

    /// The same fact asked from the other side.
    pub fn reversed(&self) -> Query {
        Query {
            anchor: self.gold,
            gold: self.anchor,
            direction: self.direction.reverse(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgFormat {
    /// `head \t relation \t tail`
    Static,
    /// `head \t relation \t tail \t timestamp`
    Temporal,
}

impl KgFormat {
    fn columns(self) -> usize {
        match self {
            KgFormat::Static => 3,
            KgFormat::Temporal => 4,
        }
    }
}

/// Adjacency entry seen from one endpoint of a train triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub triple: TripleIdx,
    pub relation: RelationId,
    pub other: EntityId,
    pub timestamp: Option<TimeId>,
}

/// An incident train triple seen from `entity`; `reversed` is set when the
/// entity is the tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incidence {
    pub triple: TripleIdx,
    pub relation: RelationId,
    pub other: EntityId,
    pub reversed: bool,
    pub timestamp: Option<TimeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub added: usize,
    pub duplicates: usize,
    pub new_entities: usize,
    pub new_relations: usize,
}

/// Mutable side of graph construction. Splits are loaded in any order, then
/// [`KgBuilder::build`] freezes everything and builds the indexes.
#[derive(Debug)]
pub struct KgBuilder {
    format: KgFormat,
    entities: Interner,
    relations: Interner,
    timestamps: Interner,
    splits: [Vec<Triple>; 3],
    seen: [HashSet<Triple>; 3],
    entity_names: HashMap<String, String>,
    relation_names: HashMap<String, String>,
}

impl KgBuilder {
    pub fn new(format: KgFormat) -> Self {
        KgBuilder {
            format,
            entities: Interner::default(),
            relations: Interner::default(),
            timestamps: Interner::default(),
            splits: Default::default(),
            seen: Default::default(),
            entity_names: HashMap::new(),
            relation_names: HashMap::new(),
        }
    }

    pub fn load_split(&mut self, split: Split, path: &Path) -> Result<LoadReport> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.read_split(split, BufReader::new(file), path)
    }

    /// Parses tab-separated rows from `reader`; `origin` only labels errors.
    pub fn read_split<R: BufRead>(
        &mut self,
        split: Split,
        reader: R,
        origin: &Path,
    ) -> Result<LoadReport> {
        let expected = self.format.columns();
        let entities_before = self.entities.len();
        let relations_before = self.relations.len();
        let mut report = LoadReport::default();

        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != expected {
                return Err(Error::ColumnCount {
                    path: origin.to_path_buf(),
                    line: lineno + 1,
                    expected,
                    found: cols.len(),
                });
            }
            if let Some(col) = cols.iter().position(|c| c.is_empty()) {
                return Err(Error::Malformed {
                    path: origin.to_path_buf(),
                    line: lineno + 1,
                    message: format!("column {} is empty", col + 1),
                });
            }
            report.rows += 1;

            let timestamp = match self.format {
                KgFormat::Static => None,
                KgFormat::Temporal => {
                    let ts = normalize_timestamp(cols[3]).ok_or_else(|| Error::Malformed {
                        path: origin.to_path_buf(),
                        line: lineno + 1,
                        message: format!("unrecognised timestamp `{}`", cols[3]),
                    })?;
                    Some(TimeId(self.timestamps.intern(&ts)))
                }
            };
            let triple = Triple {
                head: EntityId(self.entities.intern(cols[0])),
                relation: RelationId(self.relations.intern(cols[1])),
                tail: EntityId(self.entities.intern(cols[2])),
                timestamp,
            };
            if !self.seen[split.index()].insert(triple) {
                log::warn!(
                    "{}:{}: duplicate triple dropped",
                    origin.display(),
                    lineno + 1
                );
                report.duplicates += 1;
                continue;
            }
            self.splits[split.index()].push(triple);
            report.added += 1;
        }

        report.new_entities = self.entities.len() - entities_before;
        report.new_relations = self.relations.len() - relations_before;
        Ok(report)
    }

    /// Display names used in prompts instead of raw identifiers
    /// (`identifier \t name` rows).
    pub fn load_entity_names(&mut self, path: &Path) -> Result<usize> {
        let map = read_two_column(path)?;
        let n = map.len();
        self.entity_names.extend(map);
        Ok(n)
    }

    pub fn load_relation_names(&mut self, path: &Path) -> Result<usize> {
        let map = read_two_column(path)?;
        let n = map.len();
        self.relation_names.extend(map);
        Ok(n)
    }

    pub fn build(self) -> KnowledgeGraph {
        let n = self.entities.len();
        let train = &self.splits[Split::Train.index()];
        let mut out_index: Vec<Vec<Edge>> = vec![Vec::new(); n];
        let mut in_index: Vec<Vec<Edge>> = vec![Vec::new(); n];
        let mut incident: Vec<Vec<Incidence>> = vec![Vec::new(); n];

        for (i, t) in train.iter().enumerate() {
            let idx = TripleIdx(i as u32);
            out_index[t.head.0 as usize].push(Edge {
                triple: idx,
                relation: t.relation,
                other: t.tail,
                timestamp: t.timestamp,
            });
            in_index[t.tail.0 as usize].push(Edge {
                triple: idx,
                relation: t.relation,
                other: t.head,
                timestamp: t.timestamp,
            });
            incident[t.head.0 as usize].push(Incidence {
                triple: idx,
                relation: t.relation,
                other: t.tail,
                reversed: false,
                timestamp: t.timestamp,
            });
            if t.head != t.tail {
                incident[t.tail.0 as usize].push(Incidence {
                    triple: idx,
                    relation: t.relation,
                    other: t.head,
                    reversed: true,
                    timestamp: t.timestamp,
                });
            }
        }

        let display = |vocab: &Interner, names: &HashMap<String, String>| -> Vec<String> {
            vocab
                .iter()
                .map(|raw| names.get(raw).cloned().unwrap_or_else(|| raw.to_owned()))
                .collect()
        };
        let entity_display = display(&self.entities, &self.entity_names);
        let relation_display = display(&self.relations, &self.relation_names);

        KnowledgeGraph {
            format: self.format,
            entities: self.entities,
            relations: self.relations,
            timestamps: self.timestamps,
            entity_display,
            relation_display,
            splits: self.splits,
            out_index,
            in_index,
            incident,
        }
    }
}

fn read_two_column(path: &Path) -> Result<HashMap<String, String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line.split_once('\t').ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: "expected `key \\t value`".into(),
        })?;
        map.insert(key.trim().to_owned(), value.trim().to_owned());
    }
    Ok(map)
}

/// Accepts `YYYY-MM-DD`, `YYYY/MM/DD`, or an integer time step.
fn normalize_timestamp(raw: &str) -> Option<String> {
    let raw = raw.trim();
    if !raw.is_empty() && raw.bytes().all(|b| b.is_ascii_digit()) {
        return Some(raw.to_owned());
    }
    let parts: Vec<&str> = raw.split(['-', '/']).collect();
    match parts.as_slice() {
        [y, m, d]
            if y.len() == 4
                && m.len() <= 2
                && d.len() <= 2
                && parts.iter().all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit())) =>
        {
            let m: u32 = m.parse().ok()?;
            let d: u32 = d.parse().ok()?;
            if !(1..=12).contains(&m) || !(1..=31).contains(&d) {
                return None;
            }
            Some(format!("{y}-{m:02}-{d:02}"))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl DatasetStats {
    pub fn query_count(&self) -> usize {
        2 * (self.train + self.valid + self.test)
    }
}

/// Immutable graph. Safe to share across worker threads.
#[derive(Debug)]
pub struct KnowledgeGraph {
    format: KgFormat,
    entities: Interner,
    relations: Interner,
    timestamps: Interner,
    entity_display: Vec<String>,
    relation_display: Vec<String>,
    splits: [Vec<Triple>; 3],
    out_index: Vec<Vec<Edge>>,
    in_index: Vec<Vec<Edge>>,
    incident: Vec<Vec<Incidence>>,
}

impl KnowledgeGraph {
    /// Loads `train`, `valid` and `test` files from `dir`, in that order.
    pub fn load_dir(dir: &Path, format: KgFormat) -> Result<Self> {
        Self::load_dir_with_names(dir, format, None, None)
    }

    /// Like [`KnowledgeGraph::load_dir`], with optional `identifier \t name`
    /// files supplying display names for entities and relations.
    pub fn load_dir_with_names(
        dir: &Path,
        format: KgFormat,
        entity_names: Option<&Path>,
        relation_names: Option<&Path>,
    ) -> Result<Self> {
        let mut builder = KgBuilder::new(format);
        for split in Split::ALL {
            let path = split_file(dir, split)?;
            let report = builder.load_split(split, &path)?;
            log::info!(
                "{}: {} triples ({} duplicates dropped)",
                path.display(),
                report.added,
                report.duplicates
            );
        }
        if let Some(path) = entity_names {
            builder.load_entity_names(path)?;
        }
        if let Some(path) = relation_names {
            builder.load_relation_names(path)?;
        }
        Ok(builder.build())
    }

    pub fn format(&self) -> KgFormat {
        self.format
    }

    pub fn is_temporal(&self) -> bool {
        self.format == KgFormat::Temporal
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    /// Surface form used in prompts and answers.
    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_display[id.0 as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_display[id.0 as usize]
    }

    pub fn entity_surface_forms(&self) -> impl Iterator<Item = &str> {
        self.entity_display.iter().map(String::as_str)
    }

    pub fn timestamp(&self, id: TimeId) -> &str {
        self.timestamps.name(id.0).unwrap_or("")
    }

    pub fn triples(&self, split: Split) -> &[Triple] {
        &self.splits[split.index()]
    }

    pub fn train_triple(&self, idx: TripleIdx) -> &Triple {
        &self.splits[Split::Train.index()][idx.0 as usize]
    }

    pub fn out_edges(&self, e: EntityId) -> &[Edge] {
        &self.out_index[e.0 as usize]
    }

    pub fn in_edges(&self, e: EntityId) -> &[Edge] {
        &self.in_index[e.0 as usize]
    }

    /// Train triples touching `e` in either role, ordered by triple index.
    /// Self-loops appear once.
    pub fn incident(&self, e: EntityId) -> &[Incidence] {
        &self.incident[e.0 as usize]
    }

    pub fn check_entity(&self, e: EntityId) -> Result<()> {
        if (e.0 as usize) < self.entities.len() {
            Ok(())
        } else {
            Err(Error::UnknownEntity(e.0))
        }
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.entities.len(),
            relations: self.relations.len(),
            train: self.triples(Split::Train).len(),
            valid: self.triples(Split::Valid).len(),
            test: self.triples(Split::Test).len(),
        }
    }

    /// Two queries per triple: id `2i` is forward, `2i + 1` backward.
    pub fn build_queries(&self, split: Split) -> Vec<Query> {
        let mut out = Vec::with_capacity(2 * self.triples(split).len());
        for (i, t) in self.triples(split).iter().enumerate() {
            let base = 2 * i as u64;
            out.push(Query::forward(QueryKey { split, id: base }, t));
            out.push(Query::backward(QueryKey { split, id: base + 1 }, t));
        }
        out
    }

    /// Breadth-first distance over the undirected train graph. `None` when
    /// `to` is unreachable within `cap` hops.
    pub fn shortest_path_distance(
        &self,
        from: EntityId,
        to: EntityId,
        cap: u32,
    ) -> Result<Option<u32>> {
        self.check_entity(from)?;
        self.check_entity(to)?;
        if from == to {
            return Ok(Some(0));
        }
        let mut dist: HashMap<EntityId, u32> = HashMap::from([(from, 0)]);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d >= cap {
                continue;
            }
            for inc in self.incident(u) {
                if dist.contains_key(&inc.other) {
                    continue;
                }
                if inc.other == to {
                    return Ok(Some(d + 1));
                }
                dist.insert(inc.other, d + 1);
                queue.push_back(inc.other);
            }
        }
        Ok(None)
    }

    /// Distances from `center` to every entity within `radius` hops.
    pub fn distances_within(&self, center: EntityId, radius: u32) -> Result<HashMap<EntityId, u32>> {
        self.check_entity(center)?;
        let mut dist: HashMap<EntityId, u32> = HashMap::from([(center, 0)]);
        let mut queue = VecDeque::from([center]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d >= radius {
                continue;
            }
            for inc in self.incident(u) {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(inc.other) {
                    slot.insert(d + 1);
                    queue.push_back(inc.other);
                }
            }
        }
        Ok(dist)
    }
}

/// Resolves the file for `split` under common naming schemes.
pub fn split_file(dir: &Path, split: Split) -> Result<PathBuf> {
    let stems: &[&str] = match split {
        Split::Train => &["train"],
        Split::Valid => &["valid", "dev", "validation"],
        Split::Test => &["test"],
    };
    for stem in stems {
        for ext in ["txt", "tsv", ""] {
            let name = if ext.is_empty() {
                (*stem).to_owned()
            } else {
                format!("{stem}.{ext}")
            };
            let path = dir.join(name);
            if path.is_file() {
                return Ok(path);
            }
        }
    }
    Err(Error::io(
        dir.join(format!("{}.txt", stems[0])),
        std::io::Error::new(std::io::ErrorKind::NotFound, "split file not found"),
    ))
}

/// Renders stats as a plain-text table.
pub fn stats_table(rows: &[(String, DatasetStats)]) -> String {
    let mut out = format!(
        "{:<14} {:>9} {:>10} {:>8} {:>8} {:>8}\n",
        "Dataset", "#entity", "#relation", "#train", "#valid", "#test"
    );
    for (name, s) in rows {
        out.push_str(&format!(
            "{:<14} {:>9} {:>10} {:>8} {:>8} {:>8}\n",
            name, s.entities, s.relations, s.train, s.valid, s.test
        ));
    }
    out
}
