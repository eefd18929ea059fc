//! Scoring generated answers: Hits@k, hallucinated entities, failure export
//! for external judging, and the judged reevaluation ledger.
//!
//! Matching is exact on normalized strings. A query scores a hit at `k` when
//! its normalized gold answer is among the first `k` distinct answers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::PredictionLine;
use crate::kg::{Direction, QueryKey, Split};
use crate::prompt::PipelineLine;

/// Trim, collapse inner whitespace, lowercase, drop trailing periods.
pub fn normalize_answer(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .to_lowercase()
        .trim_end_matches('.')
        .trim_end()
        .to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldEntry {
    pub direction: Direction,
    pub answer: String,
    pub prompt: String,
}

pub type GoldMap = BTreeMap<QueryKey, GoldEntry>;

pub fn gold_map(lines: &[PipelineLine]) -> GoldMap {
    lines
        .iter()
        .map(|l| {
            (
                l.key(),
                GoldEntry {
                    direction: l.direction,
                    answer: l.answer.clone(),
                    prompt: l.prompt.clone(),
                },
            )
        })
        .collect()
}

/// Normalized surface forms of every entity, for in-vocabulary checks.
pub fn vocabulary<'a>(names: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    names.into_iter().map(normalize_answer).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsAt {
    pub k: usize,
    pub hits: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub queries: usize,
    pub hits: Vec<HitsAt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub total: usize,
    pub errors: usize,
    /// Gold entries with no prediction at all.
    pub unanswered: usize,
    pub hits: Vec<HitsAt>,
    pub by_direction: BTreeMap<Direction, Breakdown>,
}

impl ScoreReport {
    pub fn rate(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|h| h.k == k).map(|h| h.rate)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "queries scored: {}  errors: {}  unanswered: {}",
            self.total, self.errors, self.unanswered
        );
        let row = |s: &mut String, label: &str, b: &[HitsAt], n: usize| {
            let _ = write!(s, "{label:<10} n={n:<8}");
            for h in b {
                let _ = write!(s, " Hits@{}={:.3} ({})", h.k, h.rate, h.hits);
            }
            s.push('\n');
        };
        row(&mut s, "all", &self.hits, self.total);
        for (dir, b) in &self.by_direction {
            row(&mut s, dir.as_str(), &b.hits, b.queries);
        }
        s
    }
}

/// Rank (1-based) of the gold answer among `answers`, counting each
/// normalized answer once at its earliest position.
fn gold_rank(answers: &[String], gold: &str) -> Option<usize> {
    let gold = normalize_answer(gold);
    let mut seen = HashSet::new();
    let mut rank = 0;
    for a in answers {
        let norm = normalize_answer(a);
        if norm.is_empty() || !seen.insert(norm.clone()) {
            continue;
        }
        rank += 1;
        if norm == gold {
            return Some(rank);
        }
    }
    None
}

fn to_hits(counts: &[usize], ks: &[usize], n: usize) -> Vec<HitsAt> {
    ks.iter()
        .zip(counts)
        .map(|(&k, &hits)| HitsAt {
            k,
            hits,
            rate: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        })
        .collect()
}

pub fn hits_at_k(preds: &[PredictionLine], gold: &GoldMap, ks: &[usize]) -> Result<ScoreReport> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();

    let mut counts = vec![0usize; ks.len()];
    let mut per_dir: BTreeMap<Direction, (usize, Vec<usize>)> = BTreeMap::new();
    let mut errors = 0;
    let mut answered = HashSet::new();

    for p in preds {
        let key = p.key();
        let entry = gold.get(&key).ok_or_else(|| Error::MissingGold(key.to_string()))?;
        answered.insert(key);
        let dir = per_dir
            .entry(entry.direction)
            .or_insert_with(|| (0, vec![0; ks.len()]));
        dir.0 += 1;
        if p.error.is_some() {
            errors += 1;
            continue;
        }
        if let Some(rank) = gold_rank(&p.answers, &entry.answer) {
            for (i, &k) in ks.iter().enumerate() {
                if rank <= k {
                    counts[i] += 1;
                    dir.1[i] += 1;
                }
            }
        }
    }

    Ok(ScoreReport {
        total: preds.len(),
        errors,
        unanswered: gold.keys().filter(|k| !answered.contains(k)).count(),
        hits: to_hits(&counts, &ks, preds.len()),
        by_direction: per_dir
            .into_iter()
            .map(|(d, (n, c))| {
                (
                    d,
                    Breakdown {
                        queries: n,
                        hits: to_hits(&c, &ks, n),
                    },
                )
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HallucinationCount {
    pub inspected: usize,
    pub hallucinated: usize,
    pub rate: f64,
}

impl HallucinationCount {
    fn add(&mut self, inspected: usize, hallucinated: usize) {
        self.inspected += inspected;
        self.hallucinated += hallucinated;
        self.rate = if self.inspected == 0 {
            0.0
        } else {
            self.hallucinated as f64 / self.inspected as f64
        };
    }
}

/// Answers naming no known entity, counted at rank 1 and across all ranks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub rank1: BTreeMap<Direction, HallucinationCount>,
    pub all_ranks: BTreeMap<Direction, HallucinationCount>,
}

impl HallucinationReport {
    pub fn rank1_total(&self) -> usize {
        self.rank1.values().map(|c| c.hallucinated).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (label, table) in [("rank-1", &self.rank1), ("all ranks", &self.all_ranks)] {
            for (dir, c) in table {
                let _ = writeln!(
                    s,
                    "{label:<9} {:<8} {} / {} answers outside the vocabulary ({:.1}%)",
                    dir.as_str(),
                    c.hallucinated,
                    c.inspected,
                    100.0 * c.rate
                );
            }
        }
        s
    }
}

pub fn hallucination_stats(
    preds: &[PredictionLine],
    gold: &GoldMap,
    vocab: &HashSet<String>,
) -> HallucinationReport {
    let mut report = HallucinationReport::default();
    for p in preds {
        let Some(entry) = gold.get(&p.key()) else {
            continue;
        };
        let outside = |a: &String| !vocab.contains(&normalize_answer(a));
        if let Some(first) = p.answers.first() {
            report
                .rank1
                .entry(entry.direction)
                .or_default()
                .add(1, usize::from(outside(first)));
        }
        report
            .all_ranks
            .entry(entry.direction)
            .or_default()
            .add(p.answers.len(), p.answers.iter().filter(|a| outside(a)).count());
    }
    report
}

/// One failed rank-1 prediction, as handed to external judges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRow {
    pub id: u64,
    pub split: Split,
    pub prompt: String,
    pub predicted: String,
    pub gold: String,
    pub predicted_in_kg: bool,
}

impl FailureRow {
    pub fn key(&self) -> QueryKey {
        QueryKey {
            split: self.split,
            id: self.id,
        }
    }
}

/// Every prediction that misses at rank 1, including error markers.
pub fn export_failures(
    preds: &[PredictionLine],
    gold: &GoldMap,
    vocab: &HashSet<String>,
) -> Result<Vec<FailureRow>> {
    let mut rows = Vec::new();
    for p in preds {
        let key = p.key();
        let entry = gold.get(&key).ok_or_else(|| Error::MissingGold(key.to_string()))?;
        let hit = p.error.is_none() && gold_rank(&p.answers, &entry.answer) == Some(1);
        if hit {
            continue;
        }
        let predicted = p.answers.first().cloned().unwrap_or_default();
        rows.push(FailureRow {
            id: key.id,
            split: key.split,
            prompt: entry.prompt.clone(),
            predicted_in_kg: !predicted.is_empty() && vocab.contains(&normalize_answer(&predicted)),
            predicted,
            gold: entry.answer.clone(),
        });
    }
    rows.sort_by_key(FailureRow::key);
    Ok(rows)
}

/// Two independent verdicts on one exported failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub id: u64,
    pub split: Split,
    pub verdict_a: bool,
    pub verdict_b: bool,
}

impl Judgment {
    pub fn key(&self) -> QueryKey {
        QueryKey {
            split: self.split,
            id: self.id,
        }
    }

    pub fn unanimous(&self) -> bool {
        self.verdict_a && self.verdict_b
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with("{\"_meta\"") {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Outcome of folding external judgments back into a closed-world score.
///
/// Failures judged plausible by both judges split by whether the predicted
/// entity exists in the graph: in-graph ones (`x`) count as correct, the
/// rest (`y`) stay wrong since the graph cannot hold them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReevaluationLedger {
    pub total: usize,
    pub correct: BTreeSet<QueryKey>,
    pub failures: BTreeSet<QueryKey>,
    pub judged: usize,
    pub x: BTreeSet<QueryKey>,
    pub y: BTreeSet<QueryKey>,
    pub raw: f64,
    pub adjusted: f64,
}

impl ReevaluationLedger {
    pub fn build(
        correct: BTreeSet<QueryKey>,
        failures: &[FailureRow],
        judgments: &[Judgment],
    ) -> Result<Self> {
        let by_key: BTreeMap<QueryKey, &FailureRow> =
            failures.iter().map(|f| (f.key(), f)).collect();
        if let Some(dup) = correct.iter().find(|k| by_key.contains_key(k)) {
            return Err(Error::Config(format!("{dup} is both correct and failed")));
        }
        let mut x = BTreeSet::new();
        let mut y = BTreeSet::new();
        let mut judged = HashSet::new();
        for j in judgments {
            let key = j.key();
            let row = by_key
                .get(&key)
                .ok_or_else(|| Error::UnknownJudgment(key.to_string()))?;
            if !judged.insert(key) {
                return Err(Error::Config(format!("duplicate judgment for {key}")));
            }
            if !j.unanimous() {
                continue;
            }
            if row.predicted_in_kg {
                x.insert(key);
            } else {
                y.insert(key);
            }
        }
        let total = correct.len() + by_key.len();
        let rate = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
        Ok(ReevaluationLedger {
            total,
            raw: rate(correct.len()),
            adjusted: rate(correct.len() + x.len()),
            failures: by_key.into_keys().collect(),
            judged: judged.len(),
            correct,
            x,
            y,
        })
    }

    /// Builds the ledger from a scored run: rank-1 hits are correct, the
    /// exported failures carry the in-graph flags.
    pub fn from_run(
        preds: &[PredictionLine],
        gold: &GoldMap,
        failures: &[FailureRow],
        judgments: &[Judgment],
    ) -> Result<Self> {
        let failed: HashSet<QueryKey> = failures.iter().map(FailureRow::key).collect();
        let mut correct = BTreeSet::new();
        for p in preds {
            let key = p.key();
            let entry = gold.get(&key).ok_or_else(|| Error::MissingGold(key.to_string()))?;
            if !failed.contains(&key)
                && p.error.is_none()
                && gold_rank(&p.answers, &entry.answer) == Some(1)
            {
                correct.insert(key);
            }
        }
        Self::build(correct, failures, judgments)
    }

    pub fn to_text(&self) -> String {
        format!(
            "N={}  correct={}  failures={}  judged={}  X={}  Y={}\nraw Hits@1={:.3}  adjusted Hits@1={:.3}\n",
            self.total,
            self.correct.len(),
            self.failures.len(),
            self.judged,
            self.x.len(),
            self.y.len(),
            self.raw,
            self.adjusted
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(id: u64) -> QueryKey {
        QueryKey {
            split: Split::Test,
            id,
        }
    }

    fn pred(id: u64, answers: &[&str]) -> PredictionLine {
        PredictionLine {
            id,
            split: Split::Test,
            answers: answers.iter().map(|s| s.to_string()).collect(),
            short: false,
            error: None,
        }
    }

    fn gold(entries: &[(u64, &str)]) -> GoldMap {
        entries
            .iter()
            .map(|(id, a)| {
                (
                    key(*id),
                    GoldEntry {
                        direction: if id % 2 == 0 {
                            Direction::Forward
                        } else {
                            Direction::Backward
                        },
                        answer: a.to_string(),
                        prompt: format!("prompt {id}"),
                    },
                )
            })
            .collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("  Phoenix "), "phoenix");
        assert_eq!(normalize_answer("Phoenix."), "phoenix");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("New \t York  City"), "new york city");
    }

    #[test]
    fn hits_by_position() {
        let g = gold(&[(0, "E"), (2, "E")]);
        let preds = [pred(0, &["E", "B"]), pred(2, &["B", "C", "E"])];
        let r = hits_at_k(&preds, &g, &[1, 3, 10]).unwrap();
        assert_eq!(r.rate(1), Some(0.5));
        assert_eq!(r.rate(3), Some(1.0));
        assert_eq!(r.rate(10), Some(1.0));
    }

    #[test]
    fn duplicates_count_once_at_earliest_rank() {
        let g = gold(&[(0, "E")]);
        let r = hits_at_k(&[pred(0, &["B", "b.", "C", "e"])], &g, &[3]).unwrap();
        assert_eq!(r.rate(3), Some(1.0));
        let r = hits_at_k(&[pred(0, &["B", "C", "b", "D", "E"])], &g, &[3]).unwrap();
        assert_eq!(r.rate(3), Some(0.0));
    }

    #[test]
    fn errors_are_misses_and_missing_gold_is_fatal() {
        let g = gold(&[(0, "E"), (1, "F")]);
        let mut bad = pred(0, &["E"]);
        bad.error = Some("boom".into());
        let r = hits_at_k(&[bad], &g, &[1]).unwrap();
        assert_eq!((r.errors, r.unanswered, r.rate(1)), (1, 1, Some(0.0)));
        assert!(matches!(
            hits_at_k(&[pred(9, &["E"])], &g, &[1]),
            Err(Error::MissingGold(_))
        ));
    }

    #[test]
    fn hallucinations_at_rank_one_and_all() {
        let g = gold(&[(0, "A"), (1, "B")]);
        let vocab = vocabulary(["A", "B", "C"]);
        let r = hallucination_stats(&[pred(0, &["A", "Z"]), pred(1, &["Z", "Q"])], &g, &vocab);
        assert_eq!(r.rank1_total(), 1);
        assert_eq!(r.rank1[&Direction::Backward].hallucinated, 1);
        assert_eq!(r.all_ranks[&Direction::Forward].hallucinated, 1);
        assert_eq!(r.all_ranks[&Direction::Backward].hallucinated, 2);
        let r = hallucination_stats(&[pred(0, &["a"])], &g, &vocab);
        assert_eq!(r.rank1_total(), 0);
    }

    #[test]
    fn failure_export_flags_vocabulary() {
        let g = gold(&[(0, "Chandler"), (2, "E")]);
        let vocab = vocabulary(["Chandler", "Phoenix", "E"]);
        let rows = export_failures(&[pred(0, &["Phoenix"]), pred(2, &["E"])], &g, &vocab).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].predicted, "Phoenix");
        assert!(rows[0].predicted_in_kg);
        let rows = export_failures(&[pred(0, &["Tempe"])], &g, &vocab).unwrap();
        assert!(!rows[0].predicted_in_kg);
        assert!(export_failures(&[pred(2, &["E"])], &g, &vocab).unwrap().is_empty());
    }

    fn failure(id: u64, in_kg: bool) -> FailureRow {
        FailureRow {
            id,
            split: Split::Test,
            prompt: String::new(),
            predicted: "p".into(),
            gold: "g".into(),
            predicted_in_kg: in_kg,
        }
    }

    fn judgment(id: u64, a: bool, b: bool) -> Judgment {
        Judgment {
            id,
            split: Split::Test,
            verdict_a: a,
            verdict_b: b,
        }
    }

    #[test]
    fn ledger_arithmetic() {
        let correct: BTreeSet<_> = (0..40).map(key).collect();
        // ids 40..50 in-KG, 50..55 out-of-KG, 55..100 unjudged or split
        let failures: Vec<_> = (40..100).map(|id| failure(id, !(50..55).contains(&id))).collect();
        let mut judgments: Vec<_> = (40..55).map(|id| judgment(id, true, true)).collect();
        judgments.push(judgment(60, true, false));
        let l = ReevaluationLedger::build(correct, &failures, &judgments).unwrap();
        assert_eq!(l.total, 100);
        assert_eq!((l.x.len(), l.y.len()), (10, 5));
        assert_eq!(l.raw, 0.4);
        assert_eq!(l.adjusted, 0.5);
        assert!(l.x.is_disjoint(&l.y));
    }

    #[test]
    fn ledger_without_judgments_keeps_raw() {
        let correct: BTreeSet<_> = (0..3).map(key).collect();
        let failures = [failure(3, true)];
        let l = ReevaluationLedger::build(correct, &failures, &[]).unwrap();
        assert_eq!(l.raw, l.adjusted);
        assert_eq!(l.raw, 0.75);
    }

    #[test]
    fn ledger_rejects_foreign_judgments() {
        let failures = [failure(3, true)];
        let err = ReevaluationLedger::build(BTreeSet::new(), &failures, &[judgment(9, true, true)]);
        assert!(matches!(err, Err(Error::UnknownJudgment(_))));
        let err = ReevaluationLedger::build(
            BTreeSet::new(),
            &failures,
            &[judgment(3, true, true), judgment(3, true, false)],
        );
        assert!(err.is_err());
    }
}
