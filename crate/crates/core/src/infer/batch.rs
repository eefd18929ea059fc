//! Resumable batch inference over a pipeline file.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{predict_top_k, GenerationConfig, Generator, PredictionLine, Ranking};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::kg::QueryKey;
use crate::prompt::PipelineLine;

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub k: usize,
    pub generation: GenerationConfig,
    pub ranking: Ranking,
    pub concurrency: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PredictionHeader {
    kind: String,
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    #[serde(rename = "_meta")]
    meta: PredictionHeader,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchSummary {
    pub total: usize,
    pub skipped: usize,
    pub attempted: usize,
    pub errors: usize,
    pub exhausted: usize,
    pub short: usize,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with("{\"_meta\"") {
            continue;
        }
        let rec: PredictionLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn header_line(k: usize) -> String {
    serde_json::to_string(&HeaderLine {
        meta: PredictionHeader {
            kind: "predictions".into(),
            k,
        },
    })
    .expect("header serializes")
}

/// Runs every record not already answered in `out`, appending results as
/// they complete, then rewrites `out` sorted by query with one line per
/// query. Records that previously ended in an error are retried. Per-record
/// failures are written as error markers and never stop the batch.
pub fn run_batch(
    records: &[PipelineLine],
    generator: &dyn Generator,
    opts: &BatchOptions,
    out: &Path,
) -> Result<BatchSummary> {
    opts.generation.validate().map_err(Error::Config)?;
    let mut summary = BatchSummary {
        total: records.len(),
        ..BatchSummary::default()
    };

    let done: HashSet<QueryKey> = if out.exists() {
        read_predictions(out)?
            .into_iter()
            .filter(|p| p.error.is_none())
            .map(|p| p.key())
            .collect()
    } else {
        write_atomic(out, |w| {
            writeln!(w, "{}", header_line(opts.k)).map_err(|e| Error::io(out, e))
        })?;
        HashSet::new()
    };

    let todo: Vec<&PipelineLine> = records.iter().filter(|r| !done.contains(&r.key())).collect();
    summary.skipped = records.len() - todo.len();
    summary.attempted = todo.len();

    if !todo.is_empty() {
        let mut sink = OpenOptions::new()
            .append(true)
            .open(out)
            .map_err(|e| Error::io(out, e))?;
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        let workers = opts.concurrency.clamp(1, todo.len());

        thread::scope(|scope| -> Result<()> {
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, todo) = (&next, &todo);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(rec) = todo.get(i) else { break };
                    let p = predict_top_k(
                        generator,
                        rec.key(),
                        &rec.prompt,
                        opts.k,
                        &opts.generation,
                        opts.ranking,
                    );
                    if tx.send(p).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for p in rx {
                if let Some(e) = &p.error {
                    summary.errors += 1;
                    if e.is_exhaustion() {
                        summary.exhausted += 1;
                    }
                    log::warn!("{}: {e}", p.key);
                }
                summary.short += usize::from(p.short);
                let line = serde_json::to_string(&PredictionLine::from(&p))?;
                writeln!(sink, "{line}").map_err(|e| Error::io(out, e))?;
            }
            Ok(())
        })?;
        sink.flush().map_err(|e| Error::io(out, e))?;
    }

    compact(out, opts.k)?;
    Ok(summary)
}

/// Keeps the last line per query, preferring successes, sorted by query.
fn compact(path: &Path, k: usize) -> Result<()> {
    let mut best: BTreeMap<QueryKey, PredictionLine> = BTreeMap::new();
    for p in read_predictions(path)? {
        match best.get(&p.key()) {
            Some(prev) if prev.error.is_none() && p.error.is_some() => {}
            _ => {
                best.insert(p.key(), p);
            }
        }
    }
    write_atomic(path, |w| {
        writeln!(w, "{}", header_line(k)).map_err(|e| Error::io(path, e))?;
        for p in best.values() {
            serde_json::to_writer(&mut *w, p)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    })
}
