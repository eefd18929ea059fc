use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use kgprompt_core::datasets::{self, KnownDataset};
use kgprompt_core::eval::{self, FailureRow, Judgment, ReevaluationLedger};
use kgprompt_core::fsutil::write_atomic;
use kgprompt_core::infer::{
    self, BatchOptions, BatchSummary, DecodeMode, GenerationConfig, Generator, HttpGenerator,
    MockOracle, MockSpec, Ranking, RetryPolicy,
};
use kgprompt_core::kg::{self, KgFormat, KnowledgeGraph, Split};
use kgprompt_core::manifest::RunManifest;
use kgprompt_core::prompt::{self, Descriptions, PipelineLine, PromptConfig, PromptRecord};
use kgprompt_core::subgraph;
use kgprompt_core::Error;

use crate::{
    AdjustArgs, DatasetArgs, ExportArgs, FormatArg, GenArgs, GenerationArgs, InferArgs,
    PromptArgs, RankingArg, ScoreArgs, SweepArgs,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_EXHAUSTED: u8 = 4;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } => EXIT_IO,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn format_of(arg: Option<FormatArg>) -> Option<KgFormat> {
    arg.map(|f| match f {
        FormatArg::Static => KgFormat::Static,
        FormatArg::Temporal => KgFormat::Temporal,
    })
}

fn resolve_dataset(name: &str, format: Option<FormatArg>) -> Result<(KgFormat, Option<&'static KnownDataset>)> {
    match (datasets::lookup(name), format_of(format)) {
        (Ok(known), Some(f)) => Ok((f, Some(known))),
        (Ok(known), None) => Ok((known.format, Some(known))),
        (Err(_), Some(f)) => Ok((f, None)),
        (Err(e), None) => Err(e.into()),
    }
}

fn load_graph(args: &DatasetArgs) -> Result<(KnowledgeGraph, Option<&'static KnownDataset>)> {
    let (format, known) = resolve_dataset(&args.dataset, args.format)?;
    let kg = KnowledgeGraph::load_dir_with_names(
        &args.dir,
        format,
        args.entity_names.as_deref(),
        args.relation_names.as_deref(),
    )?;
    Ok((kg, known))
}

fn dataset_inputs(args: &DatasetArgs) -> Result<Vec<PathBuf>> {
    let mut paths = Split::ALL
        .iter()
        .map(|s| kg::split_file(&args.dir, *s))
        .collect::<Result<Vec<_>, _>>()?;
    paths.extend(args.entity_names.iter().cloned());
    paths.extend(args.relation_names.iter().cloned());
    Ok(paths)
}

pub fn ingest(args: &DatasetArgs) -> Result<ExitCode> {
    let (kg, known) = load_graph(args)?;
    let stats = kg.stats();
    let mut rows = vec![(args.dataset.clone(), stats)];
    if let Some(known) = known {
        rows.push((format!("{} (ref)", known.name), known.reference));
    }
    print!("{}", kg::stats_table(&rows));
    println!("queries: {}", stats.query_count());
    if let Some(known) = known {
        let diffs = datasets::compare(&known.reference, &stats);
        if diffs.is_empty() {
            println!("matches reference statistics");
        } else {
            for (col, want, got) in diffs {
                println!("mismatch {col}: expected {want}, found {got}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn prompt_config(args: &PromptArgs, budget: Option<usize>) -> Result<(PromptConfig, Option<Descriptions>)> {
    let mut cfg = match &args.config {
        Some(path) => PromptConfig::from_toml_file(path)?,
        None => PromptConfig::default(),
    };
    if let Some(p) = args.p {
        cfg.p = p;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = budget {
        cfg.budget = m;
    }
    if let Some(cap) = args.char_cap {
        cfg.char_cap = cap;
    }
    if args.no_negatives {
        cfg.use_negatives = false;
    }
    if args.no_neighbors {
        cfg.use_neighbors = false;
    }
    let descriptions = match &args.descriptions {
        Some(path) => {
            cfg.use_descriptions = true;
            Some(Descriptions::load(path)?)
        }
        None => None,
    };
    cfg.validate()?;
    Ok((cfg, descriptions))
}

struct GenOutputs<'a> {
    out: &'a Path,
    trainer: Option<&'a Path>,
    debug: Option<&'a Path>,
}

fn generate(
    data: &DatasetArgs,
    kg: &KnowledgeGraph,
    split: Split,
    cfg: &PromptConfig,
    descriptions: Option<&Descriptions>,
    outputs: GenOutputs<'_>,
) -> Result<Vec<PromptRecord>> {
    let mut manifest = RunManifest::new("gen-dataset", &data.dataset);
    manifest.config_hash = cfg.hash();
    manifest.seed = cfg.seed;
    manifest
        .setting("split", split)
        .setting("p", cfg.p)
        .setting("M", cfg.budget)
        .setting("use_negatives", cfg.use_negatives)
        .setting("use_neighbors", cfg.use_neighbors)
        .setting("use_descriptions", cfg.use_descriptions)
        .setting("char_cap", cfg.char_cap);
    for input in dataset_inputs(data)? {
        manifest.add_input(&input)?;
    }

    let records = manifest.stage("build", || prompt::build_dataset(kg, split, cfg, descriptions))?;
    let hash = cfg.hash();
    manifest.stage("write", || -> Result<()> {
        write_atomic(outputs.out, |w| {
            prompt::write_pipeline(w, &data.dataset, split, &hash, &records)
        })?;
        if let Some(path) = outputs.trainer {
            write_atomic(path, |w| prompt::write_trainer(w, &records))?;
        }
        if let Some(path) = outputs.debug {
            let opts = cfg.context_options();
            let queries = kg.build_queries(split);
            write_atomic(path, |w| {
                for q in &queries {
                    let ctx = subgraph::extract(kg, q, &opts)?;
                    writeln!(w, "{}", subgraph::debug_json(kg, &ctx))
                        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
                }
                Ok(())
            })?;
        }
        Ok(())
    })?;

    manifest.add_output(outputs.out)?;
    for path in outputs.trainer.into_iter().chain(outputs.debug) {
        manifest.add_output(path)?;
    }
    manifest.write_next_to(outputs.out)?;
    Ok(records)
}

pub fn gen_dataset(args: &GenArgs) -> Result<ExitCode> {
    let split: Split = args.split.parse()?;
    let (cfg, descriptions) = prompt_config(&args.prompt, args.budget)?;
    let (kg, _) = load_graph(&args.data)?;
    let records = generate(
        &args.data,
        &kg,
        split,
        &cfg,
        descriptions.as_ref(),
        GenOutputs {
            out: &args.out,
            trainer: args.trainer_out.as_deref(),
            debug: args.debug_dump.as_deref(),
        },
    )?;
    let truncated = records.iter().filter(|r| r.truncated).count();
    println!(
        "{} records ({} truncated) -> {}  config {}",
        records.len(),
        truncated,
        args.out.display(),
        cfg.hash()
    );
    Ok(ExitCode::SUCCESS)
}

fn generation_config(args: &GenerationArgs) -> GenerationConfig {
    if args.k <= 1 {
        return GenerationConfig {
            max_new_tokens: args.max_new_tokens,
            ..GenerationConfig::greedy()
        };
    }
    GenerationConfig {
        mode: DecodeMode::Sampled,
        top_p: args.top_p,
        top_k: args.top_k,
        num_return_sequences: args.num_return_sequences,
        max_new_tokens: args.max_new_tokens,
        temperature: args.temperature,
    }
}

fn backend(
    endpoint: Option<&str>,
    mock: Option<&str>,
    args: &GenerationArgs,
    lines: &[PipelineLine],
) -> Result<Box<dyn Generator>> {
    if let Some(spec) = mock {
        let spec: MockSpec = spec.parse()?;
        let golds: HashMap<_, _> = lines.iter().map(|l| (l.key(), l.answer.clone())).collect();
        return Ok(Box::new(MockOracle::new(golds, spec, args.mock_seed)));
    }
    let url = endpoint.context("either --endpoint or --mock is required")?;
    let token = std::env::var(&args.token_env).ok();
    let retry = RetryPolicy {
        max_retries: args.max_retries,
        ..RetryPolicy::default()
    };
    let g = HttpGenerator::new(
        url,
        args.model.clone(),
        token,
        retry,
        args.send_top_k,
        Duration::from_secs(args.timeout_secs),
    )
    .map_err(|e| anyhow::anyhow!(e))?;
    Ok(Box::new(g))
}

fn batch_options(args: &GenerationArgs) -> BatchOptions {
    BatchOptions {
        k: args.k.max(1),
        generation: generation_config(args),
        ranking: match args.ranking {
            RankingArg::FirstOccurrence => Ranking::FirstOccurrence,
            RankingArg::Frequency => Ranking::Frequency,
        },
        concurrency: args.concurrency.max(1),
    }
}

fn run_inference(
    input: &Path,
    lines: &[PipelineLine],
    generator: &dyn Generator,
    args: &GenerationArgs,
    out: &Path,
) -> Result<BatchSummary> {
    let opts = batch_options(args);
    let mut manifest = RunManifest::new("infer", "");
    manifest.add_input(input)?;
    manifest
        .setting("backend", generator.describe())
        .setting("k", opts.k)
        .setting("mode", format!("{:?}", opts.generation.mode))
        .setting("top_p", opts.generation.top_p)
        .setting("top_k", opts.generation.top_k)
        .setting("num_return_sequences", opts.generation.num_return_sequences)
        .setting("send_top_k", args.send_top_k);
    let summary = manifest.stage("infer", || infer::run_batch(lines, generator, &opts, out))?;
    manifest.add_output(out)?;
    manifest.write_next_to(out)?;
    Ok(summary)
}

fn report_summary(summary: &BatchSummary, out: &Path) -> ExitCode {
    println!(
        "{} records: {} skipped, {} generated, {} errors ({} exhausted), {} short -> {}",
        summary.total,
        summary.skipped,
        summary.attempted,
        summary.errors,
        summary.exhausted,
        summary.short,
        out.display()
    );
    if summary.exhausted > 0 {
        eprintln!("endpoint retries exhausted for {} records", summary.exhausted);
        ExitCode::from(EXIT_EXHAUSTED)
    } else {
        ExitCode::SUCCESS
    }
}

pub fn infer(args: &InferArgs) -> Result<ExitCode> {
    let (_, lines) = prompt::read_pipeline(&args.input)?;
    let generator = backend(
        args.backend.endpoint.as_deref(),
        args.backend.mock.as_deref(),
        &args.generation,
        &lines,
    )?;
    let summary = run_inference(&args.input, &lines, generator.as_ref(), &args.generation, &args.out)?;
    Ok(report_summary(&summary, &args.out))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
    })?;
    Ok(())
}

pub fn score(args: &ScoreArgs) -> Result<ExitCode> {
    let preds = infer::read_predictions(&args.preds)?;
    let (_, gold_lines) = prompt::read_pipeline(&args.gold)?;
    let gold = eval::gold_map(&gold_lines);
    let report = eval::hits_at_k(&preds, &gold, &args.ks)?;
    print!("{}", report.to_text());

    let hallucination = match (&args.dataset, &args.dir) {
        (Some(dataset), Some(dir)) => {
            let data = DatasetArgs {
                dataset: dataset.clone(),
                dir: dir.clone(),
                format: args.format,
                entity_names: args.entity_names.clone(),
                relation_names: None,
            };
            let (kg, _) = load_graph(&data)?;
            let vocab = eval::vocabulary(kg.entity_surface_forms());
            let h = eval::hallucination_stats(&preds, &gold, &vocab);
            print!("{}", h.to_text());
            Some(h)
        }
        _ => None,
    };
    if let Some(path) = &args.json {
        write_json(
            path,
            &serde_json::json!({ "score": report, "hallucination": hallucination }),
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn reevaluate_export(args: &ExportArgs) -> Result<ExitCode> {
    let preds = infer::read_predictions(&args.preds)?;
    let (_, gold_lines) = prompt::read_pipeline(&args.gold)?;
    let gold = eval::gold_map(&gold_lines);
    let (kg, _) = load_graph(&args.data)?;
    let vocab = eval::vocabulary(kg.entity_surface_forms());
    let rows = eval::export_failures(&preds, &gold, &vocab)?;
    write_atomic(&args.out, |w| {
        for row in &rows {
            serde_json::to_writer(&mut *w, row)?;
            w.write_all(b"\n")
                .map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
        }
        Ok(())
    })?;
    let in_kg = rows.iter().filter(|r| r.predicted_in_kg).count();
    println!(
        "{} failures exported ({} predicted entities in the graph) -> {}",
        rows.len(),
        in_kg,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn reevaluate_adjust(args: &AdjustArgs) -> Result<ExitCode> {
    let preds = infer::read_predictions(&args.preds)?;
    let (_, gold_lines) = prompt::read_pipeline(&args.gold)?;
    let gold = eval::gold_map(&gold_lines);
    let failures: Vec<FailureRow> = eval::read_jsonl(&args.failures)?;
    let judgments: Vec<Judgment> = eval::read_jsonl(&args.judgments)?;
    let ledger = ReevaluationLedger::from_run(&preds, &gold, &failures, &judgments)?;
    print!("{}", ledger.to_text());
    if let Some(path) = &args.json {
        write_json(path, &ledger)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Serialize)]
struct ContextReport {
    budget: usize,
    records: usize,
    with_negatives: usize,
    with_neighbors: usize,
    mean_negatives: f64,
    mean_neighbors: f64,
    truncated: usize,
}

fn context_report(budget: usize, records: &[PromptRecord]) -> ContextReport {
    let n = records.len().max(1) as f64;
    ContextReport {
        budget,
        records: records.len(),
        with_negatives: records.iter().filter(|r| r.negatives > 0).count(),
        with_neighbors: records.iter().filter(|r| r.neighbors > 0).count(),
        mean_negatives: records.iter().map(|r| r.negatives).sum::<usize>() as f64 / n,
        mean_neighbors: records.iter().map(|r| r.neighbors).sum::<usize>() as f64 / n,
        truncated: records.iter().filter(|r| r.truncated).count(),
    }
}

pub fn sweep(args: &SweepArgs) -> Result<ExitCode> {
    let split: Split = args.split.parse()?;
    let (base, descriptions) = prompt_config(&args.prompt, None)?;
    let (kg, _) = load_graph(&args.data)?;
    let mut exit = ExitCode::SUCCESS;

    println!("{:>5} {:>9} {:>10} {:>10} {:>9}", "M", "records", "mean neg", "mean nbr", "Hits@1");
    for &budget in &args.budgets {
        let dir = args.out_dir.join(format!("M{budget}"));
        let cfg = PromptConfig {
            budget,
            ..base.clone()
        };
        let prompts = dir.join("prompts.jsonl");
        let records = generate(
            &args.data,
            &kg,
            split,
            &cfg,
            descriptions.as_ref(),
            GenOutputs {
                out: &prompts,
                trainer: None,
                debug: None,
            },
        )?;
        let context = context_report(budget, &records);

        let score = if args.endpoint.is_some() || args.mock.is_some() {
            let lines: Vec<PipelineLine> = records.iter().map(PipelineLine::from).collect();
            let generator = backend(args.endpoint.as_deref(), args.mock.as_deref(), &args.generation, &lines)?;
            let preds_path = dir.join("predictions.jsonl");
            let summary = run_inference(&prompts, &lines, generator.as_ref(), &args.generation, &preds_path)?;
            if summary.exhausted > 0 {
                exit = ExitCode::from(EXIT_EXHAUSTED);
            }
            let preds = infer::read_predictions(&preds_path)?;
            Some(eval::hits_at_k(&preds, &eval::gold_map(&lines), &[1, 3, 10])?)
        } else {
            None
        };

        let mut text = format!(
            "M={budget} records={} with_negatives={} with_neighbors={} mean_negatives={:.2} mean_neighbors={:.2} truncated={}\n",
            context.records,
            context.with_negatives,
            context.with_neighbors,
            context.mean_negatives,
            context.mean_neighbors,
            context.truncated
        );
        if let Some(s) = &score {
            text.push_str(&s.to_text());
        }
        let report_txt = dir.join("report.txt");
        write_atomic(&report_txt, |w| {
            w.write_all(text.as_bytes())
                .map_err(|e| Error::Io { path: report_txt.clone(), source: e })
        })?;
        write_json(
            &dir.join("report.json"),
            &serde_json::json!({ "context": context, "score": score }),
        )?;

        println!(
            "{:>5} {:>9} {:>10.2} {:>10.2} {:>9}",
            budget,
            context.records,
            context.mean_negatives,
            context.mean_neighbors,
            score
                .as_ref()
                .and_then(|s| s.rate(1))
                .map_or("-".to_owned(), |r| format!("{r:.3}"))
        );
    }
    Ok(exit)
}
