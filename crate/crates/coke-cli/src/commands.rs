//! Implementations of the CLI subcommands.

use crate::manifest::{Manifest, OutDir};
use anyhow::{bail, Context, Result};
use coke::checkpoint;
use coke::config::RunSettings;
use coke::eval::{
    length1_link_prediction, link_prediction_eval, path_query_eval, LinkMetrics, PathMetrics,
};
use coke::kg::{load_paths, load_triples, GraphPath, KnowledgeGraph, VocabPolicy};
use coke::model::ModelParams;
use coke::sampler::{build_test_paths, build_training_paths, WalkScope};
use coke::train::{fit, EpochLog, SelectionMetric};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub struct GraphFiles {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

impl GraphFiles {
    pub fn load(&self) -> Result<KnowledgeGraph> {
        KnowledgeGraph::load(&self.train, &self.dev, &self.test)
            .with_context(|| "loading triple splits")
    }

    fn record(&self, manifest: &mut Manifest) {
        manifest.input("train", &self.train);
        manifest.input("dev", &self.dev);
        manifest.input("test", &self.test);
    }
}

fn record_graph_counts(kg: &KnowledgeGraph, manifest: &mut Manifest) {
    manifest.count("entities", kg.vocab().entity_count() as u64);
    manifest.count("relations", kg.vocab().relation_count() as u64);
    manifest.count("train_triples", kg.train().len() as u64);
    manifest.count("dev_triples", kg.dev().len() as u64);
    manifest.count("test_triples", kg.test().len() as u64);
}

fn write_file(path: &Path, content: &str, manifest: &mut Manifest) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(path);
    Ok(())
}

pub fn ingest(files: &GraphFiles, settings: &RunSettings, out: &OutDir) -> Result<()> {
    let mut manifest = Manifest::new("ingest", settings.train.seed, &settings.to_kv().echo());
    files.record(&mut manifest);
    let kg = files.load()?;
    record_graph_counts(&kg, &mut manifest);
    let (entities, relations) = kg.vocab().export();
    write_file(&out.export("entities.txt"), &entities, &mut manifest)?;
    write_file(&out.export("relations.txt"), &relations, &mut manifest)?;
    manifest.write(&out.root)?;
    println!(
        "{} entities, {} relations, {}/{}/{} train/dev/test triples",
        kg.vocab().entity_count(),
        kg.vocab().relation_count(),
        kg.train().len(),
        kg.dev().len(),
        kg.test().len()
    );
    Ok(())
}

pub enum SampleMode {
    Train,
    Test { dedup_against: PathBuf },
}

pub fn sample_paths(
    files: &GraphFiles,
    mode: SampleMode,
    settings: &RunSettings,
    out: &OutDir,
) -> Result<()> {
    let mut settings = settings.clone();
    let kg = files.load()?;
    let (label, paths) = match &mode {
        SampleMode::Train => {
            settings.sampler.scope = WalkScope::Train;
            ("train", build_training_paths(&kg, &settings.sampler)?)
        }
        SampleMode::Test { dedup_against } => {
            settings.sampler.scope = WalkScope::TrainAndTest;
            let training = load_paths(dedup_against, kg.vocab())?;
            let dedup: HashSet<GraphPath> = training.into_iter().collect();
            ("test", build_test_paths(&kg, &settings.sampler, &dedup)?)
        }
    };
    let mut manifest = Manifest::new("sample-paths", settings.sampler.seed, &settings.to_kv().echo());
    files.record(&mut manifest);
    if let SampleMode::Test { dedup_against } = &mode {
        manifest.input("dedup_against", dedup_against);
    }
    record_graph_counts(&kg, &mut manifest);
    manifest.count("paths", paths.len() as u64);
    for k in 1..=5u64 {
        let n = paths.iter().filter(|p| p.len() as u64 == k).count();
        manifest.count(&format!("paths_len{k}"), n as u64);
    }
    let text = coke::kg::write_paths(&paths, kg.vocab())?;
    let out_file = out.export(&format!("{label}_paths.txt"));
    write_file(&out_file, &text, &mut manifest)?;
    manifest.write(&out.root)?;
    println!("{} paths written to {}", paths.len(), out_file.display());
    Ok(())
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum Task {
    Link,
    Path,
}

pub struct TrainArgs {
    pub files: GraphFiles,
    pub task: Task,
    pub train_paths: Option<PathBuf>,
    pub dev_paths: Option<PathBuf>,
    pub grid: bool,
}

fn dev_metric_of(
    params: &ModelParams<f32>,
    kg: &KnowledgeGraph,
    dev_paths: &[GraphPath],
    metric: SelectionMetric,
) -> coke::Result<f64> {
    match metric {
        SelectionMetric::Mrr => {
            Ok(link_prediction_eval(params, &params.config, kg.dev(), kg)?.0.mrr)
        }
        SelectionMetric::Mq => Ok(path_query_eval(params, &params.config, dev_paths, kg)?.0.mq),
    }
}

pub fn train(args: &TrainArgs, settings: &RunSettings, out: &OutDir) -> Result<()> {
    let mut settings = settings.clone();
    let kg = args.files.load()?;
    settings.model.entity_count = kg.vocab().entity_count();
    settings.model.relation_count = kg.vocab().relation_count();

    let contexts: Vec<GraphPath>;
    let dev_paths: Vec<GraphPath>;
    match args.task {
        Task::Link => {
            contexts = kg.train().iter().map(|&t| GraphPath::from(t)).collect();
            dev_paths = Vec::new();
        }
        Task::Path => {
            let train_file = args
                .train_paths
                .as_ref()
                .context("--train-paths is required for the path task")?;
            let dev_file = args
                .dev_paths
                .as_ref()
                .context("--dev-paths is required for the path task")?;
            contexts = load_paths(train_file, kg.vocab())?;
            dev_paths = load_paths(dev_file, kg.vocab())?;
        }
    }

    let mut manifest = Manifest::new("train", settings.train.seed, &settings.to_kv().echo());
    args.files.record(&mut manifest);
    if let Some(p) = &args.train_paths {
        manifest.input("train_paths", p);
    }
    if let Some(p) = &args.dev_paths {
        manifest.input("dev_paths", p);
    }
    record_graph_counts(&kg, &mut manifest);
    manifest.count("contexts", contexts.len() as u64);
    manifest.count("instances", 2 * contexts.len() as u64);

    let combos: Vec<(f64, f64)> = if args.grid {
        settings
            .train
            .dropout_grid
            .iter()
            .flat_map(|&d| {
                settings
                    .train
                    .label_smoothing_grid
                    .iter()
                    .map(move |&e| (d, e))
            })
            .collect()
    } else {
        vec![(settings.model.dropout, settings.model.label_smoothing)]
    };

    let metric_kind = settings.train.selection_metric;
    let mut grid_log = String::from("dropout\tlabel_smoothing\tbest_epoch\tbest_dev_metric\n");
    let mut best: Option<(coke::train::FitOutcome<f32>, f64, f64)> = None;
    for (rho, eps) in combos {
        let mut model_cfg = settings.model.clone();
        model_cfg.dropout = rho;
        model_cfg.label_smoothing = eps;
        model_cfg.validate()?;
        let params = ModelParams::<f32>::init(model_cfg, settings.train.seed)?;
        let outcome = fit(params, &contexts, &settings.train, |p| {
            dev_metric_of(p, &kg, &dev_paths, metric_kind)
        })?;
        let _ = writeln!(
            grid_log,
            "{rho}\t{eps}\t{}\t{:.6}",
            outcome.best_epoch, outcome.best_metric
        );
        let better = match &best {
            Some((b, _, _)) => outcome.best_metric > b.best_metric,
            None => true,
        };
        if better {
            best = Some((outcome, rho, eps));
        }
    }
    let (outcome, rho, eps) = best.expect("at least one combination runs");

    let mut train_log = String::from(EpochLog::TSV_HEADER);
    train_log.push('\n');
    for line in &outcome.log {
        train_log.push_str(&line.tsv_line());
        train_log.push('\n');
    }
    write_file(&out.log("train.tsv"), &train_log, &mut manifest)?;
    if args.grid {
        write_file(&out.log("grid.tsv"), &grid_log, &mut manifest)?;
    }

    let ckpt = out.checkpoint("best.ckpt");
    checkpoint::save(&ckpt, &outcome.best, checkpoint::vocab_hash(kg.vocab()))?;
    manifest.output(&ckpt);
    manifest.count("best_epoch", outcome.best_epoch as u64);

    let mut dev_summary = String::from("metric\tvalue\n");
    let metric_name = match metric_kind {
        SelectionMetric::Mrr => "dev_mrr",
        SelectionMetric::Mq => "dev_mq",
    };
    let _ = writeln!(dev_summary, "{metric_name}\t{:.6}", outcome.best_metric);
    let _ = writeln!(dev_summary, "best_epoch\t{}", outcome.best_epoch);
    let _ = writeln!(dev_summary, "dropout\t{rho}");
    let _ = writeln!(dev_summary, "label_smoothing\t{eps}");
    write_file(&out.metric("dev.tsv"), &dev_summary, &mut manifest)?;

    manifest.write(&out.root)?;
    println!(
        "best epoch {} with dev {} {:.6}; checkpoint at {}",
        outcome.best_epoch,
        metric_name,
        outcome.best_metric,
        ckpt.display()
    );
    Ok(())
}

fn link_metrics_tsv(m: &LinkMetrics) -> String {
    format!(
        "metric\tvalue\nmrr\t{:.6}\nhits1\t{:.6}\nhits3\t{:.6}\nhits10\t{:.6}\nqueries\t{}\n",
        m.mrr, m.hits1, m.hits3, m.hits10, m.queries
    )
}

fn path_metrics_tsv(m: &PathMetrics) -> String {
    format!(
        "metric\tvalue\nmq\t{:.6}\nhits10\t{:.6}\nqueries\t{}\n",
        m.mq, m.hits10, m.queries
    )
}

fn jsonl<T: serde::Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    Ok(out)
}

pub enum EvalSplit {
    Dev,
    Test,
}

pub fn eval_link(
    files: &GraphFiles,
    ckpt: &Path,
    split: EvalSplit,
    settings: &RunSettings,
    out: &OutDir,
) -> Result<()> {
    let kg = files.load()?;
    let params = checkpoint::load(ckpt, Some(kg.vocab()))?;
    let triples = match split {
        EvalSplit::Dev => kg.dev(),
        EvalSplit::Test => kg.test(),
    };
    let (metrics, per_query) = link_prediction_eval(&params, &params.config, triples, &kg)?;
    let mut manifest = Manifest::new("eval-link", settings.train.seed, &settings.to_kv().echo());
    files.record(&mut manifest);
    manifest.input("checkpoint", ckpt);
    record_graph_counts(&kg, &mut manifest);
    write_file(&out.metric("link.tsv"), &link_metrics_tsv(&metrics), &mut manifest)?;
    write_file(&out.metric("link_queries.jsonl"), &jsonl(&per_query)?, &mut manifest)?;
    manifest.write(&out.root)?;
    println!(
        "MRR {:.6}  H@1 {:.6}  H@3 {:.6}  H@10 {:.6}  ({} queries)",
        metrics.mrr, metrics.hits1, metrics.hits3, metrics.hits10, metrics.queries
    );
    Ok(())
}

pub fn eval_path(
    files: &GraphFiles,
    ckpt: &Path,
    test_paths: &Path,
    length1: bool,
    settings: &RunSettings,
    out: &OutDir,
) -> Result<()> {
    let kg = files.load()?;
    let params = checkpoint::load(ckpt, Some(kg.vocab()))?;
    let paths = load_paths(test_paths, kg.vocab())?;
    let (metrics, per_query) = path_query_eval(&params, &params.config, &paths, &kg)?;
    let mut manifest = Manifest::new("eval-path", settings.train.seed, &settings.to_kv().echo());
    files.record(&mut manifest);
    manifest.input("checkpoint", ckpt);
    manifest.input("test_paths", test_paths);
    record_graph_counts(&kg, &mut manifest);
    manifest.count("test_paths", paths.len() as u64);
    write_file(&out.metric("path.tsv"), &path_metrics_tsv(&metrics), &mut manifest)?;
    write_file(&out.metric("path_queries.jsonl"), &jsonl(&per_query)?, &mut manifest)?;
    if length1 {
        let (l1, l1_queries) = length1_link_prediction(&params, &params.config, &paths, &kg)?;
        write_file(&out.metric("length1_link.tsv"), &link_metrics_tsv(&l1), &mut manifest)?;
        write_file(
            &out.metric("length1_link_queries.jsonl"),
            &jsonl(&l1_queries)?,
            &mut manifest,
        )?;
        println!("length-1 MRR {:.6}  H@10 {:.6}", l1.mrr, l1.hits10);
    }
    manifest.write(&out.root)?;
    println!("MQ {:.6}  H@10 {:.6}  ({} paths)", metrics.mq, metrics.hits10, metrics.queries);
    Ok(())
}

pub fn export_embeddings(
    train_file: &Path,
    ckpt: &Path,
    sequences_file: &Path,
    settings: &RunSettings,
    out: &OutDir,
) -> Result<()> {
    let (_, vocab) = load_triples(train_file, VocabPolicy::Build)?;
    let params = checkpoint::load(ckpt, Some(&vocab))?;
    let contexts = load_paths(sequences_file, &vocab)?;
    let sequences: Vec<Vec<u32>> = contexts
        .iter()
        .map(|p| {
            let mut tokens = Vec::with_capacity(p.len() + 2);
            tokens.push(p.subject());
            tokens.extend_from_slice(p.relations());
            tokens.push(p.object());
            tokens
        })
        .collect();
    let (hidden, lens) = params.contextual_embeddings(&sequences)?;
    let d = params.config.hidden_size;

    let mut tsv = String::from("sequence\tposition\ttoken");
    for j in 0..d {
        let _ = write!(tsv, "\td{j}");
    }
    tsv.push('\n');
    for (si, seq) in sequences.iter().enumerate() {
        for (pos, &token) in seq.iter().enumerate().take(lens[si]) {
            let name = vocab
                .name(token)
                .ok_or_else(|| anyhow::anyhow!("id {token} missing from vocabulary"))?;
            let _ = write!(tsv, "{si}\t{pos}\t{name}");
            for j in 0..d {
                let _ = write!(tsv, "\t{:.6}", hidden.at(&[si, pos, j]));
            }
            tsv.push('\n');
        }
    }

    let mut manifest = Manifest::new(
        "export-embeddings",
        settings.train.seed,
        &settings.to_kv().echo(),
    );
    manifest.input("train", train_file);
    manifest.input("checkpoint", ckpt);
    manifest.input("sequences", sequences_file);
    manifest.count("sequences", sequences.len() as u64);
    let out_file = out.export("embeddings.tsv");
    write_file(&out_file, &tsv, &mut manifest)?;
    manifest.write(&out.root)?;
    println!("{} sequences exported to {}", sequences.len(), out_file.display());
    Ok(())
}

pub fn param_count(
    entities: Option<usize>,
    relations: Option<usize>,
    train_file: Option<&Path>,
    settings: &RunSettings,
) -> Result<()> {
    let (v, r) = match (entities, relations, train_file) {
        (Some(v), Some(r), _) => (v, r),
        (_, _, Some(path)) => {
            let (_, vocab) = load_triples(path, VocabPolicy::Build)?;
            (vocab.entity_count(), vocab.relation_count())
        }
        _ => bail!("provide --entities and --relations, or --train"),
    };
    let mut cfg = settings.model.clone();
    cfg.entity_count = v;
    cfg.relation_count = r;
    cfg.validate()?;
    println!("{}", cfg.param_count());
    Ok(())
}
