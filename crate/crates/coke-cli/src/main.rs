//! Single entry point for the full workflow: ingest datasets, sample
//! paths, train, evaluate link prediction and path queries, export
//! contextualized embeddings, and report parameter counts.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.

mod commands;
mod manifest;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use coke::config::{KvConfig, RunSettings};
use coke::CokeError;
use commands::{EvalSplit, GraphFiles, SampleMode, Task, TrainArgs};
use manifest::OutDir;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "coke", version, about = "Contextualized knowledge graph embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key=value configuration file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override (training, sampling, initialization).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; checkpoints/, metrics/, logs/, exports/ land here.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads for tensor ops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(flatten)]
    overrides: Overrides,
}

/// Every model/trainer/sampler config key, one flag each.
#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    blocks: Option<String>,
    #[arg(long, global = true)]
    heads: Option<String>,
    #[arg(long, global = true)]
    hidden_size: Option<String>,
    #[arg(long, global = true)]
    ffn_size: Option<String>,
    #[arg(long, global = true)]
    max_seq_len: Option<String>,
    #[arg(long, global = true)]
    dropout: Option<String>,
    #[arg(long, global = true)]
    label_smoothing: Option<String>,
    #[arg(long, global = true)]
    learning_rate: Option<String>,
    #[arg(long, global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    max_epochs: Option<String>,
    #[arg(long, global = true)]
    warmup_fraction: Option<String>,
    #[arg(long, global = true)]
    dropout_grid: Option<String>,
    #[arg(long, global = true)]
    label_smoothing_grid: Option<String>,
    #[arg(long, global = true)]
    selection_metric: Option<String>,
    #[arg(long, global = true)]
    grad_clip: Option<String>,
    #[arg(long, global = true)]
    num_paths: Option<String>,
    #[arg(long, global = true)]
    min_len: Option<String>,
    #[arg(long, global = true)]
    max_len: Option<String>,
    #[arg(long, global = true)]
    scope: Option<String>,
}

impl Overrides {
    fn apply(&self, kv: &mut KvConfig) -> Result<(), CokeError> {
        let pairs: [(&str, &Option<String>); 19] = [
            ("blocks", &self.blocks),
            ("heads", &self.heads),
            ("hidden_size", &self.hidden_size),
            ("ffn_size", &self.ffn_size),
            ("max_seq_len", &self.max_seq_len),
            ("dropout", &self.dropout),
            ("label_smoothing", &self.label_smoothing),
            ("learning_rate", &self.learning_rate),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("warmup_fraction", &self.warmup_fraction),
            ("dropout_grid", &self.dropout_grid),
            ("label_smoothing_grid", &self.label_smoothing_grid),
            ("selection_metric", &self.selection_metric),
            ("grad_clip", &self.grad_clip),
            ("num_paths", &self.num_paths),
            ("min_len", &self.min_len),
            ("max_len", &self.max_len),
            ("scope", &self.scope),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                kv.set(key, v)?;
            }
        }
        Ok(())
    }
}

#[derive(Args)]
struct SplitArgs {
    /// Training triples, tab-separated s r o lines.
    #[arg(long)]
    train: PathBuf,
    /// Dev triples.
    #[arg(long)]
    dev: PathBuf,
    /// Test triples.
    #[arg(long)]
    test: PathBuf,
}

impl SplitArgs {
    fn files(&self) -> GraphFiles {
        GraphFiles {
            train: self.train.clone(),
            dev: self.dev.clone(),
            test: self.test.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a benchmark; export the vocabulary.
    Ingest {
        #[command(flatten)]
        splits: SplitArgs,
    },
    /// Generate path datasets by random walks.
    SamplePaths {
        #[command(flatten)]
        splits: SplitArgs,
        /// `train`: walk the training graph and inject training triples as
        /// length-1 paths. `test`: walk train∪test and drop paths seen in
        /// --dedup-against.
        #[arg(long, value_parser = ["train", "test"])]
        mode: String,
        /// Training path file to deduplicate test paths against.
        #[arg(long)]
        dedup_against: Option<PathBuf>,
    },
    /// Train a model and keep the best dev-metric checkpoint.
    Train {
        #[command(flatten)]
        splits: SplitArgs,
        /// `link`: edge training on the training triples. `path`: path
        /// training from --train-paths / --dev-paths files.
        #[arg(long, value_parser = ["link", "path"], default_value = "link")]
        task: String,
        #[arg(long)]
        train_paths: Option<PathBuf>,
        #[arg(long)]
        dev_paths: Option<PathBuf>,
        /// Enumerate the dropout × label-smoothing grids and keep the best.
        #[arg(long, default_value_t = false)]
        grid: bool,
    },
    /// Filtered link-prediction metrics for a checkpoint.
    EvalLink {
        #[command(flatten)]
        splits: SplitArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["dev", "test"], default_value = "test")]
        split: String,
    },
    /// Path-query metrics (MQ, H@10) for a checkpoint.
    EvalPath {
        #[command(flatten)]
        splits: SplitArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test_paths: PathBuf,
        /// Also evaluate the link-prediction protocol on length-1 paths.
        #[arg(long, default_value_t = false)]
        length1: bool,
    },
    /// Final hidden states for every token of the given sequences, as TSV.
    ExportEmbeddings {
        /// Training triples (rebuilds the vocabulary the checkpoint used).
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sequences to encode, in the path file format.
        #[arg(long)]
        sequences: PathBuf,
    },
    /// Trainable parameter total for a configuration and vocabulary.
    ParamCount {
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long)]
        relations: Option<usize>,
        /// Training file to take vocabulary sizes from instead.
        #[arg(long)]
        train: Option<PathBuf>,
    },
}

fn resolve_settings(cli: &Cli) -> Result<RunSettings> {
    let mut kv = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CokeError::io(path.display().to_string(), e))?;
            KvConfig::parse(&text)?
        }
        None => KvConfig::default(),
    };
    cli.overrides.apply(&mut kv)?;
    if let Some(seed) = cli.seed {
        kv.set("seed", &seed.to_string())?;
    }
    // path-task runs default to the longer sequence form unless pinned
    if let Command::Train { task, .. } = &cli.command {
        if task == "path" && kv.get("max_seq_len").is_none() {
            kv.set("max_seq_len", "7")?;
        }
        if task == "path" && kv.get("selection_metric").is_none() {
            kv.set("selection_metric", "mq")?;
        }
    }
    if let Command::EvalPath { .. } = &cli.command {
        if kv.get("max_seq_len").is_none() {
            kv.set("max_seq_len", "7")?;
        }
    }
    Ok(RunSettings::from_kv(&kv)?)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        coke::set_threads(n);
    }
    let settings = resolve_settings(&cli)?;
    if let Command::ParamCount {
        entities,
        relations,
        train,
    } = &cli.command
    {
        return commands::param_count(*entities, *relations, train.as_deref(), &settings);
    }
    let out = OutDir::create(&cli.out_dir)?;
    match cli.command {
        Command::Ingest { splits } => commands::ingest(&splits.files(), &settings, &out),
        Command::SamplePaths {
            splits,
            mode,
            dedup_against,
        } => {
            let mode = match mode.as_str() {
                "train" => SampleMode::Train,
                _ => SampleMode::Test {
                    dedup_against: dedup_against.ok_or_else(|| {
                        CokeError::Config("--dedup-against is required in test mode".into())
                    })?,
                },
            };
            commands::sample_paths(&splits.files(), mode, &settings, &out)
        }
        Command::Train {
            splits,
            task,
            train_paths,
            dev_paths,
            grid,
        } => {
            let args = TrainArgs {
                files: splits.files(),
                task: if task == "path" { Task::Path } else { Task::Link },
                train_paths,
                dev_paths,
                grid,
            };
            commands::train(&args, &settings, &out)
        }
        Command::EvalLink {
            splits,
            checkpoint,
            split,
        } => {
            let split = if split == "dev" { EvalSplit::Dev } else { EvalSplit::Test };
            commands::eval_link(&splits.files(), &checkpoint, split, &settings, &out)
        }
        Command::EvalPath {
            splits,
            checkpoint,
            test_paths,
            length1,
        } => commands::eval_path(
            &splits.files(),
            &checkpoint,
            &test_paths,
            length1,
            &settings,
            &out,
        ),
        Command::ExportEmbeddings {
            train,
            checkpoint,
            sequences,
        } => commands::export_embeddings(&train, &checkpoint, &sequences, &settings, &out),
        Command::ParamCount { .. } => unreachable!("handled above"),
    }
}

/// Exit-code category for an error chain.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(coke_err) = cause.downcast_ref::<CokeError>() {
            return match coke_err {
                CokeError::NonFiniteLoss { .. } | CokeError::Shape { .. } => (3, "numerical"),
                _ => (2, "data"),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (2, "data");
        }
    }
    (2, "data")
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not usage errors
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("error: usage: {}", one_line(&e.to_string()));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, category) = classify(&err);
            eprintln!("error: {category}: {}", one_line(&format!("{err:#}")));
            ExitCode::from(code)
        }
    }
}

fn one_line(s: &str) -> String {
    s.lines().next().unwrap_or_default().trim().to_string()
}
