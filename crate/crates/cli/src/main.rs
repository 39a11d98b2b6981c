use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use grasp::io;
use grasp::metrics::{self, FeatureTag};
use grasp::pipeline::{self, ExperimentConfig, LedgerReport, RunManifest};
use grasp::training;

/// Prior-guided partitioning and residual adapters for long-tail generation.
#[derive(Debug, Parser)]
#[command(name = "grasp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw train and test corpora.
    Generate(Common),
    /// Partition a corpus into experts.
    Partition {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Pretrain the backbone and fine-tune the adapters.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        partition: PathBuf,
    },
    /// Draw guided samples from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus the partition refers to (the training corpus).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        partition: PathBuf,
    },
    /// Score generated vectors against train and test sets.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Within-cluster gradient conflict of the standard partitions.
    AnalyzeConflicts {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Model to probe; a backbone is pretrained from the config if absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Tabulate two or more run manifests.
    Compare {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true, num_args = 2..)]
        manifests: Vec<PathBuf>,
    },
    /// Run every stage end to end.
    Run(Common),
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, u64)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    let root = cfg.seeds[0];
    Ok((cfg, root))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate(common) => {
            let (cfg, root) = load_config(&common)?;
            let (train, test) = pipeline::stage_generate(&cfg, root)?;
            io::write_corpus(&common.out.join("corpus_train.txt"), &train)?;
            io::write_corpus(&common.out.join("corpus_test.txt"), &test)?;
        }
        Command::Partition { common, corpus } => {
            let (cfg, root) = load_config(&common)?;
            let corpus = io::read_corpus(&corpus)?;
            let p = pipeline::stage_partition(&cfg, &corpus, root)?;
            io::write_partition(&common.out.join("partition.txt"), &p)?;
            io::write_json(
                &common.out.join("composition.json"),
                &io::CompositionReport::new(&p),
            )?;
        }
        Command::Train {
            common,
            corpus,
            partition,
        } => {
            let (cfg, root) = load_config(&common)?;
            let corpus = io::read_corpus(&corpus)?;
            let partition = io::read_partition(&partition, &corpus)?;
            let (backbone, _) = pipeline::stage_pretrain(&cfg, &corpus, root)?;
            let state = pipeline::build_model(&cfg, backbone, partition.k, root)?;
            let outcome = pipeline::stage_train(&cfg, state, &corpus, &partition, root)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            io::write_checkpoint(&common.out.join("checkpoint.json"), &outcome.state)?;
            io::write_json(
                &common.out.join("ledger.json"),
                &LedgerReport::new(&outcome),
            )?;
            io::write_text(
                &common.out.join("conflict_trace.csv"),
                &pipeline::trace_csv(&outcome),
            )?;
            io::write_text(
                &common.out.join("train_losses.csv"),
                &pipeline::losses_csv(&outcome.losses),
            )?;
        }
        Command::Sample {
            common,
            checkpoint,
            corpus,
            partition,
        } => {
            let (cfg, root) = load_config(&common)?;
            let state = io::read_checkpoint(&checkpoint)?;
            let corpus = io::read_corpus(&corpus)?;
            let partition = io::read_partition(&partition, &corpus)?;
            let generated = pipeline::stage_sample(&cfg, &state, &corpus, &partition, root)?;
            io::write_corpus(&common.out.join("generated.txt"), &generated)?;
        }
        Command::Evaluate {
            common,
            generated,
            train,
            test,
        } => {
            let (cfg, _) = load_config(&common)?;
            let report = metrics::evaluate(
                &io::read_features(&generated, FeatureTag::Generated)?,
                &io::read_features(&train, FeatureTag::Train)?,
                &io::read_features(&test, FeatureTag::Test)?,
                cfg.metrics.k,
            )?;
            io::write_json(&common.out.join("metrics.json"), &report)?;
            io::write_text(
                &common.out.join("metrics.csv"),
                &pipeline::report_csv(&report),
            )?;
        }
        Command::AnalyzeConflicts {
            common,
            corpus,
            checkpoint,
        } => {
            let (cfg, root) = load_config(&common)?;
            let corpus = io::read_corpus(&corpus)?;
            let state = match checkpoint {
                Some(p) => io::read_checkpoint(&p)?,
                None => {
                    let (backbone, _) = pipeline::stage_pretrain(&cfg, &corpus, root)?;
                    pipeline::build_model(&cfg, backbone, 1, root)?
                }
            };
            let named = pipeline::named_partitions(&corpus, cfg.partition.k, root)?;
            let names: Vec<String> = named.keys().cloned().collect();
            let parts: Vec<_> = named.into_values().collect();
            let scores = training::measure_conflict_reduction(
                &state,
                &corpus,
                &parts,
                &cfg.training.probe,
                grasp::seed::child_seed(root, "conflict-analysis"),
            )?;
            io::write_text(
                &common.out.join("conflicts.csv"),
                &pipeline::conflict_table(&names, &scores),
            )?;
        }
        Command::Compare { out, manifests } => {
            let loaded = manifests
                .iter()
                .map(|p| {
                    io::read_json::<RunManifest>(p)
                        .with_context(|| format!("reading {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            io::write_text(
                &out.join("comparison.csv"),
                &pipeline::compare_runs(&loaded)?,
            )?;
        }
        Command::Run(common) => {
            let (cfg, _) = load_config(&common)?;
            let manifest = pipeline::run_pipeline(&cfg, &common.out)?;
            for r in &manifest.runs {
                println!(
                    "seed {}: coverage {:.4}, utilization gap {:.2}",
                    r.seed, r.summary.coverage, r.summary.utilization_gap
                );
            }
        }
    }
    Ok(())
}

/// The error chain, minus causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            // a bad config is a usage error; everything else is a stage failure
            match e.downcast_ref::<grasp::GraspError>() {
                Some(grasp::GraspError::Config(_)) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
