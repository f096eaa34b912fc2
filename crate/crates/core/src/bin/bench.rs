use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use filterbench::runner::{Experiment, ExperimentConfig, MAX_SEED};
use filterbench::Result;
use serde_json::json;

#[derive(Parser)]
#[command(name = "bench", about = "Face-filter robustness benchmark", version)]
struct Cli {
    /// Experiment config (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the split, filter and training seeds.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the evaluation corpus.
    Synth,
    /// Reconstruction pair corpus and model training.
    Reconstruct {
        #[command(subcommand)]
        cmd: ReconCmd,
    },
    /// Build the eight dataset variants.
    BuildVariants,
    /// Detect faces and extract embeddings for every variant.
    Embed,
    /// Evaluation reports from the saved embeddings.
    Eval {
        #[command(subcommand)]
        what: EvalCmd,
    },
    /// 2-d projections of every variant's embeddings.
    Tsne,
    /// Every evaluation report from the saved embeddings.
    Report,
    /// All stages, corpus to reports.
    Run,
}

#[derive(Subcommand)]
enum ReconCmd {
    /// Render the pair corpus and shade it.
    Pairs,
    Train {
        /// Pair manifest; defaults to the one written by `reconstruct pairs`.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    ClosedSet,
    CrossFilter,
    OpenSet,
    Verify,
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let e = Experiment::new(cfg, &cli.out_dir)?;
    let out = match cli.cmd {
        Cmd::Synth => {
            let m = e.synth()?;
            json!({ "stage": "synth", "records": m.len(), "identities": m.identities().len() })
        }
        Cmd::Reconstruct { cmd: ReconCmd::Pairs } => {
            let p = e.build_pairs()?;
            json!({ "stage": "reconstruct pairs", "pairs": p.pairs.len(), "path": e.pairs_path() })
        }
        Cmd::Reconstruct {
            cmd: ReconCmd::Train { pairs },
        } => {
            let (_, rep) = e.train_recon(pairs.as_deref())?;
            json!({ "stage": "reconstruct train", "model": e.model_path(), "report": rep })
        }
        Cmd::BuildVariants => {
            let vs = e.build_variants()?;
            let counts: Vec<_> = vs.iter().map(|v| json!({ "name": v.name, "records": v.len(), "excluded": v.excluded.len() })).collect();
            json!({ "stage": "build-variants", "variants": counts })
        }
        Cmd::Embed => {
            let set = e.embed()?;
            e.report_datasets(&set)?;
            let rates: Vec<_> = set.variants.iter().map(|v| json!({ "name": v.name, "detection_rate": v.stats.rate() })).collect();
            json!({ "stage": "embed", "variants": rates })
        }
        Cmd::Eval { what } => {
            let set = e.embeddings()?;
            let splits = e.splits()?;
            match what {
                EvalCmd::ClosedSet => {
                    let models = e.train_models(&set, &splits)?;
                    e.eval_closed_set(&set, &splits, &models)?;
                    json!({ "stage": "eval closed-set", "report": e.reports_dir().join("closed_set.csv") })
                }
                EvalCmd::CrossFilter => {
                    let models = e.train_models(&set, &splits)?;
                    e.eval_cross_filter(&set, &splits, &models)?;
                    json!({ "stage": "eval cross-filter", "reports": e.reports_dir() })
                }
                EvalCmd::OpenSet => {
                    let r = e.eval_open_set(&set, &splits)?;
                    json!({ "stage": "eval open-set", "gar_at_loosest": r.gar_at_loosest, "held_out": r.held_out.len() })
                }
                EvalCmd::Verify => {
                    let r = e.eval_verification(&set, &splits)?;
                    json!({ "stage": "eval verify", "average_eer": r.average })
                }
            }
        }
        Cmd::Tsne => {
            let s = e.tsne(&e.embeddings()?)?;
            json!({ "stage": "tsne", "silhouette": s.into_iter().map(|(k, v)| (k, json!(v))).collect::<serde_json::Map<_, _>>() })
        }
        Cmd::Report => {
            e.report()?;
            json!({ "stage": "report", "reports": e.reports_dir() })
        }
        Cmd::Run => {
            e.run_all()?;
            json!({ "stage": "run", "reports": e.reports_dir() })
        }
    };
    Ok(out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", json!({ "error": err.kind(), "message": err.to_string() }));
            ExitCode::from(1)
        }
    }
}
