//! Runs every stage on a small corpus: render, reconstruction training,
//! variants, embeddings and all reports.
//!
//! The reconstruction model here is deliberately tiny; `bench run` with the
//! default config trains the full-size one.
//!
//! `cargo run --release --example pipeline -- [out_dir]`

use std::path::PathBuf;

use filterbench::recon::{TrainHyper, UNetConfig};
use filterbench::runner::{CorpusConfig, Experiment, ExperimentConfig};

fn main() -> filterbench::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("filterbench-pipeline"));

    let mut cfg = ExperimentConfig::default();
    cfg.corpus = CorpusConfig { id: "example-eval".into(), identities: 10, images_per_identity: 10, seed: 2, manifest: None };
    cfg.recon.corpus = CorpusConfig { id: "example-recon".into(), identities: 30, images_per_identity: 4, seed: 3, manifest: None };
    cfg.recon.unet = UNetConfig { input_size: 64, depth: 3, base_channels: 8 };
    cfg.recon.train = TrainHyper { batch: 4, lr: 3e-3, epochs: 15, seed: 4 };
    cfg.tsne.iterations = 300;

    let summary = Experiment::new(cfg, &out)?.run_all()?;
    for v in &summary.embeddings.variants {
        println!("{:<22} detection {:.3}", v.name, v.stats.rate());
    }
    println!("verification EER (euclidean / manhattan / cosine):");
    for row in &summary.verification.rows {
        let eer: Vec<String> = row.eer.iter().map(|e| e.map_or("NA".into(), |e| format!("{:.3}", e.eer))).collect();
        println!("{:<22} EER {}", row.variant, eer.join(" / "));
    }
    println!("reports in {}", out.join("reports").display());
    Ok(())
}
