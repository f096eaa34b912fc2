//! End-to-end experiment pipeline: corpus, reconstruction model, variants,
//! embeddings, evaluation regimes and reports.
//!
//! Output layout under `out_dir`:
//! `source/`, `recon_pairs/`, `recon/model.fbunet`, `variants/<name>/`,
//! `embeddings/`, `splits.json`, `reports/`.

pub mod config;
pub mod protocol;
pub mod report;
pub mod splits;
pub mod tsne;
pub mod variants;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{CorpusConfig, ExperimentConfig, ReconConfig, Seeds, TsneConfig, MAX_SEED};
pub use protocol::{
    run_closed_set, run_cross_filter, run_open_set, run_verification, ClosedSetTable, CrossFilterMatrix, EmbeddingSet,
    OpenSetResult, RegimeModels, Regime, VerificationResults, CLASSIFIER_KINDS,
};
pub use report::ReportHeader;
pub use splits::{draw_held_out, make_splits, Split, Splits};
pub use tsne::{silhouette, top_classes, tsne};
pub use variants::{
    build_all_variants, build_pair_corpus, leak_guard, load_variants, model_id, prepare_corpus, train_reconstructor,
    PairManifest, Toolkit, VARIANTS,
};

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::matchers::Metric;
use crate::recon::checkpoint::{load_checkpoint, save_checkpoint};
use crate::recon::{Reconstructor, TrainReport};

/// Fewer accepted records than this and a variant gets no projection.
pub const MIN_TSNE_RECORDS: usize = 5;

/// Identity of the trained reconstruction model, written next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub trained_on: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<TrainReport>,
}

/// Everything the evaluation stages produce, for callers that want the
/// numbers rather than the files.
pub struct RunSummary {
    pub embeddings: EmbeddingSet,
    pub closed_set: ClosedSetTable,
    pub cross_filter: Vec<CrossFilterMatrix>,
    pub open_set: OpenSetResult,
    pub verification: VerificationResults,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub toolkit: Toolkit,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let toolkit = Toolkit::from_config(&config)?;
        Ok(Experiment {
            config,
            out_dir: out_dir.into(),
            toolkit,
        })
    }

    pub fn source_dir(&self) -> PathBuf {
        self.out_dir.join("source")
    }
    pub fn pairs_path(&self) -> PathBuf {
        self.out_dir.join("recon_pairs").join("pairs.json")
    }
    pub fn model_path(&self) -> PathBuf {
        self.config
            .recon
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("recon").join("model.fbunet"))
    }
    pub fn variants_dir(&self) -> PathBuf {
        self.out_dir.join("variants")
    }
    pub fn embeddings_dir(&self) -> PathBuf {
        self.out_dir.join("embeddings")
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }

    /// Renders (or imports) the evaluation corpus.
    pub fn synth(&self) -> Result<DatasetManifest> {
        prepare_corpus(&self.config.corpus, self.config.min_images, &self.source_dir())
    }

    /// The evaluation corpus as left by [`Experiment::synth`].
    pub fn source(&self) -> Result<DatasetManifest> {
        let c = &self.config.corpus;
        let mut m = match &c.manifest {
            Some(p) => DatasetManifest::load(p, None)?,
            None => DatasetManifest::load(&self.source_dir().join("manifest.json"), None)?,
        };
        m.source = c.id.clone();
        m.name = "source".into();
        Ok(m.with_min_images(self.config.min_images))
    }

    pub fn build_pairs(&self) -> Result<PairManifest> {
        let dir = self.pairs_path().parent().expect("pairs path has a parent").to_path_buf();
        build_pair_corpus(&self.config.recon, &self.toolkit, &dir)
    }

    /// Trains on `pairs` (default: the built pair corpus) and saves the
    /// checkpoint plus `model.json` beside it.
    pub fn train_recon(&self, pairs: Option<&Path>) -> Result<(Reconstructor, TrainReport)> {
        let path = pairs.map_or_else(|| self.pairs_path(), Path::to_path_buf);
        let pairs = PairManifest::load(&path)?;
        let (model, rep) = train_reconstructor(&self.config.recon, &pairs)?;
        let out = self.model_path();
        if let Some(dir) = out.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        save_checkpoint(&model, &out)?;
        let info = ModelInfo {
            model_id: model_id(&model),
            trained_on: model.trained_on.clone(),
            report: Some(rep.clone()),
        };
        report::write_json(
            out.parent().unwrap_or(Path::new(".")),
            "model.json",
            &serde_json::to_value(&info).expect("model info serializes"),
        )?;
        Ok((model, rep))
    }

    pub fn recon_model(&self) -> Result<Reconstructor> {
        load_checkpoint(&self.model_path())
    }

    pub fn build_variants(&self) -> Result<Vec<DatasetManifest>> {
        let source = self.source()?;
        let model = self.recon_model()?;
        let out = build_all_variants(&source, &model, &self.toolkit, self.config.seeds.filter, &self.variants_dir())?;
        let info = ModelInfo {
            model_id: model_id(&model),
            trained_on: model.trained_on.clone(),
            report: None,
        };
        report::write_json(
            &self.variants_dir(),
            "model.json",
            &serde_json::to_value(&info).expect("model info serializes"),
        )?;
        Ok(out)
    }

    pub fn embed(&self) -> Result<EmbeddingSet> {
        let variants = load_variants(&self.variants_dir())?;
        let set = EmbeddingSet::extract(&variants, self.toolkit.detector.as_ref(), self.toolkit.backbone.as_ref())?;
        set.save(&self.embeddings_dir())?;
        Ok(set)
    }

    pub fn embeddings(&self) -> Result<EmbeddingSet> {
        EmbeddingSet::load(&self.embeddings_dir())
    }

    /// Shared train/test map, also written to `splits.json`.
    pub fn splits(&self) -> Result<Splits> {
        let s = make_splits(&self.source()?, self.config.split_ratio, self.config.seeds.split)?;
        report::write_json(&self.out_dir, "splits.json", &serde_json::to_value(&s).expect("splits serialize"))?;
        Ok(s)
    }

    pub fn header(&self) -> ReportHeader {
        let s = self.config.seeds;
        let reconstruction = std::fs::read_to_string(self.variants_dir().join("model.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<ModelInfo>(&t).ok())
            .map_or_else(
                || "none".to_string(),
                |m| format!("{} trained_on={}", m.model_id, m.trained_on.join("+")),
            );
        ReportHeader {
            config_hash: self.config.hash(),
            seeds: format!("split={} filter={} train={}", s.split, s.filter, s.train),
            detector: format!("{} {}", self.toolkit.detector.adapter_id(), self.toolkit.detector.version()),
            backbone: format!("{} {}", self.toolkit.backbone.id(), self.toolkit.backbone.version()),
            reconstruction,
        }
    }

    pub fn train_models(&self, set: &EmbeddingSet, splits: &Splits) -> Result<Vec<RegimeModels>> {
        CLASSIFIER_KINDS
            .iter()
            .map(|k| RegimeModels::train(set, splits, *k, &self.config.classifier, self.config.seeds.train))
            .collect()
    }

    pub fn report_datasets(&self, set: &EmbeddingSet) -> Result<()> {
        report::write_text(&self.reports_dir(), "datasets.csv", &report::datasets_csv(&self.header(), &set.variants))
    }

    pub fn eval_closed_set(&self, set: &EmbeddingSet, splits: &Splits, models: &[RegimeModels]) -> Result<ClosedSetTable> {
        let t = run_closed_set(set, splits, models)?;
        let h = self.header();
        report::write_text(&self.reports_dir(), "closed_set.csv", &report::closed_set_csv(&h, &t))?;
        report::write_text(&self.reports_dir(), "closed_set_counts.csv", &report::closed_set_counts_csv(&h, &t))?;
        Ok(t)
    }

    pub fn eval_cross_filter(&self, set: &EmbeddingSet, splits: &Splits, models: &[RegimeModels]) -> Result<Vec<CrossFilterMatrix>> {
        let h = self.header();
        models
            .iter()
            .map(|m| {
                let x = run_cross_filter(set, splits, m)?;
                let name = format!("cross_filter_{}", m.kind.id());
                report::write_text(&self.reports_dir(), &format!("{name}.csv"), &report::cross_filter_csv(&h, &x))?;
                report::write_json(&self.reports_dir(), &format!("{name}.json"), &report::cross_filter_json(&h, &x))?;
                Ok(x)
            })
            .collect()
    }

    pub fn eval_open_set(&self, set: &EmbeddingSet, splits: &Splits) -> Result<OpenSetResult> {
        let n = set.identities().len();
        let held_out = self.config.held_out.unwrap_or_else(|| self.config.held_out_for(n));
        let s = self.config.seeds;
        let r = run_open_set(set, splits, held_out, &self.config.classifier, s.split, s.train)?;
        let h = self.header();
        report::write_text(&self.reports_dir(), "open_set.csv", &report::open_set_csv(&h, &r))?;
        report::write_json(&self.reports_dir(), "open_set.json", &report::open_set_json(&h, &r))?;
        Ok(r)
    }

    pub fn eval_verification(&self, set: &EmbeddingSet, splits: &Splits) -> Result<VerificationResults> {
        let r = run_verification(set, splits)?;
        let h = self.header();
        report::write_text(&self.reports_dir(), "verification_eer.csv", &report::verification_csv(&h, &r))?;
        for m in Metric::ALL {
            report::write_json(&self.reports_dir(), &format!("det_{}.json", m.id()), &report::det_json(&h, &r, m))?;
        }
        Ok(r)
    }

    /// Projects every variant to 2-d and writes `tsne_<variant>.csv` plus a
    /// silhouette summary. Variants with too few records are reported NA.
    pub fn tsne(&self, set: &EmbeddingSet) -> Result<Vec<(String, Option<f64>)>> {
        let h = self.header();
        let cfg = self.config.tsne;
        let mut summary = Vec::new();
        for v in &set.variants {
            let data: Vec<Vec<f32>> = v.records.iter().map(|r| r.vector.clone()).collect();
            let labels: Vec<String> = v.records.iter().map(|r| r.identity.clone()).collect();
            if data.len() < MIN_TSNE_RECORDS {
                summary.push((v.name.clone(), None));
                continue;
            }
            let perplexity = cfg.perplexity.min((data.len() as f64 - 1.0) / 3.0);
            let coords = tsne(&data, perplexity, cfg.iterations, self.config.seeds.train)?;
            let rows: Vec<(String, String)> = v.records.iter().map(|r| (r.image_id.clone(), r.identity.clone())).collect();
            let colored = top_classes(&labels, 5);
            report::write_text(
                &self.reports_dir(),
                &format!("tsne_{}.csv", v.name),
                &report::tsne_csv(&h, &rows, &coords, &colored),
            )?;
            summary.push((v.name.clone(), Some(silhouette(&coords, &labels))));
        }
        let mut s = h.render();
        s.push_str("variant,silhouette\n");
        for (v, sil) in &summary {
            let sil = sil.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
            s.push_str(&format!("{v},{sil}\n"));
        }
        report::write_text(&self.reports_dir(), "tsne_silhouette.csv", &s)?;
        Ok(summary)
    }

    /// Every evaluation stage over the saved embeddings.
    pub fn report(&self) -> Result<RunSummary> {
        let set = self.embeddings()?;
        self.evaluate(set)
    }

    fn evaluate(&self, set: EmbeddingSet) -> Result<RunSummary> {
        let splits = self.splits()?;
        self.report_datasets(&set)?;
        let models = self.train_models(&set, &splits)?;
        let closed_set = self.eval_closed_set(&set, &splits, &models)?;
        let cross_filter = self.eval_cross_filter(&set, &splits, &models)?;
        let open_set = self.eval_open_set(&set, &splits)?;
        let verification = self.eval_verification(&set, &splits)?;
        self.tsne(&set)?;
        Ok(RunSummary {
            embeddings: set,
            closed_set,
            cross_filter,
            open_set,
            verification,
        })
    }

    /// Corpus to reports. An existing checkpoint at the model path is
    /// reused instead of retraining.
    pub fn run_all(&self) -> Result<RunSummary> {
        self.synth()?;
        if !self.model_path().exists() {
            self.build_pairs()?;
            self.train_recon(None)?;
        }
        self.build_variants()?;
        let set = self.embed()?;
        self.evaluate(set)
    }
}
