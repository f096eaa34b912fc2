//! Identification and verification protocols over per-variant embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::splits::{draw_held_out, Split, Splits};
use super::variants::VARIANTS;
use crate::embedding::{embed_dataset, Backbone, DetectionStats, EmbeddingRecord, EmbeddingStore, MinMaxScaler};
use crate::detector::FaceDetector;
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::matchers::{
    pairwise_distance, rank_gallery, train_classifier, Classifier, ClassifierHyper, ClassifierKind, Metric,
};
use crate::metrics::{
    closed_set_accuracy, compute_eer, open_set_sweep, threshold_grid, verification_sweep, DetCurve, Eer, Polarity,
    ScoreSet,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantEmbeddings {
    pub name: String,
    pub records: Vec<EmbeddingRecord>,
    pub stats: DetectionStats,
}

/// Embeddings of every variant, in `VARIANTS` order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub backbone: String,
    pub dim: usize,
    pub variants: Vec<VariantEmbeddings>,
}

impl EmbeddingSet {
    pub fn extract(variants: &[DatasetManifest], detector: &dyn FaceDetector, backbone: &dyn Backbone) -> Result<Self> {
        let variants = variants
            .iter()
            .map(|m| {
                let (records, stats) = embed_dataset(m, detector, backbone)?;
                Ok(VariantEmbeddings {
                    name: m.name.clone(),
                    records,
                    stats,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingSet {
            backbone: backbone.id().to_string(),
            dim: backbone.dim(),
            variants,
        })
    }

    /// Sorted union of identities over every variant.
    pub fn identities(&self) -> Vec<String> {
        let all: std::collections::BTreeSet<&str> =
            self.variants.iter().flat_map(|v| v.records.iter().map(|r| r.identity.as_str())).collect();
        all.into_iter().map(String::from).collect()
    }

    pub fn variant(&self, name: &str) -> Result<&VariantEmbeddings> {
        self.variants
            .iter()
            .find(|v| v.name == name)
            .ok_or_else(|| Error::contract(format!("no embeddings for variant `{name}`")))
    }

    /// `<dir>/<variant>.fbemb` per variant plus `<dir>/detection.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut stats = BTreeMap::new();
        for v in &self.variants {
            EmbeddingStore::new(&self.backbone, &v.name, self.dim, v.records.clone()).save(&dir.join(format!("{}.fbemb", v.name)))?;
            stats.insert(v.name.clone(), v.stats.clone());
        }
        let p = dir.join("detection.json");
        let json = serde_json::to_string_pretty(&stats).expect("stats serialize");
        std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("detection.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut stats: BTreeMap<String, DetectionStats> =
            serde_json::from_str(&text).map_err(|e| Error::format("detection stats", e.to_string()))?;
        let mut variants = Vec::new();
        let (mut backbone, mut dim) = (String::new(), 0);
        for name in VARIANTS {
            let store = EmbeddingStore::load(&dir.join(format!("{name}.fbemb")))?;
            backbone = store.backbone.clone();
            dim = store.dim;
            variants.push(VariantEmbeddings {
                name: name.into(),
                records: store.records,
                stats: stats.remove(name).unwrap_or_default(),
            });
        }
        Ok(EmbeddingSet { backbone, dim, variants })
    }
}

/// Training data for a classifier column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Benchmark,
    Filter,
    All,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Benchmark, Regime::Filter, Regime::All];

    pub fn id(self) -> &'static str {
        match self {
            Regime::Benchmark => "benchmark",
            Regime::Filter => "filter",
            Regime::All => "all",
        }
    }
}

pub const CLASSIFIER_KINDS: [ClassifierKind; 2] = [ClassifierKind::OneVsAllMargin, ClassifierKind::BoostedSoftmax];

/// Enrolment template per identity: the first accepted benchmark image.
#[derive(Clone, Debug, PartialEq)]
pub struct Enrolment {
    /// Sorted by identity.
    pub gallery: Vec<(String, Vec<f32>)>,
    pub image_ids: Vec<String>,
    /// Identities without any accepted benchmark image.
    pub missing: Vec<String>,
}

pub fn enrol(set: &EmbeddingSet, identities: &[String], scaler: &MinMaxScaler) -> Result<Enrolment> {
    let bench = set.variant("benchmark")?;
    let mut first: BTreeMap<&str, &EmbeddingRecord> = BTreeMap::new();
    for r in &bench.records {
        first.entry(r.identity.as_str()).or_insert(r);
    }
    let mut out = Enrolment {
        gallery: Vec::new(),
        image_ids: Vec::new(),
        missing: Vec::new(),
    };
    let mut ids = identities.to_vec();
    ids.sort();
    for id in ids {
        match first.get(id.as_str()) {
            Some(r) => {
                out.gallery.push((id.clone(), scaler.apply(&r.vector)?));
                out.image_ids.push(r.image_id.clone());
            }
            None => out.missing.push(id),
        }
    }
    Ok(out)
}

/// Scaler fitted on the benchmark training split.
pub fn benchmark_scaler(set: &EmbeddingSet, splits: &Splits) -> Result<MinMaxScaler> {
    let rows: Vec<Vec<f32>> = set
        .variant("benchmark")?
        .records
        .iter()
        .filter(|r| splits.is(&r.image_id, Split::Train))
        .map(|r| r.vector.clone())
        .collect();
    MinMaxScaler::fit(&rows, "benchmark/train")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// `None` when there were no probes or no model to score them.
    pub gar: Option<f64>,
    pub probes: usize,
    pub train_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedSetTable {
    pub columns: Vec<String>,
    /// `(variant, cells)` in `VARIANTS` order.
    pub rows: Vec<(String, Vec<Cell>)>,
    pub unenrolled: Vec<String>,
}

impl ClosedSetTable {
    pub fn cell(&self, variant: &str, column: &str) -> Option<Cell> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(v, _)| v == variant).map(|(_, cells)| cells[c])
    }

    pub fn gar(&self, variant: &str, column: &str) -> Option<f64> {
        self.cell(variant, column).and_then(|c| c.gar)
    }
}

pub fn classifier_column(kind: ClassifierKind, regime: Regime) -> String {
    format!("{}/{}", kind.id(), regime.id())
}

/// Rank-1 accuracy of every probe of `variant` (all splits) against the
/// enrolment gallery; enrolment images themselves are not probed.
pub fn distance_cell(set: &EmbeddingSet, variant: &str, enrolment: &Enrolment, scaler: &MinMaxScaler, metric: Metric) -> Result<Cell> {
    let mut hits = Vec::new();
    let enrolled: std::collections::BTreeSet<&str> = enrolment.gallery.iter().map(|(id, _)| id.as_str()).collect();
    for r in &set.variant(variant)?.records {
        if enrolment.image_ids.contains(&r.image_id) || !enrolled.contains(r.identity.as_str()) {
            continue;
        }
        let ranked = rank_gallery(&scaler.apply(&r.vector)?, &enrolment.gallery, metric)?;
        hits.push(ranked[0].identity == r.identity);
    }
    Ok(Cell {
        gar: if hits.is_empty() { None } else { Some(closed_set_accuracy(&hits)?.gar) },
        probes: hits.len(),
        train_rows: 0,
    })
}

/// A classifier with the scaler fitted on its own training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledClassifier {
    pub scaler: MinMaxScaler,
    pub classifier: Classifier,
    pub train_rows: usize,
}

impl ScaledClassifier {
    pub fn train(
        rows: &[&EmbeddingRecord],
        kind: ClassifierKind,
        hyper: &ClassifierHyper,
        seed: u64,
        trained_on: &str,
    ) -> Result<Self> {
        let raw: Vec<Vec<f32>> = rows.iter().map(|r| r.vector.clone()).collect();
        let scaler = MinMaxScaler::fit(&raw, trained_on)?;
        let x = scaler.apply_all(&raw)?;
        let y: Vec<String> = rows.iter().map(|r| r.identity.clone()).collect();
        let classifier = train_classifier(&x, &y, kind, hyper, seed, trained_on)?;
        Ok(ScaledClassifier {
            scaler,
            classifier,
            train_rows: rows.len(),
        })
    }

    /// Rank-1 accuracy on `probes`.
    pub fn cell(&self, probes: &[&EmbeddingRecord]) -> Result<Cell> {
        let mut hits = Vec::with_capacity(probes.len());
        for r in probes {
            let d = self.classifier.classify(&self.scaler.apply(&r.vector)?)?;
            hits.push(d.identity == r.identity);
        }
        Ok(Cell {
            gar: if hits.is_empty() { None } else { Some(closed_set_accuracy(&hits)?.gar) },
            probes: hits.len(),
            train_rows: self.train_rows,
        })
    }
}

fn split_rows<'a>(v: &'a VariantEmbeddings, splits: &Splits, split: Split) -> Vec<&'a EmbeddingRecord> {
    v.records.iter().filter(|r| splits.is(&r.image_id, split)).collect()
}

/// Per-variant (Train=Filter) models and the pooled (Train=All) model of
/// one classifier kind. Train=Benchmark is the benchmark Filter model.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeModels {
    pub kind: ClassifierKind,
    /// `None` where the variant's train split covers fewer than two
    /// identities; its cells are reported as NA.
    pub per_variant: Vec<(String, Option<ScaledClassifier>)>,
    pub pooled: ScaledClassifier,
}

impl RegimeModels {
    pub fn train(set: &EmbeddingSet, splits: &Splits, kind: ClassifierKind, hyper: &ClassifierHyper, seed: u64) -> Result<Self> {
        let mut per_variant = Vec::new();
        let mut pooled_rows = Vec::new();
        for v in &set.variants {
            let rows = split_rows(v, splits, Split::Train);
            pooled_rows.extend(rows.iter().copied());
            let classes: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.identity.as_str()).collect();
            let model = if classes.len() < 2 {
                None
            } else {
                Some(ScaledClassifier::train(&rows, kind, hyper, seed, &format!("{}/train", v.name))?)
            };
            per_variant.push((v.name.clone(), model));
        }
        let pooled = ScaledClassifier::train(&pooled_rows, kind, hyper, seed, "all/train")?;
        Ok(RegimeModels { kind, per_variant, pooled })
    }

    pub fn filter_model(&self, variant: &str) -> Result<Option<&ScaledClassifier>> {
        self.per_variant
            .iter()
            .find(|(v, _)| v == variant)
            .map(|(_, m)| m.as_ref())
            .ok_or_else(|| Error::contract(format!("unknown variant `{variant}`")))
    }

    pub fn model(&self, regime: Regime, variant: &str) -> Result<Option<&ScaledClassifier>> {
        match regime {
            Regime::Benchmark => self.filter_model("benchmark"),
            Regime::Filter => self.filter_model(variant),
            Regime::All => Ok(Some(&self.pooled)),
        }
    }
}

fn cell_or_na(model: Option<&ScaledClassifier>, probes: &[&EmbeddingRecord]) -> Result<Cell> {
    match model {
        Some(m) => m.cell(probes),
        None => Ok(Cell {
            gar: None,
            probes: probes.len(),
            train_rows: 0,
        }),
    }
}

/// Distance columns (benchmark-train scaler, first benchmark image
/// enrolled) followed by every classifier kind under each regime, tested on
/// the variant's test split.
pub fn run_closed_set(set: &EmbeddingSet, splits: &Splits, models: &[RegimeModels]) -> Result<ClosedSetTable> {
    let scaler = benchmark_scaler(set, splits)?;
    let identities = set.identities();
    let enrolment = enrol(set, &identities, &scaler)?;
    let mut columns: Vec<String> = Metric::ALL.iter().map(|m| m.id().to_string()).collect();
    for m in models {
        for r in Regime::ALL {
            columns.push(classifier_column(m.kind, r));
        }
    }
    let mut rows = Vec::new();
    for v in &set.variants {
        let mut cells = Vec::new();
        for metric in Metric::ALL {
            cells.push(distance_cell(set, &v.name, &enrolment, &scaler, metric)?);
        }
        let probes = split_rows(v, splits, Split::Test);
        for m in models {
            for r in Regime::ALL {
                cells.push(cell_or_na(m.model(r, &v.name)?, &probes)?);
            }
        }
        rows.push((v.name.clone(), cells));
    }
    Ok(ClosedSetTable {
        columns,
        rows,
        unenrolled: enrolment.missing,
    })
}

/// `values[i][j]`: trained on variant `i` (Train=Filter), tested on the
/// test split of variant `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossFilterMatrix {
    pub kind: ClassifierKind,
    pub variants: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CrossFilterMatrix {
    pub fn get(&self, train: &str, test: &str) -> Option<f64> {
        let i = self.variants.iter().position(|v| v == train)?;
        let j = self.variants.iter().position(|v| v == test)?;
        self.values[i][j]
    }

    /// 8-bit gray levels, black = 0 accuracy, white = 1.
    pub fn gray(&self) -> Vec<Vec<Option<u8>>> {
        self.values
            .iter()
            .map(|row| row.iter().map(|v| v.map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)).collect())
            .collect()
    }
}

pub fn run_cross_filter(set: &EmbeddingSet, splits: &Splits, models: &RegimeModels) -> Result<CrossFilterMatrix> {
    let mut values = Vec::new();
    for train in &set.variants {
        let model = models.filter_model(&train.name)?;
        let mut row = Vec::new();
        for test in &set.variants {
            row.push(cell_or_na(model, &split_rows(test, splits, Split::Test))?.gar);
        }
        values.push(row);
    }
    Ok(CrossFilterMatrix {
        kind: models.kind,
        variants: set.variants.iter().map(|v| v.name.clone()).collect(),
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenSetResult {
    pub held_out: Vec<String>,
    pub train_rows: usize,
    pub mated: usize,
    pub nonmated: usize,
    /// Rank-1 accuracy of the mated searches.
    pub closed_set_gar: f64,
    /// GAR at the loosest threshold, where every mated score passes.
    pub gar_at_loosest: f64,
    pub curve: DetCurve,
}

/// Mixed into the split seed when drawing held-out identities.
pub const HELD_OUT_SALT: u64 = 0x000b_e5e7;

/// One-vs-all margins trained on the pooled train splits of the enrolled
/// identities. Mated searches: their test images in every variant;
/// non-mated: every image of the held-out identities.
pub fn run_open_set(
    set: &EmbeddingSet,
    splits: &Splits,
    held_out_count: usize,
    hyper: &ClassifierHyper,
    split_seed: u64,
    train_seed: u64,
) -> Result<OpenSetResult> {
    let identities = set.identities();
    let held_out = draw_held_out(&identities, held_out_count, split_seed ^ HELD_OUT_SALT)?;
    let unseen = |r: &EmbeddingRecord| held_out.binary_search(&r.identity).is_ok();
    let train: Vec<&EmbeddingRecord> = set
        .variants
        .iter()
        .flat_map(|v| v.records.iter())
        .filter(|r| !unseen(r) && splits.is(&r.image_id, Split::Train))
        .collect();
    let model = ScaledClassifier::train(&train, ClassifierKind::OneVsAllMargin, hyper, train_seed, "all/train/enrolled")?;
    let mut scores = ScoreSet {
        mated: Vec::new(),
        nonmated: Vec::new(),
        polarity: Polarity::HigherIsBetter,
    };
    for r in set.variants.iter().flat_map(|v| v.records.iter()) {
        if unseen(r) {
            let d = model.classifier.classify(&model.scaler.apply(&r.vector)?)?;
            scores.nonmated.push(d.confidence);
        } else if splits.is(&r.image_id, Split::Test) {
            let d = model.classifier.classify(&model.scaler.apply(&r.vector)?)?;
            scores.mated.push((d.confidence, d.identity == r.identity));
        }
    }
    let grid = threshold_grid(scores.mated.iter().map(|m| m.0).chain(scores.nonmated.iter().copied()));
    let curve = open_set_sweep(&scores, &grid)?;
    let flags: Vec<bool> = scores.mated.iter().map(|m| m.1).collect();
    Ok(OpenSetResult {
        held_out,
        train_rows: train.len(),
        mated: scores.mated.len(),
        nonmated: scores.nonmated.len(),
        closed_set_gar: closed_set_accuracy(&flags)?.gar,
        gar_at_loosest: 1.0 - curve.points[0].y,
        curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub variant: String,
    /// In `Metric::ALL` order; `None` without genuine or impostor scores.
    pub eer: Vec<Option<Eer>>,
    pub genuine: usize,
    pub impostor: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationResults {
    pub rows: Vec<VerificationRow>,
    /// Mean EER per metric over the variants that have one.
    pub average: Vec<f64>,
    /// `curves[m][v]`: metric `m`, variant `v`.
    pub curves: Vec<Vec<Option<DetCurve>>>,
    pub unenrolled: Vec<String>,
}

impl VerificationResults {
    pub fn eer(&self, variant: &str, metric: Metric) -> Option<f64> {
        let m = Metric::ALL.iter().position(|x| *x == metric)?;
        self.rows.iter().find(|r| r.variant == variant).and_then(|r| r.eer[m]).map(|e| e.eer)
    }
}

/// Every probe is compared with every enrolment template: its own
/// identity's gives a genuine score, the others impostor scores.
pub fn run_verification(set: &EmbeddingSet, splits: &Splits) -> Result<VerificationResults> {
    let scaler = benchmark_scaler(set, splits)?;
    let identities = set.identities();
    let enrolment = enrol(set, &identities, &scaler)?;
    let mut rows = Vec::new();
    let mut curves = vec![Vec::new(); Metric::ALL.len()];
    for v in &set.variants {
        let mut eers = Vec::new();
        let (mut n_gen, mut n_imp) = (0, 0);
        for (mi, metric) in Metric::ALL.into_iter().enumerate() {
            let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
            for r in &v.records {
                if enrolment.image_ids.contains(&r.image_id) || enrolment.missing.contains(&r.identity) {
                    continue;
                }
                let x = scaler.apply(&r.vector)?;
                for (id, g) in &enrolment.gallery {
                    let d = pairwise_distance(&x, g, metric)?;
                    if *id == r.identity {
                        genuine.push(d);
                    } else {
                        impostor.push(d);
                    }
                }
            }
            if genuine.is_empty() || impostor.is_empty() {
                eers.push(None);
                curves[mi].push(None);
            } else {
                let grid = threshold_grid(genuine.iter().chain(&impostor).copied());
                let curve = verification_sweep(&genuine, &impostor, &grid, Polarity::LowerIsBetter)?;
                eers.push(Some(compute_eer(&curve)?));
                curves[mi].push(Some(curve));
            }
            (n_gen, n_imp) = (genuine.len(), impostor.len());
        }
        rows.push(VerificationRow {
            variant: v.name.clone(),
            eer: eers,
            genuine: n_gen,
            impostor: n_imp,
        });
    }
    let average = (0..Metric::ALL.len())
        .map(|m| {
            let have: Vec<f64> = rows.iter().filter_map(|r| r.eer[m].map(|e| e.eer)).collect();
            have.iter().sum::<f64>() / have.len().max(1) as f64
        })
        .collect();
    Ok(VerificationResults {
        rows,
        average,
        curves,
        unenrolled: enrolment.missing,
    })
}
