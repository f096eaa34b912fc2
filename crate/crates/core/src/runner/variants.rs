//! Source corpora, reconstruction training pairs and the eight evaluation
//! variants.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{CorpusConfig, ExperimentConfig, ReconConfig};
use crate::detector::{load_detector, FaceDetector};
use crate::embedding::{Backbone, BackboneRegistry};
use crate::error::{Error, Result};
use crate::filters::{build_filtered_dataset, AssetLibrary, EnhancementRegistry, FilterChoice, FilterEngine};
use crate::imaging::{load_image, save_image, Image};
use crate::manifest::{DatasetManifest, Exclusion, ImageRecord, Provenance};
use crate::recon::checkpoint::checkpoint_bytes;
use crate::recon::{build_model, Reconstructor, TrainReport};
use crate::synth::generate_synthetic_corpus;

/// Variant names in report order.
pub const VARIANTS: [&str; 8] = [
    "benchmark",
    "dog",
    "glasses",
    "instagram",
    "shades_leak",
    "shades_recon_leak",
    "shades_no_leak",
    "shades_recon_no_leak",
];

/// Reference detection rates for the variants, in `VARIANTS` order, as
/// measured on the full-scale corpus.
pub const REFERENCE_DETECTION_RATES: [f64; 8] = [0.989, 0.978, 0.848, 0.989, 0.891, 0.992, 0.885, 0.988];

/// Adapters and assets shared by every stage.
pub struct Toolkit {
    pub detector: Box<dyn FaceDetector>,
    pub backbone: Arc<dyn Backbone>,
    pub enhancements: EnhancementRegistry,
    pub assets: AssetLibrary,
}

impl Toolkit {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let assets = match &cfg.assets_dir {
            Some(dir) => AssetLibrary::from_dir(dir)?,
            None => AssetLibrary::builtin(),
        };
        Ok(Toolkit {
            detector: load_detector(&cfg.detector)?,
            backbone: BackboneRegistry::bundled().get(&cfg.backbone)?,
            enhancements: EnhancementRegistry::bundled(),
            assets,
        })
    }

    pub fn engine(&self) -> FilterEngine<'_> {
        FilterEngine {
            enhancements: &self.enhancements,
            assets: &self.assets,
            detector: self.detector.as_ref(),
        }
    }
}

/// Renders the corpus into `dir` (or loads the configured manifest) and
/// drops identities with fewer than `min_images` images.
pub fn prepare_corpus(cfg: &CorpusConfig, min_images: usize, dir: &Path) -> Result<DatasetManifest> {
    let mut m = match &cfg.manifest {
        Some(path) => {
            let mut m = DatasetManifest::load(path, None)?;
            m.source = cfg.id.clone();
            m
        }
        None => generate_synthetic_corpus(dir, &cfg.id, cfg.identities, cfg.images_per_identity, cfg.seed)?.0,
    };
    m.name = "source".into();
    let kept = m.with_min_images(min_images);
    if kept.identities().len() < 2 {
        return Err(Error::Config(format!(
            "corpus `{}` has fewer than 2 identities with >= {min_images} images",
            cfg.id
        )));
    }
    Ok(kept)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub image_id: String,
    pub filter: String,
    pub occluded: PathBuf,
    pub clean: PathBuf,
}

/// Occluded/clean training pairs; paths are relative to the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub corpus: String,
    pub pairs: Vec<Pair>,
    #[serde(skip)]
    root: PathBuf,
}

impl PairManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("pairs serialize");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: PairManifest = serde_json::from_str(&text).map_err(|e| Error::format("pair manifest", e.to_string()))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn images(&self) -> Result<Vec<(Image, Image)>> {
        self.pairs
            .iter()
            .map(|p| Ok((load_image(&self.root.join(&p.occluded))?, load_image(&self.root.join(&p.clean))?)))
            .collect()
    }
}

/// Renders the reconstruction corpus under `dir`, shades it at both
/// opacities and writes `dir/pairs.json`.
pub fn build_pair_corpus(cfg: &ReconConfig, tk: &Toolkit, dir: &Path) -> Result<PairManifest> {
    let clean = prepare_corpus(&cfg.corpus, 1, &dir.join("clean"))?;
    let mut pairs = Vec::new();
    for filter in ["shades_leak", "shades_no_leak"] {
        let shaded = build_filtered_dataset(&clean, &FilterChoice::Fixed(filter.into()), 0, &tk.engine(), dir)?;
        let clean_by_id: std::collections::BTreeMap<&str, &ImageRecord> =
            clean.records.iter().map(|r| (r.image_id.as_str(), r)).collect();
        for rec in &shaded.records {
            let c = clean_by_id[rec.image_id.as_str()];
            pairs.push(Pair {
                image_id: rec.image_id.clone(),
                filter: filter.into(),
                occluded: Path::new(filter).join(&rec.path),
                clean: relative_to(&clean.image_path(c), dir),
            });
        }
    }
    let m = PairManifest {
        corpus: cfg.corpus.id.clone(),
        pairs,
        root: dir.to_path_buf(),
    };
    m.save(&dir.join("pairs.json"))?;
    Ok(m)
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

/// Trains a fresh model on the pairs; every tenth pair is held out for the
/// validation loss.
pub fn train_reconstructor(cfg: &ReconConfig, pairs: &PairManifest) -> Result<(Reconstructor, TrainReport)> {
    let all = pairs.images()?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, p) in all.into_iter().enumerate() {
        if i % 10 == 9 {
            val.push(p);
        } else {
            train.push(p);
        }
    }
    let mut model = build_model(cfg.unet, cfg.train.seed)?;
    model.trained_on = vec![pairs.corpus.clone()];
    let report = model.train(&train, &val, &cfg.train)?;
    Ok((model, report))
}

/// Short content hash identifying a trained model in provenance records.
pub fn model_id(model: &Reconstructor) -> String {
    let digest = Sha256::digest(checkpoint_bytes(model));
    format!("unet-{}", &format!("{digest:x}")[..12])
}

/// Refuses to evaluate on a corpus the model was trained on.
pub fn leak_guard(source: &DatasetManifest, model: &Reconstructor) -> Result<()> {
    if model.trained_on.iter().any(|c| c == &source.source) {
        return Err(Error::Leak(format!(
            "reconstruction model was trained on corpus `{}`, which is the evaluation corpus",
            source.source
        )));
    }
    Ok(())
}

/// Builds the eight variants under `out_dir/<name>/`, in `VARIANTS` order.
pub fn build_all_variants(
    source: &DatasetManifest,
    model: &Reconstructor,
    tk: &Toolkit,
    filter_seed: u64,
    out_dir: &Path,
) -> Result<Vec<DatasetManifest>> {
    leak_guard(source, model)?;
    let engine = tk.engine();
    let fixed = |id: &str| build_filtered_dataset(source, &FilterChoice::Fixed(id.into()), filter_seed, &engine, out_dir);
    let benchmark = copy_variant(source, "benchmark", out_dir)?;
    let dog = fixed("dog")?;
    let glasses = fixed("glasses")?;
    let instagram = build_filtered_dataset(source, &FilterChoice::RandomEnhancement, filter_seed, &engine, out_dir)?;
    let leak = fixed("shades_leak")?;
    let no_leak = fixed("shades_no_leak")?;
    let id = model_id(model);
    let recon_leak = reconstruct_variant(&leak, model, &id, "shades_recon_leak", out_dir)?;
    let recon_no_leak = reconstruct_variant(&no_leak, model, &id, "shades_recon_no_leak", out_dir)?;
    Ok(vec![benchmark, dog, glasses, instagram, leak, recon_leak, no_leak, recon_no_leak])
}

fn copy_variant(source: &DatasetManifest, name: &str, out_dir: &Path) -> Result<DatasetManifest> {
    let root = out_dir.join(name);
    let images = root.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut out = DatasetManifest::new(name, &source.source, &root);
    out.excluded = source.excluded.clone();
    for rec in &source.records {
        let rel = PathBuf::from("images").join(format!("{}.png", rec.image_id));
        match load_image(&source.image_path(rec)).and_then(|img| save_image(&img, &root.join(&rel))) {
            Ok(()) => out.records.push(ImageRecord {
                path: rel,
                ..rec.clone()
            }),
            Err(e) => out.excluded.push(Exclusion {
                image_id: rec.image_id.clone(),
                identity: rec.identity.clone(),
                reason: e.to_string(),
            }),
        }
    }
    out.save(&root.join("manifest.json"))?;
    Ok(out)
}

/// Runs every image of `shaded` through the model.
pub fn reconstruct_variant(
    shaded: &DatasetManifest,
    model: &Reconstructor,
    model_id: &str,
    name: &str,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let root = out_dir.join(name);
    let images = root.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut out = DatasetManifest::new(name, &shaded.source, &root);
    out.excluded = shaded.excluded.clone();
    for rec in &shaded.records {
        let rel = PathBuf::from("images").join(format!("{}.png", rec.image_id));
        let outcome = load_image(&shaded.image_path(rec))
            .and_then(|img| model.reconstruct(&img))
            .and_then(|img| save_image(&img, &root.join(&rel)));
        match outcome {
            Ok(()) => out.records.push(ImageRecord {
                image_id: rec.image_id.clone(),
                identity: rec.identity.clone(),
                path: rel,
                provenance: Provenance {
                    filter: rec.provenance.filter.clone(),
                    reconstruction: Some(model_id.to_string()),
                },
            }),
            Err(e) => out.excluded.push(Exclusion {
                image_id: rec.image_id.clone(),
                identity: rec.identity.clone(),
                reason: format!("reconstruction: {e}"),
            }),
        }
    }
    out.save(&root.join("manifest.json"))?;
    Ok(out)
}

/// Loads `out_dir/<name>/manifest.json` for every variant.
pub fn load_variants(out_dir: &Path) -> Result<Vec<DatasetManifest>> {
    VARIANTS
        .iter()
        .map(|v| DatasetManifest::load(&out_dir.join(v).join("manifest.json"), None))
        .collect()
}
