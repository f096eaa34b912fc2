//! Enhancement and AR filters, and filtered dataset variants.

pub mod ar;
pub mod enhance;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::FaceDetector;
use crate::error::{Error, Result};
use crate::imaging::{load_image, save_image};
use crate::manifest::{DatasetManifest, Exclusion, ImageRecord, Provenance};

pub use ar::{apply_ar_filter, ArFilter, Asset, AssetLibrary};
pub use enhance::{apply_enhancement, EnhancementRegistry, ENHANCEMENT_IDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Enhancement,
    ArOverlay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub filter_id: String,
    pub params: BTreeMap<String, f64>,
}

impl FilterSpec {
    /// Looks `id` up among the enhancement and AR ids; AR specs carry their opacity.
    pub fn new(id: &str) -> Result<Self> {
        if id == enhance::IDENTITY_ID || ENHANCEMENT_IDS.contains(&id) {
            return Ok(FilterSpec {
                kind: FilterKind::Enhancement,
                filter_id: id.into(),
                params: BTreeMap::new(),
            });
        }
        match ArFilter::from_id(id) {
            Ok(f) => Ok(FilterSpec {
                kind: FilterKind::ArOverlay,
                filter_id: id.into(),
                params: BTreeMap::from([("opacity".to_string(), f.opacity())]),
            }),
            Err(_) => Err(Error::Registry {
                kind: "filter",
                id: id.into(),
                valid: ENHANCEMENT_IDS
                    .iter()
                    .chain(ArFilter::ALL.iter().map(|f| f.id()).collect::<Vec<_>>().iter())
                    .map(|s| s.to_string())
                    .collect(),
            }),
        }
    }

    pub fn opacity(&self) -> f64 {
        self.params.get("opacity").copied().unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FilterChoice {
    Fixed(String),
    /// One of the nine enhancements per image, drawn from a seeded generator.
    RandomEnhancement,
}

impl FilterChoice {
    /// Variant name used for the output manifest.
    pub fn variant_name(&self) -> &str {
        match self {
            FilterChoice::Fixed(id) => id,
            FilterChoice::RandomEnhancement => "instagram",
        }
    }
}

/// Everything a dataset build needs to apply filters.
pub struct FilterEngine<'a> {
    pub enhancements: &'a EnhancementRegistry,
    pub assets: &'a AssetLibrary,
    pub detector: &'a dyn FaceDetector,
}

impl FilterEngine<'_> {
    /// `None` when an AR filter finds no landmarks.
    pub fn apply(&self, img: &crate::imaging::Image, filter_id: &str) -> Result<Option<crate::imaging::Image>> {
        match ArFilter::from_id(filter_id) {
            Ok(f) => apply_ar_filter(self.assets, self.detector, img, f),
            Err(_) => apply_enhancement(self.enhancements, img, filter_id).map(Some),
        }
    }
}

/// Per-record filter ids, assigned in one pass before any image is touched.
pub fn assign_filters(n: usize, choice: &FilterChoice, seed: u64) -> Vec<String> {
    match choice {
        FilterChoice::Fixed(id) => vec![id.clone(); n],
        FilterChoice::RandomEnhancement => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| ENHANCEMENT_IDS[rng.random_range(0..ENHANCEMENT_IDS.len())].to_string())
                .collect()
        }
    }
}

/// Applies `choice` to every record of `source`, writing PNGs under
/// `out_dir/<variant>/` and returning the variant manifest rooted there.
///
/// Failures (decode, I/O, missing landmarks) exclude the image with a reason
/// and the build carries on.
pub fn build_filtered_dataset(
    source: &DatasetManifest,
    choice: &FilterChoice,
    seed: u64,
    engine: &FilterEngine,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if let FilterChoice::Fixed(id) = choice {
        FilterSpec::new(id)?;
    }
    let name = choice.variant_name().to_string();
    let root = out_dir.join(&name);
    let images_dir = root.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let assignment = assign_filters(source.len(), choice, seed);

    let mut out = DatasetManifest::new(&name, &source.source, &root);
    out.excluded = source.excluded.clone();
    for (rec, filter_id) in source.records.iter().zip(&assignment) {
        let rel = PathBuf::from("images").join(format!("{}.png", rec.image_id));
        let outcome = load_image(&source.image_path(rec))
            .and_then(|img| engine.apply(&img, filter_id))
            .and_then(|res| match res {
                Some(img) => save_image(&img, &root.join(&rel)).map(|_| true),
                None => Ok(false),
            });
        match outcome {
            Ok(true) => out.records.push(ImageRecord {
                image_id: rec.image_id.clone(),
                identity: rec.identity.clone(),
                path: rel,
                provenance: Provenance {
                    filter: Some(filter_id.clone()),
                    reconstruction: rec.provenance.reconstruction.clone(),
                },
            }),
            Ok(false) => out.excluded.push(Exclusion {
                image_id: rec.image_id.clone(),
                identity: rec.identity.clone(),
                reason: format!("{filter_id}: no landmarks"),
            }),
            Err(e) => out.excluded.push(Exclusion {
                image_id: rec.image_id.clone(),
                identity: rec.identity.clone(),
                reason: format!("{filter_id}: {e}"),
            }),
        }
    }
    out.save(&root.join("manifest.json"))?;
    Ok(out)
}
