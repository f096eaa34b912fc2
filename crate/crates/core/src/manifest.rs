//! Identity-labelled image inventories, one per dataset variant.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What was done to an image on its way into a variant.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Filter id applied (enhancement or AR), if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
    /// Reconstruction model applied afterwards, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub identity: String,
    /// Relative to the manifest's root directory.
    pub path: PathBuf,
    #[serde(default)]
    pub provenance: Provenance,
}

/// A source image left out of a variant, with the reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub image_id: String,
    pub identity: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    /// Id of the corpus every record ultimately derives from.
    pub source: String,
    pub records: Vec<ImageRecord>,
    #[serde(default)]
    pub excluded: Vec<Exclusion>,
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, source: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            name: name.into(),
            source: source.into(),
            records: Vec::new(),
            excluded: Vec::new(),
            root: root.into(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn set_root(&mut self, root: impl Into<PathBuf>) {
        self.root = root.into();
    }

    pub fn image_path(&self, rec: &ImageRecord) -> PathBuf {
        self.root.join(&rec.path)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record ids must be unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::format("manifest", format!("duplicate image id `{}`", r.image_id)));
            }
        }
        Ok(())
    }

    /// Identities in sorted order.
    pub fn identities(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.identity.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Records grouped by identity, each group in manifest order.
    pub fn by_identity(&self) -> BTreeMap<&str, Vec<&ImageRecord>> {
        let mut map: BTreeMap<&str, Vec<&ImageRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.identity.as_str()).or_default().push(r);
        }
        map
    }

    /// Drops identities with fewer than `min_images` records.
    pub fn with_min_images(&self, min_images: usize) -> DatasetManifest {
        let counts = self.by_identity();
        let keep: HashSet<&str> = counts
            .iter()
            .filter(|(_, v)| v.len() >= min_images)
            .map(|(k, _)| *k)
            .collect();
        let mut out = self.clone();
        out.records.retain(|r| keep.contains(r.identity.as_str()));
        out
    }

    /// Writes `<dir>/<name>.json` relative paths intact and sets the root to `dir`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Loads a manifest; record paths resolve against `root` when given,
    /// otherwise against the manifest file's directory.
    pub fn load(path: &Path, root: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
        m.root = match root {
            Some(r) => r.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        m.validate()?;
        Ok(m)
    }
}
