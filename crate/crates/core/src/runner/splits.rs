//! Train/test assignment shared by every variant, keyed by image id.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub assignment: BTreeMap<String, Split>,
    /// Identities left out because they have a single image.
    pub excluded_identities: Vec<String>,
}

impl Splits {
    pub fn get(&self, image_id: &str) -> Option<Split> {
        self.assignment.get(image_id).copied()
    }

    pub fn is(&self, image_id: &str, split: Split) -> bool {
        self.get(image_id) == Some(split)
    }
}

/// Stratified per identity: `round(ratio * n)` train images, clamped so
/// both sides keep at least one. Identities are visited in sorted order and
/// their images in id order, so the result depends only on ids and seed.
pub fn make_splits(source: &DatasetManifest, ratio: f64, seed: u64) -> Result<Splits> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::contract(format!("split ratio {ratio} is outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Splits::default();
    for (identity, recs) in source.by_identity() {
        let mut ids: Vec<&str> = recs.iter().map(|r| r.image_id.as_str()).collect();
        ids.sort_unstable();
        if ids.len() < 2 {
            out.excluded_identities.push(identity.to_string());
            continue;
        }
        ids.shuffle(&mut rng);
        let n_train = ((ratio * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
        for (i, id) in ids.iter().enumerate() {
            let s = if i < n_train { Split::Train } else { Split::Test };
            out.assignment.insert(id.to_string(), s);
        }
    }
    Ok(out)
}

/// `count` identities drawn without replacement, returned sorted.
pub fn draw_held_out(identities: &[String], count: usize, seed: u64) -> Result<Vec<String>> {
    if count >= identities.len() {
        return Err(Error::contract(format!(
            "cannot hold out {count} of {} identities",
            identities.len()
        )));
    }
    let mut sorted = identities.to_vec();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = sorted.choose_multiple(&mut rng, count).cloned().collect();
    picked.sort();
    Ok(picked)
}
