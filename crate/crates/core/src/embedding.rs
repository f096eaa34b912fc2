//! Single-face detection with discard policy, backbone embeddings, min-max
//! scaling and the embedding store.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detector::{Detection, FaceDetector};
use crate::error::{Error, Result};
use crate::recon::Real;
use crate::imaging::{crop_resize, load_image, Image, Rect};
use crate::manifest::DatasetManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    NoFace,
    Multiple(usize),
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::NoFace => write!(f, "none"),
            Rejection::Multiple(n) => write!(f, "multiple({n})"),
        }
    }
}

/// Exactly one detected face, or the reason the image is discarded.
pub fn detect_single_face(detector: &dyn FaceDetector, img: &Image) -> std::result::Result<Detection, Rejection> {
    let mut found = detector.detect(img);
    match found.len() {
        0 => Err(Rejection::NoFace),
        1 => Ok(found.remove(0)),
        n => Err(Rejection::Multiple(n)),
    }
}

/// A face-embedding network: crop in, fixed-length vector out.
pub trait Backbone: Send + Sync {
    fn id(&self) -> &str;
    fn version(&self) -> String;
    fn dim(&self) -> usize;
    fn input_size(&self) -> usize;
    /// `crop` is already `input_size x input_size`.
    fn embed(&self, crop: &Image) -> Vec<f32>;
}

/// Per-cell mean colour plus a contrast-normalised 6-bin gradient
/// orientation histogram on an 8x8 grid, centred and linearly projected to
/// `dim`.
pub struct GridHogBackbone {
    id: String,
    version: String,
    dim: usize,
    mean: Vec<f32>,
    /// `dim x RAW_DIM`, row-major.
    projection: Vec<f32>,
}

const WEIGHTS_MAGIC: &[u8; 6] = b"FBPROJ";

impl GridHogBackbone {
    pub const INPUT: usize = 64;
    const GRID: usize = 8;
    const BINS: usize = 6;
    pub const RAW_DIM: usize = Self::GRID * Self::GRID * (3 + Self::BINS);
    const NORM_EPS: f32 = 0.1;
    const COLOR_WEIGHT: f32 = 0.5;

    /// Gaussian random projection, uncentred.
    pub fn random(id: impl Into<String>, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f32).sqrt();
        let projection = (0..dim * Self::RAW_DIM)
            .map(|_| {
                let v: f32 = StandardNormal.sample(&mut rng);
                v * scale
            })
            .collect();
        GridHogBackbone {
            id: id.into(),
            version: format!("random-{seed:x}"),
            dim,
            mean: vec![0.0; Self::RAW_DIM],
            projection,
        }
    }

    /// Projection onto the leading `dim`-dimensional principal subspace of
    /// `samples` (raw descriptors), found by seeded orthogonal iteration and
    /// then randomly rotated within that subspace.
    pub fn fit_pca(id: impl Into<String>, samples: &[Vec<f32>], dim: usize, seed: u64) -> Result<Self> {
        let d = Self::RAW_DIM;
        if samples.len() < 2 || dim == 0 || dim > d || samples.iter().any(|s| s.len() != d) {
            return Err(Error::contract(format!(
                "PCA needs >= 2 samples of length {d} and 1 <= dim <= {d}"
            )));
        }
        let n = samples.len();
        let mut mean = vec![0.0f64; d];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += *v as f64 / n as f64;
            }
        }
        let centred: Vec<f64> = samples.iter().flat_map(|s| s.iter().zip(&mean).map(|(v, m)| *v as f64 - m)).collect();
        let mut cov = vec![0.0f64; d * d];
        f64::gemm(d, n, d, &centred, true, &centred, false, 0.0, &mut cov);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Basis stored transposed (`dim x d`) so each vector is contiguous.
        let mut q: Vec<f64> = (0..dim * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        orthonormalize_rows(&mut q, d);
        let mut z = vec![0.0f64; dim * d];
        for _ in 0..PCA_ITERATIONS {
            f64::gemm(dim, d, d, &q, false, &cov, false, 0.0, &mut z);
            std::mem::swap(&mut q, &mut z);
            orthonormalize_rows(&mut q, d);
        }
        // Rotate within the subspace so variance is spread over every
        // output dimension instead of decaying along it; per-dimension
        // min-max scaling then leaves the geometry nearly isotropic.
        let mut rot: Vec<f64> = (0..dim * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        orthonormalize_rows(&mut rot, dim);
        f64::gemm(dim, dim, d, &rot, false, &q, false, 0.0, &mut z);
        Ok(GridHogBackbone {
            id: id.into(),
            version: format!("pca-rot-{seed:x}-n{n}"),
            dim,
            mean: mean.iter().map(|m| *m as f32).collect(),
            projection: z.iter().map(|v| *v as f32).collect(),
        })
    }

    /// `FBPROJ`, u16 version, u32 dim, u32 raw dim, u32 version-string
    /// length, the string, then LE f32 mean and projection.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = WEIGHTS_MAGIC.to_vec();
        out.extend(1u16.to_le_bytes());
        out.extend((self.dim as u32).to_le_bytes());
        out.extend((Self::RAW_DIM as u32).to_le_bytes());
        out.extend((self.version.len() as u32).to_le_bytes());
        out.extend(self.version.as_bytes());
        for v in self.mean.iter().chain(&self.projection) {
            out.extend(v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::format("backbone weights", detail);
        let mut rest = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if rest.len() < n {
                return Err(bad("truncated".into()));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };
        let u32_of = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
        if take(6)? != WEIGHTS_MAGIC {
            return Err(bad("bad magic".into()));
        }
        if take(2)? != 1u16.to_le_bytes() {
            return Err(bad("unsupported version".into()));
        }
        let dim = u32_of(take(4)?);
        if u32_of(take(4)?) != Self::RAW_DIM {
            return Err(bad("descriptor length mismatch".into()));
        }
        let vlen = u32_of(take(4)?);
        let version = String::from_utf8(take(vlen)?.to_vec()).map_err(|_| bad("version is not UTF-8".into()))?;
        let want = (dim + 1) * Self::RAW_DIM * 4;
        let body = take(want)?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        let all: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let (mean, projection) = all.split_at(Self::RAW_DIM);
        Ok(GridHogBackbone {
            id: id.into(),
            version,
            dim,
            mean: mean.to_vec(),
            projection: projection.to_vec(),
        })
    }

    /// Unprojected descriptor.
    pub fn raw_features(crop: &Image) -> Vec<f32> {
        let s = Self::INPUT;
        let cell = s / Self::GRID;
        let lum: Vec<f32> = crop
            .as_slice()
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        let at = |x: isize, y: isize| lum[(y.clamp(0, s as isize - 1) as usize) * s + x.clamp(0, s as isize - 1) as usize];
        let mut out = Vec::with_capacity(Self::RAW_DIM);
        for cy in 0..Self::GRID {
            for cx in 0..Self::GRID {
                let mut mean = [0.0f32; 3];
                let mut hist = [0.0f32; Self::BINS];
                for y in cy * cell..(cy + 1) * cell {
                    for x in cx * cell..(cx + 1) * cell {
                        let p = crop.get(x, y);
                        for k in 0..3 {
                            mean[k] += p[k];
                        }
                        let (xi, yi) = (x as isize, y as isize);
                        let gx = at(xi + 1, yi) - at(xi - 1, yi);
                        let gy = at(xi, yi + 1) - at(xi, yi - 1);
                        let mag = (gx * gx + gy * gy).sqrt();
                        // unsigned orientation in [0, pi)
                        let mut theta = gy.atan2(gx);
                        if theta < 0.0 {
                            theta += std::f32::consts::PI;
                        }
                        let bin = ((theta / std::f32::consts::PI * Self::BINS as f32) as usize).min(Self::BINS - 1);
                        hist[bin] += mag;
                    }
                }
                let n = (cell * cell) as f32;
                out.extend(mean.iter().map(|m| Self::COLOR_WEIGHT * m / n));
                let norm = (hist.iter().map(|h| h * h).sum::<f32>() + Self::NORM_EPS * Self::NORM_EPS).sqrt();
                out.extend(hist.iter().map(|h| h / norm));
            }
        }
        out
    }
}

const PCA_ITERATIONS: usize = 60;

// Modified Gram-Schmidt over the rows of a row-major `_ x d` matrix.
fn orthonormalize_rows(m: &mut [f64], d: usize) {
    let rows = m.len() / d;
    for i in 0..rows {
        let (done, rest) = m.split_at_mut(i * d);
        let row = &mut rest[..d];
        for prev in done.chunks_exact(d) {
            let dot: f64 = prev.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            row.iter_mut().zip(prev).for_each(|(r, p)| *r -= dot * p);
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

impl Backbone for GridHogBackbone {
    fn id(&self) -> &str {
        &self.id
    }

    fn version(&self) -> String {
        self.version.clone()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn input_size(&self) -> usize {
        Self::INPUT
    }

    fn embed(&self, crop: &Image) -> Vec<f32> {
        let raw: Vec<f32> = Self::raw_features(crop).iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        self.projection
            .chunks_exact(Self::RAW_DIM)
            .map(|row| row.iter().zip(&raw).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Bundled backbone ids and their output dimensions.
pub const BACKBONES: [(&str, usize); 3] = [("grid-hog-128", 128), ("grid-hog-1000", 1000), ("grid-hog-2048", 2048)];
pub const DEFAULT_BACKBONE: &str = "grid-hog-128";
const PROJECTION_SEED: u64 = 0x5eed_0128;
const BUNDLED_128: &[u8] = include_bytes!("../assets/backbones/grid-hog-128.bin");

/// Seed and size of the synthetic corpus the bundled 128-d projection was
/// fitted on. Evaluation corpora must use other seeds.
pub const PRETRAIN_SEED: u64 = 0xbac0_0128;
pub const PRETRAIN_IDENTITIES: usize = 100;
pub const PRETRAIN_IMAGES: usize = 10;

/// Raw descriptors of every single-face image of the pretraining corpus,
/// cropped by `detector`.
pub fn pretraining_descriptors(detector: &dyn FaceDetector) -> Vec<Vec<f32>> {
    use crate::synth::{identity_traits, image_jitter, render_face};
    let mut out = Vec::new();
    for i in 0..PRETRAIN_IDENTITIES {
        let traits = identity_traits(PRETRAIN_SEED, i);
        for k in 0..PRETRAIN_IMAGES {
            let img = render_face(&traits, &image_jitter(PRETRAIN_SEED, i, k)).0.quantized();
            if let Ok(det) = detect_single_face(detector, &img) {
                let crop = crop_resize(&img, det.bbox, GridHogBackbone::INPUT).expect("detections lie inside the image");
                out.push(GridHogBackbone::raw_features(&crop));
            }
        }
    }
    out
}

/// Rebuilds the bundled `grid-hog-128` weights from scratch.
pub fn fit_bundled_128(detector: &dyn FaceDetector) -> Result<GridHogBackbone> {
    GridHogBackbone::fit_pca("grid-hog-128", &pretraining_descriptors(detector), 128, PROJECTION_SEED)
}

#[derive(Clone)]
pub struct BackboneRegistry {
    entries: BTreeMap<String, Arc<dyn Backbone>>,
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        BackboneRegistry::bundled()
    }
}

impl BackboneRegistry {
    /// `grid-hog-128` loads its bundled fitted weights; the wider ids are
    /// seeded random projections.
    pub fn bundled() -> Self {
        let mut entries: BTreeMap<String, Arc<dyn Backbone>> = BTreeMap::new();
        for (id, dim) in BACKBONES {
            let bb = if id == DEFAULT_BACKBONE {
                GridHogBackbone::from_bytes(id, BUNDLED_128).expect("bundled weights are well formed")
            } else {
                GridHogBackbone::random(id, dim, PROJECTION_SEED + dim as u64)
            };
            entries.insert(id.into(), Arc::new(bb));
        }
        BackboneRegistry { entries }
    }

    /// Adapter slot for externally provided backbones.
    pub fn insert(&mut self, backbone: Arc<dyn Backbone>) {
        self.entries.insert(backbone.id().to_string(), backbone);
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Backbone>> {
        self.entries.get(id).cloned().ok_or_else(|| Error::Registry {
            kind: "backbone",
            id: id.into(),
            valid: self.ids(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub vector: Vec<f32>,
    pub identity: String,
    pub dataset: String,
    pub image_id: String,
}

/// Crops `bbox`, resizes to the backbone input and embeds.
pub fn extract_embedding(img: &Image, bbox: Rect, backbone: &dyn Backbone) -> Result<Vec<f32>> {
    let crop = crop_resize(img, bbox, backbone.input_size())?;
    let v = backbone.embed(&crop);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract(format!("backbone `{}` produced a non-finite value", backbone.id())));
    }
    Ok(v)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub total: usize,
    pub accepted: usize,
    pub rejected_none: usize,
    pub rejected_multiple: usize,
    /// Source images that never made it into the variant (e.g. no landmarks for an AR filter).
    pub not_in_variant: usize,
}

impl DetectionStats {
    /// Accepted over `total`.
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.accepted as f64 / self.total as f64
        }
    }
}

/// Embeds every record that passes the single-face policy.
///
/// `total` counts the manifest's records plus its exclusions, so variants
/// that lost images upstream report a lower rate.
pub fn embed_dataset(
    manifest: &DatasetManifest,
    detector: &dyn FaceDetector,
    backbone: &dyn Backbone,
) -> Result<(Vec<EmbeddingRecord>, DetectionStats)> {
    let mut stats = DetectionStats {
        total: manifest.len() + manifest.excluded.len(),
        not_in_variant: manifest.excluded.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for rec in &manifest.records {
        let img = load_image(&manifest.image_path(rec))?;
        match detect_single_face(detector, &img) {
            Ok(det) => {
                stats.accepted += 1;
                out.push(EmbeddingRecord {
                    vector: extract_embedding(&img, det.bbox, backbone)?,
                    identity: rec.identity.clone(),
                    dataset: manifest.name.clone(),
                    image_id: rec.image_id.clone(),
                });
            }
            Err(Rejection::NoFace) => stats.rejected_none += 1,
            Err(Rejection::Multiple(_)) => stats.rejected_multiple += 1,
        }
    }
    Ok((out, stats))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
    pub fitted_on: String,
}

impl MinMaxScaler {
    pub fn fit(train: &[Vec<f32>], fitted_on: impl Into<String>) -> Result<Self> {
        let first = train.first().ok_or_else(|| Error::contract("cannot fit a scaler on an empty matrix"))?;
        let d = first.len();
        let mut min = first.clone();
        let mut max = first.clone();
        for row in train {
            if row.len() != d {
                return Err(Error::contract(format!("row has {} columns, expected {d}", row.len())));
            }
            for j in 0..d {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        Ok(MinMaxScaler { min, max, fitted_on: fitted_on.into() })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// `(x - min) / (max - min)` clamped to [0, 1]; constant columns map to 0.
    pub fn apply(&self, row: &[f32]) -> Result<Vec<f32>> {
        if row.len() != self.dim() {
            return Err(Error::contract(format!("row has {} columns, scaler has {}", row.len(), self.dim())));
        }
        Ok(row
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(x, (lo, hi))| if hi > lo { ((x - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 })
            .collect())
    }

    pub fn apply_all(&self, rows: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

/// Fits on `train`, returns it and every matrix in `others` scaled.
pub fn fit_apply_minmax(
    train: &[Vec<f32>],
    others: &[&[Vec<f32>]],
    fitted_on: &str,
) -> Result<(Vec<Vec<f32>>, Vec<Vec<Vec<f32>>>, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(train, fitted_on)?;
    let scaled = scaler.apply_all(train)?;
    let rest = others.iter().map(|m| scaler.apply_all(m)).collect::<Result<_>>()?;
    Ok((scaled, rest, scaler))
}

const STORE_MAGIC: &[u8; 6] = b"FBEMBD";
const STORE_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub backbone: String,
    pub dim: usize,
    pub dataset: String,
    pub scaler: Option<String>,
    pub rows: Vec<(String, String)>,
}

/// Embeddings of one (dataset, backbone) pair, stored column by column.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    pub backbone: String,
    pub dataset: String,
    pub scaler: Option<String>,
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingStore {
    pub fn new(backbone: &str, dataset: &str, dim: usize, records: Vec<EmbeddingRecord>) -> Self {
        EmbeddingStore {
            backbone: backbone.into(),
            dataset: dataset.into(),
            scaler: None,
            dim,
            records,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = StoreHeader {
            backbone: self.backbone.clone(),
            dim: self.dim,
            dataset: self.dataset.clone(),
            scaler: self.scaler.clone(),
            rows: self.records.iter().map(|r| (r.image_id.clone(), r.identity.clone())).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.dim * self.records.len());
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for j in 0..self.dim {
            for r in &self.records {
                out.extend_from_slice(&r.vector[j].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("embedding store", d);
        if bytes.len() < 12 || &bytes[..6] != STORE_MAGIC {
            return Err(bad("missing FBEMBD magic at offset 0".into()));
        }
        let version = u16::from_le_bytes([bytes[6], bytes[7]]);
        if version != STORE_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: StoreHeader = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
        let n = header.rows.len();
        let data = &bytes[12 + hlen..];
        if data.len() != 4 * n * header.dim {
            return Err(bad(format!("expected {} data bytes, found {}", 4 * n * header.dim, data.len())));
        }
        let mut records: Vec<EmbeddingRecord> = header
            .rows
            .iter()
            .map(|(id, who)| EmbeddingRecord {
                vector: vec![0.0; header.dim],
                identity: who.clone(),
                dataset: header.dataset.clone(),
                image_id: id.clone(),
            })
            .collect();
        for (k, c) in data.chunks_exact(4).enumerate() {
            records[k % n].vector[k / n] = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        Ok(EmbeddingStore {
            backbone: header.backbone,
            dataset: header.dataset,
            scaler: header.scaler,
            dim: header.dim,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// One row per record: `image_id,identity,dataset,v0,...`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,identity,dataset");
        for j in 0..self.dim {
            s.push_str(&format!(",v{j}"));
        }
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!("{},{},{}", r.image_id, r.identity, r.dataset));
            for v in &r.vector {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push('\n');
        }
        s
    }
}
