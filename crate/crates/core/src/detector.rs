//! Face detection and landmark adapters.
//!
//! Detection is consumed through the [`FaceDetector`] trait so that a
//! pretrained third-party detector can be dropped in. The bundled adapter,
//! `skin-blob`, is a classical cascade tuned to the synthetic corpus: skin
//! segmentation, connected components, then a weighted check for eyes, nose
//! and mouth inside each candidate region.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, Rect};
use crate::landmarks::{centroid, FaceGeometry, LandmarkSet, Point, Pose};

/// One face found in an image.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    /// Tight box in pixel-edge coordinates.
    pub bbox: Rect,
    pub score: f64,
    pub landmarks: Option<LandmarkSet>,
}

pub trait FaceDetector: Send + Sync {
    fn adapter_id(&self) -> &str;
    fn version(&self) -> String;
    /// All faces in the image, largest first.
    fn detect(&self, img: &Image) -> Vec<Detection>;
}

/// Landmarks of the most prominent face, `None` when no face is found.
pub fn detect_landmarks(detector: &dyn FaceDetector, img: &Image) -> Option<LandmarkSet> {
    detector
        .detect(img)
        .into_iter()
        .find_map(|d| d.landmarks)
        .map(|lm| lm.clamped(img.width(), img.height()))
}

/// Which detector to load and where its parameters live.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            id: SkinBlobDetector::ID.into(),
            model_path: None,
        }
    }
}

pub const DETECTOR_IDS: &[&str] = &[SkinBlobDetector::ID];

pub fn load_detector(cfg: &DetectorConfig) -> Result<Box<dyn FaceDetector>> {
    match cfg.id.as_str() {
        SkinBlobDetector::ID => {
            let params = match &cfg.model_path {
                None => SkinBlobParams::default(),
                Some(p) => SkinBlobParams::load(p)?,
            };
            Ok(Box::new(SkinBlobDetector::new(params)))
        }
        other => Err(Error::Registry {
            kind: "detector adapter",
            id: other.into(),
            valid: DETECTOR_IDS.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

/// Tunable thresholds of the bundled detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkinBlobParams {
    pub min_rgb_sum: f32,
    pub red_chroma: [f32; 2],
    pub green_chroma: [f32; 2],
    pub min_red_blue_gap: f32,
    /// Smallest face component, as a fraction of image area.
    pub min_area_frac: f64,
    pub weights: FaceCueWeights,
    pub accept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceCueWeights {
    pub shape: f64,
    pub eyes: f64,
    pub nose: f64,
    pub mouth: f64,
}

impl Default for SkinBlobParams {
    fn default() -> Self {
        SkinBlobParams {
            min_rgb_sum: 0.45,
            red_chroma: [0.355, 0.56],
            green_chroma: [0.26, 0.37],
            min_red_blue_gap: 0.06,
            min_area_frac: 0.04,
            weights: FaceCueWeights {
                shape: 0.3,
                eyes: 0.4,
                nose: 0.15,
                mouth: 0.15,
            },
            accept: 0.7,
        }
    }
}

impl SkinBlobParams {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::AdapterMissing {
                adapter: SkinBlobDetector::ID.into(),
                path: path.to_path_buf(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("detector parameters", e.to_string()))
    }
}

pub struct SkinBlobDetector {
    params: SkinBlobParams,
}

impl Default for SkinBlobDetector {
    fn default() -> Self {
        SkinBlobDetector::new(SkinBlobParams::default())
    }
}

#[inline]
fn luminance(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

#[derive(Clone, Debug)]
struct Blob {
    pixels: Vec<(usize, usize)>,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Blob {
    fn centroid(&self) -> Point {
        let pts: Vec<Point> = self.pixels.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
        centroid(&pts)
    }
}

/// Connected components of `mask` restricted to `region` (inclusive bounds).
fn components(
    mask: &[bool],
    width: usize,
    region: (usize, usize, usize, usize),
    eight: bool,
) -> Vec<Blob> {
    let (rx0, ry0, rx1, ry1) = region;
    let mut seen = vec![false; mask.len()];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for y in ry0..=ry1 {
        for x in rx0..=rx1 {
            let i = y * width + x;
            if !mask[i] || seen[i] {
                continue;
            }
            seen[i] = true;
            stack.push((x, y));
            let mut blob = Blob {
                pixels: Vec::new(),
                x0: x,
                y0: y,
                x1: x,
                y1: y,
            };
            while let Some((cx, cy)) = stack.pop() {
                blob.pixels.push((cx, cy));
                blob.x0 = blob.x0.min(cx);
                blob.x1 = blob.x1.max(cx);
                blob.y0 = blob.y0.min(cy);
                blob.y1 = blob.y1.max(cy);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                            continue;
                        }
                        let nx = cx as i64 + dx;
                        let ny = cy as i64 + dy;
                        if nx < rx0 as i64 || ny < ry0 as i64 || nx > rx1 as i64 || ny > ry1 as i64 {
                            continue;
                        }
                        let j = ny as usize * width + nx as usize;
                        if mask[j] && !seen[j] {
                            seen[j] = true;
                            stack.push((nx as usize, ny as usize));
                        }
                    }
                }
            }
            blobs.push(blob);
        }
    }
    blobs
}

/// Triangular plateau score: 1 inside `[lo, hi]`, falling linearly to 0 at
/// `lo - slack` and `hi + slack`.
fn plateau(v: f64, lo: f64, hi: f64, slack: f64) -> f64 {
    if v < lo {
        (1.0 - (lo - v) / slack).max(0.0)
    } else if v > hi {
        (1.0 - (v - hi) / slack).max(0.0)
    } else {
        1.0
    }
}

impl SkinBlobDetector {
    pub const ID: &'static str = "skin-blob";

    pub fn new(params: SkinBlobParams) -> Self {
        SkinBlobDetector { params }
    }

    pub fn params(&self) -> &SkinBlobParams {
        &self.params
    }

    pub fn is_skin(&self, p: [f32; 3]) -> bool {
        let s = p[0] + p[1] + p[2];
        if s < self.params.min_rgb_sum {
            return false;
        }
        let r = p[0] / s;
        let g = p[1] / s;
        let b = p[2] / s;
        let [rlo, rhi] = self.params.red_chroma;
        let [glo, ghi] = self.params.green_chroma;
        r >= rlo && r <= rhi && g >= glo && g <= ghi && r - b >= self.params.min_red_blue_gap
    }

    /// Eyes seen through a dark tint: inside the dark band, interior pixels a
    /// few levels above the band median, split into a left and right cluster.
    fn tinted_eyes(&self, img: &Image, skin_lum: f32, band: (usize, usize, usize, usize), bw: f64) -> Option<(Point, Point)> {
        let (x0, y0, x1, y1) = band;
        let dark = |x: usize, y: usize| luminance(img.get(x, y)) < 0.45 * skin_lum;
        let mut interior = Vec::new();
        for y in y0.max(1)..=y1.min(img.height() - 2) {
            for x in x0.max(1)..=x1.min(img.width() - 2) {
                if (0..9).all(|k| dark(x + k % 3 - 1, y + k / 3 - 1)) {
                    interior.push((x, y, luminance(img.get(x, y))));
                }
            }
        }
        if interior.len() < 20 {
            return None;
        }
        let mut lums: Vec<f32> = interior.iter().map(|p| p.2).collect();
        lums.sort_by(|a, b| a.total_cmp(b));
        let median = lums[lums.len() / 2];
        let mid = (x0 + x1) as f64 / 2.0;
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for &(x, y, l) in &interior {
            if l >= median + 2.5 / 255.0 {
                let p = [x as f64, y as f64];
                if (x as f64) < mid { left.push(p) } else { right.push(p) }
            }
        }
        if left.len() < 3 || right.len() < 3 {
            return None;
        }
        let (l, r) = (centroid(&left), centroid(&right));
        let dx = r[0] - l[0];
        (dx >= 0.25 * bw && dx <= 0.8 * bw && (r[1] - l[1]).abs() <= 0.25 * dx + 2.0).then_some((l, r))
    }

    fn examine(&self, img: &Image, skin: &[bool], face: &Blob) -> Option<Detection> {
        let w = img.width();
        let p = &self.params;
        let bw = (face.x1 - face.x0 + 1) as f64;
        let bh = (face.y1 - face.y0 + 1) as f64;
        let fill = face.pixels.len() as f64 / (bw * bh);
        let aspect = bh / bw;
        let shape = plateau(aspect, 0.95, 1.35, 0.4) * plateau(fill, 0.62, 0.9, 0.25);

        let mut lums: Vec<f32> = face.pixels.iter().map(|&(x, y)| luminance(img.get(x, y))).collect();
        lums.sort_by(|a, b| a.total_cmp(b));
        let skin_lum = lums[lums.len() / 2];

        let row = |f: f64| (face.y0 as f64 + f * bh).round().clamp(face.y0 as f64, face.y1 as f64) as usize;
        let col = |f: f64| (face.x0 as f64 + f * bw).round().clamp(face.x0 as f64, face.x1 as f64) as usize;

        // Eyes: non-skin blobs in the upper band that contain bright, unsaturated pixels.
        let non_skin: Vec<bool> = skin.iter().map(|s| !s).collect();
        let band = (face.x0, row(0.08), face.x1, row(0.62));
        let sclera_like = |q: [f32; 3]| {
            let mx = q[0].max(q[1]).max(q[2]);
            let mn = q[0].min(q[1]).min(q[2]);
            luminance(q) > (skin_lum + 0.06).max(0.5) && (mx - mn) <= 0.2 * mx
        };
        let mut eyes: Vec<(Blob, usize)> = components(&non_skin, w, band, true)
            .into_iter()
            .filter(|b| b.pixels.len() as f64 <= 0.06 * bw * bh && b.x0 > face.x0 && b.x1 < face.x1)
            .map(|b| {
                let n = b.pixels.iter().filter(|&&(x, y)| sclera_like(img.get(x, y))).count();
                (b, n)
            })
            .filter(|(_, n)| *n >= 2)
            .collect();
        eyes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.x0.cmp(&b.0.x0)));

        let mut pair: Option<(Point, Point)> = None;
        let mut best = 0usize;
        for (i, (a, na)) in eyes.iter().enumerate() {
            for (b, nb) in eyes.iter().skip(i + 1) {
                let (ca, cb) = (a.centroid(), b.centroid());
                let (l, r) = if ca[0] < cb[0] { (ca, cb) } else { (cb, ca) };
                let dx = r[0] - l[0];
                let dy = (r[1] - l[1]).abs();
                if dx >= 0.25 * bw && dx <= 0.8 * bw && dy <= 0.25 * dx + 2.0 && na + nb > best {
                    best = na + nb;
                    pair = Some((l, r));
                }
            }
        }
        let mut eye_term = match (&pair, eyes.len()) {
            (Some(_), _) => 1.0,
            (None, 0) => 0.0,
            (None, _) => 0.5,
        };
        if pair.is_none() {
            // A dark horizontal band where eyes should be still reads as an eye region.
            let (y0, y1) = (row(0.2), row(0.55));
            let (x0, x1) = (col(0.15), col(0.85));
            let mut dark = 0usize;
            let mut total = 0usize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    total += 1;
                    if luminance(img.get(x, y)) < 0.45 * skin_lum {
                        dark += 1;
                    }
                }
            }
            if dark as f64 >= 0.12 * total as f64 {
                eye_term = f64::max(eye_term, 0.5);
                if let Some(tinted) = self.tinted_eyes(img, skin_lum, (x0, y0, x1, y1), bw) {
                    eye_term = 0.75;
                    pair = Some(tinted);
                }
            }
        }

        // Nose: dark nostrils below the eye line near the midline.
        let mut nostrils = Vec::new();
        for y in row(0.45)..=row(0.78) {
            for x in col(0.3)..=col(0.7) {
                if skin[y * w + x] && luminance(img.get(x, y)) < 0.55 * skin_lum {
                    nostrils.push([x as f64, y as f64]);
                }
            }
        }
        let nose = if nostrils.len() >= 2 { 1.0 } else { 0.0 };

        // Mouth: saturated red pixels in the lower part.
        let mut lips = Vec::new();
        for y in row(0.6)..=face.y1 {
            for x in col(0.15)..=col(0.85) {
                let q = img.get(x, y);
                let s = q[0] + q[1] + q[2];
                if s > 0.2 && q[0] / s > 0.48 && q[1] / s < 0.27 {
                    lips.push([x as f64, y as f64]);
                }
            }
        }
        let mouth = if lips.len() >= 6 {
            1.0
        } else if lips.len() >= 3 {
            0.5
        } else {
            0.0
        };

        let wt = &p.weights;
        let score = wt.shape * shape + wt.eyes * eye_term + wt.nose * nose + wt.mouth * mouth;
        if score < p.accept {
            return None;
        }
        let landmarks = pair.map(|(l, r)| {
            let template = FaceGeometry::MEAN;
            let pose = Pose::from_eyes(&template, l, r);
            let mut pts = template.landmarks(&pose).points().to_vec();
            if !nostrils.is_empty() {
                shift_group(&mut pts, 31..36, centroid(&nostrils));
            }
            if !lips.is_empty() {
                shift_group(&mut pts, 48..68, centroid(&lips));
            }
            LandmarkSet::new(pts).expect("template landmarks are valid")
        });
        Some(Detection {
            bbox: Rect::new(face.x0 as f64, face.y0 as f64, (face.x1 + 1) as f64, (face.y1 + 1) as f64),
            score,
            landmarks,
        })
    }
}

fn shift_group(pts: &mut [Point], range: std::ops::Range<usize>, target: Point) {
    let c = centroid(&pts[range.clone()]);
    for p in &mut pts[range] {
        p[0] += target[0] - c[0];
        p[1] += target[1] - c[1];
    }
}

impl FaceDetector for SkinBlobDetector {
    fn adapter_id(&self) -> &str {
        Self::ID
    }

    fn version(&self) -> String {
        "1".into()
    }

    fn detect(&self, img: &Image) -> Vec<Detection> {
        let (w, h) = img.dims();
        let skin: Vec<bool> = img.as_slice().chunks_exact(3).map(|p| self.is_skin([p[0], p[1], p[2]])).collect();
        let min_area = (self.params.min_area_frac * (w * h) as f64).max(16.0);
        let mut blobs: Vec<Blob> = components(&skin, w, (0, 0, w - 1, h - 1), false)
            .into_iter()
            .filter(|b| b.pixels.len() as f64 >= min_area)
            .collect();
        blobs.sort_by(|a, b| b.pixels.len().cmp(&a.pixels.len()).then(a.x0.cmp(&b.x0)));
        blobs.iter().filter_map(|b| self.examine(img, &skin, b)).collect()
    }
}
