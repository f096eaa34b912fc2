//! Landmark-anchored overlays: dog nose and ears, transparent glasses and
//! two kinds of sunglasses.

use std::path::Path;

use crate::detector::{detect_landmarks, FaceDetector};
use crate::error::{Error, Result};
use crate::imaging::{alpha_blend, decode_rgba, encode_rgba_png, Affine, Image, Placement};
use crate::landmarks::LandmarkSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArFilter {
    Dog,
    Glasses,
    ShadesLeak,
    ShadesNoLeak,
}

impl ArFilter {
    pub const ALL: [ArFilter; 4] = [ArFilter::Dog, ArFilter::Glasses, ArFilter::ShadesLeak, ArFilter::ShadesNoLeak];

    pub fn id(self) -> &'static str {
        match self {
            ArFilter::Dog => "dog",
            ArFilter::Glasses => "glasses",
            ArFilter::ShadesLeak => "shades_leak",
            ArFilter::ShadesNoLeak => "shades_no_leak",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        ArFilter::ALL.into_iter().find(|f| f.id() == id).ok_or_else(|| Error::Registry {
            kind: "AR filter",
            id: id.into(),
            valid: ArFilter::ALL.iter().map(|f| f.id().to_string()).collect(),
        })
    }

    /// Blend opacity. Sunglasses with slight transparency let 5% through.
    pub fn opacity(self) -> f64 {
        match self {
            ArFilter::ShadesLeak => 0.95,
            _ => 1.0,
        }
    }
}

/// Colour plus alpha, with the points that get anchored to landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct Asset {
    pub color: Image,
    pub alpha: Vec<f32>,
}

impl Asset {
    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    /// Eye-hole centres for eyewear: a quarter in from each side, vertically centred.
    pub fn eye_holes(&self) -> ([f64; 2], [f64; 2]) {
        let (w, h) = (self.width() as f64, self.height() as f64);
        ([w / 4.0 - 0.5, h / 2.0 - 0.5], [3.0 * w / 4.0 - 0.5, h / 2.0 - 0.5])
    }

    pub fn center(&self) -> [f64; 2] {
        [self.width() as f64 / 2.0 - 0.5, self.height() as f64 / 2.0 - 0.5]
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (color, alpha) = decode_rgba(&bytes)?;
        Ok(Asset { color, alpha })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = encode_rgba_png(&self.color, &self.alpha)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    fn render(w: usize, h: usize, f: impl Fn(f64, f64) -> Option<[f32; 3]>) -> Asset {
        let mut alpha = vec![0.0f32; w * h];
        let color = Image::from_fn(w, h, |x, y| match f(x as f64, y as f64) {
            Some(c) => {
                alpha[y * w + x] = 1.0;
                c
            }
            None => [0.0; 3],
        });
        Asset { color, alpha }
    }
}

// Eyewear canvas: eye holes at (24, 15.5) and (72, 15.5), 48 px apart.
const EYEWEAR_W: usize = 96;
const EYEWEAR_H: usize = 32;
// Mean-face eye half-width over eye spacing is 3.7/19.5; lenses reach 25%
// beyond that corner.
const LENS_RX: f64 = 1.25 * (3.7 / 19.5) * 48.0;
const LENS_RY: f64 = 0.75 * LENS_RX;
const FRAME: f64 = 2.5;

const SHADES_COLOR: [f32; 3] = [8.0 / 255.0, 8.0 / 255.0, 10.0 / 255.0];
const FRAME_COLOR: [f32; 3] = [0.0, 0.0, 0.0];

fn eyewear(filled_lens: Option<[f32; 3]>) -> Asset {
    let holes = [(23.5, 15.5), (71.5, 15.5)];
    let frame_color = filled_lens.unwrap_or(FRAME_COLOR);
    Asset::render(EYEWEAR_W, EYEWEAR_H, |x, y| {
        for (cx, cy) in holes {
            let d = ((x - cx) / LENS_RX).powi(2) + ((y - cy) / LENS_RY).powi(2);
            let outer = ((x - cx) / (LENS_RX + FRAME)).powi(2) + ((y - cy) / (LENS_RY + FRAME)).powi(2);
            if d <= 1.0 {
                return filled_lens;
            }
            if outer <= 1.0 {
                return Some(frame_color);
            }
        }
        // bridge
        if (37.0..=58.0).contains(&x) && (12.0..=14.5).contains(&y) {
            return Some(frame_color);
        }
        None
    })
}

fn dog_nose() -> Asset {
    Asset::render(64, 48, |x, y| {
        let nose = ((x - 31.5) / 16.0).powi(2) + ((y - 21.0) / 11.0).powi(2);
        if nose <= 1.0 {
            let hl = ((x - 26.0) / 4.0).powi(2) + ((y - 16.0) / 2.5).powi(2);
            return Some(if hl <= 1.0 { [0.45, 0.45, 0.5] } else { [0.07, 0.05, 0.05] });
        }
        let tongue = ((x - 31.5) / 7.0).powi(2) + ((y - 38.0) / 8.0).powi(2);
        (tongue <= 1.0 && y >= 33.0).then_some([0.86, 0.38, 0.46])
    })
}

fn dog_ears() -> Asset {
    Asset::render(128, 48, |x, y| {
        for cx in [14.0, 113.0] {
            let ear = ((x - cx) / 13.0).powi(2) + ((y - 26.0) / 21.0).powi(2);
            if ear <= 1.0 {
                let inner = ((x - cx) / 7.0).powi(2) + ((y - 28.0) / 14.0).powi(2);
                return Some(if inner <= 1.0 { [0.80, 0.62, 0.66] } else { [0.36, 0.30, 0.27] });
            }
        }
        None
    })
}

/// Overlay assets for every AR filter.
#[derive(Clone, Debug, PartialEq)]
pub struct AssetLibrary {
    pub dog_nose: Asset,
    pub dog_ears: Asset,
    pub glasses: Asset,
    pub shades: Asset,
}

impl Default for AssetLibrary {
    fn default() -> Self {
        AssetLibrary::builtin()
    }
}

/// Per-filter asset file names used by [`AssetLibrary::from_dir`].
pub const ASSET_FILES: [&str; 4] = ["dog_nose.png", "dog_ears.png", "glasses.png", "shades.png"];

impl AssetLibrary {
    /// Procedurally drawn assets.
    pub fn builtin() -> Self {
        AssetLibrary {
            dog_nose: dog_nose(),
            dog_ears: dog_ears(),
            glasses: eyewear(None),
            shades: eyewear(Some(SHADES_COLOR)),
        }
    }

    /// Loads RGBA PNGs named as in [`ASSET_FILES`].
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let load = |name: &str| Asset::load_png(&dir.join(name));
        Ok(AssetLibrary {
            dog_nose: load(ASSET_FILES[0])?,
            dog_ears: load(ASSET_FILES[1])?,
            glasses: load(ASSET_FILES[2])?,
            shades: load(ASSET_FILES[3])?,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, asset) in ASSET_FILES.iter().zip([&self.dog_nose, &self.dog_ears, &self.glasses, &self.shades]) {
            asset.save_png(&dir.join(name))?;
        }
        Ok(())
    }

    /// The asset whose placement [`Self::place_asset`] computes.
    pub fn primary(&self, filter: ArFilter) -> &Asset {
        match filter {
            ArFilter::Dog => &self.dog_nose,
            ArFilter::Glasses => &self.glasses,
            ArFilter::ShadesLeak | ArFilter::ShadesNoLeak => &self.shades,
        }
    }

    /// Primary placement for `filter`.
    ///
    /// Dog: nose sprite centred on the nose-tip centroid, width 1.5x the
    /// inter-eye distance, rotated with the eye line. Eyewear: eye holes on
    /// the eye centres, rotated and scaled so hole spacing equals eye spacing.
    pub fn place_asset(&self, landmarks: &LandmarkSet, filter: ArFilter, dims: (usize, usize)) -> Result<Placement> {
        let eye_dist = landmarks.inter_eye_distance();
        if eye_dist < 1e-6 {
            return Err(Error::Placement("eye centres coincide".into()));
        }
        let angle = landmarks.eye_line_angle();
        let asset = self.primary(filter);
        let affine = match filter {
            ArFilter::Dog => {
                let scale = 1.5 * eye_dist / asset.width() as f64;
                anchored(scale, angle, asset.center(), landmarks.nose_tip_center())
            }
            _ => {
                let (l, r) = asset.eye_holes();
                let scale = eye_dist / (r[0] - l[0]);
                let mid_asset = [(l[0] + r[0]) / 2.0, (l[1] + r[1]) / 2.0];
                let (le, re) = (landmarks.left_eye_center(), landmarks.right_eye_center());
                anchored(scale, angle, mid_asset, [(le[0] + re[0]) / 2.0, (le[1] + re[1]) / 2.0])
            }
        };
        Placement::from_alpha(affine, &asset.alpha, asset.width(), asset.height(), dims.0, dims.1)
    }

    /// Dog ears sit above the brows, 2.6x the eye distance wide.
    pub fn place_dog_ears(&self, landmarks: &LandmarkSet, dims: (usize, usize)) -> Result<Placement> {
        let eye_dist = landmarks.inter_eye_distance();
        if eye_dist < 1e-6 {
            return Err(Error::Placement("eye centres coincide".into()));
        }
        let angle = landmarks.eye_line_angle();
        let (le, re) = (landmarks.left_eye_center(), landmarks.right_eye_center());
        let mid = [(le[0] + re[0]) / 2.0, (le[1] + re[1]) / 2.0];
        // "up" in the face frame is (sin a, -cos a)
        let up = [angle.sin(), -angle.cos()];
        let target = [mid[0] + 0.95 * eye_dist * up[0], mid[1] + 0.95 * eye_dist * up[1]];
        let asset = &self.dog_ears;
        let scale = 2.6 * eye_dist / asset.width() as f64;
        let affine = anchored(scale, angle, asset.center(), target);
        Placement::from_alpha(affine, &asset.alpha, asset.width(), asset.height(), dims.0, dims.1)
    }
}

/// Similarity mapping `from` (asset coords) onto `to` (image coords).
fn anchored(scale: f64, angle: f64, from: [f64; 2], to: [f64; 2]) -> Affine {
    let lin = Affine::similarity(scale, angle, 0.0, 0.0);
    let (fx, fy) = lin.apply(from[0], from[1]);
    Affine::similarity(scale, angle, to[0] - fx, to[1] - fy)
}

/// Overlays `filter` using the supplied landmarks.
pub fn apply_ar_with_landmarks(
    assets: &AssetLibrary,
    img: &Image,
    landmarks: &LandmarkSet,
    filter: ArFilter,
) -> Result<Image> {
    let dims = img.dims();
    let mut out = img.clone();
    if filter == ArFilter::Dog {
        let ears = assets.place_dog_ears(landmarks, dims)?;
        out = alpha_blend(&out, &assets.dog_ears.color, &ears, 1.0)?;
    }
    let placement = assets.place_asset(landmarks, filter, dims)?;
    alpha_blend(&out, &assets.primary(filter).color, &placement, filter.opacity() as f32)
}

/// Detects landmarks and overlays `filter`; `None` when no landmarks are found.
pub fn apply_ar_filter(
    assets: &AssetLibrary,
    detector: &dyn FaceDetector,
    img: &Image,
    filter: ArFilter,
) -> Result<Option<Image>> {
    match detect_landmarks(detector, img) {
        None => Ok(None),
        Some(lm) => apply_ar_with_landmarks(assets, img, &lm, filter).map(Some),
    }
}
