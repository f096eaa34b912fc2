//! Parameterised cartoon faces with exact landmark ground truth.
//!
//! Each identity owns a fixed geometry and palette; every image of that
//! identity re-renders it under a small random pose, lighting, expression and
//! background change. The corpus stands in for a real face dataset wherever
//! tests must run without one.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{save_image, Image};
use crate::landmarks::{FaceGeometry, LandmarkSet, Pose};
use crate::manifest::{DatasetManifest, ImageRecord, Provenance};

/// Side of the square canvas every synthetic face is rendered on.
pub const CANVAS: usize = 64;

const SKIN_TONES: [[f32; 3]; 6] = [
    [0.95, 0.80, 0.69],
    [0.91, 0.74, 0.60],
    [0.84, 0.64, 0.50],
    [0.74, 0.54, 0.40],
    [0.60, 0.42, 0.29],
    [0.47, 0.32, 0.22],
];

const HAIR: [[f32; 3]; 6] = [
    [0.08, 0.07, 0.06],
    [0.17, 0.10, 0.06],
    [0.58, 0.58, 0.58],
    [0.86, 0.84, 0.78],
    [0.60, 0.20, 0.09],
    [0.30, 0.20, 0.30],
];

const IRIS: [[f32; 3]; 5] = [
    [0.30, 0.17, 0.08],
    [0.25, 0.45, 0.72],
    [0.28, 0.50, 0.30],
    [0.50, 0.55, 0.62],
    [0.45, 0.40, 0.15],
];

const LIPS: [[f32; 3]; 4] = [
    [0.76, 0.22, 0.26],
    [0.66, 0.18, 0.22],
    [0.82, 0.34, 0.40],
    [0.55, 0.15, 0.16],
];

const BACKGROUNDS: [[f32; 3]; 6] = [
    [0.30, 0.42, 0.70],
    [0.25, 0.55, 0.55],
    [0.35, 0.58, 0.32],
    [0.52, 0.40, 0.64],
    [0.50, 0.50, 0.52],
    [0.18, 0.22, 0.30],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HairStyle {
    Cap,
    Parted,
    Sides,
}

/// Everything that stays fixed across one identity's images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityTraits {
    pub geometry: FaceGeometry,
    pub skin: [f32; 3],
    pub hair: [f32; 3],
    pub iris: [f32; 3],
    pub lips: [f32; 3],
    pub hair_style: HairStyle,
    /// Distance from the top of the face ellipse to the hairline.
    pub hair_depth: f64,
    pub brow_thickness: f64,
}

impl IdentityTraits {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let pick = |palette: &[[f32; 3]], jitter: f32, rng: &mut dyn rand::RngCore| {
            let base = palette[rng.random_range(0..palette.len())];
            base.map(|c| (c + rng.random_range(-jitter..=jitter)).clamp(0.0, 1.0))
        };
        let skin = pick(&SKIN_TONES, 0.025, rng);
        let hair = pick(&HAIR, 0.03, rng);
        let iris = pick(&IRIS, 0.04, rng);
        let lips = pick(&LIPS, 0.03, rng);
        let geometry = FaceGeometry {
            face_rx: rng.random_range(16.5..21.0),
            face_ry: rng.random_range(20.5..25.0),
            eye_dx: rng.random_range(8.0..11.5),
            eye_y: rng.random_range(-7.5..-4.0),
            eye_rx: rng.random_range(3.2..4.3),
            eye_ry: rng.random_range(1.9..2.6),
            brow_gap: rng.random_range(1.8..3.4),
            brow_len: rng.random_range(6.0..8.0),
            nose_y: rng.random_range(3.0..6.0),
            nose_half_width: rng.random_range(2.3..3.6),
            mouth_y: rng.random_range(10.5..14.0),
            mouth_half_width: rng.random_range(5.0..8.0),
            lip_height: rng.random_range(1.4..2.2),
            mouth_open: 0.0,
        };
        let hair_style = match rng.random_range(0..3) {
            0 => HairStyle::Cap,
            1 => HairStyle::Parted,
            _ => HairStyle::Sides,
        };
        IdentityTraits {
            geometry,
            skin,
            hair,
            iris,
            lips,
            hair_style,
            hair_depth: rng.random_range(4.0..8.5),
            brow_thickness: rng.random_range(1.0..2.2),
        }
    }
}

/// Per-image nuisance parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub pose: Pose,
    pub brightness: f32,
    /// Left-right lighting gradient, -1..1.
    pub light_dir: f32,
    pub gaze: [f64; 2],
    pub mouth_open: f64,
    pub background: [f32; 3],
    pub noise_sigma: f32,
    pub noise_seed: u64,
}

impl Jitter {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let bg = BACKGROUNDS[rng.random_range(0..BACKGROUNDS.len())];
        let c = CANVAS as f64 / 2.0;
        Jitter {
            pose: Pose {
                cx: c + rng.random_range(-3.0..3.0),
                cy: c + 1.0 + rng.random_range(-2.5..2.5),
                scale: rng.random_range(0.98..1.02),
                roll: rng.random_range(-2.0f64..2.0).to_radians(),
            },
            brightness: rng.random_range(0.925..1.06),
            light_dir: rng.random_range(-0.5..0.5),
            gaze: [rng.random_range(-0.7..0.7), rng.random_range(-0.3..0.3)],
            mouth_open: rng.random_range(0.0..1.6),
            background: bg.map(|v| (v + rng.random_range(-0.06f32..0.06)).clamp(0.0, 1.0)),
            noise_sigma: 0.012,
            noise_seed: rng.random(),
        }
    }

    /// Centred, unlit, noiseless pose; useful for fixtures.
    pub fn neutral() -> Self {
        let c = CANVAS as f64 / 2.0;
        Jitter {
            pose: Pose {
                cx: c,
                cy: c + 1.0,
                scale: 1.0,
                roll: 0.0,
            },
            brightness: 1.0,
            light_dir: 0.0,
            gaze: [0.0, 0.0],
            mouth_open: 0.5,
            background: BACKGROUNDS[0],
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let dx = (x - cx) / rx;
    let dy = (y - cy) / ry;
    dx * dx + dy * dy <= 1.0
}

fn scale_rgb(c: [f32; 3], k: f32) -> [f32; 3] {
    c.map(|v| v * k)
}

/// Colour of the face layers at canonical point `(x, y)`, or `None` for background.
fn face_color(t: &IdentityTraits, j: &Jitter, x: f64, y: f64) -> Option<[f32; 3]> {
    let g = &t.geometry;
    let inside_face = in_ellipse(x, y, 0.0, 0.0, g.face_rx, g.face_ry);
    let hair_outline = in_ellipse(x, y, 0.0, 0.5, g.face_rx + 2.0, g.face_ry + 2.5);
    let hairline = -g.face_ry
        + t.hair_depth
        + match t.hair_style {
            HairStyle::Cap => 1.5 * (x / g.face_rx).powi(2),
            HairStyle::Parted => 2.0 * (x / g.face_rx),
            HairStyle::Sides => 0.0,
        };
    let side_hair = t.hair_style == HairStyle::Sides && x.abs() > g.face_rx - 2.5 && y < g.eye_y;
    if hair_outline && (y < hairline || side_hair) {
        return Some(t.hair);
    }
    if !inside_face {
        return None;
    }

    // eyes
    for side in [-1.0, 1.0] {
        let ex = side * g.eye_dx;
        if in_ellipse(x, y, ex, g.eye_y, g.eye_rx, g.eye_ry) {
            let ix = ex + j.gaze[0];
            let iy = g.eye_y + j.gaze[1];
            let ir = g.eye_ry * 0.85;
            let d = (x - ix).hypot(y - iy);
            return Some(if d <= ir * 0.45 {
                [0.05, 0.05, 0.06]
            } else if d <= ir {
                t.iris
            } else {
                [0.95, 0.94, 0.92]
            });
        }
        // brow
        let u = (x - ex) / g.brow_len;
        if u.abs() <= 0.5 {
            let by = g.eye_y - g.eye_ry - g.brow_gap - (1.0 - 4.0 * u * u);
            if (y - by).abs() <= t.brow_thickness / 2.0 {
                return Some(scale_rgb(t.hair, 0.45));
            }
        }
    }

    // nostrils
    for side in [-1.0, 1.0] {
        if in_ellipse(x, y, side * g.nose_half_width * 0.5, g.nose_y, 1.1, 0.7) {
            return Some(scale_rgb(t.skin, 0.35));
        }
    }

    // mouth
    let open = j.mouth_open;
    if in_ellipse(x, y, 0.0, g.mouth_y, 0.75 * g.mouth_half_width, open / 2.0 + 0.01) && open > 0.3 {
        return Some([0.25, 0.05, 0.08]);
    }
    if in_ellipse(x, y, 0.0, g.mouth_y, g.mouth_half_width, g.lip_height + open / 2.0) {
        return Some(t.lips);
    }

    // skin with radial shading and a faint nose-bridge shadow
    let r2 = (x / g.face_rx).powi(2) + (y / g.face_ry).powi(2);
    let mut k = 1.0 - 0.12 * r2 as f32;
    if x.abs() < 1.0 && y > g.eye_y + 2.0 && y < g.nose_y - 1.0 {
        k *= 0.93;
    }
    Some(scale_rgb(t.skin, k))
}

/// Renders one face; returns the image and its exact landmarks.
pub fn render_face(t: &IdentityTraits, j: &Jitter) -> (Image, LandmarkSet) {
    let n = CANVAS;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(j.noise_seed);
    let noise = Normal::new(0.0f32, j.noise_sigma.max(1e-9)).expect("valid sigma");
    const SUB: [f64; 2] = [-0.25, 0.25];
    let img = Image::from_fn(n, n, |px, py| {
        let mut acc = [0.0f32; 3];
        for sy in SUB {
            for sx in SUB {
                let ix = px as f64 + sx;
                let iy = py as f64 + sy;
                let q = j.pose.invert([ix, iy]);
                let c = face_color(t, j, q[0], q[1]).unwrap_or_else(|| {
                    let grad = 1.0 - 0.15 * (iy / n as f64) as f32;
                    scale_rgb(j.background, grad)
                });
                for k in 0..3 {
                    acc[k] += c[k] / 4.0;
                }
            }
        }
        let light = j.brightness * (1.0 + 0.08 * j.light_dir * ((px as f32 / n as f32) - 0.5) * 2.0);
        acc.map(|v| {
            let e = if j.noise_sigma > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
            v * light + e
        })
    });
    let mut geom = t.geometry;
    geom.mouth_open = j.mouth_open;
    let lm = geom.landmarks(&j.pose).clamped(n, n);
    (img, lm)
}

/// Two faces side by side on a `2*CANVAS x CANVAS` canvas.
pub fn two_face_composite(a: &Image, b: &Image) -> Image {
    let (w, h) = a.dims();
    Image::from_fn(w + b.width(), h.max(b.height()), |x, y| {
        if x < w {
            a.get(x, y.min(h - 1))
        } else {
            b.get(x - w, y.min(b.height() - 1))
        }
    })
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Traits of identity `index` in the corpus generated from `seed`.
pub fn identity_traits(seed: u64, index: usize) -> IdentityTraits {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64 + 1));
    IdentityTraits::sample(&mut rng)
}

/// Jitter of image `image_index` of identity `index`.
pub fn image_jitter(seed: u64, index: usize, image_index: usize) -> Jitter {
    let salt = ((index as u64 + 1) << 20) | image_index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x5EED_1A77, salt));
    Jitter::sample(&mut rng)
}

/// Landmark ground truth keyed by image id.
pub type GroundTruth = BTreeMap<String, LandmarkSet>;

/// Renders `n_identities x images_per_identity` faces into `dir/images`,
/// writes `dir/manifest.json` and `dir/landmarks.json`.
pub fn generate_synthetic_corpus(
    dir: &Path,
    corpus_id: &str,
    n_identities: usize,
    images_per_identity: usize,
    seed: u64,
) -> Result<(DatasetManifest, GroundTruth)> {
    if n_identities < 2 {
        return Err(Error::contract("synthetic corpus needs at least 2 identities"));
    }
    let mut manifest = DatasetManifest::new("source", corpus_id, dir);
    let mut truth = GroundTruth::new();
    for i in 0..n_identities {
        let traits = identity_traits(seed, i);
        let identity = format!("id{i:03}");
        for k in 0..images_per_identity {
            let (img, lm) = render_face(&traits, &image_jitter(seed, i, k));
            let image_id = format!("{identity}_{k:02}");
            let rel = Path::new("images").join(format!("{image_id}.png"));
            save_image(&img, &dir.join(&rel))?;
            truth.insert(image_id.clone(), lm);
            manifest.records.push(ImageRecord {
                image_id,
                identity: identity.clone(),
                path: rel,
                provenance: Provenance::default(),
            });
        }
    }
    manifest.save(&dir.join("manifest.json"))?;
    let gt = serde_json::to_string(&truth).expect("landmarks serialize");
    std::fs::write(dir.join("landmarks.json"), gt).map_err(|e| Error::io(dir.join("landmarks.json"), e))?;
    Ok((manifest, truth))
}

pub fn load_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let p = dir.join("landmarks.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("landmark ground truth", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic() {
        let t = identity_traits(11, 3);
        let j = image_jitter(11, 3, 4);
        assert_eq!(render_face(&t, &j), render_face(&t, &j));
        assert_ne!(identity_traits(11, 3), identity_traits(11, 4));
    }

    #[test]
    fn landmarks_match_rendered_eyes() {
        // the pixel under each ground-truth eye centre is pupil or iris, not skin
        for k in 0..10 {
            let t = identity_traits(5, k);
            let j = image_jitter(5, k, 0);
            let (img, lm) = render_face(&t, &j);
            for c in [lm.left_eye_center(), lm.right_eye_center()] {
                let p = img.get(c[0].round() as usize, c[1].round() as usize);
                let lum = (p[0] + p[1] + p[2]) / 3.0;
                let skin_lum = (t.skin[0] + t.skin[1] + t.skin[2]) / 3.0;
                assert!((lum - skin_lum * j.brightness).abs() > 0.05 || lum < 0.5, "eye {k}: {p:?}");
            }
        }
    }

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let (m, gt) = generate_synthetic_corpus(dir.path(), "synth-a", 3, 4, 9).unwrap();
        assert_eq!(m.len(), 12);
        assert_eq!(gt.len(), 12);
        assert_eq!(m.identities(), vec!["id000", "id001", "id002"]);
        assert!(m.records.iter().all(|r| m.image_path(r).exists()));
        assert_eq!(load_ground_truth(dir.path()).unwrap(), gt);
        assert!(generate_synthetic_corpus(dir.path(), "x", 1, 4, 9).is_err());
    }
}
