//! Global tone/colour filters backed by 3D lookup tables.
//!
//! The nine bundled tables approximate popular selfie filters. Each is baked
//! from a [`ToneCurve`] into a 33^3 table shipped under `assets/luts/`; a
//! learned recreation can be registered in their place through [`ToneMap`].

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const LUT_SIZE: usize = 33;
const LUT_MAGIC: &[u8; 4] = b"LUT3";
const LUT_VERSION: u8 = 1;

/// Ids of the nine enhancement filters, in registry order.
pub const ENHANCEMENT_IDS: [&str; 9] = [
    "clarendon", "juno", "gingham", "lark", "valencia", "ludwig", "mayfair", "nashville", "lofi",
];

/// Pass-through entry kept in the registry for testing.
pub const IDENTITY_ID: &str = "identity";

/// A spatially uniform colour mapping.
pub trait ToneMap: Send + Sync {
    fn map(&self, rgb: [f32; 3]) -> [f32; 3];
}

struct Identity;

impl ToneMap for Identity {
    fn map(&self, rgb: [f32; 3]) -> [f32; 3] {
        rgb
    }
}

/// Analytic description a bundled table is baked from. Applied in order:
/// per-channel gamma, contrast about mid-grey plus brightness, saturation
/// about luma, fade towards a raised black point, additive tint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToneCurve {
    pub gamma: [f32; 3],
    pub contrast: f32,
    pub brightness: f32,
    pub saturation: f32,
    pub fade: f32,
    pub tint: [f32; 3],
}

impl ToneCurve {
    const NEUTRAL: ToneCurve = ToneCurve {
        gamma: [1.0; 3],
        contrast: 1.0,
        brightness: 0.0,
        saturation: 1.0,
        fade: 0.0,
        tint: [0.0; 3],
    };

    pub fn preset(id: &str) -> Option<ToneCurve> {
        let n = ToneCurve::NEUTRAL;
        Some(match id {
            "clarendon" => ToneCurve { contrast: 1.35, saturation: 1.15, tint: [-0.015, 0.0, 0.025], ..n },
            "juno" => ToneCurve { contrast: 1.15, saturation: 1.2, tint: [0.015, 0.01, -0.015], ..n },
            "gingham" => ToneCurve { contrast: 0.85, brightness: 0.03, saturation: 0.85, fade: 0.08, ..n },
            "lark" => ToneCurve { gamma: [0.95, 0.93, 0.97], brightness: 0.04, saturation: 0.9, ..n },
            "valencia" => ToneCurve { contrast: 1.05, fade: 0.05, tint: [0.03, 0.01, -0.02], ..n },
            "ludwig" => ToneCurve { contrast: 1.1, brightness: 0.02, saturation: 0.9, ..n },
            "mayfair" => ToneCurve { contrast: 1.05, brightness: 0.04, tint: [0.02, 0.0, 0.0], ..n },
            "nashville" => ToneCurve { fade: 0.1, brightness: 0.02, tint: [0.035, 0.015, -0.01], ..n },
            "lofi" => ToneCurve { contrast: 1.45, saturation: 1.1, ..n },
            _ => return None,
        })
    }

    pub fn apply(&self, rgb: [f32; 3]) -> [f32; 3] {
        let mut v = [0.0f32; 3];
        for k in 0..3 {
            let g = rgb[k].clamp(0.0, 1.0).powf(self.gamma[k]);
            v[k] = (g - 0.5) * self.contrast + 0.5 + self.brightness;
        }
        let luma = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
        for k in 0..3 {
            let s = luma + (v[k] - luma) * self.saturation;
            let f = self.fade + s * (1.0 - self.fade);
            v[k] = (f + self.tint[k]).clamp(0.0, 1.0);
        }
        v
    }

    /// Samples the curve on a `size^3` grid.
    pub fn bake(&self, size: usize) -> Lut3d {
        let step = 1.0 / (size - 1) as f32;
        let mut data = Vec::with_capacity(size * size * size * 3);
        for b in 0..size {
            for g in 0..size {
                for r in 0..size {
                    let out = self.apply([r as f32 * step, g as f32 * step, b as f32 * step]);
                    data.extend(out.map(|v| (v * 255.0).round() as u8));
                }
            }
        }
        Lut3d { size, data }
    }
}

/// 3D colour table with 8-bit entries, red varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Lut3d {
    size: usize,
    data: Vec<u8>,
}

impl Lut3d {
    pub fn size(&self) -> usize {
        self.size
    }

    fn entry(&self, r: usize, g: usize, b: usize) -> [f32; 3] {
        let i = ((b * self.size + g) * self.size + r) * 3;
        [
            self.data[i] as f32 / 255.0,
            self.data[i + 1] as f32 / 255.0,
            self.data[i + 2] as f32 / 255.0,
        ]
    }

    /// Binary form: `LUT3`, version byte, size byte, two reserved bytes, entries.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.data.len());
        out.extend_from_slice(LUT_MAGIC);
        out.push(LUT_VERSION);
        out.push(self.size as u8);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != LUT_MAGIC {
            return Err(Error::format("LUT", "missing LUT3 header"));
        }
        if bytes[4] != LUT_VERSION {
            return Err(Error::format("LUT", format!("unsupported version {}", bytes[4])));
        }
        let size = bytes[5] as usize;
        if size < 2 {
            return Err(Error::format("LUT", format!("grid size {size} < 2")));
        }
        let want = size * size * size * 3;
        if bytes.len() != 8 + want {
            return Err(Error::format(
                "LUT",
                format!("expected {want} entry bytes at offset 8, found {}", bytes.len().saturating_sub(8)),
            ));
        }
        Ok(Lut3d {
            size,
            data: bytes[8..].to_vec(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Lut3d::from_bytes(&bytes)
    }
}

impl ToneMap for Lut3d {
    /// Trilinear interpolation between grid entries.
    fn map(&self, rgb: [f32; 3]) -> [f32; 3] {
        let n = (self.size - 1) as f32;
        let mut idx = [0usize; 3];
        let mut frac = [0.0f32; 3];
        for k in 0..3 {
            let t = rgb[k].clamp(0.0, 1.0) * n;
            let i = (t.floor() as usize).min(self.size - 2);
            idx[k] = i;
            frac[k] = t - i as f32;
        }
        let [r, g, b] = idx;
        let [fr, fg, fb] = frac;
        let mut out = [0.0f32; 3];
        for (db, wb) in [(0, 1.0 - fb), (1, fb)] {
            for (dg, wg) in [(0, 1.0 - fg), (1, fg)] {
                for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                    let w = wr * wg * wb;
                    if w == 0.0 {
                        continue;
                    }
                    let e = self.entry(r + dr, g + dg, b + db);
                    for k in 0..3 {
                        out[k] += w * e[k];
                    }
                }
            }
        }
        out
    }
}

macro_rules! bundled_lut {
    ($name:literal) => {
        ($name, include_bytes!(concat!("../../assets/luts/", $name, ".lut")).as_slice())
    };
}

const BUNDLED: [(&str, &[u8]); 9] = [
    bundled_lut!("clarendon"),
    bundled_lut!("juno"),
    bundled_lut!("gingham"),
    bundled_lut!("lark"),
    bundled_lut!("valencia"),
    bundled_lut!("ludwig"),
    bundled_lut!("mayfair"),
    bundled_lut!("nashville"),
    bundled_lut!("lofi"),
];

/// Raw bytes of a bundled table.
pub fn bundled_lut_bytes(id: &str) -> Option<&'static [u8]> {
    BUNDLED.iter().find(|(n, _)| *n == id).map(|(_, b)| *b)
}

/// Maps filter ids to tone maps.
#[derive(Clone)]
pub struct EnhancementRegistry {
    entries: BTreeMap<String, Arc<dyn ToneMap>>,
}

impl EnhancementRegistry {
    /// Identity plus the nine bundled tables.
    pub fn bundled() -> Self {
        let mut entries: BTreeMap<String, Arc<dyn ToneMap>> = BTreeMap::new();
        entries.insert(IDENTITY_ID.into(), Arc::new(Identity));
        for (id, bytes) in BUNDLED {
            let lut = Lut3d::from_bytes(bytes).expect("bundled LUT is well-formed");
            entries.insert(id.into(), Arc::new(lut));
        }
        EnhancementRegistry { entries }
    }

    /// Registers or replaces a filter, e.g. a learned recreation.
    pub fn insert(&mut self, id: impl Into<String>, map: Arc<dyn ToneMap>) {
        self.entries.insert(id.into(), map);
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn ToneMap>> {
        self.entries.get(id).ok_or_else(|| Error::Registry {
            kind: "enhancement filter",
            id: id.into(),
            valid: self.ids(),
        })
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }
}

impl Default for EnhancementRegistry {
    fn default() -> Self {
        EnhancementRegistry::bundled()
    }
}

pub fn apply_enhancement(registry: &EnhancementRegistry, img: &Image, filter_id: &str) -> Result<Image> {
    let map = registry.get(filter_id)?;
    if filter_id == IDENTITY_ID {
        return Ok(img.clone());
    }
    Ok(img.map_pixels(|p| map.map(p)))
}
