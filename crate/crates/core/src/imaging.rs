//! Raster representation plus the geometric and compositing primitives the
//! rest of the toolkit builds on.
//!
//! Pixels are held as RGB `f32` intensities in `[0, 1]`. Conversion to 8 bits
//! happens only when an image is encoded to PNG or JPEG.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, RgbImage};

use crate::error::{Error, Result};

/// Quality used for every JPEG the toolkit writes.
pub const JPEG_QUALITY: u8 = 95;

/// RGB raster with real-valued intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    /// Solid-colour image. Panics on zero dimensions.
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        let px = rgb.map(clamp01);
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&px);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(clamp01));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    /// Wraps interleaved RGB data, clamping every value into `[0, 1]`.
    pub fn from_raw(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("image dimensions must be >= 1"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::contract(format!(
                "expected {} samples for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        for v in &mut data {
            *v = clamp01(*v);
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Image {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Interleaved RGB samples, row-major.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb.map(clamp01));
    }

    /// Applies `f` to every pixel; results are clamped.
    pub fn map_pixels(&self, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for px in self.data.chunks_exact(3) {
            data.extend(f([px[0], px[1], px[2]]).map(clamp01));
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Snaps every intensity to the nearest 8-bit level, as a file round trip would.
    pub fn quantized(&self) -> Image {
        self.map_pixels(|p| p.map(|v| quantize(v) as f32 / 255.0))
    }

    /// Mean squared error over all samples.
    pub fn mse(&self, other: &Image) -> f64 {
        assert_eq!(self.dims(), other.dims(), "mse on images of different size");
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        sum / self.data.len() as f64
    }

    /// Bilinear sample at a continuous position where integer coordinates
    /// are pixel centres. Out-of-range positions clamp to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0f32; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bot = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bot - top) * fy;
        }
        out
    }
}

#[inline]
pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
fn quantize(v: f32) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

/// Axis-aligned box in continuous pixel-edge coordinates: the image covers
/// `[0, width] x [0, height]`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn full(img: &Image) -> Self {
        Rect::new(0.0, 0.0, img.width() as f64, img.height() as f64)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Intersection with the image bounds, `None` when empty.
    pub fn clip_to(&self, width: usize, height: usize) -> Option<Rect> {
        let r = Rect::new(
            self.x0.max(0.0),
            self.y0.max(0.0),
            self.x1.min(width as f64),
            self.y1.min(height as f64),
        );
        (r.x1 > r.x0 && r.y1 > r.y0).then_some(r)
    }

    /// Grows the box by `frac` of its size on each side.
    pub fn expanded(&self, frac: f64) -> Rect {
        let dx = self.width() * frac;
        let dy = self.height() * frac;
        Rect::new(self.x0 - dx, self.y0 - dy, self.x1 + dx, self.y1 + dy)
    }
}

/// 2x3 affine transform `p' = M [x y 1]^T`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Affine {
    pub m: [[f64; 3]; 2],
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    /// Uniform scale, then rotation by `angle` radians, then translation.
    pub fn similarity(scale: f64, angle: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Affine {
            m: [[scale * c, -scale * s, tx], [scale * s, scale * c, ty]],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Option<Affine> {
        let det = self.determinant();
        if det.abs() < 1e-12 || !det.is_finite() {
            return None;
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Some(Affine {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        })
    }

    /// Rotation angle of the linear part, radians.
    pub fn rotation(&self) -> f64 {
        self.m[1][0].atan2(self.m[0][0])
    }

    /// Scale of the linear part, assuming it is a similarity.
    pub fn scale(&self) -> f64 {
        self.determinant().abs().sqrt()
    }
}

/// Where an asset lands on an image: asset-to-image transform plus the
/// per-pixel coverage it produces, sized like the target image.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub affine: Affine,
    width: usize,
    height: usize,
    mask: Vec<f32>,
}

impl Placement {
    /// Builds the coverage mask by warping the asset's alpha channel
    /// (row-major, `asset_w * asset_h`) onto a `width x height` canvas.
    pub fn from_alpha(
        affine: Affine,
        alpha: &[f32],
        asset_w: usize,
        asset_h: usize,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if alpha.len() != asset_w * asset_h {
            return Err(Error::contract("alpha length does not match asset size"));
        }
        let inv = affine
            .inverse()
            .ok_or_else(|| Error::Placement("asset transform is singular".into()))?;
        let mut mask = vec![0.0f32; width * height];
        for y in 0..height {
            for x in 0..width {
                let (u, v) = inv.apply(x as f64, y as f64);
                mask[y * width + x] = sample_zero_padded(alpha, asset_w, asset_h, u, v);
            }
        }
        Ok(Placement {
            affine,
            width,
            height,
            mask,
        })
    }

    /// Placement with an explicit mask; values are clamped into `[0, 1]`.
    pub fn with_mask(affine: Affine, width: usize, height: usize, mut mask: Vec<f32>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::contract("mask length does not match dimensions"));
        }
        for m in &mut mask {
            *m = clamp01(*m);
        }
        Ok(Placement {
            affine,
            width,
            height,
            mask,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mask(&self) -> &[f32] {
        &self.mask
    }

    pub fn coverage(&self, x: usize, y: usize) -> f32 {
        self.mask[y * self.width + x]
    }

    /// Number of pixels with non-zero coverage.
    pub fn support_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0.0).count()
    }
}

fn sample_zero_padded(data: &[f32], w: usize, h: usize, u: f64, v: f64) -> f32 {
    if u <= -1.0 || v <= -1.0 || u >= w as f64 || v >= h as f64 {
        return 0.0;
    }
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = (u - x0) as f32;
    let fy = (v - y0) as f32;
    let at = |xi: f64, yi: f64| -> f32 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            data[yi as usize * w + xi as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bot = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Asset colours resampled into image space through `placement.affine`.
/// Only meaningful where the placement mask is non-zero.
pub fn warp_asset(asset: &Image, placement: &Placement) -> Result<Image> {
    let inv = placement
        .affine
        .inverse()
        .ok_or_else(|| Error::Placement("asset transform is singular".into()))?;
    let (w, h) = placement.dims();
    Ok(Image::from_fn(w, h, |x, y| {
        if placement.coverage(x, y) > 0.0 {
            let (u, v) = inv.apply(x as f64, y as f64);
            asset.sample_bilinear(u, v)
        } else {
            [0.0; 3]
        }
    }))
}

/// Constant-alpha compositing over the placement footprint:
/// `out = a*m*asset' + (1 - a*m)*src`, untouched wherever `m == 0`.
pub fn alpha_blend(src: &Image, asset: &Image, placement: &Placement, alpha: f32) -> Result<Image> {
    if placement.dims() != src.dims() {
        return Err(Error::contract(format!(
            "placement mask is {:?} but source image is {:?}",
            placement.dims(),
            src.dims()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::contract(format!("alpha {alpha} outside [0, 1]")));
    }
    let warped = warp_asset(asset, placement)?;
    let mut out = src.clone();
    for y in 0..src.height() {
        for x in 0..src.width() {
            let m = placement.coverage(x, y);
            if m == 0.0 {
                continue;
            }
            let w = alpha * m;
            let s = src.get(x, y);
            let a = warped.get(x, y);
            out.set(x, y, [0, 1, 2].map(|k| w * a[k] + (1.0 - w) * s[k]));
        }
    }
    Ok(out)
}

/// Resamples the `rect` region of `img` to `out_w x out_h` with bilinear
/// interpolation and half-pixel-centre alignment.
fn resample(img: &Image, rect: Rect, out_w: usize, out_h: usize) -> Image {
    let sx = rect.width() / out_w as f64;
    let sy = rect.height() / out_h as f64;
    Image::from_fn(out_w, out_h, |i, j| {
        let x = rect.x0 + (i as f64 + 0.5) * sx - 0.5;
        let y = rect.y0 + (j as f64 + 0.5) * sy - 0.5;
        img.sample_bilinear(x, y)
    })
}

/// Clips `rect` to the image, crops, and resamples to a square `out_size`.
pub fn crop_resize(img: &Image, rect: Rect, out_size: usize) -> Result<Image> {
    if out_size == 0 {
        return Err(Error::contract("output size must be >= 1"));
    }
    let clipped = rect
        .clip_to(img.width(), img.height())
        .ok_or_else(|| Error::contract(format!("box {rect:?} does not intersect the image")))?;
    Ok(resample(img, clipped, out_size, out_size))
}

/// Whole-image bilinear resize.
pub fn resize(img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::contract("output size must be >= 1"));
    }
    if (out_w, out_h) == img.dims() {
        return Ok(img.clone());
    }
    Ok(resample(img, Rect::full(img), out_w, out_h))
}

/// Decodes a PNG or JPEG stream. Grayscale inputs are replicated to RGB and
/// any alpha channel is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let format = image::guess_format(bytes)
        .map_err(|e| Error::Decode(format!("unrecognised stream header ({} bytes): {e}", bytes.len())))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(Error::Decode(format!("unsupported format {format:?}")));
    }
    let dynimg = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Decode(format!("{format:?} codec failure: {e}")))?;
    Ok(Image::from_rgb8(&dynimg.to_rgb8()))
}

/// Decodes a PNG keeping its alpha channel; returns colour plus row-major alpha.
pub fn decode_rgba(bytes: &[u8]) -> Result<(Image, Vec<f32>)> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Decode(format!("Png codec failure: {e}")))?;
    let rgba = dynimg.to_rgba8();
    let (w, h) = rgba.dimensions();
    let mut color = Vec::with_capacity((w * h * 3) as usize);
    let mut alpha = Vec::with_capacity((w * h) as usize);
    for px in rgba.pixels() {
        color.extend(px.0[..3].iter().map(|&v| v as f32 / 255.0));
        alpha.push(px.0[3] as f32 / 255.0);
    }
    Ok((Image::from_raw(w as usize, h as usize, color)?, alpha))
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    DynamicImage::ImageRgb8(img.to_rgb8())
        .write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(buf)
}

/// Encodes colour plus alpha as an RGBA PNG.
pub fn encode_rgba_png(img: &Image, alpha: &[f32]) -> Result<Vec<u8>> {
    if alpha.len() != img.width() * img.height() {
        return Err(Error::contract("alpha length does not match image"));
    }
    let mut bytes = Vec::with_capacity(alpha.len() * 4);
    for (px, a) in img.as_slice().chunks_exact(3).zip(alpha) {
        bytes.extend(px.iter().map(|&v| quantize(v)));
        bytes.push(quantize(*a));
    }
    let rgba = image::RgbaImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    let mut buf = Vec::new();
    DynamicImage::ImageRgba8(rgba)
        .write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(buf)
}

/// Baseline JPEG at [`JPEG_QUALITY`] without chroma subsampling.
pub fn encode_jpeg(img: &Image) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let rgb = img.to_rgb8();
    let mut enc = jpeg_encoder::Encoder::new(&mut buf, JPEG_QUALITY);
    enc.set_sampling_factor(jpeg_encoder::SamplingFactor::F_1_1);
    enc.encode(
        rgb.as_raw(),
        rgb.width() as u16,
        rgb.height() as u16,
        jpeg_encoder::ColorType::Rgb,
    )
    .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(buf)
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Decode(msg) => Error::Decode(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes PNG or JPEG depending on the file extension (`.jpg`/`.jpeg` vs
/// anything else).
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let is_jpeg = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("jpg") || e.eq_ignore_ascii_case("jpeg"));
    let bytes = if is_jpeg { encode_jpeg(img)? } else { encode_png(img)? };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(v: u8) -> f32 {
        v as f32 / 255.0
    }

    #[test]
    fn png_white_and_black_pixels() {
        for (byte, want) in [(255u8, 1.0f32), (0, 0.0)] {
            let png = encode_png(&Image::filled(1, 1, [want; 3])).unwrap();
            let img = decode_image(&png).unwrap();
            assert_eq!(img.get(0, 0), [want; 3], "byte {byte}");
        }
    }

    #[test]
    fn grayscale_png_is_replicated() {
        let gray = image::GrayImage::from_raw(2, 1, vec![10, 200]).unwrap();
        let mut buf = Vec::new();
        DynamicImage::ImageLuma8(gray)
            .write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)
            .unwrap();
        let img = decode_image(&buf).unwrap();
        assert_eq!(img.get(0, 0), [px(10); 3]);
        assert_eq!(img.get(1, 0), [px(200); 3]);
    }

    #[test]
    fn malformed_stream_is_a_decode_error() {
        let err = decode_image(b"\x89PNG\r\n\x1a\nnot really").unwrap_err();
        assert!(matches!(err, Error::Decode(_)), "{err}");
        assert!(decode_image(&[1, 2, 3]).is_err());
    }

    #[test]
    fn jpeg_round_trip_small_images() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let worst = |img: &Image| {
            let back = decode_image(&encode_jpeg(img).unwrap()).unwrap();
            img.as_slice()
                .iter()
                .zip(back.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max)
        };
        for _ in 0..50 {
            let solid = Image::filled(2, 2, [rng.random(), rng.random(), rng.random()]).quantized();
            assert!(worst(&solid) <= 4.0 / 255.0 + 1e-6);
            // Independent random pixels put energy in the highest DCT bands;
            // libjpeg at the same settings peaks at 21 levels on this data.
            let noisy = Image::from_fn(2, 2, |_, _| [rng.random(), rng.random(), rng.random()]).quantized();
            assert!(worst(&noisy) <= 24.0 / 255.0, "{}", worst(&noisy) * 255.0);
        }
    }

    #[test]
    fn blend_formula_single_pixel() {
        let src = Image::filled(1, 1, [px(200); 3]);
        let asset = Image::filled(1, 1, [px(100); 3]);
        let pl = Placement::with_mask(Affine::IDENTITY, 1, 1, vec![1.0]).unwrap();
        let out = alpha_blend(&src, &asset, &pl, 0.95).unwrap();
        assert!((out.get(0, 0)[0] - px(105)).abs() < 1e-6);
    }

    #[test]
    fn blend_full_opacity_and_zero_alpha() {
        let src = Image::from_fn(4, 4, |x, y| [x as f32 / 4.0, y as f32 / 4.0, 0.5]);
        let asset = Image::from_fn(4, 4, |x, _| [0.1, 0.9, x as f32 / 8.0]);
        let mut mask = vec![0.0; 16];
        mask[5] = 1.0;
        mask[6] = 1.0;
        let pl = Placement::with_mask(Affine::IDENTITY, 4, 4, mask).unwrap();
        let full = alpha_blend(&src, &asset, &pl, 1.0).unwrap();
        let none = alpha_blend(&src, &asset, &pl, 0.0).unwrap();
        assert_eq!(none, src);
        for y in 0..4 {
            for x in 0..4 {
                if pl.coverage(x, y) == 1.0 {
                    assert_eq!(full.get(x, y), asset.get(x, y));
                } else {
                    assert_eq!(full.get(x, y), src.get(x, y));
                }
            }
        }
    }

    #[test]
    fn blend_rejects_mismatched_mask() {
        let src = Image::filled(3, 3, [0.5; 3]);
        let pl = Placement::with_mask(Affine::IDENTITY, 2, 2, vec![1.0; 4]).unwrap();
        assert!(matches!(alpha_blend(&src, &src, &pl, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn crop_resize_identity_and_constant() {
        let img = Image::from_fn(5, 5, |x, y| [x as f32 / 5.0, y as f32 / 5.0, 0.25]);
        assert_eq!(crop_resize(&img, Rect::full(&img), 5).unwrap(), img);
        let c = Image::filled(7, 3, [0.2, 0.4, 0.6]);
        let out = crop_resize(&c, Rect::new(1.3, -2.0, 6.1, 2.5), 4).unwrap();
        for p in out.as_slice().chunks_exact(3) {
            assert!((p[0] - 0.2).abs() < 1e-6 && (p[1] - 0.4).abs() < 1e-6 && (p[2] - 0.6).abs() < 1e-6);
        }
    }

    #[test]
    fn crop_resize_gradient_matches_hand_bilinear() {
        // v(x, y) = (x + 4y) / 15 on a 4x4 grid; output pixel i samples
        // source coordinate (i + 0.5) * 2 - 0.5 = 0.5 or 2.5 on each axis,
        // and bilinear interpolation of a linear ramp is the ramp itself.
        let img = Image::from_fn(4, 4, |x, y| [(x + 4 * y) as f32 / 15.0; 3]);
        let out = crop_resize(&img, Rect::full(&img), 2).unwrap();
        let expect = |sx: f32, sy: f32| (sx + 4.0 * sy) / 15.0;
        let want = [[expect(0.5, 0.5), expect(2.5, 0.5)], [expect(0.5, 2.5), expect(2.5, 2.5)]];
        for j in 0..2 {
            for i in 0..2 {
                assert!((out.get(i, j)[0] - want[j][i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn crop_outside_image_is_contract_error() {
        let img = Image::filled(4, 4, [0.0; 3]);
        assert!(matches!(
            crop_resize(&img, Rect::new(10.0, 10.0, 12.0, 12.0), 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn affine_inverse_round_trip() {
        let a = Affine::similarity(1.7, 0.4, 3.0, -2.0);
        let inv = a.inverse().unwrap();
        let (x, y) = a.apply(5.0, 9.0);
        let (u, v) = inv.apply(x, y);
        assert!((u - 5.0).abs() < 1e-9 && (v - 9.0).abs() < 1e-9);
        assert!((a.rotation() - 0.4).abs() < 1e-12);
        assert!((a.scale() - 1.7).abs() < 1e-12);
    }
}
