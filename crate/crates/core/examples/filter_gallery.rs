//! Applies every enhancement and AR filter to one face and reports whether
//! the detector still finds it.
//!
//! `cargo run --example filter_gallery -- [out.png]`

use std::path::PathBuf;

use filterbench::detector::{FaceDetector, SkinBlobDetector};
use filterbench::filters::{apply_ar_filter, apply_enhancement, ArFilter, AssetLibrary, EnhancementRegistry, ENHANCEMENT_IDS};
use filterbench::imaging::{resize, save_image, Image};
use filterbench::synth::{identity_traits, image_jitter, render_face, CANVAS};

fn main() -> filterbench::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("filter_gallery.png"));
    let detector = SkinBlobDetector::default();
    let registry = EnhancementRegistry::bundled();
    let assets = AssetLibrary::builtin();
    let face = render_face(&identity_traits(3, 0), &image_jitter(3, 0, 0)).0.quantized();

    let mut tiles = vec![face.clone()];
    for id in ENHANCEMENT_IDS {
        let img = apply_enhancement(&registry, &face, id)?.quantized();
        println!("{id:<16} faces found: {}", detector.detect(&img).len());
        tiles.push(img);
    }
    for filter in ArFilter::ALL {
        match apply_ar_filter(&assets, &detector, &face, filter)? {
            Some(img) => {
                let img = img.quantized();
                println!("{:<16} faces found: {}", filter.id(), detector.detect(&img).len());
                tiles.push(img);
            }
            None => println!("{:<16} no landmarks, not applied", filter.id()),
        }
    }

    let (c, cols) = (CANVAS, 7);
    let rows = tiles.len().div_ceil(cols);
    let blank = Image::filled(c, c, [1.0; 3]);
    let sheet = Image::from_fn(c * cols, c * rows, |x, y| {
        tiles.get((y / c) * cols + x / c).unwrap_or(&blank).get(x % c, y % c)
    });
    save_image(&resize(&sheet, 2 * c * cols, 2 * c * rows)?, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
