//! Renders a few synthetic identities and writes a contact sheet.
//!
//! `cargo run --example synth_corpus -- [out.png]`

use std::path::PathBuf;

use filterbench::imaging::{resize, save_image, Image};
use filterbench::synth::{identity_traits, image_jitter, render_face, CANVAS};

fn main() -> filterbench::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("synth_corpus.png"));
    let (ids, per, seed) = (6, 5, 1);

    let mut tiles = Vec::new();
    for i in 0..ids {
        let traits = identity_traits(seed, i);
        for k in 0..per {
            let (img, lm) = render_face(&traits, &image_jitter(seed, i, k));
            if k == 0 {
                let [lx, ly] = lm.left_eye_center();
                let [rx, ry] = lm.right_eye_center();
                println!("identity {i}: eyes at ({lx:.1}, {ly:.1}) / ({rx:.1}, {ry:.1})");
            }
            tiles.push(img.quantized());
        }
    }

    let c = CANVAS;
    let sheet = Image::from_fn(c * per, c * ids, |x, y| tiles[(y / c) * per + x / c].get(x % c, y % c));
    save_image(&resize(&sheet, 2 * c * per, 2 * c * ids)?, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
