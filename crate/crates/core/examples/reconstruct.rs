//! Trains a small U-Net to undo the opaque sunglasses and compares its
//! reconstruction error against the untouched shaded input.
//!
//! `cargo run --release --example reconstruct`

use filterbench::detector::SkinBlobDetector;
use filterbench::filters::{apply_ar_filter, ArFilter, AssetLibrary};
use filterbench::imaging::Image;
use filterbench::recon::{build_model, identity_baseline, TrainHyper, UNetConfig};
use filterbench::synth::{identity_traits, image_jitter, render_face};

fn shaded_pairs(seed: u64, ids: usize, per: usize) -> filterbench::Result<Vec<(Image, Image)>> {
    let detector = SkinBlobDetector::default();
    let assets = AssetLibrary::builtin();
    let mut pairs = Vec::new();
    for i in 0..ids {
        for k in 0..per {
            let clean = render_face(&identity_traits(seed, i), &image_jitter(seed, i, k)).0.quantized();
            if let Some(shaded) = apply_ar_filter(&assets, &detector, &clean, ArFilter::ShadesNoLeak)? {
                pairs.push((shaded.quantized(), clean));
            }
        }
    }
    Ok(pairs)
}

fn main() -> filterbench::Result<()> {
    let train = shaded_pairs(100, 24, 4)?;
    let val = shaded_pairs(200, 6, 4)?;
    let cfg = UNetConfig { input_size: 64, depth: 3, base_channels: 8 };
    let mut model = build_model(cfg, 3)?;
    println!("{} training pairs, {} parameters", train.len(), model.net.param_count());

    let report = model.train(&train, &val, &TrainHyper { batch: 4, lr: 3e-3, epochs: 8, seed: 4 })?;
    for (e, loss) in report.epoch_loss.iter().enumerate() {
        println!("epoch {e}: train mse {loss:.5}");
    }
    let baseline = identity_baseline(&val, cfg.input_size)?;
    let learned = model.evaluate(&val)?;
    println!("validation mse: shaded input {baseline:.5}, reconstruction {learned:.5}");
    Ok(())
}
