//! Embeds a clean and a filtered corpus, then identifies probes by nearest
//! neighbour and with both trained classifiers.
//!
//! `cargo run --release --example identify`

use filterbench::detector::SkinBlobDetector;
use filterbench::embedding::{detect_single_face, extract_embedding, BackboneRegistry, MinMaxScaler, DEFAULT_BACKBONE};
use filterbench::filters::{apply_ar_filter, ArFilter, AssetLibrary};
use filterbench::imaging::Image;
use filterbench::matchers::{rank_gallery, train_classifier, ClassifierHyper, ClassifierKind, Metric};
use filterbench::synth::{identity_traits, image_jitter, render_face};

fn main() -> filterbench::Result<()> {
    let detector = SkinBlobDetector::default();
    let backbone = BackboneRegistry::bundled().get(DEFAULT_BACKBONE)?;
    let assets = AssetLibrary::builtin();
    let (ids, per, seed) = (10, 8, 5);

    let embed = |img: &Image| -> Option<Vec<f32>> {
        let det = detect_single_face(&detector, img).ok()?;
        extract_embedding(img, det.bbox, backbone.as_ref()).ok()
    };

    // Images 0..6 train, the rest are probes.
    let (mut train, mut labels, mut probes) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..ids {
        for k in 0..per {
            let clean = render_face(&identity_traits(seed, i), &image_jitter(seed, i, k)).0.quantized();
            if k < 6 {
                if let Some(e) = embed(&clean) {
                    train.push(e);
                    labels.push(format!("id{i}"));
                }
                continue;
            }
            for filter in [None, Some(ArFilter::Dog), Some(ArFilter::ShadesNoLeak)] {
                let img = match filter {
                    None => Some(clean.clone()),
                    Some(f) => apply_ar_filter(&assets, &detector, &clean, f)?.map(|x| x.quantized()),
                };
                if let Some(e) = img.as_ref().and_then(embed) {
                    probes.push((filter.map_or("benchmark", |f| f.id()), format!("id{i}"), e));
                }
            }
        }
    }

    let scaler = MinMaxScaler::fit(&train, "identify-train")?;
    let train = scaler.apply_all(&train)?;
    let gallery: Vec<(String, Vec<f32>)> = labels.iter().cloned().zip(train.iter().cloned()).collect();
    let classifiers = ClassifierKind::ALL
        .iter()
        .map(|kind| train_classifier(&train, &labels, *kind, &ClassifierHyper::default(), 7, "identify-train"))
        .collect::<filterbench::Result<Vec<_>>>()?;

    for variant in ["benchmark", "dog", "shades_no_leak"] {
        let rows: Vec<_> = probes.iter().filter(|p| p.0 == variant).collect();
        let mut hits = [0usize; 3];
        for (_, truth, e) in &rows {
            let e = scaler.apply(e)?;
            hits[0] += (rank_gallery(&e, &gallery, Metric::Euclidean)?[0].identity == *truth) as usize;
            for (h, c) in hits[1..].iter_mut().zip(&classifiers) {
                *h += (c.classify(&e)?.identity == *truth) as usize;
            }
        }
        let n = rows.len().max(1) as f64;
        println!(
            "{variant:<15} probes {:>3}  nearest {:.3}  one-vs-all {:.3}  boosted {:.3}",
            rows.len(),
            hits[0] as f64 / n,
            hits[1] as f64 / n,
            hits[2] as f64 / n
        );
    }
    Ok(())
}
