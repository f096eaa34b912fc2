use filterbench::filters::ar::apply_ar_with_landmarks;
use filterbench::filters::{apply_enhancement, ArFilter, AssetLibrary, EnhancementRegistry, ENHANCEMENT_IDS};
use filterbench::imaging::{alpha_blend, Affine, Image, Placement};
use filterbench::landmarks::{FaceGeometry, Pose};
use filterbench::manifest::{DatasetManifest, ImageRecord, Provenance};
use filterbench::matchers::{argmax, pairwise_distance, rank_gallery, Metric};
use filterbench::metrics::{closed_set_accuracy, compute_eer, open_set_sweep, threshold_grid, verification_sweep, Polarity, ScoreSet};
use filterbench::recon::{analytic_deblend, build_model, UNet, UNetConfig};
use filterbench::runner::{leak_guard, make_splits, ExperimentConfig, Split, MAX_SEED};
use filterbench::embedding::MinMaxScaler;
use filterbench::Error;
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f32> {
    (0u32..=1000).prop_map(|v| v as f32 / 1000.0)
}

/// `w x h` image plus a same-sized mask.
fn image_and_mask(max: usize) -> impl Strategy<Value = (Image, Image, Vec<f32>)> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        let n = w * h;
        (
            prop::collection::vec([unit(), unit(), unit()], n),
            prop::collection::vec([unit(), unit(), unit()], n),
            prop::collection::vec(unit(), n),
        )
            .prop_map(move |(a, b, m)| {
                let img = |px: Vec<[f32; 3]>| Image::from_fn(w, h, |x, y| px[y * w + x]);
                (img(a), img(b), m)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn blend_stays_in_unit_range((src, asset, mask) in image_and_mask(6), alpha in unit()) {
        let (w, h) = src.dims();
        let pl = Placement::with_mask(Affine::IDENTITY, w, h, mask).unwrap();
        let out = alpha_blend(&src, &asset, &pl, alpha).unwrap();
        prop_assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn quantized_blend_inverts_within_bound((src, asset, _m) in image_and_mask(6), a in 0u32..=95) {
        let alpha = a as f32 / 100.0;
        let (w, h) = src.dims();
        let pl = Placement::with_mask(Affine::IDENTITY, w, h, vec![1.0; w * h]).unwrap();
        let src = src.quantized();
        let blended = alpha_blend(&src, &asset, &pl, alpha).unwrap().quantized();
        let back = analytic_deblend(&blended, &asset, &pl, alpha).unwrap();
        let bound = 0.5 / (255.0 * (1.0 - alpha)) + 1e-5;
        for (r, s) in back.as_slice().iter().zip(src.as_slice()) {
            prop_assert!((r - s).abs() <= bound, "{r} vs {s}, bound {bound}");
        }
    }

    #[test]
    fn opaque_blend_forgets_the_source((src, asset, _m) in image_and_mask(6), other in unit()) {
        let (w, h) = src.dims();
        let pl = Placement::with_mask(Affine::IDENTITY, w, h, vec![1.0; w * h]).unwrap();
        let a = alpha_blend(&src, &asset, &pl, 1.0).unwrap();
        let b = alpha_blend(&Image::filled(w, h, [other; 3]), &asset, &pl, 1.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn enhancement_commutes_with_pixel_permutation(
        (src, _a, _m) in image_and_mask(5),
        which in 0..ENHANCEMENT_IDS.len(),
        seed in any::<u64>(),
    ) {
        let reg = EnhancementRegistry::bundled();
        let (w, h) = src.dims();
        let mut perm: Vec<usize> = (0..w * h).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permute = |img: &Image| Image::from_fn(w, h, |x, y| {
            let p = perm[y * w + x];
            img.get(p % w, p / w)
        });
        let id = ENHANCEMENT_IDS[which];
        let lhs = apply_enhancement(&reg, &permute(&src), id).unwrap();
        let rhs = permute(&apply_enhancement(&reg, &src, id).unwrap());
        prop_assert_eq!(lhs, rhs);
    }
}

fn eyes() -> impl Strategy<Value = ([f64; 2], [f64; 2])> {
    (40.0..56.0f64, 50.0..64.0f64, 24.0..36.0f64, -6.0..6.0f64)
        .prop_map(|(lx, ly, d, dy)| ([lx, ly], [lx + d, ly + dy]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ar_filters_touch_only_their_footprint((l, r) in eyes(), shade in unit(), which in 0..4usize) {
        let lib = AssetLibrary::builtin();
        let lm = FaceGeometry::MEAN.landmarks(&Pose::from_eyes(&FaceGeometry::MEAN, l, r));
        let img = Image::from_fn(112, 112, |x, y| [shade, x as f32 / 112.0, y as f32 / 112.0]);
        let filter = ArFilter::ALL[which];
        let out = apply_ar_with_landmarks(&lib, &img, &lm, filter).unwrap();
        let mut footprints = vec![lib.place_asset(&lm, filter, img.dims()).unwrap()];
        if filter == ArFilter::Dog {
            footprints.push(lib.place_dog_ears(&lm, img.dims()).unwrap());
        }
        for y in 0..112 {
            for x in 0..112 {
                if footprints.iter().all(|p| p.coverage(x, y) == 0.0) {
                    prop_assert_eq!(out.get(x, y), img.get(x, y), "pixel ({}, {})", x, y);
                }
            }
        }
    }

    #[test]
    fn opaque_shades_hide_the_eyes((l, r) in eyes(), a in unit(), b in unit()) {
        let lib = AssetLibrary::builtin();
        let lm = FaceGeometry::MEAN.landmarks(&Pose::from_eyes(&FaceGeometry::MEAN, l, r));
        let img_a = Image::filled(112, 112, [a, 0.5, 1.0 - a]);
        let img_b = Image::filled(112, 112, [b, 0.2, b]);
        let pl = lib.place_asset(&lm, ArFilter::ShadesNoLeak, (112, 112)).unwrap();
        let oa = apply_ar_with_landmarks(&lib, &img_a, &lm, ArFilter::ShadesNoLeak).unwrap();
        let ob = apply_ar_with_landmarks(&lib, &img_b, &lm, ArFilter::ShadesNoLeak).unwrap();
        let mut covered = 0;
        for y in 0..112 {
            for x in 0..112 {
                if pl.coverage(x, y) == 1.0 {
                    covered += 1;
                    prop_assert_eq!(oa.get(x, y), ob.get(x, y));
                }
            }
        }
        prop_assert!(covered > 0);
    }

    #[test]
    fn unet_preserves_spatial_shape(depth in 1..=3usize, base in 1..=3usize, k in 1..=2usize, seed in any::<u64>()) {
        let size = k << depth;
        let net = UNet::<f32>::new(UNetConfig { input_size: size, depth, base_channels: base }, seed).unwrap();
        let out = net.forward(&vec![0.3; 3 * size * size]);
        prop_assert_eq!(out.len(), 3 * size * size);
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f32>>> {
    (2..10usize, 1..5usize).prop_flat_map(|(n, d)| {
        prop::collection::vec(prop::collection::vec((-50i32..50).prop_map(|v| v as f32 / 7.0), d), n)
    })
}

fn nonzero(d: usize) -> impl Strategy<Value = Vec<f32>> {
    vector(d).prop_filter("cosine needs a nonzero vector", |v| v.iter().any(|x| *x != 0.0))
}

fn vector(d: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec((-100i32..100).prop_map(|v| v as f32 / 10.0), d)
}

proptest! {
    #[test]
    fn scaled_training_matrix_spans_unit_range(rows in matrix()) {
        let s = MinMaxScaler::fit(&rows, "t").unwrap();
        let scaled = s.apply_all(&rows).unwrap();
        for j in 0..rows[0].len() {
            let col: Vec<f32> = scaled.iter().map(|r| r[j]).collect();
            prop_assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
            let lo = col.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = col.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if s.max[j] > s.min[j] {
                prop_assert_eq!((lo, hi), (0.0, 1.0));
            } else {
                prop_assert_eq!((lo, hi), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn scaling_preserves_order(rows in matrix(), a in -20.0f32..20.0, b in -20.0f32..20.0) {
        let s = MinMaxScaler::fit(&rows, "t").unwrap();
        let d = rows[0].len();
        let (sa, sb) = (s.apply(&vec![a; d]).unwrap(), s.apply(&vec![b; d]).unwrap());
        for j in 0..d {
            if a < b {
                prop_assert!(sa[j] <= sb[j]);
            }
        }
    }

    #[test]
    fn distance_axioms((a, b, c) in (1..8usize).prop_flat_map(|d| (vector(d), vector(d), vector(d)))) {
        let zero = |v: &[f32]| v.iter().all(|x| *x == 0.0);
        for m in Metric::ALL {
            if m == Metric::Cosine && (zero(&a) || zero(&b) || zero(&c)) {
                prop_assert!(pairwise_distance(&a, &b, m).is_err() || pairwise_distance(&a, &c, m).is_err() || pairwise_distance(&b, &c, m).is_err());
                continue;
            }
            let ab = pairwise_distance(&a, &b, m).unwrap();
            let ba = pairwise_distance(&b, &a, m).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            {
                prop_assert!(pairwise_distance(&a, &a, m).unwrap().abs() < 1e-6);
            }
            if m != Metric::Cosine {
                let (ac, cb) = (pairwise_distance(&a, &c, m).unwrap(), pairwise_distance(&c, &b, m).unwrap());
                prop_assert!(ab <= ac + cb + 1e-9);
            }
        }
    }

    #[test]
    fn ranking_ignores_gallery_order(
        (probe, gallery) in (1..5usize).prop_flat_map(|d| (nonzero(d), prop::collection::vec(nonzero(d), 1..8))),
        rot in 0..8usize,
    ) {
        let g: Vec<(String, Vec<f32>)> = gallery.into_iter().enumerate().map(|(i, v)| (format!("g{i}"), v)).collect();
        let mut shuffled = g.clone();
        shuffled.rotate_left(rot % g.len());
        shuffled.reverse();
        for m in Metric::ALL {
            let a = rank_gallery(&probe, &g, m).unwrap();
            let b = rank_gallery(&probe, &shuffled, m).unwrap();
            let dist = |r: &[filterbench::matchers::Ranked]| r.iter().map(|x| x.distance).collect::<Vec<_>>();
            prop_assert_eq!(dist(&a), dist(&b));
            let mut ids_a: Vec<_> = a.iter().map(|x| (x.distance.to_bits(), x.identity.clone())).collect();
            let mut ids_b: Vec<_> = b.iter().map(|x| (x.distance.to_bits(), x.identity.clone())).collect();
            ids_a.sort();
            ids_b.sort();
            prop_assert_eq!(ids_a, ids_b);
        }
    }

    #[test]
    fn argmax_ignores_constant_shift(v in prop::collection::vec(-100.0f64..100.0, 1..10), c in -1e3f64..1e3) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let (i, j) = (argmax(&v), argmax(&shifted));
        // Rounding in the shift may create or break exact ties.
        prop_assert!(i == j || (v[i] - v[j]).abs() < 1e-9 * (1.0 + c.abs()));
    }
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u32..10).prop_map(|v| v as f64 / 10.0), 1..7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn det_curves_are_monotone(g in scores(), i in scores(), higher in any::<bool>()) {
        let pol = if higher { Polarity::HigherIsBetter } else { Polarity::LowerIsBetter };
        let grid = threshold_grid(g.iter().chain(&i).copied());
        let c = verification_sweep(&g, &i, &grid, pol).unwrap();
        prop_assert!(c.monotone);
        for w in c.points.windows(2) {
            match pol {
                Polarity::LowerIsBetter => prop_assert!(w[1].x >= w[0].x && w[1].y <= w[0].y),
                Polarity::HigherIsBetter => prop_assert!(w[1].x <= w[0].x && w[1].y >= w[0].y),
            }
        }
        prop_assert!(c.points.iter().all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
        let e = compute_eer(&c).unwrap().eer;
        let (first, last) = (c.points[0], *c.points.last().unwrap());
        prop_assert!(e >= 0.0 && e <= first.x.max(first.y).max(last.x).max(last.y));
    }

    #[test]
    fn separated_sets_have_zero_eer(g in scores(), i in scores()) {
        let imp: Vec<f64> = i.iter().map(|v| v + 2.0).collect();
        let grid = threshold_grid(g.iter().chain(&imp).copied());
        let c = verification_sweep(&g, &imp, &grid, Polarity::LowerIsBetter).unwrap();
        prop_assert_eq!(compute_eer(&c).unwrap().eer, 0.0);
    }

    #[test]
    fn loosest_open_set_fnir_is_closed_set_fnir(
        mated in prop::collection::vec(((0u32..10).prop_map(|v| v as f64 / 10.0), any::<bool>()), 1..7),
        non in scores(),
        higher in any::<bool>(),
    ) {
        let pol = if higher { Polarity::HigherIsBetter } else { Polarity::LowerIsBetter };
        let grid = threshold_grid(mated.iter().map(|m| m.0).chain(non.iter().copied()));
        let set = ScoreSet { mated: mated.clone(), nonmated: non, polarity: pol };
        let c = open_set_sweep(&set, &grid).unwrap();
        let loosest = match pol {
            Polarity::LowerIsBetter => *c.points.last().unwrap(),
            Polarity::HigherIsBetter => c.points[0],
        };
        let closed = closed_set_accuracy(&mated.iter().map(|m| m.1).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(loosest.y, closed.fnir);
        prop_assert_eq!(loosest.x, 1.0);
    }
}

fn manifest(counts: &[usize], reverse: bool) -> DatasetManifest {
    let mut m = DatasetManifest::new("source", "toy", "/nonexistent");
    for (i, n) in counts.iter().enumerate() {
        for k in 0..*n {
            m.records.push(ImageRecord {
                image_id: format!("p{i}_{k:02}"),
                identity: format!("p{i}"),
                path: format!("p{i}_{k}.png").into(),
                provenance: Provenance::default(),
            });
        }
    }
    if reverse {
        m.records.reverse();
    }
    m
}

proptest! {
    #[test]
    fn splits_are_stratified_and_order_free(
        counts in prop::collection::vec(1usize..15, 1..6),
        pct in 10u32..90,
        seed in any::<u64>(),
    ) {
        let ratio = pct as f64 / 100.0;
        let s = make_splits(&manifest(&counts, false), ratio, seed).unwrap();
        prop_assert_eq!(&s, &make_splits(&manifest(&counts, true), ratio, seed).unwrap());
        for (i, &n) in counts.iter().enumerate() {
            let id = format!("p{i}");
            if n < 2 {
                prop_assert!(s.excluded_identities.contains(&id));
                continue;
            }
            let train = (0..n).filter(|k| s.is(&format!("p{i}_{k:02}"), Split::Train)).count();
            let test = (0..n).filter(|k| s.is(&format!("p{i}_{k:02}"), Split::Test)).count();
            prop_assert_eq!(train + test, n);
            prop_assert_eq!(train, ((ratio * n as f64).round() as usize).clamp(1, n - 1));
        }
    }

    #[test]
    fn config_round_trips_and_seed_overrides(seed in 0..=MAX_SEED, pct in 1u32..99) {
        let mut c = ExperimentConfig::default().with_seed(seed);
        c.split_ratio = pct as f64 / 100.0;
        prop_assert_eq!((c.seeds.split, c.seeds.filter, c.seeds.train), (seed, seed, seed));
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }
}

#[test]
fn leak_guard_refuses_shared_corpus() {
    let mut model = build_model(UNetConfig { input_size: 8, depth: 1, base_channels: 1 }, 0).unwrap();
    let source = manifest(&[2, 2], false);
    model.trained_on = vec!["other".into()];
    assert!(leak_guard(&source, &model).is_ok());
    model.trained_on.push("toy".into());
    assert!(matches!(leak_guard(&source, &model), Err(Error::Leak(_))));
}

#[test]
fn oversized_seed_is_a_config_error() {
    let c = ExperimentConfig::default().with_seed(MAX_SEED + 1);
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}
