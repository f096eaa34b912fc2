use filterbench::embedding::{DetectionStats, EmbeddingRecord};
use filterbench::matchers::{ClassifierHyper, ClassifierKind, Metric};
use filterbench::runner::protocol::{classifier_column, VariantEmbeddings};
use filterbench::runner::{
    run_closed_set, run_cross_filter, run_open_set, run_verification, EmbeddingSet, Regime, RegimeModels, Split, Splits,
    VARIANTS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IDS: usize = 6;
const IMAGES: usize = 6;
const DIM: usize = 8;

/// Identity `i` sits at a random centre; `noise` spreads its images.
fn embedding_set(noise: f32, seed: u64) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f32>> = (0..IDS).map(|_| (0..DIM).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
    let variants = VARIANTS
        .iter()
        .map(|name| {
            let records = (0..IDS)
                .flat_map(|i| (0..IMAGES).map(move |k| (i, k)))
                .map(|(i, k)| EmbeddingRecord {
                    vector: centres[i].iter().map(|c| c + noise * rng.random_range(-1.0..1.0)).collect(),
                    identity: format!("p{i}"),
                    dataset: name.to_string(),
                    image_id: format!("p{i}_{k}"),
                })
                .collect::<Vec<_>>();
            VariantEmbeddings {
                name: name.to_string(),
                stats: DetectionStats {
                    total: records.len(),
                    accepted: records.len(),
                    ..Default::default()
                },
                records,
            }
        })
        .collect();
    EmbeddingSet {
        backbone: "toy".into(),
        dim: DIM,
        variants,
    }
}

/// First four images of every identity train, the rest test.
fn splits() -> Splits {
    let mut s = Splits::default();
    for i in 0..IDS {
        for k in 0..IMAGES {
            s.assignment.insert(format!("p{i}_{k}"), if k < 4 { Split::Train } else { Split::Test });
        }
    }
    s
}

fn models(set: &EmbeddingSet) -> Vec<RegimeModels> {
    let hyper = ClassifierHyper::default();
    ClassifierKind::ALL
        .iter()
        .map(|k| RegimeModels::train(set, &splits(), *k, &hyper, 1).unwrap())
        .collect()
}

#[test]
fn self_matching_gives_perfect_gar_and_zero_eer() {
    let set = embedding_set(0.0, 1);
    let table = run_closed_set(&set, &splits(), &[]).unwrap();
    for v in VARIANTS {
        for m in Metric::ALL {
            assert_eq!(table.gar(v, m.id()), Some(1.0), "{v}/{}", m.id());
        }
    }
    let ver = run_verification(&set, &splits()).unwrap();
    assert_eq!(ver.rows.len(), 8);
    for v in VARIANTS {
        for m in Metric::ALL {
            assert_eq!(ver.eer(v, m), Some(0.0), "{v}/{}", m.id());
        }
    }
    assert_eq!(ver.average, vec![0.0; 3]);
}

#[test]
fn cross_filter_diagonal_is_the_filter_column() {
    let set = embedding_set(1.5, 2);
    let ms = models(&set);
    let table = run_closed_set(&set, &splits(), &ms).unwrap();
    for m in &ms {
        let x = run_cross_filter(&set, &splits(), m).unwrap();
        assert_eq!(x.values.len(), 8);
        assert!(x.values.iter().all(|r| r.len() == 8));
        assert_eq!(x.variants, VARIANTS);
        for v in VARIANTS {
            assert_eq!(x.get(v, v), table.gar(v, &classifier_column(m.kind, Regime::Filter)));
        }
        let gray = x.gray();
        for (row, grow) in x.values.iter().zip(&gray) {
            for (v, g) in row.iter().zip(grow) {
                assert_eq!(*g, v.map(|v| (v * 255.0).round() as u8));
            }
        }
    }
}

#[test]
fn pooled_regime_sees_eight_times_the_rows() {
    let set = embedding_set(1.0, 3);
    for m in models(&set) {
        let per = m.filter_model("benchmark").unwrap().unwrap().train_rows;
        assert_eq!(per, IDS * 4);
        assert_eq!(m.pooled.train_rows, 8 * per);
        let table = run_closed_set(&set, &splits(), std::slice::from_ref(&m)).unwrap();
        let cell = table.cell("dog", &classifier_column(m.kind, Regime::All)).unwrap();
        assert_eq!(cell.train_rows, 8 * per);
        assert_eq!(cell.probes, IDS * 2);
    }
}

#[test]
fn open_set_sweep_endpoints() {
    let set = embedding_set(1.5, 4);
    let r = run_open_set(&set, &splits(), 2, &ClassifierHyper::default(), 5, 6).unwrap();
    assert_eq!(r.held_out.len(), 2);
    assert_eq!(r.nonmated, 8 * 2 * IMAGES);
    assert_eq!(r.mated, 8 * (IDS - 2) * 2);
    assert_eq!(r.train_rows, 8 * (IDS - 2) * 4);
    let first = r.curve.points.first().unwrap();
    let last = r.curve.points.last().unwrap();
    assert_eq!(first.threshold, f64::NEG_INFINITY);
    assert_eq!(first.x, 1.0);
    assert!((r.gar_at_loosest - r.closed_set_gar).abs() < 1e-15);
    assert_eq!(last.threshold, f64::INFINITY);
    assert_eq!(last.x, 0.0);
    assert!(run_open_set(&set, &splits(), IDS, &ClassifierHyper::default(), 5, 6).is_err());
}

#[test]
fn open_set_draw_is_seeded() {
    let set = embedding_set(1.5, 4);
    let a = run_open_set(&set, &splits(), 2, &ClassifierHyper::default(), 5, 6).unwrap();
    let b = run_open_set(&set, &splits(), 2, &ClassifierHyper::default(), 5, 6).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unenrolled_identities_are_reported() {
    let mut set = embedding_set(0.5, 5);
    set.variants[0].records.retain(|r| r.identity != "p3");
    let ver = run_verification(&set, &splits()).unwrap();
    assert_eq!(ver.unenrolled, vec!["p3".to_string()]);
    let table = run_closed_set(&set, &splits(), &[]).unwrap();
    assert_eq!(table.unenrolled, vec!["p3".to_string()]);
    // p3's probes in other variants are not scored against a missing template
    let dog = table.cell("dog", "euclidean").unwrap();
    assert_eq!(dog.probes, (IDS - 1) * (IMAGES - 1));
}
