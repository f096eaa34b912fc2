//! Acceptance gate: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed; exits nonzero when a
//! gating criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use filterbench::imaging::{alpha_blend, resize, Affine, Image, Placement};
use filterbench::matchers::{argmax, train_classifier, ClassifierHyper, ClassifierKind, ClassifierModel, Metric};
use filterbench::metrics::{
    compute_eer, open_set_sweep, threshold_grid, verification_sweep, DetCurve, Polarity, ScoreSet,
};
use filterbench::recon::{analytic_deblend, batch_gradient, build_model, identity_baseline, TrainHyper, UNet, UNetConfig};
use filterbench::runner::protocol::classifier_column;
use filterbench::runner::{CorpusConfig, Experiment, ExperimentConfig, Regime, VARIANTS};
use filterbench::synth::{identity_traits, image_jitter, render_face};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and budgets.
const EER_TOL: f64 = 1e-12;
const DEBLEND_TOL: f32 = 10.0 / 255.0 + 1e-5;
const GRAD_REL_TOL: f64 = 1e-3;
const RECON_RATIO: f64 = 0.25;
const SOFTMAX_SUM_TOL: f64 = 1e-6;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, start: Instant) -> Result<(), String> {
    check(start.elapsed() < budget, || format!("took {:.1?}, budget {budget:?}", start.elapsed()))
}

// ---------- criterion 1: metric oracle ----------

fn distinct_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    let mut out = vec![f64::NEG_INFINITY];
    out.extend(v);
    out.push(f64::INFINITY);
    out
}

fn accepts(pol: Polarity, s: f64, t: f64) -> bool {
    match pol {
        Polarity::LowerIsBetter => s <= t,
        Polarity::HigherIsBetter => s >= t,
    }
}

fn oracle_verification(gen: &[f64], imp: &[f64], pol: Polarity) -> Vec<(f64, f64, f64)> {
    let all: Vec<f64> = gen.iter().chain(imp).copied().collect();
    distinct_thresholds(&all)
        .into_iter()
        .map(|t| {
            let fa = imp.iter().filter(|&&s| accepts(pol, s, t)).count() as f64 / imp.len() as f64;
            let fr = gen.iter().filter(|&&s| !accepts(pol, s, t)).count() as f64 / gen.len() as f64;
            (t, fa, fr)
        })
        .collect()
}

fn oracle_open_set(mated: &[(f64, bool)], non: &[f64], pol: Polarity) -> Vec<(f64, f64, f64)> {
    let all: Vec<f64> = mated.iter().map(|m| m.0).chain(non.iter().copied()).collect();
    distinct_thresholds(&all)
        .into_iter()
        .map(|t| {
            let fp = non.iter().filter(|&&s| accepts(pol, s, t)).count() as f64 / non.len() as f64;
            let miss = mated.iter().filter(|(s, hit)| !(*hit && accepts(pol, *s, t))).count() as f64 / mated.len() as f64;
            (t, fp, miss)
        })
        .collect()
}

/// First point on the diagonal, else the interpolated crossing of the first
/// segment whose endpoints lie on opposite sides of it.
fn oracle_eer(points: &[(f64, f64, f64)]) -> f64 {
    if let Some(p) = points.iter().find(|p| p.1 == p.2) {
        return p.1;
    }
    for w in points.windows(2) {
        let ((_, x0, y0), (_, x1, y1)) = (w[0], w[1]);
        if (x0 > y0) != (x1 > y1) {
            let f = (y0 - x0) / ((x1 - x0) - (y1 - y0));
            return x0 + f * (x1 - x0);
        }
    }
    panic!("monotone curves from -inf to +inf always cross");
}

fn same_curve(c: &DetCurve, o: &[(f64, f64, f64)]) -> bool {
    c.points.len() == o.len() && c.points.iter().zip(o).all(|(p, q)| p.threshold == q.0 && p.x == q.1 && p.y == q.2)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (g, i) = ([0.1, 0.2, 0.4], [0.3, 0.5, 0.6]);
    let c = verification_sweep(&g, &i, &threshold_grid(g.iter().chain(&i).copied()), Polarity::LowerIsBetter)
        .map_err(|e| e.to_string())?;
    let worked = compute_eer(&c).map_err(|e| e.to_string())?.eer;
    check((worked - 1.0 / 3.0).abs() <= EER_TOL, || format!("worked example EER {worked}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let score = |rng: &mut ChaCha8Rng| rng.random_range(0..8) as f64 / 8.0;
    for case in 0..500 {
        let pol = if case % 2 == 0 { Polarity::LowerIsBetter } else { Polarity::HigherIsBetter };
        let n_a = rng.random_range(1..=6);
        let n_b = rng.random_range(1..=12 - n_a);
        let gen: Vec<f64> = (0..n_a).map(|_| score(&mut rng)).collect();
        let imp: Vec<f64> = (0..n_b).map(|_| score(&mut rng)).collect();
        let grid = threshold_grid(gen.iter().chain(&imp).copied());
        let curve = verification_sweep(&gen, &imp, &grid, pol).map_err(|e| e.to_string())?;
        let oracle = oracle_verification(&gen, &imp, pol);
        check(same_curve(&curve, &oracle), || format!("case {case}: verification curve differs"))?;
        let eer = compute_eer(&curve).map_err(|e| e.to_string())?.eer;
        let want = oracle_eer(&oracle);
        check((eer - want).abs() <= EER_TOL, || format!("case {case}: EER {eer} vs oracle {want}"))?;

        let mated: Vec<(f64, bool)> = gen.iter().map(|&s| (s, rng.random_bool(0.8))).collect();
        let set = ScoreSet {
            mated: mated.clone(),
            nonmated: imp.clone(),
            polarity: pol,
        };
        let open = open_set_sweep(&set, &grid).map_err(|e| e.to_string())?;
        check(same_curve(&open, &oracle_open_set(&mated, &imp, pol)), || {
            format!("case {case}: open-set curve differs")
        })?;
    }
    within(Duration::from_secs(10), start)?;
    Ok(format!("500 cases, worked EER {worked:.15}, {:.2?}", start.elapsed()))
}

// ---------- criterion 2: blend algebra ----------

fn criterion_2() -> Outcome {
    let start = Instant::now();
    // Every (source, asset) 8-bit pair: source along x, asset along y.
    let v = |k: usize| k as f32 / 255.0;
    let src = Image::from_fn(256, 256, |x, _| [v(x), v(255 - x), v(x / 2)]);
    let asset = Image::from_fn(256, 256, |_, y| [v(y), v(y / 3), v(255 - y)]);
    let mut mask = vec![1.0; 256 * 256];
    for m in mask.iter_mut().take(256 * 16) {
        *m = 0.0;
    }
    let pl = Placement::with_mask(Affine::IDENTITY, 256, 256, mask).map_err(|e| e.to_string())?;

    let opaque = alpha_blend(&src, &asset, &pl, 1.0).map_err(|e| e.to_string())?;
    for y in 0..256 {
        for x in 0..256 {
            let want = if y < 16 { src.get(x, y) } else { asset.get(x, y) };
            check(opaque.get(x, y) == want, || format!("alpha 1 pixel ({x},{y})"))?;
        }
    }

    let blended = alpha_blend(&src, &asset, &pl, 0.95).map_err(|e| e.to_string())?.quantized();
    let back = analytic_deblend(&blended, &asset, &pl, 0.95).map_err(|e| e.to_string())?;
    let mut worst = 0.0f32;
    for y in 16..256 {
        for x in 0..256 {
            for (a, b) in back.get(x, y).iter().zip(src.get(x, y)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(worst <= DEBLEND_TOL, || format!("deblend error {:.3}/255", worst * 255.0))?;
    within(Duration::from_secs(5), start)?;
    Ok(format!("worst deblend error {:.3}/255, {:.2?}", worst * 255.0, start.elapsed()))
}

// ---------- criterion 3: U-Net structure and gradients ----------

fn flat(net: &mut UNet<f64>, idx: usize) -> &mut f64 {
    let mut i = idx;
    for t in net.tensors_mut() {
        if i < t.len() {
            return &mut t[i];
        }
        i -= t.len();
    }
    unreachable!()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    for depth in 2..=4 {
        let cfg = UNetConfig { input_size: 32, depth, base_channels: 4 };
        let net = UNet::<f32>::new(cfg, 1).map_err(|e| e.to_string())?;
        let x = vec![0.5f32; 3 * 32 * 32];
        check(net.forward(&x).len() == x.len(), || format!("depth {depth}: output shape"))?;
        // Concatenated skips double every decoder conv's input channels.
        let extra: usize = (0..depth).map(|i| 9 * cfg.channels(i) * cfg.channels(i)).sum();
        check(net.param_count() + extra == cfg.concat_param_count(), || format!("depth {depth}: concat count"))?;
        check(net.param_count() < cfg.concat_param_count(), || format!("depth {depth}: additive not smaller"))?;
    }

    let cfg = UNetConfig { input_size: 4, depth: 2, base_channels: 2 };
    let mut net = UNet::<f64>::new(cfg, 21).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..48).map(|_| rng.random()).collect();
    let t: Vec<f64> = (0..48).map(|_| rng.random()).collect();
    let (_, mut grad) = batch_gradient(&net, &[(&x, &t)]);
    // Small enough that no difference interval straddles a ReLU kink.
    let h = 1e-6;
    let mut worst = 0.0f64;
    for idx in 0..net.param_count() {
        let analytic = *flat(&mut grad, idx);
        let orig = *flat(&mut net, idx);
        *flat(&mut net, idx) = orig + h;
        let up = UNet::mse(&net.forward(&x), &t);
        *flat(&mut net, idx) = orig - h;
        let down = UNet::mse(&net.forward(&x), &t);
        *flat(&mut net, idx) = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    check(worst < GRAD_REL_TOL, || format!("worst relative gradient error {worst:e}"))?;
    within(Duration::from_secs(60), start)?;
    Ok(format!("{} params checked, worst rel error {worst:.1e}, {:.2?}", net.param_count(), start.elapsed()))
}

// ---------- criterion 4: reconstruction learns ----------

fn occlusion_pairs(seed: u64, n: usize, size: usize) -> Vec<(Image, Image)> {
    (0..n)
        .map(|i| {
            let face = render_face(&identity_traits(seed, i / 4), &image_jitter(seed, i / 4, i % 4)).0;
            let clean = resize(&face, size, size).expect("resize");
            let mut occ = clean.clone();
            for y in size / 4..size / 2 {
                for x in size / 4..size * 3 / 4 {
                    occ.set(x, y, [0.0; 3]);
                }
            }
            (occ, clean)
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let size = 32;
    let train = occlusion_pairs(1, 200, size);
    let val = occlusion_pairs(2, 50, size);
    let baseline = identity_baseline(&val, size).map_err(|e| e.to_string())?;
    let mut model =
        build_model(UNetConfig { input_size: size, depth: 3, base_channels: 8 }, 3).map_err(|e| e.to_string())?;
    let hyper = TrainHyper { batch: 8, lr: 3e-3, epochs: 10, seed: 4 };
    let rep = model.train(&train, &val, &hyper).map_err(|e| e.to_string())?;
    let val_mse = rep.validation_loss.ok_or("no validation loss")?;
    let ratio = val_mse / baseline;
    check(ratio < RECON_RATIO, || format!("val MSE {val_mse:.5} is {ratio:.3}x baseline {baseline:.5}"))?;
    within(Duration::from_secs(600), start)?;
    Ok(format!("val MSE {val_mse:.5} = {ratio:.3}x identity baseline, {:.1?}", start.elapsed()))
}

// ---------- criteria 5 and 6: full pipeline on 20 x 12 ----------

struct PipelineRun {
    detection: BTreeMap<String, f64>,
    table: filterbench::runner::ClosedSetTable,
    elapsed: Duration,
}

fn full_pipeline() -> Result<PipelineRun, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig::default();
    check(cfg.corpus.identities == 20 && cfg.corpus.images_per_identity == 12, || "default corpus size".into())?;
    let e = Experiment::new(cfg, dir.path()).map_err(|e| e.to_string())?;
    let s = e.run_all().map_err(|e| e.to_string())?;
    Ok(PipelineRun {
        detection: s.embeddings.variants.iter().map(|v| (v.name.clone(), v.stats.rate())).collect(),
        table: s.closed_set,
        elapsed: start.elapsed(),
    })
}

fn ordered(values: &[(&str, f64)]) -> Result<(), String> {
    for w in values.windows(2) {
        check(w[0].1 >= w[1].1, || format!("{} {:.3} < {} {:.3}", w[0].0, w[0].1, w[1].0, w[1].1))?;
    }
    let (first, last) = (values[0], values[values.len() - 1]);
    check(first.1 > last.1, || format!("{} not strictly above {}", first.0, last.0))
}

const CHAIN: [&str; 4] = ["benchmark", "dog", "shades_leak", "shades_no_leak"];

fn criterion_5(run: &Result<PipelineRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let det: Vec<(&str, f64)> = CHAIN.iter().map(|v| (*v, run.detection[*v])).collect();
    ordered(&det).map_err(|e| format!("detection: {e}"))?;
    let gar = |v: &str| run.table.gar(v, Metric::Euclidean.id()).unwrap_or(0.0);
    let gars: Vec<(&str, f64)> = CHAIN.iter().map(|v| (*v, gar(v))).collect();
    ordered(&gars).map_err(|e| format!("GAR: {e}"))?;
    let (recon, shaded) = (gar("shades_recon_leak"), gar("shades_leak"));
    check(recon > shaded, || format!("recon_leak GAR {recon:.3} <= shades_leak {shaded:.3}"))?;
    check(run.elapsed < Duration::from_secs(900), || format!("took {:.1?}", run.elapsed))?;
    let fmt = |v: &[(&str, f64)]| v.iter().map(|(n, x)| format!("{n} {x:.3}")).collect::<Vec<_>>().join(" >= ");
    Ok(format!(
        "detection {}; GAR {}; recon_leak {recon:.3} > {shaded:.3}; {:.1?}",
        fmt(&det),
        fmt(&gars),
        run.elapsed
    ))
}

fn criterion_6(run: &Result<PipelineRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let mut worst = f64::INFINITY;
    for kind in ClassifierKind::ALL {
        for v in VARIANTS.iter().skip(1) {
            let all = run.table.gar(v, &classifier_column(kind, Regime::All)).ok_or(format!("{v}: no All cell"))?;
            let bench =
                run.table.gar(v, &classifier_column(kind, Regime::Benchmark)).ok_or(format!("{v}: no Benchmark cell"))?;
            check(all >= bench, || format!("{}/{v}: All {all:.3} < Benchmark {bench:.3}", kind.id()))?;
            worst = worst.min(all - bench);
        }
    }
    Ok(format!("Train=All - Train=Benchmark >= {worst:.3} over 7 variants x 2 classifiers"))
}

// ---------- criterion 7: determinism ----------

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.corpus = CorpusConfig {
        id: "determinism-eval".into(),
        identities: 8,
        images_per_identity: 10,
        seed: 21,
        manifest: None,
    };
    c.recon.corpus = CorpusConfig {
        id: "determinism-recon".into(),
        identities: 20,
        images_per_identity: 4,
        seed: 22,
        manifest: None,
    };
    c.recon.unet = UNetConfig { input_size: 32, depth: 2, base_channels: 8 };
    c.recon.train = TrainHyper { batch: 4, lr: 3e-3, epochs: 20, seed: 23 };
    c.tsne.iterations = 300;
    c
}

fn report_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        if p.extension().is_some_and(|x| x == "csv" || x == "json") {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let e = Experiment::new(small_config(), dir.path()).map_err(|e| e.to_string())?;
        e.run_all().map_err(|e| e.to_string())?;
        runs.push(report_files(&e.reports_dir())?);
    }
    let mut expected: Vec<String> = ["datasets", "closed_set", "closed_set_counts", "open_set", "verification_eer", "tsne_silhouette"]
        .iter()
        .map(|n| format!("{n}.csv"))
        .collect();
    for kind in ClassifierKind::ALL {
        expected.push(format!("cross_filter_{}.csv", kind.id()));
    }
    expected.extend(VARIANTS.iter().map(|v| format!("tsne_{v}.csv")));
    for name in &expected {
        check(runs[0].contains_key(name), || format!("{name} not written"))?;
    }
    check(runs[0].keys().eq(runs[1].keys()), || "report sets differ".into())?;
    for (name, bytes) in &runs[0] {
        check(runs[1][name] == *bytes, || format!("{name} differs between runs"))?;
    }
    let csv = runs[0].keys().filter(|k| k.ends_with(".csv")).count();
    Ok(format!(
        "{csv} CSV and {} JSON reports byte-identical, {:.1?}",
        runs[0].len() - csv,
        start.elapsed()
    ))
}

// ---------- criterion 8: classifier sanity ----------

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let centres = [[0.1f32, 0.1, 0.9, 0.5], [0.9, 0.2, 0.1, 0.5], [0.5, 0.9, 0.5, 0.1], [0.2, 0.8, 0.9, 0.9]];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for _ in 0..10 {
            x.push(c.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect::<Vec<f32>>());
            y.push(format!("c{k}"));
        }
    }
    let hyper = ClassifierHyper::default();
    for kind in ClassifierKind::ALL {
        let clf = train_classifier(&x, &y, kind, &hyper, 1, "toy").map_err(|e| e.to_string())?;
        for (row, label) in x.iter().zip(&y) {
            let d = clf.classify(row).map_err(|e| e.to_string())?;
            check(d.identity == *label, || format!("{}: training row of {label} classified {}", kind.id(), d.identity))?;
        }
        match &clf.model {
            ClassifierModel::OneVsAll(_) => {
                for shift in [-3.0, 0.25, 40.0] {
                    let mut shifted = clf.clone();
                    if let ClassifierModel::OneVsAll(ms) = &mut shifted.model {
                        ms.iter_mut().for_each(|m| m.b += shift);
                    }
                    for _ in 0..50 {
                        let p: Vec<f32> = (0..4).map(|_| rng.random()).collect();
                        let (a, b) = (clf.scores(&p).map_err(|e| e.to_string())?, shifted.scores(&p).map_err(|e| e.to_string())?);
                        check(argmax(&a) == argmax(&b), || format!("argmax moved under shift {shift}"))?;
                    }
                }
            }
            ClassifierModel::Boosted(_) => {
                for _ in 0..200 {
                    let p: Vec<f32> = (0..4).map(|_| rng.random_range(-0.5..1.5)).collect();
                    let sum: f64 = clf.scores(&p).map_err(|e| e.to_string())?.iter().sum();
                    check((sum - 1.0).abs() <= SOFTMAX_SUM_TOL, || format!("softmax sums to {sum}"))?;
                }
            }
        }
    }
    Ok("both kinds fit 40/40 toy rows; margin shift keeps argmax; softmax sums to 1".into())
}

// ---------- criterion 9: full-scale path (not gating) ----------

/// Runs when `FILTERBENCH_FULL_CONFIG` names an experiment config pointing
/// at a real corpus manifest (and, optionally, other backbone weights).
fn criterion_9() -> Option<Outcome> {
    let path = std::env::var_os("FILTERBENCH_FULL_CONFIG")?;
    Some((|| {
        let cfg = ExperimentConfig::load(Path::new(&path)).map_err(|e| e.to_string())?;
        let out = std::env::var_os("FILTERBENCH_FULL_OUT").map_or_else(|| std::env::temp_dir().join("filterbench-full"), Into::into);
        let e = Experiment::new(cfg, &out).map_err(|e| e.to_string())?;
        e.run_all().map_err(|e| e.to_string())?;
        for f in ["datasets.csv", "closed_set.csv", "verification_eer.csv"] {
            check(e.reports_dir().join(f).exists(), || format!("{f} missing"))?;
        }
        Ok(format!("reports in {}", e.reports_dir().display()))
    })())
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() {
    // `cargo test -- --list` and filters from the harness CLI are not
    // meaningful here; listing prints nothing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failed = Vec::new();
    let mut report = |n: u32, name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
        Err(why) => {
            println!("FAIL criterion {n} ({name}): {why}");
            failed.push(n);
        }
    };
    report(1, "metric oracle equivalence", guarded(criterion_1));
    report(2, "blend algebra", guarded(criterion_2));
    report(3, "U-Net structure and gradient", guarded(criterion_3));
    report(4, "reconstruction learns", guarded(criterion_4));
    let run = catch_unwind(full_pipeline).unwrap_or_else(|_| Err("pipeline panicked".into()));
    report(5, "directional degradation ordering", guarded(|| criterion_5(&run)));
    report(6, "regime effect", guarded(|| criterion_6(&run)));
    report(7, "protocol determinism", guarded(criterion_7));
    report(8, "classifier sanity", guarded(criterion_8));
    match criterion_9().map(|o| guarded(|| o)) {
        None => println!("SKIP criterion 9 (full-scale path, not gating): FILTERBENCH_FULL_CONFIG not set"),
        Some(Ok(d)) => println!("PASS criterion 9 (full-scale path, not gating): {d}"),
        Some(Err(e)) => println!("FAIL criterion 9 (full-scale path, not gating): {e}"),
    }
    if !failed.is_empty() {
        println!("gating criteria failed: {failed:?}");
        std::process::exit(1);
    }
}
