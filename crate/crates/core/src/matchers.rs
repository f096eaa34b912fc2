//! Distance matching and trained identity classifiers.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Manhattan,
    Cosine,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Euclidean, Metric::Manhattan, Metric::Cosine];

    pub fn id(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
            Metric::Cosine => "cosine",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.id() == id).ok_or_else(|| Error::Registry {
            kind: "metric",
            id: id.into(),
            valid: Metric::ALL.iter().map(|m| m.id().to_string()).collect(),
        })
    }
}

pub fn pairwise_distance(a: &[f32], b: &[f32], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("vectors have {} and {} dimensions", a.len(), b.len())));
    }
    let pairs = a.iter().zip(b).map(|(x, y)| (*x as f64, *y as f64));
    Ok(match metric {
        Metric::Euclidean => pairs.map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::Manhattan => pairs.map(|(x, y)| (x - y).abs()).sum(),
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (x, y) in pairs {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na == 0.0 || nb == 0.0 {
                return Err(Error::contract("cosine distance of a zero vector"));
            }
            (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranked {
    /// Position in the gallery (enrolment order).
    pub index: usize,
    pub identity: String,
    pub distance: f64,
}

/// Gallery sorted by ascending distance, ties by enrolment index.
pub fn rank_gallery(probe: &[f32], gallery: &[(String, Vec<f32>)], metric: Metric) -> Result<Vec<Ranked>> {
    if gallery.is_empty() {
        return Err(Error::contract("empty gallery"));
    }
    let mut out = gallery
        .iter()
        .enumerate()
        .map(|(index, (identity, v))| {
            Ok(Ranked {
                index,
                identity: identity.clone(),
                distance: pairwise_distance(probe, v, metric)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    OneVsAllMargin,
    BoostedSoftmax,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 2] = [ClassifierKind::OneVsAllMargin, ClassifierKind::BoostedSoftmax];

    pub fn id(self) -> &'static str {
        match self {
            ClassifierKind::OneVsAllMargin => "one_vs_all_margin",
            ClassifierKind::BoostedSoftmax => "boosted_softmax",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        ClassifierKind::ALL.into_iter().find(|k| k.id() == id).ok_or_else(|| Error::Registry {
            kind: "classifier",
            id: id.into(),
            valid: ClassifierKind::ALL.iter().map(|k| k.id().to_string()).collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmHyper {
    pub c: f64,
    pub max_epochs: usize,
    pub tol: f64,
}

impl Default for SvmHyper {
    fn default() -> Self {
        SvmHyper {
            c: 1.0,
            max_epochs: 1000,
            tol: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostHyper {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    pub bins: usize,
    /// Row fraction sampled per round.
    pub subsample: f64,
}

impl Default for BoostHyper {
    fn default() -> Self {
        BoostHyper {
            rounds: 200,
            max_depth: 4,
            learning_rate: 0.1,
            lambda: 1.0,
            min_child_weight: 0.01,
            bins: 32,
            subsample: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierHyper {
    pub svm: SvmHyper,
    pub boost: BoostHyper,
}

/// Linear model `w . x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn margin(&self, x: &[f32]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * *x as f64).sum::<f64>() + self.b
    }
}

/// L1-loss linear SVM by dual coordinate descent; the bias is an extra
/// feature fixed at 1 and is regularised with the weights.
pub fn train_linear_svm(xs: &[Vec<f32>], ys: &[f64], hyper: &SvmHyper, rng: &mut impl Rng) -> LinearModel {
    let n = xs.len();
    let d = xs.first().map_or(0, Vec::len);
    let mut w = vec![0.0; d + 1];
    let mut alpha = vec![0.0; n];
    let qii: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..hyper.max_epochs {
        order.shuffle(rng);
        let (mut max_pg, mut min_pg) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let x = &xs[i];
            let wx = w[..d].iter().zip(x).map(|(w, x)| w * *x as f64).sum::<f64>() + w[d];
            let g = ys[i] * wx - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == hyper.c {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg);
            min_pg = min_pg.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, hyper.c);
                let delta = (alpha[i] - old) * ys[i];
                for (wj, xj) in w[..d].iter_mut().zip(x) {
                    *wj += delta * *xj as f64;
                }
                w[d] += delta;
            }
        }
        if max_pg - min_pg < hyper.tol {
            break;
        }
    }
    let b = w.pop().unwrap_or(0.0);
    LinearModel { w, b }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f32]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf(v) => return *v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

/// Softmax gradient-boosted trees: one tree per class per round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub learning_rate: f64,
    /// `rounds x classes`
    pub trees: Vec<Vec<Tree>>,
}

impl BoostedEnsemble {
    pub fn raw_scores(&self, x: &[f32], classes: usize) -> Vec<f64> {
        let mut f = vec![0.0; classes];
        for round in &self.trees {
            for (k, t) in round.iter().enumerate() {
                f[k] += self.learning_rate * t.predict(x);
            }
        }
        f
    }
}

pub fn softmax(f: &[f64]) -> Vec<f64> {
    let m = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = f.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-feature quantile cut points and the binned training matrix.
struct Binned {
    cuts: Vec<Vec<f32>>,
    /// `n x d`, bin index per value
    bins: Vec<u8>,
    d: usize,
}

fn bin_features(xs: &[Vec<f32>], max_bins: usize) -> Binned {
    let n = xs.len();
    let d = xs[0].len();
    let max_bins = max_bins.clamp(2, 256);
    let mut cuts = Vec::with_capacity(d);
    for j in 0..d {
        let mut col: Vec<f32> = xs.iter().map(|x| x[j]).collect();
        col.sort_by(|a, b| a.total_cmp(b));
        col.dedup();
        let c: Vec<f32> = if col.len() <= max_bins {
            col[..col.len().saturating_sub(1)].to_vec()
        } else {
            let mut c: Vec<f32> = (1..max_bins).map(|q| col[q * col.len() / max_bins - 1]).collect();
            c.dedup();
            c
        };
        cuts.push(c);
    }
    let mut bins = vec![0u8; n * d];
    for (i, x) in xs.iter().enumerate() {
        for j in 0..d {
            bins[i * d + j] = cuts[j].partition_point(|c| *c < x[j]) as u8;
        }
    }
    Binned { cuts, bins, d }
}

fn grow_tree(binned: &Binned, rows: &[usize], g: &[f64], h: &[f64], hyper: &BoostHyper) -> Tree {
    let mut nodes = Vec::new();
    grow_node(binned, rows.to_vec(), g, h, hyper, 0, &mut nodes);
    Tree { nodes }
}

fn grow_node(
    binned: &Binned,
    rows: Vec<usize>,
    g: &[f64],
    h: &[f64],
    hyper: &BoostHyper,
    depth: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let id = nodes.len();
    let gs: f64 = rows.iter().map(|&i| g[i]).sum();
    let hs: f64 = rows.iter().map(|&i| h[i]).sum();
    nodes.push(TreeNode::Leaf(-gs / (hs + hyper.lambda)));
    if depth >= hyper.max_depth || rows.len() < 2 {
        return id;
    }
    let d = binned.d;
    let parent = gs * gs / (hs + hyper.lambda);
    let mut best: Option<(f64, usize, usize)> = None;
    let mut hist_g = vec![0.0; 256];
    let mut hist_h = vec![0.0; 256];
    for j in 0..d {
        let nb = binned.cuts[j].len() + 1;
        if nb < 2 {
            continue;
        }
        hist_g[..nb].fill(0.0);
        hist_h[..nb].fill(0.0);
        for &i in &rows {
            let b = binned.bins[i * d + j] as usize;
            hist_g[b] += g[i];
            hist_h[b] += h[i];
        }
        let (mut gl, mut hl) = (0.0, 0.0);
        for b in 0..nb - 1 {
            gl += hist_g[b];
            hl += hist_h[b];
            let (gr, hr) = (gs - gl, hs - hl);
            if hl < hyper.min_child_weight || hr < hyper.min_child_weight {
                continue;
            }
            let gain = 0.5 * (gl * gl / (hl + hyper.lambda) + gr * gr / (hr + hyper.lambda) - parent);
            if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                best = Some((gain, j, b));
            }
        }
    }
    let Some((_, feature, bin)) = best else { return id };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&i| binned.bins[i * d + feature] as usize <= bin);
    let left = grow_node(binned, left_rows, g, h, hyper, depth + 1, nodes);
    let right = grow_node(binned, right_rows, g, h, hyper, depth + 1, nodes);
    nodes[id] = TreeNode::Split {
        feature,
        threshold: binned.cuts[feature][bin],
        left,
        right,
    };
    id
}

pub fn train_boosted(xs: &[Vec<f32>], labels: &[usize], classes: usize, hyper: &BoostHyper, rng: &mut impl Rng) -> BoostedEnsemble {
    let n = xs.len();
    let binned = bin_features(xs, hyper.bins);
    let mut f = vec![0.0; n * classes];
    let mut trees = Vec::with_capacity(hyper.rounds);
    let mut g = vec![vec![0.0; n]; classes];
    let mut h = vec![vec![0.0; n]; classes];
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..hyper.rounds {
        for i in 0..n {
            let p = softmax(&f[i * classes..(i + 1) * classes]);
            for k in 0..classes {
                let y = if labels[i] == k { 1.0 } else { 0.0 };
                g[k][i] = p[k] - y;
                h[k][i] = (p[k] * (1.0 - p[k])).max(1e-16);
            }
        }
        let rows: Vec<usize> = if hyper.subsample < 1.0 {
            all.iter().copied().filter(|_| rng.random::<f64>() < hyper.subsample).collect()
        } else {
            all.clone()
        };
        let round: Vec<Tree> = (0..classes).map(|k| grow_tree(&binned, &rows, &g[k], &h[k], hyper)).collect();
        for (i, x) in xs.iter().enumerate() {
            for (k, t) in round.iter().enumerate() {
                f[i * classes + k] += hyper.learning_rate * t.predict(x);
            }
        }
        trees.push(round);
    }
    BoostedEnsemble {
        learning_rate: hyper.learning_rate,
        trees,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClassifierModel {
    OneVsAll(Vec<LinearModel>),
    Boosted(BoostedEnsemble),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub kind: ClassifierKind,
    /// Sorted; class index `k` is `labels[k]`.
    pub labels: Vec<String>,
    pub dim: usize,
    pub hyper: ClassifierHyper,
    pub seed: u64,
    pub trained_on: String,
    pub model: ClassifierModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub class: usize,
    pub identity: String,
    pub confidence: f64,
}

pub fn train_classifier(
    features: &[Vec<f32>],
    labels: &[String],
    kind: ClassifierKind,
    hyper: &ClassifierHyper,
    seed: u64,
    trained_on: &str,
) -> Result<Classifier> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::contract(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::contract("feature rows differ in dimension"));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::contract("a classifier needs at least two classes"));
    }
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).expect("label present")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = match kind {
        ClassifierKind::OneVsAllMargin => ClassifierModel::OneVsAll(
            (0..classes.len())
                .map(|k| {
                    let ys: Vec<f64> = y.iter().map(|&c| if c == k { 1.0 } else { -1.0 }).collect();
                    train_linear_svm(features, &ys, &hyper.svm, &mut rng)
                })
                .collect(),
        ),
        ClassifierKind::BoostedSoftmax => {
            ClassifierModel::Boosted(train_boosted(features, &y, classes.len(), &hyper.boost, &mut rng))
        }
    };
    Ok(Classifier {
        kind,
        labels: classes,
        dim,
        hyper: *hyper,
        seed,
        trained_on: trained_on.into(),
        model,
    })
}

impl Classifier {
    /// Per-class margins (one-vs-all) or softmax probabilities (boosted).
    pub fn scores(&self, probe: &[f32]) -> Result<Vec<f64>> {
        if probe.len() != self.dim {
            return Err(Error::contract(format!("probe has {} dimensions, classifier expects {}", probe.len(), self.dim)));
        }
        Ok(match &self.model {
            ClassifierModel::OneVsAll(ms) => ms.iter().map(|m| m.margin(probe)).collect(),
            ClassifierModel::Boosted(e) => softmax(&e.raw_scores(probe, self.labels.len())),
        })
    }

    pub fn classify(&self, probe: &[f32]) -> Result<Decision> {
        let scores = self.scores(probe)?;
        let class = argmax(&scores);
        Ok(Decision {
            class,
            identity: self.labels[class].clone(),
            confidence: scores[class],
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).expect("classifier serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format("classifier checkpoint", e.to_string()))
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_worked_examples() {
        assert_eq!(pairwise_distance(&[0.0, 0.0], &[3.0, 4.0], Metric::Euclidean).unwrap(), 5.0);
        assert_eq!(pairwise_distance(&[0.0, 0.0], &[3.0, 4.0], Metric::Manhattan).unwrap(), 7.0);
        assert_eq!(pairwise_distance(&[1.0, 0.0], &[0.0, 1.0], Metric::Cosine).unwrap(), 1.0);
        assert!(pairwise_distance(&[0.0, 0.0], &[0.0, 1.0], Metric::Cosine).is_err());
        assert!(pairwise_distance(&[0.0], &[0.0, 1.0], Metric::Euclidean).is_err());
    }

    #[test]
    fn gallery_exact_match_and_ties() {
        let g = vec![
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.0, 1.0]),
            ("c".to_string(), vec![0.5, 0.5]),
        ];
        let r = rank_gallery(&[0.0, 1.0], &g, Metric::Euclidean).unwrap();
        assert_eq!((r[0].identity.as_str(), r[0].distance), ("b", 0.0));
        let tie = rank_gallery(&[0.5, 0.5], &g[..2], Metric::Euclidean).unwrap();
        assert_eq!(tie[0].identity, "a");
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![vec![0.0], vec![1.0]];
        let ls = vec!["a".to_string(), "a".to_string()];
        for kind in ClassifierKind::ALL {
            assert!(train_classifier(&xs, &ls, kind, &ClassifierHyper::default(), 0, "t").is_err());
        }
    }
}
