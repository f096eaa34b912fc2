//! Identification and verification error rates, DET curves and EER.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Confidences: a score passes `t` when `score >= t`.
    HigherIsBetter,
    /// Distances: a score passes `t` when `score <= t`.
    LowerIsBetter,
}

impl Polarity {
    pub fn passes(self, score: f64, t: f64) -> bool {
        match self {
            Polarity::HigherIsBetter => score >= t,
            Polarity::LowerIsBetter => score <= t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    /// Score of the enrolled mate and whether it was ranked first.
    pub mated: Vec<(f64, bool)>,
    /// Best score of each non-mated search.
    pub nonmated: Vec<f64>,
    pub polarity: Polarity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetAxes {
    FpirFnir,
    FarFrr,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    /// FPIR or FAR.
    pub x: f64,
    /// FNIR or FRR.
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub axes: DetAxes,
    pub polarity: Polarity,
    /// In ascending threshold order.
    pub points: Vec<DetPoint>,
    pub monotone: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedSet {
    pub fnir: f64,
    pub gar: f64,
}

pub fn closed_set_accuracy(rank1_correct: &[bool]) -> Result<ClosedSet> {
    if rank1_correct.is_empty() {
        return Err(Error::contract("closed-set accuracy of zero searches"));
    }
    let wrong = rank1_correct.iter().filter(|c| !**c).count();
    let fnir = wrong as f64 / rank1_correct.len() as f64;
    Ok(ClosedSet { fnir, gar: 1.0 - fnir })
}

/// Every distinct score in ascending order, bracketed by -inf and +inf.
pub fn threshold_grid(scores: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = scores.into_iter().filter(|s| s.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut out = Vec::with_capacity(v.len() + 2);
    out.push(f64::NEG_INFINITY);
    out.extend(v);
    out.push(f64::INFINITY);
    out
}

fn check_sorted(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::contract("empty threshold list"));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1] || w[0].is_nan() || w[1].is_nan()) {
        return Err(Error::contract("thresholds must be sorted ascending"));
    }
    Ok(())
}

fn frac(n: usize, d: usize) -> f64 {
    n as f64 / d as f64
}

fn is_monotone(points: &[DetPoint], polarity: Polarity) -> bool {
    points.windows(2).all(|w| match polarity {
        Polarity::LowerIsBetter => w[1].x >= w[0].x && w[1].y <= w[0].y,
        Polarity::HigherIsBetter => w[1].x <= w[0].x && w[1].y >= w[0].y,
    })
}

/// FPIR and open-set FNIR at every threshold.
pub fn open_set_sweep(scores: &ScoreSet, thresholds: &[f64]) -> Result<DetCurve> {
    if scores.mated.is_empty() || scores.nonmated.is_empty() {
        return Err(Error::contract("open-set sweep needs mated and non-mated searches"));
    }
    check_sorted(thresholds)?;
    let pol = scores.polarity;
    let points: Vec<DetPoint> = thresholds
        .iter()
        .map(|&t| {
            let fp = scores.nonmated.iter().filter(|s| pol.passes(**s, t)).count();
            let fneg = scores.mated.iter().filter(|(s, ok)| !ok || !pol.passes(*s, t)).count();
            DetPoint {
                threshold: t,
                x: frac(fp, scores.nonmated.len()),
                y: frac(fneg, scores.mated.len()),
            }
        })
        .collect();
    Ok(DetCurve {
        axes: DetAxes::FpirFnir,
        polarity: pol,
        monotone: is_monotone(&points, pol),
        points,
    })
}

/// FAR (impostors passing) and FRR (genuines failing) at every threshold.
pub fn verification_sweep(genuine: &[f64], impostor: &[f64], thresholds: &[f64], polarity: Polarity) -> Result<DetCurve> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::contract("verification sweep needs genuine and impostor scores"));
    }
    check_sorted(thresholds)?;
    let points: Vec<DetPoint> = thresholds
        .iter()
        .map(|&t| DetPoint {
            threshold: t,
            x: frac(impostor.iter().filter(|s| polarity.passes(**s, t)).count(), impostor.len()),
            y: frac(genuine.iter().filter(|s| !polarity.passes(**s, t)).count(), genuine.len()),
        })
        .collect();
    Ok(DetCurve {
        axes: DetAxes::FarFrr,
        polarity,
        monotone: is_monotone(&points, polarity),
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
    pub no_crossing: bool,
}

/// Where `x - y` changes sign, linearly interpolated; an exact zero wins.
pub fn compute_eer(curve: &DetCurve) -> Result<Eer> {
    let pts = &curve.points;
    if pts.len() < 2 {
        return Err(Error::contract("EER needs at least two curve points"));
    }
    let diff: Vec<f64> = pts.iter().map(|p| p.x - p.y).collect();
    if let Some(i) = diff.iter().position(|d| *d == 0.0) {
        return Ok(Eer {
            eer: pts[i].x,
            threshold: pts[i].threshold,
            no_crossing: false,
        });
    }
    for i in 0..pts.len() - 1 {
        let (d0, d1) = (diff[i], diff[i + 1]);
        if (d0 < 0.0) != (d1 < 0.0) {
            let f = d0 / (d0 - d1);
            let (a, b) = (pts[i], pts[i + 1]);
            let threshold = match (a.threshold.is_finite(), b.threshold.is_finite()) {
                (true, true) => a.threshold + f * (b.threshold - a.threshold),
                (true, false) => a.threshold,
                (false, _) => b.threshold,
            };
            return Ok(Eer {
                eer: a.x + f * (b.x - a.x),
                threshold,
                no_crossing: false,
            });
        }
    }
    let i = (0..pts.len())
        .min_by(|&a, &b| diff[a].abs().total_cmp(&diff[b].abs()))
        .expect("non-empty");
    Ok(Eer {
        eer: (pts[i].x + pts[i].y) / 2.0,
        threshold: pts[i].threshold,
        no_crossing: true,
    })
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t:.6}")
    }
}

impl DetCurve {
    /// `threshold,far,frr,gar` (or `fpir,fnir`) rows.
    pub fn to_csv(&self) -> String {
        let (x, y) = match self.axes {
            DetAxes::FpirFnir => ("fpir", "fnir"),
            DetAxes::FarFrr => ("far", "frr"),
        };
        let mut s = format!("threshold,{x},{y},gar\n");
        for p in &self.points {
            s.push_str(&format!("{},{:.6},{:.6},{:.6}\n", fmt_threshold(p.threshold), p.x, p.y, 1.0 - p.y));
        }
        s
    }

    /// Plot-ready arrays; infinite thresholds become strings.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "axes": self.axes,
            "polarity": self.polarity,
            "monotone": self.monotone,
            "threshold": self.points.iter().map(|p| fmt_threshold(p.threshold)).collect::<Vec<_>>(),
            "x": self.points.iter().map(|p| p.x).collect::<Vec<_>>(),
            "y": self.points.iter().map(|p| p.y).collect::<Vec<_>>(),
            "gar": self.points.iter().map(|p| 1.0 - p.y).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_set_counts() {
        assert_eq!(closed_set_accuracy(&[true; 3]).unwrap().gar, 1.0);
        assert_eq!(closed_set_accuracy(&[true, false, false, true]).unwrap().fnir, 0.5);
        assert!(closed_set_accuracy(&[]).is_err());
    }

    #[test]
    fn worked_verification_example() {
        let (g, i) = ([0.1, 0.2, 0.4], [0.3, 0.5, 0.6]);
        let grid = threshold_grid(g.iter().chain(&i).copied());
        let c = verification_sweep(&g, &i, &grid, Polarity::LowerIsBetter).unwrap();
        let at = c.points.iter().find(|p| p.threshold == 0.3).unwrap();
        assert!((at.x - 1.0 / 3.0).abs() < 1e-15 && (at.y - 1.0 / 3.0).abs() < 1e-15);
        let e = compute_eer(&c).unwrap();
        assert!((e.eer - 1.0 / 3.0).abs() < 1e-12 && !e.no_crossing);
        assert!(c.monotone);
    }

    #[test]
    fn separated_and_identical_sets() {
        let grid = threshold_grid([0.1, 0.2, 0.8, 0.9]);
        let sep = verification_sweep(&[0.1, 0.2], &[0.8, 0.9], &grid, Polarity::LowerIsBetter).unwrap();
        assert_eq!(compute_eer(&sep).unwrap().eer, 0.0);
        let grid = threshold_grid([0.1, 0.2]);
        let same = verification_sweep(&[0.1, 0.2], &[0.1, 0.2], &grid, Polarity::LowerIsBetter).unwrap();
        assert_eq!(compute_eer(&same).unwrap().eer, 0.5);
    }

    #[test]
    fn open_set_endpoints() {
        let s = ScoreSet {
            mated: vec![(0.9, true), (0.8, true), (0.4, false)],
            nonmated: vec![0.7, 0.3],
            polarity: Polarity::HigherIsBetter,
        };
        let c = open_set_sweep(&s, &threshold_grid([0.3, 0.4, 0.7, 0.8, 0.9])).unwrap();
        let last = c.points.last().unwrap();
        assert_eq!((last.x, last.y), (0.0, 1.0));
        let first = c.points[0];
        assert_eq!(first.x, 1.0);
        assert!((first.y - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unsorted_thresholds_rejected() {
        assert!(verification_sweep(&[0.1], &[0.2], &[0.5, 0.1], Polarity::LowerIsBetter).is_err());
    }

    #[test]
    fn csv_has_infinite_sentinels() {
        let c = verification_sweep(&[0.1], &[0.2], &threshold_grid([0.1, 0.2]), Polarity::LowerIsBetter).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("threshold,far,frr,gar\n-inf,0.000000,1.000000,0.000000\n"));
        assert!(csv.trim_end().ends_with("inf,1.000000,0.000000,1.000000"));
    }
}
