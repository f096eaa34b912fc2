//! CSV/JSON report rendering. Every CSV starts with a `#` block carrying
//! the config hash, seeds and adapter versions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::protocol::{ClosedSetTable, CrossFilterMatrix, OpenSetResult, VariantEmbeddings, VerificationResults};
use super::variants::{REFERENCE_DETECTION_RATES, VARIANTS};
use crate::error::{Error, Result};
use crate::matchers::Metric;

/// Provenance printed at the top of every report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub config_hash: String,
    pub seeds: String,
    pub detector: String,
    pub backbone: String,
    pub reconstruction: String,
}

impl ReportHeader {
    pub fn render(&self) -> String {
        format!(
            "# config_hash: {}\n# seeds: {}\n# detector: {}\n# backbone: {}\n# reconstruction: {}\n",
            self.config_hash, self.seeds, self.detector, self.backbone, self.reconstruction
        )
    }
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

pub fn write_text(dir: &Path, name: &str, body: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(name);
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
}

pub fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    write_text(dir, name, &(serde_json::to_string_pretty(value).expect("json renders") + "\n"))
}

pub fn datasets_csv(h: &ReportHeader, variants: &[VariantEmbeddings]) -> String {
    let mut s = h.render();
    s.push_str("variant,total,accepted,rejected_none,rejected_multiple,not_in_variant,detection_rate,reference_rate\n");
    for v in variants {
        let reference = VARIANTS.iter().position(|n| *n == v.name).map(|i| REFERENCE_DETECTION_RATES[i]);
        let st = &v.stats;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            v.name,
            st.total,
            st.accepted,
            st.rejected_none,
            st.rejected_multiple,
            st.not_in_variant,
            num(st.rate()),
            opt(reference)
        ));
    }
    s
}

pub fn closed_set_csv(h: &ReportHeader, t: &ClosedSetTable) -> String {
    let mut s = h.render();
    if !t.unenrolled.is_empty() {
        s.push_str(&format!("# unenrolled: {}\n", t.unenrolled.join(" ")));
    }
    s.push_str(&format!("variant,{}\n", t.columns.join(",")));
    for (v, cells) in &t.rows {
        let vals: Vec<String> = cells.iter().map(|c| opt(c.gar)).collect();
        s.push_str(&format!("{v},{}\n", vals.join(",")));
    }
    s
}

/// Probe and training-row counts behind every closed-set cell.
pub fn closed_set_counts_csv(h: &ReportHeader, t: &ClosedSetTable) -> String {
    let mut s = h.render();
    s.push_str("variant,column,probes,train_rows\n");
    for (v, cells) in &t.rows {
        for (c, cell) in t.columns.iter().zip(cells) {
            s.push_str(&format!("{v},{c},{},{}\n", cell.probes, cell.train_rows));
        }
    }
    s
}

pub fn cross_filter_csv(h: &ReportHeader, m: &CrossFilterMatrix) -> String {
    let mut s = h.render();
    s.push_str(&format!("# classifier: {}\n", m.kind.id()));
    s.push_str(&format!("train\\test,{}\n", m.variants.join(",")));
    for (v, row) in m.variants.iter().zip(&m.values) {
        let vals: Vec<String> = row.iter().map(|x| opt(*x)).collect();
        s.push_str(&format!("{v},{}\n", vals.join(",")));
    }
    s
}

pub fn cross_filter_json(h: &ReportHeader, m: &CrossFilterMatrix) -> serde_json::Value {
    serde_json::json!({
        "header": h,
        "classifier": m.kind.id(),
        "variants": m.variants,
        "values": m.values,
        "gray": m.gray(),
    })
}

pub fn open_set_csv(h: &ReportHeader, r: &OpenSetResult) -> String {
    let mut s = h.render();
    s.push_str(&format!(
        "# held_out: {}\n# mated: {} nonmated: {} train_rows: {}\n# closed_set_gar: {} gar_at_loosest: {}\n",
        r.held_out.join(" "),
        r.mated,
        r.nonmated,
        r.train_rows,
        num(r.closed_set_gar),
        num(r.gar_at_loosest)
    ));
    s.push_str(&r.curve.to_csv());
    s
}

pub fn open_set_json(h: &ReportHeader, r: &OpenSetResult) -> serde_json::Value {
    serde_json::json!({
        "header": h,
        "held_out": r.held_out,
        "mated": r.mated,
        "nonmated": r.nonmated,
        "train_rows": r.train_rows,
        "closed_set_gar": r.closed_set_gar,
        "gar_at_loosest": r.gar_at_loosest,
        "curve": r.curve.to_json(),
    })
}

pub fn verification_csv(h: &ReportHeader, r: &VerificationResults) -> String {
    let mut s = h.render();
    if !r.unenrolled.is_empty() {
        s.push_str(&format!("# unenrolled: {}\n", r.unenrolled.join(" ")));
    }
    let metrics: Vec<&str> = Metric::ALL.iter().map(|m| m.id()).collect();
    s.push_str(&format!("variant,{},genuine,impostor\n", metrics.join(",")));
    for row in &r.rows {
        let vals: Vec<String> = row.eer.iter().map(|e| opt(e.map(|e| e.eer))).collect();
        s.push_str(&format!("{},{},{},{}\n", row.variant, vals.join(","), row.genuine, row.impostor));
    }
    let avg: Vec<String> = r.average.iter().map(|v| num(*v)).collect();
    s.push_str(&format!("average,{},,\n", avg.join(",")));
    s
}

/// DET curves of one metric, keyed by variant; variants without a curve
/// are omitted.
pub fn det_json(h: &ReportHeader, r: &VerificationResults, metric: Metric) -> serde_json::Value {
    let m = Metric::ALL.iter().position(|x| *x == metric).expect("metric listed");
    let curves: serde_json::Map<String, serde_json::Value> = r
        .rows
        .iter()
        .zip(&r.curves[m])
        .filter_map(|(row, c)| {
            let (c, e) = (c.as_ref()?, row.eer[m]?);
            let mut v = c.to_json();
            v["eer"] = serde_json::json!(e.eer);
            v["eer_threshold"] = serde_json::json!(e.threshold);
            v["no_crossing"] = serde_json::json!(e.no_crossing);
            Some((row.variant.clone(), v))
        })
        .collect();
    serde_json::json!({ "header": h, "metric": metric.id(), "curves": curves })
}

/// `image_id,identity,x,y,color`; `color` names the identity for the five
/// most frequent classes and is empty otherwise.
pub fn tsne_csv(h: &ReportHeader, rows: &[(String, String)], coords: &[[f64; 2]], colored: &[String]) -> String {
    let mut s = h.render();
    s.push_str("image_id,identity,x,y,color\n");
    for ((id, who), p) in rows.iter().zip(coords) {
        let color = if colored.contains(who) { who.as_str() } else { "" };
        s.push_str(&format!("{id},{who},{},{},{color}\n", num(p[0]), num(p[1])));
    }
    s
}
