use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{auc, roc_curve, F1Objective, RocPoint, ScoredSet};
use super::{EvalError, Result};
use crate::network::Network;
use crate::training::{predict, Examples, Normalization};

/// Full-scale test AUCs published for the two studied findings. Reference
/// metadata only; not reproducible without the external dataset.
pub const REFERENCE_AUCS: [(&str, f64); 2] = [("Lung Lesion", 0.73), ("Cardiomegaly", 0.92)];

pub fn reference_auc(pathology: &str) -> Option<f64> {
    REFERENCE_AUCS.iter().find(|(p, _)| *p == pathology).map(|&(_, v)| v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub threshold: f64,
    pub f1_pos: f64,
    pub f1_neg: f64,
    pub f1_macro: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub pathology: String,
    pub objective: F1Objective,
    /// Published full-scale AUC for this pathology, when there is one.
    pub reference_auc: Option<f64>,
}

impl EvalReport {
    /// Binarizes `set` at `threshold` and summarizes it.
    pub fn from_scores(set: &ScoredSet, threshold: f64, pathology: &str, objective: F1Objective) -> Result<Self> {
        let curve = roc_curve(set)?;
        let c = set.confusion(threshold);
        let (n_pos, n_neg) = set.counts();
        Ok(EvalReport {
            auc: auc(&curve)?,
            threshold,
            f1_pos: c.f1_positive(),
            f1_neg: c.f1_negative(),
            f1_macro: c.f1_macro(),
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            n_pos,
            n_neg,
            pathology: pathology.to_string(),
            objective,
            reference_auc: reference_auc(pathology),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub curve: Vec<RocPoint>,
    pub scores: ScoredSet,
}

/// Scores `set` in eval mode and reports at `threshold`.
pub fn evaluate(
    network: &Network<f32>,
    set: &dyn Examples,
    normalization: &Normalization,
    threshold: f64,
    pathology: &str,
    objective: F1Objective,
    batch_size: usize,
) -> Result<EvalOutcome> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::Threshold(threshold));
    }
    if set.is_empty() {
        return Err(EvalError::Empty);
    }
    let raw = predict(network, set, normalization, batch_size)?;
    let labels = (0..set.len()).map(|i| set.positive(i)).collect();
    let scores = ScoredSet::new(raw.iter().map(|s| s.clamp(0.0, 1.0)).collect(), labels)?;
    let report = EvalReport::from_scores(&scores, threshold, pathology, objective)?;
    Ok(EvalOutcome { curve: roc_curve(&scores)?, report, scores })
}

/// `threshold,fpr,tpr`, one row per curve point.
pub fn write_roc_csv(curve: &[RocPoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "threshold,fpr,tpr")?;
    for p in curve {
        writeln!(w, "{:?},{:?},{:?}", p.threshold, p.fpr, p.tpr)?;
    }
    Ok(())
}

/// Static SVG of the curve on unit axes with the chance diagonal.
pub fn roc_svg(curve: &[RocPoint], title: &str, area: f64) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    let x = |v: f64| PAD + v * SIZE;
    let y = |v: f64| PAD + (1.0 - v) * SIZE;
    let total = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="white" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{v:.1}</text>"#,
            x(v),
            y(0.0) + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{v:.1}</text>"#,
            x(0.0) - 6.0,
            y(v) + 4.0
        );
    }
    let points: Vec<String> = curve.iter().map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr))).collect();
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, points.join(" "));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">False positive rate</text>"#,
        x(0.5),
        total - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {})">True positive rate</text>"#,
        y(0.5),
        y(0.5)
    );
    let title = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" font-size="14" text-anchor="middle">{title} (AUC {area:.3})</text>"#,
        x(0.5)
    );
    s.push_str("</svg>\n");
    s
}
