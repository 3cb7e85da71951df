//! Classification metrics: confusion matrix, precision/recall/F1, ROC
//! curves and trapezoidal AUC.
//!
//! Precision or recall with an empty denominator is reported as 0.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidInput(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= classes || p >= classes {
            return Err(Error::InvalidInput(format!(
                "label pair ({t}, {p}) out of range for {classes} classes"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn prf1(cm: &ConfusionMatrix) -> ClassScores {
    let c = cm.classes();
    let mut precision = Vec::with_capacity(c);
    let mut recall = Vec::with_capacity(c);
    let mut f1 = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.counts[k][k];
        let predicted: u64 = (0..c).map(|t| cm.counts[t][k]).sum();
        let actual: u64 = cm.counts[k].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    ClassScores {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Sweeps the decision threshold over the distinct scores, highest first.
/// Samples with equal scores cross the threshold together, so the curve
/// runs from (0,0) to (1,1) with one vertex per distinct score.
pub fn roc_points(scores: &[f64], positives: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != positives.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores but {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {bad}")));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedRoc(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a curve given in sweep order.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// One-vs-rest curves and areas for every class. Classes that are absent
/// from (or make up all of) `labels` get `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct OvrRoc {
    pub curves: Vec<Option<Vec<RocPoint>>>,
    pub auc: Vec<Option<f64>>,
    /// Mean over the classes whose curve is defined.
    pub macro_auc: Option<f64>,
}

pub fn auc_ovr(proba: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<OvrRoc> {
    if proba.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} probability rows but {} labels",
            proba.len(),
            labels.len()
        )));
    }
    let mut curves = Vec::with_capacity(classes);
    let mut aucs = Vec::with_capacity(classes);
    for k in 0..classes {
        let scores: Vec<f64> = proba
            .iter()
            .map(|row| {
                row.get(k)
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("probability row lacks class {k}")))
            })
            .collect::<Result<_>>()?;
        let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        match roc_points(&scores, &pos) {
            Ok(pts) => {
                aucs.push(Some(auc(&pts)));
                curves.push(Some(pts));
            }
            Err(Error::UndefinedRoc(_)) => {
                aucs.push(None);
                curves.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = aucs.iter().flatten().copied().collect();
    let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(OvrRoc {
        curves,
        auc: aucs,
        macro_auc,
    })
}

/// Per-class line of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    /// Failure (last class) against the rest.
    pub failure_auc: Option<f64>,
    pub classes: Vec<ClassReport>,
    pub confusion: ConfusionMatrix,
    #[serde(skip)]
    pub roc: Vec<Option<Vec<RocPoint>>>,
    #[serde(skip)]
    pub failure_roc: Option<Vec<RocPoint>>,
}

impl EvalReport {
    /// Assembles a report from per-sample class probabilities. Hard
    /// predictions are the arg-max of each row.
    pub fn from_probabilities(labels: &[usize], proba: &[Vec<f64>], class_names: &[&str]) -> Result<Self> {
        let classes = class_names.len();
        let pred: Vec<usize> = proba.iter().map(|p| crate::model::argmax(p)).collect();
        let cm = confusion(labels, &pred, classes)?;
        let scores = prf1(&cm);
        let ovr = auc_ovr(proba, labels, classes)?;

        // the binary Failure-vs-rest view scores each sample by P(Failure)
        let failure = classes - 1;
        let failure_scores: Vec<f64> = proba.iter().map(|p| p[failure]).collect();
        let failure_pos: Vec<bool> = labels.iter().map(|&l| l == failure).collect();
        let failure_roc = match roc_points(&failure_scores, &failure_pos) {
            Ok(p) => Some(p),
            Err(Error::UndefinedRoc(_)) => None,
            Err(e) => return Err(e),
        };

        let class_reports = (0..classes)
            .map(|k| ClassReport {
                class: class_names[k].to_string(),
                support: cm.counts[k].iter().sum(),
                precision: scores.precision[k],
                recall: scores.recall[k],
                f1: scores.f1[k],
                auc: ovr.auc[k],
            })
            .collect();

        Ok(EvalReport {
            samples: labels.len(),
            accuracy: cm.accuracy(),
            macro_precision: scores.macro_precision,
            macro_recall: scores.macro_recall,
            macro_f1: scores.macro_f1,
            macro_auc: ovr.macro_auc,
            failure_auc: failure_roc.as_deref().map(auc),
            classes: class_reports,
            confusion: cm,
            roc: ovr.curves,
            failure_roc,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Multi-line human summary.
    pub fn summary(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let mut s = format!(
            "samples {}  accuracy {:.4}  macro-F1 {:.4}  macro AUC {}  failure AUC {}\n",
            self.samples,
            self.accuracy,
            self.macro_f1,
            fmt_opt(self.macro_auc),
            fmt_opt(self.failure_auc)
        );
        s.push_str(&format!(
            "{:<10} {:>8} {:>9} {:>8} {:>8} {:>8}\n",
            "class", "support", "precision", "recall", "f1", "auc"
        ));
        for c in &self.classes {
            s.push_str(&format!(
                "{:<10} {:>8} {:>9.4} {:>8.4} {:>8.4} {:>8}\n",
                c.class,
                c.support,
                c.precision,
                c.recall,
                c.f1,
                fmt_opt(c.auc)
            ));
        }
        s.push_str("confusion (rows = true, cols = predicted)\n");
        for (c, row) in self.classes.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            s.push_str(&format!("{:<10} {}\n", c.class, cells.join(" ")));
        }
        s
    }
}

/// Writes `fpr,tpr` rows in sweep order (non-decreasing fpr).
pub fn write_roc_csv<W: Write>(points: &[RocPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "fpr,tpr")?;
    for p in points {
        writeln!(w, "{},{}", p.fpr, p.tpr)?;
    }
    w.flush()
}
