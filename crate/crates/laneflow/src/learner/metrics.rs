//! Classification metrics: accuracy, per-class precision/recall/F1, macro
//! F1, confusion matrices and the sequential batch evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streamproc::FeatureVector;

use super::CongestionLabel;

const K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Full evaluation of one prediction set. Confusion rows are truth, columns
/// are predictions, both in Low/Medium/High order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: [ClassReport; K],
    pub confusion: [[u64; K]; K],
    pub total: u64,
}

/// Ratio with the zero-denominator convention fixed at 0.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Builds an [`EvalReport`] from a confusion matrix alone; every emitted
/// number is re-derivable from the matrix.
pub fn report_from_confusion(confusion: [[u64; K]; K]) -> EvalReport {
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..K).map(|i| confusion[i][i]).sum();
    let per_class = std::array::from_fn(|c| {
        let row: u64 = confusion[c].iter().sum();
        let col: u64 = (0..K).map(|t| confusion[t][c]).sum();
        let p = ratio(confusion[c][c], col);
        let r = ratio(confusion[c][c], row);
        ClassReport {
            precision: p,
            recall: r,
            f1: f1(p, r),
            support: row,
        }
    });
    let macro_f1 = per_class.iter().map(|c: &ClassReport| c.f1).sum::<f64>() / K as f64;
    EvalReport {
        accuracy: ratio(trace, total),
        macro_f1,
        per_class,
        confusion,
        total,
    }
}

/// Scores predictions against truth. Lengths must match and be nonzero.
pub fn evaluate(pred: &[CongestionLabel], truth: &[CongestionLabel]) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData { need: 1, got: 0 });
    }
    let mut confusion = [[0u64; K]; K];
    for (p, t) in pred.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    Ok(report_from_confusion(confusion))
}

/// Human-readable report block.
pub fn report_text(report: &EvalReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "accuracy: {:.4}", report.accuracy);
    let _ = writeln!(out, "macro F1: {:.4}", report.macro_f1);
    let _ = writeln!(out, "{:<8} {:>9} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1", "support");
    for (c, r) in CongestionLabel::ALL.iter().zip(&report.per_class) {
        let _ = writeln!(
            out,
            "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>9}",
            c.name(),
            r.precision,
            r.recall,
            r.f1,
            r.support
        );
    }
    let _ = writeln!(out, "confusion (rows = truth, columns = predicted):");
    let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8}", "", "Low", "Medium", "High");
    for (c, row) in CongestionLabel::ALL.iter().zip(&report.confusion) {
        let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8}", c.name(), row[0], row[1], row[2]);
    }
    out
}

/// CSV export: a per-class block, a blank line, then the confusion block.
pub fn report_csv(report: &EvalReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "class,precision,recall,f1,support");
    for (c, r) in CongestionLabel::ALL.iter().zip(&report.per_class) {
        let _ = writeln!(out, "{},{},{},{},{}", c.name(), r.precision, r.recall, r.f1, r.support);
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "confusion,pred_Low,pred_Medium,pred_High");
    for (c, row) in CongestionLabel::ALL.iter().zip(&report.confusion) {
        let _ = writeln!(out, "true_{},{},{},{}", c.name(), row[0], row[1], row[2]);
    }
    out
}

/// Outcome of evaluating a model over an ordered series of batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSeries {
    /// Per-batch report in input order; `None` marks an empty batch,
    /// recorded as skipped rather than zeroed.
    pub reports: Vec<Option<EvalReport>>,
    /// Element-wise sum of the per-batch confusion matrices.
    pub combined_confusion: [[u64; K]; K],
}

impl BatchSeries {
    pub fn combined_total(&self) -> u64 {
        self.combined_confusion.iter().flatten().sum()
    }
}

/// Evaluates `predict` over each (features, truth) batch in order.
pub fn sequential_batch_eval<P>(
    batches: &[(Vec<FeatureVector>, Vec<CongestionLabel>)],
    predict: P,
) -> Result<BatchSeries>
where
    P: Fn(&FeatureVector) -> CongestionLabel,
{
    let mut reports = Vec::with_capacity(batches.len());
    let mut combined = [[0u64; K]; K];
    for (features, truth) in batches {
        if features.is_empty() {
            reports.push(None);
            continue;
        }
        let pred: Vec<CongestionLabel> = features.iter().map(&predict).collect();
        let report = evaluate(&pred, truth)?;
        for (acc, row) in combined.iter_mut().zip(&report.confusion) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        reports.push(Some(report));
    }
    Ok(BatchSeries {
        reports,
        combined_confusion: combined,
    })
}
