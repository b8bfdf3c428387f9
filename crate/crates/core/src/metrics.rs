//! Per-class precision, recall and F1, and the support-weighted F1.
//!
//! Zero denominators follow one convention throughout: precision is 0 when
//! nothing was predicted for the class, recall is 0 when the class has no
//! gold examples, and F1 is 0 when precision and recall are both 0. Every
//! such cell is flagged in the report.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::taxonomy::Category;

/// Raw counts per category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionTally {
    /// Predicted as the class.
    pub labeled: [u64; Category::COUNT],
    /// Gold label is the class.
    pub truth: [u64; Category::COUNT],
    /// Predicted as the class and gold label is the class.
    pub correct: [u64; Category::COUNT],
    pub total: u64,
}

impl ConfusionTally {
    pub fn labeled(&self, c: Category) -> u64 {
        self.labeled[c.ordinal()]
    }

    pub fn truth(&self, c: Category) -> u64 {
        self.truth[c.ordinal()]
    }

    pub fn correct(&self, c: Category) -> u64 {
        self.correct[c.ordinal()]
    }
}

pub fn tally(preds: &[Category], golds: &[Category]) -> Result<ConfusionTally, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut t = ConfusionTally::default();
    for (&p, &g) in preds.iter().zip(golds) {
        t.labeled[p.ordinal()] += 1;
        t.truth[g.ordinal()] += 1;
        if p == g {
            t.correct[p.ordinal()] += 1;
        }
    }
    t.total = preds.len() as u64;
    Ok(t)
}

/// Which zero-denominator conventions were applied to a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub no_predictions: bool,
    pub no_gold: bool,
    pub zero_f1_denominator: bool,
}

impl DegenerateFlags {
    pub fn any(&self) -> bool {
        self.no_predictions || self.no_gold || self.zero_f1_denominator
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub category: Category,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    #[serde(default)]
    pub flags: DegenerateFlags,
}

pub fn per_class_prf(t: &ConfusionTally) -> Vec<ClassReport> {
    Category::ALL
        .iter()
        .map(|&c| {
            let (correct, labeled, truth) = (t.correct(c), t.labeled(c), t.truth(c));
            let mut flags = DegenerateFlags::default();
            let precision = if labeled == 0 {
                flags.no_predictions = true;
                0.0
            } else {
                correct as f64 / labeled as f64
            };
            let recall = if truth == 0 {
                flags.no_gold = true;
                0.0
            } else {
                correct as f64 / truth as f64
            };
            let f1 = if precision + recall == 0.0 {
                flags.zero_f1_denominator = true;
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassReport {
                category: c,
                precision,
                recall,
                f1,
                support: truth,
                flags,
            }
        })
        .collect()
}

/// Support-weighted mean of per-class F1. Classes without support carry
/// zero weight. Returns 0 when no class has support.
pub fn weighted_f1(classes: &[ClassReport]) -> f64 {
    let total: u64 = classes.iter().map(|c| c.support).sum();
    if total == 0 {
        return 0.0;
    }
    let weighted: f64 = classes.iter().map(|c| c.support as f64 * c.f1).sum();
    weighted / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    pub weighted_f1: f64,
    pub total: u64,
    pub tally: ConfusionTally,
}

impl EvalReport {
    pub fn from_tally(tally: ConfusionTally) -> EvalReport {
        let classes = per_class_prf(&tally);
        EvalReport {
            weighted_f1: weighted_f1(&classes),
            total: tally.total,
            classes,
            tally,
        }
    }

    pub fn class(&self, c: Category) -> &ClassReport {
        &self.classes[c.ordinal()]
    }

    /// Weighted F1 as a percentage with two decimals, e.g. "93.60%".
    pub fn headline(&self) -> String {
        format!("{:.2}%", self.weighted_f1 * 100.0)
    }

    /// CSV with one row per category and a trailing `weighted` row whose
    /// `f1` is the weighted F1 and whose `support` is the total.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category", "precision", "recall", "f1", "support"])
            .expect("in-memory write");
        for c in &self.classes {
            w.write_record([
                c.category.as_str().to_string(),
                format!("{:.6}", c.precision),
                format!("{:.6}", c.recall),
                format!("{:.6}", c.f1),
                c.support.to_string(),
            ])
            .expect("in-memory write");
        }
        w.write_record([
            "weighted".to_string(),
            String::new(),
            String::new(),
            format!("{:.6}", self.weighted_f1),
            self.total.to_string(),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn write(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(self).expect("report serializes") + "\n",
        )?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv())
    }
}

/// Tally, per-class scores and weighted F1 in one step.
pub fn evaluate(preds: &[Category], golds: &[Category]) -> Result<EvalReport, MetricsError> {
    Ok(EvalReport::from_tally(tally(preds, golds)?))
}
