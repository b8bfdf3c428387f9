//! Filtering clauses before automated rule interpretation.
//!
//! Clauses predicted as general, term or other are dropped. The experiment
//! runs an interpreter over the full set and over the kept set and compares
//! the success percentages.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::ClassifierModel;
use crate::corpus::Clause;
use crate::error::FilterError;
use crate::taxonomy::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    #[serde(alias = "correct")]
    Success,
    #[serde(alias = "incorrect")]
    Failure,
}

/// A downstream rule interpreter.
///
/// An `Err` is counted as a failed interpretation, never propagated.
pub trait InterpreterPort: Sync {
    fn interpret(&self, clause: &Clause) -> Result<Outcome, String>;

    /// Whether `interpret` may be called concurrently for different clauses.
    fn parallel_safe(&self) -> bool {
        false
    }
}

/// Interpreter driven by a per-clause outcome table.
#[derive(Debug, Clone, Default)]
pub struct MockInterpreter {
    table: HashMap<String, Outcome>,
    /// Outcome for clauses missing from the table.
    pub default: Option<Outcome>,
}

#[derive(Deserialize)]
struct ScriptLine {
    clause_id: String,
    outcome: Outcome,
}

impl MockInterpreter {
    pub fn new(table: HashMap<String, Outcome>) -> MockInterpreter {
        MockInterpreter {
            table,
            default: Some(Outcome::Failure),
        }
    }

    /// Reads a JSONL script of `{"clause_id": ..., "outcome": "success"|"failure"}`;
    /// `correct` and `incorrect` are read as synonyms.
    pub fn from_jsonl(path: &Path) -> Result<MockInterpreter, FilterError> {
        let text = fs::read_to_string(path).map_err(|source| FilterError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptLine = serde_json::from_str(line).map_err(|e| FilterError::Script {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if table.insert(entry.clause_id.clone(), entry.outcome).is_some() {
                return Err(FilterError::Script {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("duplicate clause id {}", entry.clause_id),
                });
            }
        }
        Ok(MockInterpreter::new(table))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl InterpreterPort for MockInterpreter {
    fn interpret(&self, clause: &Clause) -> Result<Outcome, String> {
        self.table
            .get(&clause.clause_id)
            .copied()
            .or(self.default)
            .ok_or_else(|| format!("no scripted outcome for {}", clause.clause_id))
    }

    fn parallel_safe(&self) -> bool {
        true
    }
}

/// Keeps the clauses whose predicted category has a nonzero score.
pub fn filter_interpretable(
    clauses: &[Clause],
    predictions: &[Category],
) -> Result<Vec<Clause>, FilterError> {
    if clauses.len() != predictions.len() {
        return Err(FilterError::LengthMismatch {
            clauses: clauses.len(),
            predictions: predictions.len(),
        });
    }
    Ok(clauses
        .iter()
        .zip(predictions)
        .filter(|(_, p)| p.is_interpretable())
        .map(|(c, _)| c.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeptDropped {
    pub kept: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count_before: u64,
    pub success_count_before: u64,
    pub pct_before: f64,
    pub pct_before_rounded: u64,
    pub kept_count: u64,
    pub success_count_after: u64,
    pub pct_after: f64,
    pub pct_after_rounded: u64,
    pub per_category: BTreeMap<Category, KeptDropped>,
}

/// 100·num/den rounded half up to an integer.
pub fn rounded_pct(num: u64, den: u64) -> u64 {
    if den == 0 {
        return 0;
    }
    (200 * num + den) / (2 * den)
}

fn exact_pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl FilterReport {
    pub fn from_counts(
        input_count_before: u64,
        success_count_before: u64,
        kept_count: u64,
        success_count_after: u64,
        per_category: BTreeMap<Category, KeptDropped>,
    ) -> FilterReport {
        FilterReport {
            input_count_before,
            success_count_before,
            pct_before: exact_pct(success_count_before, input_count_before),
            pct_before_rounded: rounded_pct(success_count_before, input_count_before),
            kept_count,
            success_count_after,
            pct_after: exact_pct(success_count_after, kept_count),
            pct_after_rounded: rounded_pct(success_count_after, kept_count),
            per_category,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stage", "input_clauses", "successful", "pct", "pct_exact"])
            .expect("in-memory write");
        for (stage, n, s, pct, exact) in [
            (
                "before",
                self.input_count_before,
                self.success_count_before,
                self.pct_before_rounded,
                self.pct_before,
            ),
            (
                "after",
                self.kept_count,
                self.success_count_after,
                self.pct_after_rounded,
                self.pct_after,
            ),
        ] {
            w.write_record([
                stage.to_string(),
                n.to_string(),
                s.to_string(),
                format!("{pct}%"),
                format!("{exact:.4}"),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn count_successes(clauses: &[Clause], interpreter: &dyn InterpreterPort) -> u64 {
    let ok = |c: &Clause| match interpreter.interpret(c) {
        Ok(Outcome::Success) => 1,
        Ok(Outcome::Failure) => 0,
        Err(e) => {
            log::warn!("interpreter failed on {}: {e}", c.clause_id);
            0
        }
    };
    if interpreter.parallel_safe() {
        clauses.par_iter().map(ok).sum()
    } else {
        clauses.iter().map(ok).sum()
    }
}

/// Runs the before/after comparison for already predicted categories.
pub fn run_filter_experiment_with_predictions(
    clauses: &[Clause],
    predictions: &[Category],
    interpreter: &dyn InterpreterPort,
) -> Result<FilterReport, FilterError> {
    if clauses.is_empty() {
        return Err(FilterError::Empty);
    }
    let kept = filter_interpretable(clauses, predictions)?;
    let mut per_category: BTreeMap<Category, KeptDropped> =
        Category::ALL.iter().map(|c| (*c, KeptDropped::default())).collect();
    for p in predictions {
        let slot = per_category.get_mut(p).expect("all categories present");
        if p.is_interpretable() {
            slot.kept += 1;
        } else {
            slot.dropped += 1;
        }
    }
    let before = count_successes(clauses, interpreter);
    let after = count_successes(&kept, interpreter);
    Ok(FilterReport::from_counts(
        clauses.len() as u64,
        before,
        kept.len() as u64,
        after,
        per_category,
    ))
}

/// Classifies the clauses, then runs the before/after comparison.
pub fn run_filter_experiment(
    clauses: &[Clause],
    classifier: &ClassifierModel,
    interpreter: &dyn InterpreterPort,
) -> Result<FilterReport, FilterError> {
    if clauses.is_empty() {
        return Err(FilterError::Empty);
    }
    let texts: Vec<&str> = clauses.iter().map(|c| c.text.as_str()).collect();
    let predictions: Vec<Category> = classifier
        .predict(&texts)?
        .into_iter()
        .map(|p| p.category)
        .collect();
    run_filter_experiment_with_predictions(clauses, &predictions, interpreter)
}
