//! Document-level interpretability and corpus aggregates.
//!
//! A code's total score is the sum of its clause scores; its
//! interpretability is that total divided by the clause count, as a
//! percentage. Corpus reports group codes by domain and level and show both
//! the clause-weighted and the code-mean average, since it is not settled
//! which of the two published corpus averages used.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::corpus::{CodeMeta, Level};
use crate::error::ScoreError;
use crate::taxonomy::{Category, Score};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScore {
    pub doc_id: String,
    pub clause_count: u64,
    pub category_counts: BTreeMap<Category, u64>,
    pub total_score: Score,
    pub interpretability_pct: f64,
}

impl DocumentScore {
    /// Scores a document from per-category clause counts.
    pub fn from_counts(
        doc_id: impl Into<String>,
        counts: &[u64; Category::COUNT],
    ) -> Result<DocumentScore, ScoreError> {
        let doc_id = doc_id.into();
        let clause_count: u64 = counts.iter().sum();
        if clause_count == 0 {
            return Err(ScoreError::EmptyDocument(doc_id));
        }
        let total_score: Score = Category::ALL
            .iter()
            .map(|c| c.score().scaled(counts[c.ordinal()]))
            .sum();
        Ok(DocumentScore {
            doc_id,
            clause_count,
            category_counts: Category::ALL
                .iter()
                .map(|c| (*c, counts[c.ordinal()]))
                .collect(),
            interpretability_pct: pct_of(total_score, clause_count),
            total_score,
        })
    }

    /// Interpretability as an exact fraction in [0, 1].
    pub fn interpretability_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.total_score.halves(), 2 * self.clause_count)
    }

    pub fn count(&self, c: Category) -> u64 {
        self.category_counts.get(&c).copied().unwrap_or(0)
    }
}

// halves·50/n equals 100·(halves/2)/n with a single rounding step
fn pct_of(total: Score, clause_count: u64) -> f64 {
    (total.halves() * 50) as f64 / clause_count as f64
}

/// Scores one document from the predicted category of each of its clauses.
pub fn score_document(
    doc_id: impl Into<String>,
    categories: &[Category],
) -> Result<DocumentScore, ScoreError> {
    let mut counts = [0u64; Category::COUNT];
    for c in categories {
        counts[c.ordinal()] += 1;
    }
    DocumentScore::from_counts(doc_id, &counts)
}

/// Fraction of codes whose interpretability is strictly above the
/// threshold percentage.
pub fn highly_interpretable_fraction(
    scores: &[DocumentScore],
    threshold_pct: f64,
) -> Result<f64, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::NoDocuments);
    }
    let above = scores
        .iter()
        .filter(|s| s.interpretability_pct > threshold_pct)
        .count();
    Ok(above as f64 / scores.len() as f64)
}

pub const DEFAULT_HIGHLY_INTERPRETABLE_PCT: f64 = 50.0;

/// Row key of a corpus report.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum RowKey {
    /// One domain at one level.
    Group { domain: String, level: Level },
    /// All domains at one level.
    LevelTotal { level: Level },
    /// Everything.
    All,
}

impl RowKey {
    pub fn domain_label(&self) -> &str {
        match self {
            RowKey::Group { domain, .. } => domain,
            RowKey::LevelTotal { .. } => "Total",
            RowKey::All => "All",
        }
    }

    pub fn level_label(&self) -> &str {
        match self {
            RowKey::Group { level, .. } | RowKey::LevelTotal { level } => level.as_str(),
            RowKey::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRow {
    #[serde(flatten)]
    pub key: RowKey,
    pub codes: usize,
    pub clauses: u64,
    /// Total score over total clauses.
    pub interp_clause_weighted_pct: f64,
    /// Mean of the member codes' percentages.
    pub interp_code_mean_pct: f64,
    pub max_pct: f64,
    pub highly_interpretable_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub rows: Vec<CorpusRow>,
    pub threshold_pct: f64,
    pub note: String,
}

const AVERAGING_NOTE: &str = "interp_clause_weighted_pct divides the summed clause scores by the summed clause counts; interp_code_mean_pct averages the per-code percentages. The two differ whenever codes of different length are grouped.";

impl CorpusReport {
    pub fn row(&self, key: &RowKey) -> Option<&CorpusRow> {
        self.rows.iter().find(|r| &r.key == key)
    }

    pub const CSV_HEADER: [&'static str; 8] = [
        "domain",
        "level",
        "codes",
        "clauses",
        "interp_clause_weighted_pct",
        "interp_code_mean_pct",
        "max_pct",
        "highly_interpretable_frac",
    ];

    /// Percentages with two decimals, fractions with four.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.key.domain_label().to_string(),
                r.key.level_label().to_string(),
                r.codes.to_string(),
                r.clauses.to_string(),
                format!("{:.2}", r.interp_clause_weighted_pct),
                format!("{:.2}", r.interp_code_mean_pct),
                format!("{:.2}", r.max_pct),
                format!("{:.4}", r.highly_interpretable_frac),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn summarize(key: RowKey, members: &[&DocumentScore], threshold_pct: f64) -> CorpusRow {
    let clauses: u64 = members.iter().map(|s| s.clause_count).sum();
    let total: Score = members.iter().map(|s| s.total_score).sum();
    let code_mean =
        members.iter().map(|s| s.interpretability_pct).sum::<f64>() / members.len() as f64;
    let max_pct = members
        .iter()
        .map(|s| s.interpretability_pct)
        .fold(f64::NEG_INFINITY, f64::max);
    let above = members
        .iter()
        .filter(|s| s.interpretability_pct > threshold_pct)
        .count();
    CorpusRow {
        key,
        codes: members.len(),
        clauses,
        interp_clause_weighted_pct: pct_of(total, clauses),
        interp_code_mean_pct: code_mean,
        max_pct,
        highly_interpretable_frac: above as f64 / members.len() as f64,
    }
}

/// Groups document scores by (domain, level). Rows are ordered by domain,
/// then level, followed by one total row per level and a final overall row.
pub fn aggregate(
    scores: &[DocumentScore],
    metas: &BTreeMap<String, CodeMeta>,
    threshold_pct: f64,
) -> Result<CorpusReport, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::NoDocuments);
    }
    let mut groups: BTreeMap<(String, Level), Vec<&DocumentScore>> = BTreeMap::new();
    let mut levels: BTreeMap<Level, Vec<&DocumentScore>> = BTreeMap::new();
    for s in scores {
        let meta = metas
            .get(&s.doc_id)
            .ok_or_else(|| ScoreError::MissingMeta(s.doc_id.clone()))?;
        groups
            .entry((meta.domain_tag.clone(), meta.level))
            .or_default()
            .push(s);
        levels.entry(meta.level).or_default().push(s);
    }

    let mut rows: Vec<CorpusRow> = groups
        .into_iter()
        .map(|((domain, level), members)| {
            summarize(RowKey::Group { domain, level }, &members, threshold_pct)
        })
        .collect();
    rows.extend(
        levels
            .into_iter()
            .map(|(level, members)| summarize(RowKey::LevelTotal { level }, &members, threshold_pct)),
    );
    let all: Vec<&DocumentScore> = scores.iter().collect();
    rows.push(summarize(RowKey::All, &all, threshold_pct));

    Ok(CorpusReport {
        rows,
        threshold_pct,
        note: AVERAGING_NOTE.to_string(),
    })
}

/// Document scores as CSV, one row per code.
pub fn document_scores_csv(scores: &[DocumentScore]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["doc_id".to_string(), "clauses".to_string()];
    header.extend(Category::ALL.iter().map(|c| c.as_str().to_string()));
    header.extend(["total_score".to_string(), "interpretability_pct".to_string()]);
    w.write_record(&header).expect("in-memory write");
    for s in scores {
        let mut row = vec![s.doc_id.clone(), s.clause_count.to_string()];
        row.extend(Category::ALL.iter().map(|c| s.count(*c).to_string()));
        row.push(s.total_score.to_string());
        row.push(format!("{:.2}", s.interpretability_pct));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use Category::*;

    fn meta(domain: &str, level: Level) -> CodeMeta {
        CodeMeta {
            title: domain.into(),
            level,
            domain_tag: domain.into(),
            year: None,
        }
    }

    #[test]
    fn fire_code_counts() {
        // direct, indirect, method, reference, general, term, other
        let counts = [280, 193, 157, 119, 70, 73, 112];
        let s = DocumentScore::from_counts("GB 50016-2014", &counts).unwrap();
        assert_eq!(s.clause_count, 1004);
        assert_eq!(s.total_score, Score::from_halves(1222));
        assert_eq!(s.interpretability_ratio(), Ratio::new(611, 1004));
        assert_eq!(format!("{:.2}", s.interpretability_pct), "60.86");
    }

    #[test]
    fn extremes() {
        assert_eq!(score_document("a", &[Direct; 10]).unwrap().interpretability_pct, 100.0);
        assert_eq!(score_document("b", &[Term; 10]).unwrap().interpretability_pct, 0.0);
        assert!(matches!(score_document("c", &[]), Err(ScoreError::EmptyDocument(_))));
    }

    #[test]
    fn highly_interpretable_is_strict() {
        let full = score_document("a", &[Indirect; 4]).unwrap();
        let half = score_document("b", &[Method; 4]).unwrap();
        assert_eq!(half.interpretability_pct, 50.0);
        assert_eq!(highly_interpretable_fraction(&[full.clone(), full], 50.0).unwrap(), 1.0);
        assert_eq!(highly_interpretable_fraction(&[half.clone(), half], 50.0).unwrap(), 0.0);
        assert!(highly_interpretable_fraction(&[], 50.0).is_err());
    }

    #[test]
    fn code_mean_and_clause_weighted_differ() {
        let mut a = vec![Direct; 50];
        a.extend([Term; 50]);
        let a = score_document("a", &a).unwrap();
        let b = score_document("b", &[Other; 300]).unwrap();
        let metas = BTreeMap::from([
            ("a".to_string(), meta("fire", Level::Gb)),
            ("b".to_string(), meta("fire", Level::Gb)),
        ]);
        let report = aggregate(&[a, b], &metas, 50.0).unwrap();
        let row = report.row(&RowKey::All).unwrap();
        assert_eq!(row.interp_code_mean_pct, 25.0);
        assert_eq!(row.interp_clause_weighted_pct, 12.5);
        assert_eq!(row.codes, 2);
        assert_eq!(row.clauses, 400);
    }

    #[test]
    fn singleton_group_matches_document() {
        let s = score_document("a", &[Direct, Method, Term]).unwrap();
        let metas = BTreeMap::from([("a".to_string(), meta("structural", Level::Hb))]);
        let report = aggregate(std::slice::from_ref(&s), &metas, 50.0).unwrap();
        for row in &report.rows {
            assert_eq!(row.interp_clause_weighted_pct, s.interpretability_pct);
            assert_eq!(row.interp_code_mean_pct, s.interpretability_pct);
            assert_eq!(row.max_pct, s.interpretability_pct);
        }
    }

    #[test]
    fn rows_are_ordered_and_missing_meta_fails() {
        let docs: Vec<DocumentScore> = ["x", "y", "z"]
            .iter()
            .map(|id| score_document(*id, &[Direct, Term]).unwrap())
            .collect();
        let metas = BTreeMap::from([
            ("x".to_string(), meta("water", Level::Hb)),
            ("y".to_string(), meta("fire", Level::Db)),
            ("z".to_string(), meta("fire", Level::Gb)),
        ]);
        let report = aggregate(&docs, &metas, 50.0).unwrap();
        let keys: Vec<(String, String)> = report
            .rows
            .iter()
            .map(|r| (r.key.domain_label().to_string(), r.key.level_label().to_string()))
            .collect();
        let expected = [
            ("fire", "GB"),
            ("fire", "DB"),
            ("water", "HB"),
            ("Total", "GB"),
            ("Total", "HB"),
            ("Total", "DB"),
            ("All", "all"),
        ];
        assert_eq!(
            keys,
            expected.map(|(a, b)| (a.to_string(), b.to_string())).to_vec()
        );
        let csv = report.to_csv();
        assert!(csv.starts_with("domain,level,codes,clauses,interp_clause_weighted_pct,interp_code_mean_pct,max_pct,highly_interpretable_frac\n"));
        assert!(csv.contains("fire,GB,1,2,50.00,50.00,50.00,0.0000\n"));

        let mut partial = metas.clone();
        partial.remove("y");
        assert!(matches!(aggregate(&docs, &partial, 50.0), Err(ScoreError::MissingMeta(id)) if id == "y"));
    }

    #[test]
    fn document_csv() {
        let s = score_document("a", &[Direct, Method]).unwrap();
        let csv = document_scores_csv(&[s]);
        assert_eq!(
            csv,
            "doc_id,clauses,direct,indirect,method,reference,general,term,other,total_score,interpretability_pct\na,2,1,0,1,0,0,0,0,1.5,75.00\n"
        );
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn categories() -> impl Strategy<Value = Vec<Category>> {
        prop::collection::vec((0..Category::COUNT).prop_map(|i| Category::ALL[i]), 1..300)
    }

    proptest! {
        #[test]
        fn total_is_the_clause_by_clause_sum(cats in categories()) {
            let s = score_document("d", &cats).unwrap();
            let mut total = Score::ZERO;
            for c in &cats {
                total += c.score();
            }
            prop_assert_eq!(s.total_score, total);
            prop_assert_eq!(s.clause_count, cats.len() as u64);
            prop_assert!((0.0..=100.0).contains(&s.interpretability_pct));
        }

        #[test]
        fn reversing_the_clauses_changes_nothing(cats in categories()) {
            let mut rev = cats.clone();
            rev.reverse();
            prop_assert_eq!(score_document("d", &rev).unwrap(), score_document("d", &cats).unwrap());
        }

        #[test]
        fn one_hard_clause_made_easy_adds_one_over_n(cats in categories(), pick in any::<prop::sample::Index>()) {
            let hard: Vec<usize> = (0..cats.len()).filter(|&i| !cats[i].is_interpretable()).collect();
            prop_assume!(!hard.is_empty());
            let i = hard[pick.index(hard.len())];
            let before = score_document("d", &cats).unwrap();
            let mut after_cats = cats.clone();
            after_cats[i] = Category::Direct;
            let after = score_document("d", &after_cats).unwrap();
            let n = cats.len() as u64;
            prop_assert_eq!(after.interpretability_ratio() - before.interpretability_ratio(), Ratio::new(1, n));
            prop_assert!((after.interpretability_pct - before.interpretability_pct - 100.0 / n as f64).abs() < 1e-9);
        }
    }
}
