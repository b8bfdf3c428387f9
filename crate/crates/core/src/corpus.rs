//! Document ingestion: loading, cleaning and clause segmentation.
//!
//! Raw code texts carry front matter (editors, departments), broken table
//! rows and garbled symbols. Cleaning drops those lines according to an
//! ordered rule list; segmentation then groups the surviving lines into
//! provisions, merging continuation lines into the clause they belong to.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::CorpusError;

/// Standard level of a code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    /// National standard.
    #[serde(rename = "GB")]
    Gb,
    /// Industrial standard (JGJ, CJJ, CECS, ...).
    #[serde(rename = "HB")]
    Hb,
    /// Local standard.
    #[serde(rename = "DB")]
    Db,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Gb, Level::Hb, Level::Db];

    pub const fn as_str(self) -> &'static str {
        match self {
            Level::Gb => "GB",
            Level::Hb => "HB",
            Level::Db => "DB",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Level::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CorpusError::UnknownLevel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMeta {
    pub title: String,
    pub level: Level,
    pub domain_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
}

/// A line of a source document with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLine {
    pub number: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDocument {
    pub doc_id: String,
    pub lines: Vec<SourceLine>,
    pub meta: CodeMeta,
}

impl RawDocument {
    pub fn from_text(doc_id: impl Into<String>, text: &str, meta: CodeMeta) -> RawDocument {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| SourceLine {
                number: i + 1,
                text: l.to_string(),
            })
            .collect();
        RawDocument {
            doc_id: doc_id.into(),
            lines,
            meta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub first_line: usize,
    pub last_line: usize,
}

/// One normative provision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub clause_id: String,
    pub doc_id: String,
    pub text: String,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub span: Option<SourceSpan>,
}

impl Clause {
    /// Builds a clause from free text, normalizing it. Returns `None` when
    /// nothing is left after normalization.
    pub fn new(
        clause_id: impl Into<String>,
        doc_id: impl Into<String>,
        text: &str,
    ) -> Option<Clause> {
        let text = normalize_text(text);
        if text.is_empty() {
            return None;
        }
        Some(Clause {
            clause_id: clause_id.into(),
            doc_id: doc_id.into(),
            text,
            span: None,
        })
    }
}

/// NFC-normalizes, turns full-width spaces and line breaks into plain
/// spaces, collapses whitespace runs and trims. Idempotent.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    for word in nfc.split(|c: char| c.is_whitespace() || c == '\u{3000}') {
        if word.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleAction {
    Keep,
    Drop,
}

/// Line shape tests used by cleaning rules. All are evaluated on the
/// normalized line text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinePredicate {
    /// Regex search anywhere in the line.
    Regex { pattern: String },
    /// Share of CJK ideographs among non-space characters is below `min`.
    CjkRatioBelow { min: f64 },
    /// Pipe-delimited rows, or lines of three or more space-separated cells
    /// where at least `min_numeric_share` of the cells are numeric.
    TableFragment { min_numeric_share: f64 },
    /// Replacement characters, control characters, or a share of unusual
    /// symbols above `max_symbol_share`.
    Garbled { max_symbol_share: f64 },
    /// Fewer than `chars` characters.
    ShorterThan { chars: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningRule {
    pub action: RuleAction,
    #[serde(flatten)]
    pub predicate: LinePredicate,
}

impl CleaningRule {
    pub fn drop(predicate: LinePredicate) -> CleaningRule {
        CleaningRule {
            action: RuleAction::Drop,
            predicate,
        }
    }

    pub fn keep(predicate: LinePredicate) -> CleaningRule {
        CleaningRule {
            action: RuleAction::Keep,
            predicate,
        }
    }

    pub fn drop_regex(pattern: &str) -> CleaningRule {
        CleaningRule::drop(LinePredicate::Regex {
            pattern: pattern.to_string(),
        })
    }
}

/// Ordered cleaning rules. The first rule whose predicate matches a line
/// decides its fate; lines matching no rule are kept. Empty lines are
/// always dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    pub rules: Vec<CleaningRule>,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            rules: vec![
                CleaningRule::drop(LinePredicate::Garbled {
                    max_symbol_share: 0.3,
                }),
                // editors, drafting units, approval and issue information
                CleaningRule::drop_regex(
                    r"(主编|参编|编制|起草|审查|批准|发布|施行|实施|编写)(单位|部门|人员|日期|人|组)",
                ),
                CleaningRule::drop_regex(
                    r"(?i)^(chief )?(editors?|drafted by|drafting (unit|committee)|main drafters|reviewers?|reviewed by|approved by|issued by|prepared by|participating units?|implementation date|effective date)\b",
                ),
                CleaningRule::drop_regex(
                    r"^(中华人民共和国|UDC|前\s*言|目\s*次|目\s*录|本规范用词说明|本标准用词说明|引用标准名录|条文说明|附\s*[:：]\s*条文说明)",
                ),
                // a bare list of personal names
                CleaningRule::drop_regex(r"^(\p{Han}{2,4}\s+){2,}\p{Han}{2,4}$"),
                CleaningRule::drop(LinePredicate::TableFragment {
                    min_numeric_share: 0.6,
                }),
                // page numbers, rulers, lone numbers
                CleaningRule::drop_regex(r"^[\d\s\-—–_·.=*~]+$"),
                CleaningRule::drop_regex(r"^第\s*\d+\s*页"),
                // chapter and section headings without sentence punctuation
                CleaningRule::drop_regex(
                    r"^(第[一二三四五六七八九十百零\d]+章|附录\s*[A-Z]|\d+(\.\d+)?)\s*[^。；;：:.，,！？!?]{0,30}$",
                ),
            ],
        }
    }
}

enum CompiledPredicate {
    Regex(Regex),
    CjkRatioBelow(f64),
    TableFragment(f64),
    Garbled(f64),
    ShorterThan(usize),
}

/// Compiled form of a [`CleaningConfig`].
pub struct Cleaner {
    rules: Vec<(RuleAction, CompiledPredicate)>,
}

impl Cleaner {
    pub fn new(config: &CleaningConfig) -> Result<Cleaner, CorpusError> {
        let rules = config
            .rules
            .iter()
            .map(|rule| {
                let compiled = match &rule.predicate {
                    LinePredicate::Regex { pattern } => CompiledPredicate::Regex(
                        Regex::new(pattern).map_err(|source| CorpusError::InvalidPattern {
                            pattern: pattern.clone(),
                            source,
                        })?,
                    ),
                    LinePredicate::CjkRatioBelow { min } => CompiledPredicate::CjkRatioBelow(*min),
                    LinePredicate::TableFragment { min_numeric_share } => {
                        CompiledPredicate::TableFragment(*min_numeric_share)
                    }
                    LinePredicate::Garbled { max_symbol_share } => {
                        CompiledPredicate::Garbled(*max_symbol_share)
                    }
                    LinePredicate::ShorterThan { chars } => CompiledPredicate::ShorterThan(*chars),
                };
                Ok((rule.action, compiled))
            })
            .collect::<Result<_, CorpusError>>()?;
        Ok(Cleaner { rules })
    }

    /// Whether a normalized, non-empty line survives cleaning.
    pub fn keeps(&self, line: &str) -> bool {
        for (action, predicate) in &self.rules {
            if predicate.matches(line) {
                return *action == RuleAction::Keep;
            }
        }
        true
    }

    pub fn clean(&self, raw: &RawDocument) -> Result<RawDocument, CorpusError> {
        if raw.lines.is_empty() {
            return Err(CorpusError::EmptyInput {
                doc_id: raw.doc_id.clone(),
            });
        }
        let lines: Vec<SourceLine> = raw
            .lines
            .iter()
            .filter_map(|line| {
                let text = normalize_text(&line.text);
                (!text.is_empty() && self.keeps(&text)).then_some(SourceLine {
                    number: line.number,
                    text,
                })
            })
            .collect();
        if lines.is_empty() {
            return Err(CorpusError::EmptyAfterCleaning {
                doc_id: raw.doc_id.clone(),
            });
        }
        Ok(RawDocument {
            doc_id: raw.doc_id.clone(),
            lines,
            meta: raw.meta.clone(),
        })
    }
}

impl CompiledPredicate {
    fn matches(&self, line: &str) -> bool {
        match self {
            CompiledPredicate::Regex(re) => re.is_match(line),
            CompiledPredicate::CjkRatioBelow(min) => {
                let (cjk, total) = line
                    .chars()
                    .filter(|c| !c.is_whitespace())
                    .fold((0usize, 0usize), |(cjk, total), c| {
                        (cjk + usize::from(is_cjk(c)), total + 1)
                    });
                total > 0 && (cjk as f64) / (total as f64) < *min
            }
            CompiledPredicate::TableFragment(min_share) => is_table_fragment(line, *min_share),
            CompiledPredicate::Garbled(max_share) => is_garbled(line, *max_share),
            CompiledPredicate::ShorterThan(n) => line.chars().count() < *n,
        }
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}'
        | '\u{3400}'..='\u{4DBF}'
        | '\u{20000}'..='\u{2A6DF}'
        | '\u{F900}'..='\u{FAFF}')
}

fn is_table_fragment(line: &str, min_numeric_share: f64) -> bool {
    if line.matches('|').count() >= 2 {
        return true;
    }
    let cells: Vec<&str> = line.split(' ').collect();
    if cells.len() < 3 {
        return false;
    }
    let numeric = cells
        .iter()
        .filter(|cell| {
            cell.chars().any(|c| c.is_ascii_digit())
                && cell
                    .chars()
                    .all(|c| c.is_ascii_digit() || ".,%~-+×x/()（）≤≥<>".contains(c))
        })
        .count();
    numeric as f64 / cells.len() as f64 >= min_numeric_share
}

fn is_garbled(line: &str, max_symbol_share: f64) -> bool {
    let mut total = 0usize;
    let mut odd = 0usize;
    for c in line.chars() {
        if c == '\u{FFFD}' || (c.is_control() && c != '\t') {
            return true;
        }
        if c.is_whitespace() {
            continue;
        }
        total += 1;
        let ordinary = c.is_alphanumeric()
            || is_cjk(c)
            || "，。、；：？！“”‘’（）《》【】—…·,.;:?!'\"()[]-+*/=<>%≤≥±×°~℃"
                .contains(c)
            || ('\u{FF01}'..='\u{FF5E}').contains(&c);
        if !ordinary {
            odd += 1;
        }
    }
    total > 0 && odd as f64 / total as f64 > max_symbol_share
}

/// Cleans one document with the given rules.
pub fn clean_document(raw: &RawDocument, rules: &CleaningConfig) -> Result<RawDocument, CorpusError> {
    Cleaner::new(rules)?.clean(raw)
}

/// Default start-of-provision pattern: dotted provision numbers ("3.2.7"),
/// numbered or parenthesized list items, Chinese enumerations and "第N条".
pub const DEFAULT_PROVISION_PATTERN: &str = r"^(\d+(\.\d+)+|\d{1,2}(\s|[、．.)）])|[(（]\d{1,2}[)）]|[一二三四五六七八九十]+[、．.]|第[一二三四五六七八九十百零\d]+条)";

pub struct Segmenter {
    provision_start: Regex,
}

impl Default for Segmenter {
    fn default() -> Self {
        Segmenter {
            provision_start: Regex::new(DEFAULT_PROVISION_PATTERN).expect("default pattern"),
        }
    }
}

impl Segmenter {
    pub fn with_pattern(pattern: &str) -> Result<Segmenter, CorpusError> {
        let provision_start = Regex::new(pattern).map_err(|source| CorpusError::InvalidPattern {
            pattern: pattern.to_string(),
            source,
        })?;
        Ok(Segmenter { provision_start })
    }

    pub fn starts_provision(&self, line: &str) -> bool {
        self.provision_start.is_match(line)
    }

    /// Groups the lines of a cleaned document into clauses. A numbered line
    /// opens a new clause; any other line continues the current one.
    pub fn segment(&self, doc: &RawDocument) -> Vec<Clause> {
        let mut groups: Vec<(usize, usize, String)> = Vec::new();
        for line in &doc.lines {
            let text = normalize_text(&line.text);
            if text.is_empty() {
                continue;
            }
            match groups.last_mut() {
                Some((_, last, buf)) if !self.starts_provision(&text) => {
                    buf.push(' ');
                    buf.push_str(&text);
                    *last = line.number;
                }
                _ => groups.push((line.number, line.number, text)),
            }
        }
        groups
            .into_iter()
            .enumerate()
            .map(|(i, (first_line, last_line, text))| Clause {
                clause_id: clause_id(&doc.doc_id, i + 1),
                doc_id: doc.doc_id.clone(),
                text,
                span: Some(SourceSpan {
                    first_line,
                    last_line,
                }),
            })
            .collect()
    }
}

pub fn clause_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#{ordinal}")
}

/// Segments a cleaned document with the default provision pattern.
pub fn segment_clauses(doc: &RawDocument) -> Vec<Clause> {
    Segmenter::default().segment(doc)
}

/// Line and clause counts for one ingested document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub doc_id: String,
    pub raw_lines: usize,
    pub cleaned_lines: usize,
    pub clauses: usize,
}

pub fn ingest_document(
    raw: &RawDocument,
    cleaner: &Cleaner,
    segmenter: &Segmenter,
) -> Result<(Vec<Clause>, IngestStats), CorpusError> {
    let cleaned = cleaner.clean(raw)?;
    let clauses = segmenter.segment(&cleaned);
    let stats = IngestStats {
        doc_id: raw.doc_id.clone(),
        raw_lines: raw.lines.len(),
        cleaned_lines: cleaned.lines.len(),
        clauses: clauses.len(),
    };
    Ok((clauses, stats))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads the sidecar metadata file: a JSON object keyed by document id.
pub fn load_metadata(path: &Path) -> Result<BTreeMap<String, CodeMeta>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CorpusError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Lists the `.txt` documents of a directory in name order.
pub fn list_documents(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads one plain-text document; its id is the file stem.
pub fn load_document(
    path: &Path,
    metas: &BTreeMap<String, CodeMeta>,
) -> Result<RawDocument, CorpusError> {
    let doc_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let meta = metas
        .get(&doc_id)
        .cloned()
        .ok_or_else(|| CorpusError::MissingMeta(doc_id.clone()))?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8(bytes).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    let text = text.strip_prefix('\u{FEFF}').unwrap_or(&text);
    Ok(RawDocument::from_text(doc_id, text, meta))
}

pub fn write_clauses_jsonl(path: &Path, clauses: &[Clause]) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for clause in clauses {
        let line = serde_json::to_string(clause).map_err(|source| CorpusError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_clauses_jsonl(path: &Path) -> Result<Vec<Clause>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut clauses = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let clause: Clause = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        clauses.push(clause);
    }
    Ok(clauses)
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> CodeMeta {
        CodeMeta {
            title: "t".into(),
            level: Level::Gb,
            domain_tag: "fire".into(),
            year: None,
        }
    }

    fn line() -> impl Strategy<Value = String> {
        let words = prop::sample::select(vec![
            "建筑高度不应大于24m。",
            "且应设置防火门，",
            "The exit width shall not be less than 1.1 m.",
            "when sprinklers are provided;",
            "  多个   空格\u{3000}全角  ",
            "主编单位：某研究院",
            "第 3 页",
            "12",
            "",
        ]);
        let marker = prop_oneof![
            Just(String::new()),
            (1u8..9, 0u8..9, 1u8..20).prop_map(|(a, b, c)| format!("{a}.{b}.{c} ")),
            (1u8..9).prop_map(|n| format!("（{n}）")),
            Just("第三条 ".to_string()),
        ];
        (marker, words).prop_map(|(m, w)| format!("{m}{w}"))
    }

    fn document() -> impl Strategy<Value = RawDocument> {
        prop::collection::vec(line(), 1..30).prop_map(|lines| RawDocument::from_text("doc", &lines.join("\n"), meta()))
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn cleaning_is_idempotent(doc in document()) {
            let cleaner = Cleaner::new(&CleaningConfig::default()).unwrap();
            if let Ok(once) = cleaner.clean(&doc) {
                prop_assert_eq!(cleaner.clean(&once).unwrap(), once);
            }
        }

        #[test]
        fn segmentation_keeps_every_cleaned_line(doc in document()) {
            let cleaner = Cleaner::new(&CleaningConfig::default()).unwrap();
            let Ok(cleaned) = cleaner.clean(&doc) else { return Ok(()) };
            let clauses = segment_clauses(&cleaned);
            prop_assert!(clauses.len() <= cleaned.lines.len());
            let joined: Vec<&str> = clauses.iter().map(|c| c.text.as_str()).collect();
            let lines: Vec<&str> = cleaned.lines.iter().map(|l| l.text.as_str()).collect();
            prop_assert_eq!(joined.join(" "), lines.join(" "));
            let mut next = 0;
            for c in &clauses {
                let span = c.span.unwrap();
                prop_assert!(span.first_line > next && span.last_line >= span.first_line);
                next = span.last_line;
            }
        }
    }
}
