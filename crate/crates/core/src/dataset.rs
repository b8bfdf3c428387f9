//! The labeled clause dataset: storage, value/comparator augmentation,
//! class balance and train/validation/test splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Clause;
use crate::error::DatasetError;
use crate::taxonomy::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Manual,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledClause {
    #[serde(flatten)]
    pub clause: Clause,
    pub label: Category,
    pub provenance: Provenance,
    pub parent_id: Option<String>,
}

impl LabeledClause {
    pub fn manual(clause: Clause, label: Category) -> LabeledClause {
        LabeledClause {
            clause,
            label,
            provenance: Provenance::Manual,
            parent_id: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.clause.clause_id
    }

    pub fn text(&self) -> &str {
        &self.clause.text
    }
}

/// Per-category counts, indexed by [`Category::ordinal`].
pub type ClassCounts = [usize; Category::COUNT];

/// An immutable collection of labeled clauses with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    examples: Vec<LabeledClause>,
    counts: ClassCounts,
}

impl Dataset {
    /// Validates ids, texts and provenance. Where an augmented example's
    /// parent is part of the same dataset, the parent must be manual and
    /// carry the same label. Use [`Dataset::check_lineage`] to additionally
    /// require that every parent is present.
    pub fn new(examples: Vec<LabeledClause>) -> Result<Dataset, DatasetError> {
        let mut by_id: HashMap<&str, &LabeledClause> = HashMap::with_capacity(examples.len());
        for ex in &examples {
            if ex.clause.text.trim().is_empty() {
                return Err(DatasetError::EmptyText(ex.id().to_string()));
            }
            let consistent = match ex.provenance {
                Provenance::Manual => ex.parent_id.is_none(),
                Provenance::Augmented => ex.parent_id.is_some(),
            };
            if !consistent {
                return Err(DatasetError::Provenance(ex.id().to_string()));
            }
            if by_id.insert(ex.id(), ex).is_some() {
                return Err(DatasetError::DuplicateId(ex.id().to_string()));
            }
        }
        for ex in &examples {
            if let Some(parent_id) = &ex.parent_id {
                if let Some(parent) = by_id.get(parent_id.as_str()) {
                    check_parent(ex, parent)?;
                }
            }
        }
        let mut counts = [0; Category::COUNT];
        for ex in &examples {
            counts[ex.label.ordinal()] += 1;
        }
        Ok(Dataset { examples, counts })
    }

    /// Requires every augmented example's parent to be present.
    pub fn check_lineage(&self) -> Result<(), DatasetError> {
        let by_id: HashMap<&str, &LabeledClause> =
            self.examples.iter().map(|ex| (ex.id(), ex)).collect();
        for ex in &self.examples {
            if let Some(parent_id) = &ex.parent_id {
                let parent = by_id
                    .get(parent_id.as_str())
                    .ok_or_else(|| DatasetError::MissingParent {
                        child: ex.id().to_string(),
                        parent: parent_id.clone(),
                    })?;
                check_parent(ex, parent)?;
            }
        }
        Ok(())
    }

    pub fn examples(&self) -> &[LabeledClause] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn counts(&self) -> &ClassCounts {
        &self.counts
    }

    pub fn texts(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.text()).collect()
    }

    pub fn labels(&self) -> Vec<Category> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn into_examples(self) -> Vec<LabeledClause> {
        self.examples
    }

    pub fn load_jsonl(path: &Path) -> Result<Dataset, DatasetError> {
        let file = fs::File::open(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut examples = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| DatasetError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let ex = serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?;
            examples.push(ex);
        }
        Dataset::new(examples)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), DatasetError> {
        let io = |source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
        for ex in &self.examples {
            let line = serde_json::to_string(ex).expect("labeled clauses serialize");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn check_parent(child: &LabeledClause, parent: &LabeledClause) -> Result<(), DatasetError> {
    if parent.provenance != Provenance::Manual {
        return Err(DatasetError::MissingParent {
            child: child.id().to_string(),
            parent: parent.id().to_string(),
        });
    }
    if parent.label != child.label {
        return Err(DatasetError::LabelMismatch {
            child: child.id().to_string(),
            parent: parent.id().to_string(),
            child_label: child.label.to_string(),
            parent_label: parent.label.to_string(),
        });
    }
    Ok(())
}

/// Class counts split by provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub manual: BTreeMap<Category, usize>,
    pub augmented: BTreeMap<Category, usize>,
}

impl BalanceReport {
    pub fn total(&self) -> usize {
        self.manual.values().sum::<usize>() + self.augmented.values().sum::<usize>()
    }

    pub fn combined(&self, category: Category) -> usize {
        self.manual[&category] + self.augmented[&category]
    }
}

pub fn balance_report(ds: &Dataset) -> BalanceReport {
    let zeros = || Category::ALL.iter().map(|&c| (c, 0)).collect::<BTreeMap<_, _>>();
    let mut report = BalanceReport {
        manual: zeros(),
        augmented: zeros(),
    };
    for ex in ds.examples() {
        let bucket = match ex.provenance {
            Provenance::Manual => &mut report.manual,
            Provenance::Augmented => &mut report.augmented,
        };
        *bucket.get_mut(&ex.label).expect("all categories present") += 1;
    }
    report
}

// ---------------------------------------------------------------------------
// Augmentation

/// Lexicons and sampling band for value/comparator replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Groups of interchangeable comparator phrases. A phrase is only ever
    /// replaced by another phrase of its own group.
    pub comparators: Vec<Vec<String>>,
    /// New numbers are drawn uniformly from `[low·v, high·v]`.
    pub magnitude_band: (f64, f64),
    /// Sampling attempts allowed per requested example before giving up.
    pub attempts_per_example: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let group = |phrases: &[&str]| phrases.iter().map(|p| p.to_string()).collect();
        AugmentConfig {
            comparators: vec![
                group(&[
                    "less than",
                    "more than",
                    "not less than",
                    "not greater than",
                    "equal to",
                ]),
                group(&["大于", "小于", "不大于", "不小于", "等于"]),
            ],
            magnitude_band: (0.1, 10.0),
            attempts_per_example: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Number,
    Comparator,
}

/// One replacement applied to the parent text. `start..end` is a byte span
/// of the parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    pub start: usize,
    pub end: usize,
    pub original: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedClause {
    pub example: LabeledClause,
    pub edits: Vec<Edit>,
}

#[derive(Debug, Clone, PartialEq)]
struct NumberToken {
    start: usize,
    end: usize,
    decimals: Option<usize>,
    value: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct ComparatorToken {
    start: usize,
    end: usize,
    group: usize,
    phrase: usize,
}

fn find_numbers(text: &str) -> Vec<NumberToken> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        let mut end = i;
        while bytes[end - 1] == b'.' {
            end -= 1;
        }
        let run = &text[start..end];
        let preceded_by_letter = start > 0 && bytes[start - 1].is_ascii_alphabetic();
        // a number opening the clause is its provision or list number
        if start == 0 || preceded_by_letter {
            continue;
        }
        let mut parts = run.split('.');
        let int_part = parts.next().unwrap_or("");
        let frac_part = parts.next();
        if parts.next().is_some() || (int_part.len() > 1 && int_part.starts_with('0')) {
            continue;
        }
        let Ok(value) = run.parse::<f64>() else {
            continue;
        };
        found.push(NumberToken {
            start,
            end,
            decimals: frac_part.map(str::len),
            value,
        });
    }
    found
}

fn find_comparators(text: &str, groups: &[Vec<String>]) -> Vec<ComparatorToken> {
    let mut candidates = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        for (p, phrase) in group.iter().enumerate() {
            if phrase.is_empty() {
                continue;
            }
            let needs_boundary = phrase.is_ascii();
            for (start, _) in text.match_indices(phrase.as_str()) {
                let end = start + phrase.len();
                if needs_boundary {
                    let before = text[..start].chars().next_back();
                    let after = text[end..].chars().next();
                    if before.is_some_and(char::is_alphanumeric)
                        || after.is_some_and(char::is_alphanumeric)
                    {
                        continue;
                    }
                }
                candidates.push(ComparatorToken {
                    start,
                    end,
                    group: g,
                    phrase: p,
                });
            }
        }
    }
    // leftmost first, longest wins at the same start, no overlaps
    candidates.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut chosen: Vec<ComparatorToken> = Vec::new();
    for c in candidates {
        match chosen.last() {
            Some(last) if c.start < last.end => {
                // a longer phrase starting inside the previous match, e.g.
                // "不小于" found after "小于"; prefer the longer one
                if c.start >= last.start && c.end > last.end && c.end - c.start > last.end - last.start {
                    chosen.pop();
                    chosen.push(c);
                }
            }
            _ => chosen.push(c),
        }
    }
    chosen
}

fn format_number(value: f64, decimals: Option<usize>) -> String {
    match decimals {
        None => format!("{}", value.round() as i64),
        Some(k) => format!("{value:.k$}"),
    }
}

fn fresh_number(token: &NumberToken, original: &str, band: (f64, f64), rng: &mut ChaCha8Rng) -> String {
    let (lo, hi) = if token.value > 0.0 {
        (token.value * band.0, token.value * band.1)
    } else {
        (1.0, 10.0)
    };
    for _ in 0..16 {
        let draw = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let candidate = format_number(draw, token.decimals);
        if candidate != original && !candidate.starts_with('-') {
            return candidate;
        }
    }
    let step = token.decimals.map_or(1.0, |k| 10f64.powi(-(k as i32)));
    format_number(token.value + step, token.decimals)
}

/// Derives a per-example seed from the base seed and the clause id.
pub fn derive_seed(base_seed: u64, clause_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    hasher.update(clause_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn child_id(parent_id: &str, text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let hex: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("{parent_id}~aug-{hex}")
}

fn apply_edits(text: &str, edits: &[Edit]) -> String {
    let mut out = String::with_capacity(text.len() + 16);
    let mut cursor = 0;
    for edit in edits {
        out.push_str(&text[cursor..edit.start]);
        out.push_str(&edit.replacement);
        cursor = edit.end;
    }
    out.push_str(&text[cursor..]);
    out
}

/// Like [`augment`] but also returns the edits applied to each child.
/// Children whose text appears in `exclude` are skipped.
pub fn augment_traced(
    example: &LabeledClause,
    rng_seed: u64,
    n: usize,
    config: &AugmentConfig,
    exclude: &HashSet<String>,
) -> Result<Vec<AugmentedClause>, DatasetError> {
    if example.provenance != Provenance::Manual {
        return Err(DatasetError::NotManual(example.id().to_string()));
    }
    let text = example.text();
    let numbers = find_numbers(text);
    let comparators = find_comparators(text, &config.comparators);
    let swappable: Vec<&ComparatorToken> = comparators
        .iter()
        .filter(|c| config.comparators[c.group].len() > 1)
        .collect();
    if numbers.is_empty() && swappable.is_empty() {
        return Err(DatasetError::NoReplaceableToken(example.id().to_string()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, example.id()));
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(text.to_string());
    let mut children = Vec::with_capacity(n);
    let attempts = n.saturating_mul(config.attempts_per_example.max(1));

    for _ in 0..attempts {
        if children.len() == n {
            break;
        }
        let (use_numbers, use_comparator) = match (numbers.is_empty(), swappable.is_empty()) {
            (false, true) => (true, false),
            (true, false) => (false, true),
            _ => match rng.random_range(0..3) {
                0 => (true, false),
                1 => (false, true),
                _ => (true, true),
            },
        };

        let mut edits = Vec::new();
        if use_numbers {
            let mut picked: Vec<&NumberToken> =
                numbers.iter().filter(|_| rng.random_bool(0.5)).collect();
            if picked.is_empty() {
                picked.push(&numbers[rng.random_range(0..numbers.len())]);
            }
            for token in picked {
                let original = &text[token.start..token.end];
                edits.push(Edit {
                    kind: EditKind::Number,
                    start: token.start,
                    end: token.end,
                    original: original.to_string(),
                    replacement: fresh_number(token, original, config.magnitude_band, &mut rng),
                });
            }
        }
        if use_comparator {
            let token = swappable[rng.random_range(0..swappable.len())];
            let group = &config.comparators[token.group];
            let mut choice = rng.random_range(0..group.len() - 1);
            if choice >= token.phrase {
                choice += 1;
            }
            edits.push(Edit {
                kind: EditKind::Comparator,
                start: token.start,
                end: token.end,
                original: text[token.start..token.end].to_string(),
                replacement: group[choice].clone(),
            });
        }
        edits.sort_by_key(|e| e.start);

        let child_text = apply_edits(text, &edits);
        if exclude.contains(&child_text) || !seen.insert(child_text.clone()) {
            continue;
        }
        let clause = Clause {
            clause_id: child_id(example.id(), &child_text),
            doc_id: example.clause.doc_id.clone(),
            text: child_text,
            span: None,
        };
        children.push(AugmentedClause {
            example: LabeledClause {
                clause,
                label: example.label,
                provenance: Provenance::Augmented,
                parent_id: Some(example.id().to_string()),
            },
            edits,
        });
    }
    Ok(children)
}

/// Generates up to `n` new examples from a manual example by replacing
/// numeric literals and/or one comparator phrase. Deterministic given the
/// seed and the example's clause id.
pub fn augment(
    example: &LabeledClause,
    rng_seed: u64,
    n: usize,
    lexicons: &AugmentConfig,
) -> Result<Vec<LabeledClause>, DatasetError> {
    Ok(augment_traced(example, rng_seed, n, lexicons, &HashSet::new())?
        .into_iter()
        .map(|a| a.example)
        .collect())
}

/// Whether an example has anything augmentation could replace.
pub fn is_augmentable(example: &LabeledClause, config: &AugmentConfig) -> bool {
    !find_numbers(example.text()).is_empty()
        || find_comparators(example.text(), &config.comparators)
            .iter()
            .any(|c| config.comparators[c.group].len() > 1)
}

/// Augments the listed categories until each holds at least `target`
/// examples (or its augmentable parents are exhausted). New texts are
/// deduplicated against the whole dataset.
pub fn augment_to_target(
    ds: &Dataset,
    categories: &[Category],
    target: usize,
    seed: u64,
    config: &AugmentConfig,
) -> Result<Dataset, DatasetError> {
    let mut texts: HashSet<String> = ds.examples().iter().map(|e| e.text().to_string()).collect();
    let mut added: Vec<LabeledClause> = Vec::new();
    let mut wanted: Vec<Category> = categories.to_vec();
    wanted.sort();
    wanted.dedup();

    for category in wanted {
        let have = ds.counts()[category.ordinal()];
        let mut need = target.saturating_sub(have);
        let mut parents: Vec<&LabeledClause> = ds
            .examples()
            .iter()
            .filter(|e| {
                e.label == category && e.provenance == Provenance::Manual && is_augmentable(e, config)
            })
            .collect();
        let mut produced: HashMap<String, usize> = HashMap::new();
        while need > 0 && !parents.is_empty() {
            let share = need / parents.len();
            let extra = need % parents.len();
            let mut exhausted = HashSet::new();
            for (i, parent) in parents.iter().enumerate() {
                let quota = share + usize::from(i < extra);
                if quota == 0 {
                    continue;
                }
                let before = produced.get(parent.id()).copied().unwrap_or(0);
                let children = augment_traced(parent, seed, before + quota, config, &texts)?;
                let fresh = children.len().min(quota);
                if fresh < quota {
                    exhausted.insert(parent.id().to_string());
                }
                for child in children.into_iter().take(fresh) {
                    texts.insert(child.example.text().to_string());
                    added.push(child.example);
                }
                *produced.entry(parent.id().to_string()).or_default() += fresh;
                need -= fresh;
            }
            parents.retain(|p| !exhausted.contains(p.id()));
        }
    }

    let mut examples = ds.examples().to_vec();
    examples.extend(added);
    Dataset::new(examples)
}

// ---------------------------------------------------------------------------
// Splitting

/// Train/validation/test proportions as exact rationals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    ratios: [Ratio<u64>; 3],
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(
        train: Ratio<u64>,
        val: Ratio<u64>,
        test: Ratio<u64>,
        seed: u64,
        stratified: bool,
    ) -> Result<SplitSpec, DatasetError> {
        let ratios = [train, val, test];
        if let Some(r) = ratios.iter().find(|r| **r == Ratio::from_integer(0)) {
            return Err(DatasetError::RatioError(format!("ratio {r} must be positive")));
        }
        let sum = train + val + test;
        if sum != Ratio::from_integer(1) {
            return Err(DatasetError::RatioError(format!(
                "ratios sum to {sum}, not 1"
            )));
        }
        Ok(SplitSpec {
            ratios,
            seed,
            stratified,
        })
    }

    /// Parses ratios written as decimals ("0.8") or fractions ("4/5").
    pub fn parse(
        train: &str,
        val: &str,
        test: &str,
        seed: u64,
        stratified: bool,
    ) -> Result<SplitSpec, DatasetError> {
        SplitSpec::new(
            parse_ratio(train)?,
            parse_ratio(val)?,
            parse_ratio(test)?,
            seed,
            stratified,
        )
    }

    pub fn ratios(&self) -> &[Ratio<u64>; 3] {
        &self.ratios
    }

    /// Part sizes for `n` items: each ratio·n rounded down, with the
    /// remainder handed out one at a time in train, val, test order.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let n64 = n as u64;
        let mut sizes = self.ratios.map(|r| (r * n64).to_integer() as usize);
        let mut remainder = n - sizes.iter().sum::<usize>();
        let mut part = 0;
        while remainder > 0 {
            sizes[part % 3] += 1;
            remainder -= 1;
            part += 1;
        }
        sizes
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::new(Ratio::new(4, 5), Ratio::new(1, 10), Ratio::new(1, 10), 0, false)
            .expect("valid default")
    }
}

/// Exact rational from "0.8", "4/5" or "1".
pub fn parse_ratio(s: &str) -> Result<Ratio<u64>, DatasetError> {
    let s = s.trim();
    let bad = || DatasetError::RatioError(format!("cannot parse ratio {s:?}"));
    if let Some((num, den)) = s.split_once('/') {
        let num: u64 = num.trim().parse().map_err(|_| bad())?;
        let den: u64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(num, den));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if (int.is_empty() && frac.is_empty())
        || !int.chars().all(|c| c.is_ascii_digit())
        || !frac.chars().all(|c| c.is_ascii_digit())
        || frac.len() > 18
    {
        return Err(bad());
    }
    let den = 10u64.pow(frac.len() as u32);
    let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    Ok(Ratio::new(int * den + frac, den))
}

/// Randomly partitions a dataset into train, validation and test parts.
/// Each part keeps the input order of its members.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), DatasetError> {
    if ds.len() < 10 {
        return Err(DatasetError::TooSmall(ds.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();

    let pools: Vec<Vec<usize>> = if spec.stratified {
        Category::ALL
            .iter()
            .map(|&c| {
                ds.examples()
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.label == c)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect()
    } else {
        vec![(0..ds.len()).collect()]
    };

    for mut pool in pools {
        pool.shuffle(&mut rng);
        let [train, val, _] = spec.sizes(pool.len());
        parts[0].extend_from_slice(&pool[..train]);
        parts[1].extend_from_slice(&pool[train..train + val]);
        parts[2].extend_from_slice(&pool[train + val..]);
    }

    let build = |mut idx: Vec<usize>| {
        idx.sort_unstable();
        Dataset::new(idx.into_iter().map(|i| ds.examples()[i].clone()).collect())
    };
    let [train, val, test] = parts;
    Ok((build(train)?, build(val)?, build(test)?))
}

// ---------------------------------------------------------------------------
// Import of tab-separated datasets

/// Maps source label names to categories for one-time imports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping(pub BTreeMap<String, Category>);

impl Default for LabelMapping {
    fn default() -> Self {
        let mut map: BTreeMap<String, Category> =
            Category::ALL.iter().map(|c| (c.as_str().to_string(), *c)).collect();
        map.insert("others".into(), Category::Other);
        map.insert("terms".into(), Category::Term);
        LabelMapping(map)
    }
}

impl LabelMapping {
    pub fn resolve(&self, label: &str) -> Option<Category> {
        let key = label.trim();
        self.0
            .get(key)
            .or_else(|| self.0.get(&key.to_lowercase()))
            .copied()
    }
}

/// Reads `text<TAB>label` lines. `label` is either a name resolved through
/// `mapping`, or an integer index into `class_names` (whose entries are
/// then resolved through `mapping`). Every row becomes a manual example
/// with id `<prefix>:<line>`.
pub fn import_tsv(
    path: &Path,
    prefix: &str,
    class_names: &[String],
    mapping: &LabelMapping,
) -> Result<Vec<LabeledClause>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{}", path.display(), i + 1);
        let (body, label) = line.rsplit_once('\t').ok_or_else(|| DatasetError::UnknownLabel {
            label: String::new(),
            location: location.clone(),
        })?;
        let name = match label.trim().parse::<usize>() {
            Ok(idx) if !class_names.is_empty() => class_names
                .get(idx)
                .map(String::as_str)
                .ok_or_else(|| DatasetError::UnknownLabel {
                    label: label.to_string(),
                    location: location.clone(),
                })?,
            _ => label,
        };
        let category = mapping.resolve(name).ok_or_else(|| DatasetError::UnknownLabel {
            label: name.to_string(),
            location: location.clone(),
        })?;
        let id = format!("{prefix}:{}", i + 1);
        let clause = Clause::new(id.clone(), prefix, body).ok_or(DatasetError::EmptyText(id))?;
        out.push(LabeledClause::manual(clause, category));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, text: &str, label: Category) -> LabeledClause {
        LabeledClause::manual(Clause::new(id, "d", text).unwrap(), label)
    }

    #[test]
    fn numbers_are_found_with_shape() {
        let t = "3.2.1 The span should not be greater than 150 m and 1.10 m, see GB50016 Table 3.2.7.";
        let found = find_numbers(t);
        let got: Vec<(&str, Option<usize>)> = found
            .iter()
            .map(|n| (&t[n.start..n.end], n.decimals))
            .collect();
        assert_eq!(got, vec![("150", None), ("1.10", Some(2))]);
    }

    #[test]
    fn longest_comparator_wins() {
        let groups = AugmentConfig::default().comparators;
        let t = "其高度不宜小于2m，且不小于1.5m";
        let found = find_comparators(t, &groups);
        let phrases: Vec<&str> = found.iter().map(|c| &t[c.start..c.end]).collect();
        assert_eq!(phrases, vec!["小于", "不小于"]);

        let t = "should be not less than 2 m but less than 5 m; nevertheless than";
        let found = find_comparators(t, &groups);
        let phrases: Vec<&str> = found.iter().map(|c| &t[c.start..c.end]).collect();
        assert_eq!(phrases, vec!["not less than", "less than"]);
    }

    #[test]
    fn value_replacement_keeps_everything_else() {
        let parent = ex(
            "w1",
            "The span of a single-story warehouse should not be greater than 150 m",
            Category::Direct,
        );
        let kids = augment(&parent, 7, 5, &AugmentConfig::default()).unwrap();
        assert_eq!(kids.len(), 5);
        for kid in &kids {
            let prefix = "The span of a single-story warehouse should not be greater than ";
            assert!(kid.text().starts_with(prefix));
            assert!(kid.text().ends_with(" m"));
            let value: i64 = kid.text()[prefix.len()..kid.text().len() - 2].parse().unwrap();
            assert!((15..=1500).contains(&value) && value != 150);
            assert_eq!(kid.label, Category::Direct);
            assert_eq!(kid.provenance, Provenance::Augmented);
            assert_eq!(kid.parent_id.as_deref(), Some("w1"));
        }
    }

    #[test]
    fn comparator_swap_example() {
        let parent = ex("r1", "The height of the rail should not be less than 1.1 m", Category::Direct);
        let traced = augment_traced(&parent, 3, 30, &AugmentConfig::default(), &HashSet::new()).unwrap();
        assert!(traced.iter().any(|a| a.example.text()
            == "The height of the rail should not be more than 1.1 m"));
        for a in &traced {
            for e in a.edits.iter().filter(|e| e.kind == EditKind::Number) {
                assert_eq!(e.original, "1.1");
                assert_eq!(e.replacement.split('.').nth(1).map(str::len), Some(1));
            }
        }
    }

    #[test]
    fn zero_requested_is_empty_and_unsuitable_is_an_error() {
        let parent = ex("a", "Doors should meet the requirements for use", Category::General);
        assert!(matches!(
            augment(&parent, 0, 3, &AugmentConfig::default()),
            Err(DatasetError::NoReplaceableToken(_))
        ));
        let parent = ex("b", "The wall height is 2 m", Category::Direct);
        assert!(augment(&parent, 0, 0, &AugmentConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn augmented_examples_cannot_be_augmented() {
        let parent = ex("b", "The wall height is 2 m", Category::Direct);
        let kid = augment(&parent, 1, 1, &AugmentConfig::default()).unwrap().remove(0);
        assert!(matches!(
            augment(&kid, 1, 1, &AugmentConfig::default()),
            Err(DatasetError::NotManual(_))
        ));
    }

    #[test]
    fn dataset_rejects_duplicates_and_bad_lineage() {
        let a = ex("a", "x 1", Category::Direct);
        assert!(matches!(
            Dataset::new(vec![a.clone(), a.clone()]),
            Err(DatasetError::DuplicateId(_))
        ));
        let mut kid = augment(&a, 0, 1, &AugmentConfig::default()).unwrap().remove(0);
        kid.label = Category::Term;
        assert!(matches!(
            Dataset::new(vec![a.clone(), kid.clone()]),
            Err(DatasetError::LabelMismatch { .. })
        ));
        kid.label = Category::Direct;
        let orphan = Dataset::new(vec![kid.clone()]).unwrap();
        assert!(matches!(orphan.check_lineage(), Err(DatasetError::MissingParent { .. })));
        kid.parent_id = None;
        assert!(matches!(Dataset::new(vec![kid]), Err(DatasetError::Provenance(_))));
    }

    #[test]
    fn balance_report_counts_by_provenance() {
        assert_eq!(balance_report(&Dataset::default()).total(), 0);
        let a = ex("a", "wall height 2 m", Category::Direct);
        let b = ex("b", "terms", Category::Term);
        let kids = augment(&a, 0, 2, &AugmentConfig::default()).unwrap();
        let mut all = vec![a, b];
        all.extend(kids);
        let report = balance_report(&Dataset::new(all).unwrap());
        assert_eq!(report.total(), 4);
        assert_eq!(report.manual[&Category::Direct], 1);
        assert_eq!(report.augmented[&Category::Direct], 2);
        assert_eq!(report.combined(Category::Term), 1);
    }

    #[test]
    fn augment_to_target_fills_classes_without_duplicates() {
        let mut examples = vec![
            ex("d1", "The height should not be less than 2 m", Category::Direct),
            ex("d2", "The width is 3.5 m", Category::Direct),
        ];
        for i in 0..6 {
            examples.push(ex(&format!("t{i}"), &format!("Term {i}: meaning"), Category::Term));
        }
        let ds = Dataset::new(examples).unwrap();
        let grown = augment_to_target(&ds, &[Category::Direct], 6, 11, &AugmentConfig::default()).unwrap();
        assert_eq!(grown.counts()[Category::Direct.ordinal()], 6);
        assert_eq!(grown.len(), 12);
        grown.check_lineage().unwrap();
        let texts: HashSet<&str> = grown.texts().into_iter().collect();
        assert_eq!(texts.len(), grown.len());
        let again = augment_to_target(&ds, &[Category::Direct], 6, 11, &AugmentConfig::default()).unwrap();
        assert_eq!(again, grown);
    }

    #[test]
    fn ratios_parse_exactly() {
        assert_eq!(parse_ratio("0.8").unwrap(), Ratio::new(4, 5));
        assert_eq!(parse_ratio("1/10").unwrap(), Ratio::new(1, 10));
        assert_eq!(parse_ratio("1").unwrap(), Ratio::from_integer(1));
        assert!(parse_ratio("-0.1").is_err());
        assert!(parse_ratio("abc").is_err());
    }

    #[test]
    fn degenerate_split_specs_are_rejected() {
        assert!(matches!(
            SplitSpec::parse("1", "0", "0", 0, false),
            Err(DatasetError::RatioError(_))
        ));
        assert!(matches!(
            SplitSpec::parse("0.8", "0.1", "0.2", 0, false),
            Err(DatasetError::RatioError(_))
        ));
    }

    #[test]
    fn sizes_hand_remainder_to_train_first() {
        let spec = SplitSpec::default();
        assert_eq!(spec.sizes(1450), [1160, 145, 145]);
        assert_eq!(spec.sizes(11), [9, 1, 1]);
        assert_eq!(spec.sizes(19), [16, 2, 1]);
        let thirds = SplitSpec::parse("1/3", "1/3", "1/3", 0, false).unwrap();
        assert_eq!(thirds.sizes(11), [4, 4, 3]);
    }

    #[test]
    fn small_datasets_cannot_be_split() {
        let ds = Dataset::new((0..9).map(|i| ex(&i.to_string(), "t", Category::Term)).collect()).unwrap();
        assert!(matches!(split(&ds, &SplitSpec::default()), Err(DatasetError::TooSmall(9))));
    }

    #[test]
    fn stratified_split_follows_ratios_per_class() {
        let mut examples = Vec::new();
        for (k, c) in Category::ALL.iter().enumerate() {
            for i in 0..(10 + 10 * k) {
                examples.push(ex(&format!("{c}{i}"), "t", *c));
            }
        }
        let ds = Dataset::new(examples).unwrap();
        let spec = SplitSpec::parse("0.8", "0.1", "0.1", 5, true).unwrap();
        let (train, val, test) = split(&ds, &spec).unwrap();
        for c in Category::ALL {
            let n = ds.counts()[c.ordinal()];
            let [a, b, d] = spec.sizes(n);
            assert_eq!(train.counts()[c.ordinal()], a);
            assert_eq!(val.counts()[c.ordinal()], b);
            assert_eq!(test.counts()[c.ordinal()], d);
        }
    }

    #[test]
    fn tsv_import_with_class_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.txt");
        fs::write(&path, "厂区周围宜设围墙，其高度不宜小于2m。\t0\n用水量：用户所消耗的水量。\t2\n").unwrap();
        let classes: Vec<String> = ["direct", "general", "terms"].map(String::from).to_vec();
        let rows = import_tsv(&path, "train", &classes, &LabelMapping::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].label, Category::Direct);
        assert_eq!(rows[1].label, Category::Term);
        assert_eq!(rows[1].id(), "train:2");

        fs::write(&path, "文本\t9\n").unwrap();
        assert!(import_tsv(&path, "train", &classes, &LabelMapping::default()).is_err());
    }

    #[test]
    fn jsonl_round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let original = concat!(
            r#"{"clause_id":"a","doc_id":"d","text":"wall height 2 m","label":"direct","provenance":"manual","parent_id":null}"#,
            "\n",
            r#"{"clause_id":"a~1","doc_id":"d","text":"wall height 7 m","label":"direct","provenance":"augmented","parent_id":"a"}"#,
            "\n"
        );
        fs::write(&path, original).unwrap();
        let ds = Dataset::load_jsonl(&path).unwrap();
        ds.check_lineage().unwrap();
        let out = dir.path().join("out.jsonl");
        ds.save_jsonl(&out).unwrap();
        assert_eq!(fs::read_to_string(out).unwrap(), original);
    }
}
