//! One function per subcommand.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use codeinterp::aripipe::{self, MockInterpreter};
use codeinterp::classify::{self, Backend, BackendConfig, ClassifierModel, DomainCorpus, Family, LocalResolver, ModelManifest};
use codeinterp::corpus::{self, Clause, Cleaner, Segmenter};
use codeinterp::dataset::{self, AugmentConfig, Dataset, LabelMapping, SplitSpec};
use codeinterp::metrics::{self, EvalReport};
use codeinterp::ngram::NgramBackend;
use codeinterp::score::{self, RowKey, DEFAULT_HIGHLY_INTERPRETABLE_PCT};
use codeinterp::taxonomy::Category;
use codeinterp_neural::{NeuralBackend, PretrainConfig};

use crate::config::{must_exist, require, LoadedConfig};
use crate::run::RunDir;
use crate::svg::{BarChart, Series};
use crate::{
    AugmentArgs, EvalArgs, FilterArgs, ImportArgs, IngestArgs, PredictArgs, PretrainArgs, ReportArgs, ScoreArgs,
    SplitArgs, TrainArgs, UsageError,
};

/// State shared by every command.
pub struct Context {
    pub config: LoadedConfig,
    pub seed: u64,
}

impl Context {
    fn checkpoint_roots(&self, flags: &[PathBuf]) -> Vec<PathBuf> {
        let mut roots = flags.to_vec();
        roots.extend(self.config.config.checkpoint_roots.iter().cloned());
        roots
    }
}

/// One classified clause as written by `predict` and read by `score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clause_id: String,
    pub doc_id: String,
    /// Labeled datasets can be scored directly through their `label` field.
    #[serde(alias = "label")]
    pub category: Category,
    #[serde(default)]
    pub confidence: Option<f64>,
}

/// Directory that holds the lock and manifest for a single output file.
fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn file_name(file: &Path) -> anyhow::Result<String> {
    file.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| UsageError(format!("{} is not a file path", file.display())).into())
}

fn parse_categories(names: &[String]) -> anyhow::Result<Vec<Category>> {
    names
        .iter()
        .map(|n| n.trim().parse::<Category>().map_err(|e| UsageError(e.to_string()).into()))
        .collect()
}

fn load_dataset(path: &Path, what: &str) -> anyhow::Result<Dataset> {
    must_exist(path, what)?;
    Ok(Dataset::load_jsonl(path)?)
}

fn load_model(ctx: &Context, dir: &Path) -> anyhow::Result<ClassifierModel> {
    must_exist(dir, "model directory")?;
    let manifest = ModelManifest::read(dir)?;
    let backend = backend_for(ctx, manifest.family, &[])?;
    Ok(ClassifierModel::load(dir, backend.as_ref())?)
}

fn backend_for(ctx: &Context, family: Family, roots: &[PathBuf]) -> anyhow::Result<Box<dyn Backend>> {
    Ok(match family {
        Family::NgramLinear => Box::new(NgramBackend),
        f => Box::new(NeuralBackend::new(f, Box::new(LocalResolver::new(ctx.checkpoint_roots(roots))))?),
    })
}

fn print_balance(ds: &Dataset) {
    let report = dataset::balance_report(ds);
    println!("{:<10} {:>8} {:>10} {:>8}", "category", "manual", "augmented", "total");
    for c in Category::ALL {
        println!(
            "{:<10} {:>8} {:>10} {:>8}",
            c.as_str(),
            report.manual[&c],
            report.augmented[&c],
            report.combined(c)
        );
    }
    println!("{:<10} {:>8} {:>10} {:>8}", "all", report.manual.values().sum::<usize>(), report.augmented.values().sum::<usize>(), report.total());
}

// ---------------------------------------------------------------------------

pub fn ingest(ctx: &Context, a: IngestArgs) -> anyhow::Result<()> {
    let section = &ctx.config.config.ingest;
    let input = require(a.input, section.input_dir.clone(), "in")?;
    let meta_path = require(a.meta, section.meta.clone(), "meta")?;
    let out = require(a.out, section.out.clone(), "out")?;
    must_exist(&input, "input directory")?;
    must_exist(&meta_path, "metadata file")?;
    let pattern = a.provision_pattern.or_else(|| section.provision_pattern.clone());
    let cleaning = ctx.config.config.cleaning.clone().unwrap_or_default();

    let docs = corpus::list_documents(&input)?;
    if docs.is_empty() {
        return Err(UsageError(format!("no documents (*.txt) in {}", input.display())).into());
    }
    let metas = corpus::load_metadata(&meta_path)?;
    let cleaner = Cleaner::new(&cleaning).map_err(|e| UsageError(e.to_string()))?;
    let segmenter = match &pattern {
        Some(p) => Segmenter::with_pattern(p).map_err(|e| UsageError(e.to_string()))?,
        None => Segmenter::default(),
    };

    let mut run = RunDir::open(&parent_dir(&out), "ingest")?;
    run.input(&input)?;
    run.input(&meta_path)?;
    let mut clauses = Vec::new();
    let mut stats = Vec::new();
    for path in &docs {
        let raw = corpus::load_document(path, &metas)?;
        let (mut found, s) = corpus::ingest_document(&raw, &cleaner, &segmenter)
            .with_context(|| format!("ingesting {}", path.display()))?;
        println!("{}: {} lines, {} kept, {} clauses", s.doc_id, s.raw_lines, s.cleaned_lines, s.clauses);
        clauses.append(&mut found);
        stats.push(s);
    }
    println!("total: {} clauses from {} documents", clauses.len(), docs.len());
    corpus::write_clauses_jsonl(&out, &clauses)?;
    run.output(&out);
    let settings = json!({
        "input_dir": input, "meta": meta_path, "out": out,
        "provision_pattern": pattern.as_deref().unwrap_or(corpus::DEFAULT_PROVISION_PATTERN),
        "cleaning": cleaning,
    });
    let summary = json!({ "documents": stats, "clauses": clauses.len() });
    run.finish(&ctx.config, ctx.seed, &settings, summary)?;
    Ok(())
}

pub fn import(ctx: &Context, a: ImportArgs) -> anyhow::Result<()> {
    let section = &ctx.config.config.import;
    let tsv = require(a.tsv, section.tsv.clone(), "tsv")?;
    let out = require(a.out, section.out.clone(), "out")?;
    must_exist(&tsv, "TSV file")?;
    let prefix = match a.prefix.or_else(|| section.prefix.clone()) {
        Some(p) => p,
        None => tsv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "import".into()),
    };
    let class_names = if a.class_names.is_empty() { section.class_names.clone() } else { a.class_names };
    let mut mapping = LabelMapping::default();
    mapping.0.extend(section.labels.clone());

    let mut run = RunDir::open(&parent_dir(&out), "import")?;
    run.input(&tsv)?;
    let examples = dataset::import_tsv(&tsv, &prefix, &class_names, &mapping)?;
    let ds = Dataset::new(examples)?;
    ds.save_jsonl(&out)?;
    run.output(&out);
    println!("imported {} examples", ds.len());
    print_balance(&ds);
    let settings = json!({ "tsv": tsv, "out": out, "prefix": prefix, "class_names": class_names, "labels": mapping });
    run.finish(&ctx.config, ctx.seed, &settings, json!({ "examples": ds.len(), "counts": ds.counts() }))?;
    Ok(())
}

pub fn augment(ctx: &Context, a: AugmentArgs) -> anyhow::Result<()> {
    let section = &ctx.config.config.augment;
    let data = require(a.data, section.data.clone(), "data")?;
    let out = require(a.out, section.out.clone(), "out")?;
    let ds = load_dataset(&data, "dataset")?;
    let mut cfg = AugmentConfig::default();
    if let Some(band) = section.magnitude_band {
        cfg.magnitude_band = band;
    }
    if let Some(groups) = &section.comparators {
        cfg.comparators = groups.clone();
    }
    if let Some(n) = section.attempts_per_example {
        cfg.attempts_per_example = n;
    }
    let target = a.target.or(section.target).unwrap_or_else(|| ds.counts().iter().copied().max().unwrap_or(0));
    let categories = if !a.categories.is_empty() {
        parse_categories(&a.categories)?
    } else if let Some(c) = &section.categories {
        c.clone()
    } else {
        Category::ALL.into_iter().filter(|c| ds.counts()[c.ordinal()] < target).collect()
    };

    let mut run = RunDir::open(&parent_dir(&out), "augment")?;
    run.input(&data)?;
    let augmented = dataset::augment_to_target(&ds, &categories, target, ctx.seed, &cfg)?;
    augmented.save_jsonl(&out)?;
    run.output(&out);
    println!("added {} examples", augmented.len() - ds.len());
    print_balance(&augmented);
    for c in &categories {
        let have = augmented.counts()[c.ordinal()];
        if have < target {
            log::warn!("{c}: reached {have} of {target}; no further distinct variants");
        }
    }
    let settings = json!({ "data": data, "out": out, "target": target, "categories": categories, "augment": cfg });
    let summary = json!({ "before": ds.len(), "after": augmented.len(), "balance": dataset::balance_report(&augmented) });
    run.finish(&ctx.config, ctx.seed, &settings, summary)?;
    Ok(())
}

pub fn split(ctx: &Context, a: SplitArgs) -> anyhow::Result<()> {
    let section = &ctx.config.config.split;
    let data = require(a.data, section.data.clone(), "data")?;
    let out_dir = require(a.out_dir, section.out_dir.clone(), "out-dir")?;
    let ratios: [String; 3] = if !a.ratios.is_empty() {
        a.ratios
            .try_into()
            .map_err(|_| UsageError("--ratios needs exactly three values".into()))?
    } else {
        section.ratios.clone().unwrap_or_else(|| ["0.8".into(), "0.1".into(), "0.1".into()])
    };
    let stratified = a.stratified || section.stratified.unwrap_or(false);
    let spec = SplitSpec::parse(&ratios[0], &ratios[1], &ratios[2], ctx.seed, stratified)?;
    let ds = load_dataset(&data, "dataset")?;

    let mut run = RunDir::open(&out_dir, "split")?;
    run.input(&data)?;
    let (train, val, test) = dataset::split(&ds, &spec)?;
    for (name, part) in [("train.jsonl", &train), ("val.jsonl", &val), ("test.jsonl", &test)] {
        let path = run.path(name);
        part.save_jsonl(&path)?;
        run.output(&path);
    }
    println!("train {} / val {} / test {}", train.len(), val.len(), test.len());
    let settings = json!({ "data": data, "out_dir": out_dir, "ratios": ratios, "stratified": stratified });
    let summary = json!({ "train": train.len(), "val": val.len(), "test": test.len() });
    run.finish(&ctx.config, ctx.seed, &settings, summary)?;
    Ok(())
}

pub fn train(ctx: &Context, a: TrainArgs) -> anyhow::Result<()> {
    let section = &ctx.config.config.train;
    let train_path = require(a.train, section.train.clone(), "train")?;
    let val_path = require(a.val, section.val.clone(), "val")?;
    let out = require(a.out, section.out.clone(), "out")?;
    let family = match a.family {
        Some(f) => f.parse::<Family>()?,
        None => section.family.unwrap_or(Family::PretrainedEncoder),
    };
    let mut cfg = BackendConfig::for_family(family);
    cfg.seed = ctx.seed;
    if let Some(c) = a.checkpoint.or_else(|| section.checkpoint_id.clone()) {
        cfg.checkpoint_id = Some(c);
    }
    if let Some(n) = a.epochs.or(section.epochs) {
        cfg.epochs = n;
    }
    if let Some(n) = a.padding_size.or(section.padding_size) {
        cfg.padding_size = n;
    }
    if let Some(n) = a.batch_size.or(section.batch_size) {
        cfg.batch_size = n;
    }
    if !a.lr_grid.is_empty() {
        cfg.learning_rate_grid = a.lr_grid;
    } else if let Some(g) = &section.learning_rate_grid {
        cfg.learning_rate_grid = g.clone();
    }
    if !a.ngram_range.is_empty() {
        cfg.ngram_range = a
            .ngram_range
            .try_into()
            .map_err(|_| UsageError("--ngram-range needs exactly two values".into()))?;
    } else if let Some(r) = section.ngram_range {
        cfg.ngram_range = r;
    }
    if let Some(p) = a.pretrained_embeddings.or_else(|| section.pretrained_embeddings.clone()) {
        must_exist(&p, "embedding file")?;
        cfg.pretrained_embeddings = Some(p);
    }
    cfg.validate()?;

    let train_set = load_dataset(&train_path, "training set")?;
    let val_set = load_dataset(&val_path, "validation set")?;
    let backend = backend_for(ctx, family, &a.checkpoint_root)?;

    let mut run = RunDir::open(&out, "train")?;
    run.input(&train_path)?;
    run.input(&val_path)?;
    let model = classify::train(backend.as_ref(), &cfg, &train_set, &val_set)?;
    model.save(&out)?;
    run.output(&out.join(classify::MANIFEST_FILE));
    run.output(&out.join(classify::LOG_FILE));
    let m = &model.manifest;
    let val_f1 = m.metrics.get("val_weighted_f1").copied().unwrap_or(0.0);
    println!(
        "{}: best lr {:e} at epoch {}, validation weighted F1 {:.2}%",
        m.family,
        m.winning_lr,
        m.winning_epoch,
        val_f1 * 100.0
    );
    for w in &model.log.warnings {
        println!("warning: {w}");
    }
    let summary = json!({
        "winning_lr": m.winning_lr,
        "winning_epoch": m.winning_epoch,
        "val_weighted_f1": val_f1,
        "warnings": model.log.warnings,
    });
    run.finish(&ctx.config, ctx.seed, &cfg, summary)?;
    Ok(())
}

fn print_eval(report: &EvalReport) {
    println!("{:<10} {:>9} {:>9} {:>9} {:>8}", "category", "precision", "recall", "f1", "support");
    for c in &report.classes {
        println!(
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            c.category.as_str(),
            c.precision,
            c.recall,
            c.f1,
            c.support
        );
    }
    println!("weighted F1: {}", report.headline());
}

pub fn eval(ctx: &Context, a: EvalArgs) -> anyhow::Result<()> {
    let model = load_model(ctx, &a.model)?;
    let ds = load_dataset(&a.data, "dataset")?;
    let preds: Vec<Category> = model.predict(&ds.texts())?.into_iter().map(|p| p.category).collect();
    let report = metrics::evaluate(&preds, &ds.labels())?;
    print_eval(&report);
    if let Some(dir) = a.out_dir {
        let mut run = RunDir::open(&dir, "eval")?;
        run.input(&a.model)?;
        run.input(&a.data)?;
        run.write_json("eval.json", &report)?;
        run.write("eval.csv", report.to_csv())?;
        let settings = json!({ "model": a.model, "data": a.data, "family": model.manifest.family });
        run.finish(&ctx.config, ctx.seed, &settings, json!({ "weighted_f1": report.weighted_f1 }))?;
    }
    Ok(())
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

fn to_jsonl<T: Serialize>(items: &[T]) -> anyhow::Result<String> {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn predict(ctx: &Context, a: PredictArgs) -> anyhow::Result<()> {
    let mut clauses: Vec<Clause> = Vec::new();
    let free = |i: usize, text: &str| Clause::new(format!("input:{}", i + 1), "input", text);
    let mut texts = a.text.clone();
    if let Some(path) = &a.input {
        must_exist(path, "input file")?;
        texts.extend(read_lines(path)?);
    }
    for (i, t) in texts.iter().enumerate() {
        clauses.push(free(i, t).ok_or_else(|| UsageError(format!("text {} is empty", i + 1)))?);
    }
    if let Some(path) = &a.clauses {
        must_exist(path, "clauses file")?;
        clauses.extend(corpus::read_clauses_jsonl(path)?);
    }
    if clauses.is_empty() {
        return Err(UsageError("nothing to classify; pass --text, --input or --clauses".into()).into());
    }
    let model = load_model(ctx, &a.model)?;
    let refs: Vec<&str> = clauses.iter().map(|c| c.text.as_str()).collect();
    let preds = model.predict(&refs)?;
    let records: Vec<PredictionRecord> = clauses
        .iter()
        .zip(&preds)
        .map(|(c, p)| PredictionRecord {
            clause_id: c.clause_id.clone(),
            doc_id: c.doc_id.clone(),
            category: p.category,
            confidence: Some(p.confidence),
        })
        .collect();

    match &a.out {
        Some(out) => {
            let mut run = RunDir::open(&parent_dir(out), "predict")?;
            run.input(&a.model)?;
            for p in [&a.input, &a.clauses].into_iter().flatten() {
                run.input(p)?;
            }
            run.write(&file_name(out)?, to_jsonl(&records)?)?;
            let mut counts = BTreeMap::new();
            for r in &records {
                *counts.entry(r.category).or_insert(0usize) += 1;
            }
            println!("{} predictions written to {}", records.len(), out.display());
            let settings = json!({ "model": a.model, "texts": a.text, "input": a.input, "clauses": a.clauses, "out": out });
            run.finish(&ctx.config, ctx.seed, &settings, json!({ "predictions": records.len(), "counts": counts }))?;
        }
        None => {
            for r in &records {
                println!("{}", r.category);
            }
        }
    }
    Ok(())
}

/// Reads a predictions JSONL file, or every `*.jsonl` file of a directory
/// in name order.
pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<PredictionRecord>> {
    must_exist(path, "predictions")?;
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for f in files {
        for (i, line) in fs::read_to_string(&f)
            .with_context(|| format!("reading {}", f.display()))?
            .lines()
            .enumerate()
        {
            if line.trim().is_empty() {
                continue;
            }
            let rec: PredictionRecord =
                serde_json::from_str(line).with_context(|| format!("{}:{}", f.display(), i + 1))?;
            out.push(rec);
        }
    }
    if out.is_empty() {
        anyhow::bail!("no predictions found in {}", path.display());
    }
    Ok(out)
}

fn document_scores(records: &[PredictionRecord]) -> anyhow::Result<Vec<score::DocumentScore>> {
    let mut by_doc: BTreeMap<&str, Vec<Category>> = BTreeMap::new();
    for r in records {
        by_doc.entry(&r.doc_id).or_default().push(r.category);
    }
    by_doc
        .into_iter()
        .map(|(doc, cats)| Ok(score::score_document(doc, &cats)?))
        .collect()
}

fn threshold(ctx: &Context, flag: Option<f64>) -> anyhow::Result<f64> {
    let t = flag
        .or(ctx.config.config.score.threshold_pct)
        .unwrap_or(DEFAULT_HIGHLY_INTERPRETABLE_PCT);
    if !(0.0..=100.0).contains(&t) {
        return Err(UsageError(format!("threshold {t} is outside [0, 100]")).into());
    }
    Ok(t)
}

pub fn score(ctx: &Context, a: ScoreArgs) -> anyhow::Result<()> {
    let threshold = threshold(ctx, a.threshold)?;
    must_exist(&a.meta, "metadata file")?;
    let records = read_predictions(&a.predictions)?;
    let metas = corpus::load_metadata(&a.meta)?;
    let scores = document_scores(&records)?;
    let report = score::aggregate(&scores, &metas, threshold)?;

    let mut run = RunDir::open(&a.out_dir, "score")?;
    run.input(&a.predictions)?;
    run.input(&a.meta)?;
    run.write("document_scores.csv", score::document_scores_csv(&scores))?;
    run.write("corpus_report.csv", report.to_csv())?;
    run.write_json("corpus_report.json", &report)?;
    print!("{}", report.to_csv());
    let settings = json!({ "predictions": a.predictions, "meta": a.meta, "threshold_pct": threshold });
    run.finish(&ctx.config, ctx.seed, &settings, json!({ "documents": scores.len(), "clauses": records.len() }))?;
    Ok(())
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn eval_path(spec: &str) -> anyhow::Result<(String, PathBuf)> {
    let (name, path) = spec
        .split_once('=')
        .ok_or_else(|| UsageError(format!("--eval {spec:?} is not NAME=PATH")))?;
    if name.is_empty() || name.contains(',') {
        return Err(UsageError(format!("--eval {spec:?} needs a name without commas")).into());
    }
    let mut path = PathBuf::from(path);
    if path.is_dir() {
        path = path.join("eval.json");
    }
    must_exist(&path, "eval report")?;
    Ok((name.to_string(), path))
}

pub fn report(ctx: &Context, a: ReportArgs) -> anyhow::Result<()> {
    let out_dir = require(a.out_dir, ctx.config.config.report.out_dir.clone(), "out-dir")?;
    if a.data.is_none() && a.evals.is_empty() && a.predictions.is_none() {
        return Err(UsageError("nothing to report; pass --data, --eval or --predictions".into()).into());
    }
    if a.predictions.is_some() != a.meta.is_some() {
        return Err(UsageError("--predictions and --meta go together".into()).into());
    }
    let evals = a.evals.iter().map(|s| eval_path(s)).collect::<anyhow::Result<Vec<_>>>()?;
    let names: BTreeSet<&str> = evals.iter().map(|(n, _)| n.as_str()).collect();
    if names.len() != evals.len() {
        return Err(UsageError("--eval names must be distinct".into()).into());
    }
    let threshold = threshold(ctx, a.threshold)?;

    let mut run = RunDir::open(&out_dir, "report")?;
    let mut summary = serde_json::Map::new();

    if let Some(data) = &a.data {
        let ds = load_dataset(data, "dataset")?;
        run.input(data)?;
        let balance = dataset::balance_report(&ds);
        let rows: Vec<Vec<String>> = Category::ALL
            .iter()
            .map(|c| {
                vec![
                    c.as_str().to_string(),
                    balance.manual[c].to_string(),
                    balance.augmented[c].to_string(),
                    balance.combined(*c).to_string(),
                ]
            })
            .collect();
        run.write("class_distribution.csv", csv_text(&["category", "manual", "augmented", "total"], &rows))?;
        let chart = BarChart {
            title: "Clauses per category".into(),
            y_label: "clauses".into(),
            categories: Category::ALL.iter().map(|c| c.as_str().to_string()).collect(),
            series: vec![
                Series { name: "manual".into(), values: Category::ALL.iter().map(|c| balance.manual[c] as f64).collect() },
                Series { name: "augmented".into(), values: Category::ALL.iter().map(|c| balance.augmented[c] as f64).collect() },
            ],
            stacked: true,
            y_max: None,
            decimals: 0,
        };
        run.write("class_distribution.svg", chart.render())?;
        summary.insert("examples".into(), json!(ds.len()));
    }

    if !evals.is_empty() {
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (name, path) in &evals {
            run.input(path)?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            rows.push(vec![name.clone(), format!("{:.2}", report.weighted_f1 * 100.0), report.total.to_string()]);
            values.push(report.weighted_f1 * 100.0);
        }
        run.write("model_comparison.csv", csv_text(&["model", "weighted_f1_pct", "test_examples"], &rows))?;
        let chart = BarChart {
            title: "Weighted F1 by model".into(),
            y_label: "weighted F1 (%)".into(),
            categories: evals.iter().map(|(n, _)| n.clone()).collect(),
            series: vec![Series { name: "weighted F1".into(), values }],
            stacked: false,
            y_max: Some(100.0),
            decimals: 2,
        };
        run.write("model_comparison.svg", chart.render())?;
        summary.insert("models".into(), json!(evals.len()));
    }

    if let (Some(pred), Some(meta)) = (&a.predictions, &a.meta) {
        must_exist(meta, "metadata file")?;
        let records = read_predictions(pred)?;
        run.input(pred)?;
        run.input(meta)?;
        let metas = corpus::load_metadata(meta)?;
        let scores = document_scores(&records)?;
        let report = score::aggregate(&scores, &metas, threshold)?;
        run.write("document_scores.csv", score::document_scores_csv(&scores))?;
        run.write("corpus_report.csv", report.to_csv())?;
        run.write_json("corpus_report.json", &report)?;
        let label = |k: &RowKey| match k {
            RowKey::All => "all".to_string(),
            _ => format!("{} {}", k.domain_label(), k.level_label()),
        };
        let chart = BarChart {
            title: "Machine interpretability".into(),
            y_label: "interpretability (%)".into(),
            categories: report.rows.iter().map(|r| label(&r.key)).collect(),
            series: vec![
                Series {
                    name: "clause-weighted".into(),
                    values: report.rows.iter().map(|r| r.interp_clause_weighted_pct).collect(),
                },
                Series {
                    name: "code mean".into(),
                    values: report.rows.iter().map(|r| r.interp_code_mean_pct).collect(),
                },
            ],
            stacked: false,
            y_max: Some(100.0),
            decimals: 2,
        };
        run.write("interpretability.svg", chart.render())?;
        print!("{}", report.to_csv());
        summary.insert("documents".into(), json!(scores.len()));
    }

    let settings = json!({
        "data": a.data, "evals": a.evals, "predictions": a.predictions, "meta": a.meta,
        "threshold_pct": threshold,
    });
    println!("report written to {}", out_dir.display());
    run.finish(&ctx.config, ctx.seed, &settings, serde_json::Value::Object(summary))?;
    Ok(())
}

pub fn filter_exp(ctx: &Context, a: FilterArgs) -> anyhow::Result<()> {
    must_exist(&a.clauses, "clauses file")?;
    must_exist(&a.interpreter, "interpreter script")?;
    let clauses = corpus::read_clauses_jsonl(&a.clauses)?;
    let interpreter = MockInterpreter::from_jsonl(&a.interpreter)?;

    let mut run = RunDir::open(&a.out_dir, "filter-exp")?;
    run.input(&a.clauses)?;
    run.input(&a.interpreter)?;
    let report = match (&a.model, &a.predictions) {
        (Some(model_dir), None) => {
            let model = load_model(ctx, model_dir)?;
            run.input(model_dir)?;
            aripipe::run_filter_experiment(&clauses, &model, &interpreter)?
        }
        (None, Some(pred)) => {
            let records = read_predictions(pred)?;
            run.input(pred)?;
            let by_id: BTreeMap<&str, Category> = records.iter().map(|r| (r.clause_id.as_str(), r.category)).collect();
            let cats = clauses
                .iter()
                .map(|c| {
                    by_id
                        .get(c.clause_id.as_str())
                        .copied()
                        .ok_or_else(|| anyhow::anyhow!("no prediction for clause {}", c.clause_id))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            aripipe::run_filter_experiment_with_predictions(&clauses, &cats, &interpreter)?
        }
        _ => return Err(UsageError("pass exactly one of --model or --predictions".into()).into()),
    };
    run.write_json("filter_report.json", &report)?;
    run.write("filter_report.csv", report.to_csv())?;
    print!("{}", report.to_csv());
    let settings = json!({ "clauses": a.clauses, "model": a.model, "predictions": a.predictions, "interpreter": a.interpreter });
    let summary = json!({ "pct_before": report.pct_before_rounded, "pct_after": report.pct_after_rounded });
    run.finish(&ctx.config, ctx.seed, &settings, summary)?;
    Ok(())
}

pub fn pretrain(ctx: &Context, a: PretrainArgs) -> anyhow::Result<()> {
    let mut cfg: PretrainConfig = ctx.config.config.pretrain.clone().unwrap_or_default();
    cfg.seed = ctx.seed;
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.max_len {
        cfg.max_len = v;
    }
    if let Some(v) = a.mask_prob {
        cfg.mask_prob = v;
    }
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    if let Some(v) = a.min_lines {
        cfg.min_lines = v;
    }
    cfg.validate()?;
    let checkpoint = a
        .checkpoint
        .or_else(|| ctx.config.config.train.checkpoint_id.clone())
        .unwrap_or_else(|| classify::DEFAULT_CHECKPOINT.to_string());
    must_exist(&a.corpus, "corpus file")?;
    let corpus = DomainCorpus::load(&a.corpus)?;
    let resolver = LocalResolver::new(ctx.checkpoint_roots(&a.checkpoint_root));

    let mut run = RunDir::open(&a.out, "pretrain")?;
    run.input(&a.corpus)?;
    let report = codeinterp_neural::further_pretrain(&resolver, &checkpoint, &corpus, &cfg, &a.out)?;
    run.output(&a.out);
    println!(
        "{} steps over {} lines; final epoch loss {:.4}",
        report.steps,
        report.corpus_lines,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    let settings = json!({ "checkpoint": checkpoint, "corpus": a.corpus, "out": a.out, "pretrain": cfg });
    run.finish(&ctx.config, ctx.seed, &settings, serde_json::to_value(&report)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_records_accept_dataset_lines() {
        let line = r#"{"clause_id":"a:1","doc_id":"a","text":"x","label":"term","provenance":"manual","parent_id":null}"#;
        let r: PredictionRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.category, Category::Term);
        assert_eq!(r.confidence, None);
    }

    #[test]
    fn eval_specs_need_a_name() {
        assert!(eval_path("no-equals").unwrap_err().downcast_ref::<UsageError>().is_some());
        assert!(eval_path("=x").unwrap_err().downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn scores_group_by_document() {
        let rec = |doc: &str, c| PredictionRecord {
            clause_id: format!("{doc}#x"),
            doc_id: doc.into(),
            category: c,
            confidence: None,
        };
        let scores =
            document_scores(&[rec("b", Category::Direct), rec("a", Category::Other), rec("b", Category::Method)]).unwrap();
        assert_eq!(scores.iter().map(|s| s.doc_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(scores[1].interpretability_pct, 75.0);
    }
}
