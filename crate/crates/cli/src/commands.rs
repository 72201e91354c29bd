use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use log::{info, warn};
use ppi_affinity::ingest::{apply_exclusions, parse_dataset, read_exclusion_list, Dataset, Format};
use ppi_affinity::losses::{LossConfig, RankVariant};
use ppi_affinity::metrics::{evaluate, EvalReport};
use ppi_affinity::regressor::{
    plan_for, predict, train, write_metric_log, AffinityModel, EmbeddingTable, TrainConfig, TrainOutcome,
    CHECKPOINT_META, DEFAULT_HIDDEN,
};
use ppi_affinity::sampler::batch_coverage_report;
use ppi_affinity::splitter::{make_split_with_matrix, DistanceMatrix, SplitAssignment, SplitConfig};
use serde::{Deserialize, Serialize};

use crate::args::{AuditCmd, DataOpts, EvalCmd, EvalSide, FuseCmd, NamedPath, SplitCmd, SplitOpts, TrainCmd, TrainOpts};
use crate::config::{Resolved, RESOLVED_FILE};
use crate::CliError;

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn write_out(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn load_dataset(data: &DataOpts) -> Result<(Dataset, Format), CliError> {
    require_file(&data.dataset, "dataset file")?;
    let format = data.format.unwrap_or_else(|| Format::from_path(&data.dataset));
    let mut dataset = parse_dataset(&data.dataset, format)?;
    if let Some(path) = &data.exclude {
        require_file(path, "exclusion list")?;
        let ids = read_exclusion_list(path)?;
        let excluded = apply_exclusions(&dataset, &ids);
        info!("excluded {} complexes", excluded.removed.len());
        dataset = excluded.dataset;
    }
    if dataset.is_empty() {
        return Err(CliError::Usage(format!("dataset {} has no complexes", data.dataset.display())));
    }
    Ok((dataset, format))
}

fn record_data(resolved: &mut Resolved, data: &DataOpts, format: Format) {
    resolved.set("dataset", data.dataset.display()).set("format", format);
    if let Some(p) = &data.exclude {
        resolved.set("exclude", p.display());
    }
    resolved.set("seed", data.seed);
}

fn split_config(opts: &SplitOpts) -> SplitConfig {
    SplitConfig {
        tau: opts.tau,
        test_ratio: opts.test_ratio,
        cap_factor: opts.cap,
        val_fraction: opts.val_fraction,
    }
}

fn record_split(resolved: &mut Resolved, opts: &SplitOpts) {
    match &opts.split {
        Some(p) => {
            resolved.set("split", p.display());
        }
        None => {
            resolved
                .set("tau", opts.tau)
                .set("test-ratio", opts.test_ratio)
                .set("cap", opts.cap)
                .set("val-fraction", opts.val_fraction);
            if let Some(d) = &opts.cache_dir {
                resolved.set("cache-dir", d.display());
            }
        }
    }
}

/// Load the split named by `--split`, or compute one and save it next to the other outputs.
fn obtain_split(dataset: &Dataset, opts: &SplitOpts, out: &Path) -> Result<SplitAssignment, CliError> {
    if let Some(path) = &opts.split {
        require_file(path, "split file")?;
        let split = SplitAssignment::read(path)?;
        let known: HashSet<String> = dataset.ids().into_iter().collect();
        let mut assigned = 0;
        for id in split.train.iter().chain(&split.validation).chain(&split.test) {
            if !known.contains(id) {
                return Err(CliError::Usage(format!("split {} names unknown id '{id}'", path.display())));
            }
            assigned += 1;
        }
        if assigned < dataset.len() {
            warn!("{} complexes are not assigned by {}", dataset.len() - assigned, path.display());
        }
        return Ok(split);
    }
    let matrix = DistanceMatrix::load_or_compute(dataset, opts.cache_dir.as_deref())?;
    let split = make_split_with_matrix(dataset, &matrix, &split_config(opts))?;
    write_out(&out.join("split.json"), &split.to_json())?;
    Ok(split)
}

fn load_tables(specs: &[NamedPath]) -> Result<Vec<EmbeddingTable>, CliError> {
    let mut seen = HashSet::new();
    specs
        .iter()
        .map(|s| {
            if !seen.insert(s.name.as_str()) {
                return Err(CliError::Usage(format!("embedding name '{}' given twice", s.name)));
            }
            require_file(&s.path, "embedding file")?;
            Ok(EmbeddingTable::load(&s.path, Some(&s.name))?)
        })
        .collect()
}

fn record_tables(resolved: &mut Resolved, specs: &[NamedPath]) {
    for s in specs {
        resolved.set("embeddings", s);
    }
}

fn train_config(opts: &TrainOpts, seed: u64, hidden: Vec<usize>) -> Result<TrainConfig, CliError> {
    let config = TrainConfig {
        lr: opts.lr,
        epochs: opts.epochs,
        optimizer: opts.optimizer,
        weight_decay: opts.weight_decay,
        seed,
        loss: LossConfig {
            lambda: opts.lambda,
            delta: opts.delta,
            rank_variant: opts.rank_variant,
        },
        batch_size: opts.batch_size,
        hidden,
        standardize: !opts.no_standardize,
        ..TrainConfig::default()
    };
    config.validate()?;
    if config.loss.has_zero_gradient() {
        warn!(
            "rank variant '{}' with lambda 0 has zero gradient everywhere; parameters will not move",
            RankVariant::Verbatim
        );
    }
    Ok(config)
}

fn record_train(resolved: &mut Resolved, opts: &TrainOpts, hidden: &[usize]) {
    resolved
        .set("lambda", opts.lambda)
        .set("delta", opts.delta)
        .set("rank-variant", opts.rank_variant)
        .set("batch-size", opts.batch_size)
        .set("epochs", opts.epochs)
        .set("lr", opts.lr)
        .set("optimizer", opts.optimizer)
        .set("weight-decay", opts.weight_decay)
        .set("hidden", crate::args::Hidden(hidden.to_vec()))
        .flag("no-standardize", opts.no_standardize)
        .flag("dump-batch-plan", opts.dump_batch_plan);
}

fn fit(
    dataset: &Dataset,
    split: &SplitAssignment,
    tables: &[&EmbeddingTable],
    config: &TrainConfig,
    out: &Path,
    dump_plan: bool,
) -> Result<TrainOutcome, CliError> {
    let plan = plan_for(dataset, split, config)?;
    if dump_plan {
        write_out(&out.join("batch_plan.json"), &plan.to_json())?;
    }
    let outcome = train(dataset, split, tables, config, &plan)?;
    prepare_out(out)?;
    outcome.model.write_checkpoint(out)?;
    write_metric_log(&out.join("metrics.csv"), &outcome.log)?;
    Ok(outcome)
}

fn score(
    model: &AffinityModel,
    tables: &[&EmbeddingTable],
    dataset: &Dataset,
    ids: &[String],
) -> Result<(BTreeMap<String, f64>, ppi_affinity::metrics::Evaluation), CliError> {
    let predictions = predict(model, tables, ids)?;
    let all = dataset.labels();
    let labels: BTreeMap<String, f64> = ids.iter().filter_map(|id| all.get(id).map(|v| (id.clone(), *v))).collect();
    let evaluation = evaluate(&predictions, &labels)?;
    Ok((predictions, evaluation))
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

pub fn split(cmd: &SplitCmd) -> Result<(), CliError> {
    let (dataset, format) = load_dataset(&cmd.data)?;
    let mut resolved = Resolved::new("split");
    record_data(&mut resolved, &cmd.data, format);
    if cmd.split.split.is_some() {
        return Err(CliError::Usage("split computes a split; --split is not accepted here".into()));
    }
    record_split(&mut resolved, &cmd.split);

    let config = split_config(&cmd.split);
    let matrix = DistanceMatrix::load_or_compute(&dataset, cmd.split.cache_dir.as_deref())?;
    let split = make_split_with_matrix(&dataset, &matrix, &config)?;
    let audit = LeakageAudit::scan(&matrix, &split, &config);
    if !audit.passed {
        warn!("leakage audit failed: {} cross-split pairs within tau", audit.pairs_within_tau);
    }

    prepare_out(&cmd.data.out)?;
    write_out(&cmd.data.out.join("split.json"), &split.to_json())?;
    write_out(&cmd.data.out.join("leakage_audit.json"), &to_json(&audit))?;
    write_out(&cmd.data.out.join(RESOLVED_FILE), &resolved.render())?;
    println!(
        "train {} / validation {} / test {} over {} components; min cross-split distance {}",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        split.components.len(),
        split.min_cross_split_distance.map_or_else(|| "n/a".to_string(), |d| d.to_string()),
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct LeakageAudit {
    tau: f64,
    n: usize,
    train: usize,
    validation: usize,
    test: usize,
    components: usize,
    test_cap: f64,
    min_cross_split_distance: Option<f64>,
    /// Ordered pairs on different sides with distance <= tau.
    pairs_within_tau: usize,
    passed: bool,
}

impl LeakageAudit {
    fn scan(matrix: &DistanceMatrix, split: &SplitAssignment, config: &SplitConfig) -> Self {
        let side = split.side_of();
        let sides: Vec<_> = matrix.ids().iter().map(|id| side.get(id.as_str()).copied()).collect();
        let tau = config.tau as f32;
        let mut violations = 0;
        for i in 0..matrix.len() {
            for j in 0..matrix.len() {
                if sides[i] != sides[j] && matrix.get(i, j) <= tau {
                    violations += 1;
                }
            }
        }
        let test_cap = config.cap_factor * config.test_ratio * matrix.len() as f64;
        LeakageAudit {
            tau: config.tau,
            n: matrix.len(),
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
            components: split.components.len(),
            test_cap,
            min_cross_split_distance: split.min_cross_split_distance,
            pairs_within_tau: violations,
            passed: violations == 0 && split.test.len() as f64 <= test_cap,
        }
    }
}

pub fn train_cmd(cmd: &TrainCmd) -> Result<(), CliError> {
    let out = &cmd.data.out;
    let (dataset, format) = load_dataset(&cmd.data)?;
    if cmd.train.embeddings.is_empty() {
        return Err(CliError::Usage("train needs at least one --embeddings name=path".into()));
    }
    let hidden = cmd.train.hidden.clone().map_or_else(|| DEFAULT_HIDDEN.to_vec(), |h| h.0);
    let config = train_config(&cmd.train, cmd.data.seed, hidden)?;
    let tables = load_tables(&cmd.train.embeddings)?;
    prepare_out(out)?;
    let split = obtain_split(&dataset, &cmd.split, out)?;

    let mut resolved = Resolved::new("train");
    record_data(&mut resolved, &cmd.data, format);
    record_split(&mut resolved, &cmd.split);
    record_tables(&mut resolved, &cmd.train.embeddings);
    record_train(&mut resolved, &cmd.train, &config.hidden);

    let refs: Vec<&EmbeddingTable> = tables.iter().collect();
    let outcome = fit(&dataset, &split, &refs, &config, out, cmd.train.dump_batch_plan)?;
    write_out(&out.join(RESOLVED_FILE), &resolved.render())?;
    report_training(&outcome);
    Ok(())
}

fn report_training(outcome: &TrainOutcome) {
    let last = outcome.log.last();
    match (outcome.best_epoch, last) {
        (Some(best), _) => {
            let v = outcome.log[best - 1].validation.as_ref();
            println!(
                "trained {} epochs; kept epoch {best} (validation spearman {}, pearson {})",
                outcome.log.len(),
                fmt_metric(v.and_then(|r| r.spearman)),
                fmt_metric(v.and_then(|r| r.pearson)),
            );
        }
        (None, Some(e)) => println!("trained {} epochs; final train loss {:.6}", outcome.log.len(), e.train_loss),
        (None, None) => println!("no epochs run; wrote the initialized model"),
    }
}

/// What `eval` writes, and what `fuse --baseline` reads back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalDoc {
    pub on: String,
    pub n: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub rmse: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EvalDoc {
    fn report(&self) -> EvalReport {
        EvalReport {
            pearson: self.pearson,
            spearman: self.spearman,
            rmse: self.rmse,
            n: self.n,
        }
    }
}

fn side_ids(split: &SplitAssignment, side: EvalSide) -> &[String] {
    match side {
        EvalSide::Train => &split.train,
        EvalSide::Validation => &split.validation,
        EvalSide::Test => &split.test,
    }
}

pub fn eval(cmd: &EvalCmd) -> Result<(), CliError> {
    let out = &cmd.data.out;
    let (dataset, format) = load_dataset(&cmd.data)?;
    require_file(&cmd.checkpoint.join(CHECKPOINT_META), "checkpoint")?;
    let model = AffinityModel::read_checkpoint(&cmd.checkpoint)?;
    let tables = load_tables(&cmd.embeddings)?;
    prepare_out(out)?;
    let split = obtain_split(&dataset, &cmd.split, out)?;

    let mut resolved = Resolved::new("eval");
    record_data(&mut resolved, &cmd.data, format);
    record_split(&mut resolved, &cmd.split);
    resolved.set("checkpoint", cmd.checkpoint.display());
    record_tables(&mut resolved, &cmd.embeddings);
    resolved.set("on", cmd.on);
    if let Some(r) = &cmd.results {
        resolved.set("results", r.display());
    }

    if cmd.on == EvalSide::Train {
        warn!("evaluating on the TRAINING split: these numbers are not held-out performance");
    }
    let ids = side_ids(&split, cmd.on);
    if ids.is_empty() {
        return Err(CliError::Usage(format!("the {} split is empty", cmd.on)));
    }
    let refs: Vec<&EmbeddingTable> = tables.iter().collect();
    let (predictions, evaluation) = score(&model, &refs, &dataset, ids)?;
    let report = &evaluation.report;
    let doc = EvalDoc {
        on: cmd.on.to_string(),
        n: report.n,
        pearson: report.pearson,
        spearman: report.spearman,
        rmse: report.rmse,
        warnings: evaluation.warnings.clone(),
    };

    let labels = dataset.labels();
    let mut rows = String::from("id,label,prediction\n");
    for (id, p) in &predictions {
        rows.push_str(&format!("{id},{},{p}\n", labels[id]));
    }
    write_out(&out.join("eval.json"), &to_json(&doc))?;
    write_out(&out.join("predictions.csv"), &rows)?;
    write_out(&out.join(RESOLVED_FILE), &resolved.render())?;
    if let Some(path) = &cmd.results {
        append_result(path, &cmd.checkpoint, &doc)?;
    }
    println!(
        "{}: n={} pearson {} spearman {} rmse {:.4}",
        doc.on,
        doc.n,
        fmt_metric(doc.pearson),
        fmt_metric(doc.spearman),
        doc.rmse
    );
    Ok(())
}

fn append_result(path: &Path, checkpoint: &Path, doc: &EvalDoc) -> Result<(), CliError> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let err = |e: &dyn std::fmt::Display| CliError::Runtime(format!("cannot append to {}: {e}", path.display()));
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| err(&e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(["checkpoint", "on", "n", "pearson", "spearman", "rmse"]).map_err(|e| err(&e))?;
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record([
        checkpoint.display().to_string(),
        doc.on.clone(),
        doc.n.to_string(),
        opt(doc.pearson),
        opt(doc.spearman),
        doc.rmse.to_string(),
    ])
    .map_err(|e| err(&e))?;
    w.flush().map_err(|e| err(&e))
}

#[derive(Debug, Serialize)]
struct BaselineEntry {
    name: String,
    /// "trained" or the eval.json it was read from.
    origin: String,
    report: EvalReport,
    /// Fused test Pearson minus this baseline's.
    pearson_gain: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FusionReport {
    sources: Vec<String>,
    projection: String,
    evaluated_on: String,
    best_epoch: Option<usize>,
    fused: EvalReport,
    baselines: Vec<BaselineEntry>,
}

pub fn fuse(cmd: &FuseCmd) -> Result<(), CliError> {
    let out = &cmd.data.out;
    if cmd.train.embeddings.len() < 2 {
        return Err(CliError::Usage(format!(
            "fusion requires at least 2 embedding sources, got {}",
            cmd.train.embeddings.len()
        )));
    }
    let hidden = match (&cmd.train.hidden, cmd.through_mlp) {
        (Some(h), true) => h.0.clone(),
        (None, true) => DEFAULT_HIDDEN.to_vec(),
        (None, false) => Vec::new(),
        (Some(_), false) => return Err(CliError::Usage("--hidden only applies together with --through-mlp".into())),
    };
    let (dataset, format) = load_dataset(&cmd.data)?;
    let config = train_config(&cmd.train, cmd.data.seed, hidden)?;
    let tables = load_tables(&cmd.train.embeddings)?;
    for b in &cmd.baselines {
        require_file(&b.path, "baseline report")?;
    }
    prepare_out(out)?;
    let split = obtain_split(&dataset, &cmd.split, out)?;
    if split.test.is_empty() {
        return Err(CliError::Usage("the test split is empty".into()));
    }

    let mut resolved = Resolved::new("fuse");
    record_data(&mut resolved, &cmd.data, format);
    record_split(&mut resolved, &cmd.split);
    record_tables(&mut resolved, &cmd.train.embeddings);
    record_train(&mut resolved, &cmd.train, &config.hidden);
    resolved.flag("through-mlp", cmd.through_mlp);
    for b in &cmd.baselines {
        resolved.set("baseline", b);
    }
    resolved.flag("train-baselines", cmd.train_baselines);

    let refs: Vec<&EmbeddingTable> = tables.iter().collect();
    let outcome = fit(&dataset, &split, &refs, &config, out, cmd.train.dump_batch_plan)?;
    let fused = score(&outcome.model, &refs, &dataset, &split.test)?.1.report;

    let mut baselines = Vec::new();
    for b in &cmd.baselines {
        let text = fs::read_to_string(&b.path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", b.path.display())))?;
        let doc: EvalDoc = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("malformed baseline report {}: {e}", b.path.display())))?;
        baselines.push((b.name.clone(), b.path.display().to_string(), doc.report()));
    }
    if cmd.train_baselines {
        for table in &tables {
            let dir: PathBuf = out.join("baselines").join(table.name());
            let single = fit(&dataset, &split, &[table], &config, &dir, false)?;
            let report = score(&single.model, &[table], &dataset, &split.test)?.1.report;
            baselines.push((table.name().to_string(), "trained".to_string(), report));
        }
    }

    let report = FusionReport {
        sources: tables.iter().map(|t| t.name().to_string()).collect(),
        projection: if config.hidden.is_empty() { "linear" } else { "mlp" }.to_string(),
        evaluated_on: "test".into(),
        best_epoch: outcome.best_epoch,
        baselines: baselines
            .into_iter()
            .map(|(name, origin, report)| BaselineEntry {
                pearson_gain: fused.pearson.zip(report.pearson).map(|(f, b)| f - b),
                name,
                origin,
                report,
            })
            .collect(),
        fused,
    };
    write_out(&out.join("fusion_report.json"), &to_json(&report))?;
    write_out(&out.join(RESOLVED_FILE), &resolved.render())?;

    println!("{:<24} {:>9} {:>9} {:>9}", "model", "pearson", "spearman", "rmse");
    let row = |name: &str, r: &EvalReport| {
        println!(
            "{:<24} {:>9} {:>9} {:>9.4}",
            name,
            fmt_metric(r.pearson),
            fmt_metric(r.spearman),
            r.rmse
        )
    };
    row(&format!("fused({})", report.sources.join("+")), &report.fused);
    for b in &report.baselines {
        row(&b.name, &b.report);
    }
    Ok(())
}

pub fn batch_audit(cmd: &AuditCmd) -> Result<(), CliError> {
    let out = &cmd.data.out;
    let (dataset, format) = load_dataset(&cmd.data)?;
    if cmd.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be at least 1".into()));
    }
    prepare_out(out)?;
    let split = obtain_split(&dataset, &cmd.split, out)?;
    let mut resolved = Resolved::new("batch-audit");
    record_data(&mut resolved, &cmd.data, format);
    record_split(&mut resolved, &cmd.split);
    resolved.set("batch-size", cmd.batch_size).set("epochs", cmd.epochs);

    let config = TrainConfig {
        batch_size: cmd.batch_size,
        epochs: cmd.epochs,
        seed: cmd.data.seed,
        ..TrainConfig::default()
    };
    let plan = plan_for(&dataset, &split, &config)?;
    let coverage = batch_coverage_report(&plan);
    write_out(&out.join("batch_plan.json"), &plan.to_json())?;
    write_out(&out.join("batch_coverage.json"), &to_json(&coverage))?;
    write_out(&out.join(RESOLVED_FILE), &resolved.render())?;
    for e in &coverage.epochs {
        println!(
            "epoch {}: {} batches over {} ids, {} studies, singleton fraction {:.3}",
            e.epoch + 1,
            e.batches,
            e.ids,
            e.pmid_histogram.len(),
            e.singleton_fraction
        );
    }
    Ok(())
}
