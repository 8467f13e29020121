use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ctlogic_categorize::{
    assign_categories, kmeans, rand_index, select_model, write_category_map, write_score_table,
    CovarianceType, Criterion, EmbeddingMatrix, GmmParams, SelectParams,
};
use ctlogic_core::aggregation::{aggregate, to_categories};
use ctlogic_core::evaluator::{self, make_queries, BaselineModel, Task};
use ctlogic_core::graph::{FactStore, TemporalGraph, Vocabulary};
use ctlogic_core::{
    learn as learn_rules, retrieve, Aggregation, ApplyParams, LearnParams, Query, RuleBank,
};

use crate::config::{
    self, parse_or, ApplyOptions, CategorizeOptions, DataOptions, EvalOptions, LearnOptions,
};
use crate::{classify, classify_categorize, ConfigError};

pub struct Run {
    pub out: PathBuf,
    pub workers: Option<usize>,
}

impl Run {
    fn prepare(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating run directory {}", self.out.display()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_text(&self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    fn write_metadata<C: Serialize>(
        &self,
        command: &str,
        seed: Option<u64>,
        config: &C,
    ) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Metadata<'a, C> {
            command: &'a str,
            version: &'a str,
            seed: Option<u64>,
            workers: Option<usize>,
            config: &'a C,
        }
        let meta = Metadata {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            workers: self.workers,
            config,
        };
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        self.write_text(&format!("{command}_metadata.json"), &text)
    }

    fn csv(&self, name: &str) -> anyhow::Result<csv::Writer<fs::File>> {
        let path = self.path(name);
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))
    }

    fn bank_path(&self, bank: Option<&Path>) -> PathBuf {
        bank.map(Path::to_path_buf)
            .unwrap_or_else(|| self.path("rules.jsonl"))
    }
}

fn load_bank(path: &Path) -> anyhow::Result<RuleBank> {
    if !path.is_file() {
        return Err(ConfigError::msg(format!(
            "rule bank {} does not exist (run `ctlogic learn` first or pass --bank)",
            path.display()
        )));
    }
    RuleBank::load(path)
        .map_err(classify)
        .with_context(|| format!("reading rule bank {}", path.display()))
}

pub fn categorize(run: &Run, opts: &CategorizeOptions) -> anyhow::Result<()> {
    let path = opts
        .embeddings
        .as_ref()
        .ok_or_else(|| ConfigError::msg("categorize needs --embeddings FILE"))?;
    if !path.is_file() {
        return Err(ConfigError::msg(format!(
            "embedding file {} does not exist",
            path.display()
        )));
    }
    let emb = EmbeddingMatrix::load(path).map_err(classify_categorize)?;
    let max_dims = emb.dims().min(emb.len() - 1);
    let force = match opts.force.as_deref() {
        None => None,
        Some([d, k]) => Some((*d, *k)),
        Some(_) => return Err(ConfigError::msg("--force takes DIMS,K")),
    };
    let gmm_defaults = GmmParams::default();
    let params = SelectParams {
        dims_grid: opts.dims.clone().unwrap_or_else(|| vec![50.min(max_dims)]),
        k_grid: opts
            .k
            .clone()
            .unwrap_or_else(|| (1..=12).filter(|&k| k <= emb.len()).collect()),
        gmm: GmmParams {
            covariance: parse_or::<CovarianceType>(&opts.covariance, gmm_defaults.covariance)?,
            restarts: opts.restarts.unwrap_or(gmm_defaults.restarts),
            max_iters: opts.max_iters.unwrap_or(gmm_defaults.max_iters),
            ..gmm_defaults
        },
        criterion: parse_or::<Criterion>(&opts.criterion, Criterion::Bic)?,
        seed: opts.seed.unwrap_or(12),
        force,
    };
    if params.gmm.restarts == 0 || params.gmm.max_iters == 0 {
        return Err(ConfigError::msg(
            "--restarts and --max-iters must be positive",
        ));
    }
    if let Some(&bad) = params.dims_grid.iter().find(|&&d| d == 0 || d > max_dims) {
        return Err(ConfigError::msg(format!(
            "PCA dimension {bad} outside 1..={max_dims}"
        )));
    }
    run.prepare()?;
    log::info!(
        "fitting {} grid cells on {} x {} embeddings",
        params.dims_grid.len() * params.k_grid.len(),
        emb.len(),
        emb.dims()
    );
    let sel = select_model(&emb.data, &params).map_err(classify_categorize)?;
    let labels =
        assign_categories(&sel.model, &sel.projection, &emb).map_err(classify_categorize)?;
    write_category_map(&run.path("categories.tsv"), &emb.names, &labels)?;
    write_score_table(&run.path("scores.csv"), &sel.table)?;

    let z = sel.projection.transform(&emb.data)?;
    let km = kmeans(&z, sel.k, 300, &mut ChaCha8Rng::seed_from_u64(params.seed))?;
    let mut sizes = vec![0usize; sel.k];
    for &l in &labels {
        sizes[l] += 1;
    }

    #[derive(Serialize)]
    struct Summary {
        entities: usize,
        input_dims: usize,
        dims: usize,
        k: usize,
        log_likelihood: f64,
        em_iterations: usize,
        converged: bool,
        collapses: usize,
        cluster_sizes: Vec<usize>,
        explained_variance_ratio: Vec<f64>,
        kmeans_rand_index: f64,
    }
    let summary = Summary {
        entities: emb.len(),
        input_dims: emb.dims(),
        dims: sel.dims,
        k: sel.k,
        log_likelihood: sel.model.log_likelihood,
        em_iterations: sel.model.history.len(),
        converged: sel.model.converged,
        collapses: sel.model.collapses,
        cluster_sizes: sizes,
        explained_variance_ratio: sel.projection.explained_variance_ratio(),
        kmeans_rand_index: rand_index(&labels, &km.labels),
    };
    run.write_text(
        "summary.json",
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        embeddings: &'a Path,
        dims_grid: &'a [usize],
        k_grid: &'a [usize],
        covariance: String,
        restarts: usize,
        max_iters: usize,
        tol: f64,
        floor: f64,
        criterion: &'a str,
        force: Option<(usize, usize)>,
    }
    let resolved = Resolved {
        embeddings: path,
        dims_grid: &params.dims_grid,
        k_grid: &params.k_grid,
        covariance: params.gmm.covariance.to_string(),
        restarts: params.gmm.restarts,
        max_iters: params.gmm.max_iters,
        tol: params.gmm.tol,
        floor: params.gmm.floor,
        criterion: match params.criterion {
            Criterion::Bic => "bic",
            Criterion::Aic => "aic",
        },
        force,
    };
    run.write_metadata("categorize", Some(params.seed), &resolved)?;
    println!(
        "{} entities -> {} categories (PCA {} dims); K-means Rand index {:.4}",
        emb.len(),
        sel.k,
        sel.dims,
        summary.kmeans_rand_index
    );
    Ok(())
}

#[derive(Serialize)]
struct LearnConfig<'a> {
    data: &'a config::DataConfig,
    learn: &'a LearnParams,
}

pub fn learn(run: &Run, data: &DataOptions, opts: &LearnOptions) -> anyhow::Result<()> {
    let (data_config, format, source) = data.resolve()?;
    let params = opts.resolve()?;
    let ds = config::load(&data_config, format, &source)?;
    params
        .validate(ds.vocab.categories.len())
        .map_err(classify)?;
    run.prepare()?;

    let learned = learn_rules(&ds.train, &params).map_err(classify)?;
    let bank = &learned.bank;
    bank.save(&run.path("rules.jsonl"))?;
    let vocab = ds.vocab.as_ref();
    let mut text = String::new();
    for rule in bank.rules() {
        text.push_str(&rule.render(vocab));
        text.push('\n');
    }
    run.write_text("rules.txt", &text)?;

    let mut w = run.csv("learn_stats.csv")?;
    w.write_record([
        "relation",
        "length",
        "category",
        "walks_attempted",
        "walks_completed",
        "rules_estimated",
        "rules_kept",
    ])?;
    for item in &learned.stats.work_items {
        w.write_record([
            vocab.relation_name(item.relation),
            item.length.to_string(),
            item.category
                .map(|c| vocab.category_name(c))
                .unwrap_or_default(),
            item.walks_attempted.to_string(),
            item.walks_completed.to_string(),
            item.rules_estimated.to_string(),
            item.rules_kept.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = run.csv("rules_per_length.csv")?;
    w.write_record(["length", "rules"])?;
    for (i, count) in bank.count_by_length().iter().enumerate() {
        w.write_record([(i + 1).to_string(), count.to_string()])?;
    }
    w.flush()?;

    let mut histogram: BTreeMap<u64, usize> = BTreeMap::new();
    for rule in bank.rules() {
        *histogram.entry(rule.body_support).or_default() += 1;
    }
    let mut w = run.csv("support_histogram.csv")?;
    w.write_record(["body_support", "rules"])?;
    for (support, count) in &histogram {
        w.write_record([support.to_string(), count.to_string()])?;
    }
    w.flush()?;

    run.write_metadata(
        "learn",
        Some(params.seed),
        &LearnConfig {
            data: &data_config,
            learn: &params,
        },
    )?;
    println!(
        "{} rules learned from {} walks ({} completed); bank written to {}",
        bank.len(),
        learned.stats.walks_attempted(),
        learned.stats.walks_completed(),
        run.path("rules.jsonl").display()
    );
    Ok(())
}

const BASELINE: &str = "relation_object_frequency";

#[derive(Serialize)]
struct ApplyConfig<'a> {
    data: &'a config::DataConfig,
    bank: &'a Path,
    bank_seed: u64,
    apply: &'a ApplyParams,
    history: &'a str,
    /// Fallback used for queries without rule candidates.
    baseline: &'static str,
}

pub fn evaluate(
    run: &Run,
    data: &DataOptions,
    apply: &ApplyOptions,
    eval: &EvalOptions,
    bank: Option<&Path>,
) -> anyhow::Result<()> {
    let (data_config, format, source) = data.resolve()?;
    let bank_path = run.bank_path(bank);
    let bank = load_bank(&bank_path)?;
    let (params, scope) = apply.resolve(bank.meta().mode)?;
    let configs = eval.configs()?;
    let direction = eval.direction()?;
    let ds = config::load(&data_config, format, &source)?;
    bank.check_vocabulary(&ds.vocab).map_err(classify)?;
    run.prepare()?;

    let history = ds.history(scope).map_err(classify)?;
    let queries = make_queries(&ds.test, direction);
    let baseline = BaselineModel::fit(&ds.train);
    let options = evaluator::EvalOptions {
        logs: eval.logs.unwrap_or(false),
        log_top: eval.log_top.unwrap_or(10),
    };
    log::info!(
        "evaluating {} queries under {} configurations",
        queries.len(),
        configs.len()
    );
    let result = evaluator::evaluate(
        &history, &bank, &queries, &baseline, &params, &configs, &options,
    )
    .map_err(classify)?;

    let mut w = run.csv("report.csv")?;
    w.write_record([
        "task",
        "aggregation",
        "mode",
        "Walks",
        "N.C.",
        "MRR",
        "H@1",
        "H@3",
        "H@10",
        "queries",
    ])?;
    for r in &result.reports {
        w.write_record([
            r.task.to_string(),
            r.aggregation.to_string(),
            r.mode.to_string(),
            r.walks.to_string(),
            format!("{:.6}", r.nc_ratio),
            format!("{:.6}", r.mrr),
            format!("{:.6}", r.hits1),
            format!("{:.6}", r.hits3),
            format!("{:.6}", r.hits10),
            r.query_count.to_string(),
        ])?;
    }
    w.flush()?;
    run.write_text(
        "report.json",
        &(serde_json::to_string_pretty(&result.reports)? + "\n"),
    )?;

    for (report, logs) in result.reports.iter().zip(&result.logs) {
        let mut text = String::new();
        for log in logs {
            text.push_str(&serde_json::to_string(log)?);
            text.push('\n');
        }
        run.write_text(
            &format!("queries_{}_{}.jsonl", report.task, report.aggregation),
            &text,
        )?;
    }

    let history_name = scope_name(scope);
    run.write_metadata(
        "evaluate",
        Some(bank.meta().seed),
        &ApplyConfig {
            data: &data_config,
            bank: &bank_path,
            bank_seed: bank.meta().seed,
            apply: &params,
            history: history_name,
            baseline: BASELINE,
        },
    )?;
    println!(
        "{:<9}{:<10}{:>8}{:>9}{:>9}{:>9}{:>9}",
        "task", "agg", "N.C.", "MRR", "H@1", "H@3", "H@10"
    );
    for r in &result.reports {
        println!(
            "{:<9}{:<10}{:>8.2}{:>9.2}{:>9.2}{:>9.2}{:>9.2}",
            r.task.to_string(),
            r.aggregation.to_string(),
            100.0 * r.nc_ratio,
            100.0 * r.mrr,
            100.0 * r.hits1,
            100.0 * r.hits3,
            100.0 * r.hits10
        );
    }
    Ok(())
}

fn scope_name(scope: ctlogic_core::HistoryScope) -> &'static str {
    match scope {
        ctlogic_core::HistoryScope::Train => "train",
        ctlogic_core::HistoryScope::TrainValid => "train+valid",
        ctlogic_core::HistoryScope::All => "all",
    }
}

pub struct ExplainRequest<'a> {
    pub query: &'a str,
    pub aggregation: &'a str,
    pub top: usize,
}

fn parse_query(text: &str, vocab: &Vocabulary) -> anyhow::Result<Query> {
    let parts: Vec<&str> = text.split('|').map(str::trim).collect();
    let [s, r, t] = parts.as_slice() else {
        return Err(ConfigError::msg(format!(
            "query `{text}` must look like `subject|relation|timestamp`"
        )));
    };
    let subject = vocab
        .entities
        .id(s)
        .ok_or_else(|| ConfigError::msg(format!("unknown entity `{s}`")))?;
    let relation = vocab
        .relation_id(r)
        .ok_or_else(|| ConfigError::msg(format!("unknown relation `{r}`")))?;
    let timestamp = vocab.timestamp_id(t).ok_or_else(|| {
        ConfigError::msg(format!("timestamp `{t}` does not occur in the dataset"))
    })?;
    Ok(Query {
        subject,
        relation,
        timestamp,
    })
}

fn fact_line(store: &TemporalGraph, id: usize) -> String {
    let f = store.fact(id);
    let v = store.vocab();
    format!(
        "{} {} {} @ {}",
        v.entity_name(f.subject),
        v.relation_name(f.relation),
        v.entity_name(f.object),
        v.timestamp_label(f.timestamp)
    )
}

/// Renders the trace of one query; `None` store results in the fallback text.
fn explain_text(
    query: &Query,
    bank: &RuleBank,
    store: &TemporalGraph,
    baseline: &BaselineModel,
    params: &ApplyParams,
    method: Aggregation,
    top: usize,
) -> anyhow::Result<String> {
    let vocab = store.vocab().as_ref();
    let table = retrieve(query, bank, store, params).map_err(classify)?;
    let mut out = String::new();
    writeln!(
        out,
        "query: {} {} ? @ {}",
        vocab.entity_name(query.subject),
        vocab.relation_name(query.relation),
        vocab.timestamp_label(query.timestamp)
    )?;
    if let Some(c) = vocab.category_of(query.subject) {
        writeln!(out, "subject category: {}", vocab.category_name(c))?;
    }
    writeln!(
        out,
        "mode {}, window {}, alpha {}, lambda {}, gamma {}",
        params.mode, params.window, params.alpha, params.lambda, params.gamma
    )?;
    writeln!(
        out,
        "rules applied: {}, groundings found: {}",
        table.rules_applied, table.groundings_found
    )?;

    if table.is_empty() {
        writeln!(
            out,
            "\nNo candidates: no rule grounded in the window before {}. Falling back to the frequency baseline.",
            vocab.timestamp_label(query.timestamp)
        )?;
        for (task, title) in [(Task::Entity, "entities"), (Task::Category, "categories")] {
            writeln!(out, "\nbaseline {title}:")?;
            for (i, r) in baseline.top(task, query.relation, top).iter().enumerate() {
                let name = match task {
                    Task::Entity => vocab.entity_name(r.candidate),
                    Task::Category => vocab.category_name(r.candidate),
                };
                writeln!(out, "{:>4}. {name} ({} training facts)", i + 1, r.count)?;
            }
        }
        return Ok(out);
    }

    let mut current = usize::MAX;
    for c in &table.contributions {
        if c.rule != current {
            current = c.rule;
            writeln!(
                out,
                "\nrule #{}: {}",
                c.rule,
                bank.rules()[c.rule].render(vocab)
            )?;
        }
        writeln!(
            out,
            "  -> {}  tau {}  score {:.6}",
            vocab.entity_name(c.candidate),
            vocab.timestamp_label(c.tau),
            c.score
        )?;
        for &id in &c.facts {
            writeln!(out, "       {}", fact_line(store, id))?;
        }
    }

    let entities = aggregate(&table, method).map_err(classify)?;
    writeln!(out, "\nentity ranking ({method}):")?;
    for (i, r) in entities.entries.iter().take(top).enumerate() {
        writeln!(
            out,
            "{:>4}. {}  score {:.6}  rules {}",
            i + 1,
            vocab.entity_name(r.candidate),
            r.score,
            r.count
        )?;
    }
    let categories = aggregate(
        &to_categories(&table, &vocab.entity_category).map_err(classify)?,
        method,
    )
    .map_err(classify)?;
    writeln!(out, "\ncategory ranking ({method}):")?;
    for (i, r) in categories.entries.iter().take(top).enumerate() {
        writeln!(
            out,
            "{:>4}. {}  score {:.6}  rules {}",
            i + 1,
            vocab.category_name(r.candidate),
            r.score,
            r.count
        )?;
    }
    Ok(out)
}

pub fn explain(
    run: &Run,
    data: &DataOptions,
    apply: &ApplyOptions,
    bank: Option<&Path>,
    request: &ExplainRequest<'_>,
) -> anyhow::Result<()> {
    let (data_config, format, source) = data.resolve()?;
    let method: Aggregation = request.aggregation.parse().map_err(ConfigError::wrap)?;
    let bank_path = run.bank_path(bank);
    let bank = load_bank(&bank_path)?;
    let (params, scope) = apply.resolve(bank.meta().mode)?;
    let ds = config::load(&data_config, format, &source)?;
    bank.check_vocabulary(&ds.vocab).map_err(classify)?;
    let query = parse_query(request.query, &ds.vocab)?;
    run.prepare()?;

    let history = ds.history(scope).map_err(classify)?;
    let baseline = BaselineModel::fit(&ds.train);
    let text = explain_text(
        &query,
        &bank,
        &history,
        &baseline,
        &params,
        method,
        request.top,
    )?;
    run.write_text("explain.txt", &text)?;
    run.write_metadata(
        "explain",
        Some(bank.meta().seed),
        &ApplyConfig {
            data: &data_config,
            bank: &bank_path,
            bank_seed: bank.meta().seed,
            apply: &params,
            history: scope_name(scope),
            baseline: BASELINE,
        },
    )?;
    print!("{text}");
    Ok(())
}

pub fn stats(run: &Run, data: &DataOptions, bank: Option<&Path>) -> anyhow::Result<()> {
    let (data_config, format, source) = data.resolve()?;
    let ds = config::load(&data_config, format, &source)?;
    let bank = bank.map(load_bank).transpose()?;
    run.prepare()?;
    let vocab = ds.vocab.as_ref();

    let mut out = String::new();
    writeln!(
        out,
        "entities {}, relations {}, categories {}, timestamps {}",
        vocab.entities.len(),
        vocab.relations.len(),
        vocab.categories.len(),
        vocab.timestamps.len()
    )?;
    for (name, split) in [
        ("train", &ds.train),
        ("valid", &ds.valid),
        ("test", &ds.test),
    ] {
        let span = split
            .time_range()
            .map(|(a, b)| {
                format!(
                    "{} .. {}",
                    vocab.timestamp_label(a),
                    vocab.timestamp_label(b)
                )
            })
            .unwrap_or_else(|| "empty".into());
        writeln!(out, "{name}: {} facts, {span}", split.base_facts().len())?;
    }
    let mut sizes = vec![0usize; vocab.categories.len()];
    for &c in &vocab.entity_category {
        sizes[c as usize] += 1;
    }
    writeln!(out, "\nentities per category:")?;
    for (c, n) in sizes.iter().enumerate() {
        writeln!(out, "  {}\t{n}", vocab.category_name(c as u32))?;
    }
    if let Some(bank) = &bank {
        let meta = bank.meta();
        writeln!(
            out,
            "\nbank: {} rules, mode {}, walks {}, seed {}",
            bank.len(),
            meta.mode,
            meta.walks,
            meta.seed
        )?;
        match bank.check_vocabulary(vocab) {
            Ok(()) => {}
            Err(e) => writeln!(out, "warning: {e}")?,
        }
        for (i, n) in bank.count_by_length().iter().enumerate() {
            writeln!(out, "  length {}: {n} rules", i + 1)?;
        }
    }
    run.write_text("stats.txt", &out)?;
    run.write_metadata("stats", bank.as_ref().map(|b| b.meta().seed), &data_config)?;
    print!("{out}");
    Ok(())
}
