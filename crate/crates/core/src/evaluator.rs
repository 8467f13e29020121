//! Link-forecasting evaluation: one query per test fact, raw ranking of the
//! true answer, MRR and Hits@k, and the share of queries without candidates.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, to_categories, Aggregation, Ranked};
use crate::error::{Result, TkgError};
use crate::graph::{CategoryId, EntityId, FactStore, RelationId, TemporalGraph};
use crate::retriever::{retrieve, ApplyParams, CandidateTable, Contribution, Query};
use crate::rules::{Mode, RuleBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Entity,
    Category,
}

impl FromStr for Task {
    type Err = TkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entity" => Ok(Task::Entity),
            "category" => Ok(Task::Category),
            other => Err(TkgError::InvalidParameter(format!(
                "unknown task `{other}` (expected entity or category)"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Entity => "entity",
            Task::Category => "category",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Object,
    Subject,
    Both,
}

impl FromStr for Direction {
    type Err = TkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "object" => Ok(Direction::Object),
            "subject" => Ok(Direction::Subject),
            "both" => Ok(Direction::Both),
            other => Err(TkgError::InvalidParameter(format!(
                "unknown direction `{other}` (expected object, subject or both)"
            ))),
        }
    }
}

/// A query with every correct answer at that timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestQuery {
    pub query: Query,
    /// Sorted, duplicate-free.
    pub truth: Vec<EntityId>,
}

/// One query per test fact and direction. Subject queries use the inverse
/// relation.
pub fn make_queries(test: &TemporalGraph, direction: Direction) -> Vec<TestQuery> {
    let inverse = |r| test.inverse_relation(r);
    let mut answers: HashMap<Query, Vec<EntityId>> = HashMap::new();
    let mut keys = Vec::new();
    for f in test.base_facts() {
        let object = Query {
            subject: f.subject,
            relation: f.relation,
            timestamp: f.timestamp,
        };
        let subject = Query {
            subject: f.object,
            relation: inverse(f.relation),
            timestamp: f.timestamp,
        };
        answers.entry(object).or_default().push(f.object);
        answers.entry(subject).or_default().push(f.subject);
        match direction {
            Direction::Object => keys.push(object),
            Direction::Subject => keys.push(subject),
            Direction::Both => keys.extend([object, subject]),
        }
    }
    for truth in answers.values_mut() {
        truth.sort_unstable();
        truth.dedup();
    }
    keys.into_iter()
        .map(|query| TestQuery {
            truth: answers[&query].clone(),
            query,
        })
        .collect()
}

/// Best 1-based position of any truth member; `space` when none is ranked.
pub fn rank_of_truth(ranking: &[Ranked], truth: &[u32], space: usize) -> usize {
    ranking
        .iter()
        .position(|e| truth.contains(&e.candidate))
        .map_or(space, |p| p + 1)
}

/// Frequency ranking over a full candidate space `0..space`: observed ids by
/// descending count, then the unobserved ones, ties by ascending id.
#[derive(Debug, Clone, Default)]
struct FrequencyRanking {
    order: Vec<(u32, u64)>,
    position: HashMap<u32, usize>,
    observed_sorted: Vec<u32>,
    space: usize,
}

impl FrequencyRanking {
    fn new(counts: &BTreeMap<u32, u64>, space: usize) -> Self {
        let mut order: Vec<(u32, u64)> = counts.iter().map(|(&k, &v)| (k, v)).collect();
        order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let position = order
            .iter()
            .enumerate()
            .map(|(i, &(k, _))| (k, i))
            .collect();
        Self {
            order,
            position,
            observed_sorted: counts.keys().copied().collect(),
            space,
        }
    }

    fn rank(&self, id: u32) -> usize {
        match self.position.get(&id) {
            Some(&p) => p + 1,
            None => {
                let observed_below = self.observed_sorted.partition_point(|&x| x < id);
                self.order.len() + 1 + id as usize - observed_below
            }
        }
    }

    fn top(&self, k: usize) -> Vec<Ranked> {
        let observed = self.order.iter().map(|&(c, n)| Ranked {
            candidate: c,
            score: 0.0,
            count: n as usize,
        });
        let unobserved = (0..self.space as u32)
            .filter(|c| !self.position.contains_key(c))
            .map(|c| Ranked {
                candidate: c,
                score: 0.0,
                count: 0,
            });
        observed.chain(unobserved).take(k).collect()
    }
}

/// Fallback for queries without rule candidates: how often each entity (or
/// category) appeared as the object of the query relation in training,
/// or over all relations when the relation was never seen.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    entity: HashMap<RelationId, FrequencyRanking>,
    category: HashMap<RelationId, FrequencyRanking>,
    entity_global: FrequencyRanking,
    category_global: FrequencyRanking,
}

impl BaselineModel {
    pub fn fit(train: &TemporalGraph) -> Self {
        let ne = train.num_entities();
        let nc = train.num_categories();
        let mut per_e: BTreeMap<RelationId, BTreeMap<u32, u64>> = BTreeMap::new();
        let mut per_c: BTreeMap<RelationId, BTreeMap<u32, u64>> = BTreeMap::new();
        let mut all_e = BTreeMap::new();
        let mut all_c = BTreeMap::new();
        for f in train.facts() {
            *per_e
                .entry(f.relation)
                .or_default()
                .entry(f.object)
                .or_insert(0) += 1;
            *per_c
                .entry(f.relation)
                .or_default()
                .entry(f.object_category)
                .or_insert(0) += 1;
            *all_e.entry(f.object).or_insert(0) += 1;
            *all_c.entry(f.object_category).or_insert(0) += 1;
        }
        Self {
            entity: per_e
                .iter()
                .map(|(&r, c)| (r, FrequencyRanking::new(c, ne)))
                .collect(),
            category: per_c
                .iter()
                .map(|(&r, c)| (r, FrequencyRanking::new(c, nc)))
                .collect(),
            entity_global: FrequencyRanking::new(&all_e, ne),
            category_global: FrequencyRanking::new(&all_c, nc),
        }
    }

    fn ranking(&self, task: Task, relation: RelationId) -> &FrequencyRanking {
        match task {
            Task::Entity => self.entity.get(&relation).unwrap_or(&self.entity_global),
            Task::Category => self
                .category
                .get(&relation)
                .unwrap_or(&self.category_global),
        }
    }

    pub fn rank(&self, task: Task, relation: RelationId, truth: &[u32]) -> usize {
        let ranking = self.ranking(task, relation);
        truth
            .iter()
            .map(|&t| ranking.rank(t))
            .min()
            .unwrap_or(ranking.space)
    }

    pub fn top(&self, task: Task, relation: RelationId, k: usize) -> Vec<Ranked> {
        self.ranking(task, relation).top(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        Self::from_weighted(ranks.iter().map(|&r| (r, 1)))
    }

    fn from_weighted(ranks: impl Iterator<Item = (usize, usize)>) -> Self {
        let (mut n, mut rr, mut h1, mut h3, mut h10) = (0usize, 0.0, 0usize, 0usize, 0usize);
        for (rank, weight) in ranks {
            n += weight;
            rr += weight as f64 / rank as f64;
            h1 += weight * usize::from(rank <= 1);
            h3 += weight * usize::from(rank <= 3);
            h10 += weight * usize::from(rank <= 10);
        }
        if n == 0 {
            return Self {
                mrr: 0.0,
                hits1: 0.0,
                hits3: 0.0,
                hits10: 0.0,
            };
        }
        let n = n as f64;
        Self {
            mrr: rr / n,
            hits1: h1 as f64 / n,
            hits3: h3 as f64 / n,
            hits10: h10 as f64 / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalConfig {
    pub task: Task,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub aggregation: Aggregation,
    pub mode: Mode,
    pub walks: usize,
    pub query_count: usize,
    pub nc_count: usize,
    pub nc_ratio: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

/// Audit record for one query under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub index: usize,
    pub query: Query,
    /// Entity or category ids, matching the task.
    pub truth: Vec<u32>,
    pub rank: usize,
    pub no_candidates: bool,
    pub rules_applied: usize,
    pub groundings_found: u64,
    pub top: Vec<Ranked>,
    /// Rule contributions to the top candidates.
    pub contributions: Vec<Contribution>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Keep per-query logs.
    pub logs: bool,
    /// Candidates listed per log record.
    pub log_top: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<EvalReport>,
    /// Parallel to `reports`; empty unless logs were requested.
    pub logs: Vec<Vec<QueryLog>>,
}

struct Outcome {
    ranks: Vec<usize>,
    empty: bool,
    logs: Vec<QueryLog>,
}

fn truth_for(task: Task, truth: &[EntityId], entity_category: &[CategoryId]) -> Vec<u32> {
    match task {
        Task::Entity => truth.to_vec(),
        Task::Category => {
            let mut c: Vec<u32> = truth
                .iter()
                .filter_map(|&e| entity_category.get(e as usize).copied())
                .collect();
            c.sort_unstable();
            c.dedup();
            c
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_one<S: FactStore + Sync + ?Sized>(
    index: usize,
    q: &TestQuery,
    store: &S,
    bank: &RuleBank,
    baseline: &BaselineModel,
    params: &ApplyParams,
    configs: &[EvalConfig],
    options: &EvalOptions,
) -> Result<Outcome> {
    let vocab = store.vocab();
    let entity_table = retrieve(&q.query, bank, store, params)?;
    let empty = entity_table.is_empty();
    let mut category_table: Option<CandidateTable> = None;
    let mut ranks = Vec::with_capacity(configs.len());
    let mut logs = Vec::new();
    for cfg in configs {
        let truth = truth_for(cfg.task, &q.truth, &vocab.entity_category);
        let space = match cfg.task {
            Task::Entity => vocab.entities.len(),
            Task::Category => vocab.categories.len(),
        };
        let (rank, top, table) = if empty {
            let rank = baseline.rank(cfg.task, q.query.relation, &truth);
            let top = if options.logs {
                baseline.top(cfg.task, q.query.relation, options.log_top)
            } else {
                Vec::new()
            };
            (rank, top, &entity_table)
        } else {
            let table = match cfg.task {
                Task::Entity => &entity_table,
                Task::Category => {
                    if category_table.is_none() {
                        category_table =
                            Some(to_categories(&entity_table, &vocab.entity_category)?);
                    }
                    category_table.as_ref().expect("just set")
                }
            };
            let ranking = aggregate(table, cfg.aggregation)?;
            let rank = rank_of_truth(&ranking.entries, &truth, space);
            let mut top = ranking.entries;
            top.truncate(options.log_top);
            (rank, top, table)
        };
        ranks.push(rank);
        if options.logs {
            let shown: Vec<u32> = top.iter().map(|r| r.candidate).collect();
            logs.push(QueryLog {
                index,
                query: q.query,
                truth,
                rank,
                no_candidates: empty,
                rules_applied: table.rules_applied,
                groundings_found: table.groundings_found,
                contributions: table
                    .contributions
                    .iter()
                    .filter(|c| shown.contains(&c.candidate))
                    .cloned()
                    .collect(),
                top,
            });
        }
    }
    Ok(Outcome { ranks, empty, logs })
}

/// Evaluates every configuration over the same retrievals. Each distinct
/// query is answered once; repeated test facts reuse the result.
pub fn evaluate<S: FactStore + Sync + ?Sized>(
    store: &S,
    bank: &RuleBank,
    queries: &[TestQuery],
    baseline: &BaselineModel,
    params: &ApplyParams,
    configs: &[EvalConfig],
    options: &EvalOptions,
) -> Result<Evaluation> {
    params.validate()?;
    bank.check_vocabulary(store.vocab())?;
    if params.mode == Mode::CTLogic && bank.meta().mode == Mode::TLogic {
        return Err(TkgError::InvalidParameter(
            "category-aware application needs a rule bank learned in ctlogic mode".into(),
        ));
    }
    let mut first_of: HashMap<Query, usize> = HashMap::new();
    let mut unique: Vec<usize> = Vec::new();
    let mut slot: Vec<usize> = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        let s = *first_of.entry(q.query).or_insert_with(|| {
            unique.push(i);
            unique.len() - 1
        });
        slot.push(s);
    }
    let outcomes: Vec<Outcome> = unique
        .par_iter()
        .map(|&i| {
            evaluate_one(
                i,
                &queries[i],
                store,
                bank,
                baseline,
                params,
                configs,
                options,
            )
        })
        .collect::<Result<_>>()?;

    let n = queries.len();
    let nc_count = slot.iter().filter(|&&s| outcomes[s].empty).count();
    let mut reports = Vec::with_capacity(configs.len());
    let mut logs = Vec::new();
    for (k, cfg) in configs.iter().enumerate() {
        let metrics = Metrics::from_weighted(slot.iter().map(|&s| (outcomes[s].ranks[k], 1)));
        reports.push(EvalReport {
            task: cfg.task,
            aggregation: cfg.aggregation,
            mode: params.mode,
            walks: bank.meta().walks,
            query_count: n,
            nc_count,
            nc_ratio: if n == 0 {
                0.0
            } else {
                nc_count as f64 / n as f64
            },
            mrr: metrics.mrr,
            hits1: metrics.hits1,
            hits3: metrics.hits3,
            hits10: metrics.hits10,
        });
        if options.logs {
            logs.push(
                slot.iter()
                    .enumerate()
                    .map(|(i, &s)| QueryLog {
                        index: i,
                        ..outcomes[s].logs[k].clone()
                    })
                    .collect(),
            );
        }
    }
    Ok(Evaluation { reports, logs })
}
