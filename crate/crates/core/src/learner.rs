//! Rule mining by reverse-chronological temporal random walks.
//!
//! A walk of length `b` starts at a head fact drawn uniformly among the facts
//! with the target relation, then moves backwards in time `b` steps: the
//! first body step must be strictly earlier than the head, later steps may
//! share timestamps, and the last step must return to the head subject.
//! Steps are drawn with probability proportional to `exp(t_v - t_u)`, which
//! favours facts close in time to the current one.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TkgError};
use crate::graph::{CategoryId, EntityId, FactId, RelationId, TemporalGraph, Timestamp};
use crate::rules::{BankMeta, ChainStep, Mode, Rule, RuleBank, RuleCategories, Var};

/// Rules at or below this confidence are discarded.
pub const MIN_CONFIDENCE: f64 = 0.01;
/// Rules need at least this many distinct body groundings.
pub const MIN_BODY_SUPPORT: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnParams {
    /// Walk budget `n` per relation (spread over categories in ctlogic mode).
    pub walks: usize,
    pub max_length: usize,
    /// Body-grounding attempts per rule when estimating confidence.
    pub confidence_samples: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            walks: 200,
            max_length: 3,
            confidence_samples: 500,
            seed: 12,
            mode: Mode::CTLogic,
        }
    }
}

impl LearnParams {
    pub fn validate(&self, num_categories: usize) -> Result<()> {
        if self.walks == 0 {
            return Err(TkgError::InvalidParameter("walks must be positive".into()));
        }
        if self.max_length == 0 || self.max_length > 32 {
            return Err(TkgError::InvalidParameter(
                "max rule length must be between 1 and 32".into(),
            ));
        }
        if self.confidence_samples == 0 {
            return Err(TkgError::InvalidParameter(
                "confidence samples must be positive".into(),
            ));
        }
        if self.mode == Mode::CTLogic && self.walks <= num_categories {
            return Err(TkgError::InvalidParameter(format!(
                "ctlogic needs more walks ({}) than categories ({num_categories})",
                self.walks
            )));
        }
        Ok(())
    }
}

/// Walks executed per work item: `n` per `(relation, length)` for TLogic,
/// `ceil(n / |C|) + 1` per `(relation, length, category)` for C-TLogic.
pub fn walk_budget(walks: usize, num_categories: usize, mode: Mode) -> usize {
    match mode {
        Mode::TLogic => walks,
        Mode::CTLogic => walks.div_ceil(num_categories.max(1)) + 1,
    }
}

/// Facts of a walk in walk order: head first, earliest body fact last.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Walk {
    pub facts: Vec<FactId>,
}

impl Walk {
    pub fn len(&self) -> usize {
        self.facts.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WalkOutcome {
    Complete(Walk),
    /// Some step had no admissible fact; the walk is discarded.
    Incomplete,
    /// No fact carries the requested head relation (and category).
    Unsampleable,
}

/// Exponential transition distribution over candidate timestamps relative to
/// the current fact's time `t_u`.
pub fn transition_probabilities(candidates: &[Timestamp], t_u: Timestamp) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(TkgError::InvalidParameter(
            "transition over an empty candidate set".into(),
        ));
    }
    let deltas: Vec<f64> = candidates
        .iter()
        .map(|&t| f64::from(t) - f64::from(t_u))
        .collect();
    let shift = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = deltas.iter().map(|d| (d - shift).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Samples one temporal walk of length `b` for `head_relation`.
pub fn sample_walk<R: Rng + ?Sized>(
    g: &TemporalGraph,
    head_relation: RelationId,
    b: usize,
    head_category: Option<CategoryId>,
    rng: &mut R,
) -> Result<WalkOutcome> {
    if b == 0 {
        return Err(TkgError::InvalidParameter(
            "walk length must be positive".into(),
        ));
    }
    let heads = match head_category {
        Some(c) => g.with_relation_and_category(head_relation, c),
        None => g.with_relation(head_relation),
    };
    if heads.is_empty() {
        return Ok(WalkOutcome::Unsampleable);
    }
    let head_id = heads[rng.random_range(0..heads.len())];
    let head_subject = g.facts()[head_id].subject;
    let mut walk = Vec::with_capacity(b + 1);
    walk.push(head_id);
    let mut current = head_id;
    for m in (1..=b).rev() {
        let u = g.facts()[current];
        let first_step = m == b;
        let exclude = (!first_step).then(|| g.inverse_fact(current));
        let mut candidates = g.candidate_facts(u.object, u.timestamp, first_step, exclude)?;
        if m == 1 {
            candidates.retain(|&id| g.facts()[id].object == head_subject);
        }
        if candidates.is_empty() {
            return Ok(WalkOutcome::Incomplete);
        }
        let times: Vec<Timestamp> = candidates
            .iter()
            .map(|&id| g.facts()[id].timestamp)
            .collect();
        let probs = transition_probabilities(&times, u.timestamp)?;
        let pick = WeightedIndex::new(&probs)
            .map_err(|e| TkgError::InvalidParameter(format!("transition weights: {e}")))?
            .sample(rng);
        current = candidates[pick];
        walk.push(current);
    }
    Ok(WalkOutcome::Complete(Walk { facts: walk }))
}

/// Replaces the walk's entities by placeholders numbered in order of first
/// occurrence over `s_head, o_head, s_b, o_b, ..., s_1, o_1`.
pub fn abstract_rule(g: &TemporalGraph, walk: &Walk, mode: Mode) -> Rule {
    let facts: Vec<_> = walk.facts.iter().map(|&id| g.facts()[id]).collect();
    let mut seen: Vec<EntityId> = Vec::new();
    let mut var_of = |e: EntityId| -> Var {
        match seen.iter().position(|&x| x == e) {
            Some(i) => i as Var,
            None => {
                seen.push(e);
                (seen.len() - 1) as Var
            }
        }
    };
    let mut subject_pattern = Vec::with_capacity(facts.len());
    let mut object_pattern = Vec::with_capacity(facts.len());
    for f in &facts {
        subject_pattern.push(var_of(f.subject));
        object_pattern.push(var_of(f.object));
    }
    let categories = (mode == Mode::CTLogic).then(|| RuleCategories {
        head: (facts[0].subject_category, facts[0].object_category),
        body: facts[1..]
            .iter()
            .map(|f| (f.subject_category, f.object_category))
            .collect(),
    });
    Rule {
        mode,
        head_relation: facts[0].relation,
        body_relations: facts[1..].iter().map(|f| f.relation).collect(),
        subject_pattern,
        object_pattern,
        categories,
        confidence: 0.0,
        body_support: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceEstimate {
    pub confidence: f64,
    pub body_support: u64,
}

fn step_matches(g: &TemporalGraph, step: &ChainStep, id: FactId) -> bool {
    let f = &g.facts()[id];
    f.relation == step.relation
        && step
            .categories
            .is_none_or(|(cf, ct)| f.subject_category == cf && f.object_category == ct)
}

/// Admissible start facts for the first chain step.
fn start_facts(g: &TemporalGraph, chain: &[ChainStep]) -> Vec<FactId> {
    let first = &chain[0];
    g.with_relation(first.relation)
        .iter()
        .copied()
        .filter(|&id| step_matches(g, first, id))
        .filter(|&id| first.from != first.to || g.facts()[id].subject == g.facts()[id].object)
        .collect()
}

/// One uniform body-grounding attempt; `None` on a dead end.
fn sample_body<R: Rng + ?Sized>(
    g: &TemporalGraph,
    chain: &[ChainStep],
    starts: &[FactId],
    num_vars: usize,
    rng: &mut R,
) -> Option<Vec<FactId>> {
    let mut bindings: Vec<Option<EntityId>> = vec![None; num_vars];
    let first_id = starts[rng.random_range(0..starts.len())];
    let first = g.facts()[first_id];
    bindings[chain[0].from as usize] = Some(first.subject);
    bindings[chain[0].to as usize] = Some(first.object);
    let mut path = Vec::with_capacity(chain.len());
    path.push(first_id);
    let mut last_time = first.timestamp;
    let mut admissible = Vec::new();
    for step in &chain[1..] {
        let from = bindings[step.from as usize].expect("chain is connected");
        let required = bindings[step.to as usize];
        let out = g.outgoing(from);
        let begin = out.partition_point(|&id| g.facts()[id].timestamp < last_time);
        admissible.clear();
        admissible.extend(out[begin..].iter().copied().filter(|&id| {
            step_matches(g, step, id) && required.is_none_or(|e| g.facts()[id].object == e)
        }));
        if admissible.is_empty() {
            return None;
        }
        let id = admissible[rng.random_range(0..admissible.len())];
        let f = g.facts()[id];
        bindings[step.to as usize] = Some(f.object);
        last_time = f.timestamp;
        path.push(id);
    }
    Some(path)
}

/// Whether a body grounding (chain order) is followed by the rule head.
pub fn head_follows(g: &TemporalGraph, rule: &Rule, grounding: &[FactId]) -> bool {
    let first = g.facts()[grounding[0]];
    let last = g.facts()[*grounding.last().expect("non-empty grounding")];
    // Chain starts at the head subject and ends at the head object.
    g.latest_timestamp(first.subject, rule.head_relation, last.object)
        .is_some_and(|t| t > last.timestamp)
}

/// Estimates confidence from `samples` uniform body-grounding attempts.
/// Support counts distinct groundings among the successful attempts.
pub fn estimate_confidence<R: Rng + ?Sized>(
    rule: &Rule,
    g: &TemporalGraph,
    samples: usize,
    rng: &mut R,
) -> ConfidenceEstimate {
    let none = ConfidenceEstimate {
        confidence: 0.0,
        body_support: 0,
    };
    if rule.is_empty() {
        return none;
    }
    let chain = rule.chain(g.num_base_relations());
    let starts = start_facts(g, &chain);
    if starts.is_empty() {
        return none;
    }
    let num_vars = rule.num_vars();
    let mut groundings: HashSet<Vec<FactId>> = HashSet::new();
    for _ in 0..samples {
        if let Some(path) = sample_body(g, &chain, &starts, num_vars, rng) {
            groundings.insert(path);
        }
    }
    if groundings.is_empty() {
        return none;
    }
    let hits = groundings
        .iter()
        .filter(|path| head_follows(g, rule, path))
        .count();
    ConfidenceEstimate {
        confidence: hits as f64 / groundings.len() as f64,
        body_support: groundings.len() as u64,
    }
}

/// Seed for one `(relation, length, category)` work item.
pub fn work_item_seed(
    seed: u64,
    relation: RelationId,
    length: usize,
    category: Option<CategoryId>,
) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let c = category.map_or(u64::MAX, u64::from);
    mix(mix(mix(mix(seed) ^ u64::from(relation)) ^ length as u64) ^ c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItemStats {
    pub relation: RelationId,
    pub length: usize,
    pub category: Option<CategoryId>,
    pub walks_attempted: usize,
    pub walks_completed: usize,
    pub rules_estimated: usize,
    pub rules_kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnStats {
    pub work_items: Vec<WorkItemStats>,
}

impl LearnStats {
    pub fn walks_attempted(&self) -> usize {
        self.work_items.iter().map(|w| w.walks_attempted).sum()
    }

    pub fn walks_completed(&self) -> usize {
        self.work_items.iter().map(|w| w.walks_completed).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Learned {
    pub bank: RuleBank,
    pub stats: LearnStats,
}

fn run_work_item(
    g: &TemporalGraph,
    params: &LearnParams,
    relation: RelationId,
    length: usize,
    category: Option<CategoryId>,
    budget: usize,
) -> Result<(Vec<Rule>, WorkItemStats)> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(work_item_seed(params.seed, relation, length, category));
    let mut stats = WorkItemStats {
        relation,
        length,
        category,
        walks_attempted: 0,
        walks_completed: 0,
        rules_estimated: 0,
        rules_kept: 0,
    };
    let mut seen = HashSet::new();
    let mut rules = Vec::new();
    for _ in 0..budget {
        stats.walks_attempted += 1;
        let walk = match sample_walk(g, relation, length, category, &mut rng)? {
            WalkOutcome::Complete(walk) => walk,
            WalkOutcome::Incomplete => continue,
            WalkOutcome::Unsampleable => break,
        };
        stats.walks_completed += 1;
        let mut rule = abstract_rule(g, &walk, params.mode);
        if !seen.insert(rule.owned_key()) {
            continue;
        }
        stats.rules_estimated += 1;
        let est = estimate_confidence(&rule, g, params.confidence_samples, &mut rng);
        if est.confidence > MIN_CONFIDENCE && est.body_support >= MIN_BODY_SUPPORT {
            rule.confidence = est.confidence;
            rule.body_support = est.body_support;
            rules.push(rule);
        }
    }
    stats.rules_kept = rules.len();
    Ok((rules, stats))
}

/// Learns a rule bank. Work items run in parallel, each with its own
/// generator, so the result depends only on the graph and `params`.
pub fn learn(g: &TemporalGraph, params: &LearnParams) -> Result<Learned> {
    params.validate(g.num_categories())?;
    let budget = walk_budget(params.walks, g.num_categories(), params.mode);
    let mut items: Vec<(RelationId, usize, Option<CategoryId>)> = Vec::new();
    for length in 1..=params.max_length {
        match params.mode {
            Mode::TLogic => {
                for r in 0..g.num_relations() {
                    if !g.with_relation(r).is_empty() {
                        items.push((r, length, None));
                    }
                }
            }
            Mode::CTLogic => {
                for (r, c) in g.relation_category_pairs() {
                    items.push((r, length, Some(c)));
                }
            }
        }
    }
    items.sort_unstable();

    let results: Vec<(Vec<Rule>, WorkItemStats)> = items
        .into_par_iter()
        .map(|(r, b, c)| run_work_item(g, params, r, b, c, budget))
        .collect::<Result<_>>()?;

    let mut rules = Vec::new();
    let mut stats = LearnStats::default();
    for (item_rules, item_stats) in results {
        rules.extend(item_rules);
        stats.work_items.push(item_stats);
    }
    log::info!(
        "learned {} rules from {} completed walks ({} attempted)",
        rules.len(),
        stats.walks_completed(),
        stats.walks_attempted()
    );
    let meta = BankMeta {
        mode: params.mode,
        walks: params.walks,
        max_length: params.max_length,
        confidence_samples: params.confidence_samples,
        seed: params.seed,
        num_relations: g.num_relations(),
        num_categories: g.num_categories(),
        vocab_fingerprint: g.vocab().fingerprint(),
    };
    Ok(Learned {
        bank: RuleBank::new(meta, rules),
        stats,
    })
}
