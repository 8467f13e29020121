//! Rule application: select rules for a query, ground their bodies inside the
//! time window before the query, and score the resulting candidates.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TkgError};
use crate::graph::{CategoryId, EntityId, FactId, FactStore, RelationId, Timestamp, WindowView};
use crate::rules::{ChainStep, Mode, Rule, RuleBank};

/// When rule application stops for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCriterion {
    /// At least `gamma` pairwise distinct sorted score vectors.
    #[default]
    DistinctVectors,
    /// At least `gamma` candidates.
    Candidates,
}

impl FromStr for StopCriterion {
    type Err = TkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distinct_vectors" | "distinct" => Ok(StopCriterion::DistinctVectors),
            "candidates" => Ok(StopCriterion::Candidates),
            other => Err(TkgError::InvalidParameter(format!(
                "unknown stop criterion `{other}` (expected distinct_vectors or candidates)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApplyParams {
    pub window: u32,
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: usize,
    pub stop: StopCriterion,
    pub mode: Mode,
}

impl Default for ApplyParams {
    fn default() -> Self {
        Self {
            window: 100,
            alpha: 0.5,
            lambda: 0.1,
            gamma: 30,
            stop: StopCriterion::DistinctVectors,
            mode: Mode::CTLogic,
        }
    }
}

impl ApplyParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(TkgError::InvalidParameter("window must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TkgError::InvalidParameter(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(TkgError::InvalidParameter(format!(
                "lambda {} must be positive",
                self.lambda
            )));
        }
        if self.gamma == 0 {
            return Err(TkgError::InvalidParameter("gamma must be positive".into()));
        }
        Ok(())
    }
}

/// `(subject, relation, ?, timestamp)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Query {
    pub subject: EntityId,
    pub relation: RelationId,
    pub timestamp: Timestamp,
}

/// Rules applicable to a query, by descending confidence.
pub fn select_rules(
    bank: &RuleBank,
    relation: RelationId,
    subject_category: Option<CategoryId>,
    mode: Mode,
) -> Vec<usize> {
    match (mode, subject_category) {
        (Mode::TLogic, _) => bank.for_relation(relation).to_vec(),
        (Mode::CTLogic, Some(c)) => bank.for_relation_category(relation, c).to_vec(),
        (Mode::CTLogic, None) => Vec::new(),
    }
}

pub fn score(confidence: f64, tau: Timestamp, t_q: Timestamp, alpha: f64, lambda: f64) -> f64 {
    let age = f64::from(t_q) - f64::from(tau);
    alpha * confidence + (1.0 - alpha) * (-lambda * age).exp()
}

/// Best grounding found for one candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grounding {
    /// Timestamp of the earliest body fact, maximised over groundings.
    pub tau: Timestamp,
    /// Body facts of a τ-maximising grounding, in chain order.
    pub facts: Vec<FactId>,
}

/// Per-query adjacency cache over a window: facts leaving an entity with a
/// given relation, sorted by time.
struct Adjacency<'a, S: FactStore + ?Sized> {
    view: WindowView<'a, S>,
    cache: HashMap<(EntityId, RelationId), Rc<[FactId]>>,
}

impl<'a, S: FactStore + ?Sized> Adjacency<'a, S> {
    fn new(view: WindowView<'a, S>) -> Self {
        Self {
            view,
            cache: HashMap::new(),
        }
    }

    fn edges(&mut self, entity: EntityId, relation: RelationId) -> Rc<[FactId]> {
        let view = self.view;
        self.cache
            .entry((entity, relation))
            .or_insert_with(|| {
                view.outgoing(entity)
                    .iter()
                    .copied()
                    .filter(|&id| view.fact(id).relation == relation)
                    .collect()
            })
            .clone()
    }
}

struct Search<'c> {
    chain: &'c [ChainStep],
    bindings: Vec<Option<EntityId>>,
    path: Vec<FactId>,
    found: BTreeMap<EntityId, Grounding>,
    groundings: u64,
}

impl Search<'_> {
    fn descend<S: FactStore + ?Sized>(
        &mut self,
        adj: &mut Adjacency<'_, S>,
        j: usize,
        lower: Timestamp,
    ) {
        if j == self.chain.len() {
            self.groundings += 1;
            let last = self.chain[j - 1].to as usize;
            let candidate = self.bindings[last].expect("chain binds its end");
            let tau = adj.view.fact(self.path[0]).timestamp;
            match self.found.get_mut(&candidate) {
                Some(g) if g.tau >= tau => {}
                Some(g) => {
                    g.tau = tau;
                    g.facts.clone_from(&self.path);
                }
                None => {
                    self.found.insert(
                        candidate,
                        Grounding {
                            tau,
                            facts: self.path.clone(),
                        },
                    );
                }
            }
            return;
        }
        let step = self.chain[j];
        let from = self.bindings[step.from as usize].expect("chain is connected");
        if let Some((cat_from, _)) = step.categories {
            if adj.view.store().vocab().category_of(from) != Some(cat_from) {
                return;
            }
        }
        let required = self.bindings[step.to as usize];
        let view = adj.view;
        let edges = adj.edges(from, step.relation);
        let begin = edges.partition_point(|&id| view.fact(id).timestamp < lower);
        for &id in &edges[begin..] {
            let f = *adj.view.fact(id);
            if required.is_some_and(|e| e != f.object) {
                continue;
            }
            if let Some((_, cat_to)) = step.categories {
                if f.object_category != cat_to {
                    continue;
                }
            }
            let fresh = required.is_none();
            if fresh {
                self.bindings[step.to as usize] = Some(f.object);
            }
            self.path.push(id);
            self.descend(adj, j + 1, f.timestamp);
            self.path.pop();
            if fresh {
                self.bindings[step.to as usize] = None;
            }
        }
    }
}

fn ground_with<S: FactStore + ?Sized>(
    rule: &Rule,
    subject: EntityId,
    adj: &mut Adjacency<'_, S>,
) -> (BTreeMap<EntityId, Grounding>, u64) {
    if rule.is_empty() {
        return (BTreeMap::new(), 0);
    }
    let chain = rule.chain(adj.view.store().vocab().num_base_relations());
    let mut bindings = vec![None; rule.num_vars()];
    bindings[rule.head_subject_var() as usize] = Some(subject);
    let mut search = Search {
        chain: &chain,
        bindings,
        path: Vec::with_capacity(chain.len()),
        found: BTreeMap::new(),
        groundings: 0,
    };
    search.descend(adj, 0, adj.view.start());
    (search.found, search.groundings)
}

/// All candidates reachable by grounding the rule body from `subject` inside
/// the view, each with its latest τ and a witness grounding.
pub fn ground_rule<S: FactStore + ?Sized>(
    rule: &Rule,
    subject: EntityId,
    view: WindowView<'_, S>,
) -> BTreeMap<EntityId, Grounding> {
    ground_with(rule, subject, &mut Adjacency::new(view)).0
}

/// One `(rule, candidate)` score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    /// Index into the rule bank.
    pub rule: usize,
    pub candidate: u32,
    pub tau: Timestamp,
    pub score: f64,
    pub facts: Vec<FactId>,
}

/// Scores collected per candidate. Candidates are entity ids, or category ids
/// after [`crate::aggregation::to_categories`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateTable {
    /// Descending score list per candidate.
    pub scores: BTreeMap<u32, Vec<f64>>,
    pub contributions: Vec<Contribution>,
    pub rules_applied: usize,
    pub groundings_found: u64,
}

impl CandidateTable {
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn total_predictions(&self) -> usize {
        self.scores.values().map(Vec::len).sum()
    }

    pub fn push(&mut self, candidate: u32, score: f64) {
        let list = self.scores.entry(candidate).or_default();
        let at = list.partition_point(|&s| s >= score);
        list.insert(at, score);
    }

    /// Number of distinct score vectors across candidates.
    pub fn distinct_vectors(&self) -> usize {
        self.scores
            .values()
            .map(|v| v.iter().map(|s| s.to_bits()).collect::<Vec<u64>>())
            .collect::<HashSet<_>>()
            .len()
    }

    fn should_stop(&self, params: &ApplyParams) -> bool {
        // Distinct vectors never exceed candidates, so check the cheap bound first.
        if self.len() < params.gamma {
            return false;
        }
        match params.stop {
            StopCriterion::Candidates => true,
            StopCriterion::DistinctVectors => self.distinct_vectors() >= params.gamma,
        }
    }
}

/// Applies matching rules in descending confidence until the stop criterion
/// holds. Only facts strictly before the query time are read.
pub fn retrieve<S: FactStore + ?Sized>(
    query: &Query,
    bank: &RuleBank,
    store: &S,
    params: &ApplyParams,
) -> Result<CandidateTable> {
    let view = WindowView::new(store, query.timestamp, params.window)?;
    let category = store.vocab().category_of(query.subject);
    let selected = select_rules(bank, query.relation, category, params.mode);
    let mut adj = Adjacency::new(view);
    let mut table = CandidateTable::default();
    for index in selected {
        let rule = &bank.rules()[index];
        let (found, count) = ground_with(rule, query.subject, &mut adj);
        table.rules_applied += 1;
        table.groundings_found += count;
        for (candidate, g) in found {
            let s = score(
                rule.confidence,
                g.tau,
                query.timestamp,
                params.alpha,
                params.lambda,
            );
            table.push(candidate, s);
            table.contributions.push(Contribution {
                rule: index,
                candidate,
                tau: g.tau,
                score: s,
                facts: g.facts,
            });
        }
        if table.should_stop(params) {
            break;
        }
    }
    Ok(table)
}
