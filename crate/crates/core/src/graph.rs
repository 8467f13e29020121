//! Integer-id temporal knowledge graph.
//!
//! Every base fact `(s, r, o, t)` is stored together with its inverse
//! `(o, r + R, s, t)` where `R` is the number of base relations, so that
//! traversals only ever follow outgoing edges. Base facts occupy ids
//! `0..m` and their inverses `m..2m`; the inverse of fact `i` is `i ± m`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TkgError};

pub type EntityId = u32;
pub type RelationId = u32;
pub type CategoryId = u32;
/// Normalized time unit: raw timestamps are mapped onto `0..T` in order.
pub type Timestamp = u32;
/// Position of a fact inside its graph.
pub type FactId = usize;

/// One timestamped, categorized edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub timestamp: Timestamp,
    pub subject_category: CategoryId,
    pub object_category: CategoryId,
}

/// Bidirectional string <-> id map with ids assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for name in names {
            vocab.intern(&name.into());
        }
        vocab
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Vocabularies shared by the train, valid and test splits of one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub entities: Vocab,
    /// Base relations only; inverse relation `r + len` is rendered as `_name`.
    pub relations: Vocab,
    pub categories: Vocab,
    /// Category of every entity, indexed by entity id.
    pub entity_category: Vec<CategoryId>,
    /// Raw timestamp labels indexed by normalized time.
    pub timestamps: Vec<String>,
}

impl Vocabulary {
    pub fn num_base_relations(&self) -> u32 {
        self.relations.len() as u32
    }

    pub fn num_relations(&self) -> u32 {
        2 * self.num_base_relations()
    }

    pub fn inverse(&self, relation: RelationId) -> RelationId {
        inverse_relation(relation, self.num_base_relations())
    }

    pub fn category_of(&self, entity: EntityId) -> Option<CategoryId> {
        self.entity_category.get(entity as usize).copied()
    }

    pub fn entity_name(&self, entity: EntityId) -> String {
        self.entities
            .name(entity)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{entity}"))
    }

    pub fn category_name(&self, category: CategoryId) -> String {
        self.categories
            .name(category)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{category}"))
    }

    pub fn relation_name(&self, relation: RelationId) -> String {
        let base = self.num_base_relations();
        let (id, inverse) = if relation >= base {
            (relation - base, true)
        } else {
            (relation, false)
        };
        let name = self
            .relations
            .name(id)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{id}"));
        if inverse {
            format!("_{name}")
        } else {
            name
        }
    }

    /// Accepts a base relation name or `_name` for its inverse.
    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        if let Some(id) = self.relations.id(name) {
            return Some(id);
        }
        name.strip_prefix('_')
            .and_then(|base| self.relations.id(base))
            .map(|id| id + self.num_base_relations())
    }

    pub fn timestamp_id(&self, raw: &str) -> Option<Timestamp> {
        self.timestamps
            .iter()
            .position(|t| t == raw)
            .map(|t| t as Timestamp)
    }

    pub fn timestamp_label(&self, t: Timestamp) -> String {
        self.timestamps
            .get(t as usize)
            .cloned()
            .unwrap_or_else(|| t.to_string())
    }

    /// Stable digest of all names; rule banks record it to detect mismatched datasets.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (tag, vocab) in [
            ("E", &self.entities),
            ("R", &self.relations),
            ("C", &self.categories),
        ] {
            hasher.update(tag.as_bytes());
            for name in vocab.names() {
                hasher.update((name.len() as u64).to_le_bytes());
                hasher.update(name.as_bytes());
            }
        }
        for c in &self.entity_category {
            hasher.update(c.to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn inverse_relation(relation: RelationId, num_base_relations: u32) -> RelationId {
    if relation < num_base_relations {
        relation + num_base_relations
    } else {
        relation - num_base_relations
    }
}

/// Read access used by rule application. `TemporalGraph` is the canonical
/// implementation; tests wrap it to observe which facts get read.
pub trait FactStore {
    fn vocab(&self) -> &Vocabulary;

    fn fact(&self, id: FactId) -> &Fact;

    /// Facts with the given subject and `lo <= t < hi`, sorted by time.
    fn outgoing_between(&self, subject: EntityId, lo: Timestamp, hi: Timestamp) -> &[FactId];

    /// All facts with `lo <= t < hi`, sorted by time.
    fn facts_between(&self, lo: Timestamp, hi: Timestamp) -> &[FactId];
}

/// Immutable, fully indexed fact store with inverse edges.
#[derive(Debug, Clone)]
pub struct TemporalGraph {
    vocab: Arc<Vocabulary>,
    facts: Vec<Fact>,
    num_base_facts: usize,
    by_subject: Vec<Vec<FactId>>,
    by_relation: Vec<Vec<FactId>>,
    by_relation_category: BTreeMap<(RelationId, CategoryId), Vec<FactId>>,
    by_time: Vec<FactId>,
    latest: HashMap<(EntityId, RelationId, EntityId), Timestamp>,
}

impl TemporalGraph {
    /// Builds a graph from base facts (relations `< num_base_relations`);
    /// inverse facts are appended automatically.
    pub fn from_base_facts(vocab: Arc<Vocabulary>, base: Vec<Fact>) -> Result<Self> {
        let nb = vocab.num_base_relations();
        let num_entities = vocab.entities.len();
        let mut facts = Vec::with_capacity(base.len() * 2);
        for fact in &base {
            if fact.relation >= nb {
                return Err(TkgError::InvalidParameter(format!(
                    "base fact uses relation {} but only {nb} base relations exist",
                    fact.relation
                )));
            }
            for e in [fact.subject, fact.object] {
                if e as usize >= num_entities {
                    return Err(TkgError::UnknownEntity(e));
                }
            }
            if vocab.category_of(fact.subject) != Some(fact.subject_category)
                || vocab.category_of(fact.object) != Some(fact.object_category)
            {
                return Err(TkgError::InvalidParameter(format!(
                    "fact {fact:?} disagrees with the entity category map"
                )));
            }
            facts.push(*fact);
        }
        let inverses: Vec<Fact> = base
            .iter()
            .map(|f| Fact {
                subject: f.object,
                relation: f.relation + nb,
                object: f.subject,
                timestamp: f.timestamp,
                subject_category: f.object_category,
                object_category: f.subject_category,
            })
            .collect();
        facts.extend(inverses);

        let mut by_subject = vec![Vec::new(); num_entities];
        let mut by_relation = vec![Vec::new(); 2 * nb as usize];
        let mut by_relation_category: BTreeMap<_, Vec<FactId>> = BTreeMap::new();
        let mut latest: HashMap<_, Timestamp> = HashMap::new();
        for (id, f) in facts.iter().enumerate() {
            by_subject[f.subject as usize].push(id);
            by_relation[f.relation as usize].push(id);
            by_relation_category
                .entry((f.relation, f.subject_category))
                .or_default()
                .push(id);
            latest
                .entry((f.subject, f.relation, f.object))
                .and_modify(|t| *t = (*t).max(f.timestamp))
                .or_insert(f.timestamp);
        }
        // Stable sorts keep insertion order among equal timestamps.
        for list in &mut by_subject {
            list.sort_by_key(|&id| facts[id].timestamp);
        }
        let mut by_time: Vec<FactId> = (0..facts.len()).collect();
        by_time.sort_by_key(|&id| facts[id].timestamp);

        Ok(Self {
            vocab,
            num_base_facts: base.len(),
            facts,
            by_subject,
            by_relation,
            by_relation_category,
            by_time,
            latest,
        })
    }

    /// Union of several graphs over the same vocabulary (base facts in argument order).
    pub fn union(graphs: &[&TemporalGraph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| TkgError::InvalidParameter("union of zero graphs".into()))?;
        let mut base = Vec::new();
        for g in graphs {
            if !Arc::ptr_eq(&g.vocab, &first.vocab) && *g.vocab != *first.vocab {
                return Err(TkgError::VocabularyMismatch(
                    "graphs in a union must share one vocabulary".into(),
                ));
            }
            base.extend_from_slice(g.base_facts());
        }
        Self::from_base_facts(first.vocab.clone(), base)
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn base_facts(&self) -> &[Fact] {
        &self.facts[..self.num_base_facts]
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.entities.len()
    }

    pub fn num_relations(&self) -> u32 {
        self.vocab.num_relations()
    }

    pub fn num_base_relations(&self) -> u32 {
        self.vocab.num_base_relations()
    }

    pub fn num_categories(&self) -> usize {
        self.vocab.categories.len()
    }

    pub fn inverse_relation(&self, relation: RelationId) -> RelationId {
        self.vocab.inverse(relation)
    }

    /// Id of the inverse counterpart of a stored fact.
    pub fn inverse_fact(&self, id: FactId) -> FactId {
        if id < self.num_base_facts {
            id + self.num_base_facts
        } else {
            id - self.num_base_facts
        }
    }

    /// Smallest and largest timestamp present, if any.
    pub fn time_range(&self) -> Option<(Timestamp, Timestamp)> {
        let first = self.by_time.first()?;
        let last = self.by_time.last()?;
        Some((self.facts[*first].timestamp, self.facts[*last].timestamp))
    }

    /// Facts with subject `entity`, sorted by `(timestamp, id)`.
    pub fn outgoing(&self, entity: EntityId) -> &[FactId] {
        self.by_subject
            .get(entity as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn with_relation(&self, relation: RelationId) -> &[FactId] {
        self.by_relation
            .get(relation as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn with_relation_and_category(
        &self,
        relation: RelationId,
        subject_category: CategoryId,
    ) -> &[FactId] {
        self.by_relation_category
            .get(&(relation, subject_category))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// `(relation, subject category)` pairs that have at least one fact.
    pub fn relation_category_pairs(&self) -> impl Iterator<Item = (RelationId, CategoryId)> + '_ {
        self.by_relation_category.keys().copied()
    }

    /// Latest timestamp of `(subject, relation, object)`, if the triple occurs.
    pub fn latest_timestamp(
        &self,
        subject: EntityId,
        relation: RelationId,
        object: EntityId,
    ) -> Option<Timestamp> {
        self.latest.get(&(subject, relation, object)).copied()
    }

    /// Outgoing facts of `entity` with `t < bound` (strict) or `t <= bound`,
    /// minus `exclude` when given. Order is `(timestamp, id)`.
    pub fn candidate_facts(
        &self,
        entity: EntityId,
        bound: Timestamp,
        strict: bool,
        exclude: Option<FactId>,
    ) -> Result<Vec<FactId>> {
        if entity as usize >= self.num_entities() {
            return Err(TkgError::UnknownEntity(entity));
        }
        let list = self.outgoing(entity);
        let end = list.partition_point(|&id| {
            let t = self.facts[id].timestamp;
            if strict {
                t < bound
            } else {
                t <= bound
            }
        });
        Ok(list[..end]
            .iter()
            .copied()
            .filter(|&id| Some(id) != exclude)
            .collect())
    }

    /// Read-only view of the facts with `t_q - w <= t < t_q`.
    pub fn window_view(&self, t_q: Timestamp, w: u32) -> Result<WindowView<'_, Self>> {
        WindowView::new(self, t_q, w)
    }

    fn time_slice<'a>(&'a self, list: &'a [FactId], lo: Timestamp, hi: Timestamp) -> &'a [FactId] {
        let start = list.partition_point(|&id| self.facts[id].timestamp < lo);
        let end = list.partition_point(|&id| self.facts[id].timestamp < hi);
        &list[start..end.max(start)]
    }
}

impl FactStore for TemporalGraph {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn fact(&self, id: FactId) -> &Fact {
        &self.facts[id]
    }

    fn outgoing_between(&self, subject: EntityId, lo: Timestamp, hi: Timestamp) -> &[FactId] {
        self.time_slice(self.outgoing(subject), lo, hi)
    }

    fn facts_between(&self, lo: Timestamp, hi: Timestamp) -> &[FactId] {
        self.time_slice(&self.by_time, lo, hi)
    }
}

/// Half-open time window `[start, end)` over a fact store.
#[derive(Debug)]
pub struct WindowView<'a, S: FactStore + ?Sized> {
    store: &'a S,
    start: Timestamp,
    end: Timestamp,
}

impl<S: FactStore + ?Sized> Clone for WindowView<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S: FactStore + ?Sized> Copy for WindowView<'_, S> {}

impl<'a, S: FactStore + ?Sized> WindowView<'a, S> {
    pub fn new(store: &'a S, t_q: Timestamp, w: u32) -> Result<Self> {
        if w == 0 {
            return Err(TkgError::InvalidParameter(
                "window size must be positive".into(),
            ));
        }
        Ok(Self {
            store,
            start: t_q.saturating_sub(w),
            end: t_q,
        })
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn end(&self) -> Timestamp {
        self.end
    }

    pub fn store(&self) -> &'a S {
        self.store
    }

    pub fn fact(&self, id: FactId) -> &'a Fact {
        self.store.fact(id)
    }

    /// Window facts with the given subject, sorted by time.
    pub fn outgoing(&self, subject: EntityId) -> &'a [FactId] {
        self.store.outgoing_between(subject, self.start, self.end)
    }

    pub fn fact_ids(&self) -> &'a [FactId] {
        self.store.facts_between(self.start, self.end)
    }

    pub fn facts(&self) -> impl Iterator<Item = &'a Fact> + 'a {
        let store = self.store;
        self.fact_ids().iter().map(move |&id| store.fact(id))
    }

    pub fn len(&self) -> usize {
        self.fact_ids().len()
    }

    pub fn is_empty(&self) -> bool {
        self.fact_ids().is_empty()
    }
}

/// Convenience constructor for small graphs keyed by names, with integer
/// timestamps used as-is. Useful for fixtures and synthetic data.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Vocab,
    relations: Vocab,
    categories: Vocab,
    entity_category: Vec<Option<CategoryId>>,
    rows: Vec<(EntityId, RelationId, EntityId, Timestamp)>,
    default_category: Option<String>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Category given to entities that never get an explicit one.
    pub fn default_category(mut self, name: &str) -> Self {
        self.default_category = Some(name.to_owned());
        self
    }

    pub fn entity(&mut self, name: &str, category: &str) -> EntityId {
        let e = self.entities.intern(name);
        let c = self.categories.intern(category);
        if self.entity_category.len() <= e as usize {
            self.entity_category.resize(e as usize + 1, None);
        }
        self.entity_category[e as usize] = Some(c);
        e
    }

    pub fn relation(&mut self, name: &str) -> RelationId {
        self.relations.intern(name)
    }

    pub fn add(&mut self, subject: &str, relation: &str, object: &str, t: Timestamp) {
        let s = self.entities.intern(subject);
        let r = self.relations.intern(relation);
        let o = self.entities.intern(object);
        self.rows.push((s, r, o, t));
    }

    pub fn fact(mut self, subject: &str, relation: &str, object: &str, t: Timestamp) -> Self {
        self.add(subject, relation, object, t);
        self
    }

    pub fn category(mut self, entity: &str, category: &str) -> Self {
        self.entity(entity, category);
        self
    }

    pub fn build_vocabulary(&mut self) -> Result<Arc<Vocabulary>> {
        let n = self.entities.len();
        self.entity_category.resize(n, None);
        let mut entity_category = Vec::with_capacity(n);
        for (e, c) in self.entity_category.iter().enumerate() {
            let c = match c {
                Some(c) => *c,
                None => match &self.default_category {
                    Some(name) => self.categories.intern(name),
                    None => {
                        return Err(TkgError::MissingCategory(
                            self.entities.name(e as u32).unwrap_or_default().to_owned(),
                        ))
                    }
                },
            };
            entity_category.push(c);
        }
        let t_max = self.rows.iter().map(|r| r.3).max().unwrap_or(0);
        Ok(Arc::new(Vocabulary {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            categories: self.categories.clone(),
            entity_category,
            timestamps: (0..=t_max).map(|t| t.to_string()).collect(),
        }))
    }

    pub fn build(mut self) -> Result<TemporalGraph> {
        let vocab = self.build_vocabulary()?;
        let facts = self
            .rows
            .iter()
            .map(|&(s, r, o, t)| Fact {
                subject: s,
                relation: r,
                object: o,
                timestamp: t,
                subject_category: vocab.entity_category[s as usize],
                object_category: vocab.entity_category[o as usize],
            })
            .collect();
        TemporalGraph::from_base_facts(vocab, facts)
    }
}
