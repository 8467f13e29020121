//! Temporal logic rules and the rule bank.
//!
//! A rule of length `b` is stored in walk order: index 0 is the head, index
//! `k >= 1` is body fact `b + 1 - k`, so the last entry is the earliest body
//! fact. Entities are replaced by placeholder variables; two positions share
//! a variable iff the walk that produced the rule visited the same entity
//! there.
//!
//! For grounding it is easier to read the body as a chain that starts at the
//! head subject and ends at the head object, following inverse edges in
//! chronological order. [`Rule::chain`] produces that view.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TkgError};
use crate::graph::{inverse_relation, CategoryId, RelationId, Vocabulary};

pub const BANK_SCHEMA: &str = "ctlogic-rule-bank";
pub const BANK_VERSION: u32 = 1;

/// Placeholder variable index inside a rule.
pub type Var = u8;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Categories are ignored.
    TLogic,
    /// Rules carry and enforce subject/object categories.
    #[default]
    CTLogic,
}

impl FromStr for Mode {
    type Err = TkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tlogic" => Ok(Mode::TLogic),
            "ctlogic" | "c-tlogic" => Ok(Mode::CTLogic),
            other => Err(TkgError::InvalidParameter(format!(
                "unknown mode `{other}` (expected tlogic or ctlogic)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::TLogic => "tlogic",
            Mode::CTLogic => "ctlogic",
        })
    }
}

/// Category sequence of a category-aware rule, in walk order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleCategories {
    /// `(subject, object)` category of the head.
    pub head: (CategoryId, CategoryId),
    /// `(subject, object)` categories of body facts `b, b-1, ..., 1`.
    pub body: Vec<(CategoryId, CategoryId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub mode: Mode,
    pub head_relation: RelationId,
    /// Relations of body facts `b, b-1, ..., 1`.
    pub body_relations: Vec<RelationId>,
    /// Subject variables, head first, length `b + 1`.
    pub subject_pattern: Vec<Var>,
    /// Object variables, head first, length `b + 1`.
    pub object_pattern: Vec<Var>,
    /// Present iff `mode` is `CTLogic`.
    pub categories: Option<RuleCategories>,
    pub confidence: f64,
    pub body_support: u64,
}

/// Identity of a rule, independent of its confidence.
pub type RuleKey<'a> = (
    RelationId,
    &'a [RelationId],
    &'a [Var],
    &'a [Var],
    &'a Option<RuleCategories>,
);

pub type OwnedRuleKey = (
    RelationId,
    Vec<RelationId>,
    Vec<Var>,
    Vec<Var>,
    Option<RuleCategories>,
);

/// One step of the chronological body chain: follow an edge with `relation`
/// from the entity bound to `from` to the entity bound to `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainStep {
    pub relation: RelationId,
    pub from: Var,
    pub to: Var,
    /// Required `(from, to)` categories in category-aware mode.
    pub categories: Option<(CategoryId, CategoryId)>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.body_relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body_relations.is_empty()
    }

    pub fn head_subject_var(&self) -> Var {
        self.subject_pattern[0]
    }

    pub fn head_object_var(&self) -> Var {
        self.object_pattern[0]
    }

    pub fn num_vars(&self) -> usize {
        self.subject_pattern
            .iter()
            .chain(&self.object_pattern)
            .map(|&v| v as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn head_subject_category(&self) -> Option<CategoryId> {
        self.categories.as_ref().map(|c| c.head.0)
    }

    pub fn key(&self) -> RuleKey<'_> {
        (
            self.head_relation,
            &self.body_relations,
            &self.subject_pattern,
            &self.object_pattern,
            &self.categories,
        )
    }

    pub fn owned_key(&self) -> OwnedRuleKey {
        (
            self.head_relation,
            self.body_relations.clone(),
            self.subject_pattern.clone(),
            self.object_pattern.clone(),
            self.categories.clone(),
        )
    }

    /// Body as a chronological chain from the head subject to the head object.
    pub fn chain(&self, num_base_relations: u32) -> Vec<ChainStep> {
        let b = self.len();
        (1..=b)
            .map(|j| {
                let k = b + 1 - j;
                ChainStep {
                    relation: inverse_relation(self.body_relations[k - 1], num_base_relations),
                    from: self.object_pattern[k],
                    to: self.subject_pattern[k],
                    categories: self
                        .categories
                        .as_ref()
                        .map(|c| (c.body[k - 1].1, c.body[k - 1].0)),
                }
            })
            .collect()
    }

    /// Checks shape and cyclic closure; used on rules read from disk.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let b = self.len();
        if b == 0 {
            return Err("rule has an empty body".into());
        }
        if self.subject_pattern.len() != b + 1 || self.object_pattern.len() != b + 1 {
            return Err("pattern length must be body length + 1".into());
        }
        match (&self.mode, &self.categories) {
            (Mode::CTLogic, Some(c)) if c.body.len() != b => {
                return Err("category sequence length must equal body length".into())
            }
            (Mode::CTLogic, None) => return Err("ctlogic rule without categories".into()),
            (Mode::TLogic, Some(_)) => return Err("tlogic rule with categories".into()),
            _ => {}
        }
        for k in 0..b {
            if self.object_pattern[k] != self.subject_pattern[k + 1] {
                return Err(format!("walk does not chain at position {k}"));
            }
        }
        if self.object_pattern[b] != self.subject_pattern[0] {
            return Err("body does not close on the head subject".into());
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        Ok(())
    }

    /// Human-readable rendering with vocabulary names, e.g.
    /// `0.7000 [200] h(X0, X1, T2) <= _q(X1, X2, T1) & _p(X2, X0, T0)`.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        let b = self.len();
        let atom = |k: usize| {
            let (rel, cats) = if k == 0 {
                (self.head_relation, self.categories.as_ref().map(|c| c.head))
            } else {
                (
                    self.body_relations[k - 1],
                    self.categories.as_ref().map(|c| c.body[k - 1]),
                )
            };
            let var = |v: Var, c: Option<CategoryId>| match c {
                Some(c) => format!("X{v}:{}", vocab.category_name(c)),
                None => format!("X{v}"),
            };
            format!(
                "{}({}, {}, T{})",
                vocab.relation_name(rel),
                var(self.subject_pattern[k], cats.map(|c| c.0)),
                var(self.object_pattern[k], cats.map(|c| c.1)),
                b - k
            )
        };
        let mut out = format!(
            "{:.4} [{}] {} <= ",
            self.confidence,
            self.body_support,
            atom(0)
        );
        for k in 1..=b {
            if k > 1 {
                out.push_str(" & ");
            }
            let _ = write!(out, "{}", atom(k));
        }
        out
    }
}

/// Bank ordering: head relation, then descending confidence, then rule key.
fn bank_order(a: &Rule, b: &Rule) -> Ordering {
    a.head_relation
        .cmp(&b.head_relation)
        .then_with(|| b.confidence.total_cmp(&a.confidence))
        .then_with(|| a.key().cmp(&b.key()))
}

/// Provenance recorded with a learned bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub mode: Mode,
    pub walks: usize,
    pub max_length: usize,
    pub confidence_samples: usize,
    pub seed: u64,
    pub num_relations: u32,
    pub num_categories: usize,
    pub vocab_fingerprint: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankHeader {
    schema: String,
    version: u32,
    rules: usize,
    meta: BankMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleBank {
    meta: BankMeta,
    rules: Vec<Rule>,
    by_relation: BTreeMap<RelationId, Vec<usize>>,
    by_relation_category: BTreeMap<(RelationId, CategoryId), Vec<usize>>,
}

impl RuleBank {
    /// Builds a bank; duplicate rules keep their first occurrence.
    pub fn new(meta: BankMeta, rules: Vec<Rule>) -> Self {
        let mut unique: Vec<Rule> = Vec::with_capacity(rules.len());
        {
            let mut seen = std::collections::HashSet::new();
            for rule in rules {
                if seen.insert(rule.owned_key()) {
                    unique.push(rule);
                }
            }
        }
        unique.sort_by(bank_order);
        let mut by_relation: BTreeMap<_, Vec<usize>> = BTreeMap::new();
        let mut by_relation_category: BTreeMap<_, Vec<usize>> = BTreeMap::new();
        for (i, rule) in unique.iter().enumerate() {
            by_relation.entry(rule.head_relation).or_default().push(i);
            if let Some(c) = rule.head_subject_category() {
                by_relation_category
                    .entry((rule.head_relation, c))
                    .or_default()
                    .push(i);
            }
        }
        Self {
            meta,
            rules: unique,
            by_relation,
            by_relation_category,
        }
    }

    pub fn meta(&self) -> &BankMeta {
        &self.meta
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Indices of rules with this head relation, by descending confidence.
    pub fn for_relation(&self, relation: RelationId) -> &[usize] {
        self.by_relation
            .get(&relation)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Indices of category-aware rules for `(relation, subject category)`.
    pub fn for_relation_category(&self, relation: RelationId, category: CategoryId) -> &[usize] {
        self.by_relation_category
            .get(&(relation, category))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Rule count per body length (index 0 is length 1).
    pub fn count_by_length(&self) -> Vec<usize> {
        let max = self.rules.iter().map(Rule::len).max().unwrap_or(0);
        let mut counts = vec![0; max];
        for r in &self.rules {
            counts[r.len() - 1] += 1;
        }
        counts
    }

    /// Errors when the bank was learned on a different vocabulary.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        if self.meta.vocab_fingerprint != vocab.fingerprint() {
            return Err(TkgError::VocabularyMismatch(
                "rule bank was learned on a different dataset vocabulary".into(),
            ));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = BankHeader {
            schema: BANK_SCHEMA.into(),
            version: BANK_VERSION,
            rules: self.rules.len(),
            meta: self.meta.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for rule in &self.rules {
            serde_json::to_writer(&mut out, rule)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header_line = lines.next().ok_or_else(|| TkgError::BankSchema {
            found: "empty file".into(),
            expected: format!("{BANK_SCHEMA} v{BANK_VERSION}"),
        })??;
        let value: serde_json::Value =
            serde_json::from_str(&header_line).map_err(|e| TkgError::BankSchema {
                found: format!("unreadable header ({e})"),
                expected: format!("{BANK_SCHEMA} v{BANK_VERSION}"),
            })?;
        let schema = value.get("schema").and_then(|v| v.as_str()).unwrap_or("");
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if schema != BANK_SCHEMA || version != u64::from(BANK_VERSION) {
            return Err(TkgError::BankSchema {
                found: format!("{schema} v{version}"),
                expected: format!("{BANK_SCHEMA} v{BANK_VERSION}"),
            });
        }
        let header: BankHeader =
            serde_json::from_value(value).map_err(|e| TkgError::BankSchema {
                found: format!("malformed header ({e})"),
                expected: format!("{BANK_SCHEMA} v{BANK_VERSION}"),
            })?;
        let mut rules = Vec::with_capacity(header.rules);
        for (index, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: Rule = serde_json::from_str(&line).map_err(|e| TkgError::BankRecord {
                index,
                message: e.to_string(),
            })?;
            rule.validate()
                .map_err(|message| TkgError::BankRecord { index, message })?;
            rules.push(rule);
        }
        if rules.len() != header.rules {
            return Err(TkgError::BankRecord {
                index: rules.len(),
                message: format!(
                    "header announces {} rules, found {}",
                    header.rules,
                    rules.len()
                ),
            });
        }
        Ok(Self::new(header.meta, rules))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }
}
