//! Turning per-candidate score lists into rankings.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TkgError};
use crate::graph::CategoryId;
use crate::retriever::{CandidateTable, Contribution};

/// Scores are clamped below 1 so the product never saturates exactly.
const MAX_SCORE: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    NoisyOr,
    MaxPlus,
}

impl FromStr for Aggregation {
    type Err = TkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "noisy_or" | "noisyor" => Ok(Aggregation::NoisyOr),
            "max_plus" | "maxplus" | "max+" => Ok(Aggregation::MaxPlus),
            other => Err(TkgError::InvalidParameter(format!(
                "unknown aggregation `{other}` (expected noisy_or or max_plus)"
            ))),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregation::NoisyOr => "noisy_or",
            Aggregation::MaxPlus => "max_plus",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub candidate: u32,
    pub score: f64,
    pub count: usize,
}

/// Candidates in rank order; position 0 is rank 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<Ranked>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of a candidate.
    pub fn rank_of(&self, candidate: u32) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.candidate == candidate)
            .map(|p| p + 1)
    }

    pub fn candidates(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.candidate)
    }
}

/// `1 - prod(1 - s)`, evaluated in log space.
pub fn noisy_or_score(scores: &[f64]) -> f64 {
    let log_miss: f64 = scores.iter().map(|&s| (-s.min(MAX_SCORE)).ln_1p()).sum();
    -log_miss.exp_m1()
}

/// Orders by Noisy-OR score, then prediction count, then candidate id.
pub fn noisy_or(table: &CandidateTable) -> Result<Ranking> {
    if table.is_empty() {
        return Err(TkgError::EmptyCandidates);
    }
    let mut entries: Vec<Ranked> = table
        .scores
        .iter()
        .map(|(&candidate, scores)| Ranked {
            candidate,
            score: noisy_or_score(scores),
            count: scores.len(),
        })
        .collect();
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.count.cmp(&a.count))
            .then(a.candidate.cmp(&b.candidate))
    });
    Ok(Ranking { entries })
}

/// Lexicographic comparison of descending score vectors, best first. On a
/// shared prefix the longer vector wins.
pub fn max_plus_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    b.len().cmp(&a.len())
}

/// Orders by [`max_plus_cmp`], then candidate id. The reported score is the
/// candidate's top score.
pub fn max_plus(table: &CandidateTable) -> Result<Ranking> {
    if table.is_empty() {
        return Err(TkgError::EmptyCandidates);
    }
    let mut order: Vec<(&u32, &Vec<f64>)> = table.scores.iter().collect();
    order.sort_by(|(ia, a), (ib, b)| max_plus_cmp(a, b).then(ia.cmp(ib)));
    Ok(Ranking {
        entries: order
            .into_iter()
            .map(|(&candidate, scores)| Ranked {
                candidate,
                score: scores[0],
                count: scores.len(),
            })
            .collect(),
    })
}

pub fn aggregate(table: &CandidateTable, method: Aggregation) -> Result<Ranking> {
    match method {
        Aggregation::NoisyOr => noisy_or(table),
        Aggregation::MaxPlus => max_plus(table),
    }
}

/// Merges entity score lists into one list per category.
pub fn to_categories(
    table: &CandidateTable,
    entity_category: &[CategoryId],
) -> Result<CandidateTable> {
    let lookup = |e: u32| {
        entity_category
            .get(e as usize)
            .copied()
            .ok_or(TkgError::Uncategorized(e))
    };
    let mut merged: HashMap<CategoryId, Vec<f64>> = HashMap::new();
    for (&entity, scores) in &table.scores {
        merged.entry(lookup(entity)?).or_default().extend(scores);
    }
    let scores = merged
        .into_iter()
        .map(|(c, mut list)| {
            list.sort_by(|a, b| b.total_cmp(a));
            (c, list)
        })
        .collect();
    let contributions = table
        .contributions
        .iter()
        .map(|c| {
            Ok(Contribution {
                candidate: lookup(c.candidate)?,
                ..c.clone()
            })
        })
        .collect::<Result<_>>()?;
    Ok(CandidateTable {
        scores,
        contributions,
        rules_applied: table.rules_applied,
        groundings_found: table.groundings_found,
    })
}
