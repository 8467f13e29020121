//! Temporal knowledge graph reasoning with learned temporal logical rules.
//!
//! Rules are mined from reverse-chronological random walks, optionally
//! constrained by entity categories, and applied to rank candidate answers
//! for queries of the form `(subject, relation, ?, time)`.

pub mod aggregation;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod learner;
pub mod retriever;
pub mod rules;
pub mod synthetic;

pub use aggregation::{Aggregation, Ranking};
pub use dataset::{
    load_dataset, load_graph, load_splits, splits_from_rows, CategorySource, Dataset, HistoryScope,
    RowFormat,
};
pub use error::{Result, TkgError};
pub use evaluator::{
    evaluate, make_queries, BaselineModel, Direction, EvalConfig, EvalReport, Task, TestQuery,
};
pub use graph::{
    CategoryId, EntityId, Fact, FactId, FactStore, GraphBuilder, RelationId, TemporalGraph,
    Timestamp, Vocabulary, WindowView,
};
pub use learner::{learn, LearnParams, LearnStats, Learned};
pub use retriever::{retrieve, ApplyParams, CandidateTable, Query, StopCriterion};
pub use rules::{BankMeta, Mode, Rule, RuleBank};
