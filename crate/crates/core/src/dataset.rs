//! Tab-separated dataset ingestion.
//!
//! Quadruple rows are `subject relation object timestamp`; sextuple rows
//! append `subject_category object_category`. Train, valid and test files
//! are read together so the three splits share one vocabulary.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Result, TkgError};
use crate::graph::{CategoryId, EntityId, Fact, TemporalGraph, Vocab, Vocabulary};

/// Name of the synthetic category used when no categories are available.
pub const DEFAULT_CATEGORY: &str = "ALL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowFormat {
    Quadruple,
    Sextuple,
}

impl RowFormat {
    fn columns(self) -> usize {
        match self {
            RowFormat::Quadruple => 4,
            RowFormat::Sextuple => 6,
        }
    }
}

impl FromStr for RowFormat {
    type Err = TkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadruple" | "quad" | "4" => Ok(RowFormat::Quadruple),
            "sextuple" | "sext" | "6" => Ok(RowFormat::Sextuple),
            other => Err(TkgError::InvalidParameter(format!(
                "unknown row format `{other}` (expected quadruple or sextuple)"
            ))),
        }
    }
}

/// Where entity categories come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CategorySource {
    /// The category columns of sextuple rows.
    Rows,
    /// An `entity<TAB>category` file. Overrides row categories when both exist.
    Map(PathBuf),
    /// Every entity gets the single category `ALL`.
    Single,
}

/// Train/valid/test splits over one shared vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Arc<Vocabulary>,
    pub train: TemporalGraph,
    pub valid: TemporalGraph,
    pub test: TemporalGraph,
}

/// Which splits rule application may ground in. Retrieval always restricts
/// itself to facts strictly before the query time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HistoryScope {
    Train,
    TrainValid,
    #[default]
    All,
}

impl FromStr for HistoryScope {
    type Err = TkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(HistoryScope::Train),
            "train+valid" | "train_valid" => Ok(HistoryScope::TrainValid),
            "all" => Ok(HistoryScope::All),
            other => Err(TkgError::InvalidParameter(format!(
                "unknown history scope `{other}` (expected train, train+valid or all)"
            ))),
        }
    }
}

impl Dataset {
    pub fn history(&self, scope: HistoryScope) -> Result<TemporalGraph> {
        match scope {
            HistoryScope::Train => Ok(self.train.clone()),
            HistoryScope::TrainValid => TemporalGraph::union(&[&self.train, &self.valid]),
            HistoryScope::All => TemporalGraph::union(&[&self.train, &self.valid, &self.test]),
        }
    }
}

#[derive(Debug)]
struct RawRow {
    line: usize,
    cols: Vec<String>,
}

struct RawFile {
    path: PathBuf,
    rows: Vec<RawRow>,
}

fn read_rows(path: &Path, format: RowFormat) -> Result<RawFile> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(|c| c.trim().to_owned()).collect();
        if cols.len() != format.columns() {
            return Err(TkgError::Parse {
                path: path.to_owned(),
                line: line_no,
                message: format!(
                    "expected {} tab-separated columns, found {}",
                    format.columns(),
                    cols.len()
                ),
            });
        }
        if let Some(pos) = cols.iter().position(String::is_empty) {
            return Err(TkgError::Parse {
                path: path.to_owned(),
                line: line_no,
                message: format!("column {} is empty", pos + 1),
            });
        }
        rows.push(RawRow {
            line: line_no,
            cols,
        });
    }
    if rows.is_empty() {
        return Err(TkgError::EmptyDataset(path.to_owned()));
    }
    Ok(RawFile {
        path: path.to_owned(),
        rows,
    })
}

/// Reads an `entity<TAB>category` map.
pub fn read_category_map(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map: HashMap<String, String> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 2 || cols.iter().any(|c| c.is_empty()) {
            return Err(TkgError::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: "expected `entity<TAB>category`".into(),
            });
        }
        if let Some(prev) = map.get(cols[0]) {
            if prev != cols[1] {
                return Err(TkgError::InconsistentCategory {
                    path: path.to_owned(),
                    line: i + 1,
                    entity: cols[0].to_owned(),
                    expected: prev.clone(),
                    found: cols[1].to_owned(),
                });
            }
        }
        map.insert(cols[0].to_owned(), cols[1].to_owned());
    }
    Ok(map)
}

/// Loads a single file as a complete graph.
///
/// Quadruple data needs `category_map`; use [`load_graph`] with
/// [`CategorySource::Single`] to fall back to one `ALL` category instead.
pub fn load_dataset(
    path: &Path,
    format: RowFormat,
    category_map: Option<&Path>,
) -> Result<TemporalGraph> {
    let source = match (format, category_map) {
        (_, Some(map)) => CategorySource::Map(map.to_owned()),
        (RowFormat::Sextuple, None) => CategorySource::Rows,
        (RowFormat::Quadruple, None) => return Err(TkgError::CategoriesRequired),
    };
    load_graph(path, format, &source)
}

pub fn load_graph(
    path: &Path,
    format: RowFormat,
    categories: &CategorySource,
) -> Result<TemporalGraph> {
    let files = [read_rows(path, format)?];
    let (_, mut graphs) = build_splits(&files, format, categories)?;
    Ok(graphs.remove(0))
}

/// Loads train, valid and test files over one vocabulary. A missing valid
/// split yields an empty graph.
pub fn load_splits(
    train: &Path,
    valid: Option<&Path>,
    test: &Path,
    format: RowFormat,
    categories: &CategorySource,
) -> Result<Dataset> {
    let mut files = vec![read_rows(train, format)?];
    if let Some(valid) = valid {
        files.push(read_rows(valid, format)?);
    }
    files.push(read_rows(test, format)?);
    let (vocab, mut graphs) = build_splits(&files, format, categories)?;
    let test = graphs.pop().expect("test split");
    let valid = if valid.is_some() {
        graphs.pop().expect("valid split")
    } else {
        TemporalGraph::from_base_facts(vocab.clone(), Vec::new())?
    };
    let train = graphs.pop().expect("train split");
    Ok(Dataset {
        vocab,
        train,
        valid,
        test,
    })
}

/// Builds splits from in-memory rows, as if each split were a file. An
/// empty `valid` yields an empty graph.
pub fn splits_from_rows<S: AsRef<str>>(
    train: &[Vec<S>],
    valid: &[Vec<S>],
    test: &[Vec<S>],
    format: RowFormat,
    categories: &CategorySource,
) -> Result<Dataset> {
    let to_file = |name: &str, rows: &[Vec<S>]| -> Result<RawFile> {
        let path = PathBuf::from(format!("<{name}>"));
        let mut raw = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != format.columns() || row.iter().any(|c| c.as_ref().trim().is_empty()) {
                return Err(TkgError::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message: format!("expected {} non-empty columns", format.columns()),
                });
            }
            raw.push(RawRow {
                line: i + 1,
                cols: row.iter().map(|c| c.as_ref().trim().to_owned()).collect(),
            });
        }
        if raw.is_empty() {
            return Err(TkgError::EmptyDataset(path));
        }
        Ok(RawFile { path, rows: raw })
    };
    let mut files = vec![to_file("train", train)?];
    if !valid.is_empty() {
        files.push(to_file("valid", valid)?);
    }
    files.push(to_file("test", test)?);
    let (vocab, mut graphs) = build_splits(&files, format, categories)?;
    let test = graphs.pop().expect("test split");
    let valid = if valid.is_empty() {
        TemporalGraph::from_base_facts(vocab.clone(), Vec::new())?
    } else {
        graphs.pop().expect("valid split")
    };
    let train = graphs.pop().expect("train split");
    Ok(Dataset {
        vocab,
        train,
        valid,
        test,
    })
}

/// Orders raw timestamp labels: numerically when every label is an
/// integer, lexicographically otherwise (ISO dates sort correctly).
fn sort_timestamps(labels: HashSet<&str>) -> Vec<String> {
    let mut labels: Vec<&str> = labels.into_iter().collect();
    let numeric: Option<Vec<i64>> = labels.iter().map(|l| l.parse::<i64>().ok()).collect();
    match numeric {
        Some(_) => labels.sort_by_key(|l| l.parse::<i64>().unwrap_or_default()),
        None => labels.sort_unstable(),
    }
    labels.into_iter().map(str::to_owned).collect()
}

fn build_splits(
    files: &[RawFile],
    format: RowFormat,
    categories: &CategorySource,
) -> Result<(Arc<Vocabulary>, Vec<TemporalGraph>)> {
    if format == RowFormat::Quadruple && *categories == CategorySource::Rows {
        return Err(TkgError::CategoriesRequired);
    }
    let map = match categories {
        CategorySource::Map(path) => Some(read_category_map(path)?),
        _ => None,
    };

    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let mut category_vocab = Vocab::new();
    let mut entity_category: Vec<CategoryId> = Vec::new();
    // Raw category label per entity as first seen in the rows, for consistency errors.
    let mut row_category: Vec<Option<String>> = Vec::new();

    for file in files {
        for row in &file.rows {
            for (entity_col, cat_col) in [(0usize, 4usize), (2, 5)] {
                let name = &row.cols[entity_col];
                let e = entities.intern(name) as usize;
                let from_row = (format == RowFormat::Sextuple).then(|| row.cols[cat_col].clone());
                if e == entity_category.len() {
                    let label = match categories {
                        CategorySource::Single => DEFAULT_CATEGORY.to_owned(),
                        CategorySource::Rows => from_row.clone().expect("sextuple row"),
                        CategorySource::Map(_) => match map.as_ref().and_then(|m| m.get(name)) {
                            Some(c) => c.clone(),
                            None => from_row
                                .clone()
                                .ok_or_else(|| TkgError::MissingCategory(name.clone()))?,
                        },
                    };
                    entity_category.push(category_vocab.intern(&label));
                    row_category.push(from_row);
                } else if let Some(found) = from_row {
                    match &row_category[e] {
                        Some(expected) if *expected != found => {
                            return Err(TkgError::InconsistentCategory {
                                path: file.path.clone(),
                                line: row.line,
                                entity: name.clone(),
                                expected: expected.clone(),
                                found,
                            });
                        }
                        Some(_) => {}
                        None => row_category[e] = Some(found),
                    }
                }
            }
            relations.intern(&row.cols[1]);
        }
    }

    let labels: HashSet<&str> = files
        .iter()
        .flat_map(|f| f.rows.iter().map(|r| r.cols[3].as_str()))
        .collect();
    let timestamps = sort_timestamps(labels);
    let time_of: HashMap<&str, u32> = timestamps
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i as u32))
        .collect();

    let vocab = Arc::new(Vocabulary {
        entities,
        relations,
        categories: category_vocab,
        entity_category,
        timestamps: timestamps.clone(),
    });

    let mut graphs = Vec::with_capacity(files.len());
    for file in files {
        let mut seen = HashSet::new();
        let mut facts = Vec::with_capacity(file.rows.len());
        for row in &file.rows {
            let s = vocab.entities.id(&row.cols[0]).expect("interned") as EntityId;
            let o = vocab.entities.id(&row.cols[2]).expect("interned") as EntityId;
            let fact = Fact {
                subject: s,
                relation: vocab.relations.id(&row.cols[1]).expect("interned"),
                object: o,
                timestamp: time_of[row.cols[3].as_str()],
                subject_category: vocab.entity_category[s as usize],
                object_category: vocab.entity_category[o as usize],
            };
            if seen.insert(fact) {
                facts.push(fact);
            }
        }
        if facts.len() < file.rows.len() {
            log::debug!(
                "{}: dropped {} duplicate rows",
                file.path.display(),
                file.rows.len() - facts.len()
            );
        }
        graphs.push(TemporalGraph::from_base_facts(vocab.clone(), facts)?);
    }
    Ok((vocab, graphs))
}

/// Writes the base facts of a graph as sextuple rows with their original labels.
pub fn write_facts(graph: &TemporalGraph, path: &Path) -> Result<()> {
    let vocab = graph.vocab();
    let mut out = BufWriter::new(fs::File::create(path)?);
    for f in graph.base_facts() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            vocab.entity_name(f.subject),
            vocab.relation_name(f.relation),
            vocab.entity_name(f.object),
            vocab.timestamp_label(f.timestamp),
            vocab.category_name(f.subject_category),
            vocab.category_name(f.object_category),
        )?;
    }
    out.flush()?;
    Ok(())
}
