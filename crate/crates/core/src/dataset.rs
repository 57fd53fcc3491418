//! Tables with ground-truth column annotations, the label vocabulary, and the
//! domain routing schema.
//!
//! On-disk layout of a data directory:
//!
//! ```text
//! <root>/schema/labels.json      ordered list of label names
//! <root>/schema/domains.json     {"<domain>": [labels...]}
//! <root>/schema/synonyms.json    {"<synonym>": "<label>"}
//! <root>/<split>/manifest.json   {"split": .., "tables": [{table_id, file, n_rows, n_columns}]}
//! <root>/<split>/tables/<id>.csv cells only, no header row
//! <root>/<split>/annotations.csv table_id,column_index,label
//! <root>/<split>/domains_gold.csv table_id,domain (optional)
//! ```
//!
//! A flat directory holding `manifest.json` next to `schema/` is accepted too.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_LABELS: &str = include_str!("../data/schema/labels.json");
const BUNDLED_DOMAINS: &str = include_str!("../data/schema/domains.json");
const BUNDLED_SYNONYMS: &str = include_str!("../data/schema/synonyms.json");

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("no tables")]
    NoTables,
    #[error("invalid dataset: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Argument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub index: usize,
    pub values: Vec<String>,
    pub gold_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub table_id: String,
    pub columns: Vec<Column>,
    pub n_rows: usize,
}

impl Table {
    /// Builds a table from row-major cells. Every row must have the same width.
    pub fn from_rows(table_id: impl Into<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        let table_id = table_id.into();
        let n_rows = rows.len();
        if n_rows == 0 {
            return Err(DatasetError::Validation(vec![format!(
                "table {table_id}: no rows"
            )]));
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(DatasetError::Validation(vec![format!(
                "table {table_id}: no columns"
            )]));
        }
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(DatasetError::Validation(vec![format!(
                "table {table_id}: row {i} has {} cells, expected {width}",
                row.len()
            )]));
        }
        let mut columns: Vec<Column> = (0..width)
            .map(|index| Column {
                index,
                values: Vec::with_capacity(n_rows),
                gold_label: None,
            })
            .collect();
        for row in rows {
            for (col, cell) in columns.iter_mut().zip(row) {
                col.values.push(cell);
            }
        }
        Ok(Table {
            table_id,
            columns,
            n_rows,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = &str> {
        self.columns.iter().map(move |c| c.values[i].as_str())
    }

    /// Gold labels in column order, or `None` when any column is unlabeled.
    pub fn gold_labels(&self) -> Option<Vec<String>> {
        self.columns.iter().map(|c| c.gold_label.clone()).collect()
    }

    fn check(&self, out: &mut Vec<String>) {
        if self.n_rows == 0 {
            out.push(format!("table {}: no rows", self.table_id));
        }
        if self.columns.is_empty() {
            out.push(format!("table {}: no columns", self.table_id));
        }
        for (i, col) in self.columns.iter().enumerate() {
            if col.index != i {
                out.push(format!(
                    "table {}: column at position {i} has index {}",
                    self.table_id, col.index
                ));
            }
            if col.values.len() != self.n_rows {
                out.push(format!(
                    "table {}: column {i} has {} values, expected {}",
                    self.table_id,
                    col.values.len(),
                    self.n_rows
                ));
            }
        }
    }
}

/// Returns a copy of `table` holding at most its first `n` rows.
pub fn head_rows(table: &Table, n: usize) -> Result<Table> {
    if n == 0 {
        return Err(DatasetError::Argument("head_rows needs n >= 1".into()));
    }
    let keep = n.min(table.n_rows);
    Ok(Table {
        table_id: table.table_id.clone(),
        n_rows: keep,
        columns: table
            .columns
            .iter()
            .map(|c| Column {
                index: c.index,
                values: c.values[..keep].to_vec(),
                gold_label: c.gold_label.clone(),
            })
            .collect(),
    })
}

/// Lowercases and collapses internal whitespace. Used for all label and
/// synonym comparisons.
pub fn normalize_key(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<String>,
    synonyms: BTreeMap<String, String>,
    by_key: HashMap<String, usize>,
    synonym_by_key: HashMap<String, String>,
}

impl LabelVocabulary {
    /// Labels keep their configured order; synonym targets must be labels.
    pub fn new(labels: Vec<String>, synonyms: BTreeMap<String, String>) -> Result<Self> {
        let mut problems = Vec::new();
        let mut by_key = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            let key = normalize_key(label);
            if key.is_empty() {
                problems.push(format!("label #{i} is empty"));
            } else if by_key.insert(key, i).is_some() {
                problems.push(format!("duplicate label {label:?}"));
            }
        }
        let mut synonym_by_key = HashMap::new();
        for (syn, target) in &synonyms {
            let key = normalize_key(syn);
            if by_key.contains_key(&key) {
                problems.push(format!("synonym {syn:?} collides with a label"));
            }
            match by_key.get(&normalize_key(target)) {
                Some(&i) => {
                    if let Some(prev) = synonym_by_key.insert(key, labels[i].clone()) {
                        if prev != labels[i] {
                            problems.push(format!("synonym {syn:?} maps to two labels"));
                        }
                    }
                }
                None => problems.push(format!("synonym {syn:?} targets unknown label {target:?}")),
            }
        }
        if labels.is_empty() {
            problems.push("empty label vocabulary".into());
        }
        if !problems.is_empty() {
            return Err(DatasetError::Validation(problems));
        }
        Ok(LabelVocabulary {
            labels,
            synonyms,
            by_key,
            synonym_by_key,
        })
    }

    /// The 32-label schema.org vocabulary with the bundled synonym table.
    pub fn sotab() -> Self {
        let labels: Vec<String> = serde_json::from_str(BUNDLED_LABELS).expect("bundled labels");
        let synonyms: BTreeMap<String, String> =
            serde_json::from_str(BUNDLED_SYNONYMS).expect("bundled synonyms");
        Self::new(labels, synonyms).expect("bundled vocabulary is valid")
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn synonyms(&self) -> &BTreeMap<String, String> {
        &self.synonyms
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Case-insensitive exact match, returning the canonical spelling.
    pub fn canonical(&self, name: &str) -> Option<&str> {
        self.by_key
            .get(&normalize_key(name))
            .map(|&i| self.labels[i].as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.canonical(name).is_some()
    }

    /// Canonical label a synonym maps to.
    pub fn resolve_synonym(&self, name: &str) -> Option<&str> {
        self.synonym_by_key
            .get(&normalize_key(name))
            .map(String::as_str)
    }

    /// Configured synonyms of `label`, in file (lexicographic) order.
    pub fn synonyms_of<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        let canonical = self.canonical(label);
        self.synonyms.iter().filter_map(move |(syn, target)| {
            (Some(target.as_str()) == canonical
                || canonical.is_some_and(|c| normalize_key(target) == normalize_key(c)))
            .then_some(syn.as_str())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainSchema {
    domains: IndexMap<String, Vec<String>>,
}

impl DomainSchema {
    pub fn new(domains: IndexMap<String, Vec<String>>, vocab: &LabelVocabulary) -> Result<Self> {
        let mut problems = Vec::new();
        if domains.is_empty() {
            problems.push("no domains".to_string());
        }
        let mut canon = IndexMap::new();
        for (name, labels) in domains {
            if labels.is_empty() {
                problems.push(format!("domain {name:?} has no labels"));
            }
            let mut fixed = Vec::with_capacity(labels.len());
            for label in &labels {
                match vocab.canonical(label) {
                    Some(c) if fixed.iter().any(|f: &String| f == c) => {
                        problems.push(format!("domain {name:?} lists {label:?} twice"))
                    }
                    Some(c) => fixed.push(c.to_string()),
                    None => problems.push(format!("domain {name:?}: unknown label {label:?}")),
                }
            }
            canon.insert(name, fixed);
        }
        if !problems.is_empty() {
            return Err(DatasetError::Validation(problems));
        }
        Ok(DomainSchema { domains: canon })
    }

    /// The four-domain routing table for the bundled vocabulary.
    pub fn sotab() -> Self {
        let domains: IndexMap<String, Vec<String>> =
            serde_json::from_str(BUNDLED_DOMAINS).expect("bundled domains");
        Self::new(domains, &LabelVocabulary::sotab()).expect("bundled schema is valid")
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.domains.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.domains.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn contains(&self, domain: &str) -> bool {
        self.domains.contains_key(domain)
    }
}

/// Labels configured for `domain`, in configured order.
pub fn labels_for_domain<'a>(schema: &'a DomainSchema, domain: &str) -> Result<&'a [String]> {
    schema
        .domains
        .get(domain)
        .map(Vec::as_slice)
        .ok_or_else(|| DatasetError::UnknownDomain(domain.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub split: Split,
    pub tables: Vec<Table>,
    pub vocabulary: LabelVocabulary,
    pub schema: DomainSchema,
    pub gold_domain: Option<BTreeMap<String, String>>,
}

impl Dataset {
    /// Checks every cross-table invariant and returns the validated dataset.
    pub fn new(
        split: Split,
        tables: Vec<Table>,
        vocabulary: LabelVocabulary,
        schema: DomainSchema,
        gold_domain: Option<BTreeMap<String, String>>,
    ) -> Result<Self> {
        if tables.is_empty() {
            return Err(DatasetError::NoTables);
        }
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for t in &tables {
            if !seen.insert(t.table_id.as_str()) {
                problems.push(format!("duplicate table_id {}", t.table_id));
            }
            t.check(&mut problems);
            for c in &t.columns {
                if let Some(label) = &c.gold_label {
                    match vocabulary.canonical(label) {
                        Some(canon) if canon == label => {}
                        Some(canon) => problems.push(format!(
                            "table {} column {}: label {label:?} should be spelled {canon:?}",
                            t.table_id, c.index
                        )),
                        None => problems.push(format!(
                            "table {} column {}: unknown label {label:?}",
                            t.table_id, c.index
                        )),
                    }
                }
            }
        }
        if let Some(gd) = &gold_domain {
            for (table_id, domain) in gd {
                if !seen.contains(table_id.as_str()) {
                    problems.push(format!("gold domain for unknown table {table_id}"));
                }
                if !schema.contains(domain) {
                    problems.push(format!("table {table_id}: unknown domain {domain:?}"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(DatasetError::Validation(problems));
        }
        Ok(Dataset {
            split,
            tables,
            vocabulary,
            schema,
            gold_domain,
        })
    }

    pub fn table(&self, table_id: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.table_id == table_id)
    }

    pub fn domain_of(&self, table_id: &str) -> Option<&str> {
        self.gold_domain
            .as_ref()
            .and_then(|m| m.get(table_id))
            .map(String::as_str)
    }

    pub fn n_annotated_columns(&self) -> usize {
        self.tables
            .iter()
            .flat_map(|t| &t.columns)
            .filter(|c| c.gold_label.is_some())
            .count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    split: Split,
    tables: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    table_id: String,
    file: String,
    n_rows: usize,
    n_columns: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRow {
    table_id: String,
    column_index: usize,
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DomainRow {
    table_id: String,
    domain: String,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn malformed(path: &Path, e: impl fmt::Display) -> DatasetError {
    DatasetError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads `schema/labels.json`, `schema/synonyms.json` and `schema/domains.json`.
pub fn load_schema(root: &Path) -> Result<(LabelVocabulary, DomainSchema)> {
    let dir = root.join("schema");
    let labels: Vec<String> = read_json(&dir.join("labels.json"))?;
    let synonyms_path = dir.join("synonyms.json");
    let synonyms: BTreeMap<String, String> = if synonyms_path.exists() {
        read_json(&synonyms_path)?
    } else {
        BTreeMap::new()
    };
    let vocab = LabelVocabulary::new(labels, synonyms)?;
    let domains: IndexMap<String, Vec<String>> = read_json(&dir.join("domains.json"))?;
    let schema = DomainSchema::new(domains, &vocab)?;
    Ok((vocab, schema))
}

fn split_dir(root: &Path, split: Split) -> PathBuf {
    let nested = root.join(split.as_str());
    if nested.join("manifest.json").exists() {
        nested
    } else {
        root.to_path_buf()
    }
}

/// Loads and validates one split of a data directory.
pub fn load_dataset(root: &Path, split: Split) -> Result<Dataset> {
    let (vocabulary, schema) = load_schema(root)?;
    let dir = split_dir(root, split);
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.split != split {
        return Err(malformed(
            &manifest_path,
            format!("manifest is for split {}, expected {split}", manifest.split),
        ));
    }
    if manifest.tables.is_empty() {
        return Err(DatasetError::NoTables);
    }

    let mut tables = Vec::with_capacity(manifest.tables.len());
    let mut problems = Vec::new();
    for entry in &manifest.tables {
        let path = dir.join(&entry.file);
        let text = read_text(&path)?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| malformed(&path, e))?;
            rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
        }
        let table = Table::from_rows(entry.table_id.clone(), rows).map_err(|e| match e {
            DatasetError::Validation(v) => malformed(&path, v.join("; ")),
            other => other,
        })?;
        if table.n_rows != entry.n_rows || table.n_columns() != entry.n_columns {
            problems.push(format!(
                "table {}: manifest says {}x{}, file has {}x{}",
                entry.table_id,
                entry.n_rows,
                entry.n_columns,
                table.n_rows,
                table.n_columns()
            ));
        }
        tables.push(table);
    }

    let ann_path = dir.join("annotations.csv");
    let text = read_text(&ann_path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, t) in tables.iter().enumerate() {
        index.insert(t.table_id.clone(), i);
    }
    for row in reader.deserialize::<AnnotationRow>() {
        let row = row.map_err(|e| malformed(&ann_path, e))?;
        let Some(&ti) = index.get(&row.table_id) else {
            problems.push(format!("annotation for unknown table {}", row.table_id));
            continue;
        };
        let table = &mut tables[ti];
        let n_cols = table.n_columns();
        let Some(col) = table.columns.get_mut(row.column_index) else {
            problems.push(format!(
                "annotation for column {} of {}-column table {}",
                row.column_index, n_cols, row.table_id
            ));
            continue;
        };
        match vocabulary.canonical(&row.label) {
            Some(canon) => {
                if col.gold_label.replace(canon.to_string()).is_some() {
                    problems.push(format!(
                        "table {} column {} annotated twice",
                        row.table_id, row.column_index
                    ));
                }
            }
            None => problems.push(format!(
                "table {} column {}: unknown label {:?}",
                row.table_id, row.column_index, row.label
            )),
        }
    }

    let gd_path = dir.join("domains_gold.csv");
    let gold_domain = if gd_path.exists() {
        let text = read_text(&gd_path)?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut map = BTreeMap::new();
        for row in reader.deserialize::<DomainRow>() {
            let row = row.map_err(|e| malformed(&gd_path, e))?;
            map.insert(row.table_id, row.domain);
        }
        Some(map)
    } else {
        None
    };

    if !problems.is_empty() {
        return Err(DatasetError::Validation(problems));
    }
    Dataset::new(split, tables, vocabulary, schema, gold_domain)
}

/// Writes `dataset` in the layout [`load_dataset`] reads, nested under
/// `<root>/<split>/`, plus the schema files under `<root>/schema/`.
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    let schema_dir = root.join("schema");
    let dir = root.join(dataset.split.as_str());
    let tables_dir = dir.join("tables");
    fs::create_dir_all(&schema_dir).map_err(io(&schema_dir))?;
    fs::create_dir_all(&tables_dir).map_err(io(&tables_dir))?;

    write_json(schema_dir.join("labels.json"), &dataset.vocabulary.labels)?;
    write_json(
        schema_dir.join("synonyms.json"),
        &dataset.vocabulary.synonyms,
    )?;
    write_json(schema_dir.join("domains.json"), &dataset.schema)?;

    let mut entries = Vec::new();
    let mut ann = csv::Writer::from_writer(Vec::new());
    for t in &dataset.tables {
        let file = format!("tables/{}.csv", t.table_id);
        let path = dir.join(&file);
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        for i in 0..t.n_rows {
            w.write_record(t.row(i)).map_err(|e| malformed(&path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| malformed(&path, e))?;
        fs::write(&path, bytes).map_err(io(&path))?;
        entries.push(ManifestEntry {
            table_id: t.table_id.clone(),
            file,
            n_rows: t.n_rows,
            n_columns: t.n_columns(),
        });
        for c in &t.columns {
            if let Some(label) = &c.gold_label {
                ann.serialize(AnnotationRow {
                    table_id: t.table_id.clone(),
                    column_index: c.index,
                    label: label.clone(),
                })
                .map_err(|e| malformed(&dir, e))?;
            }
        }
    }
    let ann_path = dir.join("annotations.csv");
    let mut bytes = ann.into_inner().map_err(|e| malformed(&ann_path, e))?;
    if bytes.is_empty() {
        bytes = b"table_id,column_index,label\n".to_vec();
    }
    fs::write(&ann_path, bytes).map_err(io(&ann_path))?;

    if let Some(gd) = &dataset.gold_domain {
        let path = dir.join("domains_gold.csv");
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["table_id", "domain"])
            .map_err(|e| malformed(&path, e))?;
        for (t, d) in gd {
            w.write_record([t, d]).map_err(|e| malformed(&path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| malformed(&path, e))?;
        fs::write(&path, bytes).map_err(io(&path))?;
    }

    let manifest = Manifest {
        split: dataset.split,
        tables: entries,
    };
    write_json(dir.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| malformed(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|source| DatasetError::Io { path, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(rows: &[&[&str]]) -> Vec<Vec<String>> {
        rows.iter()
            .map(|r| r.iter().map(|s| s.to_string()).collect())
            .collect()
    }

    #[test]
    fn bundled_schema_shape() {
        let vocab = LabelVocabulary::sotab();
        let schema = DomainSchema::sotab();
        assert_eq!(vocab.len(), 32);
        assert_eq!(
            schema.names().collect::<Vec<_>>(),
            ["Music Recording", "Hotels", "Restaurants", "Events"]
        );
        let union: BTreeSet<&str> = schema
            .iter()
            .flat_map(|(_, ls)| ls.iter().map(String::as_str))
            .collect();
        let all: BTreeSet<&str> = vocab.labels().iter().map(String::as_str).collect();
        assert_eq!(union, all);
    }

    #[test]
    fn domain_lookup() {
        let schema = DomainSchema::sotab();
        assert_eq!(
            labels_for_domain(&schema, "Music Recording").unwrap(),
            ["MusicRecordingName", "Duration", "ArtistName", "AlbumName"]
        );
        let events = labels_for_domain(&schema, "Events").unwrap();
        assert_eq!(events.len(), 9);
        for l in ["EventName", "Date", "Currency"] {
            assert!(events.iter().any(|e| e == l));
        }
        assert!(matches!(
            labels_for_domain(&schema, "Flights"),
            Err(DatasetError::UnknownDomain(_))
        ));
        let tel = schema
            .iter()
            .filter(|(_, ls)| ls.iter().any(|l| l == "Telephone"))
            .count();
        assert_eq!(tel, 3);
    }

    #[test]
    fn synonym_lookup() {
        let vocab = LabelVocabulary::sotab();
        assert_eq!(vocab.resolve_synonym("check-in  time"), Some("Time"));
        assert_eq!(
            vocab.resolve_synonym("Amenities"),
            Some("LocationFeatureSpecification")
        );
        assert_eq!(vocab.canonical("EMAIL"), Some("email"));
        assert_eq!(
            vocab.synonyms_of("Time").collect::<Vec<_>>(),
            ["Check-in Time"]
        );
    }

    #[test]
    fn vocabulary_rejects_bad_synonyms() {
        let labels = vec!["Time".to_string(), "Date".to_string()];
        let clash = BTreeMap::from([("time".to_string(), "Date".to_string())]);
        assert!(LabelVocabulary::new(labels.clone(), clash).is_err());
        let dangling = BTreeMap::from([("When".to_string(), "Hour".to_string())]);
        assert!(LabelVocabulary::new(labels.clone(), dangling).is_err());
        let dup = vec!["Time".to_string(), "TIME".to_string()];
        assert!(LabelVocabulary::new(dup, BTreeMap::new()).is_err());
    }

    #[test]
    fn head_rows_cases() {
        let rows: Vec<Vec<String>> = (0..10)
            .map(|i| vec![format!("a{i}"), format!("b{i}")])
            .collect();
        let t = Table::from_rows("t", rows).unwrap();
        let h = head_rows(&t, 5).unwrap();
        assert_eq!(h.n_rows, 5);
        assert_eq!(h.n_columns(), 2);
        assert_eq!(h.columns[1].values[4], "b4");
        assert_eq!(t.n_rows, 10);
        assert_eq!(head_rows(&h, 5).unwrap(), h);
        assert_eq!(head_rows(&t, 10).unwrap(), t);

        let small = Table::from_rows("s", cells(&[&["x"], &["y"], &["z"]])).unwrap();
        assert_eq!(head_rows(&small, 5).unwrap().n_rows, 3);
        assert!(head_rows(&small, 0).is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = Table::from_rows("r", cells(&[&["a", "b"], &["c"]])).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn empty_cells_are_kept() {
        let t = Table::from_rows("e", cells(&[&["", "b"], &["c", ""]])).unwrap();
        assert_eq!(t.columns[0].values, ["", "c"]);
        assert_eq!(t.columns[1].values, ["b", ""]);
    }
}
