//! Tabular data model: schema declarations, CSV ingestion, stratified
//! splitting and stratification into disjoint cohorts.
//!
//! A [`Dataset`] is immutable once built. Every transformation (reweighting,
//! relabeling, subsetting) returns a new value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Name of the optional sidecar column carrying per-row weights.
pub const WEIGHT_COLUMN: &str = "_weight";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate column `{0}` in header")]
    DuplicateColumn(String),
    #[error("protected column `{column}` has {distinct} distinct values, expected at most 2")]
    NonBinaryProtected { column: String, distinct: usize },
    #[error("label column `{column}` has {distinct} distinct values, expected at most 2")]
    NonBinaryLabel { column: String, distinct: usize },
    #[error("decision column `{column}` has {distinct} distinct values, expected at most 2")]
    NonBinaryDecision { column: String, distinct: usize },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    UnparsableNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: invalid weight `{value}`")]
    InvalidWeight { row: usize, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("group S={group} is empty")]
    EmptyGroup { group: u8 },
    #[error("split would leave the training part of cell (s={s}, y={y}) empty")]
    DegenerateSplit { s: u8, y: u8 },
    #[error("invalid split request: {0}")]
    InvalidSplit(String),
    #[error("unknown feature column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is not numeric and cannot be quantile-binned")]
    NonNumericQuantileColumn(String),
    #[error("quantile stratification needs at least 2 bins, got {0}")]
    InvalidBins(usize),
    #[error("dataset has no decision column")]
    MissingDecision,
    #[error("vector length {found} does not match row count {expected}")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedSpec {
    pub column: String,
    /// Literal marking the protected group (S = 1).
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub column: String,
    /// Literal marking a positive outcome (Y = 1, and A = 1 for decisions).
    pub positive: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSpec {
    pub column: String,
}

/// Column declarations for a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub protected: ProtectedSpec,
    pub label: LabelSpec,
    #[serde(default)]
    pub features: Vec<FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionSpec>,
}

impl Schema {
    pub fn new(
        protected: (&str, &str),
        label: (&str, &str),
        features: Vec<FeatureSpec>,
    ) -> Result<Self, DatasetError> {
        let schema = Self {
            protected: ProtectedSpec {
                column: protected.0.to_string(),
                value: protected.1.to_string(),
            },
            label: LabelSpec {
                column: label.0.to_string(),
                positive: label.1.to_string(),
            },
            features,
            decision: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let schema: Schema =
            serde_json::from_str(text).map_err(|e| DatasetError::InvalidSchema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        let declared = std::iter::once(self.protected.column.as_str())
            .chain(std::iter::once(self.label.column.as_str()))
            .chain(self.decision.iter().map(|d| d.column.as_str()))
            .chain(self.features.iter().map(|f| f.name.as_str()));
        for name in declared {
            if name.is_empty() {
                return Err(DatasetError::InvalidSchema("empty column name".into()));
            }
            if name == WEIGHT_COLUMN {
                return Err(DatasetError::InvalidSchema(format!(
                    "`{WEIGHT_COLUMN}` is reserved for row weights"
                )));
            }
            if !seen.insert(name) {
                return Err(DatasetError::InvalidSchema(format!(
                    "column `{name}` declared more than once"
                )));
            }
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

/// A single parsed cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Numeric(f64),
    Categorical(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Numeric(x) => write!(f, "{x}"),
            Value::Categorical(s) => f.write_str(s),
        }
    }
}

/// Feature column storage. Categorical levels are kept sorted so that
/// encodings are independent of row order.
#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical { levels: Vec<String>, codes: Vec<u32> },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            Column::Numeric(v) => Value::Numeric(v[row]),
            Column::Categorical { levels, codes } => {
                Value::Categorical(levels[codes[row] as usize].clone())
            }
        }
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            Column::Numeric(v) => Some(v),
            Column::Categorical { .. } => None,
        }
    }

    fn subset(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Categorical { levels, codes } => Column::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&i| codes[i]).collect(),
            },
        }
    }
}

/// An owned view of one record, used where rows are scored in isolation.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub protected: u8,
    pub values: BTreeMap<String, Value>,
}

/// Which binary vector a metric is computed over.
#[derive(Clone, Copy, Debug)]
pub enum Outcome<'a> {
    Label,
    Decision,
    Vector(&'a [u8]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<Column>,
    s: Vec<u8>,
    y: Vec<u8>,
    decision: Option<Vec<u8>>,
    weights: Vec<f64>,
    extra: BTreeMap<String, Vec<String>>,
    protected_other: String,
    label_negative: String,
}

fn binary_codes(
    raw: &[&str],
    positive: &str,
    column: &str,
    err: impl Fn(String, usize) -> DatasetError,
) -> Result<(Vec<u8>, Option<String>), DatasetError> {
    let distinct: BTreeSet<&str> = raw.iter().copied().collect();
    if distinct.len() > 2 {
        return Err(err(column.to_string(), distinct.len()));
    }
    let other = distinct
        .iter()
        .find(|v| **v != positive)
        .map(|v| v.to_string());
    Ok((raw.iter().map(|v| u8::from(*v == positive)).collect(), other))
}

fn negative_literal(positive: &str) -> String {
    match positive {
        "1" => "0".into(),
        "0" => "1".into(),
        "yes" => "no".into(),
        "true" => "false".into(),
        other => format!("not_{other}"),
    }
}

impl Dataset {
    /// Builds a dataset from a header and string records, applying the same
    /// parsing rules as [`load_csv`].
    pub fn from_table(
        schema: Schema,
        header: &[String],
        records: &[Vec<String>],
    ) -> Result<Self, DatasetError> {
        schema.validate()?;
        let mut position = BTreeMap::new();
        for (i, name) in header.iter().enumerate() {
            if position.insert(name.as_str(), i).is_some() {
                return Err(DatasetError::DuplicateColumn(name.clone()));
            }
        }
        let locate = |name: &str| {
            position
                .get(name)
                .copied()
                .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
        };
        let protected_idx = locate(&schema.protected.column)?;
        let label_idx = locate(&schema.label.column)?;
        let decision_idx = schema
            .decision
            .as_ref()
            .map(|d| locate(&d.column))
            .transpose()?;
        let feature_idx = schema
            .features
            .iter()
            .map(|f| locate(&f.name))
            .collect::<Result<Vec<_>, _>>()?;

        for (r, rec) in records.iter().enumerate() {
            if rec.len() != header.len() {
                return Err(DatasetError::RaggedRow {
                    row: r + 1,
                    expected: header.len(),
                    found: rec.len(),
                });
            }
            for (c, cell) in rec.iter().enumerate() {
                if cell.is_empty() {
                    return Err(DatasetError::MissingValue {
                        row: r + 1,
                        column: header[c].clone(),
                    });
                }
            }
        }

        let column_of = |idx: usize| records.iter().map(|r| r[idx].as_str()).collect::<Vec<_>>();

        let (s, protected_other) = binary_codes(
            &column_of(protected_idx),
            &schema.protected.value,
            &schema.protected.column,
            |column, distinct| DatasetError::NonBinaryProtected { column, distinct },
        )?;
        let (y, label_other) = binary_codes(
            &column_of(label_idx),
            &schema.label.positive,
            &schema.label.column,
            |column, distinct| DatasetError::NonBinaryLabel { column, distinct },
        )?;
        let decision = match (decision_idx, &schema.decision) {
            (Some(idx), Some(spec)) => Some(
                binary_codes(
                    &column_of(idx),
                    &schema.label.positive,
                    &spec.column,
                    |column, distinct| DatasetError::NonBinaryDecision { column, distinct },
                )?
                .0,
            ),
            _ => None,
        };

        let mut columns = Vec::with_capacity(schema.features.len());
        for (spec, &idx) in schema.features.iter().zip(&feature_idx) {
            let raw = column_of(idx);
            let column = match spec.kind {
                FeatureKind::Numeric => Column::Numeric(
                    raw.iter()
                        .enumerate()
                        .map(|(r, v)| {
                            v.trim()
                                .parse::<f64>()
                                .ok()
                                .filter(|x| x.is_finite())
                                .ok_or_else(|| DatasetError::UnparsableNumeric {
                                    row: r + 1,
                                    column: spec.name.clone(),
                                    value: v.to_string(),
                                })
                        })
                        .collect::<Result<_, _>>()?,
                ),
                FeatureKind::Categorical => {
                    let levels: Vec<String> = raw
                        .iter()
                        .copied()
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .map(str::to_string)
                        .collect();
                    let codes = raw
                        .iter()
                        .map(|v| levels.binary_search_by(|l| l.as_str().cmp(v)).unwrap() as u32)
                        .collect();
                    Column::Categorical { levels, codes }
                }
            };
            columns.push(column);
        }

        let weights = match position.get(WEIGHT_COLUMN) {
            Some(&idx) => column_of(idx)
                .iter()
                .enumerate()
                .map(|(r, v)| {
                    v.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|w| w.is_finite() && *w >= 0.0)
                        .ok_or_else(|| DatasetError::InvalidWeight {
                            row: r + 1,
                            value: v.to_string(),
                        })
                })
                .collect::<Result<_, _>>()?,
            None => vec![1.0; records.len()],
        };

        let mut declared: BTreeSet<usize> = feature_idx.iter().copied().collect();
        declared.insert(protected_idx);
        declared.insert(label_idx);
        declared.extend(decision_idx);
        if let Some(&w) = position.get(WEIGHT_COLUMN) {
            declared.insert(w);
        }
        let extra = header
            .iter()
            .enumerate()
            .filter(|(i, _)| !declared.contains(i))
            .map(|(i, name)| (name.clone(), column_of(i).into_iter().map(String::from).collect()))
            .collect();

        let label_negative = label_other.unwrap_or_else(|| negative_literal(&schema.label.positive));
        let dataset = Self {
            protected_other: protected_other
                .unwrap_or_else(|| negative_literal(&schema.protected.value)),
            schema,
            columns,
            s,
            y,
            decision,
            weights,
            extra,
            label_negative,
        };
        dataset.check_groups()?;
        Ok(dataset)
    }

    fn check_groups(&self) -> Result<(), DatasetError> {
        let (n1, n0) = self.group_sizes();
        if n1 == 0 {
            return Err(DatasetError::EmptyGroup { group: 1 });
        }
        if n0 == 0 {
            return Err(DatasetError::EmptyGroup { group: 0 });
        }
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn s(&self) -> &[u8] {
        &self.s
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn decision(&self) -> Option<&[u8]> {
        self.decision.as_deref()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn feature(&self, name: &str) -> Option<&Column> {
        self.schema.feature_index(name).map(|i| &self.columns[i])
    }

    /// Undeclared columns carried through from the input, as raw strings.
    pub fn extra(&self, name: &str) -> Option<&[String]> {
        self.extra.get(name).map(Vec::as_slice)
    }

    pub fn extra_names(&self) -> impl Iterator<Item = &str> {
        self.extra.keys().map(String::as_str)
    }

    /// Row counts of the protected and favored groups, `(n1, n0)`.
    pub fn group_sizes(&self) -> (usize, usize) {
        let n1 = self.s.iter().filter(|&&s| s == 1).count();
        (n1, self.s.len() - n1)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn outcome<'a>(&'a self, outcome: &Outcome<'a>) -> Result<&'a [u8], DatasetError> {
        match outcome {
            Outcome::Label => Ok(&self.y),
            Outcome::Decision => self.decision.as_deref().ok_or(DatasetError::MissingDecision),
            Outcome::Vector(v) => {
                if v.len() != self.n() {
                    Err(DatasetError::LengthMismatch {
                        expected: self.n(),
                        found: v.len(),
                    })
                } else {
                    Ok(v)
                }
            }
        }
    }

    /// Codes an extra column as binary: 1 where the cell equals `positive`.
    pub fn binary_extra(&self, name: &str, positive: &str) -> Result<Vec<u8>, DatasetError> {
        let raw = self
            .extra(name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
        let refs: Vec<&str> = raw.iter().map(String::as_str).collect();
        Ok(binary_codes(&refs, positive, name, |column, distinct| {
            DatasetError::NonBinaryLabel { column, distinct }
        })?
        .0)
    }

    pub fn row(&self, i: usize) -> Row {
        Row {
            protected: self.s[i],
            values: self
                .schema
                .features
                .iter()
                .zip(&self.columns)
                .map(|(f, c)| (f.name.clone(), c.value(i)))
                .collect(),
        }
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self, DatasetError> {
        if weights.len() != self.n() {
            return Err(DatasetError::LengthMismatch {
                expected: self.n(),
                found: weights.len(),
            });
        }
        if let Some((row, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(DatasetError::InvalidWeight {
                row: row + 1,
                value: w.to_string(),
            });
        }
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    pub fn with_labels(&self, y: Vec<u8>) -> Result<Self, DatasetError> {
        if y.len() != self.n() {
            return Err(DatasetError::LengthMismatch {
                expected: self.n(),
                found: y.len(),
            });
        }
        Ok(Self {
            y: y.into_iter().map(|v| u8::from(v != 0)).collect(),
            ..self.clone()
        })
    }

    /// Attaches model decisions as the dataset's decision column.
    pub fn with_decisions(&self, column: &str, a: Vec<u8>) -> Result<Self, DatasetError> {
        if a.len() != self.n() {
            return Err(DatasetError::LengthMismatch {
                expected: self.n(),
                found: a.len(),
            });
        }
        let mut schema = self.schema.clone();
        schema.decision = Some(DecisionSpec {
            column: column.to_string(),
        });
        schema.validate()?;
        let mut extra = self.extra.clone();
        extra.remove(column);
        Ok(Self {
            schema,
            decision: Some(a.into_iter().map(|v| u8::from(v != 0)).collect()),
            extra,
            ..self.clone()
        })
    }

    /// Rows in the given order; indices may repeat. Group invariants are not
    /// re-checked, so a subset may lack one group.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let pick_u8 = |v: &[u8]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.subset(rows)).collect(),
            s: pick_u8(&self.s),
            y: pick_u8(&self.y),
            decision: self.decision.as_deref().map(pick_u8),
            weights: rows.iter().map(|&i| self.weights[i]).collect(),
            extra: self
                .extra
                .iter()
                .map(|(k, v)| (k.clone(), rows.iter().map(|&i| v[i].clone()).collect()))
                .collect(),
            protected_other: self.protected_other.clone(),
            label_negative: self.label_negative.clone(),
        }
    }

    /// Header and records in the on-disk layout. A `_weight` column is
    /// appended only when some weight differs from 1.
    pub fn to_table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let write_weights = self.weights.iter().any(|&w| w != 1.0);
        let mut header = vec![
            self.schema.protected.column.clone(),
            self.schema.label.column.clone(),
        ];
        if let Some(d) = &self.schema.decision {
            header.push(d.column.clone());
        }
        header.extend(self.schema.features.iter().map(|f| f.name.clone()));
        header.extend(self.extra.keys().cloned());
        if write_weights {
            header.push(WEIGHT_COLUMN.to_string());
        }

        let code = |bit: u8, pos: &str, neg: &str| {
            if bit == 1 {
                pos.to_string()
            } else {
                neg.to_string()
            }
        };
        let rows = (0..self.n())
            .map(|i| {
                let mut rec = vec![
                    code(self.s[i], &self.schema.protected.value, &self.protected_other),
                    code(self.y[i], &self.schema.label.positive, &self.label_negative),
                ];
                if let Some(a) = &self.decision {
                    rec.push(code(a[i], &self.schema.label.positive, &self.label_negative));
                }
                rec.extend(self.columns.iter().map(|c| c.value(i).to_string()));
                rec.extend(self.extra.values().map(|v| v[i].clone()));
                if write_weights {
                    rec.push(self.weights[i].to_string());
                }
                rec
            })
            .collect();
        (header, rows)
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let (header, rows) = self.to_table();
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&header).expect("in-memory write");
        for r in &rows {
            writer.write_record(r).expect("in-memory write");
        }
        writer.into_inner().expect("in-memory flush")
    }

    /// SHA-256 of the canonical CSV rendering.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_bytes()))
    }
}

/// Reads a CSV file with a header row and parses it against `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&bytes, schema)
}

pub fn parse_csv(bytes: &[u8], schema: &Schema) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec?.iter().map(str::to_string).collect());
    }
    Dataset::from_table(schema.clone(), &header, &records)
}

/// Stratified (on `(s, y)`) random split into `(train, holdout)`.
pub fn split(
    d: &Dataset,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(DatasetError::InvalidSplit(format!(
            "holdout fraction {holdout_fraction} outside (0, 1)"
        )));
    }
    if d.n() < 4 {
        return Err(DatasetError::InvalidSplit(format!(
            "need at least 4 rows, have {}",
            d.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (s, y) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)] {
        let mut cell: Vec<usize> = (0..d.n())
            .filter(|&i| d.s[i] == s && d.y[i] == y)
            .collect();
        if cell.is_empty() {
            continue;
        }
        let take = (cell.len() as f64 * holdout_fraction).round() as usize;
        if take >= cell.len() {
            return Err(DatasetError::DegenerateSplit { s, y });
        }
        cell.shuffle(&mut rng);
        holdout.extend_from_slice(&cell[..take]);
        train.extend_from_slice(&cell[take..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((d.subset(&train), d.subset(&holdout)))
}

/// How rows are grouped into cohorts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stratification {
    /// One stratum per distinct tuple of values.
    Exact { columns: Vec<String> },
    /// Each numeric column binned at empirical quantiles, then grouped by bin tuple.
    Quantile { columns: Vec<String>, bins: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    pub key: String,
    pub rows: Vec<usize>,
}

/// Quantile bin assignment for one numeric vector.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileBins {
    pub assignment: Vec<usize>,
    /// Lower edges of bins `1..`; bin 0 is everything below the first cut.
    pub cuts: Vec<f64>,
}

/// Bins values into at most `bins` left-closed intervals. Cut positions are
/// the empirical quantile ranks `j·n/bins`, snapped to the nearest boundary
/// between distinct values (ties to the lower rank) so equal values always
/// share a bin.
pub fn quantile_bins(values: &[f64], bins: usize) -> QuantileBins {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let boundaries: Vec<usize> = (1..n).filter(|&r| sorted[r] > sorted[r - 1]).collect();
    let mut cut_ranks = BTreeSet::new();
    if !boundaries.is_empty() {
        for j in 1..bins {
            let target = j as f64 * n as f64 / bins as f64;
            let nearest = boundaries
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    (a as f64 - target)
                        .abs()
                        .total_cmp(&(b as f64 - target).abs())
                        .then(a.cmp(&b))
                })
                .expect("nonempty");
            cut_ranks.insert(nearest);
        }
    }
    let cuts: Vec<f64> = cut_ranks.into_iter().map(|r| sorted[r]).collect();
    let assignment = values
        .iter()
        .map(|v| cuts.partition_point(|c| c <= v))
        .collect();
    QuantileBins { assignment, cuts }
}

fn group_by_keys(keys: Vec<Vec<usize>>, labels: impl Fn(&[usize]) -> String) -> Vec<Stratum> {
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (row, key) in keys.into_iter().enumerate() {
        groups.entry(key).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|(key, rows)| Stratum {
            key: labels(&key),
            rows,
        })
        .collect()
}

/// Partitions row indices into strata. Strata are ordered by key and each
/// row appears in exactly one.
pub fn stratify(d: &Dataset, spec: &Stratification) -> Result<Vec<Stratum>, DatasetError> {
    let (names, bins) = match spec {
        Stratification::Exact { columns } => (columns, None),
        Stratification::Quantile { columns, bins } => {
            if *bins < 2 {
                return Err(DatasetError::InvalidBins(*bins));
            }
            (columns, Some(*bins))
        }
    };
    let mut per_column_codes = Vec::with_capacity(names.len());
    let mut per_column_labels: Vec<Vec<String>> = Vec::with_capacity(names.len());
    for name in names {
        let column = d
            .feature(name)
            .ok_or_else(|| DatasetError::UnknownColumn(name.clone()))?;
        match (column, bins) {
            (Column::Categorical { levels, codes }, None) => {
                per_column_codes.push(codes.iter().map(|&c| c as usize).collect::<Vec<_>>());
                per_column_labels.push(levels.iter().map(|l| format!("{name}={l}")).collect());
            }
            (Column::Numeric(values), None) => {
                let mut distinct = values.clone();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                per_column_codes.push(
                    values
                        .iter()
                        .map(|v| distinct.partition_point(|x| x < v))
                        .collect(),
                );
                per_column_labels.push(distinct.iter().map(|x| format!("{name}={x}")).collect());
            }
            (Column::Numeric(values), Some(b)) => {
                let qb = quantile_bins(values, b);
                let labels = (0..=qb.cuts.len())
                    .map(|i| format!("{name}:q{i}"))
                    .collect();
                per_column_codes.push(qb.assignment);
                per_column_labels.push(labels);
            }
            (Column::Categorical { .. }, Some(_)) => {
                return Err(DatasetError::NonNumericQuantileColumn(name.clone()))
            }
        }
    }
    let keys = (0..d.n())
        .map(|i| per_column_codes.iter().map(|c| c[i]).collect())
        .collect();
    let strata = group_by_keys(keys, |key| {
        if key.is_empty() {
            "all".to_string()
        } else {
            key.iter()
                .zip(&per_column_labels)
                .map(|(&k, labels)| labels[k].as_str())
                .collect::<Vec<_>>()
                .join(",")
        }
    });
    debug_assert_eq!(strata.iter().map(|s| s.rows.len()).sum::<usize>(), d.n());
    Ok(strata)
}
