use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numeric::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    TargetTrain,
    TargetTest,
}

impl Role {
    /// Source and target-train data must be fully labeled.
    pub fn requires_labels(self) -> bool {
        !matches!(self, Role::TargetTest)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::TargetTrain => "target_train",
            Role::TargetTest => "target_test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Class indices.
    Classes(Vec<usize>),
    Real(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> TaskKind {
        match self {
            Labels::Classes(_) => TaskKind::Classification,
            Labels::Real(_) => TaskKind::Regression,
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match self {
            Labels::Classes(v) => v.iter().map(|&c| c as f64).collect(),
            Labels::Real(v) => v.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Labels {
        match self {
            Labels::Classes(v) => Labels::Classes(indices.iter().map(|&i| v[i]).collect()),
            Labels::Real(v) => Labels::Real(indices.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Labeled or unlabeled samples of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub role: Role,
    pub column_names: Vec<String>,
    /// `N x F`, columns named by `column_names`.
    pub features: Matrix,
    pub labels: Option<Labels>,
    /// Knowledge id -> feature column indices.
    pub knowledge: BTreeMap<String, Vec<usize>>,
}

impl DomainDataset {
    pub fn new(
        role: Role,
        column_names: Vec<String>,
        features: Matrix,
        labels: Option<Labels>,
        knowledge: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self> {
        if column_names.len() != features.cols() {
            return Err(Error::shape("dataset column names", features.cols(), column_names.len()));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::shape("dataset labels", features.rows(), l.len()));
            }
        } else if role.requires_labels() {
            return Err(Error::Schema(format!("{} data must be labeled", role.as_str())));
        }
        for (id, cols) in &knowledge {
            if cols.is_empty() {
                return Err(Error::Schema(format!("knowledge '{id}' has no columns")));
            }
            if let Some(&c) = cols.iter().find(|&&c| c >= features.cols()) {
                return Err(Error::Schema(format!("knowledge '{id}' refers to column {c} of {}", features.cols())));
            }
        }
        Ok(DomainDataset { role, column_names, features, labels, knowledge })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn task(&self) -> Option<TaskKind> {
        self.labels.as_ref().map(Labels::task)
    }

    pub fn knowledge_columns(&self, id: &str) -> Result<&[usize]> {
        self.knowledge.get(id).map(Vec::as_slice).ok_or_else(|| Error::Schema(format!("unknown knowledge id '{id}'")))
    }

    /// The `N x F_k` matrix of one knowledge group.
    pub fn knowledge_matrix(&self, id: &str) -> Result<Matrix> {
        Ok(self.features.select_cols(self.knowledge_columns(id)?))
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        match &self.labels {
            Some(Labels::Classes(v)) => Some(v),
            _ => None,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> DomainDataset {
        DomainDataset {
            role: self.role,
            column_names: self.column_names.clone(),
            features: self.features.select_rows(indices),
            labels: self.labels.as_ref().map(|l| l.select(indices)),
            knowledge: self.knowledge.clone(),
        }
    }

    pub fn with_role(mut self, role: Role) -> DomainDataset {
        self.role = role;
        self
    }

    /// Removes the named columns. Knowledge groups that lose a column are dropped entirely.
    pub fn without_columns(&self, names: &[&str]) -> DomainDataset {
        let keep: Vec<usize> =
            (0..self.n_features()).filter(|&c| !names.contains(&self.column_names[c].as_str())).collect();
        let remap: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let knowledge = self
            .knowledge
            .iter()
            .filter_map(|(id, cols)| {
                let mapped: Option<Vec<usize>> = cols.iter().map(|c| remap.get(c).copied()).collect();
                mapped.map(|m| (id.clone(), m))
            })
            .collect();
        DomainDataset {
            role: self.role,
            column_names: keep.iter().map(|&c| self.column_names[c].clone()).collect(),
            features: self.features.select_cols(&keep),
            labels: self.labels.clone(),
            knowledge,
        }
    }

    /// Schema that reproduces this dataset when its CSV is reloaded.
    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            role: self.role,
            task: self.task().unwrap_or(TaskKind::Classification),
            label_column: self.labels.as_ref().map(|_| DEFAULT_LABEL_COLUMN.to_string()),
            knowledge: self
                .knowledge
                .iter()
                .map(|(k, cols)| (k.clone(), cols.iter().map(|&c| self.column_names[c].clone()).collect()))
                .collect(),
        }
    }
}

pub const DEFAULT_LABEL_COLUMN: &str = "label";

/// Sidecar describing how to read a dataset CSV.
///
/// ```toml
/// role = "source"            # source | target_train | target_test
/// task = "classification"    # classification | regression
/// label_column = "label"     # optional
///
/// [knowledge]
/// hour = ["hour"]
/// location = ["lat", "lon"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub role: Role,
    #[serde(default = "default_task")]
    pub task: TaskKind,
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default)]
    pub knowledge: BTreeMap<String, Vec<String>>,
}

fn default_task() -> TaskKind {
    TaskKind::Classification
}

impl DatasetSchema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema is always representable")
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let cell_err = |message: String| Error::Cell { row, column: column.to_string(), message };
    let v: f64 = raw.parse().map_err(|_| cell_err(format!("not a number: '{raw}'")))?;
    if !v.is_finite() {
        return Err(cell_err(format!("non-finite value '{raw}'")));
    }
    Ok(v)
}

/// Parses a dataset from CSV text. Rows are numbered from 1 (the first data row) in errors.
pub fn parse_dataset<R: Read>(reader: R, schema: &DatasetSchema) -> Result<DomainDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Schema("empty header".into()));
    }
    let label_name = schema.label_column.as_deref().unwrap_or(DEFAULT_LABEL_COLUMN);
    let label_idx = header.iter().position(|h| h == label_name);
    if label_idx.is_none() && schema.role.requires_labels() {
        return Err(Error::Cell {
            row: 0,
            column: label_name.to_string(),
            message: format!("missing label column for {} data", schema.role.as_str()),
        });
    }
    if let Some(dup) = header.iter().enumerate().find(|(i, h)| header[..*i].contains(h)) {
        return Err(Error::Schema(format!("duplicate column '{}'", dup.1)));
    }
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&i| Some(i) != label_idx).collect();
    let column_names: Vec<String> = feature_cols.iter().map(|&i| header[i].clone()).collect();

    let mut knowledge = BTreeMap::new();
    for (id, names) in &schema.knowledge {
        let mut cols = Vec::with_capacity(names.len());
        for name in names {
            let c = column_names.iter().position(|h| h == name).ok_or_else(|| Error::Cell {
                row: 0,
                column: name.clone(),
                message: format!("knowledge '{id}' names a missing column"),
            })?;
            cols.push(c);
        }
        knowledge.insert(id.clone(), cols);
    }

    let mut data = Vec::new();
    let mut raw_labels: Vec<Option<f64>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Cell { row, column: String::new(), message: e.to_string() })?;
        if record.len() != header.len() {
            return Err(Error::Cell {
                row,
                column: String::new(),
                message: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        for &c in &feature_cols {
            data.push(parse_cell(&record[c], row, &header[c])?);
        }
        if let Some(li) = label_idx {
            let raw = &record[li];
            if raw.is_empty() {
                if schema.role.requires_labels() {
                    return Err(Error::Cell {
                        row,
                        column: label_name.to_string(),
                        message: format!("{} row without a label", schema.role.as_str()),
                    });
                }
                raw_labels.push(None);
            } else {
                raw_labels.push(Some(parse_cell(raw, row, label_name)?));
            }
        }
    }
    let n = data.len() / feature_cols.len().max(1);
    let features = Matrix::from_vec(n, feature_cols.len(), data)?;

    let labels = if label_idx.is_none() || raw_labels.iter().all(Option::is_none) {
        None
    } else if raw_labels.iter().any(Option::is_none) {
        let row = raw_labels.iter().position(Option::is_none).unwrap_or(0) + 1;
        return Err(Error::Cell {
            row,
            column: label_name.to_string(),
            message: "labels must be present on every row or on none".into(),
        });
    } else {
        let values: Vec<f64> = raw_labels.into_iter().flatten().collect();
        Some(match schema.task {
            TaskKind::Regression => Labels::Real(values),
            TaskKind::Classification => {
                let mut classes = Vec::with_capacity(values.len());
                for (i, v) in values.into_iter().enumerate() {
                    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                        return Err(Error::Cell {
                            row: i + 1,
                            column: label_name.to_string(),
                            message: format!("class label must be a non-negative integer, got {v}"),
                        });
                    }
                    classes.push(v as usize);
                }
                Labels::Classes(classes)
            }
        })
    };
    DomainDataset::new(schema.role, column_names, features, labels, knowledge)
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<DomainDataset> {
    parse_dataset(fs::File::open(path)?, schema)
}

/// Writes the dataset as CSV (features, then `label` if labeled). Values use Rust's shortest
/// round-trip float formatting, so reloading gives identical bits.
pub fn write_dataset_csv<W: Write>(data: &DomainDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = data.column_names.clone();
    if data.labels.is_some() {
        header.push(DEFAULT_LABEL_COLUMN.into());
    }
    w.write_record(&header).map_err(csv_io)?;
    let labels = data.labels.as_ref().map(Labels::as_f64);
    for r in 0..data.len() {
        let mut rec: Vec<String> = data.features.row(r).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &labels {
            rec.push(match &data.labels {
                Some(Labels::Classes(c)) => c[r].to_string(),
                _ => format!("{:?}", l[r]),
            });
        }
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Writes `<stem>.csv` and `<stem>.schema.toml` next to each other.
pub fn write_dataset(data: &DomainDataset, csv_path: impl AsRef<Path>) -> Result<()> {
    let csv_path = csv_path.as_ref();
    write_dataset_csv(data, fs::File::create(csv_path)?)?;
    fs::write(schema_path_for(csv_path), data.schema().to_toml_string())?;
    Ok(())
}

/// `data/source.csv` -> `data/source.schema.toml`.
pub fn schema_path_for(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("schema.toml")
}
