//! Loading and splitting the two dataset shapes the pipeline consumes:
//! metric tables (`file_id,<features…>,defective`) and source trees with
//! per-line defect annotations (`file_id,line_number`).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing or malformed header: {0}")]
    MissingHeader(String),
    #[error("row {row}: cell `{column}` is missing or not a finite number")]
    NonNumericCell { row: usize, column: String },
    #[error("row {row}: label must be 0 or 1")]
    BadLabel { row: usize },
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("annotation refers to unknown file `{0}`")]
    UnknownFileId(String),
    #[error("line {line} is out of range for `{file_id}`")]
    LineOutOfRange { file_id: String, line: usize },
    #[error("annotation row {row}: `{value}` is not a line number")]
    BadLineNumber { row: usize, value: String },
    #[error("duplicate file id `{0}`")]
    DuplicateFileId(String),
    #[error("need at least 2 records of each label to split (have {defective} defective, {clean} clean)")]
    TooFewRecords { defective: usize, clean: usize },
    #[error("test fraction must lie in (0,1), got {0}")]
    BadFraction(f64),
    #[error("record `{0}` does not match the dataset's feature columns")]
    ShapeMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One labeled row of a metric table. `features` follows the owning
/// dataset's `feature_names` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub file_id: String,
    pub features: Vec<f64>,
    pub label: u8,
}

impl MetricRecord {
    pub fn is_defective(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    pub records: Vec<MetricRecord>,
}

impl TabularDataset {
    /// Builds a dataset, checking that every record has one finite value per
    /// feature and a binary label.
    pub fn new(feature_names: Vec<String>, records: Vec<MetricRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(DatasetError::EmptyDataset);
        }
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != feature_names.len() {
                return Err(DatasetError::ShapeMismatch(r.file_id.clone()));
            }
            if let Some(j) = r.features.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonNumericCell {
                    row: i + 1,
                    column: feature_names[j].clone(),
                });
            }
            if r.label > 1 {
                return Err(DatasetError::BadLabel { row: i + 1 });
            }
        }
        Ok(Self {
            feature_names,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn find(&self, file_id: &str) -> Option<&MetricRecord> {
        self.records.iter().find(|r| r.file_id == file_id)
    }

    /// `(defective, clean)` record counts.
    pub fn label_counts(&self) -> (usize, usize) {
        let defective = self.records.iter().filter(|r| r.label == 1).count();
        (defective, self.records.len() - defective)
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.records.iter().map(|r| r.features.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Column `j` across all records.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.features[j]).collect()
    }
}

/// Parses a metric table from any reader.
pub fn read_metrics_table<R: std::io::Read>(reader: R) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(DatasetError::MissingHeader("empty input".into())),
    };
    let cols: Vec<String> = header.iter().map(|c| c.trim().to_string()).collect();
    if cols.len() < 2 || cols[0] != "file_id" || cols[cols.len() - 1] != "defective" {
        return Err(DatasetError::MissingHeader(format!(
            "expected `file_id,<features…>,defective`, got `{}`",
            cols.join(",")
        )));
    }
    let feature_names: Vec<String> = cols[1..cols.len() - 1].to_vec();
    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let row = row?;
        let row_no = i + 1;
        // a blank trailing line shows up as a single empty field
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        let file_id = row.get(0).unwrap_or_default().to_string();
        let mut features = Vec::with_capacity(feature_names.len());
        for (j, name) in feature_names.iter().enumerate() {
            let value = row
                .get(j + 1)
                .and_then(|c| c.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| DatasetError::NonNumericCell {
                    row: row_no,
                    column: name.clone(),
                })?;
            features.push(value);
        }
        if row.len() != cols.len() {
            return Err(DatasetError::BadLabel { row: row_no });
        }
        let label = match row.get(cols.len() - 1).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            _ => return Err(DatasetError::BadLabel { row: row_no }),
        };
        records.push(MetricRecord {
            file_id,
            features,
            label,
        });
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    Ok(TabularDataset {
        feature_names,
        records,
    })
}

pub fn load_metrics_table(path: impl AsRef<Path>) -> Result<TabularDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_metrics_table(file)
}

/// Writes a metric table. Values use the shortest round-trip float
/// representation, so re-loading gives back an equal dataset.
pub fn write_metrics_table<W: std::io::Write>(dataset: &TabularDataset, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header = vec!["file_id".to_string()];
    header.extend(dataset.feature_names.iter().cloned());
    header.push("defective".to_string());
    wtr.write_record(&header)?;
    for r in &dataset.records {
        let mut row = Vec::with_capacity(header.len());
        row.push(r.file_id.clone());
        row.extend(r.features.iter().map(|v| v.to_string()));
        row.push(r.label.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| DatasetError::Csv(e.into()))?;
    Ok(())
}

pub fn save_metrics_table(dataset: &TabularDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_metrics_table(dataset, std::io::BufWriter::new(file))
}

/// A source file with its 1-based defective line numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFile {
    pub file_id: String,
    pub lines: Vec<String>,
    pub defective_lines: BTreeSet<usize>,
    pub label: u8,
}

impl SourceFile {
    /// Builds a file; the label follows from whether any line is defective.
    pub fn new(
        file_id: impl Into<String>,
        lines: Vec<String>,
        defective_lines: BTreeSet<usize>,
    ) -> Result<Self> {
        let file_id = file_id.into();
        if let Some(&bad) = defective_lines.iter().find(|&&l| l == 0 || l > lines.len()) {
            return Err(DatasetError::LineOutOfRange { file_id, line: bad });
        }
        let label = u8::from(!defective_lines.is_empty());
        Ok(Self {
            file_id,
            lines,
            defective_lines,
            label,
        })
    }

    pub fn from_text(file_id: impl Into<String>, text: &str) -> Self {
        let lines = text.lines().map(str::to_string).collect();
        Self::new(file_id, lines, BTreeSet::new()).expect("no annotations")
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceCorpus {
    pub files: Vec<SourceFile>,
}

impl SourceCorpus {
    pub fn new(files: Vec<SourceFile>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &files {
            if !seen.insert(f.file_id.as_str()) {
                return Err(DatasetError::DuplicateFileId(f.file_id.clone()));
            }
        }
        Ok(Self { files })
    }

    pub fn get(&self, file_id: &str) -> Option<&SourceFile> {
        self.files.iter().find(|f| f.file_id == file_id)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

fn read_annotations(path: &Path) -> Result<Vec<(String, usize)>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h?,
        // an entirely empty annotation file means "nothing is defective"
        None => return Ok(Vec::new()),
    };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != ["file_id", "line_number"] {
        return Err(DatasetError::MissingHeader(format!(
            "expected `file_id,line_number`, got `{}`",
            cols.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rows.enumerate() {
        let row = row?;
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        let file_id = row.get(0).unwrap_or_default().trim().to_string();
        let raw = row.get(1).unwrap_or_default().trim();
        let line = raw
            .parse::<usize>()
            .map_err(|_| DatasetError::BadLineNumber {
                row: i + 1,
                value: raw.to_string(),
            })?;
        out.push((file_id, line));
    }
    Ok(out)
}

/// Loads every regular file under `root` (file id = `/`-separated path
/// relative to `root`) and attaches the annotated defective lines.
pub fn load_source_corpus(
    root: impl AsRef<Path>,
    annotations: impl AsRef<Path>,
) -> Result<SourceCorpus> {
    let root = root.as_ref();
    let mut texts: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            DatasetError::Io {
                path,
                source: e.into(),
            }
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root");
        let file_id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let text = fs::read_to_string(entry.path()).map_err(io_err(entry.path()))?;
        texts.insert(file_id, text.lines().map(str::to_string).collect());
    }

    let mut defects: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (file_id, line) in read_annotations(annotations.as_ref())? {
        let Some(lines) = texts.get(&file_id) else {
            return Err(DatasetError::UnknownFileId(file_id));
        };
        if line == 0 || line > lines.len() {
            return Err(DatasetError::LineOutOfRange { file_id, line });
        }
        defects.entry(file_id).or_default().insert(line);
    }

    let files = texts
        .into_iter()
        .map(|(file_id, lines)| {
            let defective = defects.remove(&file_id).unwrap_or_default();
            SourceFile::new(file_id, lines, defective)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SourceCorpus { files })
}

/// Writes the corpus as a directory tree plus an annotation table, the
/// inverse of [`load_source_corpus`].
pub fn write_source_corpus(
    corpus: &SourceCorpus,
    root: impl AsRef<Path>,
    annotations: impl AsRef<Path>,
) -> Result<()> {
    let root = root.as_ref();
    for f in &corpus.files {
        let path = root.join(&f.file_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut text = f.lines.join("\n");
        if !f.lines.is_empty() {
            text.push('\n');
        }
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    let path = annotations.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(std::io::BufWriter::new(file));
    wtr.write_record(["file_id", "line_number"])?;
    for f in &corpus.files {
        for line in &f.defective_lines {
            wtr.write_record([f.file_id.as_str(), &line.to_string()])?;
        }
    }
    wtr.flush().map_err(io_err(path))?;
    Ok(())
}

/// Stratified train/test split. Within each label the test share is
/// `round(test_fraction · count)`, clamped so both partitions keep at least
/// one record of that label. Records keep their original relative order.
pub fn split_dataset(
    dataset: &TabularDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::BadFraction(test_fraction));
    }
    let (defective, clean) = dataset.label_counts();
    if defective < 2 || clean < 2 {
        return Err(DatasetError::TooFewRecords { defective, clean });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; dataset.len()];
    for label in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.records[i].label == label)
            .collect();
        let n = idx.len();
        let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..n_test] {
            in_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in dataset.records.iter().zip(&in_test) {
        if *t {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((
        TabularDataset {
            feature_names: dataset.feature_names.clone(),
            records: train,
        },
        TabularDataset {
            feature_names: dataset.feature_names.clone(),
            records: test,
        },
    ))
}
