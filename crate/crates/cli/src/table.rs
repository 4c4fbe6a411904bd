//! CSV input and output. Rows are samples on disk and columns internally.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ewca_core::{DataMatrix, Mat};

use crate::error::{CliError, Result};

/// Which column carries class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl From<&str> for LabelColumn {
    /// Integers are column indices, anything else is a header name.
    fn from(s: &str) -> Self {
        match s.parse() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_owned()),
        }
    }
}

impl std::fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelColumn::Name(n) => f.write_str(n),
            LabelColumn::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    /// `d x n`.
    pub data: DataMatrix,
    pub feature_names: Option<Vec<String>>,
    /// Dense codes in order of first appearance.
    pub labels: Option<Vec<usize>>,
    pub label_names: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ReadOptions {
    pub has_header: bool,
    pub label_column: Option<LabelColumn>,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self { has_header: true, label_column: None }
    }
}

/// Reads a row-per-sample numeric table. Lines starting with `#` are skipped.
pub fn read_table(path: &Path, options: &ReadOptions) -> Result<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_table_from(file, path, options)
}

pub fn read_table_from<R: std::io::Read>(reader: R, path: &Path, options: &ReadOptions) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let path_buf = path.to_path_buf();
    let parse_err = |e: csv::Error| {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io { path: path_buf.clone(), source },
            kind => CliError::Parse { path: path_buf.clone(), line, message: format!("{kind:?}") },
        }
    };

    let mut records = reader.records();
    let mut header = None;
    let mut width = None;
    if options.has_header {
        if let Some(record) = records.next() {
            let record = record.map_err(parse_err)?;
            width = Some(record.len());
            header = Some(record.iter().map(str::to_owned).collect::<Vec<_>>());
        }
    }

    let label_index = match &options.label_column {
        None => None,
        Some(LabelColumn::Index(i)) => Some(*i),
        Some(LabelColumn::Name(name)) => {
            let found = header.as_ref().and_then(|h| h.iter().position(|c| c == name));
            Some(found.ok_or_else(|| CliError::UnknownLabelColumn { path: path.into(), column: name.clone() })?)
        }
    };

    let mut samples: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for record in records {
        let record = record.map_err(parse_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(CliError::RaggedRows { path: path.into(), line, expected, found: record.len() });
        }
        if let Some(l) = label_index {
            if l >= expected {
                return Err(CliError::UnknownLabelColumn { path: path.into(), column: l.to_string() });
            }
        }
        let mut row = Vec::with_capacity(expected);
        for (column, cell) in record.iter().enumerate() {
            if Some(column) == label_index {
                raw_labels.push(cell.to_owned());
                continue;
            }
            let value = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| CliError::NonNumericCell {
                path: path.into(),
                line,
                column,
                value: cell.to_owned(),
            })?;
            row.push(value);
        }
        samples.push(row);
    }

    if samples.is_empty() || samples[0].is_empty() {
        return Err(CliError::Parse { path: path.into(), line: 0, message: "no numeric data".into() });
    }
    let data = DataMatrix::from_samples(&samples)?;
    let feature_names = header.map(|mut h| {
        if let Some(l) = label_index {
            h.remove(l);
        }
        h
    });
    let (labels, label_names) = match label_index {
        Some(_) => {
            let (codes, names) = encode_labels(&raw_labels);
            (Some(codes), names)
        }
        None => (None, Vec::new()),
    };
    Ok(Table { data, feature_names, labels, label_names })
}

/// Dense integer codes in order of first appearance.
pub fn encode_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let codes = raw
        .iter()
        .map(|s| {
            *index.entry(s.as_str()).or_insert_with(|| {
                names.push(s.clone());
                names.len() - 1
            })
        })
        .collect();
    (codes, names)
}

/// Writes `# ewca <version> <command>`, a header row and one row per
/// `rows` entry. Floats use the shortest representation that round-trips.
pub struct TableWriter {
    path: PathBuf,
    out: csv::Writer<BufWriter<File>>,
}

impl TableWriter {
    pub fn create(path: &Path, command: &str, header: &[String]) -> Result<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut buffered = BufWriter::new(file);
        writeln!(buffered, "# ewca {} {command}", crate::VERSION).map_err(|e| CliError::io(path, e))?;
        let mut out = csv::Writer::from_writer(buffered);
        let path = path.to_path_buf();
        out.write_record(header).map_err(|e| csv_io(&path, e))?;
        Ok(Self { path, out })
    }

    pub fn write_values(&mut self, values: &[f64]) -> Result<()> {
        self.out.write_record(values.iter().map(|v| v.to_string())).map_err(|e| csv_io(&self.path, e))
    }

    pub fn write_fields<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.out.write_record(fields).map_err(|e| csv_io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.flush()
    }
}

fn csv_io(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        kind => CliError::Parse { path: path.into(), line: 0, message: format!("{kind:?}") },
    }
}

/// Writes `matrix` row by row with columns named `{prefix}1..`.
pub fn write_matrix(path: &Path, command: &str, prefix: &str, matrix: ewca_core::MatRef<'_, f64>) -> Result<()> {
    let header: Vec<String> = (1..=matrix.ncols()).map(|j| format!("{prefix}{j}")).collect();
    let mut w = TableWriter::create(path, command, &header)?;
    let mut row = vec![0.0; matrix.ncols()];
    for i in 0..matrix.nrows() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = matrix[(i, j)];
        }
        w.write_values(&row)?;
    }
    w.finish()
}

/// Reads a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<Mat<f64>> {
    let table = read_table(path, &ReadOptions::default())?;
    // The table is stored transposed; undo that.
    Ok(table.data.as_mat().transpose().to_owned())
}
