use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    /// Treat the last column as the label.
    pub labels: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { labels: true }
    }
}

/// Reads a comma-separated file whose last column is the label.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    ingest_csv_with(path, CsvOptions::default())
}

/// Reads a comma-separated numeric file. A first row containing any
/// non-numeric cell is taken as a header.
pub fn ingest_csv_with(path: impl AsRef<Path>, opts: CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_reader(file);

    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::Csv {
                    line,
                    msg: format!("expected {w} cells, found {}", record.len()),
                });
            }
        }
        let parsed: Vec<Option<f64>> = record.iter().map(|c| c.parse::<f64>().ok()).collect();
        if first && parsed.iter().any(Option::is_none) {
            first = false;
            width = Some(record.len());
            continue;
        }
        first = false;
        width = Some(record.len());
        for (col, (cell, v)) in record.iter().zip(parsed).enumerate() {
            match v {
                Some(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::Csv {
                        line,
                        msg: format!("column {}: {cell:?} is not a finite number", col + 1),
                    })
                }
            }
        }
    }

    let width = width.ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    if !opts.labels {
        return Dataset::new(width, values, None);
    }
    if width < 1 {
        return Err(Error::Data("no label column".into()));
    }
    let d = width - 1;
    let mut features = Vec::with_capacity(values.len() / width.max(1) * d);
    let mut labels = Vec::with_capacity(values.len() / width.max(1));
    for row in values.chunks_exact(width) {
        features.extend_from_slice(&row[..d]);
        labels.push(row[d]);
    }
    if d == 0 {
        return Err(Error::Data("a label column alone has no features".into()));
    }
    Dataset::new(d, features, Some(labels))
}

/// Writes `x0..x{d-1}[,y]` with a header line. Values use Rust's shortest
/// round-trip formatting.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut header: Vec<String> = (0..ds.n_features()).map(|j| format!("x{j}")).collect();
    if ds.labels().is_some() {
        header.push("y".into());
    }
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for (i, row) in ds.rows().enumerate() {
        let mut line = row.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        if let Some(labels) = ds.labels() {
            line.push(',');
            line.push_str(&labels[i].to_string());
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn plain_rows() {
        let f = file("1.0,2.0,3.0\n4.0,5.0,6.0");
        let ds = ingest_csv(f.path()).unwrap();
        assert_eq!((ds.n_rows(), ds.n_features()), (2, 2));
        assert_eq!(ds.labels().unwrap(), &[3.0, 6.0]);
        assert_eq!(ds.row(1), &[4.0, 5.0]);
    }

    #[test]
    fn header_is_detected() {
        let f = file("a,b,y\n1,2,0\n");
        let ds = ingest_csv(f.path()).unwrap();
        assert_eq!(ds.n_rows(), 1);
        let f = file("a,b,y\n");
        let ds = ingest_csv(f.path()).unwrap();
        assert_eq!((ds.n_rows(), ds.n_features()), (0, 2));
    }

    #[test]
    fn ragged_row_reports_line() {
        let f = file("1,2,3\n4,5,6\n7,8\n");
        match ingest_csv(f.path()).unwrap_err() {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_reports_line() {
        let f = file("x,y\n1,2\n3,abc\n");
        match ingest_csv(f.path()).unwrap_err() {
            Error::Csv { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unlabeled_mode_keeps_all_columns() {
        let f = file("1,2,3\n");
        let ds = ingest_csv_with(f.path(), CsvOptions { labels: false }).unwrap();
        assert_eq!(ds.n_features(), 3);
        assert!(ds.labels().is_none());
    }

    #[test]
    fn write_then_read() {
        let ds = Dataset::new(2, vec![0.1, -2.5, 3.0, 1e-7], Some(vec![1.0, 0.0])).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, f.path()).unwrap();
        assert_eq!(ingest_csv(f.path()).unwrap(), ds);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(ingest_csv("/nonexistent/data.csv"), Err(Error::Io { .. })));
    }
}
