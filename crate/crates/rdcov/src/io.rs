//! CSV input and output.
//!
//! Rows with a missing value (empty, `NA`, `NaN` or `.`) in any selected
//! column are dropped and counted. Any other non-numeric entry is an error
//! naming its row and column. Cluster labels may be arbitrary strings; they
//! are mapped to dense ids in order of first appearance.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rdcov_core::Dataset;
use serde::Serialize;

use crate::error::{Error, Result};

/// Columns to read.
#[derive(Debug, Clone, Default)]
pub struct Columns {
    pub outcome: String,
    pub score: String,
    pub covariates: Vec<String>,
    pub cluster: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub rows_read: usize,
    pub rows_dropped: usize,
    /// Original cluster labels, indexed by cluster id.
    pub cluster_labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

impl Loaded {
    pub fn summary(&self) -> LoadSummary {
        LoadSummary { rows_read: self.rows_read, rows_dropped: self.rows_dropped }
    }
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "NaN" | "nan" | ".")
}

fn csv_error(path: &Path, source: csv::Error) -> Error {
    Error::Csv { path: path.to_path_buf(), source }
}

pub fn load_csv(path: impl AsRef<Path>, columns: &Columns, cutoff: f64) -> Result<Loaded> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_csv(file, path, columns, cutoff)
}

pub fn read_csv(reader: impl std::io::Read, path: &Path, columns: &Columns, cutoff: f64) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!("{}: no column named '{name}'", path.display()))
        })
    };

    let numeric: Vec<(String, usize)> = std::iter::once(&columns.outcome)
        .chain(std::iter::once(&columns.score))
        .chain(&columns.covariates)
        .map(|name| Ok((name.clone(), find(name)?)))
        .collect::<Result<_>>()?;
    let cluster_col = columns.cluster.as_deref().map(find).transpose()?;

    let d = columns.covariates.len();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut z = vec![Vec::new(); d];
    let mut cluster_ids = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut label_ids: HashMap<String, usize> = HashMap::new();
    let mut rows_read = 0;
    let mut rows_dropped = 0;
    let mut values = vec![0.0; numeric.len()];

    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        rows_read += 1;
        // header is line 1
        let line = r + 2;
        let mut missing = false;
        for (slot, (name, col)) in values.iter_mut().zip(&numeric) {
            let raw = record.get(*col).unwrap_or("");
            if is_missing(raw) {
                missing = true;
                continue;
            }
            *slot = raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: line,
                column: name.clone(),
                value: raw.to_string(),
            })?;
            if !slot.is_finite() {
                missing = true;
            }
        }
        let label = cluster_col.map(|c| record.get(c).unwrap_or("").trim().to_string());
        if missing || label.as_deref().is_some_and(is_missing) {
            rows_dropped += 1;
            continue;
        }
        y.push(values[0]);
        x.push(values[1]);
        for k in 0..d {
            z[k].push(values[2 + k]);
        }
        if let Some(label) = label {
            let next = labels.len();
            let id = *label_ids.entry(label.clone()).or_insert_with(|| {
                labels.push(label);
                next
            });
            cluster_ids.push(id);
        }
    }

    if y.is_empty() {
        return Err(Error::Config(format!("{}: no complete rows in the selected columns", path.display())));
    }
    let cluster = cluster_col.map(|_| cluster_ids);
    let dataset = Dataset::new(y, x, z, cluster, cutoff)?.with_covariate_names(columns.covariates.clone())?;
    Ok(Loaded {
        dataset,
        rows_read,
        rows_dropped,
        cluster_labels: cluster_col.map(|_| labels),
    })
}

/// Writes `y`, the raw score, covariates and cluster ids.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    write_dataset(file, path, data)
}

pub fn write_dataset(writer: impl Write, path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e| csv_error(path, e);
    let mut header = vec!["y".to_string(), "x".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    if data.cluster().is_some() {
        header.push("cluster".into());
    }
    w.write_record(&header).map_err(err)?;
    let score = data.raw_score();
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        row.clear();
        row.push(data.y()[i].to_string());
        row.push(score[i].to_string());
        for k in 0..data.d() {
            row.push(data.covariate(k)[i].to_string());
        }
        if let Some(c) = data.cluster() {
            row.push(c[i].to_string());
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|source| Error::Io { path: PathBuf::from(path), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(covs: &[&str], cluster: Option<&str>) -> Columns {
        Columns {
            outcome: "y".into(),
            score: "x".into(),
            covariates: covs.iter().map(|s| s.to_string()).collect(),
            cluster: cluster.map(String::from),
        }
    }

    #[test]
    fn drops_missing_rows_and_centers() {
        let text = "y,x,z,g\n1,0.5,2,a\n2,,3,b\nNA,0.1,1,a\n3,-0.2,.,c\n4,-0.3,5,b\n";
        let loaded = read_csv(text.as_bytes(), Path::new("t.csv"), &cols(&["z"], Some("g")), 0.25).unwrap();
        assert_eq!((loaded.rows_read, loaded.rows_dropped), (5, 3));
        let d = &loaded.dataset;
        assert_eq!(d.y(), &[1.0, 4.0]);
        assert_eq!(d.x(), &[0.25, -0.55]);
        assert_eq!(d.covariate_names(), &["z".to_string()]);
        assert_eq!(d.cluster().unwrap(), &[0, 1]);
        assert_eq!(loaded.cluster_labels.unwrap(), vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn names_bad_cells() {
        let text = "y,x\n1,0.5\n2,abc\n";
        let err = read_csv(text.as_bytes(), Path::new("t.csv"), &cols(&[], None), 0.0).unwrap_err();
        match err {
            Error::Parse { row, column, value, .. } => {
                assert_eq!((row, column.as_str(), value.as_str()), (3, "x", "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_config_error() {
        let err = read_csv("y,x\n1,2\n".as_bytes(), Path::new("t.csv"), &cols(&["w"], None), 0.0).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("'w'"));
    }

    #[test]
    fn round_trip() {
        let text = "y,x,z\n1,0.5,2\n2,-0.5,3\n";
        let loaded = read_csv(text.as_bytes(), Path::new("t.csv"), &cols(&["z"], None), 0.1).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, Path::new("out.csv"), &loaded.dataset).unwrap();
        let again = read_csv(buf.as_slice(), Path::new("out.csv"), &cols(&["z"], None), 0.1).unwrap();
        assert_eq!(again.dataset.y(), loaded.dataset.y());
        for (a, b) in again.dataset.x().iter().zip(loaded.dataset.x()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
