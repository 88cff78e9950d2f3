//! Persistence: signals as CSV, models as JSON, datasets as directories.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::signal::SignalRecord;
use crate::simulator::{DatasetMetadata, ExperimentDataset};
use crate::system::{LtiStateSpace, PeriodicStateSpace};

/// Write `t,<labels...>` followed by one row per sample.
pub fn write_signal_csv(path: &Path, sig: &SignalRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(sig.labels().iter().cloned());
    w.write_record(&header)?;
    for k in 0..sig.len() {
        let mut row = vec![k.to_string()];
        row.extend(sig.samples().row(k).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signal_csv(path: &Path) -> Result<SignalRecord> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("t") || header.len() < 2 {
        return Err(Error::Parse(format!("{}: expected header 't,<channels>'", path.display())));
    }
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!("{}: row {} has {} fields", path.display(), line + 1, rec.len())));
        }
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("{}: row {}: bad number '{field}'", path.display(), line + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    SignalRecord::new(Mat::from_row_slice(rows, labels.len(), &values), labels)
}

#[derive(Serialize, Deserialize)]
struct LtiJson {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PeriodicJson {
    period: usize,
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<Vec<f64>>>,
    c: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    d: Option<Vec<Vec<Vec<f64>>>>,
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Matrix from nested rows; `cols` is used when there are no rows.
fn from_rows(rows: &[Vec<f64>], cols_if_empty: usize, what: &str) -> Result<Mat> {
    let cols = rows.first().map_or(cols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse(format!("{what}: ragged matrix rows")));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn lti_to_json(sys: &LtiStateSpace) -> Result<String> {
    let j = LtiJson { a: rows(&sys.a), b: rows(&sys.b), c: rows(&sys.c), d: rows(&sys.d) };
    Ok(serde_json::to_string_pretty(&j)?)
}

pub fn lti_from_json(text: &str) -> Result<LtiStateSpace> {
    let j: LtiJson = serde_json::from_str(text)?;
    let a = from_rows(&j.a, 0, "a")?;
    let n = a.nrows();
    let b = from_rows(&j.b, 0, "b")?;
    let c = from_rows(&j.c, n, "c")?;
    let d = from_rows(&j.d, b.ncols(), "d")?;
    LtiStateSpace::new(a, b, c, d)
}

pub fn periodic_to_json(sys: &PeriodicStateSpace) -> Result<String> {
    let all = |v: &[Mat]| v.iter().map(rows).collect::<Vec<_>>();
    let j = PeriodicJson {
        period: sys.period(),
        a: all(sys.a_all()),
        b: all(sys.b_all()),
        c: all(sys.c_all()),
        d: Some(all(sys.d_all())),
    };
    Ok(serde_json::to_string_pretty(&j)?)
}

/// Parse a periodic model. A missing `d` means zero feedthrough.
pub fn periodic_from_json(text: &str) -> Result<PeriodicStateSpace> {
    let j: PeriodicJson = serde_json::from_str(text)?;
    if j.a.len() != j.period || j.b.len() != j.period || j.c.len() != j.period {
        return Err(Error::Parse(format!("model must list {} matrices for each of a, b, c", j.period)));
    }
    let conv = |v: &[Vec<Vec<f64>>], name: &str| -> Result<Vec<Mat>> {
        v.iter().enumerate().map(|(k, m)| from_rows(m, 0, &format!("{name}[{k}]"))).collect()
    };
    let a = conv(&j.a, "a")?;
    let b = conv(&j.b, "b")?;
    let c = conv(&j.c, "c")?;
    match j.d {
        Some(d) => {
            if d.len() != j.period {
                return Err(Error::Parse(format!("model must list {} d matrices", j.period)));
            }
            PeriodicStateSpace::new(a, b, c, conv(&d, "d")?)
        }
        None => PeriodicStateSpace::strictly_proper(a, b, c),
    }
}

pub fn read_periodic(path: &Path) -> Result<PeriodicStateSpace> {
    periodic_from_json(&fs::read_to_string(path)?)
}

pub fn write_periodic(path: &Path, sys: &PeriodicStateSpace) -> Result<()> {
    fs::write(path, periodic_to_json(sys)?)?;
    Ok(())
}

pub fn write_lti(path: &Path, sys: &LtiStateSpace) -> Result<()> {
    fs::write(path, lti_to_json(sys)?)?;
    Ok(())
}

/// Write `r.csv`, `y.csv`, `u.csv` and `metadata.json` into `dir`.
pub fn write_dataset(dir: &Path, data: &ExperimentDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_signal_csv(&dir.join("r.csv"), &data.r)?;
    write_signal_csv(&dir.join("y.csv"), &data.y)?;
    write_signal_csv(&dir.join("u.csv"), &data.u)?;
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&data.metadata)?)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<ExperimentDataset> {
    let r = read_signal_csv(&dir.join("r.csv"))?;
    let y = read_signal_csv(&dir.join("y.csv"))?;
    let u = read_signal_csv(&dir.join("u.csv"))?;
    let metadata: DatasetMetadata = serde_json::from_str(&fs::read_to_string(dir.join("metadata.json"))?)?;
    if metadata.n_samples != r.len() {
        return Err(Error::Parse(format!(
            "metadata lists {} samples, files hold {}",
            metadata.n_samples,
            r.len()
        )));
    }
    ExperimentDataset::new(r, y, u, metadata)
}
