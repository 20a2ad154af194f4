//! Datasets: the synthetic clustered-regression generator, CSV ingestion and
//! export, column standardization with an appended intercept, and
//! subsampling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskKind;

pub const INTERCEPT: &str = "intercept";

/// Parameters of the synthetic clustered linear-regression generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsynthSpec {
    pub n: usize,
    pub m: usize,
    pub k_clusters: usize,
    /// Standard deviation of the cluster centroids.
    pub s: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl RsynthSpec {
    pub fn new(n: usize, m: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            k_clusters: 3,
            s: 0.25,
            noise_std: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_clusters == 0 || self.n < self.k_clusters {
            return Err(Error::param(
                "k_clusters",
                format!("need n >= k_clusters >= 1 (n = {}, k = {})", self.n, self.k_clusters),
            ));
        }
        if self.m == 0 {
            return Err(Error::param("m", "need at least one covariate"));
        }
        if !(self.s >= 0.0) {
            return Err(Error::param("s", "must be >= 0"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::param("noise_std", "must be >= 0"));
        }
        Ok(())
    }
}

/// Per-column standardization constants (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_raw: Array2<f64>,
    /// Standardized covariates with the intercept column last.
    pub x: Array2<f64>,
    /// Responses as given (probabilities for classification tasks).
    pub y: Array2<f64>,
    /// Covariate names, without the intercept.
    pub column_names: Vec<String>,
    pub target_names: Vec<String>,
    pub normalization: Vec<ColumnScale>,
    pub labels: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(
        x_raw: Array2<f64>,
        y: Array2<f64>,
        column_names: Vec<String>,
        target_names: Vec<String>,
        labels: Option<Vec<i64>>,
    ) -> Result<Self> {
        if y.nrows() != x_raw.nrows() {
            return Err(Error::DimensionMismatch {
                context: "response rows",
                expected: x_raw.nrows(),
                actual: y.nrows(),
            });
        }
        if column_names.len() != x_raw.ncols() || target_names.len() != y.ncols() {
            return Err(Error::Schema("column names do not match matrix widths".into()));
        }
        if let Some(l) = &labels {
            if l.len() != x_raw.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "labels",
                    expected: x_raw.nrows(),
                    actual: l.len(),
                });
            }
        }
        let (x, normalization) = normalize(x_raw.view());
        Ok(Self {
            x_raw,
            x,
            y,
            column_names,
            target_names,
            normalization,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Covariate names including the trailing intercept.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = self.column_names.clone();
        names.push(INTERCEPT.to_string());
        names
    }

    /// Writes the raw table as CSV and the normalization constants as a
    /// sidecar JSON file next to it.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = self.column_names.clone();
        header.extend(self.target_names.iter().cloned());
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.x_raw.row(i).iter().map(|v| v.to_string()).collect();
            rec.extend(self.y.row(i).iter().map(|v| v.to_string()));
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        let sidecar = BufWriter::new(File::create(normalization_sidecar(path))?);
        serde_json::to_writer_pretty(sidecar, &NormalizationFile::from(self))?;
        Ok(())
    }
}

#[derive(Serialize)]
struct NormalizationFile<'a> {
    columns: &'a [String],
    normalization: &'a [ColumnScale],
}

impl<'a> From<&'a Dataset> for NormalizationFile<'a> {
    fn from(ds: &'a Dataset) -> Self {
        Self {
            columns: &ds.column_names,
            normalization: &ds.normalization,
        }
    }
}

pub fn normalization_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".normalization.json");
    path.with_file_name(name)
}

/// Standardizes each column to zero mean and unit population variance and
/// appends an intercept column of ones. Constant columns keep `std = 1`.
pub fn normalize(x_raw: ArrayView2<f64>) -> (Array2<f64>, Vec<ColumnScale>) {
    let (n, m) = x_raw.dim();
    let mut scales = Vec::with_capacity(m);
    for (j, col) in x_raw.axis_iter(Axis(1)).enumerate() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let mut std = var.sqrt();
        if !(std > 1e-12 * (1.0 + mean.abs())) {
            warn!("column {j} is constant; it becomes all zeros after standardization");
            std = 1.0;
        }
        scales.push(ColumnScale { mean, std });
    }
    let mut x = Array2::ones((n, m + 1));
    for i in 0..n {
        for (j, sc) in scales.iter().enumerate() {
            x[[i, j]] = (x_raw[[i, j]] - sc.mean) / sc.std;
        }
    }
    (x, scales)
}

/// Standardizes one raw covariate vector with stored constants and appends
/// the intercept.
pub fn apply_normalization(x_raw: &[f64], normalization: &[ColumnScale]) -> Result<Vec<f64>> {
    if x_raw.len() != normalization.len() {
        return Err(Error::DimensionMismatch {
            context: "covariates to normalize",
            expected: normalization.len(),
            actual: x_raw.len(),
        });
    }
    let mut out: Vec<f64> = x_raw
        .iter()
        .zip(normalization)
        .map(|(v, sc)| (v - sc.mean) / sc.std)
        .collect();
    out.push(1.0);
    Ok(out)
}

/// Row-wise [`apply_normalization`].
pub fn apply_normalization_rows(x_raw: ArrayView2<f64>, normalization: &[ColumnScale]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x_raw.nrows(), x_raw.ncols() + 1));
    for (i, row) in x_raw.rows().into_iter().enumerate() {
        let v = apply_normalization(&row.to_vec(), normalization)?;
        out.row_mut(i).assign(&Array1::from(v));
    }
    Ok(out)
}

/// Synthetic regression data with `k` linear regimes around Gaussian
/// centroids. Returns the dataset (with cluster labels) and the `k × m`
/// generating coefficients, which refer to the raw covariates.
pub fn generate_rsynth(spec: &RsynthSpec) -> Result<(Dataset, Array2<f64>)> {
    spec.validate()?;
    let RsynthSpec {
        n,
        m,
        k_clusters: k,
        s,
        noise_std,
        seed,
    } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let betas = Array2::from_shape_simple_fn((k, m), &mut normal);
    let centroids = Array2::from_shape_simple_fn((k, m), &mut normal) * s;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED));
    let mut x_raw = Array2::zeros((n, m));
    let mut y = Array2::zeros((n, 1));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.gen_range(0..k);
        for j in 0..m {
            let e: f64 = rng.sample(StandardNormal);
            x_raw[[i, j]] = centroids[[c, j]] + e;
        }
        let e: f64 = rng.sample(StandardNormal);
        y[[i, 0]] = x_raw.row(i).dot(&betas.row(c)) + noise_std * e;
        labels.push(c as i64);
    }
    let names = (1..=m).map(|j| format!("x{j}")).collect();
    let ds = Dataset::new(x_raw, y, names, vec!["y".into()], Some(labels))?;
    Ok((ds, betas))
}

/// Where the response comes from in a CSV file.
#[derive(Debug, Clone)]
pub enum TargetSpec {
    /// One or more numeric response columns (class probabilities for classification).
    Columns(Vec<String>),
    /// A single column of integer class indices `0..classes`, one-hot encoded.
    OneHot(String),
}

/// Reads a headered, comma-separated numeric table.
///
/// Every column that is neither a target nor the label column becomes a
/// covariate. Row numbers in errors count data rows from 1.
pub fn load_csv(path: &Path, target: &TargetSpec, label_column: Option<&str>, task: TaskKind) -> Result<Dataset> {
    task.validate()?;
    let data_err = |reason: String| Error::Data {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let find = |name: &str| {
        position
            .get(name)
            .copied()
            .ok_or_else(|| data_err(format!("missing column \"{name}\"")))
    };

    let target_cols: Vec<usize> = match target {
        TargetSpec::Columns(names) => {
            if names.is_empty() {
                return Err(data_err("no target column given".into()));
            }
            names.iter().map(|n| find(n)).collect::<Result<_>>()?
        }
        TargetSpec::OneHot(name) => vec![find(name)?],
    };
    let label_col = label_column.map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|c| !target_cols.contains(c) && Some(*c) != label_col)
        .collect();

    let mut features = Vec::new();
    let mut responses = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).map(str::trim).unwrap_or("");
            let reason = if raw.is_empty() {
                "missing value".to_string()
            } else {
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => return Ok(v),
                    _ => format!("not a finite number: {raw:?}"),
                }
            };
            Err(Error::Cell {
                path: path.to_path_buf(),
                row,
                column: header[c].clone(),
                reason,
            })
        };
        if record.len() != header.len() {
            // Report the first absent column.
            let c = record.len().min(header.len() - 1);
            return Err(Error::Cell {
                path: path.to_path_buf(),
                row,
                column: header[c].clone(),
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for &c in &feature_cols {
            features.push(cell(c)?);
        }
        match target {
            TargetSpec::Columns(_) => {
                for &c in &target_cols {
                    responses.push(cell(c)?);
                }
            }
            TargetSpec::OneHot(_) => {
                let classes = task.response_dim();
                let v = cell(target_cols[0])?;
                if v.fract() != 0.0 || v < 0.0 || v >= classes as f64 {
                    return Err(Error::Cell {
                        path: path.to_path_buf(),
                        row,
                        column: header[target_cols[0]].clone(),
                        reason: format!("class index {v} is not an integer in 0..{classes}"),
                    });
                }
                let mut hot = vec![0.0; classes];
                hot[v as usize] = 1.0;
                responses.extend(hot);
            }
        }
        if let Some(c) = label_col {
            let v = cell(c)?;
            if v.fract() != 0.0 {
                return Err(Error::Cell {
                    path: path.to_path_buf(),
                    row,
                    column: header[c].clone(),
                    reason: "label must be an integer".into(),
                });
            }
            labels.push(v as i64);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(data_err("no data rows".into()));
    }

    let (target_names, p) = match target {
        TargetSpec::Columns(names) => (names.clone(), names.len()),
        TargetSpec::OneHot(name) => {
            let classes = task.response_dim();
            ((0..classes).map(|c| format!("{name}_{c}")).collect(), classes)
        }
    };
    let x_raw = Array2::from_shape_vec((rows, feature_cols.len()), features).expect("rectangular");
    let y = Array2::from_shape_vec((rows, p), responses).expect("rectangular");
    if task.is_classification() {
        if p != task.response_dim() {
            return Err(data_err(format!(
                "classification with {} classes needs {} target columns, got {p}",
                task.response_dim(),
                task.response_dim()
            )));
        }
        for (i, row) in y.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if row.iter().any(|v| *v < 0.0) || (s - 1.0).abs() > 1e-6 {
                return Err(data_err(format!(
                    "row {}: class probabilities must be nonnegative and sum to 1 (sum = {s})",
                    i + 1
                )));
            }
        }
    } else if task == TaskKind::BinaryLogit {
        if let Some(v) = y.column(0).iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(data_err(format!("binary-logit target {v} is not a probability")));
        }
    }
    let names = feature_cols.iter().map(|c| header[*c].clone()).collect();
    Dataset::new(x_raw, y, names, target_names, label_col.map(|_| labels))
}

/// Uniform sample without replacement of `min(n, n0)` rows, kept in their
/// original order; normalization is recomputed on the sample.
pub fn subsample(ds: &Dataset, n0: usize, seed: u64) -> Result<Dataset> {
    if n0 == 0 {
        return Err(Error::param("n0", "must be at least 1"));
    }
    if n0 >= ds.n() {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = index::sample(&mut rng, ds.n(), n0).into_vec();
    rows.sort_unstable();
    Dataset::new(
        ds.x_raw.select(Axis(0), &rows),
        ds.y.select(Axis(0), &rows),
        ds.column_names.clone(),
        ds.target_names.clone(),
        ds.labels.as_ref().map(|l| rows.iter().map(|r| l[*r]).collect()),
    )
}

/// Writes a matrix as CSV with the given header.
pub fn write_matrix_csv(path: &Path, header: &[String], rows: ArrayView2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    /// Ordinary least squares via normal equations, for test oracles.
    fn least_squares(x: &Array2<f64>, y: &Array1<f64>) -> Vec<f64> {
        let a = nalgebra::DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]]);
        let b = nalgebra::DVector::from_iterator(y.len(), y.iter().copied());
        let ata = a.transpose() * &a;
        let atb = a.transpose() * b;
        ata.lu().solve(&atb).unwrap().iter().copied().collect()
    }

    #[test]
    fn noiseless_single_cluster_is_exactly_linear() {
        let spec = RsynthSpec {
            k_clusters: 1,
            noise_std: 0.0,
            ..RsynthSpec::new(50, 4, 7)
        };
        let (ds, betas) = generate_rsynth(&spec).unwrap();
        let coef = least_squares(&ds.x_raw, &ds.y.column(0).to_owned());
        for j in 0..4 {
            assert!((coef[j] - betas[[0, j]]).abs() < 1e-6);
        }
    }

    #[test]
    fn rsynth_is_deterministic() {
        let spec = RsynthSpec::new(100, 5, 99);
        let (a, ba) = generate_rsynth(&spec).unwrap();
        let (b, bb) = generate_rsynth(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ba, bb);
        let (c, _) = generate_rsynth(&RsynthSpec::new(100, 5, 100)).unwrap();
        assert_ne!(a.x_raw, c.x_raw);
    }

    #[test]
    fn rsynth_per_cluster_regressions_recover_coefficients() {
        let spec = RsynthSpec::new(5000, 4, 3);
        let (ds, betas) = generate_rsynth(&spec).unwrap();
        let labels = ds.labels.as_ref().unwrap();
        for c in 0..3 {
            let rows: Vec<usize> = (0..ds.n()).filter(|i| labels[*i] == c as i64).collect();
            let x = ds.x_raw.select(Axis(0), &rows);
            let y = ds.y.column(0).select(Axis(0), &rows);
            let coef = least_squares(&x, &y);
            // Standard error of each coefficient is about noise / sqrt(n_c · var(x)).
            let se = spec.noise_std / (rows.len() as f64).sqrt();
            for j in 0..4 {
                assert!((coef[j] - betas[[c, j]]).abs() < 3.0 * se * 1.5, "cluster {c} coef {j}");
            }
        }
    }

    #[test]
    fn rsynth_labels_are_uniform() {
        let (ds, _) = generate_rsynth(&RsynthSpec::new(2000, 2, 5)).unwrap();
        let labels = ds.labels.unwrap();
        // Binomial(2000, 1/3): mean 666.7, sd 21.1; 99% interval ±2.576 sd.
        for c in 0..3 {
            let count = labels.iter().filter(|l| **l == c).count() as f64;
            assert!((count - 2000.0 / 3.0).abs() < 2.576 * 21.08, "cluster {c}: {count}");
        }
    }

    #[test]
    fn normalized_columns_are_standard() {
        let (ds, _) = generate_rsynth(&RsynthSpec::new(300, 6, 1)).unwrap();
        for j in 0..6 {
            let col = ds.x.column(j);
            let mean = col.sum() / 300.0;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 300.0).sqrt();
            assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        }
        assert!(ds.x.column(6).iter().all(|v| *v == 1.0));
        assert_eq!(ds.feature_names().last().unwrap(), INTERCEPT);
    }

    #[test]
    fn normalize_examples() {
        let (x, sc) = normalize(array![[0.0], [2.0]].view());
        assert_eq!(x, array![[-1.0, 1.0], [1.0, 1.0]]);
        assert_eq!(sc, vec![ColumnScale { mean: 1.0, std: 1.0 }]);

        let (x, sc) = normalize(array![[3.0, 1.0], [3.0, -1.0]].view());
        assert_eq!(sc[0].std, 1.0);
        assert!(x.column(0).iter().all(|v| *v == 0.0));

        let (ds, _) = generate_rsynth(&RsynthSpec::new(40, 3, 2)).unwrap();
        let features = ds.x.slice(ndarray::s![.., ..3]).to_owned();
        let (again, _) = normalize(features.view());
        for (a, b) in again.slice(ndarray::s![.., ..3]).iter().zip(features.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_normalization_examples() {
        let (ds, _) = generate_rsynth(&RsynthSpec::new(60, 3, 4)).unwrap();
        let means: Vec<f64> = ds.normalization.iter().map(|s| s.mean).collect();
        assert_eq!(apply_normalization(&means, &ds.normalization).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);

        let again = apply_normalization_rows(ds.x_raw.view(), &ds.normalization).unwrap();
        for (a, b) in again.iter().zip(ds.x.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }

        let held_out = [0.3, -1.7, 2.2];
        let got = apply_normalization(&held_out, &ds.normalization).unwrap();
        for j in 0..3 {
            let sc = ds.normalization[j];
            assert_eq!(got[j], (held_out[j] - sc.mean) / sc.std);
        }
        assert!(apply_normalization(&[1.0], &ds.normalization).is_err());
    }

    #[test]
    fn load_small_csv() {
        let f = write_tmp("a,b,y\n1,2,3\n4,5.5,6\n-7,8e-1,9\n");
        let ds = load_csv(f.path(), &TargetSpec::Columns(vec!["y".into()]), None, TaskKind::Regression).unwrap();
        assert_eq!(ds.x_raw, array![[1.0, 2.0], [4.0, 5.5], [-7.0, 0.8]]);
        assert_eq!(ds.y, array![[3.0], [6.0], [9.0]]);
        assert_eq!(ds.column_names, vec!["a", "b"]);
    }

    #[test]
    fn missing_cell_names_row_and_column() {
        let f = write_tmp("x1,x2,x3,y\n1,2,3,4\n5,6,,8\n");
        let err = load_csv(f.path(), &TargetSpec::Columns(vec!["y".into()]), None, TaskKind::Regression).unwrap_err();
        match err {
            Error::Cell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "x3");
            }
            other => panic!("unexpected {other}"),
        }
        let f = write_tmp("x1,y\n1,abc\n");
        let err = load_csv(f.path(), &TargetSpec::Columns(vec!["y".into()]), None, TaskKind::Regression).unwrap_err();
        assert!(err.to_string().contains("row 1") && err.to_string().contains("\"y\""), "{err}");
    }

    #[test]
    fn missing_target_column_is_an_error() {
        let f = write_tmp("a,b\n1,2\n");
        let err = load_csv(f.path(), &TargetSpec::Columns(vec!["y".into()]), None, TaskKind::Regression).unwrap_err();
        assert!(err.to_string().contains("missing column \"y\""));
    }

    #[test]
    fn classification_targets_must_be_simplex_rows() {
        let task = TaskKind::Classification { classes: 2 };
        let targets = TargetSpec::Columns(vec!["p0".into(), "p1".into()]);
        let good = write_tmp("a,p0,p1\n1,0.25,0.75\n2,1,0\n");
        assert!(load_csv(good.path(), &targets, None, task).is_ok());
        let bad = write_tmp("a,p0,p1\n1,0.25,0.7\n");
        assert!(load_csv(bad.path(), &targets, None, task).is_err());
    }

    #[test]
    fn one_hot_targets() {
        let task = TaskKind::Classification { classes: 3 };
        let f = write_tmp("a,cls\n1,0\n2,2\n3,1\n");
        let ds = load_csv(f.path(), &TargetSpec::OneHot("cls".into()), None, task).unwrap();
        assert_eq!(ds.y, array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        let f = write_tmp("a,cls\n1,3\n");
        assert!(load_csv(f.path(), &TargetSpec::OneHot("cls".into()), None, task).is_err());
    }

    #[test]
    fn export_then_load_round_trips() {
        let (ds, _) = generate_rsynth(&RsynthSpec::new(30, 4, 8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        ds.write_csv(&path).unwrap();
        assert!(normalization_sidecar(&path).exists());
        let back = load_csv(&path, &TargetSpec::Columns(vec!["y".into()]), Some("label"), TaskKind::Regression).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn subsample_examples() {
        let (ds, _) = generate_rsynth(&RsynthSpec::new(50, 2, 1)).unwrap();
        assert_eq!(subsample(&ds, 50, 3).unwrap(), ds);
        assert_eq!(subsample(&ds, 500, 3).unwrap(), ds);
        let a = subsample(&ds, 10, 3).unwrap();
        let b = subsample(&ds, 10, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 10);
        let mean = a.x.column(0).sum() / 10.0;
        assert!(mean.abs() < 1e-9);
        assert!(subsample(&ds, 0, 3).is_err());
    }

    #[test]
    fn subsample_selects_rows_uniformly() {
        let x_raw = Array2::from_shape_fn((1000, 1), |(i, _)| i as f64);
        let ds = Dataset::new(x_raw, Array2::zeros((1000, 1)), vec!["i".into()], vec!["y".into()], None).unwrap();
        let mut counts = vec![0usize; 1000];
        for seed in 0..1000 {
            let s = subsample(&ds, 100, seed).unwrap();
            for v in s.x_raw.column(0) {
                counts[*v as usize] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / 1000.0;
            assert!((freq - 0.1).abs() <= 0.05, "{freq}");
        }
    }
}
