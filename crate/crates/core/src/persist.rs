//! Solution files: one JSON document holding the data, the fitted matrices
//! (as nested row-major arrays) and everything needed to reproduce or extend
//! the fit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnScale, INTERCEPT};
use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::objective::Hyperparams;
use crate::solver::Solution;

pub const FORMAT_VERSION: u32 = 1;

/// A solution with the column metadata of the data it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedSolution {
    pub solution: Solution,
    /// Names of the columns of `X`, the intercept included.
    pub column_names: Vec<String>,
    pub target_names: Vec<String>,
    /// Standardization of the raw covariates, when known.
    pub normalization: Option<Vec<ColumnScale>>,
}

#[derive(Serialize, Deserialize)]
struct SolutionDocument {
    format_version: u32,
    task: TaskKind,
    n: usize,
    m: usize,
    d: usize,
    p: usize,
    lambda_z: f64,
    lambda_lasso: f64,
    column_names: Vec<String>,
    target_names: Vec<String>,
    normalization: Option<Vec<ColumnScale>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Z")]
    z: Vec<Vec<f64>>,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    y: Vec<Vec<f64>>,
    final_loss: f64,
    seed: u64,
    outer_iters_used: usize,
    loss_history: Vec<f64>,
    warning: Option<String>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, rows: Vec<Vec<f64>>, ncols: usize) -> Result<Array2<f64>> {
    let nrows = rows.len();
    let mut flat = Vec::with_capacity(nrows * ncols);
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Schema(format!("{name} row {i} has {} entries, expected {ncols}", row.len())));
        }
        flat.extend(row);
    }
    Ok(Array2::from_shape_vec((nrows, ncols), flat).expect("checked"))
}

impl SavedSolution {
    /// Generic column names `x1, …, intercept` and `y` / `p0, p1, …`.
    pub fn with_default_names(solution: Solution) -> Self {
        let m = solution.x.ncols();
        let mut column_names: Vec<String> = (1..m).map(|j| format!("x{j}")).collect();
        column_names.push(INTERCEPT.into());
        let target_names = if solution.y.ncols() == 1 {
            vec!["y".into()]
        } else {
            (0..solution.y.ncols()).map(|c| format!("p{c}")).collect()
        };
        Self {
            solution,
            column_names,
            target_names,
            normalization: None,
        }
    }

    /// Names of the coefficient columns of `B`: one per column of `X`, and
    /// for classification one block per non-reference class.
    pub fn coefficient_names(&self) -> Vec<String> {
        match self.solution.task {
            TaskKind::Classification { classes } => (0..classes - 1)
                .flat_map(|c| {
                    let class = self.target_names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
                    self.column_names.iter().map(move |name| format!("{class}:{name}"))
                })
                .collect(),
            _ => self.column_names.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let s = &self.solution;
        let doc = SolutionDocument {
            format_version: FORMAT_VERSION,
            task: s.task,
            n: s.n(),
            m: s.x.ncols(),
            d: s.z.ncols(),
            p: s.y.ncols(),
            lambda_z: s.hyperparams.lambda_z,
            lambda_lasso: s.hyperparams.lambda_lasso,
            column_names: self.column_names.clone(),
            target_names: self.target_names.clone(),
            normalization: self.normalization.clone(),
            b: rows(&s.b),
            z: rows(&s.z),
            x: rows(&s.x),
            y: rows(&s.y),
            final_loss: s.final_loss,
            seed: s.seed,
            outer_iters_used: s.outer_iters_used,
            loss_history: s.loss_history.clone(),
            warning: s.warning.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses and validates a solution document; the stored loss must match
    /// the loss recomputed from the stored matrices.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SolutionDocument = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported format_version {}", doc.format_version)));
        }
        let hyperparams = Hyperparams {
            lambda_z: doc.lambda_z,
            lambda_lasso: doc.lambda_lasso,
            d: doc.d,
        };
        let x = matrix("X", doc.x, doc.m)?;
        let y = matrix("Y", doc.y, doc.p)?;
        let b = matrix("B", doc.b, doc.task.coef_len(doc.m))?;
        let z = matrix("Z", doc.z, doc.d)?;
        if [x.nrows(), y.nrows(), b.nrows(), z.nrows()].iter().any(|r| *r != doc.n) {
            return Err(Error::Schema(format!("matrices do not all have n = {} rows", doc.n)));
        }
        if doc.column_names.len() != doc.m || doc.target_names.len() != doc.p {
            return Err(Error::Schema("column or target names do not match the matrix widths".into()));
        }
        if let Some(norm) = &doc.normalization {
            if norm.len() + 1 != doc.m {
                return Err(Error::Schema("normalization must cover every column but the intercept".into()));
            }
        }
        let mut solution = Solution::from_parts(x, y, b, z, hyperparams, doc.task)?;
        let recomputed = solution.final_loss;
        if (recomputed - doc.final_loss).abs() > 1e-9 * doc.final_loss.abs().max(1.0) {
            return Err(Error::Schema(format!(
                "stored final_loss {} does not match the recomputed loss {recomputed}",
                doc.final_loss
            )));
        }
        solution.final_loss = doc.final_loss;
        solution.seed = doc.seed;
        solution.outer_iters_used = doc.outer_iters_used;
        solution.loss_history = doc.loss_history;
        solution.warning = doc.warning;
        Ok(Self {
            solution,
            column_names: doc.column_names,
            target_names: doc.target_names,
            normalization: doc.normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut text)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Schema(reason) => Error::Data {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}
