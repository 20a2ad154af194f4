//! White-box local model families and their pointwise losses.
//!
//! Regression uses a linear model with quadratic loss. Classification uses
//! multinomial logistic regression (the last class is the reference class
//! with an implicit zero logit) scored with the squared Hellinger distance.
//! Binary classification can alternatively be mapped to the logit scale and
//! handled as regression.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[LOGIT_EPS, 1 - LOGIT_EPS]` before the logit.
pub const LOGIT_EPS: f64 = 1e-6;

/// Which local model family and loss to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification { classes: usize },
    BinaryLogit,
}

impl TaskKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskKind::Classification { classes } if classes < 2 => Err(Error::param(
                "classes",
                format!("classification needs at least 2 classes, got {classes}"),
            )),
            _ => Ok(()),
        }
    }

    /// Number of response columns stored for this task.
    pub fn response_dim(&self) -> usize {
        match *self {
            TaskKind::Classification { classes } => classes,
            TaskKind::Regression | TaskKind::BinaryLogit => 1,
        }
    }

    /// Length of a coefficient vector for `m` covariates (intercept included).
    pub fn coef_len(&self, m: usize) -> usize {
        match *self {
            TaskKind::Classification { classes } => (classes - 1) * m,
            TaskKind::Regression | TaskKind::BinaryLogit => m,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, TaskKind::Classification { .. })
    }

    /// Converts raw responses into the representation the loss works on.
    ///
    /// For [`TaskKind::BinaryLogit`] the input holds the probability of the
    /// first class (one column, or the first of two columns) and the output is
    /// its clamped logit. Classification rows are validated as simplex rows.
    pub fn prepare_responses(&self, raw: &Array2<f64>) -> Result<Array2<f64>> {
        match *self {
            TaskKind::Regression => {
                if raw.ncols() != 1 {
                    return Err(Error::DimensionMismatch {
                        context: "regression response columns",
                        expected: 1,
                        actual: raw.ncols(),
                    });
                }
                check_finite(raw.iter().copied(), "responses")?;
                Ok(raw.clone())
            }
            TaskKind::BinaryLogit => {
                if raw.ncols() != 1 && raw.ncols() != 2 {
                    return Err(Error::DimensionMismatch {
                        context: "binary-logit response columns",
                        expected: 1,
                        actual: raw.ncols(),
                    });
                }
                let mut out = Array2::zeros((raw.nrows(), 1));
                for (i, p) in raw.column(0).iter().enumerate() {
                    out[[i, 0]] = logit_transform(*p)?;
                }
                Ok(out)
            }
            TaskKind::Classification { classes } => {
                if raw.ncols() != classes {
                    return Err(Error::DimensionMismatch {
                        context: "classification response columns",
                        expected: classes,
                        actual: raw.ncols(),
                    });
                }
                for row in raw.rows() {
                    check_simplex(row, 1e-6)?;
                }
                Ok(raw.clone())
            }
        }
    }

    /// Loss of the model `b` on the item `(x, y)`, without input validation.
    pub fn pair_loss(&self, x: ArrayView1<f64>, b: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        match *self {
            TaskKind::Regression | TaskKind::BinaryLogit => {
                let r = x.dot(&b) - y[0];
                r * r
            }
            TaskKind::Classification { classes } => {
                let m = x.len();
                let mut logits = vec![0.0; classes];
                for (c, l) in logits.iter_mut().take(classes - 1).enumerate() {
                    *l = x.dot(&b.slice(ndarray::s![c * m..(c + 1) * m]));
                }
                softmax_in_place(&mut logits);
                let bc: f64 = logits.iter().zip(y.iter()).map(|(a, b)| (a * b).sqrt()).sum();
                (1.0 - bc).max(0.0)
            }
        }
    }
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_simplex(v: ArrayView1<f64>, tol: f64) -> Result<()> {
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidSimplex(format!("component {x} is negative or non-finite")));
    }
    let s: f64 = v.sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::InvalidSimplex(format!("components sum to {s}, not 1")));
    }
    Ok(())
}

/// Linear white-box prediction `xᵀb`.
pub fn linear_predict(x: &[f64], b: &[f64]) -> Result<f64> {
    if x.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "linear_predict coefficients",
            expected: x.len(),
            actual: b.len(),
        });
    }
    Ok(x.iter().zip(b).map(|(a, b)| a * b).sum())
}

pub fn quadratic_loss(predicted: f64, observed: f64) -> Result<f64> {
    check_finite([predicted, observed], "quadratic_loss input")?;
    let r = predicted - observed;
    Ok(r * r)
}

/// Numerically stable softmax. The largest logit is subtracted first.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Multinomial logistic regression class probabilities.
///
/// `b` holds `classes - 1` consecutive blocks of `x.len()` coefficients; the
/// last class is the reference class with logit 0.
pub fn multinomial_predict(x: &[f64], b: &[f64], classes: usize) -> Result<Vec<f64>> {
    if classes < 2 {
        return Err(Error::param("classes", "need at least 2 classes"));
    }
    let m = x.len();
    if b.len() != (classes - 1) * m {
        return Err(Error::DimensionMismatch {
            context: "multinomial_predict coefficients",
            expected: (classes - 1) * m,
            actual: b.len(),
        });
    }
    check_finite(x.iter().chain(b).copied(), "multinomial_predict input")?;
    let mut out: Vec<f64> = b
        .chunks_exact(m)
        .map(|block| block.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect();
    out.push(0.0);
    softmax_in_place(&mut out);
    Ok(out)
}

/// Squared Hellinger distance `1 - Σ √(aᵢ bᵢ)` between two probability vectors.
pub fn hellinger_sq(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "hellinger_sq",
            expected: a.len(),
            actual: b.len(),
        });
    }
    check_simplex(ArrayView1::from(a), 1e-9)?;
    check_simplex(ArrayView1::from(b), 1e-9)?;
    let bc: f64 = a.iter().zip(b).map(|(x, y)| (x * y).sqrt()).sum();
    // Rounding can push the coefficient a hair above 1.
    Ok((1.0 - bc).clamp(0.0, 1.0))
}

/// `log(p / (1 - p))` after clamping `p` into `[LOGIT_EPS, 1 - LOGIT_EPS]`.
pub fn logit_transform(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param("probability", format!("{p} is outside [0, 1]")));
    }
    let p = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    Ok((p / (1.0 - p)).ln())
}

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}
