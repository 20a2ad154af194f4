//! The joint loss over local models `B` and embedding `Z`.
//!
//! Every item `i` has a soft neighbourhood `W_i` (softmax of negative
//! embedding distances, self included) and the local model `B_i` is scored by
//! its `W_i`-weighted loss over all items. The total adds a quadratic penalty
//! on `Z` and a lasso penalty on `B`.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskKind;

pub const DEFAULT_LAMBDA_LASSO: f64 = 1e-4;

/// Added under the square root when differentiating distances so coincident
/// embedding rows do not produce infinite derivatives.
pub(crate) const DISTANCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda_z: f64,
    pub lambda_lasso: f64,
    /// Embedding dimension.
    pub d: usize,
}

impl Hyperparams {
    pub fn new(lambda_z: f64, d: usize) -> Self {
        Self {
            lambda_z,
            lambda_lasso: DEFAULT_LAMBDA_LASSO,
            d,
        }
    }

    pub fn with_lasso(mut self, lambda_lasso: f64) -> Self {
        self.lambda_lasso = lambda_lasso;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_z > 0.0) || !self.lambda_z.is_finite() {
            return Err(Error::param("lambda_z", format!("must be finite and > 0, got {}", self.lambda_z)));
        }
        if !(self.lambda_lasso >= 0.0) || !self.lambda_lasso.is_finite() {
            return Err(Error::param(
                "lambda_lasso",
                format!("must be finite and >= 0, got {}", self.lambda_lasso),
            ));
        }
        if self.d == 0 {
            return Err(Error::param("d", "embedding dimension must be at least 1"));
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::new(0.1, 2)
    }
}

/// Intermediate matrices of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossState {
    pub distances: Array2<f64>,
    pub weights: Array2<f64>,
    pub losses: Array2<f64>,
    pub total: f64,
}

/// Euclidean distances between all rows of `z`.
pub fn pairwise_distances(z: ArrayView2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(z, i, j).sqrt();
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

#[inline]
fn squared_distance(z: ArrayView2<f64>, i: usize, j: usize) -> f64 {
    z.row(i)
        .iter()
        .zip(z.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Row-wise softmax of `-distances`.
pub fn softmax_weights(distances: &Array2<f64>) -> Array2<f64> {
    let mut w = distances.mapv(|d| -d);
    for mut row in w.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    w
}

/// `L[i, j]`: loss of local model `i` on item `j`.
pub fn local_loss_matrix<'a>(
    b: ArrayView2<f64>,
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    task: TaskKind,
) -> Result<Array2<f64>> {
    let hp = Hyperparams::default();
    let problem = Problem::new(x, y, task, hp)?;
    problem.check_coefficients(b)?;
    Ok(problem.predict_losses(b, false).losses)
}

pub fn loss_state<'a>(
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    b: ArrayView2<f64>,
    z: ArrayView2<f64>,
    hp: Hyperparams,
    task: TaskKind,
) -> Result<LossState> {
    let problem = Problem::new(x, y, task, hp)?;
    problem.check_params(b, z)?;
    problem.state(b, z)
}

pub fn total_loss<'a>(
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    b: ArrayView2<f64>,
    z: ArrayView2<f64>,
    hp: Hyperparams,
    task: TaskKind,
) -> Result<f64> {
    Ok(loss_state(x, y, b, z, hp, task)?.total)
}

/// Analytic gradients of the total loss with respect to `B` and `Z`.
///
/// The lasso term uses the subgradient `sign(B)` with `sign(0) = 0`.
pub fn loss_gradients<'a>(
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    b: ArrayView2<f64>,
    z: ArrayView2<f64>,
    hp: Hyperparams,
    task: TaskKind,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let problem = Problem::new(x, y, task, hp)?;
    problem.check_params(b, z)?;
    let mut gb = Array2::zeros(b.raw_dim());
    let mut gz = Array2::zeros(z.raw_dim());
    let value = problem.value_and_gradient(b, z, gb.view_mut(), gz.view_mut());
    if !value.is_finite() {
        return Err(Error::NonFinite("total loss".into()));
    }
    Ok((gb, gz))
}

pub(crate) fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) struct Predictions {
    pub losses: Array2<f64>,
    /// Class probabilities per class (classification only), each `n_models × n_items`.
    pub probs: Vec<Array2<f64>>,
    /// Residuals `prediction - y` (regression only).
    pub residuals: Option<Array2<f64>>,
}

/// A dataset bound to a task and hyperparameters; evaluates the loss and its
/// gradient for given `(B, Z)`.
#[derive(Clone, Copy)]
pub(crate) struct Problem<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
    pub task: TaskKind,
    pub hp: Hyperparams,
}

impl<'a> Problem<'a> {
    pub fn new(x: ArrayView2<'a, f64>, y: ArrayView2<'a, f64>, task: TaskKind, hp: Hyperparams) -> Result<Self> {
        task.validate()?;
        hp.validate()?;
        if y.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "response rows",
                expected: x.nrows(),
                actual: y.nrows(),
            });
        }
        if y.ncols() != task.response_dim() {
            return Err(Error::DimensionMismatch {
                context: "response columns",
                expected: task.response_dim(),
                actual: y.ncols(),
            });
        }
        Ok(Self { x, y, task, hp })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.task.coef_len(self.m())
    }

    pub fn check_coefficients(&self, b: ArrayView2<f64>) -> Result<()> {
        if b.ncols() != self.q() {
            return Err(Error::DimensionMismatch {
                context: "coefficient columns",
                expected: self.q(),
                actual: b.ncols(),
            });
        }
        Ok(())
    }

    pub fn check_params(&self, b: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<()> {
        self.check_coefficients(b)?;
        if b.nrows() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "coefficient rows",
                expected: self.n(),
                actual: b.nrows(),
            });
        }
        if z.nrows() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "embedding rows",
                expected: self.n(),
                actual: z.nrows(),
            });
        }
        if z.ncols() != self.hp.d {
            return Err(Error::DimensionMismatch {
                context: "embedding columns",
                expected: self.hp.d,
                actual: z.ncols(),
            });
        }
        Ok(())
    }

    /// Losses of every model row in `b` on every item of the problem.
    pub fn predict_losses(&self, b: ArrayView2<f64>, keep_intermediate: bool) -> Predictions {
        predict_losses(b, self.x, self.y, self.task, keep_intermediate)
    }

    pub fn state(&self, b: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<LossState> {
        let distances = pairwise_distances(z);
        let weights = softmax_weights(&distances);
        let losses = self.predict_losses(b, false).losses;
        let data = (&weights * &losses).sum_axis(Axis(1)).sum();
        let ridge = self.hp.lambda_z * z.iter().map(|v| v * v).sum::<f64>();
        let lasso = self.hp.lambda_lasso * b.iter().map(|v| v.abs()).sum::<f64>();
        for (term, value) in [("weighted local loss", data), ("embedding penalty", ridge), ("lasso penalty", lasso)] {
            if !value.is_finite() {
                return Err(Error::NonFinite(term.into()));
            }
        }
        Ok(LossState {
            distances,
            weights,
            losses,
            total: data + ridge + lasso,
        })
    }

    /// Total loss; writes gradients into `gb` and `gz` (overwriting them).
    pub fn value_and_gradient(
        &self,
        b: ArrayView2<f64>,
        z: ArrayView2<f64>,
        mut gb: ArrayViewMut2<f64>,
        mut gz: ArrayViewMut2<f64>,
    ) -> f64 {
        let n = self.n();
        let pred = self.predict_losses(b, true);
        let losses = &pred.losses;

        let (weights, sq) = weights_and_squared_distances(z);
        let row_loss: Array1<f64> = (&weights * losses).sum_axis(Axis(1));
        let data = row_loss.sum();

        // Coefficients: dL/dB_i = Σ_j W_ij ∂l(g_i(x_j), y_j)/∂B_i.
        coefficient_gradient(&pred, &weights, self.x, self.y, self.task, gb.view_mut());

        // Embedding: ∂/∂D_ik of row i's loss is -W_ik (L_ik - E_i).
        let mut dd = Array2::zeros((n, n));
        Zip::indexed(&mut dd)
            .and(&weights)
            .and(losses)
            .for_each(|(i, _), g, &w, &l| *g = -w * (l - row_loss[i]));
        gz.fill(0.0);
        embedding_gradient_pairs(&dd, &sq, z, gz.view_mut());

        let lz = self.hp.lambda_z;
        let ll = self.hp.lambda_lasso;
        Zip::from(&mut gz).and(z).for_each(|g, &v| *g += 2.0 * lz * v);
        Zip::from(&mut gb).and(b).for_each(|g, &v| *g += ll * sign0(v));

        let ridge = lz * z.iter().map(|v| v * v).sum::<f64>();
        let lasso = ll * b.iter().map(|v| v.abs()).sum::<f64>();
        data + ridge + lasso
    }
}

/// Softmax weights plus squared distances (the latter for gradients).
pub(crate) fn weights_and_squared_distances(z: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = z.nrows();
    let mut sq = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = squared_distance(z, i, j);
            sq[[i, j]] = v;
            sq[[j, i]] = v;
        }
    }
    let distances = sq.mapv(f64::sqrt);
    (softmax_weights(&distances), sq)
}

/// Adds `Σ_k (G_ik + G_ki) (Z_i - Z_k) / D_ik` to every row of `gz`, where
/// `G[i, k]` is the derivative of the loss with respect to the distance
/// `D_ik` as it appears in row `i`.
fn embedding_gradient_pairs(g: &Array2<f64>, sq: &Array2<f64>, z: ArrayView2<f64>, mut gz: ArrayViewMut2<f64>) {
    let n = z.nrows();
    let d = z.ncols();
    for i in 0..n {
        for k in (i + 1)..n {
            let coef = (g[[i, k]] + g[[k, i]]) / (sq[[i, k]] + DISTANCE_EPS).sqrt();
            for c in 0..d {
                let diff = coef * (z[[i, c]] - z[[k, c]]);
                gz[[i, c]] += diff;
                gz[[k, c]] -= diff;
            }
        }
    }
}

pub(crate) fn predict_losses(
    b: ArrayView2<f64>,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    task: TaskKind,
    keep_intermediate: bool,
) -> Predictions {
    let m = x.ncols();
    match task {
        TaskKind::Regression | TaskKind::BinaryLogit => {
            let mut r = b.dot(&x.t());
            let yv = y.column(0);
            for mut row in r.rows_mut() {
                row -= &yv;
            }
            let losses = r.mapv(|v| v * v);
            Predictions {
                losses,
                probs: Vec::new(),
                residuals: keep_intermediate.then_some(r),
            }
        }
        TaskKind::Classification { classes } => {
            let mut logits: Vec<Array2<f64>> = (0..classes - 1)
                .map(|c| b.slice(s![.., c * m..(c + 1) * m]).dot(&x.t()))
                .collect();
            let shape = (b.nrows(), x.nrows());
            let mut reference = Array2::zeros(shape);
            let mut losses = Array2::zeros(shape);
            let mut buf = vec![0.0; classes];
            for i in 0..shape.0 {
                for j in 0..shape.1 {
                    for c in 0..classes - 1 {
                        buf[c] = logits[c][[i, j]];
                    }
                    buf[classes - 1] = 0.0;
                    crate::model::softmax_in_place(&mut buf);
                    let mut bc = 0.0;
                    for c in 0..classes {
                        bc += (buf[c] * y[[j, c]]).sqrt();
                    }
                    losses[[i, j]] = (1.0 - bc).max(0.0);
                    for c in 0..classes - 1 {
                        logits[c][[i, j]] = buf[c];
                    }
                    reference[[i, j]] = buf[classes - 1];
                }
            }
            let probs = if keep_intermediate {
                logits.push(reference);
                logits
            } else {
                Vec::new()
            };
            Predictions {
                losses,
                probs,
                residuals: None,
            }
        }
    }
}

/// Writes `Σ_j W_ij ∂L_ij/∂B_i` into `gb` (overwriting).
pub(crate) fn coefficient_gradient(
    pred: &Predictions,
    weights: &Array2<f64>,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    task: TaskKind,
    mut gb: ArrayViewMut2<f64>,
) {
    let m = x.ncols();
    match task {
        TaskKind::Regression | TaskKind::BinaryLogit => {
            let r = pred.residuals.as_ref().expect("residuals kept");
            let g = weights * r * 2.0;
            gb.assign(&g.dot(&x));
        }
        TaskKind::Classification { classes } => {
            // ∂l/∂logit_c = (p_c · Σ_k √(p_k y_k) - √(p_c y_c)) / 2
            let bc = pred.losses.mapv(|l| 1.0 - l);
            for c in 0..classes - 1 {
                let p = &pred.probs[c];
                let mut g = Array2::zeros(p.raw_dim());
                Zip::indexed(&mut g)
                    .and(p)
                    .and(&bc)
                    .and(weights)
                    .for_each(|(_, j), g, &pc, &s, &w| {
                        *g = w * 0.5 * (pc * s - (pc * y[[j, c]]).sqrt());
                    });
                gb.slice_mut(s![.., c * m..(c + 1) * m]).assign(&g.dot(&x));
            }
        }
    }
}
