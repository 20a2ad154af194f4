//! Loss of a fitted solution enlarged with new items, as a function of the new
//! items' local models and embedding positions only.
//!
//! Old rows keep their models and positions, but their soft neighbourhoods
//! now include the new items, so their weighted losses still depend on the
//! new positions. Old-to-old sums are computed once up front.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};

use super::{argmin_columns, Solution};
use crate::error::Result;
use crate::objective::{coefficient_gradient, pairwise_distances, predict_losses, sign0, softmax_weights, DISTANCE_EPS};

pub(super) struct Extension<'a> {
    sol: &'a Solution,
    x_all: Array2<f64>,
    y_all: Array2<f64>,
    /// `Σ_j exp(-D_ij)` over old items, per old row.
    old_mass: Array1<f64>,
    /// `Σ_j exp(-D_ij) L_ij` over old items, per old row.
    old_weighted: Array1<f64>,
    /// Old models on new items, `n × t`.
    old_on_new: Array2<f64>,
    old_weights: Array2<f64>,
}

impl<'a> Extension<'a> {
    pub fn new(sol: &'a Solution, x_new: ArrayView2<f64>, y_new: ArrayView2<f64>) -> Result<Self> {
        let problem = sol.problem()?;
        let x_all = concatenate![Axis(0), sol.x.view(), x_new];
        let y_all = concatenate![Axis(0), sol.y.view(), y_new];
        let distances = pairwise_distances(sol.z.view());
        let kernel = distances.mapv(|d| (-d).exp());
        let old_losses = problem.predict_losses(sol.b.view(), false).losses;
        let old_mass = kernel.sum_axis(Axis(1));
        let old_weighted = (&kernel * &old_losses).sum_axis(Axis(1));
        let old_on_new = predict_losses(sol.b.view(), x_new, y_new, sol.task, false).losses;
        Ok(Self {
            sol,
            x_all,
            y_all,
            old_mass,
            old_weighted,
            old_on_new,
            old_weights: softmax_weights(&distances),
        })
    }

    fn n(&self) -> usize {
        self.sol.n()
    }

    /// Starting rows for the new items, chosen by the escape rule against the
    /// old neighbourhoods.
    pub fn escape_targets(&self) -> Vec<usize> {
        argmin_columns(&self.old_weights.dot(&self.old_on_new))
    }

    /// The old row whose model and position, copied to the first new item,
    /// give the lowest enlarged loss. Ties go to the smallest index.
    pub fn best_copy(&self) -> usize {
        let (b, z) = (self.sol.b.view(), self.sol.z.view());
        let mut best = (0, f64::INFINITY);
        for k in 0..self.n() {
            let value = self.evaluate(b.slice(s![k..k + 1, ..]), z.slice(s![k..k + 1, ..]), None).0;
            if value < best.1 {
                best = (k, value);
            }
        }
        best.0
    }

    /// Weighted loss of every old row minus its value before the addition.
    /// Adding this constant back gives the full enlarged loss.
    #[cfg(test)]
    pub fn baseline(&self) -> f64 {
        let hp = self.sol.hyperparams;
        (&self.old_weighted / &self.old_mass).sum()
            + hp.lambda_z * self.sol.z.iter().map(|v| v * v).sum::<f64>()
            + hp.lambda_lasso * self.sol.b.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn value_and_gradient(
        &self,
        b_new: ArrayView2<f64>,
        z_new: ArrayView2<f64>,
        gb: ArrayViewMut2<f64>,
        gz: ArrayViewMut2<f64>,
    ) -> f64 {
        self.evaluate(b_new, z_new, Some((gb, gz))).0
    }

    pub fn point_losses(&self, b_new: ArrayView2<f64>, z_new: ArrayView2<f64>) -> Vec<f64> {
        let hp = self.sol.hyperparams;
        let (_, rows) = self.evaluate(b_new, z_new, None);
        rows.iter()
            .enumerate()
            .map(|(i, e)| {
                e + hp.lambda_z * z_new.row(i).iter().map(|v| v * v).sum::<f64>()
                    + hp.lambda_lasso * b_new.row(i).iter().map(|v| v.abs()).sum::<f64>()
            })
            .collect()
    }

    /// Returns the loss (without the baseline) and each new row's weighted loss.
    fn evaluate(
        &self,
        b_new: ArrayView2<f64>,
        z_new: ArrayView2<f64>,
        grads: Option<(ArrayViewMut2<f64>, ArrayViewMut2<f64>)>,
    ) -> (f64, Array1<f64>) {
        let n = self.n();
        let t = z_new.nrows();
        let d = z_new.ncols();
        let z_old = self.sol.z.view();
        let hp = self.sol.hyperparams;

        // Squared distances from every new row to every item (old, then new).
        let mut sq = Array2::zeros((t, n + t));
        for i in 0..t {
            for k in 0..n {
                sq[[i, k]] = (0..d).map(|c| (z_new[[i, c]] - z_old[[k, c]]).powi(2)).sum::<f64>();
            }
            for k in 0..t {
                sq[[i, n + k]] = (0..d).map(|c| (z_new[[i, c]] - z_new[[k, c]]).powi(2)).sum::<f64>();
            }
        }

        // Old rows: the enlarged softmax only adds the new columns.
        let mut value = 0.0;
        let mut old_grad = Array2::zeros((n, t));
        for k in 0..n {
            let mut mass = self.old_mass[k];
            let mut weighted = self.old_weighted[k];
            for i in 0..t {
                let a = (-sq[[i, k]].sqrt()).exp();
                mass += a;
                weighted += a * self.old_on_new[[k, i]];
            }
            let e = weighted / mass;
            value += e - self.old_weighted[k] / self.old_mass[k];
            for i in 0..t {
                let w = (-sq[[i, k]].sqrt()).exp() / mass;
                old_grad[[k, i]] = -w * (self.old_on_new[[k, i]] - e);
            }
        }

        // New rows see every item.
        let weights = softmax_weights(&sq.mapv(f64::sqrt));
        let pred = predict_losses(b_new, self.x_all.view(), self.y_all.view(), self.sol.task, grads.is_some());
        let rows = (&weights * &pred.losses).sum_axis(Axis(1));
        value += rows.sum();
        value += hp.lambda_z * z_new.iter().map(|v| v * v).sum::<f64>();
        value += hp.lambda_lasso * b_new.iter().map(|v| v.abs()).sum::<f64>();

        if let Some((mut gb, mut gz)) = grads {
            coefficient_gradient(&pred, &weights, self.x_all.view(), self.y_all.view(), self.sol.task, gb.view_mut());
            Zip::from(&mut gb).and(b_new).for_each(|g, &v| *g += hp.lambda_lasso * sign0(v));

            let mut new_grad = Array2::zeros((t, n + t));
            Zip::indexed(&mut new_grad)
                .and(&weights)
                .and(&pred.losses)
                .for_each(|(i, _), g, &w, &l| *g = -w * (l - rows[i]));

            gz.fill(0.0);
            for i in 0..t {
                for k in 0..n {
                    let coef = (new_grad[[i, k]] + old_grad[[k, i]]) / (sq[[i, k]] + DISTANCE_EPS).sqrt();
                    for c in 0..d {
                        gz[[i, c]] += coef * (z_new[[i, c]] - z_old[[k, c]]);
                    }
                }
                for k in 0..t {
                    if k == i {
                        continue;
                    }
                    let coef = (new_grad[[i, n + k]] + new_grad[[k, n + i]]) / (sq[[i, n + k]] + DISTANCE_EPS).sqrt();
                    for c in 0..d {
                        gz[[i, c]] += coef * (z_new[[i, c]] - z_new[[k, c]]);
                    }
                }
                for c in 0..d {
                    gz[[i, c]] += 2.0 * hp.lambda_z * z_new[[i, c]];
                }
            }
        }
        (value, rows)
    }
}
