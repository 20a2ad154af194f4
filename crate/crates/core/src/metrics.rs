//! Evaluation metrics: cluster purity of the embedding, fidelity and coverage
//! of the local models, and the global reference model that sets the
//! coverage threshold.
//!
//! Every neighbourhood here is the `k` nearest other items in the embedding;
//! an item is never its own neighbour and distance ties go to the smaller
//! index.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::objective::{coefficient_gradient, predict_losses, sign0};
use crate::solver::lbfgs::{self, LbfgsOptions, Termination};
use crate::solver::Solution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbourhood {
    /// Each item alone (fidelity) or all items (coverage).
    Own,
    Knn(usize),
}

/// Single white-box model fitted to all items with equal weights, minimizing
/// the mean local loss plus `lambda_lasso · ‖b‖₁`. Returns the coefficients
/// and a warning when the covariates are rank deficient.
pub fn fit_global_model(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    task: TaskKind,
    lambda_lasso: f64,
) -> Result<(Array1<f64>, Option<String>)> {
    task.validate()?;
    let (n, m) = x.dim();
    if n == 0 {
        return Err(Error::param("n", "need at least one item"));
    }
    if y.nrows() != n || y.ncols() != task.response_dim() {
        return Err(Error::DimensionMismatch {
            context: "responses",
            expected: n,
            actual: y.nrows(),
        });
    }
    if !(lambda_lasso >= 0.0) {
        return Err(Error::param("lambda_lasso", "must be >= 0"));
    }
    let q = task.coef_len(m);
    let mut warning = None;
    let rank = matrix_rank(x);
    if rank < m {
        let msg = format!("covariates have rank {rank} < {m}; global model relies on the lasso penalty");
        warn!("{msg}");
        warning = Some(msg);
    }

    let weights = Array2::from_elem((1, n), 1.0 / n as f64);
    let objective = |v: &[f64], g: &mut [f64]| {
        let b = ArrayView2::from_shape((1, q), v).expect("shape");
        let pred = predict_losses(b, x, y, task, true);
        let mut gb = ArrayViewMut2::from_shape((1, q), g).expect("shape");
        coefficient_gradient(&pred, &weights, x, y, task, gb.view_mut());
        for (gi, bi) in gb.iter_mut().zip(b.iter()) {
            *gi += lambda_lasso * sign0(*bi);
        }
        pred.losses.sum() / n as f64 + lambda_lasso * b.iter().map(|v| v.abs()).sum::<f64>()
    };
    let opts = LbfgsOptions {
        max_iters: 2000,
        rel_tol: 1e-14,
        ..LbfgsOptions::default()
    };
    let out = lbfgs::minimize(objective, vec![0.0; q], &opts);
    if out.termination == Termination::NonFinite && !out.value.is_finite() {
        return Err(Error::NonFinite("global model loss".into()));
    }
    Ok((Array1::from(out.x), warning))
}

fn matrix_rank(x: ArrayView2<f64>) -> usize {
    let (n, m) = x.dim();
    let a = nalgebra::DMatrix::from_fn(n, m, |i, j| x[[i, j]]);
    let sv = a.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = smax * n.max(m) as f64 * f64::EPSILON;
    sv.iter().filter(|s| **s > tol && **s > 0.0).count()
}

/// Loss of one model on every item.
pub fn model_losses(coef: ArrayView1<f64>, x: ArrayView2<f64>, y: ArrayView2<f64>, task: TaskKind) -> Array1<f64> {
    let b = coef.insert_axis(ndarray::Axis(0));
    predict_losses(b, x, y, task, false).losses.row(0).to_owned()
}

/// Empirical `q`-quantile with linear interpolation between order statistics.
pub fn loss_threshold(losses: &[f64], q: f64) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::param("losses", "need at least one loss"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::param("quantile", "must lie in [0, 1]"));
    }
    if losses.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("losses for the threshold".into()));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// The `k` nearest other items of every item in `z`.
pub fn nearest_neighbours(z: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = z.nrows();
    if k == 0 || k >= n {
        return Err(Error::param("k", format!("need 1 <= k < n (k = {k}, n = {n})")));
    }
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        for j in (0..n).filter(|j| *j != i) {
            let d: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            cand.push((d, j));
        }
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        cand.select_nth_unstable_by(k - 1, by_distance);
        let mut near = cand[..k].to_vec();
        near.sort_by(by_distance);
        out.push(near.into_iter().map(|(_, j)| j).collect());
    }
    Ok(out)
}

/// Mean fraction of each item's `k` nearest neighbours that share its label.
pub fn cluster_purity(z: ArrayView2<f64>, labels: &[i64], k: usize) -> Result<f64> {
    if labels.len() != z.nrows() {
        return Err(Error::DimensionMismatch {
            context: "labels",
            expected: z.nrows(),
            actual: labels.len(),
        });
    }
    let nn = nearest_neighbours(z, k)?;
    let total: f64 = nn
        .iter()
        .enumerate()
        .map(|(i, near)| near.iter().filter(|j| labels[**j] == labels[i]).count() as f64 / k as f64)
        .sum();
    Ok(total / z.nrows() as f64)
}

/// Mean loss of each local model on its own item (`Own`) or on its
/// embedding neighbours (`Knn`), given the loss matrix `L[i, j]` of model `i`
/// on item `j`.
pub fn fidelity_of(losses: ArrayView2<f64>, z: ArrayView2<f64>, nb: Neighbourhood) -> Result<f64> {
    let n = losses.nrows();
    match nb {
        Neighbourhood::Own => Ok(losses.diag().sum() / n as f64),
        Neighbourhood::Knn(k) => {
            let nn = nearest_neighbours(z, k)?;
            let total: f64 = nn
                .iter()
                .enumerate()
                .map(|(i, near)| near.iter().map(|j| losses[[i, *j]]).sum::<f64>() / k as f64)
                .sum();
            Ok(total / n as f64)
        }
    }
}

/// Mean fraction of items, among all (`Own`) or the embedding neighbours
/// (`Knn`), on which each local model has loss below `l0`.
pub fn coverage_of(losses: ArrayView2<f64>, z: ArrayView2<f64>, l0: f64, nb: Neighbourhood) -> Result<f64> {
    if l0.is_nan() {
        return Err(Error::param("l0", "must not be NaN"));
    }
    let n = losses.nrows();
    match nb {
        Neighbourhood::Own => Ok(losses.iter().filter(|l| **l < l0).count() as f64 / (n * n) as f64),
        Neighbourhood::Knn(k) => {
            let nn = nearest_neighbours(z, k)?;
            let total: f64 = nn
                .iter()
                .enumerate()
                .map(|(i, near)| near.iter().filter(|j| losses[[i, **j]] < l0).count() as f64 / k as f64)
                .sum();
            Ok(total / n as f64)
        }
    }
}

pub fn fidelity(sol: &Solution, nb: Neighbourhood) -> Result<f64> {
    fidelity_of(sol.loss_matrix()?.view(), sol.z.view(), nb)
}

pub fn coverage(sol: &Solution, l0: f64, nb: Neighbourhood) -> Result<f64> {
    coverage_of(sol.loss_matrix()?.view(), sol.z.view(), l0, nb)
}

/// Loss matrix for the case where every item uses the same model.
pub fn shared_model_losses(coef: ArrayView1<f64>, x: ArrayView2<f64>, y: ArrayView2<f64>, task: TaskKind) -> Array2<f64> {
    let row = model_losses(coef, x, y, task);
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(_, j)| row[j])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fidelity_point: f64,
    pub fidelity_knn: BTreeMap<usize, f64>,
    pub coverage_full: f64,
    pub coverage_knn: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purity_knn: Option<BTreeMap<usize, f64>>,
    pub threshold_l0: f64,
    /// Mean loss of the global reference model.
    pub global_fidelity: f64,
    /// Fraction of items the global model fits below the threshold.
    pub global_coverage: f64,
}

impl MetricReport {
    /// Computes every metric for each neighbour count in `ks`. The coverage
    /// threshold is the `quantile` of the global model's losses.
    pub fn compute(sol: &Solution, ks: &[usize], labels: Option<&[i64]>, quantile: f64) -> Result<Self> {
        let (coef, _) = fit_global_model(sol.x.view(), sol.y.view(), sol.task, sol.hyperparams.lambda_lasso)?;
        let global = model_losses(coef.view(), sol.x.view(), sol.y.view(), sol.task);
        let l0 = loss_threshold(global.as_slice().expect("contiguous"), quantile)?;
        let losses = sol.loss_matrix()?;
        let z = sol.z.view();
        let mut report = Self {
            fidelity_point: fidelity_of(losses.view(), z, Neighbourhood::Own)?,
            fidelity_knn: BTreeMap::new(),
            coverage_full: coverage_of(losses.view(), z, l0, Neighbourhood::Own)?,
            coverage_knn: BTreeMap::new(),
            purity_knn: labels.map(|_| BTreeMap::new()),
            threshold_l0: l0,
            global_fidelity: global.mean().expect("nonempty"),
            global_coverage: global.iter().filter(|l| **l < l0).count() as f64 / global.len() as f64,
        };
        for &k in ks {
            report.fidelity_knn.insert(k, fidelity_of(losses.view(), z, Neighbourhood::Knn(k))?);
            report.coverage_knn.insert(k, coverage_of(losses.view(), z, l0, Neighbourhood::Knn(k))?);
            if let (Some(labels), Some(p)) = (labels, report.purity_knn.as_mut()) {
                p.insert(k, cluster_purity(z, labels, k)?);
            }
        }
        Ok(report)
    }

    /// Long-format rows `(metric, k, value)`; `k` is `None` for metrics
    /// without a neighbour count.
    pub fn rows(&self) -> Vec<(&'static str, Option<usize>, f64)> {
        let mut rows = vec![
            ("threshold_l0", None, self.threshold_l0),
            ("fidelity_point", None, self.fidelity_point),
            ("coverage_full", None, self.coverage_full),
            ("global_fidelity", None, self.global_fidelity),
            ("global_coverage", None, self.global_coverage),
        ];
        rows.extend(self.fidelity_knn.iter().map(|(k, v)| ("fidelity_knn", Some(*k), *v)));
        rows.extend(self.coverage_knn.iter().map(|(k, v)| ("coverage_knn", Some(*k), *v)));
        if let Some(p) = &self.purity_knn {
            rows.extend(p.iter().map(|(k, v)| ("purity_knn", Some(*k), *v)));
        }
        rows
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "metric,k,value")?;
        for (metric, k, value) in self.rows() {
            let k = k.map(|k| k.to_string()).unwrap_or_default();
            writeln!(w, "{metric},{k},{value}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Hyperparams;
    use crate::testutil::random_matrix;
    use ndarray::{array, concatenate, Axis};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn with_intercept(raw: &Array2<f64>) -> Array2<f64> {
        concatenate![Axis(1), raw.view(), Array2::ones((raw.nrows(), 1))]
    }

    fn least_squares(x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64> {
        let a = nalgebra::DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]]);
        let b = nalgebra::DVector::from_iterator(y.nrows(), y.column(0).iter().copied());
        (a.transpose() * &a).lu().solve(&(a.transpose() * b)).unwrap().iter().copied().collect()
    }

    #[test]
    fn global_model_recovers_noise_free_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = with_intercept(&random_matrix(&mut rng, 50, 3));
        let truth = array![0.5, -1.5, 2.0, 0.25];
        let y = x.dot(&truth).insert_axis(Axis(1));
        let (coef, warning) = fit_global_model(x.view(), y.view(), TaskKind::Regression, 1e-4).unwrap();
        assert!(warning.is_none());
        for (a, b) in coef.iter().zip(truth.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn global_model_of_constant_response_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = with_intercept(&random_matrix(&mut rng, 40, 2));
        let y = Array2::from_elem((40, 1), 3.5);
        let (coef, _) = fit_global_model(x.view(), y.view(), TaskKind::Regression, 0.0).unwrap();
        assert!(coef[0].abs() < 1e-6 && coef[1].abs() < 1e-6);
        assert!((coef[2] - 3.5).abs() < 1e-6);
    }

    #[test]
    fn global_model_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = with_intercept(&random_matrix(&mut rng, 12, 3));
        let y = random_matrix(&mut rng, 12, 1);
        let (coef, _) = fit_global_model(x.view(), y.view(), TaskKind::Regression, 0.0).unwrap();
        for (a, b) in coef.iter().zip(least_squares(&x, &y)) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rank_deficient_global_model_warns() {
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let y = array![[1.0], [2.0], [3.0]];
        let (coef, warning) = fit_global_model(x.view(), y.view(), TaskKind::Regression, 1e-4).unwrap();
        assert!(warning.is_some());
        assert!(coef.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn global_classifier_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = with_intercept(&random_matrix(&mut rng, 30, 2));
        let y = Array2::from_shape_fn((30, 2), |(i, c)| if (x[[i, 0]] > 0.0) == (c == 0) { 1.0 } else { 0.0 });
        let task = TaskKind::Classification { classes: 2 };
        let (coef, _) = fit_global_model(x.view(), y.view(), task, 1e-4).unwrap();
        let losses = model_losses(coef.view(), x.view(), y.view(), task);
        assert!(losses.mean().unwrap() < 0.2);
    }

    #[test]
    fn threshold_examples() {
        assert!((loss_threshold(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.3).unwrap() - 2.2).abs() < 1e-12);
        assert_eq!(loss_threshold(&[4.0; 7], 0.3).unwrap(), 4.0);
        assert_eq!(loss_threshold(&[3.0, -1.0, 2.0], 0.0).unwrap(), -1.0);
        assert_eq!(loss_threshold(&[3.0, -1.0, 2.0], 1.0).unwrap(), 3.0);
        assert!(loss_threshold(&[], 0.3).is_err());
    }

    #[test]
    fn purity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_matrix(&mut rng, 20, 2);
        assert_eq!(cluster_purity(z.view(), &[7; 20], 5).unwrap(), 1.0);

        let blobs = Array2::from_shape_fn((20, 2), |(i, c)| if i < 10 { 0.01 * (i + c) as f64 } else { 100.0 + 0.01 * (i + c) as f64 });
        let labels: Vec<i64> = (0..20).map(|i| (i >= 10) as i64).collect();
        assert_eq!(cluster_purity(blobs.view(), &labels, 9).unwrap(), 1.0);

        assert!(cluster_purity(z.view(), &[0; 20], 20).is_err());
        assert!(cluster_purity(z.view(), &[0; 19], 5).is_err());
    }

    #[test]
    fn random_labels_give_chance_purity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut total = 0.0;
        for _ in 0..50 {
            let z = random_matrix(&mut rng, 90, 2);
            let mut labels: Vec<i64> = (0..90).map(|i| i % 3).collect();
            rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
            total += cluster_purity(z.view(), &labels, 10).unwrap();
        }
        // Drawing k of the other 89 items: expected same-label share is 29/89.
        let mean = total / 50.0;
        assert!((mean - 1.0 / 3.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn neighbour_ties_go_to_smallest_index() {
        let z = array![[0.0], [1.0], [-1.0], [1.0]];
        let nn = nearest_neighbours(z.view(), 2).unwrap();
        assert_eq!(nn[0], vec![1, 2]);
        assert_eq!(nn[1], vec![3, 0]);
    }

    #[test]
    fn fidelity_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = with_intercept(&random_matrix(&mut rng, 5, 2));
        let y = random_matrix(&mut rng, 5, 1);
        let b = random_matrix(&mut rng, 5, 3);
        let z = random_matrix(&mut rng, 5, 2);
        let sol = Solution::from_parts(x.clone(), y.clone(), b.clone(), z.clone(), Hyperparams::default(), TaskKind::Regression).unwrap();
        let loss = |i: usize, j: usize| (b.row(i).dot(&x.row(j)) - y[[j, 0]]).powi(2);

        let point: f64 = (0..5).map(|i| loss(i, i)).sum::<f64>() / 5.0;
        assert!((fidelity(&sol, Neighbourhood::Own).unwrap() - point).abs() < 1e-12);

        let k = 2;
        let mut want = 0.0;
        for i in 0..5 {
            let mut others: Vec<(f64, usize)> = (0..5)
                .filter(|j| *j != i)
                .map(|j| (((z[[i, 0]] - z[[j, 0]]).powi(2) + (z[[i, 1]] - z[[j, 1]]).powi(2)).sqrt(), j))
                .collect();
            others.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want += others[..k].iter().map(|(_, j)| loss(i, *j)).sum::<f64>() / k as f64;
        }
        want /= 5.0;
        assert!((fidelity(&sol, Neighbourhood::Knn(k)).unwrap() - want).abs() < 1e-12);

        // With every other item as a neighbour, fidelity is the mean off-diagonal loss.
        let l = sol.loss_matrix().unwrap();
        let off = (l.sum() - l.diag().sum()) / 20.0;
        assert!((fidelity(&sol, Neighbourhood::Knn(4)).unwrap() - off).abs() < 1e-12);
        assert!(fidelity(&sol, Neighbourhood::Knn(5)).is_err());
    }

    #[test]
    fn exact_local_models_have_zero_fidelity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = with_intercept(&random_matrix(&mut rng, 8, 2));
        let b = random_matrix(&mut rng, 8, 3);
        let y = Array2::from_shape_fn((8, 1), |(i, _)| b.row(i).dot(&x.row(i)));
        let z = random_matrix(&mut rng, 8, 2);
        let sol = Solution::from_parts(x, y, b, z, Hyperparams::default(), TaskKind::Regression).unwrap();
        assert!(fidelity(&sol, Neighbourhood::Own).unwrap() < 1e-20);
    }

    #[test]
    fn global_coverage_at_own_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [37, 100, 401] {
            let x = with_intercept(&random_matrix(&mut rng, n, 3));
            let y = random_matrix(&mut rng, n, 1);
            let (coef, _) = fit_global_model(x.view(), y.view(), TaskKind::Regression, 1e-4).unwrap();
            let l = shared_model_losses(coef.view(), x.view(), y.view(), TaskKind::Regression);
            let l0 = loss_threshold(l.row(0).as_slice().unwrap(), 0.3).unwrap();
            let z = random_matrix(&mut rng, n, 2);
            let cov = coverage_of(l.view(), z.view(), l0, Neighbourhood::Own).unwrap();
            assert!((cov - 0.3).abs() <= 1.0 / n as f64, "n = {n}: {cov}");
        }
    }

    #[test]
    fn coverage_extremes() {
        let l = array![[1.0, 2.0], [0.5, 3.0]];
        let z = array![[0.0], [1.0]];
        assert_eq!(coverage_of(l.view(), z.view(), f64::INFINITY, Neighbourhood::Own).unwrap(), 1.0);
        assert_eq!(coverage_of(l.view(), z.view(), 0.0, Neighbourhood::Own).unwrap(), 0.0);
        assert_eq!(coverage_of(l.view(), z.view(), 1.0, Neighbourhood::Knn(1)).unwrap(), 0.5);
    }

    #[test]
    fn report_serializes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = with_intercept(&random_matrix(&mut rng, 12, 2));
        let y = random_matrix(&mut rng, 12, 1);
        let b = random_matrix(&mut rng, 12, 3);
        let z = random_matrix(&mut rng, 12, 2);
        let sol = Solution::from_parts(x, y, b, z, Hyperparams::default(), TaskKind::Regression).unwrap();
        let labels: Vec<i64> = (0..12).map(|_| rng.gen_range(0..3)).collect();
        let report = MetricReport::compute(&sol, &[3, 5], Some(&labels), 0.3).unwrap();
        assert_eq!(report.rows().len(), 5 + 3 * 2);
        let dir = tempfile::tempdir().unwrap();
        report.write_csv(&dir.path().join("m.csv")).unwrap();
        report.write_json(&dir.path().join("m.json")).unwrap();
        let back: MetricReport = serde_json::from_reader(File::open(dir.path().join("m.json")).unwrap()).unwrap();
        assert_eq!(back, report);
        let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert!(csv.starts_with("metric,k,value\nthreshold_l0,,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn coverage_is_monotone_in_threshold(seed in 0u64..1000, a in 0.0f64..3.0, b in 0.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = random_matrix(&mut rng, 9, 9).mapv(|v| v * v);
            let z = random_matrix(&mut rng, 9, 2);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for nb in [Neighbourhood::Own, Neighbourhood::Knn(3)] {
                let c_lo = coverage_of(l.view(), z.view(), lo, nb).unwrap();
                let c_hi = coverage_of(l.view(), z.view(), hi, nb).unwrap();
                prop_assert!(c_lo <= c_hi);
                prop_assert!((0.0..=1.0).contains(&c_lo));
            }
        }

        #[test]
        fn purity_survives_rigid_motion(seed in 0u64..1000, angle in 0.0f64..6.3, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_matrix(&mut rng, 15, 2);
            let (s, c) = angle.sin_cos();
            let moved = Array2::from_shape_fn((15, 2), |(i, j)| {
                let (a, b) = (z[[i, 0]], z[[i, 1]]);
                if j == 0 { c * a - s * b + dx } else { s * a + c * b + dy }
            });
            let labels: Vec<i64> = (0..15).map(|_| rng.gen_range(0..3)).collect();
            let nn = nearest_neighbours(z.view(), 4).unwrap();
            let nn_moved = nearest_neighbours(moved.view(), 4).unwrap();
            for (a, b) in nn.iter().zip(&nn_moved) {
                let mut a = a.clone();
                let mut b = b.clone();
                a.sort();
                b.sort();
                prop_assert_eq!(a, b);
            }
            prop_assert_eq!(cluster_purity(z.view(), &labels, 4).unwrap(), cluster_purity(moved.view(), &labels, 4).unwrap());
        }

        #[test]
        fn knn_fidelity_is_permutation_equivariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = with_intercept(&random_matrix(&mut rng, 7, 2));
            let y = random_matrix(&mut rng, 7, 1);
            let b = random_matrix(&mut rng, 7, 3);
            let z = random_matrix(&mut rng, 7, 2);
            let mut perm: Vec<usize> = (0..7).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let sol = Solution::from_parts(x.clone(), y.clone(), b.clone(), z.clone(), Hyperparams::default(), TaskKind::Regression).unwrap();
            let shuffled = Solution::from_parts(
                x.select(Axis(0), &perm), y.select(Axis(0), &perm), b.select(Axis(0), &perm), z.select(Axis(0), &perm),
                Hyperparams::default(), TaskKind::Regression,
            ).unwrap();
            let a = fidelity(&sol, Neighbourhood::Knn(3)).unwrap();
            let c = fidelity(&shuffled, Neighbourhood::Knn(3)).unwrap();
            prop_assert!((a - c).abs() < 1e-12 * a.abs().max(1.0));
        }
    }
}
