//! Fitting: PCA/random initialization, joint L-BFGS over `(B, Z)`, the escape
//! heuristic, and out-of-sample addition of new items.

mod extend;
pub mod lbfgs;

use log::warn;
use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::objective::{pairwise_distances, softmax_weights, Hyperparams, Problem};
use extend::Extension;
use lbfgs::{LbfgsOptions, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    pub lbfgs_history: usize,
    pub lbfgs_max_iters: usize,
    /// Outer-loop stop: relative improvement between escape rounds.
    pub rel_tol: f64,
    /// Inner stop: relative improvement of a single L-BFGS step.
    pub lbfgs_rel_tol: f64,
    pub seed: u64,
    /// Run the escape heuristic between optimizations.
    pub escape: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 100,
            lbfgs_history: 10,
            lbfgs_max_iters: 500,
            rel_tol: 1e-6,
            lbfgs_rel_tol: 1e-9,
            seed: 42,
            escape: true,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_outer_iters", self.max_outer_iters),
            ("lbfgs_history", self.lbfgs_history),
            ("lbfgs_max_iters", self.lbfgs_max_iters),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::param("rel_tol", "must be > 0"));
        }
        if !(self.lbfgs_rel_tol > 0.0) {
            return Err(Error::param("lbfgs_rel_tol", "must be > 0"));
        }
        Ok(())
    }

    fn lbfgs(&self) -> LbfgsOptions {
        LbfgsOptions {
            history: self.lbfgs_history,
            max_iters: self.lbfgs_max_iters,
            rel_tol: self.lbfgs_rel_tol,
            ..LbfgsOptions::default()
        }
    }
}

/// A fitted model: data, local models, embedding and how they were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub b: Array2<f64>,
    pub z: Array2<f64>,
    pub hyperparams: Hyperparams,
    pub task: TaskKind,
    pub final_loss: f64,
    pub outer_iters_used: usize,
    /// Loss after each accepted optimization round (nonincreasing).
    pub loss_history: Vec<f64>,
    pub seed: u64,
    /// Set when the optimizer hit a numerical problem and returned its best state.
    pub warning: Option<String>,
}

impl Solution {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Rebuilds a solution from stored matrices, recomputing the loss.
    pub fn from_parts(
        x: Array2<f64>,
        y: Array2<f64>,
        b: Array2<f64>,
        z: Array2<f64>,
        hyperparams: Hyperparams,
        task: TaskKind,
    ) -> Result<Self> {
        let problem = Problem::new(x.view(), y.view(), task, hyperparams)?;
        problem.check_params(b.view(), z.view())?;
        let final_loss = problem.state(b.view(), z.view())?.total;
        Ok(Self {
            x,
            y,
            b,
            z,
            hyperparams,
            task,
            final_loss,
            outer_iters_used: 0,
            loss_history: vec![final_loss],
            seed: 0,
            warning: None,
        })
    }

    pub(crate) fn problem(&self) -> Result<Problem<'_>> {
        Problem::new(self.x.view(), self.y.view(), self.task, self.hyperparams)
    }

    pub fn total_loss(&self) -> Result<f64> {
        Ok(self.problem()?.state(self.b.view(), self.z.view())?.total)
    }

    /// `L[i, j]`: loss of local model `i` on item `j`.
    pub fn loss_matrix(&self) -> Result<Array2<f64>> {
        Ok(self.problem()?.predict_losses(self.b.view(), false).losses)
    }

    /// Each item's share of the total loss: its neighbourhood-weighted local
    /// loss plus its own embedding and lasso penalties. Sums to the total.
    pub fn point_losses(&self) -> Result<Vec<f64>> {
        let state = self.problem()?.state(self.b.view(), self.z.view())?;
        let hp = self.hyperparams;
        let weighted = (&state.weights * &state.losses).sum_axis(Axis(1));
        Ok((0..self.n())
            .map(|i| {
                weighted[i]
                    + hp.lambda_z * self.z.row(i).iter().map(|v| v * v).sum::<f64>()
                    + hp.lambda_lasso * self.b.row(i).iter().map(|v| v.abs()).sum::<f64>()
            })
            .collect())
    }
}

/// Starting point: PCA scores of the centered covariates for `Z`, standard
/// normal draws for `B`.
///
/// If the covariates have fewer than `d` nonzero singular values the
/// remaining embedding columns are zero and a warning is returned.
pub fn init(
    x: ArrayView2<f64>,
    task: TaskKind,
    hp: Hyperparams,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>, Option<String>)> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::param("n", "need at least one item"));
    }
    let (z, warning) = pca_scores(x, hp.d);
    let q = task.coef_len(x.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = Array2::from_shape_simple_fn((n, q), || rng.sample::<f64, _>(StandardNormal));
    Ok((b, z, warning))
}

/// First `d` principal component scores of the column-centered matrix.
pub fn pca_scores(x: ArrayView2<f64>, d: usize) -> (Array2<f64>, Option<String>) {
    let (n, m) = x.dim();
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let centered = DMatrix::from_fn(n, m, |i, j| x[[i, j]] - mean[j]);
    let svd = centered.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let sv = &svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|a, b| sv[*b].total_cmp(&sv[*a]).then(a.cmp(b)));
    let smax = order.first().map(|i| sv[*i]).unwrap_or(0.0);
    let tol = smax * (n.max(m) as f64) * f64::EPSILON;

    let mut z = Array2::zeros((n, d));
    let mut rank = 0;
    for (c, &k) in order.iter().take(d).enumerate() {
        if sv[k] <= tol || sv[k] == 0.0 {
            break;
        }
        rank += 1;
        let mut dir: Vec<f64> = (0..m).map(|j| vt[(k, j)]).collect();
        // Fix the sign: largest-magnitude loading is positive.
        let pivot = dir.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if pivot < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        for i in 0..n {
            z[[i, c]] = (0..m).map(|j| centered[(i, j)] * dir[j]).sum();
        }
    }
    let warning = (rank < d).then(|| {
        let msg = format!("data has rank {rank} < embedding dimension {d}; trailing embedding columns set to zero");
        warn!("{msg}");
        msg
    });
    (z, warning)
}

/// For each column `i` of `neighbourhood_losses` (`W · L`, models-by-items),
/// the row with the smallest value; ties go to the smallest index.
fn argmin_columns(m: &Array2<f64>) -> Vec<usize> {
    m.columns()
        .into_iter()
        .map(|col| {
            let mut best = 0;
            for (k, v) in col.iter().enumerate() {
                if *v < col[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Row each item moves to under the escape heuristic:
/// `argmin_k Σ_j W_kj L_ji`.
pub fn escape_targets<'a>(
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    b: ArrayView2<f64>,
    z: ArrayView2<f64>,
    task: TaskKind,
) -> Result<Vec<usize>> {
    let hp = Hyperparams::new(1.0, z.ncols().max(1));
    let problem = Problem::new(x, y, task, hp)?;
    problem.check_coefficients(b)?;
    if b.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch {
            context: "embedding rows",
            expected: b.nrows(),
            actual: z.nrows(),
        });
    }
    let w = softmax_weights(&pairwise_distances(z));
    let l = problem.predict_losses(b, false).losses;
    Ok(argmin_columns(&w.dot(&l)))
}

/// Moves every item to the local model and embedding position of the
/// neighbourhood that fits it best. All rows are read from the input before
/// any is replaced.
pub fn escape<'a>(
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    b: ArrayView2<f64>,
    z: ArrayView2<f64>,
    task: TaskKind,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if x.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context: "coefficient rows",
            expected: x.nrows(),
            actual: b.nrows(),
        });
    }
    let targets = escape_targets(x, y, b, z, task)?;
    Ok((b.select(Axis(0), &targets), z.select(Axis(0), &targets)))
}

fn flatten(b: &Array2<f64>, z: &Array2<f64>) -> Vec<f64> {
    b.iter().chain(z.iter()).copied().collect()
}

fn unflatten(v: &[f64], nb: (usize, usize), nz: (usize, usize)) -> (Array2<f64>, Array2<f64>) {
    let split = nb.0 * nb.1;
    let b = Array2::from_shape_vec(nb, v[..split].to_vec()).expect("shape");
    let z = Array2::from_shape_vec(nz, v[split..].to_vec()).expect("shape");
    (b, z)
}

struct Round {
    b: Array2<f64>,
    z: Array2<f64>,
    value: f64,
    termination: Termination,
}

fn optimize(problem: &Problem, b: &Array2<f64>, z: &Array2<f64>, opts: &LbfgsOptions) -> Round {
    let nb = b.dim();
    let nz = z.dim();
    let split = nb.0 * nb.1;
    let objective = |v: &[f64], g: &mut [f64]| {
        let bv = ArrayView2::from_shape(nb, &v[..split]).expect("shape");
        let zv = ArrayView2::from_shape(nz, &v[split..]).expect("shape");
        let (gb, gz) = g.split_at_mut(split);
        let gb = ArrayViewMut2::from_shape(nb, gb).expect("shape");
        let gz = ArrayViewMut2::from_shape(nz, gz).expect("shape");
        problem.value_and_gradient(bv, zv, gb, gz)
    };
    let out = lbfgs::minimize(objective, flatten(b, z), opts);
    let (b, z) = unflatten(&out.x, nb, nz);
    Round {
        b,
        z,
        value: out.value,
        termination: out.termination,
    }
}

/// Fits local models and an embedding jointly.
pub fn fit<'a>(
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    hp: Hyperparams,
    task: TaskKind,
    config: &SolverConfig,
) -> Result<Solution> {
    config.validate()?;
    let problem = Problem::new(x, y, task, hp)?;
    let (b0, z0, mut warning) = init(x, task, hp, config.seed)?;
    problem.check_params(b0.view(), z0.view())?;
    // Fails with a named term when the starting point is not finite.
    problem.state(b0.view(), z0.view())?;

    let opts = config.lbfgs();
    let mut best = optimize(&problem, &b0, &z0, &opts);
    let mut history = vec![best.value];
    let note_failure = |round: &Round, warning: &mut Option<String>| {
        if round.termination == Termination::NonFinite {
            let msg = "non-finite loss encountered during optimization; returning best state".to_string();
            warn!("{msg}");
            *warning = Some(msg);
        }
    };
    note_failure(&best, &mut warning);

    let mut outer = 0;
    if config.escape {
        while outer < config.max_outer_iters {
            outer += 1;
            let (b, z) = escape(x, y, best.b.view(), best.z.view(), task)?;
            let round = optimize(&problem, &b, &z, &opts);
            note_failure(&round, &mut warning);
            if !(round.value < best.value) {
                break;
            }
            let improved = best.value - round.value > config.rel_tol * best.value.abs();
            history.push(round.value);
            best = round;
            if !improved {
                break;
            }
        }
    }

    let final_loss = problem.state(best.b.view(), best.z.view())?.total;
    Ok(Solution {
        x: x.to_owned(),
        y: y.to_owned(),
        b: best.b,
        z: best.z,
        hyperparams: hp,
        task,
        final_loss,
        outer_iters_used: outer,
        loss_history: history,
        seed: config.seed,
        warning,
    })
}

/// Local models and embedding positions for items added to a fitted solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Addition {
    pub b: Array2<f64>,
    pub z: Array2<f64>,
    /// Each new item's share of the enlarged loss (see [`Solution::point_losses`]).
    pub losses: Vec<f64>,
}

/// Adds items to a fitted solution, optimizing only their local models and
/// embedding positions; the stored rows stay fixed. All new items are
/// optimized jointly.
pub fn add_new(sol: &Solution, x_new: ArrayView2<f64>, y_new: ArrayView2<f64>, config: &SolverConfig) -> Result<Addition> {
    config.validate()?;
    if x_new.ncols() != sol.x.ncols() {
        return Err(Error::DimensionMismatch {
            context: "new item columns",
            expected: sol.x.ncols(),
            actual: x_new.ncols(),
        });
    }
    if y_new.nrows() != x_new.nrows() || y_new.ncols() != sol.y.ncols() {
        return Err(Error::DimensionMismatch {
            context: "new item responses",
            expected: x_new.nrows(),
            actual: y_new.nrows(),
        });
    }
    let t = x_new.nrows();
    let q = sol.b.ncols();
    let d = sol.z.ncols();
    if t == 0 {
        return Ok(Addition {
            b: Array2::zeros((0, q)),
            z: Array2::zeros((0, d)),
            losses: Vec::new(),
        });
    }

    let ext = Extension::new(sol, x_new, y_new)?;
    let targets = ext.escape_targets();
    let copies = (0..t)
        .map(|i| Ok(Extension::new(sol, x_new.slice(s![i..i + 1, ..]), y_new.slice(s![i..i + 1, ..]))?.best_copy()))
        .collect::<Result<Vec<_>>>()?;

    let nb = (t, q);
    let nz = (t, d);
    let split = t * q;
    let objective = |v: &[f64], g: &mut [f64]| {
        let bv = ArrayView2::from_shape(nb, &v[..split]).expect("shape");
        let zv = ArrayView2::from_shape(nz, &v[split..]).expect("shape");
        let (gb, gz) = g.split_at_mut(split);
        let gb = ArrayViewMut2::from_shape(nb, gb).expect("shape");
        let gz = ArrayViewMut2::from_shape(nz, gz).expect("shape");
        ext.value_and_gradient(bv, zv, gb, gz)
    };
    let from_rows = |rows: &[usize]| {
        let start = flatten(&sol.b.select(Axis(0), rows), &sol.z.select(Axis(0), rows));
        lbfgs::minimize(objective, start, &config.lbfgs())
    };
    let mut out = from_rows(&targets);
    if copies != targets {
        let other = from_rows(&copies);
        if other.value < out.value || !out.value.is_finite() {
            out = other;
        }
    }
    if out.termination == Termination::NonFinite && !out.value.is_finite() {
        return Err(Error::NonFinite("loss of added items".into()));
    }
    let (b, z) = unflatten(&out.x, nb, nz);
    let losses = ext.point_losses(b.view(), z.view());
    Ok(Addition { b, z, losses })
}

/// Adds each new item on its own against the original solution.
pub fn add_new_one_by_one(
    sol: &Solution,
    x_new: ArrayView2<f64>,
    y_new: ArrayView2<f64>,
    config: &SolverConfig,
) -> Result<Addition> {
    let t = x_new.nrows();
    let mut b = Array2::zeros((t, sol.b.ncols()));
    let mut z = Array2::zeros((t, sol.z.ncols()));
    let mut losses = Vec::with_capacity(t);
    for i in 0..t {
        let one = add_new(sol, x_new.slice(s![i..i + 1, ..]), y_new.slice(s![i..i + 1, ..]), config)?;
        b.row_mut(i).assign(&one.b.row(0));
        z.row_mut(i).assign(&one.z.row(0));
        losses.push(one.losses[0]);
    }
    if t == 0 {
        return add_new(sol, x_new, y_new, config);
    }
    Ok(Addition { b, z, losses })
}
