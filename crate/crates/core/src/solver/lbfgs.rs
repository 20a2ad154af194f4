//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The line search brackets a step satisfying the strong Wolfe conditions and
//! then zooms in with safeguarded cubic interpolation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    /// Number of correction pairs kept.
    pub history: usize,
    pub max_iters: usize,
    /// Stop when `f_prev - f <= rel_tol * |f_prev|`.
    pub rel_tol: f64,
    /// Stop when the largest absolute gradient component falls below this.
    pub grad_tol: f64,
    /// Sufficient decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 10,
            max_iters: 500,
            rel_tol: 1e-6,
            grad_tol: 1e-9,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Stationary,
    SmallImprovement,
    MaxIterations,
    LineSearchFailed,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which returns the objective value and writes the gradient
/// into its second argument.
///
/// Never fails: on a line-search breakdown or a non-finite evaluation the best
/// point seen so far is returned with the corresponding [`Termination`].
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut value = f(&x, &mut g);
    let initial_value = value;
    let mut evaluations = 1;

    let finish = |x, value, iterations, evaluations, termination| LbfgsOutcome {
        x,
        value,
        initial_value,
        iterations,
        evaluations,
        termination,
    };

    if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return finish(x, value, 0, evaluations, Termination::NonFinite);
    }
    if max_abs(&g) < opts.grad_tol {
        return finish(x, value, 0, evaluations, Termination::Stationary);
    }

    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(opts.history);
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(opts.history);
    let mut rho_hist: VecDeque<f64> = VecDeque::with_capacity(opts.history);
    let mut dir = vec![0.0; dim];
    let mut alpha = vec![0.0; opts.history];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;

        // Two-loop recursion for -H g.
        dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
        let k = s_hist.len();
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &dir);
            for (d, yv) in dir.iter_mut().zip(&y_hist[i]) {
                *d -= alpha[i] * yv;
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &dir);
            for (d, sv) in dir.iter_mut().zip(&s_hist[i]) {
                *d += (alpha[i] - beta) * sv;
            }
        }

        let mut gtd = dot(&g, &dir);
        if !(gtd < 0.0) {
            // Lost descent; restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            gtd = dot(&g, &dir);
        }

        let t0 = if k == 0 {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };

        let ls = strong_wolfe(&mut f, &x, value, &g, &dir, gtd, t0, opts);
        evaluations += ls.evaluations;

        if !(ls.value < value) || !ls.value.is_finite() {
            termination = if ls.value.is_finite() {
                Termination::LineSearchFailed
            } else {
                Termination::NonFinite
            };
            break;
        }

        let s: Vec<f64> = dir.iter().map(|d| ls.step * d).collect();
        let yv: Vec<f64> = ls.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-10 {
            if s_hist.len() == opts.history {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
            rho_hist.push_back(1.0 / sy);
            s_hist.push_back(s);
            y_hist.push_back(yv);
        }

        let previous = value;
        x.iter_mut().zip(&dir).for_each(|(xi, d)| *xi += ls.step * d);
        value = ls.value;
        g = ls.grad;

        if max_abs(&g) < opts.grad_tol {
            termination = Termination::Stationary;
            break;
        }
        if previous - value <= opts.rel_tol * previous.abs() {
            termination = Termination::SmallImprovement;
            break;
        }
    }

    finish(x, value, iterations, evaluations, termination)
}

struct LineSearchResult {
    step: f64,
    value: f64,
    grad: Vec<f64>,
    evaluations: usize,
}

#[derive(Clone)]
struct Probe {
    step: f64,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

/// Minimizer of the cubic interpolating two points with slopes, clamped to
/// `bounds`; falls back to the midpoint when the cubic has no minimum.
fn cubic_interpolate(a: (f64, f64, f64), b: (f64, f64, f64), bounds: Option<(f64, f64)>) -> f64 {
    let (x1, f1, g1) = a;
    let (x2, f2, g2) = b;
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.clamp(lo, hi);
        }
    }
    (lo + hi) / 2.0
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    gtd0: f64,
    t0: f64,
    opts: &LbfgsOptions,
) -> LineSearchResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x.len();
    let dir_norm = max_abs(dir);
    let mut trial = vec![0.0; dim];
    let mut evaluations = 0;
    let mut eval = |t: f64, evaluations: &mut usize| -> Probe {
        trial.iter_mut().zip(x.iter().zip(dir)).for_each(|(v, (xi, d))| *v = xi + t * d);
        let mut grad = vec![0.0; dim];
        let value = f(&trial, &mut grad);
        *evaluations += 1;
        let slope = dot(&grad, dir);
        Probe {
            step: t,
            value,
            grad,
            slope,
        }
    };

    let origin = Probe {
        step: 0.0,
        value: f0,
        grad: g0.to_vec(),
        slope: gtd0,
    };
    let armijo = |p: &Probe| p.value <= f0 + opts.c1 * p.step * gtd0;
    let curvature = |p: &Probe| p.slope.abs() <= -opts.c2 * gtd0;

    let mut prev = origin;
    let mut cur = eval(t0, &mut evaluations);
    let mut bracket: Option<[Probe; 2]> = None;

    // Bracketing phase.
    let mut iter = 0;
    loop {
        if !cur.value.is_finite() {
            // Step into a non-finite region; shrink toward the last good point.
            if iter >= opts.max_line_search {
                break;
            }
            let t = (prev.step + cur.step) / 2.0;
            cur = eval(t, &mut evaluations);
            iter += 1;
            continue;
        }
        if !armijo(&cur) || (iter > 1 && cur.value >= prev.value) {
            bracket = Some([prev.clone(), cur.clone()]);
            break;
        }
        if curvature(&cur) {
            return LineSearchResult {
                step: cur.step,
                value: cur.value,
                grad: cur.grad,
                evaluations,
            };
        }
        if cur.slope >= 0.0 {
            bracket = Some([prev.clone(), cur.clone()]);
            break;
        }
        if iter >= opts.max_line_search {
            break;
        }
        let min_step = cur.step + 0.01 * (cur.step - prev.step);
        let max_step = cur.step * 10.0;
        let t = cubic_interpolate(
            (prev.step, prev.value, prev.slope),
            (cur.step, cur.value, cur.slope),
            Some((min_step, max_step)),
        );
        prev = cur;
        cur = eval(t, &mut evaluations);
        iter += 1;
    }

    let Some(mut br) = bracket else {
        // Out of budget while still descending: take the better of the two.
        let best = if cur.value.is_finite() && cur.value < prev.value { cur } else { prev };
        return LineSearchResult {
            step: best.step,
            value: best.value,
            grad: best.grad,
            evaluations,
        };
    };

    // Zoom phase.
    let mut insufficient_progress = false;
    let (mut low, mut high) = if br[0].value <= br[1].value { (0, 1) } else { (1, 0) };
    while iter < opts.max_line_search {
        let width = (br[1].step - br[0].step).abs();
        if width * dir_norm < 1e-14 {
            break;
        }
        let mut t = cubic_interpolate(
            (br[0].step, br[0].value, br[0].slope),
            (br[1].step, br[1].value, br[1].slope),
            None,
        );
        let bmax = br[0].step.max(br[1].step);
        let bmin = br[0].step.min(br[1].step);
        let eps = 0.1 * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insufficient_progress || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() { bmax - eps } else { bmin + eps };
                insufficient_progress = false;
            } else {
                insufficient_progress = true;
            }
        } else {
            insufficient_progress = false;
        }

        let p = eval(t, &mut evaluations);
        iter += 1;
        if !p.value.is_finite() || !armijo(&p) || p.value >= br[low].value {
            br[high] = p;
        } else {
            if curvature(&p) {
                br[low] = p;
                break;
            }
            if p.slope * (br[high].step - br[low].step) >= 0.0 {
                br[high] = br[low].clone();
            }
            br[low] = p;
        }
        if br[0].value <= br[1].value {
            low = 0;
            high = 1;
        } else {
            low = 1;
            high = 0;
        }
    }

    let [a, b] = br;
    let best = if low == 0 { a } else { b };
    LineSearchResult {
        step: best.step,
        value: best.value,
        grad: best.grad,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(a: Vec<f64>) -> impl FnMut(&[f64], &mut [f64]) -> f64 {
        move |x, g| {
            let mut v = 0.0;
            for i in 0..x.len() {
                let r = x[i] - a[i];
                g[i] = 2.0 * r;
                v += r * r;
            }
            v
        }
    }

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    /// Nelder-Mead simplex search, derivative free, used as an independent check.
    fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], iters: usize) -> Vec<f64> {
        let n = start.len();
        let mut pts: Vec<Vec<f64>> = vec![start.to_vec()];
        for i in 0..n {
            let mut p = start.to_vec();
            p[i] += 0.5;
            pts.push(p);
        }
        let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
        for _ in 0..iters {
            let mut idx: Vec<usize> = (0..=n).collect();
            idx.sort_by(|a, b| vals[*a].total_cmp(&vals[*b]));
            pts = idx.iter().map(|i| pts[*i].clone()).collect();
            vals = idx.iter().map(|i| vals[*i]).collect();
            let centroid: Vec<f64> = (0..n).map(|k| pts[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
            let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (pts[n][k] - centroid[k])).collect() };
            let r = along(-1.0);
            let fr = f(&r);
            if fr < vals[0] {
                let e = along(-2.0);
                let fe = f(&e);
                if fe < fr {
                    pts[n] = e;
                    vals[n] = fe;
                } else {
                    pts[n] = r;
                    vals[n] = fr;
                }
            } else if fr < vals[n - 1] {
                pts[n] = r;
                vals[n] = fr;
            } else {
                let c = along(0.5);
                let fc = f(&c);
                if fc < vals[n] {
                    pts[n] = c;
                    vals[n] = fc;
                } else {
                    for i in 1..=n {
                        pts[i] = (0..n).map(|k| pts[0][k] + 0.5 * (pts[i][k] - pts[0][k])).collect();
                        vals[i] = f(&pts[i]);
                    }
                }
            }
        }
        let best = (0..=n).min_by(|a, b| vals[*a].total_cmp(&vals[*b])).unwrap();
        pts[best].clone()
    }

    #[test]
    fn quadratic_converges_quickly() {
        let a = vec![1.0, -2.0, 3.5, 0.25, -7.0];
        for start in [vec![0.0; 5], vec![10.0, 10.0, -10.0, 3.0, 100.0]] {
            let out = minimize(quadratic(a.clone()), start, &LbfgsOptions::default());
            assert!(out.iterations <= 25, "{} iterations", out.iterations);
            for (x, t) in out.x.iter().zip(&a) {
                assert!((x - t).abs() < 1e-6, "{:?}", out.x);
            }
        }
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let opts = LbfgsOptions {
            rel_tol: 1e-14,
            ..LbfgsOptions::default()
        };
        let out = minimize(rosenbrock, vec![-1.2, 1.0], &opts);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4, "{:?}", out);

        let reference = nelder_mead(|x| rosenbrock(x, &mut [0.0; 2]), &[-1.2, 1.0], 2000);
        assert!((reference[0] - out.x[0]).abs() < 1e-4);
        assert!((reference[1] - out.x[1]).abs() < 1e-4);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let out = minimize(quadratic(vec![2.0, 3.0]), vec![2.0, 3.0], &LbfgsOptions::default());
        assert_eq!(out.iterations, 0);
        assert_eq!(out.termination, Termination::Stationary);
        assert_eq!(out.x, vec![2.0, 3.0]);
    }

    #[test]
    fn never_increases_the_objective() {
        // Nonsmooth |x| objective: the line search struggles but must not go uphill.
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..x.len() {
                v += x[i].abs() + 0.01 * x[i] * x[i];
                g[i] = x[i].signum() + 0.02 * x[i];
            }
            v
        };
        let start = vec![3.0, -1.5, 0.7];
        let f0 = f(&start, &mut [0.0; 3]);
        let out = minimize(f, start, &LbfgsOptions::default());
        assert!(out.value <= f0);
        assert_eq!(out.initial_value, f0);
    }

    #[test]
    fn non_finite_start_is_reported() {
        let out = minimize(|_x: &[f64], _g: &mut [f64]| f64::NAN, vec![1.0], &LbfgsOptions::default());
        assert_eq!(out.termination, Termination::NonFinite);
    }

    #[test]
    fn cubic_interpolation_finds_parabola_minimum() {
        // f(t) = (t - 0.3)^2 sampled at 0 and 1.
        let t = cubic_interpolate((0.0, 0.09, -0.6), (1.0, 0.49, 1.4), None);
        assert!((t - 0.3).abs() < 1e-12);
    }
}
