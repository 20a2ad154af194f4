//! Helpers shared by unit tests.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use twofloat::TwoFloat;

/// `exp` in double-double arithmetic: Taylor series on `x / 64`, then six
/// squarings. Accurate far beyond binary64 for `|x| <= 50`.
pub fn dd_exp(x: TwoFloat) -> TwoFloat {
    let r = x / 64.0;
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for k in 1..40 {
        term = term * r / (k as f64);
        sum += term;
    }
    for _ in 0..6 {
        sum = sum * sum;
    }
    sum
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
}

pub fn random_simplex_rows(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    let mut y = Array2::from_shape_fn((n, p), |_| rng.gen_range(0.01..1.0));
    for mut row in y.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    y
}

#[test]
fn dd_exp_agrees_with_libm() {
    for x in [-20.0, -3.3, -1.0, 0.0, 0.5, 7.25] {
        let got = f64::from(dd_exp(TwoFloat::from(x)));
        assert!((got - f64::exp(x)).abs() <= 2.0 * f64::EPSILON * f64::exp(x));
    }
}
