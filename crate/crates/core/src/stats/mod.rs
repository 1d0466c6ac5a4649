//! Scalar-generic numeric kernels shared by rule fitting and metrics.

mod classification_tree;
mod regression_tree;

use num_traits::Float;

pub use classification_tree::{
    cross_validated_accuracy, ClassNode, ClassTreeParams, ClassificationTree, LeafPath, Predicate,
};
pub use regression_tree::{RegressionNode, RegressionTree, TreeParams};

pub fn mean<F: Float>(xs: &[F]) -> F {
    if xs.is_empty() {
        return F::nan();
    }
    xs.iter().fold(F::zero(), |a, &b| a + b) / F::from(xs.len()).unwrap()
}

/// Population variance (divides by `n`).
pub fn variance<F: Float>(xs: &[F]) -> F {
    let m = mean(xs);
    mean(&xs.iter().map(|&x| (x - m) * (x - m)).collect::<Vec<_>>())
}

/// Ordinary least squares fit of `y = slope * x + intercept`.
///
/// When `x` has (numerically) zero variance the slope is 0 and the intercept
/// is the mean of `y`.
pub fn ols<F: Float>(x: &[F], y: &[F]) -> (F, F) {
    assert_eq!(x.len(), y.len(), "ols needs paired samples");
    let mx = mean(x);
    let my = mean(y);
    let (mut sxx, mut sxy) = (F::zero(), F::zero());
    for (&xi, &yi) in x.iter().zip(y) {
        sxx = sxx + (xi - mx) * (xi - mx);
        sxy = sxy + (xi - mx) * (yi - my);
    }
    let scale = x.iter().fold(F::one(), |a, &b| a.max(b.abs()));
    let degenerate = sxx <= F::epsilon() * F::from(x.len()).unwrap() * scale * scale;
    if degenerate || !sxx.is_finite() {
        return (F::zero(), my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn rmse<F: Float>(predicted: impl IntoIterator<Item = F>, observed: &[F]) -> F {
    let mut sum = F::zero();
    let mut n = 0usize;
    for (p, &o) in predicted.into_iter().zip(observed) {
        sum = sum + (p - o) * (p - o);
        n += 1;
    }
    if n == 0 {
        return F::nan();
    }
    (sum / F::from(n).unwrap()).sqrt()
}
